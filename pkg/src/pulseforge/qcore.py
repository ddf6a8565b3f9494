"""Dense linear algebra and Pauli-string machinery.

Conventions used throughout the package:

* Qubit 0 is the leftmost tensor factor and the most significant bit of a
  basis index, so ``|q0 q1 ... q_{n-1}>`` has index ``sum(q_i << (n-1-i))``
  and the bitstring ``"01"`` means qubit 0 in ``|0>`` and qubit 1 in ``|1>``.
* When a bus mode is simulated it is the rightmost tensor factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import CapacityError, ValidationError

MAX_QUBITS = 10
#: Largest dense dimension accepted by default (ten qubits times a 3-level bus).
DEFAULT_MAX_DIM = (2**MAX_QUBITS) * 3

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def check_dim(dim: int, max_dim: int = DEFAULT_MAX_DIM) -> None:
    """Raise :class:`CapacityError` when ``dim`` exceeds ``max_dim``."""
    if dim > max_dim:
        raise CapacityError(f"dense dimension {dim} exceeds the maximum {max_dim}")


def kron(a: np.ndarray, b: np.ndarray, max_dim: int = DEFAULT_MAX_DIM) -> np.ndarray:
    """Kronecker product ``a ⊗ b`` with a capacity check.

    ``(a⊗b)[i*rb + k, j*cb + l] = a[i, j] * b[k, l]``.
    """
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    if a.size == 0 or b.size == 0:
        raise ValidationError("kron of an empty matrix")
    check_dim(max(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]), max_dim)
    return np.kron(a, b)


def is_hermitian(h: np.ndarray, atol: float = 1e-10) -> bool:
    h = np.asarray(h)
    return h.ndim >= 2 and h.shape[-1] == h.shape[-2] and bool(
        np.allclose(h, np.conj(np.swapaxes(h, -1, -2)), atol=atol, rtol=0.0)
    )


def unitarity_residual(u: np.ndarray) -> float:
    """``max |U†U - I|`` entrywise."""
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def matexp_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """Return ``exp(-i h t)`` for Hermitian ``h`` via its eigendecomposition.

    Parameters
    ----------
    h : ndarray
        Hermitian matrix in angular-frequency units (rad/s) or dimensionless.
    t : float
        Evolution time in the matching unit.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {h.shape}")
    scale = max(1.0, float(np.max(np.abs(h))) if h.size else 1.0)
    if not is_hermitian(h, atol=1e-10 * scale):
        raise ValidationError("matexp_hermitian requires a Hermitian matrix")
    return expm_hermitian_batch(h[None], t)[0]


def expm_hermitian_batch(h: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    """Batched ``exp(-i h[k] t[k])`` for a stack of Hermitian matrices (no validation).

    ``t`` is a scalar or an array broadcastable against the batch shape.
    """
    h = 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))
    w, v = np.linalg.eigh(h)
    phase = np.exp(-1j * w * np.asarray(t, dtype=float)[..., None])
    return (v * phase[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


@dataclass(frozen=True)
class PauliTerm:
    """A real coefficient times a tensor product of Pauli letters."""

    coefficient: float
    letters: str

    def __post_init__(self):
        if not self.letters:
            raise ValidationError("Pauli term needs at least one letter")
        bad = set(self.letters) - set("IXYZ")
        if bad:
            raise ValidationError(f"invalid Pauli letters {sorted(bad)} in {self.letters!r}")
        if not np.isfinite(self.coefficient):
            raise ValidationError(f"non-finite coefficient for {self.letters}")

    @property
    def n_qubits(self) -> int:
        return len(self.letters)


class ObservableSum:
    """Weighted sum of Pauli strings on ``n_qubits`` qubits.

    Duplicate letter strings are merged on construction; the term order is the
    order of first appearance.
    """

    def __init__(self, n_qubits: int, terms: Iterable[PauliTerm] = ()):
        if n_qubits < 1:
            raise ValidationError("n_qubits must be positive")
        merged: dict[str, float] = {}
        for term in terms:
            if term.n_qubits != n_qubits:
                raise ValidationError(
                    f"term {term.letters!r} has {term.n_qubits} letters, expected {n_qubits}"
                )
            merged[term.letters] = merged.get(term.letters, 0.0) + float(term.coefficient)
        self.n_qubits = n_qubits
        self.terms: tuple[PauliTerm, ...] = tuple(PauliTerm(c, s) for s, c in merged.items())

    @classmethod
    def from_dict(cls, coefficients: Mapping[str, float]) -> "ObservableSum":
        items = list(coefficients.items())
        if not items:
            raise ValidationError("cannot infer qubit count from an empty mapping")
        n = len(items[0][0])
        return cls(n, (PauliTerm(float(c), s) for s, c in items))

    def as_dict(self) -> dict[str, float]:
        return {t.letters: t.coefficient for t in self.terms}

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other: "ObservableSum") -> "ObservableSum":
        if other.n_qubits != self.n_qubits:
            raise ValidationError("cannot add observables on different qubit counts")
        return ObservableSum(self.n_qubits, self.terms + other.terms)

    def __mul__(self, scalar: float) -> "ObservableSum":
        return ObservableSum(
            self.n_qubits, (PauliTerm(scalar * t.coefficient, t.letters) for t in self.terms)
        )

    __rmul__ = __mul__

    def identity_coefficient(self) -> float:
        return self.as_dict().get("I" * self.n_qubits, 0.0)

    def to_matrix(self) -> np.ndarray:
        dim = 2**self.n_qubits
        check_dim(dim)
        mat = np.zeros((dim, dim), dtype=complex)
        for term in self.terms:
            mat += pauli_matrix(term)
        return mat

    def __repr__(self) -> str:
        return f"ObservableSum(n_qubits={self.n_qubits}, terms={len(self.terms)})"


def pauli_matrix(term: PauliTerm) -> np.ndarray:
    """Dense ``coefficient * σ_{letters[0]} ⊗ ... ⊗ σ_{letters[n-1]}``."""
    check_dim(2**term.n_qubits)
    out = np.array([[term.coefficient]], dtype=complex)
    for letter in term.letters:
        out = np.kron(out, PAULI[letter])
    return out


def _masks(letters: str) -> tuple[int, int, int]:
    n = len(letters)
    xmask = zmask = ny = 0
    for i, letter in enumerate(letters):
        bit = 1 << (n - 1 - i)
        if letter in "XY":
            xmask |= bit
        if letter in "YZ":
            zmask |= bit
        if letter == "Y":
            ny += 1
    return xmask, zmask, ny


def _parity(values: np.ndarray) -> np.ndarray:
    """Parity of the popcount of each non-negative integer."""
    values = values.copy()
    parity = np.zeros(values.shape, dtype=np.int64)
    while np.any(values):
        parity ^= values & 1
        values >>= 1
    return parity


def apply_pauli(letters: str, state: np.ndarray) -> np.ndarray:
    """Return ``P|ψ>`` for the unit-coefficient Pauli string ``letters``.

    Works on a state vector or on the columns of a matrix (leading axis is the
    Hilbert-space index).
    """
    state = np.asarray(state)
    n = len(letters)
    if state.shape[0] != 2**n:
        raise ValidationError(f"state dimension {state.shape[0]} does not match {n} qubits")
    xmask, zmask, ny = _masks(letters)
    idx = np.arange(2**n)
    sign = 1 - 2 * _parity(idx & zmask)
    phase = (1j**ny) * sign
    out = np.empty_like(state, dtype=complex)
    out[idx ^ xmask] = (phase.reshape((-1,) + (1,) * (state.ndim - 1))) * state
    return out


def project_bus_vacuum(
    state: np.ndarray, n_qubits: int, bus_cutoff: int
) -> tuple[np.ndarray, float]:
    """Project a qubit⊗bus state onto the bus vacuum and renormalize.

    Returns the qubit-register state and the discarded (leakage) weight.
    """
    state = np.asarray(state, dtype=complex)
    if bus_cutoff <= 1:
        return state, 0.0
    if state.shape[0] != (2**n_qubits) * bus_cutoff:
        raise ValidationError("state dimension does not match qubits times bus levels")
    psi = state.reshape(2**n_qubits, bus_cutoff)[:, 0]
    kept = float(np.vdot(psi, psi).real)
    leakage = min(1.0, max(0.0, 1.0 - kept))
    if kept <= 0.0:
        raise ValidationError("state has no weight in the bus vacuum")
    return psi / np.sqrt(kept), leakage


def expectation(state: np.ndarray, obs: ObservableSum, bus_cutoff: int = 1) -> float:
    """``<ψ|H|ψ>`` for a qubit-register state.

    If ``bus_cutoff > 1`` the state is first projected onto the bus vacuum and
    renormalized (see :func:`project_bus_vacuum` for the leakage weight).
    """
    state = np.asarray(state, dtype=complex)
    if bus_cutoff > 1:
        state, _ = project_bus_vacuum(state, obs.n_qubits, bus_cutoff)
    if state.ndim != 1 or state.shape[0] != 2**obs.n_qubits:
        raise ValidationError(
            f"state dimension {state.shape} does not match a {obs.n_qubits}-qubit observable"
        )
    total = 0.0 + 0.0j
    for term in obs.terms:
        if set(term.letters) == {"I"}:
            total += term.coefficient * np.vdot(state, state)
        else:
            total += term.coefficient * np.vdot(state, apply_pauli(term.letters, state))
    return float(total.real)


def ground_energy(obs: ObservableSum) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of the dense observable and a matching eigenvector."""
    if obs.n_qubits > MAX_QUBITS:
        raise CapacityError(f"{obs.n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit")
    w, v = np.linalg.eigh(obs.to_matrix())
    return float(w[0]), v[:, 0]


def basis_label(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b")


def probabilities(state: np.ndarray) -> np.ndarray:
    p = np.abs(np.asarray(state)) ** 2
    return p / p.sum()


def sample_counts(state: np.ndarray, shots: int, seed: int) -> dict[str, int]:
    """Draw ``shots`` computational-basis outcomes from ``|a_i|^2``.

    Returns a histogram keyed by bitstring (qubit 0 first), omitting zero counts.
    """
    if shots < 1:
        raise ValidationError("shots must be positive")
    p = probabilities(state)
    n = int(round(np.log2(p.shape[0])))
    if 2**n != p.shape[0]:
        raise ValidationError("state dimension is not a power of two")
    counts = np.random.default_rng(seed).multinomial(shots, p)
    return {basis_label(i, n): int(c) for i, c in enumerate(counts) if c}


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))
