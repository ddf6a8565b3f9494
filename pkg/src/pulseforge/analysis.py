"""Two-qubit gate analysis: Weyl chamber coordinates, CR tomography, coverage scans.

Weyl coordinates use the convention ``U ~ exp(i(c1 XX + c2 YY + c3 ZZ))`` up to
single-qubit gates, so CNOT maps to ``(π/4, 0, 0)``, iSWAP to ``(π/4, π/4, 0)``
and SWAP to ``(π/4, π/4, π/4)``. Canonical points satisfy
``c1 ≥ c2 ≥ c3 ≥ 0`` and ``c1 + c2 ≤ π/2``; on the base ``c3 = 0`` the mirror
points ``(c1, c2, 0) ~ (π/2 - c1, c2, 0)`` are identified by taking
``c1 ≤ π/4``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .device_model import CRCoefficients, DeviceConfig, cr_effective_time
from .dynamics import propagate_unitary
from .errors import TomographyError, ValidationError
from .pulse_ir import PulseSchedule, ScheduleBuilder, bind, cr, snp
from .qcore import PAULI, apply_pauli, project_bus_vacuum, unitarity_residual

log = logging.getLogger(__name__)

_MAGIC = np.array(
    [[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]], dtype=complex
) / math.sqrt(2)
_ZERO_TOL = 1e-9


@dataclass(frozen=True)
class WeylPoint:
    c1: float
    c2: float
    c3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3])

    def distance(self, other: "WeylPoint") -> float:
        return float(np.max(np.abs(self.as_array() - other.as_array())))


def _check_unitary(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValidationError(f"expected a 4x4 unitary, got shape {u.shape}")
    if unitarity_residual(u) > 1e-8:
        raise ValidationError("matrix is not unitary within 1e-8")
    return u


def _to_su4(u: np.ndarray) -> np.ndarray:
    return u / np.linalg.det(u) ** 0.25


def canonicalize(c: Sequence[float], tol: float = _ZERO_TOL) -> WeylPoint:
    """Map any representative ``(c1, c2, c3)`` into the canonical chamber.

    Uses the local-equivalence moves: shift of one coordinate by π/2, sign
    flip of two coordinates, and permutations.
    """
    v = np.mod(np.asarray(c, dtype=float), math.pi / 2)
    v = np.where(v > math.pi / 4, v - math.pi / 2, v)
    v = np.where(np.abs(np.abs(v) - math.pi / 4) < tol, math.pi / 4, v)
    negative = int(np.sum(v < -tol)) % 2
    mags = np.sort(np.abs(v))[::-1]
    a, b, c3 = mags
    if c3 < tol:
        return WeylPoint(float(a), float(b), 0.0)
    if negative:
        # (a, b, -c3) ~ (-a, b, c3) ~ (π/2 - a, b, c3)
        a = math.pi / 2 - a
    return WeylPoint(float(a), float(b), float(c3))


def weyl_coordinates(u: np.ndarray) -> WeylPoint:
    """Canonical Weyl chamber point of a two-qubit unitary.

    In the magic basis, ``m = U_Bᵀ U_B`` has eigenvalues ``exp(2iλ_k)`` with
    ``λ = (c1-c2+c3, -c1+c2+c3, c1+c2-c3, -c1-c2-c3)`` for the nonlocal part.
    """
    u = _to_su4(_check_unitary(u))
    ub = _MAGIC.conj().T @ u @ _MAGIC
    m = ub.T @ ub
    lam = np.sort(np.angle(np.linalg.eigvals(m)) / 2)
    # the λ sum to zero modulo π; fix the last one so they do exactly
    lam[3] -= math.pi * round(float(np.sum(lam)) / math.pi)
    c1 = (lam[0] + lam[2]) / 2
    c2 = (lam[1] + lam[2]) / 2
    c3 = (lam[0] + lam[1]) / 2
    return canonicalize((c1, c2, c3))


def canonical_gate(p: WeylPoint | Sequence[float]) -> np.ndarray:
    """``exp(i(c1 XX + c2 YY + c3 ZZ))``."""
    c = p.as_array() if isinstance(p, WeylPoint) else np.asarray(p, dtype=float)
    X, Y, Z = PAULI["X"], PAULI["Y"], PAULI["Z"]
    h = c[0] * np.kron(X, X) + c[1] * np.kron(Y, Y) + c[2] * np.kron(Z, Z)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * w)) @ v.conj().T


def makhlin_invariants(u: np.ndarray) -> tuple[complex, float]:
    """Local invariants ``(G1, G2)`` of a two-qubit unitary."""
    u = _check_unitary(u)
    ub = _MAGIC.conj().T @ u @ _MAGIC
    m = ub.T @ ub
    det = np.linalg.det(u)
    tr = np.trace(m)
    g1 = tr**2 / (16 * det)
    g2 = (tr**2 - np.trace(m @ m)) / (4 * det)
    return complex(g1), float(g2.real)


def locally_equivalent(u: np.ndarray, v: np.ndarray, tol: float = 1e-6) -> bool:
    """True when both unitaries have the same canonical Weyl point."""
    return weyl_coordinates(u).distance(weyl_coordinates(v)) <= tol


# --------------------------------------------------------------------- tomography


_PREPS = ("0", "+")


@dataclass
class TomographyFit:
    """Fitted coefficients with the fit residual and data used."""

    coefficients: CRCoefficients
    residual: float
    times: np.ndarray
    data: np.ndarray  # (control, prep, duration, xyz)


def tomography_durations(device: DeviceConfig, n: int = 8, step: int = 64) -> list[int]:
    """Default duration grid starting at the shortest valid GaussianSquare."""
    base = int(2 * device.cr_risefall * device.cr_sigma)
    return [base + step * k for k in range(n)]


def _rotation(omega: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Bloch-sphere rotations generated by ``exp(-i t ω·σ)`` (angle ``2|ω|t``)."""
    norm = np.linalg.norm(omega)
    if norm == 0:
        return np.broadcast_to(np.eye(3), (len(t), 3, 3))
    n = omega / norm
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    ang = 2 * norm * np.asarray(t)
    s, c = np.sin(ang)[:, None, None], np.cos(ang)[:, None, None]
    return np.eye(3) + s * k + (1 - c) * (k @ k)


_BLOCH0 = {"0": np.array([0.0, 0.0, 1.0]), "+": np.array([1.0, 0.0, 0.0])}


def _predict(params: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Model trajectories, shape (control, prep, duration, xyz)."""
    a, b = params[:3], params[3:]
    out = np.empty((2, len(_PREPS), len(times), 3))
    for ctrl, omega in enumerate((b + a, b - a)):
        rot = _rotation(omega, times)
        for j, p in enumerate(_PREPS):
            out[ctrl, j] = rot @ _BLOCH0[p]
    return out


def _axis_angle_init(data: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Generator estimate from the rotation observed at the shortest duration."""
    out = []
    for ctrl in range(2):
        r0, r1 = data[ctrl, 0, 0], data[ctrl, 1, 0]  # images of z and x
        m = np.column_stack([r1, np.cross(r0, r1), r0])
        uu, _, vt = np.linalg.svd(m)
        rot = uu @ vt
        if np.linalg.det(rot) < 0:
            rot = uu @ np.diag([1, 1, -1]) @ vt
        ang = math.acos(np.clip((np.trace(rot) - 1) / 2, -1, 1))
        if ang < 1e-12:
            out.append(np.zeros(3))
            continue
        axis = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
        axis /= 2 * math.sin(ang)
        out.append(axis * ang / (2 * times[0]))
    w0, w1 = out
    return np.concatenate([(w0 - w1) / 2, (w0 + w1) / 2])


def fit_cr_trajectories(
    data: np.ndarray, times: Sequence[float], tol: float | None = 1e-6
) -> TomographyFit:
    """Fit the six rates to target Bloch trajectories.

    ``data[c, p, k]`` is the target Bloch vector after duration ``k`` with the
    control in ``|c>`` and the target prepared in ``|0>`` (p=0) or ``|+>``
    (p=1). The coefficients follow as half sum and half difference of the two
    conditional generators. Durations are refit progressively so that long
    durations do not alias the rotation angle.
    """
    times = np.asarray(times, dtype=float)
    data = np.asarray(data, dtype=float)
    if len(np.unique(times)) < 6:
        raise ValidationError("tomography needs at least 6 distinct durations")
    order = np.argsort(times)
    times, data = times[order], data[:, :, order]
    x = _axis_angle_init(data, times)
    scale = max(1.0, float(np.max(np.abs(x))))
    res = None
    for k in (2, 4, len(times)):
        k = min(k, len(times))
        fun = lambda p, k=k: (_predict(p * scale, times[:k]) - data[:, :, :k]).ravel()
        res = least_squares(fun, x / scale, xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
        x = res.x * scale
    resid = float(np.sqrt(np.mean(res.fun**2)))
    if tol is not None and resid > tol:
        raise TomographyError("CR tomography fit did not converge", resid)
    return TomographyFit(CRCoefficients.from_array(x), resid, times, data)


def _bloch_target(state: np.ndarray) -> np.ndarray:
    """Target (qubit 1) Bloch vector of a two-qubit state."""
    return np.array(
        [np.vdot(state, apply_pauli(s, state)).real for s in ("IX", "IY", "IZ")]
    )


def _prep_state(ctrl: int, prep: str) -> np.ndarray:
    c = np.eye(2)[ctrl]
    t = np.array([1.0, 0.0]) if prep == "0" else np.array([1.0, 1.0]) / math.sqrt(2)
    return np.kron(c, t).astype(complex)


def cr_tomography_data(
    device: DeviceConfig,
    amp: float,
    durations: Sequence[int],
    model: str = "effective",
    control: int = 0,
    target: int = 1,
    shots: int | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the tomography experiment; returns ``(times, data)``.

    With ``shots`` each Bloch component is estimated from that many
    single-shot ±1 outcomes.
    """
    if device.n_qubits != 2:
        raise ValidationError("cr_tomography expects a two-qubit device")
    rng = np.random.default_rng(seed)
    times = np.array([cr_effective_time(device, d) for d in durations])
    data = np.empty((2, len(_PREPS), len(durations), 3))
    bus = device.bus_cutoff if model == "full" else 1
    vac = np.eye(bus)[0]
    for k, d in enumerate(durations):
        sched = cr(control, target, float(amp), 0.0, int(d), device)
        u = propagate_unitary(sched, device, model=model)
        for ctrl in range(2):
            for j, p in enumerate(_PREPS):
                psi0 = _prep_state(ctrl, p)
                if control > target:
                    psi0 = psi0.reshape(2, 2).T.ravel()
                psi = u @ np.kron(psi0, vac)
                if bus > 1:
                    psi, _ = project_bus_vacuum(psi, 2, bus)
                if control > target:
                    psi = psi.reshape(2, 2).T.ravel()
                bloch = _bloch_target(psi)
                if shots is not None:
                    p_plus = np.clip((1 + bloch) / 2, 0, 1)
                    bloch = 2 * rng.binomial(shots, p_plus) / shots - 1
                data[ctrl, j, k] = bloch
    return times, data


def cr_tomography(
    device: DeviceConfig,
    amp: float,
    durations: Sequence[int] | None = None,
    model: str = "effective",
    shots: int | None = None,
    seed: int = 0,
    tol: float | None = None,
    control: int = 0,
    target: int = 1,
) -> CRCoefficients:
    """Hamiltonian tomography of a cross-resonance drive at amplitude ``amp``.

    Prepares the control in ``|0>``/``|1>`` and the target in ``|0>``/``|+>``,
    records the target Bloch vector after each duration and fits the rates
    (rad/s) over the effective flat-top time of each pulse.

    Raises
    ------
    TomographyError
        If the fit residual exceeds ``tol`` (default ``1e-6`` noiseless,
        ``5/sqrt(shots)`` with shots).
    """
    durations = list(durations) if durations is not None else tomography_durations(device)
    if len(set(durations)) < 6:
        raise ValidationError("tomography needs at least 6 distinct durations")
    if tol is None:
        tol = 1e-6 if shots is None else 5 / math.sqrt(shots)
    times, data = cr_tomography_data(device, amp, durations, model, control, target, shots, seed)
    fit = fit_cr_trajectories(data, times, tol)
    log.info("CR tomography amp=%g residual=%.3e", amp, fit.residual)
    return fit.coefficients


# ------------------------------------------------------------------ coverage scans


@dataclass(frozen=True)
class BlockBuilder:
    """A parametric two-qubit pulse block and the device it runs on."""

    name: str
    schedule: PulseSchedule
    device: DeviceConfig

    def unitary(self, values: np.ndarray) -> np.ndarray:
        return propagate_unitary(bind(self.schedule, values), self.device)


def single_cr_builder(device: DeviceConfig, pure_zx: bool = True) -> BlockBuilder:
    """One CR pulse with trainable amplitude and detuning."""
    dev = device.pure_zx() if pure_zx else device
    return BlockBuilder("single-cr", cr(0, 1, "cr_amp", "cr_det", dev.cr_duration, dev), dev)


def multi_cr_builder(device: DeviceConfig, pure_zx: bool = True) -> BlockBuilder:
    """Two CR pulses separated by a layer of single-qubit pulses.

    The single-qubit pulses carry amplitude, detuning and drive-axis phase
    parameters so that the second CR can act about a rotated axis.
    """
    dev = device.pure_zx() if pure_zx else device
    b = ScheduleBuilder(2)
    b.layer([cr(0, 1, "cr1_amp", 0.0, dev.cr_duration, dev)])
    b.layer([snp(q, f"q{q}_amp", f"q{q}_det", dev, phase_param=f"q{q}_phase") for q in (0, 1)])
    b.layer([cr(0, 1, "cr2_amp", 0.0, dev.cr_duration, dev)])
    return BlockBuilder("multi-cr", b.build(), dev)


BUILDERS: dict[str, Callable[[DeviceConfig], BlockBuilder]] = {
    "single-cr": single_cr_builder,
    "multi-cr": multi_cr_builder,
}


@dataclass
class CoverageResult:
    points: list[WeylPoint]
    samples: np.ndarray

    def summary(self) -> dict[str, float]:
        """Per-coordinate min, max and span."""
        arr = np.array([p.as_array() for p in self.points]).reshape(-1, 3)
        out: dict[str, float] = {"n_samples": float(len(self.points))}
        for i, name in enumerate(("c1", "c2", "c3")):
            out[f"{name}_min"] = float(arr[:, i].min())
            out[f"{name}_max"] = float(arr[:, i].max())
            out[f"{name}_span"] = float(np.ptp(arr[:, i]))
        return out


def coverage_scan(
    builder: BlockBuilder,
    n_samples: int,
    seed: int = 0,
    zero_amplitude: bool = False,
) -> CoverageResult:
    """Sample the builder's parameters uniformly in bounds and map to Weyl points.

    Sample ``i`` uses its own generator seeded by ``(seed, i)`` so results do
    not depend on evaluation order.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    space = builder.schedule.params
    lo, hi = space.lower(), space.upper()
    kinds = [e.kind for e in space]
    points, samples = [], []
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        x = lo + (hi - lo) * rng.random(len(lo))
        if zero_amplitude:
            x = np.where([k == "amplitude" for k in kinds], 0.0, x)
        samples.append(x)
        points.append(weyl_coordinates(builder.unitary(x)))
    return CoverageResult(points, np.array(samples))
