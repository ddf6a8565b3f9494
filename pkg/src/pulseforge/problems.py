"""Problem Hamiltonians and objective estimation.

* Molecular Hamiltonians are read from ``.ham`` text files: ``# key: value``
  header lines followed by ``coefficient letters`` term lines.
* MaxCut graphs are read from edge lists with a ``# nodes: N`` header and
  mapped to the Ising observable ``Σ_(u,v) ½(Z_u Z_v - I)`` whose negated
  expectation on a basis state is its cut value.
* :func:`estimate` evaluates an observable on the state prepared by a bound
  pulse schedule, exactly or from simulated shots.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .device_model import DeviceConfig
from .dynamics import propagate
from .errors import CapacityError, ParseError, ValidationError
from .pulse_ir import (
    Channel,
    PulseSchedule,
    ScheduleBuilder,
    ShiftPhase,
    frame_phase_at,
    lower_gate,
)
from .qcore import (
    ObservableSum,
    PauliTerm,
    apply_pauli,
    expectation,
    ground_energy,
    project_bus_vacuum,
)

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
MAX_MAXCUT_NODES = 20
FCI_TOLERANCE = 1e-3


# ----------------------------------------------------------------- Hamiltonian files


def parse_pauli_text(text: str, path: str | None = None) -> tuple[dict[str, str], ObservableSum]:
    """Parse ``.ham`` text into its header mapping and observable."""
    headers: dict[str, str] = {}
    terms: list[PauliTerm] = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                key, _, value = body.partition(":")
                headers[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'coefficient letters', got {line!r}", lineno, path)
        coef_s, letters = parts
        try:
            coef = float(coef_s)
        except ValueError:
            raise ParseError(f"non-numeric coefficient {coef_s!r}", lineno, path) from None
        if not math.isfinite(coef):
            raise ParseError(f"non-finite coefficient {coef_s!r}", lineno, path)
        letters = letters.upper()
        bad = sorted(set(letters) - set("IXYZ"))
        if bad:
            raise ParseError(f"invalid Pauli letters {bad} in {letters!r}", lineno, path)
        if width is None:
            width = len(letters)
        elif len(letters) != width:
            raise ParseError(
                f"term {letters!r} has {len(letters)} letters, expected {width}", lineno, path
            )
        terms.append(PauliTerm(coef, letters))
    if width is None:
        raise ParseError("no Hamiltonian terms found", None, path)
    return headers, ObservableSum(width, terms)


def load_pauli_hamiltonian(path: str | Path) -> ObservableSum:
    """Read a Pauli-sum file; duplicate terms are merged."""
    path = Path(path)
    return parse_pauli_text(path.read_text(), str(path))[1]


@dataclass(frozen=True)
class MoleculeTask:
    label: str
    bond_length: float
    hamiltonian: ObservableSum
    fci_reference: float
    hartree_fock: float | None = None
    source: str = ""

    @property
    def n_qubits(self) -> int:
        return self.hamiltonian.n_qubits

    def accuracy(self, energy: float) -> float:
        """``1 - |E - E_ref| / |E_ref|``."""
        return 1.0 - abs(energy - self.fci_reference) / abs(self.fci_reference)


def load_molecule(path: str | Path, strict: bool = True) -> MoleculeTask:
    """Load a molecule file and cross-check its reference energy.

    With ``strict`` the exact ground energy of the observable must match the
    ``fci_reference`` header within 1e-3 Hartree.
    """
    path = Path(path)
    headers, obs = parse_pauli_text(path.read_text(), str(path))
    try:
        ref = float(headers["fci_reference"])
    except KeyError:
        raise ParseError("missing '# fci_reference:' header", None, str(path)) from None
    except ValueError:
        raise ParseError("fci_reference is not a number", None, str(path)) from None
    bond = float(headers.get("bond_length", "nan"))
    hf = float(headers["hartree_fock"]) if "hartree_fock" in headers else None
    task = MoleculeTask(headers.get("label", path.stem), bond, obs, ref, hf, headers.get("source", ""))
    if strict:
        e0, _ = ground_energy(obs)
        if abs(e0 - ref) > FCI_TOLERANCE:
            raise ValidationError(
                f"{path}: ground energy {e0:.6f} differs from fci_reference {ref:.6f}"
            )
    log.info("molecule %s (%.3f A, %d qubits, %d terms)", task.label, bond, obs.n_qubits, len(obs))
    return task


def builtin_molecule(name: str) -> MoleculeTask:
    """Shipped molecule by file stem, e.g. ``"h2_0.75"``."""
    return load_molecule(DATA_DIR / "molecules" / f"{name}.ham")


# -------------------------------------------------------------------------- MaxCut


@dataclass(frozen=True)
class Graph:
    """Simple undirected unweighted graph with edges normalized to ``u < v``."""

    n_nodes: int
    edges: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValidationError("graph needs at least one node")
        norm = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValidationError(f"self-loop on node {u}")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ValidationError(f"edge ({u},{v}) outside {self.n_nodes} nodes")
            norm.append((min(u, v), max(u, v)))
        if len(set(norm)) != len(norm):
            raise ValidationError("duplicate edge")
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    def degrees(self) -> list[int]:
        deg = [0] * self.n_nodes
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


def load_graph(path: str | Path) -> Graph:
    path = Path(path)
    n = None
    edges = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if key.strip() == "nodes":
                try:
                    n = int(value)
                except ValueError:
                    raise ParseError("nodes header is not an integer", lineno, str(path)) from None
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'u v', got {line!r}", lineno, str(path))
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"non-integer node in {line!r}", lineno, str(path)) from None
    if n is None:
        raise ParseError("missing '# nodes: N' header", None, str(path))
    try:
        return Graph(n, tuple(edges))
    except ValidationError as exc:
        raise ParseError(str(exc), None, str(path)) from None


def builtin_graph(name: str = "prism6") -> Graph:
    return load_graph(DATA_DIR / "graphs" / f"{name}.txt")


def maxcut_to_ising(g: Graph) -> ObservableSum:
    """``H = Σ_(u,v) ½(Z_u Z_v - I)``; ``-<b|H|b>`` is the cut value of ``b``."""
    n = g.n_nodes
    terms = [PauliTerm(0.0, "I" * n)]  # keeps edgeless graphs well defined
    for u, v in g.edges:
        letters = ["I"] * n
        letters[u] = letters[v] = "Z"
        terms.append(PauliTerm(0.5, "".join(letters)))
        terms.append(PauliTerm(-0.5, "I" * n))
    return ObservableSum(n, terms)


def cut_value(g: Graph, bitstring: str) -> int:
    if len(bitstring) != g.n_nodes or set(bitstring) - set("01"):
        raise ValidationError(f"bitstring {bitstring!r} does not match {g.n_nodes} nodes")
    return sum(bitstring[u] != bitstring[v] for u, v in g.edges)


def _all_cuts(g: Graph) -> np.ndarray:
    """Cut value of every basis index (qubit 0 is the most significant bit)."""
    n = g.n_nodes
    if n > MAX_MAXCUT_NODES:
        raise CapacityError(f"exhaustive MaxCut limited to {MAX_MAXCUT_NODES} nodes")
    idx = np.arange(2**n)
    bits = (idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    cuts = np.zeros(2**n, dtype=int)
    for u, v in g.edges:
        cuts += bits[:, u] != bits[:, v]
    return cuts


def max_cut(g: Graph) -> tuple[int, str]:
    """Exhaustive maximum cut and the lowest-index optimal bitstring."""
    cuts = _all_cuts(g)
    k = int(np.argmax(cuts))
    return int(cuts[k]), format(k, f"0{g.n_nodes}b")


def approximation_ratio(g: Graph, bitstring: str) -> float:
    """``cut(bitstring) / maxcut(g)`` (1.0 for an edgeless graph)."""
    best, _ = max_cut(g)
    value = cut_value(g, bitstring)
    return 1.0 if best == 0 else value / best


def expected_cut_ratio(g: Graph, probabilities: np.ndarray) -> float:
    """Expected cut value under a basis-state distribution over ``maxcut(g)``."""
    best, _ = max_cut(g)
    return 1.0 if best == 0 else float(np.dot(probabilities, _all_cuts(g)) / best)


# ----------------------------------------------------------------------- estimation


MODES = ("exact", "shots")
GROUPINGS = ("per-term", "qubitwise-commuting")
ROTATIONS = ("ideal", "pulse")


@dataclass(frozen=True)
class EstimatorConfig:
    mode: str = "exact"
    shots: int = 1024
    seed: int = 0
    grouping: str = "per-term"
    rotations: str = "ideal"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"estimator mode must be one of {MODES}")
        if self.grouping not in GROUPINGS:
            raise ValidationError(f"grouping must be one of {GROUPINGS}")
        if self.rotations not in ROTATIONS:
            raise ValidationError(f"rotations must be one of {ROTATIONS}")
        if self.mode == "shots" and (int(self.shots) != self.shots or self.shots < 1):
            raise ValidationError("shots must be a positive integer in shots mode")

    def with_seed(self, seed: int) -> "EstimatorConfig":
        return EstimatorConfig(self.mode, self.shots, seed, self.grouping, self.rotations)


@dataclass(frozen=True)
class EstimateResult:
    value: float
    stderr: float
    leakage: float
    n_groups: int
    state: np.ndarray | None = None


def _qwc(a: str, b: str) -> bool:
    return all(x == "I" or y == "I" or x == y for x, y in zip(a, b))


def measurement_groups(obs: ObservableSum, grouping: str = "per-term") -> list[list[PauliTerm]]:
    """Measurement settings; identity terms are excluded (they need no shots)."""
    terms = [t for t in obs.terms if set(t.letters) != {"I"}]
    if grouping == "per-term":
        return [[t] for t in terms]
    groups: list[list[PauliTerm]] = []
    bases: list[list[str]] = []
    for t in terms:
        for grp, basis in zip(groups, bases):
            if _qwc("".join(basis), t.letters):
                grp.append(t)
                for i, ch in enumerate(t.letters):
                    if ch != "I":
                        basis[i] = ch
                break
        else:
            groups.append([t])
            bases.append(list(t.letters))
    return groups


def group_basis(group: Sequence[PauliTerm]) -> str:
    n = len(group[0].letters)
    basis = ["Z"] * n
    for t in group:
        for i, ch in enumerate(t.letters):
            if ch != "I":
                basis[i] = ch
    return "".join(basis)


_ROT = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),  # H
    "Y": np.array([[1, -1j], [1, 1j]], dtype=complex) / math.sqrt(2),  # H S†
    "Z": np.eye(2, dtype=complex),
}


def _rotate_ideal(state: np.ndarray, basis: str) -> np.ndarray:
    n = len(basis)
    t = state.reshape((2,) * n)
    for q, ch in enumerate(basis):
        if ch != "Z":
            t = np.moveaxis(np.tensordot(_ROT[ch], t, axes=(1, q)), 0, q)
    return t.reshape(-1)


def _parity_table(letters: str) -> np.ndarray:
    """±1 eigenvalue of the Z-string with support of ``letters`` per basis index."""
    n = len(letters)
    mask = sum(1 << (n - 1 - i) for i, ch in enumerate(letters) if ch != "I")
    idx = np.arange(2**n)
    parity = np.zeros(2**n, dtype=int)
    v = idx & mask
    while np.any(v):
        parity ^= v & 1
        v = v >> 1
    return 1 - 2 * parity


def group_seed(seed: int, index: int) -> int:
    """Per-group sampling seed derived deterministically from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _basis_schedule(
    schedule: PulseSchedule, device: DeviceConfig, basis: str
) -> PulseSchedule:
    """Append lowered basis-change pulses (RY(-π/2) for X, RX(π/2) for Y).

    For schedules that are not gate circuits, the frame advance left on each
    drive channel is undone first so the rotation axis is the qubit frame's.
    """
    b = ScheduleBuilder(device.n_qubits)
    b.metadata.update(schedule.meta)
    b.append(schedule)
    b.barrier()
    virtual = bool(schedule.meta.get("virtual_z", False))
    for q, ch in enumerate(basis):
        if ch == "Z":
            continue
        if not virtual:
            phi = frame_phase_at(schedule, Channel.drive(q), schedule.duration, device.dt)
            if phi:
                b.append(PulseSchedule(device.n_qubits, (ShiftPhase(0, Channel.drive(q), -phi),)))
        gate = ("ry", -math.pi / 2) if ch == "X" else ("rx", math.pi / 2)
        b.append(lower_gate(gate[0], (q,), device, gate[1]))
    return b.build()


def _final_state(schedule, device, model, virtual_z=None):
    res = propagate(schedule, device, model=model, virtual_z=virtual_z)
    if model == "full":
        psi, leak = project_bus_vacuum(res.final_state, device.n_qubits, device.bus_cutoff)
        return psi, leak
    return res.final_state, 0.0


def _embed_obs(obs: ObservableSum, n_qubits: int) -> ObservableSum:
    if obs.n_qubits == n_qubits:
        return obs
    if obs.n_qubits > n_qubits:
        raise ValidationError(
            f"observable on {obs.n_qubits} qubits exceeds the {n_qubits}-qubit schedule"
        )
    pad = "I" * (n_qubits - obs.n_qubits)
    return ObservableSum(n_qubits, (PauliTerm(t.coefficient, t.letters + pad) for t in obs.terms))


def estimate_state(
    state: np.ndarray, obs: ObservableSum, est: EstimatorConfig = EstimatorConfig()
) -> EstimateResult:
    """Estimate ``<ψ|H|ψ>`` on a qubit-register state with ideal basis rotations."""
    state = np.asarray(state, dtype=complex)
    if est.mode == "exact":
        return EstimateResult(expectation(state, obs), 0.0, 0.0, 0, state)
    total = obs.identity_coefficient()
    var = 0.0
    groups = measurement_groups(obs, est.grouping)
    for gi, group in enumerate(groups):
        probs = np.abs(_rotate_ideal(state, group_basis(group))) ** 2
        v, s2 = _sample_group(probs, group, est.shots, group_seed(est.seed, gi))
        total += v
        var += s2
    return EstimateResult(float(total), math.sqrt(var), 0.0, len(groups), state)


def _sample_group(
    probs: np.ndarray, group: Sequence[PauliTerm], shots: int, seed: int
) -> tuple[float, float]:
    """Shot estimate of a group's summed terms and the estimator's exact variance."""
    probs = np.clip(probs.real, 0, None)
    probs = probs / probs.sum()
    values = np.zeros(probs.shape[0])
    for t in group:
        values += t.coefficient * _parity_table(t.letters)
    counts = np.random.default_rng(seed).multinomial(shots, probs)
    mean = float(np.dot(counts, values) / shots)
    exact = float(np.dot(probs, values))
    var = float(np.dot(probs, (values - exact) ** 2) / shots)
    return mean, var


def estimate_detailed(
    schedule: PulseSchedule,
    device: DeviceConfig,
    model: str,
    obs: ObservableSum,
    est: EstimatorConfig = EstimatorConfig(),
) -> EstimateResult:
    """Energy estimate with its standard error, leakage and group count."""
    if schedule.n_qubits < obs.n_qubits:
        raise ValidationError("schedule has fewer qubits than the observable")
    obs = _embed_obs(obs, schedule.n_qubits)
    psi, leak = _final_state(schedule, device, model)
    if est.mode == "exact" or est.rotations == "ideal":
        r = estimate_state(psi, obs, est)
        return EstimateResult(r.value, r.stderr, leak, r.n_groups, psi)
    total = obs.identity_coefficient()
    var = 0.0
    groups = measurement_groups(obs, est.grouping)
    virtual = bool(schedule.meta.get("virtual_z", False))
    for gi, group in enumerate(groups):
        basis = group_basis(group)
        rotated, leak_g = _final_state(_basis_schedule(schedule, device, basis), device, model, virtual)
        leak = max(leak, leak_g)
        v, s2 = _sample_group(np.abs(rotated) ** 2, group, est.shots, group_seed(est.seed, gi))
        total += v
        var += s2
    return EstimateResult(float(total), math.sqrt(var), leak, len(groups), psi)


def estimate(
    schedule: PulseSchedule,
    device: DeviceConfig,
    model: str,
    obs: ObservableSum,
    est: EstimatorConfig = EstimatorConfig(),
) -> float:
    """Expectation of ``obs`` on the state prepared by ``schedule`` from ``|0...0>``.

    Exact mode uses the propagated state directly. Shots mode measures each
    group of terms in its own basis with ``est.shots`` samples (seeded per
    group from ``est.seed``); basis changes are ideal matrices or appended
    lowered pulses according to ``est.rotations``. Identity terms contribute
    their coefficient exactly.
    """
    return estimate_detailed(schedule, device, model, obs, est).value


def most_probable_bitstring(state: np.ndarray) -> str:
    p = np.abs(np.asarray(state)) ** 2
    n = int(round(math.log2(p.shape[0])))
    return format(int(np.argmax(p)), f"0{n}b")


def pauli_expectations(state: np.ndarray, letters: Sequence[str]) -> dict[str, float]:
    return {s: float(np.vdot(state, apply_pauli(s, state)).real) for s in letters}
