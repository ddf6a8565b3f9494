"""Progressive construction of native-pulse ansätze.

Training alternates between growing the ansatz by one layer of pulses and
optimizing only the parameters of that layer. Every new pulse starts at zero
amplitude and zero detuning, so growth leaves the prepared state unchanged and
each step starts from the best energy of the previous one. Older parameters
stay frozen at their trained values.

Also provided: amplitude-threshold pruning, gate-level baseline ansätze whose
trainable parameters are rotation angles of lowered gates, and the run record
that collects per-step optimizer traces.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .device_model import DeviceConfig
from .errors import GrowthExhausted, ValidationError
from .optimizer import Bounds, OptimizerReport, minimize_cobyla, minimize_neldermead
from .problems import (
    EstimatorConfig,
    Graph,
    MoleculeTask,
    estimate_detailed,
    max_cut,
    maxcut_to_ising,
)
from .pulse_ir import (
    Channel,
    Gate,
    ParamRef,
    ParamSpace,
    ParamSpec,
    PulseSchedule,
    ScheduleBuilder,
    ShiftPhase,
    bind,
    cr,
    default_bounds,
    duration_of,
    lower_circuit,
    snp,
)
from .qcore import ObservableSum

log = logging.getLogger(__name__)

LAYER_KINDS = ("snp", "cr")
BASELINE_KINDS = ("RealAmplitude", "TwoLocal_RyCZ", "TwoGate")
OPTIMIZERS = ("cobyla", "neldermead")
DETUNING_UNIT = 1e6  # the optimizer sees detunings in MHz


# ---------------------------------------------------------------------------- tasks


@dataclass(frozen=True)
class VQETask:
    """An observable to minimize and, when known, its exact minimum."""

    name: str
    observable: ObservableSum
    reference: float | None = None
    graph: Graph | None = None

    @classmethod
    def from_molecule(cls, m: MoleculeTask) -> "VQETask":
        return cls(m.label, m.hamiltonian, m.fci_reference)

    @classmethod
    def from_graph(cls, g: Graph, name: str = "maxcut") -> "VQETask":
        best, _ = max_cut(g)
        return cls(name, maxcut_to_ising(g), -float(best), g)

    @property
    def n_qubits(self) -> int:
        return self.observable.n_qubits

    def accuracy(self, energy: float) -> float | None:
        """``1 - |E - E_ref| / |E_ref|`` or ``None`` without a nonzero reference."""
        if not self.reference:
            return None
        return 1.0 - abs(energy - self.reference) / abs(self.reference)


# --------------------------------------------------------------------------- genome


@dataclass(frozen=True)
class Block:
    """One pulse of the ansatz, or the frame advance left behind by a pruned pulse.

    ``kind`` is ``"snp"`` (``qubits = (q,)``), ``"cr"`` (``qubits = (control,
    target)``) or ``"frame"`` (a constant ShiftPhase of ``phase`` radians on
    ``channel``).
    """

    kind: str
    qubits: tuple[int, ...]
    amp: str = ""
    detuning: str = ""
    phase: float = 0.0
    channel: str = ""

    @property
    def params(self) -> tuple[str, ...]:
        return tuple(p for p in (self.amp, self.detuning) if p)

    def channel_of(self) -> Channel:
        if self.kind == "snp":
            return Channel.drive(self.qubits[0])
        if self.kind == "cr":
            return Channel.control(*self.qubits)
        return Channel.parse(self.channel)

    def schedule(self, device: DeviceConfig, specs: ParamSpace) -> PulseSchedule:
        if self.kind == "frame":
            return PulseSchedule(
                device.n_qubits, (ShiftPhase(0, self.channel_of(), self.phase),)
            )
        amp, det = ParamRef(self.amp), ParamRef(self.detuning)
        if self.kind == "snp":
            s = snp(self.qubits[0], amp, det, device)
        else:
            s = cr(self.qubits[0], self.qubits[1], amp, det, None, device)
        return replace(s, params=specs.subset(self.params))

    def duration(self, device: DeviceConfig) -> int:
        if self.kind == "snp":
            return device.snp_duration
        if self.kind == "cr":
            return device.cr_duration
        return 0


@dataclass
class AnsatzGenome:
    """Layered pulse ansatz with its parameter assignment.

    ``fixed`` and ``partial`` partition the parameter names: fixed values are
    frozen, partial values are the ones the current step trains.
    """

    n_qubits: int
    layers: list[list[Block]] = field(default_factory=list)
    specs: ParamSpace = field(default_factory=ParamSpace)
    values: dict[str, float] = field(default_factory=dict)
    fixed: list[str] = field(default_factory=list)
    partial: list[str] = field(default_factory=list)
    step: int = 0

    def copy(self) -> "AnsatzGenome":
        return AnsatzGenome(
            self.n_qubits,
            [list(layer) for layer in self.layers],
            self.specs,
            dict(self.values),
            list(self.fixed),
            list(self.partial),
            self.step,
        )

    def check(self) -> None:
        names = set(self.specs.names)
        fixed, partial = set(self.fixed), set(self.partial)
        if fixed & partial:
            raise ValidationError(f"parameters both fixed and trainable: {sorted(fixed & partial)}")
        if fixed | partial != names or set(self.values) != names:
            raise ValidationError("fixed and partial lists must cover exactly the declared parameters")

    @property
    def blocks(self) -> list[Block]:
        return [b for layer in self.layers for b in layer]

    def pulse_counts(self) -> dict[str, int]:
        kinds = [b.kind for b in self.blocks]
        return {"snp": kinds.count("snp"), "cr": kinds.count("cr")}

    def schedule(self, device: DeviceConfig) -> PulseSchedule:
        """Parametric schedule: layers in order, ALAP within a layer, barriers between."""
        b = ScheduleBuilder(device.n_qubits, self.specs)
        for layer in self.layers:
            b.layer([blk.schedule(device, self.specs) for blk in layer], align="alap")
        return b.build()

    def bound_schedule(self, device: DeviceConfig, values: dict[str, float] | None = None) -> PulseSchedule:
        return bind(self.schedule(device), values if values is not None else self.values)

    def duration(self, device: DeviceConfig) -> tuple[int, float]:
        return duration_of(self.schedule(device), device)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_qubits": self.n_qubits,
            "step": self.step,
            "layers": [
                [{k: v for k, v in vars(b).items() if v not in ("", 0.0) or k == "kind"} for b in layer]
                for layer in self.layers
            ],
            "params": [{"name": p.name, "kind": p.kind, "bounds": [p.lo, p.hi]} for p in self.specs],
            "values": dict(self.values),
            "fixed": list(self.fixed),
            "partial": list(self.partial),
        }


# ---------------------------------------------------------------------------- growth


@dataclass(frozen=True)
class GrowthPolicy:
    """Deterministic layer sequence.

    Step ``k`` (0-based) appends a layer of kind ``pattern[k % len(pattern)]``:
    an SNP on every qubit, or one CR per topology edge with the lower index as
    control, edges in lexicographic order.
    """

    max_steps: int = 2
    pattern: tuple[str, ...] = ("snp", "cr")
    freeze_detuning: bool = False

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValidationError("max_steps must be positive")
        if not self.pattern or any(k not in LAYER_KINDS for k in self.pattern):
            raise ValidationError(f"pattern entries must be in {LAYER_KINDS}")

    def layer_kind(self, step: int) -> str:
        return self.pattern[step % len(self.pattern)]

    def layer(self, step: int, device: DeviceConfig, n_qubits: int) -> list[Block]:
        kind = self.layer_kind(step)
        tag = f"s{step + 1}"
        if kind == "snp":
            return [Block("snp", (q,), f"{tag}_q{q}_amp", f"{tag}_q{q}_det") for q in range(n_qubits)]
        blocks = [
            Block("cr", (a, b), f"{tag}_cr{a}_{b}_amp", f"{tag}_cr{a}_{b}_det")
            for a, b in device.sorted_edges()
            if b < n_qubits
        ]
        if not blocks:
            raise GrowthExhausted(f"device {device.name} has no edges for a CR layer")
        return blocks

    def layer_size(self, step: int, device: DeviceConfig, n_qubits: int) -> int:
        return sum(len(b.params) for b in self.layer(step, device, n_qubits))


def new_genome(n_qubits: int) -> AnsatzGenome:
    return AnsatzGenome(n_qubits)


def grow(g: AnsatzGenome, policy: GrowthPolicy, device: DeviceConfig) -> AnsatzGenome:
    """Freeze the current trainable parameters and append the next layer at zero.

    Raises
    ------
    GrowthExhausted
        When ``policy.max_steps`` layers have already been grown.
    """
    if g.step >= policy.max_steps:
        raise GrowthExhausted(f"policy allows {policy.max_steps} steps")
    if g.n_qubits > device.n_qubits:
        raise ValidationError("genome has more qubits than the device")
    out = g.copy()
    out.fixed.extend(out.partial)
    blocks = policy.layer(g.step, device, g.n_qubits)
    specs = []
    for b in blocks:
        specs.append(ParamSpec(b.amp, "amplitude", *default_bounds("amplitude", device)))
        lo, hi = (0.0, 0.0) if policy.freeze_detuning else default_bounds("detuning", device)
        specs.append(ParamSpec(b.detuning, "detuning", lo, hi))
    out.specs = out.specs.merge(ParamSpace(tuple(specs)))
    out.partial = [s.name for s in specs]
    out.values.update({s.name: 0.0 for s in specs})
    out.layers.append(blocks)
    out.step += 1
    return out


# -------------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainSettings:
    """Optimizer, estimator and stopping settings of a training run.

    ``max_evals`` is the per-step budget, counted as objective evaluations or
    trust-region steps according to ``budget_unit``.
    """

    model: str = "effective"
    estimator: EstimatorConfig = EstimatorConfig()
    optimizer: str = "cobyla"
    rhobeg: float = 0.1
    rhoend: float | None = None
    max_evals: int = 50
    budget_unit: str = "evals"
    stop_epsilon: float = 1e-3
    seed: int = 0
    prune_eps: float | None = None
    polish: bool = False

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}")
        if self.stop_epsilon < 0:
            raise ValidationError("stop_epsilon must be non-negative")


@dataclass
class StepRecord:
    step: int
    kind: str
    appended: list[str]
    start_energy: float
    best_energy: float
    n_evals: int
    termination: str
    duration_dt: int
    duration_ns: float
    trace: list[tuple[dict[str, float], float]] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "kind": self.kind,
            "appended": list(self.appended),
            "start_energy": self.start_energy,
            "best_energy": self.best_energy,
            "n_evals": self.n_evals,
            "termination": self.termination,
            "duration_dt": self.duration_dt,
            "duration_ns": self.duration_ns,
        }


@dataclass
class RunRecord:
    task: str
    device: str
    seed: int
    steps: list[StepRecord] = field(default_factory=list)
    final_energy: float = math.nan
    reference: float | None = None
    accuracy: float | None = None
    duration_dt: int = 0
    duration_ns: float = 0.0
    pulse_counts: dict[str, int] = field(default_factory=dict)
    genome: AnsatzGenome | None = None
    stop_reason: str = ""
    pruned: dict[str, Any] | None = None
    values: dict[str, float] = field(default_factory=dict)

    def best_energies(self) -> list[float]:
        return [s.best_energy for s in self.steps]

    def summary(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "device": self.device,
            "seed": self.seed,
            "final_energy": self.final_energy,
            "reference": self.reference,
            "accuracy": self.accuracy,
            "duration_dt": self.duration_dt,
            "duration_ns": self.duration_ns,
            "snp_count": self.pulse_counts.get("snp", 0),
            "cr_count": self.pulse_counts.get("cr", 0),
            "stop_reason": self.stop_reason,
            "steps": [s.summary() for s in self.steps],
            "pruned": self.pruned,
            "genome": self.genome.to_dict() if self.genome is not None else None,
        }

    def evaluations(self) -> list[dict[str, Any]]:
        """One entry per objective evaluation, in order."""
        rows = []
        for s in self.steps:
            for i, (vals, e) in enumerate(s.trace):
                rows.append({"step": s.step, "eval": i, "energy": e, "params": vals})
        return rows


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def make_energy(
    schedule: PulseSchedule, device: DeviceConfig, task: VQETask, settings: TrainSettings, step: int = 0
) -> Callable[[dict[str, float]], float]:
    """Energy of a parametric schedule as a function of a full name→value map.

    In shots mode every call draws fresh samples from a seed derived from the
    run seed, the step and the call index, so runs are reproducible.
    """
    counter = [0]

    def energy(values: dict[str, float]) -> float:
        est = settings.estimator
        if est.mode == "shots":
            est = est.with_seed(_derived_seed(settings.seed, step, counter[0] + 1))
        counter[0] += 1
        bound = bind(schedule, values)
        return estimate_detailed(bound, device, settings.model, task.observable, est).value

    return energy


def _to_opt(spec: ParamSpec, v: float) -> float:
    return v / DETUNING_UNIT if spec.kind == "detuning" else v


def _from_opt(spec: ParamSpec, x: float) -> float:
    return x * DETUNING_UNIT if spec.kind == "detuning" else x


def optimize_params(
    energy: Callable[[dict[str, float]], float],
    values: dict[str, float],
    specs: ParamSpace,
    names: Sequence[str],
    settings: TrainSettings,
    orientation_seed: int | None = None,
) -> tuple[dict[str, float], OptimizerReport, list[tuple[dict[str, float], float]]]:
    """Minimize ``energy`` over ``names`` with every other value held fixed.

    Returns the best values (full map), the optimizer report and the trace of
    ``(trained values, energy)`` pairs.
    """
    sp = [specs.get(n) for n in names]
    lo = np.array([_to_opt(s, s.lo) for s in sp])
    hi = np.array([_to_opt(s, s.hi) for s in sp])
    x0 = np.clip([_to_opt(s, values[s.name]) for s in sp], lo, hi)
    trace: list[tuple[dict[str, float], float]] = []

    def full(x: np.ndarray) -> dict[str, float]:
        out = dict(values)
        out.update({s.name: _from_opt(s, float(xi)) for s, xi in zip(sp, x)})
        return out

    def objective(x: np.ndarray) -> float:
        vals = full(x)
        e = energy(vals)
        trace.append(({n: vals[n] for n in names}, float(e)))
        return e

    if settings.optimizer == "cobyla":
        rep = minimize_cobyla(
            objective, x0, Bounds(lo, hi), settings.rhobeg, settings.rhoend,
            settings.max_evals, settings.budget_unit, orientation_seed=orientation_seed,
        )
    else:
        rep = minimize_neldermead(
            objective, x0, Bounds(lo, hi), settings.max_evals, initial_step=settings.rhobeg
        )
    return full(rep.best_x), rep, trace


def train_step(
    g: AnsatzGenome, task: VQETask, device: DeviceConfig, settings: TrainSettings
) -> tuple[AnsatzGenome, StepRecord]:
    """Optimize the trainable parameters of ``g``; fixed values are never touched."""
    if not g.partial:
        raise ValidationError("nothing to train: the partial list is empty")
    g.check()
    schedule = g.schedule(device)
    energy = make_energy(schedule, device, task, settings, g.step)
    frozen = {n: g.values[n] for n in g.fixed}
    best, rep, trace = optimize_params(
        energy, g.values, g.specs, g.partial, settings, _derived_seed(settings.seed, g.step, 0)
    )
    out = g.copy()
    out.values = best
    if any(out.values[n] != v for n, v in frozen.items()):
        raise AssertionError("frozen parameters changed during training")
    n_dt, ns = duration_of(schedule, device)
    kind = g.layers[-1][0].kind if g.layers and g.layers[-1] else ""
    rec = StepRecord(
        g.step, kind, list(g.partial), trace[0][1], rep.best_f, rep.n_evals, rep.termination, n_dt, ns, trace
    )
    log.info("step %d (%s): %.6f -> %.6f in %d evals", g.step, kind, rec.start_energy, rec.best_energy, rep.n_evals)
    return out, rec


def run_progressive(
    task: VQETask,
    device: DeviceConfig,
    policy: GrowthPolicy = GrowthPolicy(),
    settings: TrainSettings = TrainSettings(),
    callback: Callable[[StepRecord], None] | None = None,
) -> RunRecord:
    """Grow and train until ``policy.max_steps`` or a step improves the best
    energy by less than ``settings.stop_epsilon``.

    The first step's improvement is measured from the energy of the
    zero-amplitude ansatz. Pruning with ``settings.prune_eps`` runs after the
    last step, optionally followed by one re-optimization of all surviving
    parameters (``settings.polish``).
    """
    if task.n_qubits > device.n_qubits:
        raise ValidationError(f"task needs {task.n_qubits} qubits, device has {device.n_qubits}")
    g = new_genome(task.n_qubits)
    rec = RunRecord(task.name, device.name, settings.seed, reference=task.reference)
    best = math.inf
    while True:
        try:
            g = grow(g, policy, device)
        except GrowthExhausted:
            rec.stop_reason = "max_steps"
            break
        g, step = train_step(g, task, device, settings)
        rec.steps.append(step)
        if callback is not None:
            callback(step)
        prev = step.start_energy if not math.isfinite(best) else best
        improvement = prev - step.best_energy
        best = min(best, step.best_energy)
        if improvement < settings.stop_epsilon:
            rec.stop_reason = "converged"
            break
    g.fixed.extend(g.partial)
    g.partial = []
    final_energy = best
    if settings.prune_eps is not None:
        before = g.duration(device)[0]
        pruned = prune(g, settings.prune_eps, device)
        e = make_energy(pruned.schedule(device), device, task, settings, g.step + 1)(pruned.values)
        if settings.polish and pruned.specs.names:
            pruned.partial, pruned.fixed = list(pruned.specs.names), []
            pruned, polish = train_step(pruned, task, device, settings)
            pruned.fixed, pruned.partial = list(pruned.specs.names), []
            e = polish.best_energy
        rec.pruned = {
            "eps": settings.prune_eps,
            "removed": len(g.blocks) - len([b for b in pruned.blocks if b.kind != "frame"]),
            "energy_before": best,
            "energy_after": e,
            "duration_dt_before": before,
            "duration_dt_after": pruned.duration(device)[0],
        }
        g, final_energy = pruned, e
    rec.genome = g
    rec.values = dict(g.values)
    rec.final_energy = float(final_energy)
    rec.accuracy = task.accuracy(rec.final_energy)
    rec.duration_dt, rec.duration_ns = g.duration(device)
    rec.pulse_counts = g.pulse_counts()
    return rec


# --------------------------------------------------------------------------- pruning


def prune(g: AnsatzGenome, eps: float, device: DeviceConfig) -> AnsatzGenome:
    """Remove every pulse whose amplitude magnitude is at most ``eps``.

    The frame advance a removed pulse's detuning would have accumulated is
    kept as a constant phase shift, so later pulses on the same channel see the
    same frame. Empty layers disappear and the schedule is re-laid out.
    """
    if eps < 0:
        raise ValidationError("eps must be non-negative")
    out = g.copy()
    dropped: set[str] = set()
    layers = []
    for layer in out.layers:
        kept = []
        for b in layer:
            if b.kind != "frame" and abs(out.values[b.amp]) <= eps:
                dropped.update(b.params)
                phase = 2 * math.pi * out.values[b.detuning] * b.duration(device) * device.dt
                if phase:
                    kept.append(Block("frame", b.qubits, phase=phase, channel=b.channel_of().name))
            else:
                kept.append(b)
        if any(b.kind != "frame" for b in kept):
            layers.append(kept)
        elif kept and layers:
            layers[-1].extend(kept)
        elif kept:
            layers.append(kept)
    out.layers = layers
    out.specs = ParamSpace(tuple(s for s in out.specs if s.name not in dropped))
    out.values = {k: v for k, v in out.values.items() if k not in dropped}
    out.fixed = [n for n in out.fixed if n not in dropped]
    out.partial = [n for n in out.partial if n not in dropped]
    return out


# ------------------------------------------------------------------------- baselines


@dataclass
class GateAnsatz:
    """Rotation-angle-parameterized gate circuit lowered to fixed pulses."""

    kind: str
    n_qubits: int
    gates: list[Gate]
    params: list[str]

    def schedule(self, device: DeviceConfig) -> PulseSchedule:
        s = lower_circuit(self.gates, device)
        return replace(s, params=ParamSpace(tuple(
            ParamSpec(p, "angle", *default_bounds("angle")) for p in self.params
        )))

    def gate_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for gt in self.gates:
            out[gt.name] = out.get(gt.name, 0) + 1
        return out


def _chain_edges(device: DeviceConfig, n: int) -> list[tuple[int, int]]:
    return [(a, b) for a, b in device.sorted_edges() if b < n]


def build_gate_baseline(kind: str, n_qubits: int, layers: int, device: DeviceConfig) -> GateAnsatz:
    """Gate-level reference ansatz.

    ``RealAmplitude`` and ``TwoLocal_RyCZ`` repeat ``layers`` times an Ry layer
    followed by CX (resp. CZ) on every device edge, then a final Ry layer.
    ``TwoGate`` is one Ry layer followed by one CX on the first edge.
    """
    if kind not in BASELINE_KINDS:
        raise ValidationError(f"unsupported baseline {kind!r}; choose from {BASELINE_KINDS}")
    if n_qubits > device.n_qubits:
        raise ValidationError("baseline needs more qubits than the device has")
    edges = _chain_edges(device, n_qubits)
    gates: list[Gate] = []
    params: list[str] = []

    def ry_layer(k: int) -> None:
        for q in range(n_qubits):
            name = f"theta{k}_{q}"
            params.append(name)
            gates.append(Gate("ry", (q,), ParamRef(name)))

    if kind == "TwoGate":
        if not edges:
            raise ValidationError("TwoGate baseline needs a coupled pair")
        ry_layer(0)
        gates.append(Gate("cx", edges[0]))
    else:
        two = "cx" if kind == "RealAmplitude" else "cz"
        for k in range(layers):
            ry_layer(k)
            gates.extend(Gate(two, e) for e in edges)
        ry_layer(layers)
    return GateAnsatz(kind, n_qubits, gates, params)


def train_gate_baseline(
    ansatz: GateAnsatz, task: VQETask, device: DeviceConfig, settings: TrainSettings
) -> RunRecord:
    """Optimize all angles of a gate baseline in one step from zero."""
    schedule = ansatz.schedule(device)
    energy = make_energy(schedule, device, task, settings)
    specs = schedule.params
    values = {n: 0.0 for n in specs.names}
    best, rep, trace = optimize_params(
        energy, values, specs, specs.names, settings,
        _derived_seed(settings.seed, 0, 0),
    )
    n_dt, ns = duration_of(schedule, device)
    step = StepRecord(1, ansatz.kind, list(specs.names), trace[0][1], rep.best_f, rep.n_evals,
                      rep.termination, n_dt, ns, trace)
    return RunRecord(
        task.name, device.name, settings.seed, [step], rep.best_f, task.reference,
        task.accuracy(rep.best_f), n_dt, ns, ansatz.gate_counts(), None, rep.termination,
        values=best,
    )
