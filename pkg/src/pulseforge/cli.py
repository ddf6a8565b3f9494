"""Command-line entry point.

Every subcommand reads an optional JSON experiment config; command-line flags
override config fields (flag > config > built-in default). Data goes to files
in the output directory and to standard output; diagnostics go to standard
error. Every output file records the config hash and the seed.

Exit codes: 0 success, 1 a requested check failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .analysis import BUILDERS, coverage_scan, cr_tomography
from .device_model import DeviceConfig, load_device
from .dynamics import propagate
from .errors import PulseForgeError
from .problems import (
    EstimatorConfig,
    approximation_ratio,
    estimate_detailed,
    expected_cut_ratio,
    load_graph,
    load_molecule,
    most_probable_bitstring,
)
from .pulse_ir import (
    Channel,
    Gate,
    PulseSchedule,
    SetDetuning,
    bind,
    duration_of,
    lower_circuit,
    lower_gate,
    schedule_to_dict,
)
from .qcore import probabilities, sample_counts
from .trainer import (
    BASELINE_KINDS,
    GrowthPolicy,
    RunRecord,
    TrainSettings,
    VQETask,
    build_gate_baseline,
    grow,
    make_energy,
    new_genome,
    run_progressive,
    train_gate_baseline,
    train_step,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECK, EXIT_INPUT = 0, 1, 2
DATA_DIR = Path(__file__).parent / "data"
DEFAULT_RANGE_HZ = (-2e6, 2e6)


class InputError(Exception):
    """Invalid command-line input or config; maps to exit code 2."""


# --------------------------------------------------------------------------- config


def _builtin_or_path(spec: str, base: Path, folder: str, suffix: str) -> Path:
    """A file path (absolute, or relative to the config directory or the
    working directory) or the stem of a shipped data file."""
    p = Path(spec)
    for cand in ([p] if p.is_absolute() else [base / p, p]):
        if cand.is_file():
            return cand
    shipped = DATA_DIR / folder / f"{spec}{suffix}"
    if shipped.is_file():
        return shipped
    raise InputError(f"file not found: {spec} (looked in {base}, the working directory and shipped {folder})")


def load_config(spec: str | None) -> tuple[dict[str, Any], Path]:
    """Parse a config file path or shipped experiment name; returns (config, base dir)."""
    if spec is None:
        return {}, Path.cwd()
    path = _builtin_or_path(spec, Path.cwd(), "experiments", ".json")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return cfg, path.parent


def apply_overrides(cfg: dict[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seeds"] = [args.seed]
    if getattr(args, "device", None):
        cfg["device"] = args.device
    if getattr(args, "output_dir", None):
        cfg["output_dir"] = args.output_dir
    if getattr(args, "model", None):
        cfg["model"] = args.model
    est = cfg.setdefault("estimator", {})
    if getattr(args, "shots", None) is not None:
        est["mode"], est["shots"] = "shots", args.shots
    if getattr(args, "exact", False):
        est["mode"] = "exact"
    return cfg


def config_hash(cfg: dict[str, Any], device: DeviceConfig | None = None) -> str:
    # where outputs go does not change what they contain
    cfg = {k: v for k, v in cfg.items() if k != "output_dir"}
    blob = {"config": cfg, "device": device.to_dict() if device is not None else None}
    data = json.dumps(blob, sort_keys=True, default=str).encode()
    return hashlib.sha256(data).hexdigest()[:16]


def resolve_device(cfg: dict[str, Any], base: Path) -> DeviceConfig:
    spec = cfg.get("device", "two_qubit")
    path = _builtin_or_path(str(spec), base, "devices", ".json")
    return load_device(path)


def resolve_task(cfg: dict[str, Any], base: Path) -> VQETask:
    t = cfg.get("task")
    if not isinstance(t, dict):
        raise InputError("config needs a 'task' object with 'molecule' or 'graph'")
    if "molecule" in t:
        path = _builtin_or_path(str(t["molecule"]), base, "molecules", ".ham")
        return VQETask.from_molecule(load_molecule(path))
    if "graph" in t:
        path = _builtin_or_path(str(t["graph"]), base, "graphs", ".txt")
        return VQETask.from_graph(load_graph(path), name=path.stem)
    raise InputError("task needs 'molecule' or 'graph'")


def seeds_of(cfg: dict[str, Any]) -> list[int]:
    seeds = cfg.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise InputError("'seeds' must be a non-empty list of integers")
    return seeds


def estimator_of(cfg: dict[str, Any], seed: int) -> EstimatorConfig:
    e = dict(cfg.get("estimator", {}))
    e.setdefault("seed", seed)
    return EstimatorConfig(**e)


def settings_of(cfg: dict[str, Any], seed: int) -> TrainSettings:
    opt = dict(cfg.get("optimizer", {}))
    pol = cfg.get("policy", {})
    return TrainSettings(
        model=cfg.get("model", "effective"),
        estimator=estimator_of(cfg, seed),
        optimizer=opt.get("name", "cobyla"),
        rhobeg=float(opt.get("rhobeg", 0.1)),
        rhoend=opt.get("rhoend"),
        max_evals=int(opt.get("max_evals", 50)),
        budget_unit=opt.get("iters_mean", opt.get("budget_unit", "evals")),
        stop_epsilon=float(pol.get("stop_epsilon", 1e-3)),
        seed=seed,
        prune_eps=cfg.get("prune_eps"),
        polish=bool(cfg.get("polish", False)),
    )


def policy_of(cfg: dict[str, Any]) -> GrowthPolicy:
    pol = cfg.get("policy", {})
    return GrowthPolicy(
        max_steps=int(pol.get("max_steps", 2)),
        pattern=tuple(pol.get("pattern", ("snp", "cr"))),
        freeze_detuning=bool(pol.get("freeze_detuning", False)),
    )


def output_dir(cfg: dict[str, Any]) -> Path:
    out = Path(cfg.get("output_dir", "pulseforge_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- writers


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: Path, obj: dict[str, Any], meta: dict[str, Any]) -> Path:
    path.write_text(dumps({**meta, **obj}))
    return path


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], meta: dict[str, Any]) -> Path:
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())
    return path


def write_runlog(path: Path, rec: RunRecord, meta: dict[str, Any]) -> Path:
    lines = [json.dumps(_clean({"type": "header", **meta}), sort_keys=True)]
    for row in rec.evaluations():
        lines.append(json.dumps(_clean({"type": "eval", **row}), sort_keys=True))
    lines.append(json.dumps(_clean({"type": "summary", **rec.summary()}), sort_keys=True))
    path.write_text("\n".join(lines) + "\n")
    return path


def _meta(h: str, seed: int | None, command: str) -> dict[str, Any]:
    return {"config_hash": h, "seed": seed, "command": command, "version": __version__}


# ------------------------------------------------------------------------- vqe runs


def _ansatz_kind(cfg: dict[str, Any]) -> str:
    kind = cfg.get("ansatz", "pulse")
    if kind != "pulse" and kind not in BASELINE_KINDS:
        raise InputError(f"unknown ansatz {kind!r}; choose 'pulse' or one of {BASELINE_KINDS}")
    return kind


def run_one(cfg: dict[str, Any], base: Path, seed: int, device: DeviceConfig, task: VQETask) -> RunRecord:
    """Train the configured ansatz for one seed."""
    settings = settings_of(cfg, seed)
    kind = _ansatz_kind(cfg)
    if kind == "pulse":
        return run_progressive(task, device, policy_of(cfg), settings)
    ansatz = build_gate_baseline(kind, task.n_qubits, int(cfg.get("layers", 1)), device)
    return train_gate_baseline(ansatz, task, device, settings)


def _vqe_worker(job: tuple[dict[str, Any], str, int]) -> dict[str, Any]:
    cfg, base, seed = job
    return _vqe_seed(cfg, Path(base), seed)


def _vqe_seed(cfg: dict[str, Any], base: Path, seed: int) -> dict[str, Any]:
    device = resolve_device(cfg, base)
    task = resolve_task(cfg, base)
    name = cfg.get("name", task.name)
    h = config_hash(cfg, device)
    rec = run_one(cfg, base, seed, device, task)
    out = output_dir(cfg)
    meta = _meta(h, seed, "vqe")
    stem = f"{name}_{device.name}_{seed}"
    write_runlog(out / f"{stem}.runlog", rec, meta)
    summary = rec.summary()
    summary.update(
        name=name,
        ansatz=_ansatz_kind(cfg),
        circuit_level="pulse" if _ansatz_kind(cfg) == "pulse" else "gate",
        bond_length=_bond_length(cfg, base),
        model=cfg.get("model", "effective"),
    )
    write_json(out / f"{stem}.summary.json", summary, meta)
    return {**meta, **summary}


def _bond_length(cfg: dict[str, Any], base: Path) -> float | None:
    t = cfg.get("task", {})
    if "molecule" not in t:
        return None
    m = load_molecule(_builtin_or_path(str(t["molecule"]), base, "molecules", ".ham"))
    return None if math.isnan(m.bond_length) else m.bond_length


def _map(fn: Callable, jobs: list, n_jobs: int) -> list:
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_vqe(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    resolve_device(cfg, base)
    resolve_task(cfg, base)
    results = _map(_vqe_worker, [(cfg, str(base), s) for s in seeds_of(cfg)], args.jobs)
    best = min(results, key=lambda r: r["final_energy"])
    for r in results:
        print(json.dumps(_clean({k: r[k] for k in (
            "name", "seed", "final_energy", "accuracy", "duration_ns", "snp_count", "cr_count", "config_hash"
        )}), sort_keys=True))
    limit = cfg.get("checks", {}).get("max_energy")
    if limit is not None and best["final_energy"] > limit:
        print(f"check failed: best energy {best['final_energy']:.6f} > {limit}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------------------- maxcut


def _final_state(schedule: PulseSchedule, device: DeviceConfig, model: str, task: VQETask) -> np.ndarray:
    return estimate_detailed(schedule, device, model, task.observable, EstimatorConfig()).state


def _solution(state: np.ndarray, est: EstimatorConfig, n_task: int) -> str:
    """Most probable bitstring of the first ``n_task`` qubits, exactly or from sampled counts."""
    if est.mode == "exact":
        return most_probable_bitstring(np.sqrt(_task_probabilities(state, n_task)))
    counts: dict[str, int] = {}
    for k, c in sample_counts(state, est.shots, est.seed).items():
        counts[k[:n_task]] = counts.get(k[:n_task], 0) + c
    return max(sorted(counts), key=lambda k: counts[k])


def _task_probabilities(state: np.ndarray, n_task: int) -> np.ndarray:
    """Marginal distribution of the leading ``n_task`` qubits."""
    p = probabilities(state)
    return p.reshape(2**n_task, -1).sum(axis=1)


def maxcut_result(
    task: VQETask, device: DeviceConfig, model: str, est: EstimatorConfig, schedule: PulseSchedule
) -> dict[str, Any]:
    state = _final_state(schedule, device, model, task)
    bits = _solution(state, est, task.n_qubits)
    return {
        "bitstring": bits,
        "ratio": approximation_ratio(task.graph, bits),
        "expected_ratio": expected_cut_ratio(task.graph, _task_probabilities(state, task.n_qubits)),
    }


def cmd_maxcut(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    device = resolve_device(cfg, base)
    task = resolve_task(cfg, base)
    if task.graph is None:
        raise InputError("maxcut needs a 'graph' task")
    h = config_hash(cfg, device)
    out = output_dir(cfg)
    model = cfg.get("model", "effective")
    status = EXIT_OK
    for seed in seeds_of(cfg):
        settings = settings_of(cfg, seed)
        meta = _meta(h, seed, "maxcut")
        pulse = run_progressive(task, device, policy_of(cfg), settings)
        p = maxcut_result(task, device, model, settings.estimator, pulse.genome.bound_schedule(device))
        bcfg = cfg.get("baseline", {})
        ansatz = build_gate_baseline(
            bcfg.get("kind", "TwoLocal_RyCZ"), task.n_qubits, int(bcfg.get("layers", 1)), device
        )
        bsettings = settings_of({**cfg, "optimizer": {**cfg.get("optimizer", {}), **bcfg.get("optimizer", {})}}, seed)
        gate = train_gate_baseline(ansatz, task, device, bsettings)
        g = maxcut_result(task, device, model, settings.estimator, bind(ansatz.schedule(device), gate.values))
        stem = f"{cfg.get('name', task.name)}_{device.name}_{seed}"
        write_runlog(out / f"{stem}.runlog", pulse, meta)
        write_runlog(out / f"{stem}_gate.runlog", gate, meta)
        summary = {
            "graph": task.name,
            "max_cut": -task.reference,
            "pulse": {**p, "energy": pulse.final_energy, "duration_ns": pulse.duration_ns,
                      "snp_count": pulse.pulse_counts.get("snp", 0), "cr_count": pulse.pulse_counts.get("cr", 0)},
            "gate": {**g, "energy": gate.final_energy, "duration_ns": gate.duration_ns, "kind": ansatz.kind},
            "ratio_difference": p["ratio"] - g["ratio"],
        }
        write_json(out / f"{stem}.summary.json", summary, meta)
        print(json.dumps(_clean({"seed": seed, "pulse_ratio": p["ratio"], "gate_ratio": g["ratio"],
                                 "ratio_difference": summary["ratio_difference"]}), sort_keys=True))
        limit = cfg.get("checks", {}).get("min_ratio")
        if limit is not None and p["ratio"] < limit:
            print(f"check failed: seed {seed} pulse ratio {p['ratio']:.4f} < {limit}", file=sys.stderr)
            status = EXIT_CHECK
    return status


# ---------------------------------------------------------------------- detuning scan


def _grid(cfg_section: dict[str, Any], args: argparse.Namespace) -> np.ndarray:
    lo, hi = args.range if getattr(args, "range", None) else cfg_section.get("range_hz", DEFAULT_RANGE_HZ)
    points = args.points if getattr(args, "points", None) else int(cfg_section.get("points", 21))
    if points < 1:
        raise InputError("points must be at least 1")
    if points == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, points)


def scan_detuning(
    task: VQETask,
    device: DeviceConfig,
    policy: GrowthPolicy,
    settings: TrainSettings,
    train_steps: int,
    detunings: np.ndarray,
    parameter: str | None = None,
) -> tuple[str, list[tuple[float, float]]]:
    """Energy versus one detuning parameter of a (partly) trained pulse ansatz.

    ``train_steps`` layers are grown and trained; with ``0`` a single layer is
    grown and left at zero amplitude. The swept parameter defaults to the first
    detuning of the last layer. Sweep values may exceed the parameter's
    training bounds only up to the device limit.
    """
    g = new_genome(task.n_qubits)
    for _ in range(max(train_steps, 1)):
        g = grow(g, policy, device)
        if train_steps:
            g, _ = train_step(g, task, device, settings)
    dets = [n for n in g.specs.names if g.specs.get(n).kind == "detuning"]
    name = parameter or [n for b in g.layers[-1] for n in b.params if n in dets][0]
    if name not in dets:
        raise InputError(f"{name!r} is not a detuning parameter of the ansatz ({dets})")
    energy = make_energy(g.schedule(device), device, task, settings, g.step + 1)
    rows = []
    for d in detunings:
        vals = dict(g.values)
        vals[name] = float(d)
        rows.append((float(d), energy(vals)))
    return name, rows


def cmd_scan_detuning(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    device = resolve_device(cfg, base)
    task = resolve_task(cfg, base)
    scfg = cfg.get("scan", {})
    grid = _grid(scfg, args)
    h = config_hash({**cfg, "grid": grid.tolist()}, device)
    out = output_dir(cfg)
    status = EXIT_OK
    for seed in seeds_of(cfg):
        name, rows = scan_detuning(
            task, device, policy_of(cfg), settings_of(cfg, seed),
            int(scfg.get("train_steps", 1)), grid, scfg.get("parameter"),
        )
        meta = {**_meta(h, seed, "scan-detuning"), "parameter": name}
        path = write_csv(out / f"scan_{cfg.get('name', task.name)}_{device.name}_{seed}.csv",
                         ["detuning_Hz", "energy"], rows, meta)
        e = [r[1] for r in rows]
        spread = max(e) - min(e)
        print(json.dumps({"seed": seed, "parameter": name, "spread": spread, "csv": str(path)}, sort_keys=True))
        limit = cfg.get("checks", {}).get("min_spread")
        if limit is not None and spread < limit:
            print(f"check failed: energy spread {spread:.4g} < {limit}", file=sys.stderr)
            status = EXIT_CHECK
    return status


# ------------------------------------------------------------------------ verification

VERIFY_GATES = (("cx", (0, 1)), ("h", (1,)), ("h", (1,)), ("cx", (0, 1)))


def verification_schedule(device: DeviceConfig, detuning: float) -> PulseSchedule:
    """CX, H, H†, CX† on qubits (0, 1) with every channel's frame detuned by ``detuning`` Hz.

    The detuning is set once at the start and never reset, modelling a
    miscalibrated qubit frequency that persists through the sequence.
    """
    s = lower_circuit([Gate(n, q) for n, q in VERIFY_GATES], device)
    chans = [Channel.drive(q) for q in range(device.n_qubits)]
    chans += [Channel.control(c, t) for c, t in device.directed_edges()]
    head = tuple(SetDetuning(0, ch, float(detuning)) for ch in chans)
    return PulseSchedule(s.n_qubits, head + s.instructions, s.params, s.metadata)


def verify_sweep(device: DeviceConfig, detunings: Sequence[float], model: str = "effective") -> list[tuple[float, ...]]:
    """Rows ``(detuning, P00, P01, P10, P11)`` of the verification circuit."""
    if device.n_qubits != 2:
        raise InputError("verify needs a 2-qubit device")
    rows = []
    for d in detunings:
        res = propagate(verification_schedule(device, d), device, model)
        p = probabilities(res.qubit_state())
        rows.append((float(d), *[float(x) for x in p]))
    return rows


def cmd_verify(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    device = resolve_device(cfg, base)
    vcfg = cfg.get("verify", {})
    grid = _grid(vcfg, args)
    model = cfg.get("model", "effective")
    h = config_hash({**cfg, "grid": grid.tolist()}, device)
    rows = verify_sweep(device, grid, model)
    seed = seeds_of(cfg)[0]
    path = write_csv(output_dir(cfg) / f"verify_{device.name}_{model}.csv",
                     ["detuning_Hz", "P00", "P01", "P10", "P11"], rows, _meta(h, seed, "verify"))
    p00_zero = verify_sweep(device, [0.0], model)[0][1]
    p00 = [r[1] for r in rows]
    variation = max(p00) - min(p00)
    print(json.dumps({"p00_zero": p00_zero, "p00_variation": variation, "csv": str(path)}, sort_keys=True))
    status = EXIT_OK
    if p00_zero < float(vcfg.get("min_p00", 0.99)):
        print(f"check failed: P00 at zero detuning {p00_zero:.6f} < {vcfg.get('min_p00', 0.99)}", file=sys.stderr)
        status = EXIT_CHECK
    limit = vcfg.get("min_variation")
    if limit is not None and variation < limit:
        print(f"check failed: P00 variation {variation:.4f} < {limit}", file=sys.stderr)
        status = EXIT_CHECK
    return status


# ----------------------------------------------------------------------- dissociation


def cmd_dissociation(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    device = resolve_device(cfg, base)
    files = cfg.get("molecules", [])
    if args.molecules:
        files = args.molecules
    if not files:
        raise InputError("dissociation needs a 'molecules' list")
    present = []
    for f in files:
        try:
            present.append(str(_builtin_or_path(str(f), base, "molecules", ".ham")))
        except InputError:
            print(f"warning: geometry file {f} not found, skipped", file=sys.stderr)
    if not present:
        print("error: no geometry files found", file=sys.stderr)
        return EXIT_INPUT
    h = config_hash(cfg, device)
    jobs = []
    for f in present:
        sub = {k: v for k, v in cfg.items() if k != "molecules"}
        sub["task"] = {"molecule": f}
        sub["name"] = f"{cfg.get('name', 'dissociation')}_{Path(f).stem}"
        for seed in seeds_of(cfg):
            jobs.append((sub, str(base), seed))
    results = _map(_vqe_worker, jobs, args.jobs)
    rows = []
    for f in present:
        m = load_molecule(f)
        mine = [r for r in results if r["name"].endswith(Path(f).stem)]
        best = min(mine, key=lambda r: r["final_energy"])
        rows.append((m.bond_length, best["final_energy"], m.fci_reference))
    rows.sort()
    path = write_csv(output_dir(cfg) / f"dissociation_{cfg.get('name', 'dissociation')}_{device.name}.csv",
                     ["bond_length", "vqe_energy", "fci_energy"], rows, _meta(h, seeds_of(cfg)[0], "dissociation"))
    print(json.dumps({"rows": len(rows), "csv": str(path)}))
    return EXIT_OK


# ---------------------------------------------------------------------- thin wrappers


def cmd_weyl(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    device = resolve_device(cfg, base)
    wcfg = cfg.get("weyl", {})
    builder_name = args.builder or wcfg.get("builder", "single-cr")
    if builder_name not in BUILDERS:
        raise InputError(f"unknown builder {builder_name!r}; choose from {sorted(BUILDERS)}")
    n = args.samples or int(wcfg.get("samples", 500))
    seed = seeds_of(cfg)[0]
    builder = BUILDERS[builder_name](device)
    res = coverage_scan(builder, n, seed, zero_amplitude=bool(wcfg.get("zero_amplitude", False)))
    names = builder.schedule.params.names
    rows = [(*p.as_array(), *x) for p, x in zip(res.points, res.samples)]
    h = config_hash({**cfg, "builder": builder_name, "samples": n}, device)
    path = write_csv(output_dir(cfg) / f"weyl_{builder_name}_{device.name}_{seed}.csv",
                     ["c1", "c2", "c3", *names], rows, _meta(h, seed, "weyl"))
    print(json.dumps({**res.summary(), "csv": str(path)}, sort_keys=True))
    return EXIT_OK


def cmd_tomography(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    device = resolve_device(cfg, base)
    tcfg = cfg.get("tomography", {})
    amp = args.amp if args.amp is not None else float(tcfg.get("amp", 0.2))
    est = cfg.get("estimator", {})
    shots = est.get("shots") if est.get("mode") == "shots" else None
    seed = seeds_of(cfg)[0]
    model = cfg.get("model", "effective")
    coeffs = cr_tomography(device, amp, tcfg.get("durations"), model, shots, seed)
    h = config_hash({**cfg, "amp": amp}, device)
    result = {"amp": amp, "model": model, "shots": shots, "coefficients": coeffs.to_dict()}
    path = write_json(output_dir(cfg) / f"tomography_{device.name}_{seed}.json", result, _meta(h, seed, "tomography"))
    print(dumps({**result, "json": str(path)}), end="")
    return EXIT_OK


def _parse_gate(text: str) -> tuple[str, list[int], float | None]:
    parts = text.split()
    if len(parts) < 2:
        raise InputError(f"gate spec {text!r} must be like 'cx 0 1' or 'rx 0 1.57'")
    name = parts[0].lower()
    n_q = 2 if name in ("cx", "cz") else 1
    try:
        qubits = [int(p) for p in parts[1 : 1 + n_q]]
        theta = float(parts[1 + n_q]) if len(parts) > 1 + n_q else None
    except (ValueError, IndexError) as exc:
        raise InputError(f"cannot parse gate spec {text!r}") from exc
    return name, qubits, theta


def cmd_lower(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    device = resolve_device(cfg, base)
    name, qubits, theta = _parse_gate(" ".join(args.gate))
    s = lower_gate(name, qubits, device, theta)
    n_dt, ns = duration_of(s, device)
    h = config_hash({**cfg, "gate": " ".join(args.gate)}, device)
    doc = {**_meta(h, None, "lower"), "gate": " ".join(args.gate), "duration_dt": n_dt,
           "duration_ns": ns, "schedule": schedule_to_dict(s)}
    text = dumps(doc)
    if args.output_dir or cfg.get("output_dir"):
        (output_dir(cfg) / f"lower_{name}_{'_'.join(map(str, qubits))}.json").write_text(text)
    print(text, end="")
    return EXIT_OK


REPORT_COLUMNS = ("name", "circuit_level", "bond_length", "reference", "final_energy",
                  "accuracy", "duration_ns", "snp_count", "cr_count", "seed", "config_hash")


def cmd_report(cfg: dict[str, Any], base: Path, args: argparse.Namespace) -> int:
    paths: list[Path] = []
    for p in args.inputs or [cfg.get("output_dir", "pulseforge_out")]:
        p = Path(p)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.summary.json")))
        elif p.is_file():
            paths.append(p)
        else:
            raise InputError(f"no such file or directory: {p}")
    rows = []
    for p in paths:
        d = json.loads(p.read_text())
        if "final_energy" not in d:
            continue
        rows.append([d.get(c) for c in REPORT_COLUMNS])
    if not rows:
        raise InputError("no VQE summaries found")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(rows)
    text = buf.getvalue()
    if args.output_dir or cfg.get("output_dir"):
        (output_dir(cfg) / "report.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


# ------------------------------------------------------------------------------ main


COMMANDS: dict[str, Callable[[dict[str, Any], Path, argparse.Namespace], int]] = {
    "vqe": cmd_vqe,
    "maxcut": cmd_maxcut,
    "scan-detuning": cmd_scan_detuning,
    "verify": cmd_verify,
    "dissociation": cmd_dissociation,
    "weyl": cmd_weyl,
    "tomography": cmd_tomography,
    "lower": cmd_lower,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file or shipped experiment name")
    common.add_argument("--seed", type=int, help="run this single seed instead of the config's seeds")
    common.add_argument("--device", help="device JSON file or shipped device name")
    common.add_argument("--output-dir", help="directory for output files")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")
    common.add_argument("--model", choices=("effective", "full"), help="simulation model")
    common.add_argument("--shots", type=int, help="use the shot estimator with this many shots")
    common.add_argument("--exact", action="store_true", help="use the exact estimator")

    parser = argparse.ArgumentParser(prog="pulseforge", description="Native-pulse variational experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("vqe", parents=[common], help="progressive pulse VQE or a gate baseline")
    sub.add_parser("maxcut", parents=[common], help="pulse ansatz vs gate baseline on MaxCut")
    p = sub.add_parser("scan-detuning", parents=[common], help="energy versus one detuning parameter")
    p.add_argument("--points", type=int, help="number of grid points")
    p.add_argument("--range", type=float, nargs=2, metavar=("LO_HZ", "HI_HZ"), help="detuning range in Hz")
    p = sub.add_parser("verify", parents=[common], help="CX-H-H-CX verification under detuning")
    p.add_argument("--points", type=int, help="number of grid points")
    p.add_argument("--range", type=float, nargs=2, metavar=("LO_HZ", "HI_HZ"), help="detuning range in Hz")
    p = sub.add_parser("dissociation", parents=[common], help="VQE energy versus bond length")
    p.add_argument("molecules", nargs="*", help="molecule files or shipped stems")
    p = sub.add_parser("weyl", parents=[common], help="Weyl-chamber coverage of CR blocks")
    p.add_argument("--builder", choices=sorted(BUILDERS), help="block family to sample")
    p.add_argument("--samples", type=int, help="number of random parameter draws")
    p = sub.add_parser("tomography", parents=[common], help="CR Hamiltonian tomography")
    p.add_argument("--amp", type=float, help="CR drive amplitude")
    p = sub.add_parser("lower", parents=[common], help="lower one gate to a pulse schedule")
    p.add_argument("gate", nargs="+", help="e.g. cx 0 1, or rx 0 1.5708")
    p = sub.add_parser("report", parents=[common], help="tabulate VQE summaries")
    p.add_argument("inputs", nargs="*", help="summary files or directories")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg, base = load_config(args.config)
        cfg = apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg, base, args)
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PulseForgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TypeError, ValueError, KeyError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
