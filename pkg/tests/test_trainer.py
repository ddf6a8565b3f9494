import math

import numpy as np
import pytest

import oracles as o
from pulseforge.errors import GrowthExhausted, ValidationError
from pulseforge.problems import EstimatorConfig, builtin_graph, estimate
from pulseforge.pulse_ir import bind, duration_of
from pulseforge.qcore import ObservableSum, PauliTerm
from pulseforge.trainer import (
    GrowthPolicy,
    TrainSettings,
    VQETask,
    build_gate_baseline,
    grow,
    new_genome,
    prune,
    run_progressive,
    train_gate_baseline,
    train_step,
)


@pytest.fixture(scope="module")
def h2_task(h2):
    return VQETask.from_molecule(h2)


@pytest.fixture(scope="module")
def trained_h2(h2_task, device):
    return run_progressive(h2_task, device, GrowthPolicy(), TrainSettings(seed=0))


# ----------------------------------------------------------------------- growth


def test_grow_snp_then_cr(device):
    p = GrowthPolicy()
    g1 = grow(new_genome(2), p, device)
    assert [b.kind for b in g1.blocks] == ["snp", "snp"]
    assert g1.partial == ["s1_q0_amp", "s1_q0_det", "s1_q1_amp", "s1_q1_det"]
    assert g1.fixed == [] and all(v == 0.0 for v in g1.values.values())
    g2 = grow(g1, p, device)
    assert [b.kind for b in g2.layers[-1]] == ["cr"]
    assert g2.fixed == g1.partial
    assert g2.partial == ["s2_cr0_1_amp", "s2_cr0_1_det"]
    with pytest.raises(GrowthExhausted):
        grow(g2, p, device)


def test_grow_on_line_uses_every_edge(line4):
    g = grow(grow(new_genome(4), GrowthPolicy(), line4), GrowthPolicy(), line4)
    assert [b.qubits for b in g.layers[-1]] == [(0, 1), (1, 2), (2, 3)]


def test_partial_list_size_is_one_layer(line4):
    p = GrowthPolicy(max_steps=4)
    g = new_genome(4)
    for k in range(4):
        g = grow(g, p, line4)
        assert len(g.partial) == p.layer_size(k, line4, 4)
        assert len(g.partial) <= 2 * 4


def test_freeze_detuning_bounds(device):
    g = grow(new_genome(2), GrowthPolicy(freeze_detuning=True), device)
    spec = g.specs.get("s1_q0_det")
    assert spec.lo == spec.hi == 0.0


def test_growth_is_continuous(device, h2_task):
    g = grow(new_genome(2), GrowthPolicy(), device)
    g, _ = train_step(g, h2_task, device, TrainSettings())
    before = estimate(g.bound_schedule(device), device, "effective", h2_task.observable)
    g2 = grow(g, GrowthPolicy(), device)
    after = estimate(g2.bound_schedule(device), device, "effective", h2_task.observable)
    assert after == pytest.approx(before, abs=1e-12)


@pytest.mark.parametrize("kwargs", [{"max_steps": 0}, {"pattern": ()}, {"pattern": ("snp", "xx")}])
def test_policy_validation(kwargs):
    with pytest.raises(ValidationError):
        GrowthPolicy(**kwargs)


# --------------------------------------------------------------------- training


def test_step_one_energy(device, h2_task):
    g = grow(new_genome(2), GrowthPolicy(), device)
    _, rec = train_step(g, h2_task, device, TrainSettings())
    assert rec.start_energy == pytest.approx(o.H2_ZERO_STATE_075, abs=1e-9)
    assert rec.best_energy <= -0.5
    assert rec.n_evals <= 50


def test_fixed_values_untouched(device, h2_task):
    g = grow(new_genome(2), GrowthPolicy(), device)
    g, _ = train_step(g, h2_task, device, TrainSettings())
    g2 = grow(g, GrowthPolicy(), device)
    g3, _ = train_step(g2, h2_task, device, TrainSettings())
    assert all(g3.values[n] == g.values[n] for n in g.partial)


def test_empty_partial_rejected(device, h2_task):
    with pytest.raises(ValidationError):
        train_step(new_genome(2), h2_task, device, TrainSettings())


def test_constant_observable_stops_after_one_step(device):
    task = VQETask("const", ObservableSum(2, [PauliTerm(0.0, "ZZ")]))
    rec = run_progressive(task, device, GrowthPolicy(max_steps=3), TrainSettings())
    assert len(rec.steps) == 1 and rec.stop_reason == "converged"
    assert rec.final_energy == 0.0


def test_infinite_epsilon_runs_one_step(device, h2_task):
    rec = run_progressive(h2_task, device, GrowthPolicy(), TrainSettings(stop_epsilon=math.inf))
    assert len(rec.steps) == 1


def test_zero_epsilon_runs_every_step(device, h2_task):
    rec = run_progressive(h2_task, device, GrowthPolicy(max_steps=2), TrainSettings(stop_epsilon=0.0))
    assert len(rec.steps) == 2


def test_h2_run(trained_h2):
    assert trained_h2.final_energy <= -1.10
    e = trained_h2.best_energies()
    assert e[-1] <= e[0]
    assert trained_h2.steps[1].start_energy == pytest.approx(e[0], abs=1e-9)
    assert trained_h2.pulse_counts == {"snp": 2, "cr": 1}
    assert trained_h2.duration_dt == 160 + 736


def test_heh_run(heh, device):
    rec = run_progressive(VQETask.from_molecule(heh), device, GrowthPolicy(), TrainSettings(seed=0))
    assert abs(rec.final_energy - o.HEH_FCI) / abs(o.HEH_FCI) <= 0.005


def test_run_is_deterministic_with_shots(device, h2_task):
    s = TrainSettings(estimator=EstimatorConfig("shots", 256), seed=3, max_evals=10)
    a = run_progressive(h2_task, device, GrowthPolicy(), s)
    b = run_progressive(h2_task, device, GrowthPolicy(), s)
    assert a.evaluations() == b.evaluations()


def test_task_too_wide(one_qubit_device, h2_task):
    with pytest.raises(ValidationError):
        run_progressive(h2_task, one_qubit_device)


def test_maxcut_task_reference():
    task = VQETask.from_graph(builtin_graph("prism6"))
    assert task.reference == -o.PRISM_MAXCUT
    assert task.accuracy(-o.PRISM_MAXCUT) == 1.0


# ----------------------------------------------------------------------- pruning


def test_prune_zero_eps_keeps_nonzero_pulses(trained_h2, device):
    g = trained_h2.genome
    p = prune(g, 0.0, device)
    nonzero = [b for b in g.blocks if abs(g.values[b.amp]) > 0]
    assert len([b for b in p.blocks if b.kind != "frame"]) == len(nonzero)


def test_prune_everything_gives_zero_ansatz(trained_h2, device, h2_task):
    p = prune(trained_h2.genome, 1.0, device)
    assert [b.kind for b in p.blocks if b.kind != "frame"] == []
    assert p.duration(device)[0] == 0
    e = estimate(p.bound_schedule(device), device, "effective", h2_task.observable)
    assert e == pytest.approx(o.H2_ZERO_STATE_075, abs=1e-9)


def test_prune_small_pulse_preserves_energy(trained_h2, device, h2_task):
    g = trained_h2.genome
    amps = sorted(abs(g.values[b.amp]) for b in g.blocks)
    eps = amps[0]
    p = prune(g, eps, device)
    assert p.duration(device)[0] < g.duration(device)[0]
    e0 = estimate(g.bound_schedule(device), device, "effective", h2_task.observable)
    e1 = estimate(p.bound_schedule(device), device, "effective", h2_task.observable)
    assert abs(e1 - e0) <= 0.01


def test_prune_keeps_frame_of_detuned_pulse(device, h2_task):
    g = grow(grow(new_genome(2), GrowthPolicy(), device), GrowthPolicy(), device)
    g.values.update({"s1_q0_amp": 0.0, "s1_q0_det": 1.5e6, "s2_cr0_1_amp": 0.2})
    p = prune(g, 0.0, device)
    u0 = estimate(g.bound_schedule(device), device, "effective", h2_task.observable)
    u1 = estimate(p.bound_schedule(device), device, "effective", h2_task.observable)
    assert u1 == pytest.approx(u0, abs=1e-9)
    assert any(b.kind == "frame" for b in p.blocks)


def test_prune_rejects_negative_eps(trained_h2, device):
    with pytest.raises(ValidationError):
        prune(trained_h2.genome, -1.0, device)


# --------------------------------------------------------------------- baselines


def test_two_local_counts(device):
    a = build_gate_baseline("TwoLocal_RyCZ", 2, 2, device)
    assert a.gate_counts() == {"ry": 6, "cz": 2}
    assert len(a.params) == 6


def test_real_amplitude_zero_angles(device, h2_task):
    a = build_gate_baseline("RealAmplitude", 2, 1, device)
    s = a.schedule(device)
    e = estimate(bind(s, np.zeros(len(s.params.names))), device, "effective", h2_task.observable)
    # the lowered CX is calibrated on the effective model up to local Z phases
    assert e == pytest.approx(o.H2_ZERO_STATE_075, abs=0.01)


def test_two_gate_duration(device):
    a = build_gate_baseline("TwoGate", 2, 1, device)
    n, ns = duration_of(a.schedule(device), device)
    assert ns == pytest.approx(o.REFERENCE_NS["two_gate"], abs=0.1)
    assert a.gate_counts() == {"ry": 2, "cx": 1}


def test_train_gate_baseline(device, h2_task):
    a = build_gate_baseline("TwoGate", 2, 1, device)
    rec = train_gate_baseline(a, h2_task, device, TrainSettings(max_evals=100))
    assert rec.final_energy < o.H2_ZERO_STATE_075
    assert rec.steps[0].n_evals <= 100


def test_unknown_baseline(device):
    with pytest.raises(ValidationError):
        build_gate_baseline("Magic", 2, 1, device)
