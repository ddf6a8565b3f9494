import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as o
from pulseforge.cli import verification_schedule
from pulseforge.device_model import CRCoefficients, effective_cr, rotating_frame
from pulseforge.dynamics import (
    evolve_effective,
    fidelity,
    propagate,
    propagate_unitary,
    qubit_block,
    state_fidelity,
)
from pulseforge.errors import BindingError, ValidationError
from pulseforge.pulse_ir import (
    Channel,
    Envelope,
    Play,
    PulseSchedule,
    bind,
    cr,
    cr_envelope,
    sequence,
    snp,
)
from pulseforge.qcore import unitarity_residual


def _random_schedule(device, rng, n_blocks=3, detuned=True):
    span = 2e6 if detuned else 0.0
    blocks = []
    for _ in range(n_blocks):
        if rng.random() < 0.5:
            q = int(rng.integers(device.n_qubits))
            blocks.append(snp(q, float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-span, span)), device,
                              phase_param=float(rng.uniform(-math.pi, math.pi)), duration=32))
        else:
            blocks.append(cr(0, 1, float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-span, span)), 288,
                             device, phase_param=float(rng.uniform(-math.pi, math.pi))))
    return sequence(blocks, device.n_qubits)


# ---------------------------------------------------------------------- basics


def test_empty_schedule_returns_initial(device):
    psi0 = np.array([0.6, 0, 0.8j, 0])
    res = propagate(PulseSchedule(2, ()), device, initial=psi0)
    assert np.allclose(res.final_state, psi0)
    assert res.wall_samples == 0 and res.leakage == 0.0


def test_pi_pulse_excites(device):
    s = sequence([snp(0, 0.2, 0.0, device), snp(0, 0.2, 0.0, device)])
    p = np.abs(propagate(s, device).final_state) ** 2
    assert p[2] >= 0.999


def test_zero_amplitude_is_identity(device):
    s = sequence([snp(0, 0.0, 0.0, device), cr(0, 1, 0.0, 0.0, 736, device), snp(1, 0.0, 0.0, device)])
    assert np.allclose(propagate_unitary(s, device), np.eye(4), atol=1e-12)


def test_snp_pi_half_fidelity(one_qubit_device):
    u = propagate_unitary(snp(0, 0.2, 0.0, one_qubit_device), one_qubit_device)
    assert fidelity(u, o.rx(math.pi / 2)) >= 0.999


def test_verification_sequence_returns_to_zero(device):
    psi = propagate(verification_schedule(device, 0.0), device).final_state
    assert abs(psi[0]) ** 2 >= 0.99


def test_result_qubit_state_projects_bus(device):
    res = propagate(snp(0, 0.2, 0.0, device), device, model="full")
    assert res.final_state.shape == (4 * device.bus_cutoff,)
    assert res.qubit_state().shape == (4,)
    assert 0.0 <= res.leakage < 1e-3


# ------------------------------------------------------------------ effective CR


def test_pure_zx_cr_matches_closed_form(device):
    dev = device.pure_zx()
    amp = 0.25
    u = propagate_unitary(cr(0, 1, amp, 0.0, 736, dev), dev)
    area = float(np.sum(cr_envelope(dev, 1.0, 736).samples().real)) * dev.dt
    expected = evolve_effective(effective_cr(dev, amp), area)
    assert fidelity(u, expected) >= 1 - 1e-10


def test_target_only_drive_matches_closed_form(device):
    dev = device.with_rates(zx=0.0, zy=0.0, zz=0.0, iy=0.0, iz=0.0)
    amp = 0.3
    u = propagate_unitary(cr(0, 1, amp, 0.0, 736, dev), dev)
    area = float(np.sum(cr_envelope(dev, 1.0, 736).samples().real)) * dev.dt
    angle = amp * dev.rates["ix"] * area
    expected = o.kron_all(o.I2, o.taylor_expm(-1j * angle * o.X))
    assert fidelity(u, expected) >= 1 - 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_evolve_effective_matches_taylor(seed):
    rng = np.random.default_rng(seed)
    c = CRCoefficients(*rng.uniform(-3e7, 3e7, size=6))
    t = 1.3e-7
    h = (c.a_x * o.pauli_string("ZX") + c.a_y * o.pauli_string("ZY") + c.a_z * o.pauli_string("ZZ")
         + c.b_x * o.pauli_string("IX") + c.b_y * o.pauli_string("IY") + c.b_z * o.pauli_string("IZ"))
    assert np.allclose(evolve_effective(c, t), o.taylor_expm(-1j * t * h), atol=1e-9)


# --------------------------------------------------------------------- fidelity


@pytest.mark.parametrize(
    "u, v, expected",
    [
        (np.eye(2), np.eye(2), 1.0),
        (np.eye(2), o.X, 1 / 3),
        (o.H, np.exp(0.7j) * o.H, 1.0),
        (o.CNOT, o.CNOT, 1.0),
    ],
)
def test_fidelity_examples(u, v, expected):
    assert fidelity(u, v) == pytest.approx(expected)


def test_fidelity_shape_mismatch():
    with pytest.raises(ValidationError):
        fidelity(np.eye(2), np.eye(4))


# ------------------------------------------------------------------- invariants


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_unitarity_and_norm(device, seed):
    s = _random_schedule(device, np.random.default_rng(seed))
    u = propagate_unitary(s, device)
    assert unitarity_residual(u) <= 1e-9
    psi = propagate(s, device).final_state
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_composition(device, seed):
    # detuned frames accumulate phase with absolute time, so only resonant blocks compose
    rng = np.random.default_rng(seed)
    a = _random_schedule(device, rng, 2, detuned=False)
    b = _random_schedule(device, rng, 2, detuned=False)
    ua, ub = propagate_unitary(a, device), propagate_unitary(b, device)
    uab = propagate_unitary(sequence([a, b], 2), device)
    assert np.allclose(uab, ub @ ua, atol=1e-9)


def test_full_model_unitary_on_vacuum_block(device):
    s = _random_schedule(device, np.random.default_rng(3))
    u = propagate_unitary(s, device, model="full")
    assert unitarity_residual(u) <= 1e-8
    assert qubit_block(u, device).shape == (4, 4)


@pytest.mark.parametrize("seed", range(3))
def test_frame_equivalence(device, seed):
    s = _random_schedule(device, np.random.default_rng(100 + seed), 2)
    rot = propagate(s, device, model="full", frame="rotating", rwa=False, substeps=16)
    lab = propagate(s, device, model="full", frame="lab", substeps=16)
    lab_rot = rotating_frame(device, rwa=False).to_rotating(lab.final_state, s.duration * device.dt)
    assert state_fidelity(rot.final_state, lab_rot) >= 1 - 1e-4


def test_step_halving_converges(device):
    s = _random_schedule(device, np.random.default_rng(7), 2)
    a = propagate(s, device, model="full", rwa=False, substeps=8).final_state
    b = propagate(s, device, model="full", rwa=False, substeps=16).final_state
    c = propagate(s, device, model="full", rwa=False, substeps=32).final_state
    assert np.linalg.norm(c - b) <= np.linalg.norm(b - a) + 1e-10
    assert state_fidelity(b, c) >= 1 - 1e-6


# ------------------------------------------------------------------------ errors


def test_unbound_schedule_rejected(device):
    with pytest.raises(BindingError):
        propagate(snp(0, "a", "f", device), device)


@pytest.mark.parametrize("kwargs", [{"model": "exact"}, {"frame": "moving"}, {"frame": "lab"}])
def test_bad_model_or_frame(device, kwargs):
    with pytest.raises(ValidationError):
        propagate(snp(0, 0.1, 0.0, device), device, **kwargs)


def test_wrong_width_schedule(device):
    s = PulseSchedule(4, (Play(0, Channel.drive(3), Envelope("gaussian", 16, 4, 0.1)),))
    with pytest.raises(ValidationError):
        propagate(s, device)


def test_bound_parametric_equals_literal(device):
    s = bind(snp(0, "a", "f", device), {"a": 0.13, "f": 1e6})
    t = snp(0, 0.13, 1e6, device)
    assert np.allclose(propagate_unitary(s, device), propagate_unitary(t, device))
