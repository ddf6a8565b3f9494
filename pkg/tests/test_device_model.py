import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as o
from pulseforge.device_model import (
    CRCoefficients,
    calibrate_pi_half,
    device_from_dict,
    drive_hamiltonian,
    effective_cr,
    load_device,
    rotating_frame,
    static_hamiltonian,
)
from pulseforge.dynamics import evolve_effective, propagate, propagate_unitary, state_fidelity
from pulseforge.errors import ValidationError
from pulseforge.pulse_ir import Channel, Envelope, Play, PulseSchedule, SetDetuning
from pulseforge.qcore import is_hermitian

BASE = {"n_qubits": 2, "qubit_freq": [5.0e9, 4.9e9], "topology": [[0, 1]]}


# --------------------------------------------------------------------------- loading


def test_shipped_config_defaults(device):
    assert device.dt == pytest.approx(o.DT_NS * 1e-9)
    assert device.snp_duration == o.SNP_DT
    assert device.cr_duration == 736
    assert device.amp_max == 0.4 and device.detuning_max == 2e6


def test_missing_cr_duration_gets_default(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(BASE))
    assert load_device(p).cr_duration == 736


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"topology": [[0, 5]]}, "edge"),
        ({"colour": "blue"}, "unknown"),
        ({"qubit_freq": [5e9]}, "qubit_freq"),
        ({"dt": -1.0}, "dt"),
        ({"cr_rates": {"xx": 1.0}}, "cr_rates"),
        ({"snp_duration": 1.5}, "snp_duration"),
    ],
)
def test_invalid_configs_are_named(patch, message):
    with pytest.raises(ValidationError, match=message):
        device_from_dict({**BASE, **patch})


def test_missing_required_field():
    with pytest.raises(ValidationError, match="n_qubits"):
        device_from_dict({"qubit_freq": [5e9]})


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_device(tmp_path / "nope.json")


def test_default_drive_scale_calibration(device):
    assert calibrate_pi_half(device) == pytest.approx(0.2, rel=1e-12)


# --------------------------------------------------------------------- static terms


def test_static_hamiltonian_hermitian(device):
    assert is_hermitian(static_hamiltonian(device), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(
    st.lists(st.floats(4e9, 6e9), min_size=1, max_size=3),
    st.floats(5e9, 7e9),
    st.floats(0, 1e8),
    st.integers(2, 4),
)
def test_static_hamiltonian_hermitian_random(freqs, bus, g, cutoff):
    cfg = device_from_dict({"n_qubits": len(freqs), "qubit_freq": freqs, "bus_freq": bus,
                            "coupling": [g] * len(freqs), "bus_cutoff": cutoff})
    h = static_hamiltonian(cfg)
    scale = np.max(np.abs(h))
    assert np.max(np.abs(h - h.conj().T)) <= 1e-12 * scale


def test_decoupled_spectrum():
    cfg = device_from_dict({**BASE, "coupling": [0.0, 0.0], "bus_freq": 6.0e9, "bus_cutoff": 3})
    w = np.sort(np.linalg.eigvalsh(static_hamiltonian(cfg)))
    expected = sorted(
        2 * math.pi * (n0 * 5.0e9 + n1 * 4.9e9 + m * 6.0e9)
        for n0 in (0, 1) for n1 in (0, 1) for m in range(3)
    )
    assert np.allclose(w, expected, rtol=1e-12)


def test_single_qubit_without_bus(one_qubit_device):
    h = static_hamiltonian(one_qubit_device)
    assert np.allclose(h, np.diag([0, 2 * math.pi * 5.0e9]))


def test_dressed_gaps_within_dispersive_estimate(device):
    h = static_hamiltonian(device)
    w, v = np.linalg.eigh(h)
    ground = w[0]
    for q, nu in enumerate(device.qubit_freq):
        bare = (1 << (device.n_qubits - 1 - q)) * device.bus_cutoff
        k = int(np.argmax(np.abs(v[bare, :])))
        gap = (w[k] - ground) / (2 * math.pi)
        bound = o.dispersive_bound(nu, device.bus_freq, device.coupling[q])
        assert abs(gap - nu) <= 1.5 * bound


# ------------------------------------------------------------------------- drives


def test_drive_zero_envelope(device):
    assert not np.any(drive_hamiltonian(device, Channel.drive(0), 0.0, 1e-9))


def test_drive_lab_definition(nobus_device):
    t, e = 3.3e-9, 0.17
    h = drive_hamiltonian(nobus_device, Channel.drive(1), e, t)
    omega = 2 * math.pi * nobus_device.qubit_freq[1]
    expected = nobus_device.drive_scale * e * math.cos(omega * t) * o.kron_all(o.I2, o.X)
    assert np.allclose(h, expected)


def _constant_drive(dev, amp, detuning, n):
    ch = Channel.drive(0)
    env = Envelope("gaussian_square", n, 1e-6, amp, width=n - 2)
    return PulseSchedule(dev.n_qubits, (SetDetuning(0, ch, detuning), Play(0, ch, env)))


def test_zero_drive_rotating_frame_identity(one_qubit_device):
    s = _constant_drive(one_qubit_device, 0.0, 0.0, 200)
    assert np.allclose(propagate_unitary(s, one_qubit_device), np.eye(2))


@pytest.mark.parametrize("detuning", [0.0, 5e5, -1.2e6, 2e6])
def test_generalized_rabi(one_qubit_device, detuning):
    dev, amp, n = one_qubit_device, 0.05, 400
    psi = propagate(_constant_drive(dev, amp, detuning, n), dev).final_state
    t = (n - 2) * dev.dt
    expected = o.rabi_p1(dev.drive_scale * amp, 2 * math.pi * detuning, t)
    assert abs(psi[1]) ** 2 == pytest.approx(expected, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 0.4), st.floats(0, 2e6), st.integers(16, 400))
def test_detuning_symmetry_real_envelope(one_qubit_device, amp, detuning, n):
    dev = one_qubit_device

    def p1(d):
        ch = Channel.drive(0)
        env = Envelope("gaussian", n, n / 4, amp)
        s = PulseSchedule(1, (SetDetuning(0, ch, d), Play(0, ch, env)))
        return abs(propagate(s, dev).final_state[1]) ** 2

    assert p1(detuning) == pytest.approx(p1(-detuning), abs=1e-6)


@pytest.mark.parametrize("n", [32, 160])
def test_frame_equivalence_single_pulse(device, n):
    ch = Channel.drive(0)
    env = Envelope("gaussian", n, n / 4, 0.3)
    s = PulseSchedule(2, (Play(0, ch, env),))
    rot = propagate(s, device, model="full", frame="rotating", rwa=False, substeps=16)
    lab = propagate(s, device, model="full", frame="lab", substeps=16)
    lab_rot = rotating_frame(device, rwa=False).to_rotating(lab.final_state, n * device.dt)
    assert state_fidelity(rot.final_state, lab_rot) >= 1 - 1e-4


# ------------------------------------------------------------------- effective CR


def test_effective_cr_zero_amplitude(device):
    c = effective_cr(device, 0.0)
    assert np.all(c.as_array() == 0)
    assert np.array_equal(evolve_effective(c, 1e-7), np.eye(4))


def test_pure_zx_controlled_rotation():
    a, t = 2.0e7, 3.0e-8
    u = evolve_effective(CRCoefficients(a_x=a), t)
    assert np.allclose(u[:2, :2], o.taylor_expm(-1j * a * t * o.X))
    assert np.allclose(u[2:, 2:], o.taylor_expm(1j * a * t * o.X))
    assert np.allclose(u[:2, 2:], 0) and np.allclose(u[2:, :2], 0)


def test_shipped_rates_block_shape(device):
    u = evolve_effective(effective_cr(device, 0.3), 70.4e-9)
    assert np.allclose(u[:2, 2:], 0, atol=1e-12) and np.allclose(u[2:, :2], 0, atol=1e-12)
    assert np.min(np.abs(np.diag(u[:2, :2]))) >= 0.99
    off = abs(u[2, 3])
    assert 0.1 <= off <= 0.99


def test_effective_cr_linear_in_amplitude(device):
    a, b = effective_cr(device, 0.1), effective_cr(device, 0.3)
    assert np.allclose(3 * a.as_array(), b.as_array())


def test_cr_coefficients_reject_non_finite():
    with pytest.raises(ValidationError):
        CRCoefficients(a_x=float("inf"))
