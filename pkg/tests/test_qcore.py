import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as o
from pulseforge.errors import CapacityError, ValidationError
from pulseforge.qcore import (
    ObservableSum,
    PauliTerm,
    apply_pauli,
    expectation,
    ground_energy,
    kron,
    matexp_hermitian,
    pauli_matrix,
    project_bus_vacuum,
    random_state,
    sample_counts,
    unitarity_residual,
)

letters = st.text(alphabet="IXYZ", min_size=1, max_size=4)


# ---------------------------------------------------------------------------- kron


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (o.I2, o.I2, np.eye(4)),
        (o.X, o.I2, np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]])),
        (o.Z, o.Z, np.diag([1, -1, -1, 1])),
    ],
)
def test_kron_examples(a, b, expected):
    assert np.array_equal(kron(a, b), expected)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_kron_index_rule(ra, ca, rb, cb, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(ra, ca)) + 1j * rng.normal(size=(ra, ca))
    b = rng.normal(size=(rb, cb)) + 1j * rng.normal(size=(rb, cb))
    out = kron(a, b)
    for i in range(ra):
        for j in range(ca):
            for k in range(rb):
                for m in range(cb):
                    assert out[i * rb + k, j * cb + m] == pytest.approx(a[i, j] * b[k, m], abs=1e-14)


def test_kron_capacity_and_empty():
    with pytest.raises(CapacityError):
        kron(np.eye(64), np.eye(64), max_dim=1000)
    with pytest.raises(ValidationError):
        kron(np.zeros((0, 0)), np.eye(2))


# ------------------------------------------------------------------------- matexp


def test_matexp_zero_is_identity():
    assert np.allclose(matexp_hermitian(np.zeros((3, 3)), 7.0), np.eye(3))


def test_matexp_pauli_exponential():
    u = matexp_hermitian((math.pi / 2) * o.X, 1.0)
    assert np.allclose(u, -1j * o.X, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matexp_matches_taylor_oracle(seed):
    h = o.random_hermitian(4, np.random.default_rng(seed))
    assert np.allclose(matexp_hermitian(h, 0.5), o.taylor_expm(-0.5j * h, terms=20), atol=1e-8)


def test_matexp_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        matexp_hermitian(np.array([[0, 1], [0, 0]]), 1.0)


@settings(max_examples=50)
@given(st.integers(1, 6), st.floats(-50, 50), st.integers(0, 2**31))
def test_matexp_unitarity(dim, t, seed):
    h = o.random_hermitian(dim, np.random.default_rng(seed))
    assert unitarity_residual(matexp_hermitian(h, t)) <= 1e-9


# ------------------------------------------------------------------------ paulis


@pytest.mark.parametrize(
    "coef, s, expected",
    [(1.0, "II", np.eye(4)), (0.5, "ZX", 0.5 * np.kron(o.Z, o.X)), (-1.0, "Y", -o.Y)],
)
def test_pauli_matrix_examples(coef, s, expected):
    assert np.allclose(pauli_matrix(PauliTerm(coef, s)), expected)


@given(letters, st.floats(-3, 3))
def test_pauli_matrix_matches_oracle(s, c):
    assert np.allclose(pauli_matrix(PauliTerm(c, s)), o.pauli_string(s, c))


@settings(max_examples=50)
@given(letters, st.integers(0, 2**31))
def test_apply_pauli_matches_dense(s, seed):
    psi = random_state(2 ** len(s), np.random.default_rng(seed))
    assert np.allclose(apply_pauli(s, psi), o.pauli_string(s) @ psi)


@pytest.mark.parametrize("bad", ["", "XA", "q"])
def test_pauli_term_rejects_bad_letters(bad):
    with pytest.raises(ValidationError):
        PauliTerm(1.0, bad)


def test_pauli_term_rejects_non_finite():
    with pytest.raises(ValidationError):
        PauliTerm(float("nan"), "Z")


def test_observable_merges_duplicates_and_checks_width():
    obs = ObservableSum(1, [PauliTerm(0.3, "Z"), PauliTerm(0.2, "Z")])
    assert obs.as_dict() == pytest.approx({"Z": 0.5})
    with pytest.raises(ValidationError):
        ObservableSum(2, [PauliTerm(1.0, "Z")])


# ---------------------------------------------------------------------- expectation


@pytest.mark.parametrize(
    "state, s, expected",
    [
        (np.array([1, 0]), "Z", 1.0),
        (np.array([1, 1]) / math.sqrt(2), "X", 1.0),
        (np.array([0, 1]), "Z", -1.0),
    ],
)
def test_expectation_examples(state, s, expected):
    assert expectation(state, ObservableSum(1, [PauliTerm(1.0, s)])) == pytest.approx(expected)


def test_expectation_h2_ground_state(h2):
    e0, psi = ground_energy(h2.hamiltonian)
    assert expectation(psi, h2.hamiltonian) == pytest.approx(o.H2_FCI_075, abs=1e-3)
    assert e0 == pytest.approx(o.H2_GROUND_075, abs=1e-9)


def test_expectation_dimension_mismatch():
    with pytest.raises(ValidationError):
        expectation(np.ones(8) / math.sqrt(8), ObservableSum(2, [PauliTerm(1.0, "ZZ")]))


@settings(max_examples=40)
@given(
    st.dictionaries(st.text(alphabet="IXYZ", min_size=2, max_size=2), st.floats(-2, 2), min_size=1),
    st.dictionaries(st.text(alphabet="IXYZ", min_size=2, max_size=2), st.floats(-2, 2), min_size=1),
    st.floats(-3, 3),
    st.floats(-3, 3),
    st.integers(0, 2**31),
)
def test_expectation_linearity(a, b, alpha, beta, seed):
    psi = random_state(4, np.random.default_rng(seed))
    A, B = ObservableSum.from_dict(a), ObservableSum.from_dict(b)
    lhs = expectation(psi, alpha * A + beta * B)
    rhs = alpha * expectation(psi, A) + beta * expectation(psi, B)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_expectation_matches_dense_oracle(heh):
    psi = random_state(4, np.random.default_rng(3))
    dense = o.ham_matrix(heh.hamiltonian.as_dict())
    assert expectation(psi, heh.hamiltonian) == pytest.approx(float(np.vdot(psi, dense @ psi).real), abs=1e-12)


def test_expectation_projects_bus_vacuum():
    qubit = np.array([0, 1], dtype=complex)
    full = np.kron(qubit, np.array([0.6, 0.8, 0.0]))
    psi, leak = project_bus_vacuum(full, 1, 3)
    assert leak == pytest.approx(0.64)
    assert np.allclose(psi, qubit)
    assert expectation(full, ObservableSum(1, [PauliTerm(1.0, "Z")]), bus_cutoff=3) == pytest.approx(-1.0)


# ---------------------------------------------------------------------- ground energy


def test_ground_energy_single_z():
    e, v = ground_energy(ObservableSum(1, [PauliTerm(1.0, "Z")]))
    assert e == pytest.approx(-1.0)
    assert abs(v[1]) == pytest.approx(1.0)


def test_ground_energy_degenerate_zz():
    e, v = ground_energy(ObservableSum(2, [PauliTerm(1.0, "ZZ")]))
    assert e == pytest.approx(-1.0)
    assert abs(v[0]) ** 2 + abs(v[3]) ** 2 == pytest.approx(0.0, abs=1e-12)


def test_ground_energy_heh(heh):
    assert ground_energy(heh.hamiltonian)[0] == pytest.approx(o.HEH_FCI, abs=1e-3)


def test_ground_energy_capacity():
    with pytest.raises(CapacityError):
        ground_energy(ObservableSum(11, [PauliTerm(1.0, "Z" * 11)]))


def test_ground_energy_lower_bounds_random_states(h2):
    e0, _ = ground_energy(h2.hamiltonian)
    rng = np.random.default_rng(11)
    for _ in range(100):
        assert expectation(random_state(4, rng), h2.hamiltonian) >= e0 - 1e-9


# ------------------------------------------------------------------------ sampling


def test_sample_counts_basis_state():
    assert sample_counts(np.array([1, 0, 0, 0]), 1024, seed=1) == {"00": 1024}


def test_sample_counts_plus_state_statistics():
    counts = sample_counts(np.array([1, 1]) / math.sqrt(2), 10**6, seed=5)
    p0 = counts["0"] / 10**6
    assert abs(p0 - 0.5) <= 3 * math.sqrt(0.25 / 10**6)


def test_sample_counts_deterministic_per_seed():
    psi = random_state(8, np.random.default_rng(0))
    assert sample_counts(psi, 500, 42) == sample_counts(psi, 500, 42)


def test_sample_counts_bit_order():
    # qubit 0 is the most significant bit
    psi = np.kron([0, 1], [1, 0]).astype(complex)
    assert sample_counts(psi, 10, 0) == {"10": 10}


def test_sample_counts_unbiased_z():
    psi = random_state(2, np.random.default_rng(9))
    p = np.abs(psi) ** 2
    exact = p[0] - p[1]
    sigma = math.sqrt(1 - exact**2)
    means = []
    for seed in range(100):
        c = sample_counts(psi, 1024, seed)
        means.append((c.get("0", 0) - c.get("1", 0)) / 1024)
    assert abs(np.mean(means) - exact) <= 3 * (sigma / math.sqrt(1024)) / math.sqrt(100)
