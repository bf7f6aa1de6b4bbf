import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iqfm import statevector as sv
from iqfm.errors import ArgumentError, DimensionError, GateIndexError, SizeError

import oracles

KINDS = list(sv.GATE_ARITY)


def random_circuit(rng, n, m):
    c = sv.Circuit(n)
    kinds = [k for k in KINDS if sv.GATE_ARITY[k] <= n]
    for _ in range(m):
        k = kinds[rng.integers(len(kinds))]
        qs = rng.choice(n, size=sv.GATE_ARITY[k], replace=False)
        c.add(k, *qs, angle=rng.uniform(-2 * np.pi, 2 * np.pi) if k in sv.ROTATIONS else 0.0)
    return c


# ------------------------------------------------------------ basis states

def test_init_basis_state_examples():
    assert np.array_equal(sv.init_basis_state(1, "0").amplitudes, [1, 0])
    s = sv.init_basis_state(2, "10")
    assert s.amplitudes[2] == 1 and np.count_nonzero(s.amplitudes) == 1
    z = sv.init_basis_state(8, "00000000")
    assert z.amplitudes.shape == (256,) and z.amplitudes[0] == 1


@pytest.mark.parametrize("n", [0, 13, -1])
def test_init_basis_state_rejects_sizes(n):
    with pytest.raises(SizeError):
        sv.init_basis_state(n, "0" * max(n, 0))


def test_statevector_checks_length_and_is_read_only():
    with pytest.raises(DimensionError):
        sv.StateVector(2, np.ones(3))
    s = sv.zero_state(2)
    with pytest.raises(ValueError):
        s.amplitudes[0] = 0


# ------------------------------------------------------------------- gates

def test_hadamard_and_rx_examples():
    s = sv.apply_gate(sv.zero_state(1), sv.Gate("H", (0,)))
    assert np.allclose(s.amplitudes, [2 ** -0.5, 2 ** -0.5], atol=1e-15)
    s = sv.apply_gate(sv.zero_state(1), sv.Gate("RX", (0,), np.pi))
    assert sv.expect_pauli(s, "Z") == pytest.approx(-1.0, abs=1e-15)
    assert np.allclose(s.amplitudes, [0, -1j], atol=1e-15)


def test_rzz_keeps_basis_probabilities():
    for bits in ("00", "01", "10", "11"):
        s = sv.init_basis_state(2, bits)
        out = sv.apply_gate(s, sv.Gate("RZZ", (0, 1), 1.234))
        assert np.allclose(out.probabilities(), s.probabilities(), atol=1e-15)


def test_gate_validation():
    with pytest.raises(ArgumentError):
        sv.Gate("CZ", (1, 1))
    with pytest.raises(ArgumentError):
        sv.Gate("RX", (0, 1))
    with pytest.raises(ArgumentError):
        sv.Gate("T", (0,))
    with pytest.raises(GateIndexError):
        sv.apply_gate(sv.zero_state(2), sv.Gate("H", (2,)))
    with pytest.raises(DimensionError):
        sv.run_circuit(sv.zero_state(2), sv.Circuit(3))


@pytest.mark.parametrize("kind", KINDS)
def test_each_gate_matches_dense_matrix(kind):
    rng = np.random.default_rng(hash(kind) % 2 ** 32)
    n = 4
    for _ in range(5):
        qs = tuple(int(q) for q in rng.choice(n, size=sv.GATE_ARITY[kind], replace=False))
        angle = rng.uniform(-7, 7)
        psi = sv.random_state(n, rng)
        out = sv.apply_gate(psi, sv.Gate(kind, qs, angle))
        ref = oracles.gate_matrix(kind, qs, angle if kind in sv.ROTATIONS else 0.0, n) @ psi.amplitudes
        assert np.max(np.abs(out.amplitudes - ref)) <= 1e-12


def test_random_circuit_matches_dense_unitary():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3, 4):
        c = random_circuit(rng, n, 40)
        psi = sv.random_state(n, rng)
        ref = oracles.circuit_unitary(c) @ psi.amplitudes
        assert np.max(np.abs(sv.run_circuit(psi, c).amplitudes - ref)) <= 1e-12


def test_run_circuit_identities():
    psi = sv.random_state(3, np.random.default_rng(0))
    assert np.array_equal(sv.run_circuit(psi, sv.Circuit(3)).amplitudes, psi.amplitudes)
    out = sv.run_circuit(sv.zero_state(1), sv.Circuit(1).add("H", 0).add("H", 0))
    assert np.allclose(out.amplitudes, [1, 0], atol=1e-12)


def test_run_circuit_does_not_mutate_input():
    psi = sv.random_state(3, np.random.default_rng(1))
    before = psi.copy_amplitudes()
    sv.run_circuit(psi, sv.Circuit(3).add("H", 0).add("CNOT", 0, 2))
    assert np.array_equal(psi.amplitudes, before)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_gate_algebra(seed, a, b):
    rng = np.random.default_rng(seed)
    psi = sv.random_state(3, rng)

    def run(c):
        return sv.run_circuit(psi, c).amplitudes

    assert np.allclose(run(sv.Circuit(3).add("H", 1).add("H", 1)), psi.amplitudes, atol=1e-12)
    assert np.allclose(run(sv.Circuit(3).add("CNOT", 0, 2).add("CNOT", 0, 2)), psi.amplitudes,
                       atol=1e-12)
    assert np.allclose(run(sv.Circuit(3).add("CZ", 0, 2)), run(sv.Circuit(3).add("CZ", 2, 0)),
                       atol=1e-12)
    assert np.allclose(run(sv.Circuit(3).add("RX", 1, angle=a).add("RX", 1, angle=b)),
                       run(sv.Circuit(3).add("RX", 1, angle=a + b)), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 8))
def test_norm_preserved_property(seed, n):
    rng = np.random.default_rng(seed)
    out = sv.run_circuit(sv.random_state(n, rng), random_circuit(rng, n, 100))
    assert abs(out.norm() ** 2 - 1.0) <= 1e-10


# ------------------------------------------------------------- observables

def test_expect_pauli_examples():
    assert sv.expect_pauli(sv.zero_state(3), "ZII") == 1.0
    plus9 = sv.run_circuit(sv.zero_state(9), sv.Circuit(9).extend(
        _h_row(9)))
    assert sv.expect_pauli(plus9, "IIIIXIIII") == pytest.approx(1.0, abs=1e-12)
    bell = sv.StateVector(2, np.array([1, 0, 0, 1]) / np.sqrt(2))
    assert sv.expect_pauli(bell, "ZZ") == pytest.approx(1.0, abs=1e-15)
    assert sv.expect_pauli(bell, "ZI") == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DimensionError):
        sv.expect_pauli(bell, "Z")


def _h_row(n):
    c = sv.Circuit(n)
    for q in range(n):
        c.add("H", q)
    return c


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 4), data=st.data())
def test_expect_pauli_matches_dense_observable(seed, n, data):
    word = data.draw(st.text(alphabet="IXYZ", min_size=n, max_size=n))
    psi = sv.random_state(n, np.random.default_rng(seed))
    ref = oracles.expectation(psi.amplitudes, oracles.pauli_matrix(word))
    assert abs(sv.expect_pauli(psi, word) - ref) <= 1e-12


# ---------------------------------------------------------------- sampling

def test_sampling_examples():
    rng = np.random.default_rng(0)
    c = sv.sample_bitstrings(sv.zero_state(1), 500, rng)
    assert c.counts == {"0": 500} and c.shots == 500
    plus = sv.run_circuit(sv.zero_state(1), _h_row(1))
    c = sv.sample_bitstrings(plus, 10 ** 6, rng)
    # binomial sd is 5e-4; 0.005 is ten standard deviations
    assert abs(c.counts["0"] / 1e6 - 0.5) <= 0.005
    a = sv.sample_bitstrings(plus, 100, np.random.default_rng(9))
    b = sv.sample_bitstrings(plus, 100, np.random.default_rng(9))
    assert a == b
    with pytest.raises(ArgumentError):
        sv.sample_bitstrings(plus, 0, rng)


def test_estimate_z_examples():
    assert np.allclose(sv.estimate_z_expectations({"00": 7}, 2), [1, 1])
    assert np.allclose(sv.estimate_z_expectations({"0": 5, "1": 5}, 1), [0])
    with pytest.raises(ArgumentError):
        sv.estimate_z_expectations({}, 1)
    with pytest.raises(DimensionError):
        sv.estimate_z_expectations({"0": 1}, 2)


def test_z_estimate_hoeffding():
    # Hoeffding: P(|est| > 0.05) <= 2 exp(-N 0.05^2 / 2) = 7.5e-6 for N = 1e4
    rng = np.random.default_rng(4)
    plus = sv.run_circuit(sv.zero_state(1), _h_row(1))
    est = [sv.estimate_z_expectations(sv.sample_bitstrings(plus, 10 ** 4, rng), 1)[0]
           for _ in range(200)]
    assert np.mean(np.abs(est) <= 0.05) >= 0.99


def test_sampling_consistency_five_over_root_n():
    rng = np.random.default_rng(5)
    psi = sv.random_state(4, rng)
    exact = sv.exact_z_expectations(psi)
    for shots in (100, 10_000):
        ok = [np.all(np.abs(sv.estimate_z_expectations(sv.sample_bitstrings(psi, shots, rng), 4)
                            - exact) <= 5 / np.sqrt(shots)) for _ in range(100)]
        assert np.mean(ok) >= 0.99


def test_exact_z_matches_pauli():
    psi = sv.random_state(5, np.random.default_rng(6))
    z = sv.exact_z_expectations(psi)
    for q in range(5):
        word = "".join("Z" if k == q else "I" for k in range(5))
        assert z[q] == pytest.approx(sv.expect_pauli(psi, word), abs=1e-12)


# ------------------------------------------------------------------- noise

def test_noise_examples():
    rng = np.random.default_rng(0)
    psi = sv.random_state(3, rng)
    assert np.array_equal(sv.apply_rx_noise(psi, 0.0, rng).amplitudes, psi.amplitudes)
    assert abs(sv.apply_rx_noise(sv.zero_state(8), 0.5, rng).norm() - 1) <= 1e-12
    with pytest.raises(ArgumentError):
        sv.apply_rx_noise(psi, 1.5, rng)
    with pytest.raises(ArgumentError):
        sv.apply_rx_noise(psi, -0.1, rng)


def test_full_noise_averages_z_to_zero():
    rng = np.random.default_rng(1)
    z = [sv.expect_pauli(sv.apply_rx_noise(sv.zero_state(1), 1.0, rng), "Z") for _ in range(10 ** 4)]
    # sd of cos(u) is 1/sqrt(2); mean over 1e4 has sd 0.007
    assert abs(np.mean(z)) <= 0.02


def test_noise_is_seed_deterministic_and_fresh():
    psi = sv.random_state(3, np.random.default_rng(2))
    a = sv.apply_rx_noise(psi, 0.3, np.random.default_rng(5)).amplitudes
    b = sv.apply_rx_noise(psi, 0.3, np.random.default_rng(5)).amplitudes
    assert np.array_equal(a, b)
    rng = np.random.default_rng(5)
    assert not np.array_equal(sv.apply_rx_noise(psi, 0.3, rng).amplitudes,
                              sv.apply_rx_noise(psi, 0.3, rng).amplitudes)
