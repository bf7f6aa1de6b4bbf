import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iqfm import qfm
from iqfm.errors import ConfigError, DimensionError
from iqfm.qfm import ModelConfig
from iqfm.statevector import StateVector, random_state, run_circuit, zero_state

import oracles


@pytest.fixture(scope="module")
def model():
    return qfm.init_model(ModelConfig(L=5), np.random.default_rng(0))


@pytest.fixture(scope="module")
def cmodel():
    return qfm.init_model(ModelConfig(mode="classical_modular", M=32, L=3),
                          np.random.default_rng(1))


# ---------------------------------------------------------------------- init

def test_dimensions(model, cmodel):
    assert model.d_g == model.d_h == 32
    assert all(w.shape == (32, 32) for w in model.weights)
    m16 = qfm.init_model(ModelConfig(mode="classical_modular", M=16, L=1), np.random.default_rng(0))
    assert m16.n_modules == 1 and m16.d_g == 16 and m16.W0.shape == (16, 784)
    m64 = qfm.init_model(ModelConfig(mode="classical_modular", M=64, L=1), np.random.default_rng(0))
    assert m64.n_modules == 4 and m64.d_g == 64


def test_config_errors():
    with pytest.raises(ConfigError):
        qfm.init_model(ModelConfig(mode="classical_modular", M=20), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        qfm.init_model(ModelConfig(d=3), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        qfm.init_model(ModelConfig(mode="other"), np.random.default_rng(0))


def test_same_seed_same_angles():
    a = qfm.init_model(ModelConfig(), np.random.default_rng(5))
    b = qfm.init_model(ModelConfig(), np.random.default_rng(5))
    assert qfm.angle_checksum(a) == qfm.angle_checksum(b)
    for x, y in zip(a.angles, b.angles):
        assert all(np.array_equal(x[k], y[k]) for k in x)
    assert all(np.all((0 <= v) & (v < 2 * np.pi)) for a_ in a.angles for v in a_.values())


def test_glorot_bounds(model):
    lim = np.sqrt(6 / 64)
    assert all(np.max(np.abs(w)) <= lim for w in model.weights)


# ------------------------------------------------------------------ circuits

def test_preprocessing_gate_counts(model):
    c1 = qfm.build_preprocessing(1, model)
    c3 = qfm.build_preprocessing(3, model)
    assert len(c1.gates) == 104
    assert len(c3.gates) == 72
    kinds3 = [g.kind for g in c3.gates]
    assert kinds3[:8] == ["H"] * 8
    # no A-block (the layer-1-only beta RX rows): RX count is 2 rows per B-block
    assert kinds3.count("RX") == 2 * 2 * 8 and kinds3.count("RZZ") == 2 * 8
    assert [g.kind for g in c1.gates].count("RX") == (2 + 4) * 8


def test_preprocessing_is_byte_identical_and_uses_frozen_angles(model):
    a = qfm.build_preprocessing(1, model).program()
    b = qfm.build_preprocessing(1, model).program()
    assert a.angles.tobytes() == b.angles.tobytes()
    ang = model.angles[0]
    frozen = np.concatenate([ang[k].ravel() for k in ("alpha", "beta", "gamma", "eps", "zeta", "eta")])
    used = -0.5 * a.angles[a.codes != 0]
    assert np.allclose(np.sort(used), np.sort(frozen))


def test_preprocessing_bad_layer(model):
    with pytest.raises(ConfigError):
        qfm.build_preprocessing(0, model)
    with pytest.raises(ConfigError):
        qfm.build_preprocessing(6, model)


def test_embedding_zero_vector_is_hadamard_power():
    c = qfm.build_embedding(np.zeros(32), 8, 4)
    psi = random_state(8, np.random.default_rng(0))
    out = run_circuit(psi, c).amplitudes
    # H^4 = I on every qubit
    assert np.allclose(out, psi.amplitudes, atol=1e-12)
    assert all(g.angle == 0 for g in c.gates)


def test_embedding_sizes_and_errors():
    assert len(qfm.build_embedding(np.ones(16), 4, 4).gates) == 4 * 12
    with pytest.raises(DimensionError):
        qfm.build_embedding(np.ones(31), 8, 4)


def test_embedding_matches_dense_unitary():
    rng = np.random.default_rng(2)
    h = rng.uniform(-3, 3, 8)
    n, d = 4, 2
    U = np.eye(16, dtype=complex)
    for m in range(d):
        hb = h[m * n:(m + 1) * n]
        U = oracles.kron_all([oracles.H] * n) @ U
        for j in range(n):
            U = oracles.gate_matrix("RZ", (j,), hb[j], n) @ U
        for j in range(n):
            U = oracles.gate_matrix("RZZ", (j, (j + 1) % n), hb[j] * hb[(j + 1) % n], n) @ U
    psi = random_state(4, rng)
    out = run_circuit(psi, qfm.build_embedding(h, n, d)).amplitudes
    assert np.allclose(out, U @ psi.amplitudes, atol=1e-12)


# ------------------------------------------------------------------ features

def test_feature_examples():
    theta = np.full((3, 8), np.pi)
    g = qfm.extract_features(zero_state(8), {"theta": theta}, None, None)
    assert np.allclose(g[:8], 1.0) and np.allclose(g[8:], -1.0)


def test_features_match_dense_observables():
    rng = np.random.default_rng(3)
    psi = random_state(4, rng)
    theta = rng.uniform(0, 2 * np.pi, (2, 4))
    g = qfm.extract_features(psi, {"theta": theta}, None, None)
    ref = []
    for k in range(3):
        R = np.eye(16) if k == 0 else oracles.kron_all([oracles.rot(oracles.X, t) for t in theta[k - 1]])
        v = R @ psi.amplitudes
        ref += [oracles.expectation(v, oracles.embed({q: oracles.Z}, 4)) for q in range(4)]
    assert np.allclose(g, ref, atol=1e-12)


def test_finite_shot_features_within_hoeffding_band():
    # Hoeffding with N = 1e4, eps = 0.05: 2 exp(-12.5) = 7e-6 per component
    rng = np.random.default_rng(4)
    psi = random_state(8, rng)
    theta = rng.uniform(0, 2 * np.pi, (3, 8))
    exact = qfm.extract_features(psi, theta, None, None)
    ok = [np.max(np.abs(qfm.extract_features(psi, theta, 10_000, rng) - exact)) <= 0.05
          for _ in range(100)]
    assert np.mean(ok) >= 0.99


def test_augment_examples():
    assert np.array_equal(qfm.augment(np.zeros((4, 4)), np.ones(4)), np.zeros(4))
    assert np.array_equal(qfm.augment(np.ones((4, 4)), np.zeros(4)), np.zeros(4))
    h = qfm.augment(2 * np.eye(5), np.eye(5)[0])
    assert h[0] == pytest.approx(np.pi * np.tanh(1.0)) and h[0] == pytest.approx(2.3926, abs=1e-4)
    assert np.all(h[1:] == 0)
    with pytest.raises(DimensionError):
        qfm.augment(np.ones((3, 4)), np.ones(5))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_augment_bounded_property(seed):
    rng = np.random.default_rng(seed)
    g = rng.uniform(-1, 1, 32)
    # Glorot-range weights keep |Wg/2| <= 7, where tanh is still below 1 in floats
    h = qfm.augment(qfm.glorot(rng, 32, 32), g)
    assert np.all(np.abs(h) < np.pi)
    # arbitrary weights can saturate tanh to exactly 1 in floating point
    assert np.all(np.abs(qfm.augment(rng.normal(0, 50, (32, 32)), g)) <= np.pi)


# ------------------------------------------------------------------- forward

def test_forward_quantum_shapes_and_determinism(model):
    psi = random_state(8, np.random.default_rng(5))
    r1 = qfm.forward_quantum(model, psi, 0.0, None, None)
    r2 = qfm.forward_quantum(model, psi, 0.0, None, None)
    assert len(r1.layers) == 5 and len(r1) == 160
    assert np.array_equal(r1.concat(), r2.concat())
    assert np.all(np.abs(r1.concat()) < np.pi)


def test_forward_rejects_wrong_size(model):
    with pytest.raises(DimensionError):
        qfm.forward_quantum(model, zero_state(4), 0.0, None, None)


def test_single_layer_never_builds_embedding(monkeypatch):
    m = qfm.init_model(ModelConfig(L=1), np.random.default_rng(0))

    def boom(*a, **k):
        raise AssertionError("embedding used at layer 1")

    monkeypatch.setattr(qfm, "embedding_angles", boom)
    monkeypatch.setattr(qfm, "_embedding_codes", boom)
    r = qfm.forward_quantum(m, zero_state(8), 0.0, None, None)
    assert len(r.layers) == 1


def test_layer_one_matches_dense_pipeline(model):
    psi = random_state(8, np.random.default_rng(6))
    hs, gs = qfm.forward_quantum_batch(model, psi.amplitudes[None, :], n_layers=2,
                                       return_features=True)
    v = oracles.circuit_unitary(qfm.build_preprocessing(1, model)) @ psi.amplitudes
    g1 = qfm.extract_features(StateVector(8, v), model.angles[0], None, None)
    assert np.allclose(gs[0][0], g1, atol=1e-12)
    v2 = oracles.circuit_unitary(qfm.build_preprocessing(2, model)) @ (
        oracles.circuit_unitary(qfm.build_embedding(hs[0][0], 8, 4)) @ psi.amplitudes)
    g2 = qfm.extract_features(StateVector(8, v2), model.angles[1], None, None)
    assert np.allclose(gs[1][0], g2, atol=1e-11)


def test_layer_independence(model):
    psi = random_state(8, np.random.default_rng(7)).amplitudes[None, :]
    base = qfm.forward_quantum_batch(model, psi)
    m2 = model.copy()
    m2.weights[2] = m2.weights[2] + 0.3
    out = qfm.forward_quantum_batch(m2, psi)
    for l in range(5):
        same = np.array_equal(base[l], out[l])
        assert same if l < 2 else not same


def test_shot_mode_converges_to_exact(model):
    rng = np.random.default_rng(8)
    psi = random_state(8, rng).amplitudes[None, :]
    _, g_exact = qfm.forward_quantum_batch(model, psi, n_layers=1, return_features=True)
    _, g_shot = qfm.forward_quantum_batch(model, psi, shot_budget=10 ** 6, rng=rng, n_layers=1,
                                          return_features=True)
    assert np.max(np.abs(g_shot[0] - g_exact[0])) <= 0.02


def test_noise_changes_features_per_call(model):
    psi = random_state(8, np.random.default_rng(9)).amplitudes[None, :]
    rng = np.random.default_rng(0)
    a = qfm.forward_quantum_batch(model, psi, noise_p=0.2, rng=rng)
    b = qfm.forward_quantum_batch(model, psi, noise_p=0.2, rng=rng)
    assert not np.array_equal(a[0], b[0])


def test_forward_does_not_touch_angles(model):
    before = qfm.angle_checksum(model)
    qfm.forward_quantum_batch(model, random_state(8, np.random.default_rng(1)).amplitudes[None, :])
    assert qfm.angle_checksum(model) == before


# ----------------------------------------------------------------- classical

def test_classical_forward_sizes():
    m = qfm.init_model(ModelConfig(mode="classical_modular", M=16, L=4), np.random.default_rng(0))
    r = qfm.forward_classical(m, np.random.default_rng(1).random(784), None, None)
    assert len(r) == 64


def test_classical_zero_image_gives_identical_features(cmodel):
    hs, gs = qfm.forward_classical_batch(cmodel, np.zeros((3, 784)), n_layers=1,
                                         return_features=True)
    assert np.all(gs[0] == gs[0][0])
    # (H^4)^4 = I, so the state is |0000> and basis 0 reads +1 everywhere
    assert np.allclose(gs[0][0, :4], 1.0) and np.allclose(gs[0][0, 16:20], 1.0)


def test_classical_errors(cmodel, model):
    with pytest.raises(DimensionError):
        qfm.forward_classical(cmodel, np.zeros(100), None, None)
    with pytest.raises(ConfigError):
        qfm.forward_classical_batch(model, np.zeros((1, 784)))


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path, model, cmodel):
    for m in (model, cmodel):
        p = tmp_path / f"{m.mode}.iqfm"
        qfm.save_model(m, p)
        back = qfm.load_model(p)
        assert qfm.angle_checksum(back) == qfm.angle_checksum(m)
        assert all(np.array_equal(a, b) for a, b in zip(back.weights, m.weights))
        assert (back.W0 is None) == (m.W0 is None)
        assert (back.d_g, back.d_h, back.L, back.M) == (m.d_g, m.d_h, m.L, m.M)
