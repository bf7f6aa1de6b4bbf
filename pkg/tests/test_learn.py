import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iqfm import learn, qfm
from iqfm.errors import ArgumentError, PairingError, SimilarityError
from iqfm.learn import QFM_ACT, TANH_ACT, ContrastiveTriple, TrainSchedule
from iqfm.qfm import ModelConfig
from iqfm.statevector import random_state


def fd_grad(f, W, h=1e-5):
    G = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        G[idx] = (f(Wp) - f(Wm)) / (2 * h)
    return G


def loss_of(W, ga, gp, gn, tau=8.0, act=QFM_ACT, fixed=None):
    return learn.contrastive_objective(W, ga, gp, gn, tau, act, fixed)[0]


# -------------------------------------------------------------------- cosine

def test_cosine_examples():
    assert learn.cosine_similarity([1, 0], [1, 0]) == 1.0
    assert learn.cosine_similarity([1, 0], [0, 1]) == 0.0
    assert learn.cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / np.sqrt(14 * 77))
    assert learn.cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(0.97463, abs=1e-5)
    with pytest.raises(SimilarityError):
        learn.cosine_similarity([0, 0], [1, 0])


# ---------------------------------------------------------------------- loss

def _triple_with_difference(diff):
    # anchor e0; positive and negative chosen so cs(-) - cs(+) = diff
    cp = -diff / 2
    cn = diff / 2
    a = np.array([1.0, 0.0])
    return ContrastiveTriple(a, np.array([cp, np.sqrt(1 - cp ** 2)]),
                             np.array([cn, np.sqrt(1 - cn ** 2)]))


def test_loss_examples():
    assert learn.contrastive_loss(_triple_with_difference(0.0)) == pytest.approx(np.log(2))
    assert learn.contrastive_loss(_triple_with_difference(0.0)) == pytest.approx(0.693147, abs=1e-6)
    # frozen from log1p(exp(-+0.25)) evaluated independently
    assert learn.contrastive_loss(_triple_with_difference(-2.0)) == pytest.approx(0.5759394198788436,
                                                                                abs=1e-12)
    assert learn.contrastive_loss(_triple_with_difference(2.0)) == pytest.approx(0.8259394198788436,
                                                                               abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), tau=st.floats(0.5, 20))
def test_loss_bounds_property(seed, tau):
    rng = np.random.default_rng(seed)
    t = ContrastiveTriple(*rng.normal(size=(3, 6)))
    c = learn.contrastive_loss(t, tau)
    assert 0 < c <= np.log1p(np.exp(2 / tau)) + 1e-12


def test_loss_monotone_in_difference():
    vals = [learn.contrastive_loss(_triple_with_difference(d)) for d in np.linspace(-2, 2, 21)]
    assert np.all(np.diff(vals) > 0)


# ------------------------------------------------------------------ gradient

@pytest.mark.parametrize("act", [QFM_ACT, TANH_ACT])
def test_gradient_matches_finite_differences(act):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        dh, dg = rng.integers(2, 9, size=2)
        W = rng.normal(0, 0.5, (dh, dg))
        ga, gp, gn = rng.uniform(-1, 1, (3, dg))
        G = learn.contrastive_grad_W(W, ga, gp, gn, 8.0, act)
        F = fd_grad(lambda w: loss_of(w, ga[None], gp[None], gn[None], act=act), W)
        worst = max(worst, np.linalg.norm(G - F) / np.linalg.norm(F))
    assert worst <= 1e-5


def test_gradient_fixed_anchor_matches_finite_differences():
    rng = np.random.default_rng(1)
    W = rng.normal(0, 0.5, (6, 5))
    gp, gn = rng.uniform(-1, 1, (2, 4, 5))
    p = rng.uniform(-1, 1, 6)
    _, G = learn.contrastive_objective(W, None, gp, gn, 8.0, QFM_ACT, p)
    F = fd_grad(lambda w: loss_of(w, None, gp, gn, fixed=p), W)
    assert np.linalg.norm(G - F) / np.linalg.norm(F) <= 1e-5


def test_batch_objective_is_mean_of_singles():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(4, 4))
    ga, gp, gn = rng.uniform(-1, 1, (3, 5, 4))
    loss, grad = learn.contrastive_objective(W, ga, gp, gn, 8.0)
    singles = [learn.contrastive_objective(W, ga[i:i + 1], gp[i:i + 1], gn[i:i + 1], 8.0)
               for i in range(5)]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]))
    assert np.allclose(grad, np.mean([s[1] for s in singles], axis=0))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.1, 10))
def test_symmetric_triple_has_zero_gradient(seed, scale):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(5, 5))
    ga, g = rng.uniform(-1, 1, (2, 5))
    assert np.allclose(learn.contrastive_grad_W(W, ga, g, g), 0.0, atol=1e-15)
    assert np.allclose(learn.contrastive_grad_W(W, scale * ga, scale * g, scale * g), 0.0,
                       atol=1e-15)


def test_zero_representation_raises():
    with pytest.raises(SimilarityError):
        learn.contrastive_grad_W(np.zeros((3, 3)), np.ones(3), np.ones(3), np.ones(3))


# ---------------------------------------------------------------------- Adam

def test_adam_first_step_is_lr_times_sign():
    p = np.array([1.0, -2.0, 3.0])
    opt = learn.Adam([p], lr=0.1)
    opt.step([np.array([5.0, -0.01, 0.0])])
    assert np.allclose(p, [0.9, -1.9, 3.0], atol=1e-6)


def test_adam_minimises_quadratic():
    p = np.array([3.0, -4.0])
    opt = learn.Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step([2 * p])
    assert np.all(np.abs(p) < 1e-2)


# ------------------------------------------------------------------- pairing

def test_pairing_rules():
    rng = np.random.default_rng(0)
    labels = np.array([0, 0, 1, 1, 1])
    pos, neg = learn.draw_pairs(labels, range(5), rng)
    for i, (p, n) in enumerate(zip(pos, neg)):
        assert p != i and labels[p] == labels[i] and labels[n] != labels[i]
    with pytest.raises(PairingError):
        learn.draw_pairs(np.array([0, 1, 1]), range(3), rng)
    with pytest.raises(PairingError):
        learn.draw_pairs(np.array([1, 1]), range(2), rng)


# ------------------------------------------------------------ layer training

@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(0)
    model = qfm.init_model(ModelConfig(n_qubits=4, L=3), rng)
    amps = np.stack([random_state(4, rng).amplitudes for _ in range(12)])
    labels = np.array([0, 1] * 6)
    return model, amps, labels


def test_layerwise_training_cost_and_checksum(small):
    model, amps, labels = small
    model = model.copy()
    src = learn.QuantumSource(model, amps)
    before = [w.copy() for w in model.weights]
    checksum = qfm.angle_checksum(model)
    sched = TrainSchedule(outer_epochs=2, inner_epochs=5)
    trace = learn.LossTrace()
    rng = np.random.default_rng(1)
    # layer 1 only: 3 inputs per anchor per outer epoch, none during inner epochs
    learn.train_layerwise(src, labels, sched, rng, layers=1, trace=trace)
    assert src.requested == 2 * 3 * 12
    assert len(trace.rows) == 2 * 5
    w1 = model.weights[0].copy()
    assert not np.array_equal(w1, before[0])
    assert np.array_equal(model.weights[1], before[1])
    assert qfm.angle_checksum(model) == checksum


def test_frozen_prefix(small, monkeypatch):
    model, amps, labels = small
    model = model.copy()
    src = learn.QuantumSource(model, amps)
    sched = TrainSchedule(outer_epochs=2, inner_epochs=5)
    snapshots = []

    orig = learn._optimise_layer

    def spy(W, *a, **k):
        snapshots.append([w.copy() for w in model.weights])
        return orig(W, *a, **k)

    monkeypatch.setattr(learn, "_optimise_layer", spy)
    learn.train_layerwise(src, labels, sched, np.random.default_rng(2))
    # snapshots 2, 3 are taken while training layer 2: W_1 never changes
    assert np.array_equal(snapshots[2][0], snapshots[3][0])
    assert np.array_equal(snapshots[3][0], model.weights[0])
    assert np.array_equal(snapshots[4][1], model.weights[1])


def test_cache_avoids_recomputation(small):
    model, amps, labels = small
    src = learn.QuantumSource(model.copy(), amps)
    src.features(1, [0, 1, 2])
    src.features(1, [2, 1, 0])
    assert src.requested == 6 and src.executed == 3
    noisy = learn.QuantumSource(model.copy(), amps, noise_p=0.1, rng=np.random.default_rng(0))
    noisy.features(1, [0, 1])
    noisy.features(1, [0, 1])
    assert noisy.executed == 4


def test_loss_decreases_on_fixed_batch():
    rng = np.random.default_rng(3)
    W = qfm.glorot(rng, 32, 32)
    ga, gp, gn = rng.uniform(-1, 1, (3, 16, 32))
    opt = learn.Adam([W], lr=1e-2)
    first = learn.contrastive_objective(W, ga, gp, gn, 8.0)[0]
    for _ in range(40):
        loss, grad = learn.contrastive_objective(W, ga, gp, gn, 8.0)
        assert np.isfinite(loss)
        opt.step([grad])
    assert learn.contrastive_objective(W, ga, gp, gn, 8.0)[0] < first


# ------------------------------------------------------------------ one-step

def test_joint_state_sizes():
    amps = random_state(8, np.random.default_rng(0)).amplitudes
    assert learn.joint_state(amps, 1, 2).shape == (512,)
    j = learn.joint_state(amps, 2, 4)
    assert j.shape == (1024,)
    assert np.array_equal(j[2::4], amps)   # label register |10> on the last two qubits
    assert learn.label_register_size(4) == 2 and learn.label_register_size(2) == 1
    with pytest.raises(ArgumentError):
        learn.label_index(4, 4)


def test_one_step_training_and_prediction():
    rng = np.random.default_rng(4)
    model = qfm.init_model(ModelConfig(n_qubits=5, L=2, d=4), rng)
    amps = np.stack([random_state(4, rng).amplitudes for _ in range(6)])
    labels = np.array([0, 1, 0, 1, 0, 1])
    src = learn.JointQuantumSource(model, amps, 2)
    sched = TrainSchedule(outer_epochs=1, inner_epochs=2)
    _, anchors, trace = learn.train_one_step(src, labels, 2, sched, rng)
    assert len(anchors) == 2 and all(a.shape == (20,) for a in anchors)
    assert src.requested == 2 * 6 + 2 * 2 * 6   # layer 1 then layer 2 (prefix recomputed)
    scores = learn.one_step_scores(src, range(6), anchors, 2)
    assert scores.shape == (6, 2) and np.all(np.abs(scores) <= 2)
    pred = learn.predict_one_step(model, anchors, amps[0], 2)
    assert pred == int(np.argmax(scores[0]))


def test_one_step_single_layer_and_tie_break():
    rng = np.random.default_rng(5)
    model = qfm.init_model(ModelConfig(n_qubits=5, L=1, d=4), rng)
    amps = random_state(4, rng).amplitudes[None, :]
    src = learn.JointQuantumSource(model, amps, 2)
    a = [rng.uniform(-1, 1, 20)]
    s = learn.one_step_scores(src, [0], a, 2)[0]
    hs = [src.representations([(0, k)], 1)[0][0] for k in range(2)]
    assert np.allclose(s, [learn.cosine_similarity(h, a[0]) for h in hs])
    assert int(np.argmax(np.zeros(3))) == 0


def test_argmax_scale_invariance():
    rng = np.random.default_rng(6)
    h = rng.normal(size=(10, 8))
    a = rng.normal(size=8)
    s1 = learn.cosine_similarity(h, np.broadcast_to(a, h.shape))
    s2 = learn.cosine_similarity(3.7 * h, np.broadcast_to(a, h.shape))
    assert np.allclose(s1, s2)


# ------------------------------------------------------------------- readout

def test_readout_separates_toy_blobs():
    rng = np.random.default_rng(7)
    x = np.concatenate([rng.normal(-1.5, 0.3, (20, 2)), rng.normal(1.5, 0.3, (20, 2))])
    y = np.array([0] * 20 + [1] * 20)
    net = learn.train_readout(x, y, TrainSchedule(readout_epochs=500), np.random.default_rng(0))
    assert learn.accuracy(net.predict(x), y) == 1.0


def test_readout_single_class_collapses():
    x = np.random.default_rng(8).normal(size=(10, 3))
    net = learn.train_readout(x, np.zeros(10, dtype=int), TrainSchedule(readout_epochs=200),
                              np.random.default_rng(0), n_classes=2)
    assert np.all(net.predict(x) == 0) and net.loss(x, np.zeros(10, dtype=int)) < 0.01


def test_readout_is_seed_deterministic_and_checks_labels():
    x = np.random.default_rng(9).normal(size=(8, 3))
    y = np.array([0, 1] * 4)
    s = TrainSchedule(readout_epochs=5)
    a = learn.train_readout(x, y, s, np.random.default_rng(1))
    b = learn.train_readout(x, y, s, np.random.default_rng(1))
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    with pytest.raises(ArgumentError):
        learn.train_readout(x, y + 1, s, np.random.default_rng(1), n_classes=2)


def test_densenet_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    net = learn.DenseNet([5, 7, 6, 3], rng)
    x = rng.normal(size=(9, 5))
    y = rng.integers(0, 3, 9)
    _, grads = net.loss_and_grads(x, y)
    for p, g in zip(net.params, grads):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + 1e-6
            lp = net.loss(x, y)
            p[idx] = old - 1e-6
            lm = net.loss(x, y)
            p[idx] = old
            num[idx] = (lp - lm) / 2e-6
        assert np.allclose(g, num, atol=1e-7)


class _Const:
    def __init__(self, k):
        self.k = k

    def predict(self, x):
        return np.full(len(x), self.k)


def test_evaluate_chance_and_memorisation():
    from iqfm.spinchain import Dataset
    rng = np.random.default_rng(11)
    model = qfm.init_model(ModelConfig(n_qubits=4, L=1), rng)
    amps = np.stack([random_state(4, rng).amplitudes for _ in range(8)])
    ds = Dataset("B_periodic", 4, np.repeat(np.arange(4), 2), np.zeros(8), np.zeros(8),
                 np.zeros(8), amps)
    assert learn.evaluate(model, _Const(0), ds) == 0.25
    hs = np.concatenate(qfm.forward_quantum_batch(model, amps), axis=1)
    net = learn.train_readout(hs, ds.labels, TrainSchedule(readout_epochs=500),
                              np.random.default_rng(0))
    assert learn.evaluate(model, net, ds) == 1.0
