"""Layer-wise contrastive training, one-step learning, and the dense readout.

The contrastive loss for a triple (anchor p, positive h+, negative h-) is

    C = log(1 + exp((cs(h-, p) - cs(h+, p)) / tau))

with cosine similarity cs.  Representations are h = a * tanh(b * W g) with
a = pi, b = 1/2 for feature maps and a = b = 1 for the classical network, so
the same gradient code serves both.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, PairingError, SimilarityError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Activation:
    scale: float = np.pi
    slope: float = 0.5

    def __call__(self, z):
        return self.scale * np.tanh(self.slope * z)


QFM_ACT = Activation(np.pi, 0.5)
TANH_ACT = Activation(1.0, 1.0)


@dataclass
class TrainSchedule:
    tau: float = 8.0
    outer_epochs: int = 100
    inner_epochs: int = 40
    lr: float = 1e-3
    readout_lr: float = 1e-3
    readout_weight_decay: float = 1e-4
    readout_batch: int = 16
    readout_epochs: int = 500
    readout_hidden: tuple = (64, 64)
    shot_budget: object = None
    noise_p: float = 0.0
    recompute_anchor: bool = True
    augment_positive: bool = False
    master_seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ArgumentError("tau must be positive")
        if min(self.outer_epochs, self.inner_epochs, self.readout_epochs) < 1:
            raise ArgumentError("epoch counts must be at least 1")


@dataclass
class ContrastiveTriple:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


# ----------------------------------------------------------------- loss/grad

def cosine_similarity(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise SimilarityError("cosine similarity of a zero vector is undefined")
    return np.clip((a * b).sum(-1) / (na * nb), -1.0, 1.0)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def contrastive_loss(triple, tau=8.0):
    d = (cosine_similarity(triple.negative, triple.anchor)
         - cosine_similarity(triple.positive, triple.anchor))
    return float(np.mean(_softplus(d / tau)))


def _cs_and_grads(u, v):
    """Row-wise cs(u, v) with its gradients w.r.t. u and v."""
    nu = np.linalg.norm(u, axis=1, keepdims=True)
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(nu == 0) or np.any(nv == 0):
        raise SimilarityError("cosine similarity of a zero vector is undefined")
    cs = (u * v).sum(1, keepdims=True) / (nu * nv)
    du = v / (nu * nv) - cs * u / nu ** 2
    dv = u / (nu * nv) - cs * v / nv ** 2
    return cs[:, 0], du, dv


def contrastive_objective(W, Ga, Gp, Gn, tau, act=QFM_ACT, fixed_anchor=None):
    """Mean loss over a batch of triples and its gradient w.r.t. W.

    ``Ga``, ``Gp``, ``Gn`` hold feature rows.  When ``fixed_anchor`` is given
    (one vector or one row per triple) the anchor carries no gradient and
    ``Ga`` is ignored.
    """
    Gp = np.atleast_2d(Gp)
    Gn = np.atleast_2d(Gn)
    zp, zn = Gp @ W.T, Gn @ W.T
    tp, tn = np.tanh(act.slope * zp), np.tanh(act.slope * zn)
    hp, hn = act.scale * tp, act.scale * tn
    if fixed_anchor is None:
        Ga = np.atleast_2d(Ga)
        za = Ga @ W.T
        ta = np.tanh(act.slope * za)
        p = act.scale * ta
    else:
        p = np.broadcast_to(np.asarray(fixed_anchor, dtype=float), hp.shape)
    cs_n, dn_h, dn_p = _cs_and_grads(hn, p)
    cs_p, dp_h, dp_p = _cs_and_grads(hp, p)
    x = (cs_n - cs_p) / tau
    loss = float(np.mean(_softplus(x)))
    c = (_sigmoid(x) / tau / len(x))[:, None]
    k = act.scale * act.slope
    grad = ((c * dn_h) * k * (1 - tn ** 2)).T @ Gn - ((c * dp_h) * k * (1 - tp ** 2)).T @ Gp
    if fixed_anchor is None:
        grad += ((c * (dn_p - dp_p)) * k * (1 - ta ** 2)).T @ Ga
    return loss, grad


def contrastive_grad_W(W_l, g_anchor, g_plus, g_minus, tau=8.0, act=QFM_ACT, fixed_anchor=None):
    """Gradient of the single-triple loss w.r.t. W_l (shape of W_l)."""
    _, grad = contrastive_objective(W_l, None if g_anchor is None else np.atleast_2d(g_anchor),
                                    g_plus, g_minus, tau, act, fixed_anchor)
    return grad


# --------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with L2 weight decay added to the gradient."""

    def __init__(self, params, lr=1e-3, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState([np.zeros_like(p) for p in params],
                               [np.zeros_like(p) for p in params])

    def step(self, grads):
        s = self.state
        s.step += 1
        b1, b2 = s.beta1, s.beta2
        c1 = 1.0 - b1 ** s.step
        c2 = 1.0 - b2 ** s.step
        for p, g, m, v in zip(self.params, grads, s.m, s.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)


# ------------------------------------------------------------ feature sources

class FeatureSource:
    """Produces g_l rows for inputs identified by hashable keys.

    Subclasses implement ``_layer_features(l, keys, h_prev)`` and
    ``_h0(keys)``.  ``features(l, keys)`` recomputes h_1..h_{l-1} through the
    frozen earlier layers, as a device would have to.  When ``deterministic``
    is set (exact expectations, no noise) results are cached per (layer, key);
    ``requested`` still counts every logical circuit execution.
    """

    act = QFM_ACT
    deterministic = True
    image_keys = False                 # keys are (row, rotated) pairs

    def __init__(self, weights):
        self.weights = weights
        self._cache = {}
        self.requested = 0
        self.executed = 0

    def features(self, l, keys):
        keys = list(keys)
        h = self._h0(keys)
        g = None
        for k in range(1, l + 1):
            g = self._cached(k, keys, h)
            h = self.act(g @ self.weights[k - 1].T)
        return g

    def representations(self, keys, n_layers):
        keys = list(keys)
        h = self._h0(keys)
        hs = []
        for k in range(1, n_layers + 1):
            g = self._cached(k, keys, h)
            h = self.act(g @ self.weights[k - 1].T)
            hs.append(h)
        return hs

    def _cached(self, l, keys, h_prev):
        self.requested += len(keys)
        if not self.deterministic:
            self.executed += len(keys)
            return self._layer_features(l, keys, h_prev)
        missing = [i for i, k in enumerate(keys) if (l, k) not in self._cache]
        if missing:
            self.executed += len(missing)
            hp = None if h_prev is None else h_prev[missing]
            g = self._layer_features(l, [keys[i] for i in missing], hp)
            for r, i in enumerate(missing):
                self._cache[(l, keys[i])] = g[r]
        return np.stack([self._cache[(l, k)] for k in keys])

    def invalidate(self):
        self._cache.clear()

    def _h0(self, keys):
        return None


class QuantumSource(FeatureSource):
    """Quantum-mode IQFM features; key = row index into ``amps``."""

    def __init__(self, model, amps, noise_p=0.0, shots=None, rng=None):
        super().__init__(model.weights)
        from .qfm import is_exact
        self.model = model
        self.amps = amps
        self.noise_p = noise_p
        self.shots = shots
        self.rng = rng
        self.deterministic = noise_p == 0 and is_exact(shots)

    def _layer_features(self, l, keys, h_prev):
        from .qfm import quantum_layer_features
        return quantum_layer_features(self.model, self.amps[np.asarray(keys, dtype=np.int64)],
                                      l, h_prev, self.noise_p, self.shots, self.rng)


class JointQuantumSource(QuantumSource):
    """One-step inputs: key = (row index, label) gives |phi_row> ⊗ |label>."""

    def __init__(self, model, amps, n_classes, encoding="binary", noise_p=0.0, shots=None, rng=None):
        super().__init__(model, amps, noise_p, shots, rng)
        self.n_classes = n_classes
        self.encoding = encoding

    def _layer_features(self, l, keys, h_prev):
        from .qfm import quantum_layer_features
        joint = np.stack([joint_state(self.amps[i], y, self.n_classes, self.encoding)
                          for i, y in keys])
        return quantum_layer_features(self.model, joint, l, h_prev, self.noise_p, self.shots, self.rng)


class ImageSource(FeatureSource):
    """Classical-modular IQFM features; key = (row index, rotated flag)."""

    image_keys = True

    def __init__(self, model, images, shots=None, rng=None):
        super().__init__(model.weights)
        from .qfm import is_exact
        self.model = model
        self.images = images
        self.shots = shots
        self.rng = rng
        self.deterministic = is_exact(shots)

    def _inputs(self, keys):
        rows = []
        for i, rot in keys:
            img = self.images[i]
            if rot:
                img = rotate_image(img)
            rows.append(img)
        return np.stack(rows)

    def _h0(self, keys):
        from .qfm import classical_h0
        return classical_h0(self.model, self._inputs(keys))

    def _layer_features(self, l, keys, h_prev):
        from .qfm import classical_layer_features
        return classical_layer_features(self.model, h_prev, l, self.shots, self.rng)


def rotate_image(img, side=28):
    """Rotate a flattened square image by 90 degrees counter-clockwise."""
    return np.rot90(np.asarray(img).reshape(side, side)).reshape(-1)


def label_register_size(n_classes, encoding="binary"):
    if encoding == "binary":
        return max(1, int(np.ceil(np.log2(n_classes))))
    if encoding == "onehot":
        return n_classes
    raise ArgumentError(f"unknown label encoding {encoding!r}")


def label_index(y, n_classes, encoding="binary"):
    k = label_register_size(n_classes, encoding)
    if not 0 <= y < n_classes:
        raise ArgumentError(f"label {y} outside 0..{n_classes - 1}")
    if encoding == "binary":
        return int(y)
    return 1 << (k - 1 - int(y))


def joint_state(amps, y, n_classes, encoding="binary"):
    """Amplitudes of |phi> ⊗ |label y> (label register on the last qubits)."""
    k = label_register_size(n_classes, encoding)
    reg = np.zeros(1 << k, dtype=np.complex128)
    reg[label_index(y, n_classes, encoding)] = 1.0
    return np.kron(amps, reg)


# ------------------------------------------------------------------ training

@dataclass
class LossTrace:
    rows: list = field(default_factory=list)   # (layer, outer, inner, loss)

    def add(self, layer, outer, inner, loss):
        self.rows.append((layer, outer, inner, float(loss)))

    def layer(self, l):
        return np.array([r[3] for r in self.rows if r[0] == l])

    def write_csv(self, path):
        import io
        from .container import atomic_write_text
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "outer_epoch", "inner_epoch", "mean_loss"])
        for l, o, i, v in self.rows:
            w.writerow([l, o, i, repr(v)])
        atomic_write_text(path, buf.getvalue())


def draw_pairs(labels, order, rng):
    """One positive (same label, other sample) and one negative per anchor."""
    labels = np.asarray(labels)
    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    if len(by_class) < 2:
        raise PairingError("contrastive pairing needs at least two classes")
    pos, neg = [], []
    for i in order:
        same = by_class[labels[i]]
        same = same[same != i]
        if same.size == 0:
            raise PairingError(f"class {labels[i]} has a single sample; no positive available")
        other = np.flatnonzero(labels != labels[i])
        pos.append(int(same[rng.integers(same.size)]))
        neg.append(int(other[rng.integers(other.size)]))
    return pos, neg


def _optimise_layer(W, Ga, Gp, Gn, schedule, opt, trace, l, outer, act, fixed_anchor=None):
    if fixed_anchor is None and not schedule.recompute_anchor:
        fixed_anchor = act(Ga @ W.T)
    for inner in range(schedule.inner_epochs):
        loss, grad = contrastive_objective(W, Ga, Gp, Gn, schedule.tau, act, fixed_anchor)
        trace.add(l, outer, inner, loss)
        opt.step([grad])


def train_layerwise(source, labels, schedule, rng, layers=None, augment=False, trace=None):
    """Two-step contrastive training of W_1..W_L held by ``source``.

    ``source.weights`` is updated in place layer by layer; earlier layers are
    never touched again.  Keys are row indices (or (index, rotated) pairs
    for image sources, with rotation applied to positives when ``augment``).
    """
    trace = trace if trace is not None else LossTrace()
    labels = np.asarray(labels)
    L = len(source.weights) if layers is None else layers
    for l in range(1, L + 1):
        W = source.weights[l - 1]
        opt = Adam([W], lr=schedule.lr)
        for outer in range(schedule.outer_epochs):
            order = rng.permutation(len(labels))
            pos, neg = draw_pairs(labels, order, rng)
            if source.image_keys:
                ka = [(int(i), False) for i in order]
                kp = [(j, bool(augment)) for j in pos]
                kn = [(k, False) for k in neg]
            else:
                ka, kp, kn = [int(i) for i in order], pos, neg
            G = source.features(l, ka + kp + kn)
            m = len(ka)
            _optimise_layer(W, G[:m], G[m:2 * m], G[2 * m:], schedule, opt, trace, l, outer,
                            source.act)
    return source.weights, trace


def draw_anchors(rng, n_layers, dim):
    return [rng.uniform(-1.0, 1.0, dim) for _ in range(n_layers)]


def train_one_step(source, labels, n_classes, schedule, rng, anchors=None, trace=None):
    """One-step training: positives (s, y), negatives (s, wrong y), fixed anchors.

    ``source`` must accept (row, label) keys (``JointQuantumSource``).
    """
    trace = trace if trace is not None else LossTrace()
    labels = np.asarray(labels)
    L = len(source.weights)
    if anchors is None:
        anchors = draw_anchors(rng, L, source.weights[0].shape[0])
    for l in range(1, L + 1):
        W = source.weights[l - 1]
        opt = Adam([W], lr=schedule.lr)
        for outer in range(schedule.outer_epochs):
            order = rng.permutation(len(labels))
            wrong = []
            for i in order:
                if n_classes == 2:
                    wrong.append(1 - int(labels[i]))
                else:
                    w = int(rng.integers(n_classes - 1))
                    wrong.append(w + (w >= labels[i]))
            kp = [(int(i), int(labels[i])) for i in order]
            kn = [(int(i), y) for i, y in zip(order, wrong)]
            G = source.features(l, kp + kn)
            m = len(kp)
            _optimise_layer(W, None, G[:m], G[m:], schedule, opt, trace, l, outer,
                            source.act, fixed_anchor=anchors[l - 1])
    return source.weights, anchors, trace


def one_step_scores(source, rows, anchors, n_classes):
    """Cumulative similarity scores, shape (len(rows), n_classes)."""
    L = len(anchors)
    scores = np.zeros((len(rows), n_classes))
    for k in range(n_classes):
        hs = source.representations([(int(i), k) for i in rows], L)
        for l in range(L):
            scores[:, k] += cosine_similarity(hs[l], np.broadcast_to(anchors[l], hs[l].shape))
    return scores


def predict_one_step(model, anchors, s, n_classes, encoding="binary", noise_p=0.0,
                     shot_budget=None, rng=None):
    """Predicted class of one input state ``s`` (StateVector or amplitudes)."""
    amps = getattr(s, "amplitudes", s)
    src = JointQuantumSource(model, np.asarray(amps)[None, :], n_classes, encoding,
                             noise_p, shot_budget, rng)
    return int(np.argmax(one_step_scores(src, [0], anchors, n_classes)[0]))


# ------------------------------------------------------------------ readout

class DenseNet:
    """Fully connected network with ReLU hidden layers and a softmax output."""

    def __init__(self, dims, rng):
        self.dims = list(dims)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-lim, lim, (fan_out, fan_in)))
            self.biases.append(rng.uniform(-lim, lim, fan_out))

    @property
    def params(self):
        return self.weights + self.biases

    def logits(self, x):
        a = np.atleast_2d(x)
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W.T + b
            if k < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
        return a

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)

    def loss_and_grads(self, x, y):
        acts = [np.atleast_2d(x)]
        a = acts[0]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W.T + b
            if k < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
            acts.append(a)
        z = acts[-1]
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = len(y)
        loss = -logp[np.arange(n), y].mean()
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = delta.T @ acts[k]
            gb[k] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k]) * (acts[k] > 0)
        return float(loss), gw + gb

    def loss(self, x, y):
        return self.loss_and_grads(x, y)[0]


def train_readout(representations, labels, schedule, rng, n_classes=None):
    x = np.asarray(representations, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ArgumentError(f"labels must lie in 0..{n_classes - 1}")
    net = DenseNet([x.shape[1], *schedule.readout_hidden, n_classes], rng)
    opt = Adam(net.params, lr=schedule.readout_lr, weight_decay=schedule.readout_weight_decay)
    bs = schedule.readout_batch
    for _ in range(schedule.readout_epochs):
        order = rng.permutation(len(y))
        for s in range(0, len(y), bs):
            idx = order[s:s + bs]
            _, grads = net.loss_and_grads(x[idx], y[idx])
            opt.step(grads)
    return net


def accuracy(pred, labels):
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    return float(np.mean(pred == labels)) if labels.size else 0.0


def evaluate(model, readout, dataset, noise_p=0.0, shot_budget=None, rng=None):
    """Readout accuracy on a quantum dataset (states -> IQFM -> DenseNet)."""
    from .qfm import forward_quantum_batch
    hs = forward_quantum_batch(model, dataset.amplitudes, noise_p, shot_budget, rng)
    return accuracy(readout.predict(np.concatenate(hs, axis=1)), dataset.labels)
