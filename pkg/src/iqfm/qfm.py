"""Iterative quantum feature maps: circuits, multi-basis features, augmentation.

Quantum mode (input is a state |phi> on n qubits).  Layer l prepares a fresh
copy of |phi>, optionally applies RX noise, then

* l = 1: the preprocessing circuit P_1 (Hadamards, d1 A-blocks, d2 B-blocks);
* l >= 2: the embedding U(h_{l-1}) followed by P_l (Hadamards, d2 B-blocks),

and measures <Z_i> in B+1 bases (the computational basis, then RX(theta^k)
on every qubit for k = 1..B).  The features g_l are mapped to
h_l = pi * tanh(W_l g_l / 2).

Classical-modular mode (input is a 784-pixel image).  h_0 = W_0 x is split
into 16-component segments; each drives a 4-qubit circuit U(segment) on
|0000>, measured in four bases, so g_l has M components.

Preprocessing blocks are stored with the angles of the exponentials
exp(i a P); as gates they become rotations by -2a.  Inside a block the
rightmost exponential acts first, so an A-block is an RX row followed by an
RZZ ring and a B-block is RX(eta), RZ(zeta), RX(eps), RZZ(gamma).
"""
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import container, kernels
from .errors import ConfigError, DimensionError
from .statevector import Circuit


def is_exact(shots):
    return shots is None or (isinstance(shots, float) and np.isinf(shots)) or shots == 0


@dataclass
class ModelConfig:
    mode: str = "quantum"          # quantum | classical_modular
    n_qubits: int = 8
    L: int = 5
    B: int = 3
    d1: int = 2
    d2: int = 2
    d: int = 4
    M: int = 16                    # classical mode width
    n_pixels: int = 784


@dataclass
class IqfmModel:
    mode: str
    n_qubits: int
    L: int
    B: int
    d1: int
    d2: int
    d: int
    d_g: int
    d_h: int
    M: int
    angles: list          # per layer: dict of name -> array (paper angles)
    weights: list         # W_1..W_L, each d_h x d_g
    W0: np.ndarray = None
    _programs: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_modules(self):
        return self.M // 16 if self.mode == "classical_modular" else 1

    def copy(self):
        return IqfmModel(self.mode, self.n_qubits, self.L, self.B, self.d1, self.d2,
                         self.d, self.d_g, self.d_h, self.M,
                         [{k: v.copy() for k, v in a.items()} for a in self.angles],
                         [w.copy() for w in self.weights],
                         None if self.W0 is None else self.W0.copy())


def glorot(rng, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


def init_model(config, rng):
    """Draw every frozen angle and the initial weights.

    Draw order: for each layer, alpha and beta (layer 1 only), gamma, eps,
    zeta, eta, theta; then W_1..W_L.  Classical mode draws W_0 first and only
    theta per (layer, module).
    """
    c = config
    if c.mode == "quantum":
        n = c.n_qubits
        d_g = (c.B + 1) * n
        d_h = d_g
        if n * c.d != d_h:
            raise ConfigError(f"embedding consumes n*d = {n * c.d} values but d_h = {d_h}")
        angles = []
        two_pi = 2.0 * np.pi
        for l in range(1, c.L + 1):
            a = {}
            if l == 1:
                a["alpha"] = rng.uniform(0, two_pi, (c.d1, n))
                a["beta"] = rng.uniform(0, two_pi, (c.d1, n))
            for name in ("gamma", "eps", "zeta", "eta"):
                a[name] = rng.uniform(0, two_pi, (c.d2, n))
            a["theta"] = rng.uniform(0, two_pi, (c.B, n))
            angles.append(a)
        weights = [glorot(rng, d_h, d_g) for _ in range(c.L)]
        return IqfmModel("quantum", n, c.L, c.B, c.d1, c.d2, c.d, d_g, d_h, 0, angles, weights)
    if c.mode == "classical_modular":
        if c.M <= 0 or c.M % 16:
            raise ConfigError(f"M must be a positive multiple of 16, got {c.M}")
        if c.B != 3:
            raise ConfigError("classical mode measures four bases (B = 3)")
        W0 = glorot(rng, c.M, c.n_pixels)
        mods = c.M // 16
        angles = [{"theta": rng.uniform(0, 2.0 * np.pi, (mods, c.B, 4))} for _ in range(c.L)]
        weights = [glorot(rng, c.M, c.M) for _ in range(c.L)]
        return IqfmModel("classical_modular", 4, c.L, c.B, 0, 0, 4, c.M, c.M, c.M,
                         angles, weights, W0)
    raise ConfigError(f"unknown mode {c.mode!r}")


def angle_checksum(model):
    h = hashlib.sha256()
    for a in model.angles:
        for k in sorted(a):
            h.update(k.encode())
            h.update(np.ascontiguousarray(a[k]).tobytes())
    return h.hexdigest()


# ------------------------------------------------------------------ circuits

def _ring(n):
    return [(j, (j + 1) % n) for j in range(n)]


def build_preprocessing(layer_index, model):
    if not 1 <= layer_index <= model.L or model.mode != "quantum":
        raise ConfigError(f"no preprocessing circuit for layer {layer_index}")
    n = model.n_qubits
    a = model.angles[layer_index - 1]
    c = Circuit(n)
    for q in range(n):
        c.add("H", q)
    if layer_index == 1:
        for r in range(model.d1):
            for q in range(n):
                c.add("RX", q, angle=-2.0 * a["beta"][r, q])
            for j, (p, q) in enumerate(_ring(n)):
                c.add("RZZ", p, q, angle=-2.0 * a["alpha"][r, j])
    for r in range(model.d2):
        for q in range(n):
            c.add("RX", q, angle=-2.0 * a["eta"][r, q])
        for q in range(n):
            c.add("RZ", q, angle=-2.0 * a["zeta"][r, q])
        for q in range(n):
            c.add("RX", q, angle=-2.0 * a["eps"][r, q])
        for j, (p, q) in enumerate(_ring(n)):
            c.add("RZZ", p, q, angle=-2.0 * a["gamma"][r, j])
    return c


def _embedding_codes(n, d):
    codes, qa, qb = [], [], []
    for _ in range(d):
        codes += [kernels.H] * n + [kernels.RZ] * n + [kernels.RZZ] * n
        qa += list(range(n)) * 2 + [p for p, _ in _ring(n)]
        qb += [0] * (2 * n) + [q for _, q in _ring(n)]
    return (np.array(codes, dtype=np.int64), np.array(qa, dtype=np.int64),
            np.array(qb, dtype=np.int64))


def embedding_angles(h, n, d):
    """Gate angles of the embedding for a batch of vectors ``h`` (rows)."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if h.shape[1] != n * d:
        raise DimensionError(f"embedding needs {n * d} values, got {h.shape[1]}")
    blocks = h.reshape(h.shape[0], d, n)
    zz = blocks * np.roll(blocks, -1, axis=2)
    ang = np.concatenate([np.zeros_like(blocks), blocks, zz], axis=2)
    return ang.reshape(h.shape[0], 3 * n * d)


def build_embedding(h_vec, n, d):
    h_vec = np.asarray(h_vec, dtype=float)
    if h_vec.shape != (n * d,):
        raise DimensionError(f"embedding needs {n * d} values, got shape {h_vec.shape}")
    codes, qa, qb = _embedding_codes(n, d)
    ang = embedding_angles(h_vec, n, d)[0]
    inv = {v: k for k, v in {"H": kernels.H, "RZ": kernels.RZ, "RZZ": kernels.RZZ}.items()}
    c = Circuit(n)
    for g in range(len(codes)):
        kind = inv[int(codes[g])]
        if kind == "H":
            c.add("H", int(qa[g]))
        elif kind == "RZ":
            c.add("RZ", int(qa[g]), angle=ang[g])
        else:
            c.add("RZZ", int(qa[g]), int(qb[g]), angle=ang[g])
    return c


def _preprocessing_program(model, l):
    key = ("P", l)
    if key not in model._programs:
        model._programs[key] = build_preprocessing(l, model).program()
    return model._programs[key]


def _zsign(n):
    idx = np.arange(1 << n)
    return (1 - 2 * ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1)).astype(float)


def _run_batch(psi, n, codes, qa, qb, qc, angles):
    kernels.apply_program_batch(psi, n, codes, qa, qb, qc, angles)


def _rx_row_batch(psi, n, angles):
    """RX(angles[r, q]) on each qubit q of row r."""
    codes = np.full(n, kernels.RX, dtype=np.int64)
    qs = np.arange(n, dtype=np.int64)
    zeros = np.zeros(n, dtype=np.int64)
    _run_batch(psi, n, codes, qs, zeros, zeros, np.ascontiguousarray(angles, dtype=float))


# ------------------------------------------------------------------ features

def multi_basis_features(psi, n, theta, shots, rng):
    """Features of a batch of prepared states ``psi`` (rows).

    ``theta`` is (B, n).  Returns (batch, (B+1)*n): basis 0 first, then each
    rotated basis.  ``shots`` of None means exact expectations; otherwise
    ``shots`` samples per basis per state.
    """
    rows = psi.shape[0]
    zs = _zsign(n)
    out = np.empty((rows, (theta.shape[0] + 1) * n))
    for k in range(theta.shape[0] + 1):
        if k == 0:
            work = psi
        else:
            work = psi.copy()
            _rx_row_batch(work, n, np.broadcast_to(theta[k - 1], (rows, n)))
        probs = work.real ** 2 + work.imag ** 2
        if not is_exact(shots):
            probs = np.clip(probs, 0.0, None)
            probs /= probs.sum(axis=1, keepdims=True)
            probs = rng.multinomial(int(shots), probs) / float(shots)
        out[:, k * n:(k + 1) * n] = probs @ zs
    return out


def extract_features(state, layer_angles, shot_budget, rng):
    """Multi-basis features of one prepared state."""
    theta = layer_angles["theta"] if isinstance(layer_angles, dict) else np.asarray(layer_angles)
    psi = state.copy_amplitudes()[None, :]
    return multi_basis_features(psi, state.n_qubits, theta, shot_budget, rng)[0]


def augment(W, g):
    W = np.asarray(W)
    g = np.asarray(g)
    if W.shape[-1] != g.shape[-1]:
        raise DimensionError(f"W is {W.shape}, g has length {g.shape[-1]}")
    return np.pi * np.tanh(0.5 * (g @ W.T))


def quantum_layer_features(model, amps, l, h_prev, noise_p, shots, rng):
    """g_l for a batch of input states ``amps`` (rows); ``l`` is 1-based."""
    n = model.n_qubits
    psi = np.array(amps, dtype=np.complex128, copy=True).reshape(-1, 1 << n)
    rows = psi.shape[0]
    if noise_p > 0:
        from .statevector import noise_angles
        _rx_row_batch(psi, n, np.stack([noise_angles(n, noise_p, rng) for _ in range(rows)]))
    if l >= 2:
        codes, qa, qb = _embedding_codes(n, model.d)
        ang = embedding_angles(h_prev, n, model.d)
        _run_batch(psi, n, codes, qa, qb, np.zeros_like(qa), ang)
    P = _preprocessing_program(model, l)
    _run_batch(psi, n, P.codes, P.qa, P.qb, P.qc, np.broadcast_to(P.angles, (rows, len(P.angles))).copy())
    return multi_basis_features(psi, n, model.angles[l - 1]["theta"], shots, rng)


def classical_layer_features(model, h_prev, l, shots, rng):
    """g_l for a batch of h_{l-1} rows in classical-modular mode."""
    h_prev = np.atleast_2d(h_prev)
    rows = h_prev.shape[0]
    parts = []
    codes, qa, qb = _embedding_codes(4, 4)
    theta = model.angles[l - 1]["theta"]
    for m in range(model.n_modules):
        seg = h_prev[:, 16 * m:16 * (m + 1)]
        psi = np.zeros((rows, 16), dtype=np.complex128)
        psi[:, 0] = 1.0
        _run_batch(psi, 4, codes, qa, qb, np.zeros_like(qa), embedding_angles(seg, 4, 4))
        parts.append(multi_basis_features(psi, 4, theta[m], shots, rng))
    return np.concatenate(parts, axis=1)


@dataclass
class Representation:
    layers: list

    def concat(self):
        return np.concatenate(self.layers, axis=-1)

    def __len__(self):
        return sum(h.shape[-1] for h in self.layers)


def forward_quantum_batch(model, amps, noise_p=0.0, shot_budget=None, rng=None, n_layers=None,
                          return_features=False):
    n_layers = model.L if n_layers is None else n_layers
    hs, gs = [], []
    h = None
    for l in range(1, n_layers + 1):
        g = quantum_layer_features(model, amps, l, h, noise_p, shot_budget, rng)
        h = augment(model.weights[l - 1], g)
        gs.append(g)
        hs.append(h)
    return (hs, gs) if return_features else hs


def forward_quantum(model, input_state, noise_p, shot_budget, rng):
    if input_state.n_qubits != model.n_qubits:
        raise DimensionError(f"model has {model.n_qubits} qubits, state {input_state.n_qubits}")
    hs = forward_quantum_batch(model, input_state.amplitudes[None, :], noise_p, shot_budget, rng)
    return Representation([h[0] for h in hs])


def classical_h0(model, images):
    images = np.atleast_2d(np.asarray(images, dtype=float))
    if images.shape[1] != model.W0.shape[1]:
        raise DimensionError(f"images have {images.shape[1]} pixels, W0 expects {model.W0.shape[1]}")
    return images @ model.W0.T


def forward_classical_batch(model, images, shot_budget=None, rng=None, n_layers=None,
                            return_features=False):
    if model.mode != "classical_modular":
        raise ConfigError("model is not in classical_modular mode")
    n_layers = model.L if n_layers is None else n_layers
    h = classical_h0(model, images)
    hs, gs = [], []
    for l in range(1, n_layers + 1):
        g = classical_layer_features(model, h, l, shot_budget, rng)
        h = augment(model.weights[l - 1], g)
        gs.append(g)
        hs.append(h)
    return (hs, gs) if return_features else hs


def forward_classical(model, image_784, shot_budget, rng):
    hs = forward_classical_batch(model, np.asarray(image_784)[None, :], shot_budget, rng)
    return Representation([h[0] for h in hs])


# --------------------------------------------------------------- checkpoint

def save_model(model, path):
    entries = {"mode": model.mode,
               "dims": np.array([model.n_qubits, model.L, model.B, model.d1, model.d2,
                                 model.d, model.d_g, model.d_h, model.M], dtype=np.int64)}
    for l, a in enumerate(model.angles, start=1):
        for k in sorted(a):
            entries[f"angles/{l}/{k}"] = a[k]
    if model.W0 is not None:
        entries["W0"] = model.W0
    for l, w in enumerate(model.weights, start=1):
        entries[f"W{l}"] = w
    container.save(path, b"IQFM", entries)


def load_model(path):
    e = container.load(path, b"IQFM")
    n, L, B, d1, d2, d, d_g, d_h, M = (int(x) for x in e["dims"])
    angles = []
    for l in range(1, L + 1):
        pre = f"angles/{l}/"
        angles.append({k[len(pre):]: v for k, v in e.items() if k.startswith(pre)})
    weights = [e[f"W{l}"] for l in range(1, L + 1)]
    return IqfmModel(e["mode"], n, L, B, d1, d2, d, d_g, d_h, M, angles, weights, e.get("W0"))
