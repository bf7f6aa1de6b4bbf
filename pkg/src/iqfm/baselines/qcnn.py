"""Variational QCNN trained with the parameter-shift rule.

Each stage applies ``var_depth`` repetitions of (RX, RZ, RX on every active
qubit, then RZZ on neighbouring active pairs) and pools with CNOT from the
odd to the even position of each active pair, keeping the even positions.
With 8 qubits the active sets are 0..7, {0,2,4,6}, {0,4}, {0}; the output is
<Z> on the last active qubit.  Multiclass models append logits = w * z + b.
"""
from dataclasses import dataclass, field

import numpy as np

from .. import container, kernels
from ..errors import ArgumentError, ConfigError
from ..learn import Adam
from ..statevector import noise_angles

SHIFT = np.pi / 2


@dataclass
class QcnnModel:
    n_qubits: int
    var_depth: int
    params: np.ndarray
    stages: list
    n_classes: int = 2
    fc_w: np.ndarray = None
    fc_b: np.ndarray = None
    _prog: tuple = field(default=None, repr=False, compare=False)

    @property
    def n_params(self):
        return self.params.size

    def program(self):
        """(codes, qa, qb, qc, param_index) with param_index -1 for fixed gates."""
        if self._prog is None:
            self._prog = _build_program(self.n_qubits, self.var_depth, self.stages)
        return self._prog


def pooling_stages(n_qubits):
    stages = [list(range(n_qubits))]
    while len(stages[-1]) > 1:
        act = stages[-1]
        if len(act) % 2:
            raise ConfigError(f"{n_qubits} qubits do not halve down to one")
        stages.append(act[0::2])
    return stages


def _build_program(n, var_depth, stages):
    codes, qa, qb, pidx = [], [], [], []
    k = 0

    def gate(c, a, b=0, param=False):
        nonlocal k
        codes.append(c)
        qa.append(a)
        qb.append(b)
        if param:
            pidx.append(k)
            k += 1
        else:
            pidx.append(-1)

    for act in stages[:-1]:
        for _ in range(var_depth):
            for q in act:
                gate(kernels.RX, q, param=True)
                gate(kernels.RZ, q, param=True)
                gate(kernels.RX, q, param=True)
            for p, q in zip(act[:-1], act[1:]):
                gate(kernels.RZZ, p, q, param=True)
        for i in range(0, len(act), 2):
            gate(kernels.CNOT, act[i + 1], act[i])
    as_arr = lambda v: np.array(v, dtype=np.int64)  # noqa: E731
    return as_arr(codes), as_arr(qa), as_arr(qb), np.zeros(len(codes), dtype=np.int64), as_arr(pidx)


def count_params(n_qubits, var_depth):
    total = 0
    for act in pooling_stages(n_qubits)[:-1]:
        total += var_depth * (3 * len(act) + len(act) - 1)
    return total


def init_qcnn(n_qubits, var_depth, rng, n_classes=2):
    stages = pooling_stages(n_qubits)
    params = rng.uniform(0.0, 2.0 * np.pi, count_params(n_qubits, var_depth))
    m = QcnnModel(n_qubits, var_depth, params, stages, n_classes)
    if n_classes > 2:
        m.fc_w = rng.uniform(-1.0, 1.0, n_classes)
        m.fc_b = np.zeros(n_classes)
    return m


def _angles(model, params=None):
    codes, qa, qb, qc, pidx = model.program()
    p = model.params if params is None else params
    ang = np.zeros(len(codes))
    mask = pidx >= 0
    ang[mask] = p[pidx[mask]]
    return ang


def _p0_of_output(psi, model):
    """Probability that the output qubit reads 0, per row of ``psi``."""
    n = model.n_qubits
    out = model.stages[-1][0]
    bit = (np.arange(1 << n) >> (n - 1 - out)) & 1
    probs = psi.real ** 2 + psi.imag ** 2
    return probs[:, bit == 0].sum(axis=1) / probs.sum(axis=1)


def _z_values(psi_rows, model, angle_rows, shots, rng):
    codes, qa, qb, qc, _ = model.program()
    kernels.apply_program_batch(psi_rows, model.n_qubits, codes, qa, qb, qc, angle_rows)
    p0 = np.clip(_p0_of_output(psi_rows, model), 0.0, 1.0)
    if shots is None:
        return 2.0 * p0 - 1.0
    if shots < 1:
        raise ArgumentError("shots must be at least 1")
    k = rng.binomial(int(shots), p0)
    return (2.0 * k - shots) / shots


def circuit_output(amps, model, shots=None, rng=None):
    """<Z> on the output qubit (exact, or estimated from ``shots``)."""
    psi = np.array(amps, dtype=np.complex128).reshape(1, -1)
    return float(_z_values(psi, model, _angles(model)[None, :].copy(), shots, rng)[0])


def qcnn_forward(state, model, shots=None, rng=None):
    """Binary: the <Z> value.  Multiclass: logits w * z + b."""
    amps = getattr(state, "amplitudes", state)
    if len(amps) != 1 << model.n_qubits:
        raise ArgumentError("state does not match the model width")
    z = circuit_output(amps, model, shots, rng)
    if model.n_classes > 2:
        return model.fc_w * z + model.fc_b
    return z


def qcnn_param_shift_grad(state, model, shot_budget=None, rng=None):
    """Value and d<Z>/dtheta for every circuit parameter by the shift rule.

    All 2P shifted circuits run as one batch; each evaluation is exact or
    uses ``shot_budget`` fresh shots.
    """
    amps = np.asarray(getattr(state, "amplitudes", state), dtype=np.complex128)
    P = model.n_params
    codes, qa, qb, qc, pidx = model.program()
    base = _angles(model)
    ang = np.tile(base, (2 * P + 1, 1))
    pos = np.flatnonzero(pidx >= 0)
    order = pidx[pos]
    gate_of_param = np.empty(P, dtype=np.int64)
    gate_of_param[order] = pos
    ang[np.arange(P), gate_of_param] += SHIFT
    ang[P + np.arange(P), gate_of_param] -= SHIFT
    psi = np.tile(amps, (2 * P + 1, 1))
    z = _z_values(psi, model, ang, shot_budget, rng)
    grad = 0.5 * (z[:P] - z[P:2 * P])
    return z[2 * P], grad


def _targets(labels):
    """Binary targets: label 0 -> +1, label 1 -> -1."""
    return 1.0 - 2.0 * np.asarray(labels, dtype=float)


def predict_labels(values, model):
    values = np.asarray(values)
    if model.n_classes > 2:
        return np.argmax(values, axis=1)
    return np.where(values >= 0.0, 0, 1)


@dataclass
class QcnnConfig:
    var_depth: int = 4
    n_classes: int = 2
    epochs: int = 1000
    lr: float = 1e-3
    weight_decay: float = 1e-5
    shots: object = None
    batch_size: int = 0          # 0: full batch
    noise_p: float = 0.0
    early_stop_delta: float = 1e-4
    early_stop_patience: int = 20


def _sample_loss_grad(model, amps, label, shots, rng, noise_p):
    if noise_p > 0:
        amps = _noisy(amps, model.n_qubits, noise_p, rng)
    z, gz = qcnn_param_shift_grad(amps, model, shots, rng)
    if model.n_classes == 2:
        t = 1.0 - 2.0 * label
        return (z - t) ** 2, 2.0 * (z - t) * gz, None, None
    logits = model.fc_w * z + model.fc_b
    logits = logits - logits.max()
    p = np.exp(logits)
    p /= p.sum()
    loss = -np.log(max(p[label], 1e-300))
    d = p.copy()
    d[label] -= 1.0
    return loss, (d @ model.fc_w) * gz, d * z, d


def _noisy(amps, n, p, rng):
    psi = np.array(amps, dtype=np.complex128).reshape(1, -1)
    codes = np.full(n, kernels.RX, dtype=np.int64)
    qs = np.arange(n, dtype=np.int64)
    z = np.zeros(n, dtype=np.int64)
    kernels.apply_program_batch(psi, n, codes, qs, z, z, noise_angles(n, p, rng)[None, :])
    return psi[0]


def qcnn_train(amps, labels, config, rng, model=None):
    """Train on rows of ``amps``; returns (model, per-epoch mean training loss)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = int(np.log2(amps.shape[1]))
    if model is None:
        model = init_qcnn(n, config.var_depth, rng, config.n_classes)
    params = [model.params] + ([model.fc_w, model.fc_b] if model.n_classes > 2 else [])
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    curve = []
    best, stale = np.inf, 0
    bs = config.batch_size or len(labels)
    for _ in range(config.epochs):
        order = rng.permutation(len(labels))
        losses = []
        for s in range(0, len(labels), bs):
            idx = order[s:s + bs]
            g_par = np.zeros_like(model.params)
            g_w = np.zeros(model.n_classes) if model.n_classes > 2 else None
            g_b = np.zeros(model.n_classes) if model.n_classes > 2 else None
            for i in idx:
                loss, gp, gw, gb = _sample_loss_grad(model, amps[i], int(labels[i]), config.shots,
                                                     rng, config.noise_p)
                losses.append(loss)
                g_par += gp / len(idx)
                if g_w is not None:
                    g_w += gw / len(idx)
                    g_b += gb / len(idx)
            opt.step([g_par] + ([g_w, g_b] if g_w is not None else []))
        curve.append(float(np.mean(losses)))
        if config.shots is not None:
            if curve[-1] < best - config.early_stop_delta:
                best, stale = curve[-1], 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    return model, curve


def qcnn_outputs(amps, model, shots=None, rng=None, noise_p=0.0):
    vals = []
    for a in amps:
        if noise_p > 0:
            a = _noisy(a, model.n_qubits, noise_p, rng)
        vals.append(qcnn_forward(a, model, shots, rng))
    return np.array(vals)


def qcnn_evaluate(amps, labels, model, shots=None, rng=None, noise_p=0.0):
    pred = predict_labels(qcnn_outputs(amps, model, shots, rng, noise_p), model)
    return float(np.mean(pred == np.asarray(labels)))


def save_qcnn(model, path):
    e = {"dims": np.array([model.n_qubits, model.var_depth, model.n_classes], dtype=np.int64),
         "params": model.params}
    if model.fc_w is not None:
        e["fc_w"] = model.fc_w
        e["fc_b"] = model.fc_b
    container.save(path, b"QCNN", e)


def load_qcnn(path):
    e = container.load(path, b"QCNN")
    n, depth, k = (int(x) for x in e["dims"])
    return QcnnModel(n, depth, e["params"], pooling_stages(n), k, e.get("fc_w"), e.get("fc_b"))
