"""Experiment orchestration: data, per-method runners, sweeps and reports.

Randomness.  Trial ``t`` of a run with master seed ``s`` reports the seed
``SeedSequence([s, t]).generate_state(1, uint64)[0]``.  Every consumer draws
from its own stream ``SeedSequence([s, t, crc32(method), crc32(purpose), ...])``
so results do not depend on which other methods, sweep points or worker
counts were requested.  The Task B dataset is drawn once per run from
``SeedSequence([s, crc32("task_b")])``; Fashion subsets come from a
per-trial stream shared by all methods of that trial.
"""
import logging
import multiprocessing as mp
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import spinchain
from ..baselines import classical, exact_qcnn, qcnn, shadows, svm
from ..container import atomic_write_text
from ..errors import ArgumentError, ConfigError, IqfmError
from ..learn import (JointQuantumSource, LossTrace, QuantumSource, ImageSource, TrainSchedule,
                     accuracy, label_register_size, one_step_scores, train_layerwise,
                     train_one_step, train_readout)
from ..qfm import ModelConfig, forward_classical_batch, forward_quantum_batch, init_model, is_exact
from ..statevector import StateVector, apply_rx_noise
from . import config as cfgmod
from .idx import load_fashion
from .report import ReportRow, compute_metrics, write_report, write_summary

log = logging.getLogger(__name__)

KINDS = ("train", "sweep-noise", "sweep-shots", "sweep-depth", "fashion")
IQFM_METHODS = ("iqfm_contrastive", "iqfm_noncontrastive", "iqfm_onestep")
DEPTH_METHODS = ("iqfm_contrastive", "iqfm_noncontrastive", "iqfm_onestep", "classical_nn")


def _tag(x):
    return zlib.crc32(str(x).encode())


def trial_seed(master_seed, trial):
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1, np.uint64)[0])


def stream(master_seed, trial, *tags):
    return np.random.default_rng(np.random.SeedSequence([master_seed, trial, *map(_tag, tags)]))


@dataclass(frozen=True)
class Point:
    L: int
    M: int
    shots: object
    noise_p: float

    def label(self):
        s = "exact" if self.shots is None else str(self.shots)
        return f"L{self.L}-M{self.M}-s{s}-p{self.noise_p!r}"


# ------------------------------------------------------------------ data


def _dataset_paths(data_dir, task):
    d = Path(data_dir)
    return d / f"{task}_train.iqgs", d / f"{task}_test.iqgs"


def generate_task(cfg, task=None, workers=1):
    """(train, test) for a spin-chain task, generated deterministically."""
    task = task or cfg.task
    if task == "task_a":
        return spinchain.generate_task_a(n_qubits=cfg.n_qubits, workers=workers)
    if task == "task_a_open":
        return spinchain.generate_task_a(n_qubits=9, model="A_open", workers=workers,
                                         check_diagnostics=False)
    if task == "task_b":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, _tag("task_b")]))
        return spinchain.generate_task_b(rng, n_qubits=cfg.n_qubits, n_train=cfg.task_b_train,
                                         n_test=cfg.task_b_test, workers=workers)
    raise ConfigError(f"{task} is not a spin-chain task")


def load_task_data(cfg):
    if cfg.task == "fashion":
        if not cfg.fashion_dir:
            raise ConfigError("fashion runs need fashion_dir pointing at the IDX files")
        return load_fashion(cfg.fashion_dir)
    if cfg.data_dir:
        tr, te = _dataset_paths(cfg.data_dir, cfg.task)
        if tr.exists() and te.exists():
            return spinchain.load_dataset(tr), spinchain.load_dataset(te)
    return generate_task(cfg, workers=cfg.workers)


def save_task_data(cfg, out_dir, tasks=("task_a", "task_b", "task_a_open")):
    out = []
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    for task in tasks:
        train, test = generate_task(cfg, task, workers=cfg.workers)
        for ds, path in zip((train, test), _dataset_paths(out_dir, task)):
            spinchain.save_dataset(ds, path)
            out.append(path)
    return out


def n_classes_of(task):
    return {"task_a": 2, "task_a_open": 2, "task_b": 4, "fashion": 10}[task]


# --------------------------------------------------------------- runners

def schedule_of(cfg):
    return TrainSchedule(tau=cfg.tau, outer_epochs=cfg.outer_epochs, inner_epochs=cfg.inner_epochs,
                         lr=cfg.lr, readout_lr=cfg.readout_lr,
                         readout_weight_decay=cfg.readout_weight_decay,
                         readout_batch=cfg.readout_batch, readout_epochs=cfg.readout_epochs,
                         augment_positive=cfg.augment_positive, master_seed=cfg.master_seed)


class Ctx:
    """Everything a runner needs for one (trial, method)."""

    def __init__(self, cfg, trial, method, train, test):
        self.cfg = cfg
        self.trial = trial
        self.method = method
        self.train = train
        self.test = test
        self.n_classes = n_classes_of(cfg.task)
        self.schedule = schedule_of(cfg)

    def rng(self, *tags):
        return stream(self.cfg.master_seed, self.trial, self.method, *tags)


def _readout_accuracy(ctx, h_train, h_test, depth, point):
    cat = lambda hs: np.concatenate(hs[:depth], axis=1)  # noqa: E731
    net = train_readout(cat(h_train), ctx.train.labels, ctx.schedule,
                        ctx.rng("readout", point.label(), depth), ctx.n_classes)
    return accuracy(net.predict(cat(h_test)), ctx.test.labels)


def run_iqfm(ctx, point, depths):
    """Accuracy per depth; layers are trained greedily, so a depth-l prefix of
    a deeper model is exactly an l-layer model."""
    cfg, method = ctx.cfg, ctx.method
    L = max(depths)
    train_rng = ctx.rng("train", point.label())
    eval_rng = ctx.rng("eval", point.label())
    if method == "iqfm_onestep":
        return _run_onestep(ctx, point, depths, train_rng, eval_rng)
    mc = ModelConfig(mode="quantum", n_qubits=ctx.train.n_qubits, L=L, B=cfg.B)
    model = init_model(mc, ctx.rng("init"))
    src = QuantumSource(model, ctx.train.amplitudes, point.noise_p, point.shots, train_rng)
    if method == "iqfm_contrastive":
        train_layerwise(src, ctx.train.labels, ctx.schedule, train_rng, layers=L)
    h_train = src.representations(range(len(ctx.train)), L)
    h_test = forward_quantum_batch(model, ctx.test.amplitudes, point.noise_p, point.shots, eval_rng)
    return {l: _readout_accuracy(ctx, h_train, h_test, l, point) for l in depths}


def _run_onestep(ctx, point, depths, train_rng, eval_rng):
    cfg = ctx.cfg
    K = ctx.n_classes
    enc = cfg.onestep_encoding
    n = ctx.train.n_qubits + label_register_size(K, enc)
    mc = ModelConfig(mode="quantum", n_qubits=n, L=max(depths), B=cfg.B)
    model = init_model(mc, ctx.rng("init"))
    src = JointQuantumSource(model, ctx.train.amplitudes, K, enc, point.noise_p, point.shots,
                             train_rng)
    _, anchors, _ = train_one_step(src, ctx.train.labels, K, ctx.schedule, train_rng)
    test_src = JointQuantumSource(model, ctx.test.amplitudes, K, enc, point.noise_p, point.shots,
                                  eval_rng)
    out = {}
    for l in depths:
        scores = one_step_scores(test_src, range(len(ctx.test)), anchors[:l], K)
        out[l] = accuracy(np.argmax(scores, axis=1), ctx.test.labels)
    return out


def run_qcnn(ctx, point):
    cfg = ctx.cfg
    qc = qcnn.QcnnConfig(var_depth=cfg.var_depth, n_classes=ctx.n_classes,
                         epochs=cfg.qcnn_epochs if is_exact(point.shots) else cfg.qcnn_shot_epochs,
                         lr=cfg.qcnn_lr, weight_decay=cfg.qcnn_weight_decay, shots=point.shots,
                         batch_size=cfg.qcnn_batch, noise_p=point.noise_p)
    model = qcnn.init_qcnn(ctx.train.n_qubits, cfg.var_depth, ctx.rng("init"), ctx.n_classes)
    model, _ = qcnn.qcnn_train(ctx.train.amplitudes, ctx.train.labels, qc,
                               ctx.rng("train", point.label()), model)
    return qcnn.qcnn_evaluate(ctx.test.amplitudes, ctx.test.labels, model, point.shots,
                              ctx.rng("eval", point.label()), point.noise_p)


def run_exact_qcnn(ctx, point):
    if ctx.test.n_qubits != exact_qcnn.N_QUBITS:
        raise ConfigError("exact_qcnn needs the 9-qubit open-chain task (task_a_open)")
    rng = ctx.rng("eval", point.label())
    pred = []
    for i in range(len(ctx.test)):
        s = ctx.test.state(i)
        if point.noise_p > 0:
            s = apply_rx_noise(s, point.noise_p, rng)
        pred.append(exact_qcnn.exact_qcnn_predict(s, point.shots, rng)[1])
    return accuracy(pred, ctx.test.labels)


def run_shadow_svm(ctx, point):
    if ctx.n_classes != 2:
        raise ConfigError("shadow_svm handles binary tasks only")
    cfg = ctx.cfg
    S = cfg.shadow_snapshots or (1000 if point.shots is None else point.shots)
    rng = ctx.rng("shadows", point.label())

    def collect(ds):
        return [shadows.shadow_collect(StateVector(ds.n_qubits, ds.amplitudes[i]), S, rng,
                                       point.noise_p) for i in range(len(ds))]

    tr, te = collect(ctx.train), collect(ctx.test)
    G, keep, _ = shadows.shadow_gram_excluding(tr)
    y = ctx.train.labels[keep]
    if len(np.unique(y)) < 2:
        raise ArgumentError("fewer than two classes left after excluding shadow samples")
    model = svm.svm_train_cv(G, y)
    K, d_te, d_tr = shadows.kernel_matrix(te, [tr[i] for i in keep])
    ok = d_te > 0
    pred = np.empty(len(te), dtype=np.int64)
    pm = model.predict(K[ok] / np.sqrt(np.outer(d_te[ok], d_tr)))
    pred[ok] = np.where(pm > 0, 1, 0)
    # test samples whose purity estimate is not positive fall back to the majority class
    pred[~ok] = int(np.mean(y) >= 0.5)
    return accuracy(pred, ctx.test.labels)


def _fashion_split(ctx):
    cfg = ctx.cfg
    rng = stream(cfg.master_seed, ctx.trial, "fashion-subset")
    tr = rng.choice(len(ctx.train), size=min(cfg.n_train, len(ctx.train)), replace=False)
    te = rng.choice(len(ctx.test), size=min(cfg.n_test, len(ctx.test)), replace=False)
    return ctx.train.subset(np.sort(tr)), ctx.test.subset(np.sort(te))


def run_fashion(ctx, point, depths):
    cfg, method = ctx.cfg, ctx.method
    train, test = _fashion_split(ctx)
    sub = Ctx(cfg, ctx.trial, method, train, test)
    L = max(depths)
    train_rng = ctx.rng("train", point.label())
    keys = [(i, False) for i in range(len(train))]
    if method == "classical_nn":
        weights = classical.init_classical(ctx.rng("init"), point.M, L)
        src = classical.ClassicalSource(weights, train.images)
        train_layerwise(src, train.labels, ctx.schedule, train_rng, layers=L,
                        augment=cfg.augment_positive)
        h_train = src.representations(keys, L)
        widths = [train.images.shape[1]] + [point.M] * (L + 1)
        h_test = classical.classical_baseline_forward(widths, weights, test.images).layers
    elif method in ("iqfm_contrastive", "iqfm_noncontrastive"):
        mc = ModelConfig(mode="classical_modular", L=L, B=cfg.B, M=point.M)
        model = init_model(mc, ctx.rng("init"))
        src = ImageSource(model, train.images, point.shots, train_rng)
        if method == "iqfm_contrastive":
            train_layerwise(src, train.labels, ctx.schedule, train_rng, layers=L,
                            augment=cfg.augment_positive)
        h_train = src.representations(keys, L)
        h_test = forward_classical_batch(model, test.images, point.shots,
                                         ctx.rng("eval", point.label()))
    else:
        raise ConfigError(f"{method} does not run on fashion")
    return {l: _readout_accuracy(sub, h_train, h_test, l, point) for l in depths}


def _check_method(task, method):
    if task == "fashion" and method not in ("iqfm_contrastive", "iqfm_noncontrastive",
                                            "classical_nn"):
        raise ConfigError(f"{method} does not run on fashion")
    if task != "fashion" and method == "classical_nn":
        raise ConfigError("classical_nn runs on fashion only")


def run_method(ctx, point, depths):
    """{depth: accuracy} for one method at one sweep point."""
    _check_method(ctx.cfg.task, ctx.method)
    if ctx.cfg.task == "fashion":
        return run_fashion(ctx, point, depths)
    if ctx.method in IQFM_METHODS:
        return run_iqfm(ctx, point, depths)
    runner = {"qcnn": run_qcnn, "exact_qcnn": run_exact_qcnn, "shadow_svm": run_shadow_svm}
    return {depths[0]: runner[ctx.method](ctx, point)}


# ----------------------------------------------------------- orchestration

def sweep_points(cfg, kind):
    shots0, p0 = cfg.shots[0], cfg.noise_p[0]
    if kind == "train":
        return [Point(cfg.L, cfg.M, shots0, p0)]
    if kind == "sweep-noise":
        ps = sorted(set(cfg.noise_p) | {0.0})
        return [Point(cfg.L, cfg.M, shots0, p) for p in ps]
    if kind == "sweep-shots":
        return [Point(cfg.L, cfg.M, s, p0) for s in cfg.shots]
    if kind == "sweep-depth":
        return [Point(max(cfg.L_values), cfg.M, shots0, p0)]
    if kind == "fashion":
        return [Point(cfg.L, m, shots0, p0) for m in cfg.M_values]
    raise ConfigError(f"unknown experiment kind {kind!r}")


def _row_width(cfg, method, point):
    M = point.M if cfg.task == "fashion" else 0
    vd = cfg.var_depth if method == "qcnn" else 0
    return M, vd


def run_job(cfg, kind, trial, method, train, test):
    """All rows of one (trial, method); errors become nan rows."""
    ctx = Ctx(cfg, trial, method, train, test)
    seed = trial_seed(cfg.master_seed, trial)
    rows, errors = [], []
    for pi, point in enumerate(sweep_points(cfg, kind)):
        if kind == "sweep-depth" and method in DEPTH_METHODS:
            depths = sorted(set(cfg.L_values))
        elif method in DEPTH_METHODS or cfg.task == "fashion":
            depths = [point.L]
        else:
            depths = [0]
        t0 = time.perf_counter()
        try:
            accs = run_method(ctx, point, depths)
        except (IqfmError, ValueError, ArithmeticError) as exc:
            log.error("trial %d %s %s failed: %s", trial, method, point.label(), exc)
            accs = {d: float("nan") for d in depths}
            errors.append((trial, method, point.label(), f"{type(exc).__name__}: {exc}"))
        wall = time.perf_counter() - t0 if cfg.timing else 0.0
        M, vd = _row_width(cfg, method, point)
        for d in depths:
            run_id = f"{cfg.task}-{method}-t{trial:03d}-L{d}-M{M}-" \
                     f"s{'exact' if point.shots is None else point.shots}-p{point.noise_p!r}"
            rows.append(((trial, pi), d, ReportRow(run_id, cfg.task, method, d, vd, M, point.shots,
                                                  float(point.noise_p), seed, float(accs[d]),
                                                  None, float(wall))))
    if kind == "sweep-noise":
        rows = _with_retention(rows)
    return rows, errors


def _with_retention(rows):
    base = {}
    for _, _, r in rows:
        if r.noise_p == 0.0:
            base[r.L] = r.accuracy
    out = []
    for key, d, r in rows:
        a0 = base.get(r.L, float("nan"))
        ret = r.accuracy / a0 if a0 and not np.isnan(a0) else float("nan")
        out.append((key, d, replace(r, retention=float(ret))))
    return out


_SHARED = {}


def _pool_job(args):
    cfg, kind, trial, method = args
    return run_job(cfg, kind, trial, method, _SHARED["train"], _SHARED["test"])


@dataclass
class ExperimentResult:
    rows: list
    errors: list
    summary: list
    paths: dict


def run_experiment(cfg, kind="train", out_dir=None, data=None):
    """Run every (trial, method) job and write report.csv, summary.json and errors.csv."""
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    if kind == "fashion" and cfg.task != "fashion":
        raise ConfigError("run-fashion needs task = fashion")
    train, test = data if data is not None else load_task_data(cfg)
    methods = list(dict.fromkeys(cfg.methods))
    jobs = [(cfg, kind, t, m) for t in range(cfg.n_trials) for m in methods]
    if cfg.workers > 1 and len(jobs) > 1:
        _SHARED.update(train=train, test=test)
        try:
            with ProcessPoolExecutor(cfg.workers, mp_context=mp.get_context("fork")) as ex:
                results = list(ex.map(_pool_job, jobs))
        finally:
            _SHARED.clear()
    else:
        results = [run_job(c, k, t, m, train, test) for c, k, t, m in jobs]
    keyed, errors = [], []
    for (_, _, t, m), (rows, errs) in zip(jobs, results):
        keyed.extend(((key, methods.index(m), d), r) for key, d, r in rows)
        errors.extend(errs)
    keyed.sort(key=lambda kr: kr[0])
    rows = [r for _, r in keyed]
    summary = compute_metrics(rows)
    paths = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.csv", "summary": out / "summary.json",
                 "errors": out / "errors.csv", "config": out / "config.txt"}
        write_report(rows, paths["report"])
        write_summary(summary, paths["summary"])
        atomic_write_text(paths["config"], cfgmod.dump(cfg))
        lines = ["trial,method,point,error"] + [
            f"{t},{m},{p},\"{e.replace(chr(34), chr(39))}\"" for t, m, p, e in errors]
        atomic_write_text(paths["errors"], "\n".join(lines) + "\n")
    return ExperimentResult(rows, errors, summary, paths)


def trained_representations(cfg, data=None, trial=0):
    """Test-set representations of a contrastively trained IQFM (trial 0 by default)."""
    train, test = data if data is not None else load_task_data(cfg)
    if cfg.task == "fashion":
        raise ConfigError("embedding export covers the spin-chain tasks")
    ctx = Ctx(cfg, trial, "iqfm_contrastive", train, test)
    point = Point(cfg.L, cfg.M, cfg.shots[0], cfg.noise_p[0])
    mc = ModelConfig(mode="quantum", n_qubits=train.n_qubits, L=cfg.L, B=cfg.B)
    model = init_model(mc, ctx.rng("init"))
    train_rng = ctx.rng("train", point.label())
    src = QuantumSource(model, train.amplitudes, point.noise_p, point.shots, train_rng)
    trace = LossTrace()
    train_layerwise(src, train.labels, ctx.schedule, train_rng, layers=cfg.L, trace=trace)
    hs = forward_quantum_batch(model, test.amplitudes, point.noise_p, point.shots,
                               ctx.rng("eval", point.label()))
    return np.concatenate(hs, axis=1), test.labels, trace
