"""Flat ``key = value`` experiment configs with a typed schema.

Lines are ``key = value``; ``#`` starts a comment.  List keys take comma
separated values.  Shot values accept ``exact`` (or ``none``) for infinite
shots.  Later sources override earlier ones: preset, then file, then flags.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError

TASKS = ("task_a", "task_b", "task_a_open", "fashion")
METHODS = ("iqfm_contrastive", "iqfm_noncontrastive", "iqfm_onestep", "qcnn",
           "exact_qcnn", "shadow_svm", "classical_nn")


def _shots(text):
    t = text.strip().lower()
    if t in ("exact", "none", "inf"):
        return None
    v = int(t)
    if v < 1:
        raise ValueError("shot counts must be positive (use 'exact' for infinite)")
    return v


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text):
        items = [s for s in (p.strip() for p in text.split(",")) if s]
        return tuple(conv(s) for s in items)
    return parse


def _path(text):
    return text.strip() or None


# key -> (parser, default, description)
SCHEMA = {
    "task": (str, "task_a", "one of " + ", ".join(TASKS)),
    "methods": (_list(str), ("iqfm_contrastive",), "comma list from " + ", ".join(METHODS)),
    "n_trials": (int, 1, "independent trials (>= 1)"),
    "master_seed": (int, 0, "root of every per-trial seed"),
    "workers": (int, 1, "parallel trial processes"),
    "n_qubits": (int, 8, "register width for the spin-chain tasks"),
    "L": (int, 5, "IQFM / classical network depth"),
    "B": (int, 3, "rotated measurement bases besides Z"),
    "M": (int, 16, "classical-modular width (multiple of 16)"),
    "var_depth": (int, 4, "QCNN repetitions per conv block"),
    "tau": (float, 8.0, "contrastive temperature"),
    "outer_epochs": (int, 30, "contrastive outer epochs per layer"),
    "inner_epochs": (int, 40, "Adam steps per outer epoch"),
    "lr": (float, 1e-3, "contrastive Adam learning rate"),
    "readout_epochs": (int, 500, "dense readout epochs"),
    "readout_batch": (int, 16, "dense readout minibatch"),
    "readout_lr": (float, 1e-3, "dense readout learning rate"),
    "readout_weight_decay": (float, 1e-4, "dense readout L2 weight decay"),
    "augment_positive": (_bool, True, "rotate positives by 90 degrees (image tasks)"),
    "onestep_encoding": (str, "binary", "label register encoding: binary or onehot"),
    "qcnn_epochs": (int, 1000, "QCNN epochs in exact mode"),
    "qcnn_shot_epochs": (int, 300, "QCNN epochs with finite shots"),
    "qcnn_lr": (float, 1e-3, "QCNN Adam learning rate"),
    "qcnn_weight_decay": (float, 1e-5, "QCNN L2 weight decay"),
    "qcnn_batch": (int, 0, "QCNN minibatch (0 = full batch)"),
    "shadow_snapshots": (_shots, None, "snapshots per sample (exact = use the shot value, else 1000)"),
    "noise_p": (_list(float), (0.0,), "noise strengths; sweeps always include 0"),
    "shots": (_list(_shots), (None,), "shot budgets per feature; exact = infinite"),
    "L_values": (_list(int), (1, 2, 3, 4, 5), "depths for the depth sweep"),
    "M_values": (_list(int), (16,), "widths for the fashion runs"),
    "n_train": (int, 1000, "fashion training subset per trial"),
    "n_test": (int, 2000, "fashion test subset"),
    "task_b_train": (int, 50, "Task B training samples"),
    "task_b_test": (int, 1000, "Task B test samples"),
    "data_dir": (_path, None, "directory with generated datasets (generated if absent)"),
    "fashion_dir": (_path, None, "directory with the Fashion-MNIST IDX files"),
    "timing": (_bool, True, "record wall time (off gives byte-identical reports)"),
}

_LIST_KEYS = ("methods", "noise_p", "shots", "L_values", "M_values")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "task_a"
    methods: tuple = ("iqfm_contrastive",)
    n_trials: int = 1
    master_seed: int = 0
    workers: int = 1
    n_qubits: int = 8
    L: int = 5
    B: int = 3
    M: int = 16
    var_depth: int = 4
    tau: float = 8.0
    outer_epochs: int = 30
    inner_epochs: int = 40
    lr: float = 1e-3
    readout_epochs: int = 500
    readout_batch: int = 16
    readout_lr: float = 1e-3
    readout_weight_decay: float = 1e-4
    augment_positive: bool = True
    onestep_encoding: str = "binary"
    qcnn_epochs: int = 1000
    qcnn_shot_epochs: int = 300
    qcnn_lr: float = 1e-3
    qcnn_weight_decay: float = 1e-5
    qcnn_batch: int = 0
    shadow_snapshots: object = None
    noise_p: tuple = (0.0,)
    shots: tuple = (None,)
    L_values: tuple = (1, 2, 3, 4, 5)
    M_values: tuple = (16,)
    n_train: int = 1000
    n_test: int = 2000
    task_b_train: int = 50
    task_b_test: int = 1000
    data_dir: object = None
    fashion_dir: object = None
    timing: bool = True
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        validate(self)


def validate(cfg):
    if cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    if not cfg.methods:
        raise ConfigError("methods must not be empty")
    for m in cfg.methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    for key in _LIST_KEYS:
        if len(getattr(cfg, key)) == 0:
            raise ConfigError(f"{key} must not be empty")
    if cfg.n_trials < 1:
        raise ConfigError("n_trials must be at least 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    if cfg.onestep_encoding not in ("binary", "onehot"):
        raise ConfigError("onestep_encoding must be binary or onehot")
    if any(not 0.0 <= p <= 1.0 for p in cfg.noise_p):
        raise ConfigError("noise strengths must lie in [0, 1]")
    if min(cfg.L, *cfg.L_values) < 1:
        raise ConfigError("depths must be at least 1")


def parse_text(text, source="<text>"):
    """Parse config text into a dict of typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def load_file(path):
    path = Path(path)
    return parse_text(path.read_text(), str(path))


# Desk presets keep CI in minutes; paper presets follow the published scale.
PRESETS = {
    "desk": {"n_trials": 5, "outer_epochs": 30, "qcnn_epochs": 100, "qcnn_shot_epochs": 50,
             "n_train": 1000, "n_test": 2000, "M_values": (16,), "L": 5},
    "paper": {"n_trials": 50, "outer_epochs": 100, "qcnn_epochs": 1000, "qcnn_shot_epochs": 300,
              "n_train": 5000, "n_test": 10000, "M_values": (16, 64, 256), "L": 5},
}


def build_config(preset=None, path=None, overrides=None):
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        values.update(PRESETS[preset])
    if path is not None:
        values.update(load_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**values)


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)


def dump(cfg):
    """Config as text that ``parse_text`` reads back to the same values."""
    lines = []
    for f in fields(cfg):
        if f.name == "extra":
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            text = ", ".join(_fmt(f.name, x) for x in v)
        else:
            text = _fmt(f.name, v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


_SHOT_KEYS = ("shots", "shadow_snapshots")


def _fmt(key, v):
    if v is None:
        return "exact" if key in _SHOT_KEYS else ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def schema_text():
    lines = ["# key = default    # description"]
    for k, (_, default, doc) in SCHEMA.items():
        if isinstance(default, tuple):
            d = ", ".join(_fmt(k, x) for x in default)
        else:
            d = _fmt(k, default)
        lines.append(f"{k} = {d}    # {doc}")
    return "\n".join(lines) + "\n"
