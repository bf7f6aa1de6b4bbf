"""Report rows, CSV I/O, grouped metrics and embedding export."""
import csv
import io
import json
import logging
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from ..container import atomic_write_text
from ..errors import FormatError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReportRow:
    run_id: str
    task: str
    method: str
    L: int
    var_depth: int
    M: int
    shots: object          # None = exact
    noise_p: float
    seed: int
    accuracy: float        # nan when the run failed
    retention: object      # None outside noise sweeps
    wall_time: float


COLUMNS = tuple(f.name for f in fields(ReportRow))


def _cell(name, v):
    if v is None:
        return "exact" if name == "shots" else ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_cell(n, v) for n, v in zip(COLUMNS, astuple(r))])
    return buf.getvalue()


def write_report(rows, path):
    atomic_write_text(path, rows_to_csv(rows))


def _parse(name, text):
    if name in ("run_id", "task", "method"):
        return text
    if name in ("L", "var_depth", "M", "seed"):
        return int(text)
    if name == "shots":
        return None if text == "exact" else int(text)
    if name == "retention" and text == "":
        return None
    return float(text)


def read_report(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != COLUMNS:
            raise FormatError(f"{path}: unexpected header {header}")
        return [ReportRow(*(_parse(n, t) for n, t in zip(COLUMNS, rec))) for rec in reader]


SWEEP_KEYS = ("L", "var_depth", "M", "shots", "noise_p")


def compute_metrics(rows, by=SWEEP_KEYS):
    """Mean and sample std of accuracy (and retention) per (task, method, sweep point).

    Failed runs (nan accuracy) are counted but left out of the statistics;
    groups with a single value report std 0 and ``degenerate = True``.
    """
    groups = {}
    for r in rows:
        key = (r.task, r.method) + tuple(getattr(r, k) for k in by)
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple((x is None, x) for x in k)):
        rs = groups[key]
        acc = np.array([r.accuracy for r in rs if not math.isnan(r.accuracy)])
        if acc.size == 0:
            log.warning("group %s has no successful runs; skipped", key)
            continue
        entry = dict(zip(("task", "method") + tuple(by), key))
        entry.update(n=int(acc.size), failed=len(rs) - int(acc.size),
                     mean=float(acc.mean()),
                     std=float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
                     degenerate=bool(acc.size == 1))
        ret = np.array([r.retention for r in rs
                        if r.retention is not None and not math.isnan(r.accuracy)])
        if ret.size:
            entry["retention_mean"] = float(ret.mean())
            entry["retention_std"] = float(ret.std(ddof=1)) if ret.size > 1 else 0.0
        out.append(entry)
    return out


def write_summary(summary, path):
    text = json.dumps({"std_convention": "sample standard deviation (n - 1)",
                       "groups": summary}, indent=2, sort_keys=True)
    atomic_write_text(path, text + "\n")


def export_embeddings(representations, labels, path):
    """CSV with ``label, c0, c1, ...``: one row per sample, 17 significant digits."""
    reps = [np.ravel(np.asarray(r, dtype=float)) for r in representations]
    labels = list(labels)
    if len(reps) != len(labels):
        raise FormatError(f"{len(reps)} representations but {len(labels)} labels")
    width = len(reps[0]) if reps else 0
    if any(len(r) != width for r in reps):
        raise FormatError("representation lengths differ")
    lines = [",".join(["label"] + [f"c{k}" for k in range(width)])]
    for y, r in zip(labels, reps):
        lines.append(",".join([str(int(y))] + [format(v, ".17g") for v in r]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embeddings(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        rows = [(int(rec[0]), np.array([float(v) for v in rec[1:]])) for rec in reader]
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0))
    return np.array([y for y, _ in rows]), np.stack([r for _, r in rows])
