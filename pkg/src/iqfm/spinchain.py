"""Cluster-type spin chains: Hamiltonians, ground states, phase labels, datasets.

Three models are supported (couplings ``c1, c2``):

``A_periodic``  H = -sum Z_i X_{i+1} Z_{i+2} - c1 sum X_i - c2 sum X_i X_{i+1}
``B_periodic``  H =  sum Z_i - c1 sum X_i X_{i+1} - c2 sum X_{i-1} Z_i X_{i+1}
``A_open``      the A model with the three-body and XX sums truncated at the
                chain ends (n-2 and n-1 terms).

All terms are real, so matrices are real symmetric.
"""
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import (ArgumentError, FormatError, GenerationError,
                     LabelingError, NumericError)
from .statevector import MAX_QUBITS, StateVector, expect_pauli

log = logging.getLogger(__name__)

MODELS = ("A_periodic", "B_periodic", "A_open")
MODEL_IDS = {m: i for i, m in enumerate(MODELS)}

TASK_A_TRAIN_H2 = (0.0, -1.109)
TASK_A_TEST_H2 = (-1.35, -1.285, -1.225, -1.154, -1.109, -1.079, -1.049,
                  -1.024, -1.0009, -1.004, -0.3531, -0.2479, -0.1377,
                  -0.02755, 0.09766, 0.2229, 0.3631, 0.5033, 0.6636, 0.8439)
TASK_A_N_H1 = 40
TASK_A_H1_RANGE = (0.0, 1.6)

RESIDUAL_TOL = 1e-8
DIAG_THRESHOLD = 0.25


@dataclass(frozen=True)
class HamiltonianSpec:
    model: str
    n_qubits: int
    c1: float
    c2: float


@dataclass
class DenseHermitian:
    matrix: np.ndarray

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass
class GroundStateSample:
    spec: HamiltonianSpec
    energy: float
    amplitudes: StateVector
    label: int
    phase_name: str


# ---------------------------------------------------------------- operators

def pauli_term(n, letters):
    """Dense real matrix of a product of X/Z letters, e.g. ``{0: "Z", 1: "X"}``."""
    xm = zm = 0
    for q, ch in letters.items():
        bit = 1 << (n - 1 - (q % n))
        if ch == "X":
            xm ^= bit
        elif ch == "Z":
            zm ^= bit
        else:
            raise ArgumentError(f"only X and Z letters are used here, got {ch!r}")
    idx = np.arange(1 << n)
    sign = np.ones(1 << n)
    z = idx & zm
    while np.any(z):
        sign *= 1 - 2 * (z & 1)
        z >>= 1
    m = np.zeros((1 << n, 1 << n))
    m[idx ^ xm, idx] = sign
    return m


@lru_cache(maxsize=8)
def _model_terms(model, n):
    """(constant, c1-term, c2-term) matrices for a model."""
    if model == "A_periodic" or model == "A_open":
        open_ = model == "A_open"
        n3 = n - 2 if open_ else n
        n2 = n - 1 if open_ else n
        k = -sum(pauli_term(n, {i: "Z", i + 1: "X", i + 2: "Z"}) for i in range(n3))
        a = -sum(pauli_term(n, {i: "X"}) for i in range(n))
        b = -sum(pauli_term(n, {i: "X", i + 1: "X"}) for i in range(n2))
    elif model == "B_periodic":
        k = sum(pauli_term(n, {i: "Z"}) for i in range(n))
        a = -sum(pauli_term(n, {i: "X", i + 1: "X"}) for i in range(n))
        b = -sum(pauli_term(n, {i - 1: "X", i: "Z", i + 1: "X"}) for i in range(n))
    else:
        raise ArgumentError(f"unsupported model {model!r}")
    for m in (k, a, b):
        m.setflags(write=False)
    return k, a, b


def build_hamiltonian(spec):
    if spec.model not in MODELS:
        raise ArgumentError(f"unsupported model {spec.model!r}")
    n = spec.n_qubits
    if not 3 <= n <= MAX_QUBITS:
        raise ArgumentError(f"n_qubits must be in 3..{MAX_QUBITS}")
    k, a, b = _model_terms(spec.model, n)
    return DenseHermitian(k + spec.c1 * a + spec.c2 * b)


def ground_state(h):
    """Lowest eigenpair with the largest-magnitude amplitude made real positive.

    Degenerate ground spaces keep whichever vector LAPACK returns, which is
    deterministic for a given matrix.
    """
    m = h.matrix if isinstance(h, DenseHermitian) else np.asarray(h)
    if np.iscomplexobj(m) and not np.any(m.imag):
        m = m.real
    w, v = scipy.linalg.eigh(m, subset_by_index=[0, 0], driver="evr")
    e0 = float(w[0])
    vec = v[:, 0].astype(np.complex128)
    vec /= np.linalg.norm(vec)
    k = int(np.argmax(np.abs(vec)))
    vec *= np.conj(vec[k]) / abs(vec[k])
    res = float(np.linalg.norm(m @ vec - e0 * vec))
    if res > RESIDUAL_TOL:
        raise NumericError(f"ground state residual {res:.3e} exceeds {RESIDUAL_TOL}")
    n = int(round(np.log2(m.shape[0])))
    return e0, StateVector(n, vec)


def eigen_residual(h, energy, state):
    m = h.matrix if isinstance(h, DenseHermitian) else np.asarray(h)
    v = state.amplitudes
    return float(np.linalg.norm(m @ v - energy * v))


# -------------------------------------------------------------- diagnostics

def _word(n, letters):
    s = ["I"] * n
    for q, ch in letters.items():
        s[q % n] = ch
    return "".join(s)


def compute_order_diagnostics(state, periodic=True):
    """Pauli-expectation diagnostics of the phase a state sits in.

    ``string_order`` is the translation average of <Z_i X_{i+1} X_{i+3} Z_{i+4}>
    minus that of <X_{i+1} X_{i+3}>.  The first string is a product of two
    cluster stabilisers (so it is 1 on the cluster state); the second is the
    same string after the cluster entangler, so the difference is odd under
    the duality that swaps the cluster and paramagnetic points and vanishes
    on the self-dual line.  The result is clipped to [-1, 1].

    ``mean_x`` is the site average of <X_i>; ``staggered_xx`` is minus the
    bond average of <X_i X_{i+1}>.
    """
    n = state.n_qubits
    starts = range(n) if periodic else range(n - 4)
    if n < 5:
        raise ArgumentError("string order needs at least 5 qubits")
    s = np.mean([expect_pauli(state, _word(n, {i: "Z", i + 1: "X", i + 3: "X", i + 4: "Z"}))
                 for i in starts])
    t = np.mean([expect_pauli(state, _word(n, {i + 1: "X", i + 3: "X"})) for i in starts])
    mean_x = np.mean([expect_pauli(state, _word(n, {i: "X"})) for i in range(n)])
    bonds = range(n) if periodic else range(n - 1)
    xx = np.mean([expect_pauli(state, _word(n, {i: "X", i + 1: "X"})) for i in bonds])
    return {"string_order": float(np.clip(s - t, -1.0, 1.0)),
            "mean_x": float(mean_x),
            "staggered_xx": float(-xx)}


def string_order_scan(c1_values, c2_values, n_qubits=8, model="A_periodic"):
    """Grid of string-order diagnostics, rows indexed by c2 and columns by c1.

    Used to (re)trace the Task A boundary table and to validate it.
    """
    out = np.empty((len(c2_values), len(c1_values)))
    periodic = model != "A_open"
    for r, c2 in enumerate(c2_values):
        for c, c1 in enumerate(c1_values):
            _, v = ground_state(build_hamiltonian(HamiltonianSpec(model, n_qubits, c1, c2)))
            out[r, c] = compute_order_diagnostics(v, periodic)["string_order"]
    return out


# ----------------------------------------------------------- boundary table

_EPS = 1e-12


@dataclass(frozen=True)
class Region:
    """A labelled region: a polygon (vertex list) or an intersection of
    half-planes ``a1*c1 + a2*c2 + b > 0``."""
    label: int
    name: str
    polygon: tuple = ()
    halfplanes: tuple = ()

    def contains(self, p):
        """True when ``p`` is inside or on the border (within 1e-12)."""
        if self.polygon:
            return _in_polygon(np.asarray(self.polygon, dtype=float), p)
        return all(a1 * p[0] + a2 * p[1] + b >= -_EPS for a1, a2, b in self.halfplanes)


def _segment_distance(a, b, p):
    ab = b - a
    t = np.clip(((p - a) * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
    return np.linalg.norm(a + t[..., None] * ab - p, axis=-1)


def _in_polygon(poly, p):
    p = np.asarray(p, dtype=float)
    a, b = poly, np.roll(poly, -1, axis=0)
    if np.min(_segment_distance(a, b, p)) <= _EPS:
        return True
    inside = False
    for (x1, y1), (x2, y2) in zip(a, b):
        if (y1 > p[1]) != (y2 > p[1]):
            x = x1 + (p[1] - y1) * (x2 - x1) / (y2 - y1)
            if x > p[0]:
                inside = not inside
    return inside


@dataclass(frozen=True)
class PhaseBoundaryTable:
    model: str
    regions: tuple
    boundaries: tuple  # polylines separating phases, used for distances
    n_classes: int

    def names(self):
        out = {}
        for r in self.regions:
            out.setdefault(r.label, r.name.split(":")[0])
        return out

    def locate(self, c1, c2):
        hits = [r for r in self.regions if r.contains((c1, c2))]
        if not hits:
            raise LabelingError(f"({c1}, {c2}) is outside every region of {self.model}")
        if len(hits) > 1:
            raise LabelingError(f"({c1}, {c2}) lies on a phase boundary of {self.model}")
        return hits[0]

    def distance_to_boundary(self, c1, c2):
        p = np.array([c1, c2], dtype=float)
        best = np.inf
        for line in self.boundaries:
            line = np.asarray(line, dtype=float)
            best = min(best, float(np.min(_segment_distance(line[:-1], line[1:], p))))
        return best


def assign_label(spec, boundary_table):
    return boundary_table.locate(spec.c1, spec.c2).label


def phase_name(spec, boundary_table):
    return boundary_table.locate(spec.c1, spec.c2).name


# Zero contour of the string-order diagnostic at n = 8 (periodic), traced on a
# 0.05 grid over c1 in [-0.5, 2], c2 in [-2, 2] with string_order_scan.
_A_LOWER = ((-0.500, -0.995), (-0.350, -0.981), (-0.200, -0.972), (-0.050, -0.968),
            (0.100, -0.968), (0.250, -0.974), (0.400, -0.985), (0.543, -1.000),
            (0.650, -1.014), (0.800, -1.039), (0.900, -1.059), (1.050, -1.092),
            (1.150, -1.116), (1.273, -1.150), (1.400, -1.187), (1.500, -1.218),
            (1.600, -1.251), (1.743, -1.300), (1.850, -1.338), (1.950, -1.375),
            (2.000, -1.394))
_A_UPPER = ((2.000, -0.678), (1.900, -0.616), (1.800, -0.552), (1.718, -0.500),
            (1.641, -0.450), (1.550, -0.390), (1.450, -0.323), (1.350, -0.255),
            (1.272, -0.200), (1.200, -0.148), (1.100, -0.076), (1.000, 0.000),
            (0.936, 0.050), (0.850, 0.118), (0.750, 0.200), (0.692, 0.250),
            (0.600, 0.330), (0.524, 0.400), (0.450, 0.470), (0.369, 0.550),
            (0.300, 0.621), (0.228, 0.700), (0.150, 0.789), (0.100, 0.851),
            (0.016, 0.950), (-0.050, 0.919), (-0.101, 0.850), (-0.184, 0.750),
            (-0.250, 0.674), (-0.320, 0.600), (-0.400, 0.518), (-0.471, 0.450),
            (-0.500, 0.422))
_A_BOX = (-0.5, 2.0, -2.0, 2.0)


def task_a_table(model="A_periodic"):
    x0, x1, y0, y1 = _A_BOX
    spt = _A_LOWER + _A_UPPER
    pm = _A_UPPER + ((x0, y1), (x1, y1))
    afm = ((x0, y0), (x1, y0)) + tuple(reversed(_A_LOWER))
    return PhaseBoundaryTable(
        model=model,
        regions=(Region(1, "SPT", polygon=spt),
                 Region(0, "paramagnetic", polygon=pm),
                 Region(0, "antiferromagnetic", polygon=afm)),
        boundaries=(_A_LOWER, _A_UPPER),
        n_classes=2)


# Task B: the model maps to free fermions with symbol f(z) = -1 + J1 z + J2 z^2;
# the phase is the winding number of f around the unit circle.  Its zeros
# cross |z| = 1 on the lines J2 = 1 - J1 (z = 1), J2 = 1 + J1 (z = -1) and
# J2 = -1 with |J1| < 2 (complex pair on the circle).
_B_SPT_UP = ((1, 1, -1), (-1, 1, -1))           # J1+J2>1, J2-J1>1
_B_FM = ((1, 1, -1), (1, -1, 1))                # J1+J2>1, J2-J1<1
_B_AFM = ((-1, -1, 1), (-1, 1, -1))             # J1+J2<1, J2-J1>1
_B_PM = ((-1, -1, 1), (1, -1, 1), (0, 1, 1))    # both < 1, J2 > -1
_B_SPT_LOW = ((-1, -1, 1), (1, -1, 1), (0, -1, -1))


def task_b_table():
    lines = (((-8.0, 9.0), (8.0, -7.0)),   # J2 = 1 - J1
             ((-8.0, -7.0), (8.0, 9.0)),   # J2 = 1 + J1
             ((-2.0, -1.0), (2.0, -1.0)))  # J2 = -1 between the two
    return PhaseBoundaryTable(
        model="B_periodic",
        regions=(Region(0, "SPT", halfplanes=_B_SPT_UP),
                 Region(0, "SPT", halfplanes=_B_SPT_LOW),
                 Region(1, "ferromagnetic", halfplanes=_B_FM),
                 Region(2, "antiferromagnetic", halfplanes=_B_AFM),
                 Region(3, "paramagnetic", halfplanes=_B_PM)),
        boundaries=lines,
        n_classes=4)


def default_table(model):
    if model == "B_periodic":
        return task_b_table()
    return task_a_table(model)


# ------------------------------------------------------------------ datasets

@dataclass
class Dataset:
    model: str
    n_qubits: int
    labels: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    energies: np.ndarray
    amplitudes: np.ndarray  # (n_samples, 2**n) complex

    def __len__(self):
        return int(self.labels.shape[0])

    def state(self, i):
        return StateVector(self.n_qubits, self.amplitudes[i])

    def samples(self, table=None):
        for i in range(len(self)):
            spec = HamiltonianSpec(self.model, self.n_qubits, float(self.c1[i]), float(self.c2[i]))
            name = phase_name(spec, table) if table is not None else ""
            yield GroundStateSample(spec, float(self.energies[i]), self.state(i),
                                    int(self.labels[i]), name)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.model, self.n_qubits, self.labels[idx], self.c1[idx],
                       self.c2[idx], self.energies[idx], self.amplitudes[idx])


def _solve_point(args):
    model, n, c1, c2 = args
    h = build_hamiltonian(HamiltonianSpec(model, n, c1, c2))
    e, v = ground_state(h)
    return e, v.amplitudes


def _diagonalize_points(model, n, points, workers):
    jobs = [(model, n, float(a), float(b)) for a, b in points]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_solve_point, jobs, chunksize=8))
    else:
        res = [_solve_point(j) for j in jobs]
    energies = np.array([r[0] for r in res])
    amps = np.array([r[1] for r in res]).reshape(len(jobs), 1 << n)
    return energies, amps


def _build_dataset(model, n, points, labels, workers):
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    energies, amps = _diagonalize_points(model, n, points, workers)
    return Dataset(model, n, np.asarray(labels, dtype=np.int64), points[:, 0].copy(),
                   points[:, 1].copy(), energies, amps)


def task_a_points():
    h1 = np.linspace(*TASK_A_H1_RANGE, TASK_A_N_H1)
    train = [(a, b) for b in TASK_A_TRAIN_H2 for a in h1]
    test = [(a, b) for b in TASK_A_TEST_H2 for a in h1]
    return train, test


def label_contradicted(string_order, label, threshold=DIAG_THRESHOLD):
    """True when the diagnostic is confidently on the other side of zero.

    Values within +-threshold are inconclusive at n = 8 and never count
    against a label.
    """
    if label == 1:
        return string_order < -threshold
    return string_order > threshold


def _flag_disagreements(ds, table, margin=0.1):
    periodic = ds.model != "A_open"
    flagged = []
    for i in range(len(ds)):
        if table.distance_to_boundary(ds.c1[i], ds.c2[i]) < margin:
            continue
        d = compute_order_diagnostics(ds.state(i), periodic)["string_order"]
        if label_contradicted(d, ds.labels[i]):
            flagged.append(i)
            log.warning("sample %d at (%.4f, %.4f): label %d but string order %.3f",
                        i, ds.c1[i], ds.c2[i], ds.labels[i], d)
    return flagged


def generate_task_a(boundary_table=None, n_qubits=8, model="A_periodic", workers=1,
                    check_diagnostics=True):
    """Return (train, test) ground-state datasets on the fixed Task A grids."""
    table = boundary_table or task_a_table(model)
    train_pts, test_pts = task_a_points()
    out = []
    for pts in (train_pts, test_pts):
        labels = [table.locate(a, b).label for a, b in pts]
        ds = _build_dataset(model, n_qubits, pts, labels, workers)
        if check_diagnostics:
            _flag_disagreements(ds, table)
        out.append(ds)
    return tuple(out)


def balanced_quota(total, n_classes):
    base, extra = divmod(total, n_classes)
    return [base + (1 if k < extra else 0) for k in range(n_classes)]


def draw_balanced_points(rng, table, total, low=-4.0, high=4.0, max_draws=1_000_000):
    """Rejection-sample (c1, c2) pairs until each class meets its quota.

    The rng is consumed as c1 then c2 for every draw; classes that are already
    full reject the draw.  Extra samples (when total % classes != 0) go to
    the lowest class ids.
    """
    quota = balanced_quota(total, table.n_classes)
    have = [0] * table.n_classes
    pts, labels = [], []
    draws = 0
    while len(pts) < total:
        if draws >= max_draws:
            raise GenerationError(f"class balance not reached after {max_draws} draws: {have}")
        draws += 1
        c1 = rng.uniform(low, high)
        c2 = rng.uniform(low, high)
        try:
            lab = table.locate(c1, c2).label
        except LabelingError:
            continue
        if have[lab] < quota[lab]:
            have[lab] += 1
            pts.append((c1, c2))
            labels.append(lab)
    return pts, labels


def generate_task_b(rng, boundary_table=None, n_qubits=8, n_train=50, n_test=1000, workers=1):
    """Return (train, test) class-balanced Task B datasets; train drawn first."""
    table = boundary_table or task_b_table()
    out = []
    for total in (n_train, n_test):
        pts, labels = draw_balanced_points(rng, table, total)
        out.append(_build_dataset("B_periodic", n_qubits, pts, labels, workers))
    return tuple(out)


# ---------------------------------------------------------------- file i/o

_MAGIC = b"IQGS"
_VERSION = 1
_HEADER = struct.Struct("<4sBBHII")
_SAMPLE_HEAD = struct.Struct("<Iddd")


def save_dataset(dataset, path):
    n = dataset.n_qubits
    parts = [_HEADER.pack(_MAGIC, _VERSION, MODEL_IDS[dataset.model], 0, n, len(dataset))]
    amp_dtype = np.dtype("<f8")
    for i in range(len(dataset)):
        parts.append(_SAMPLE_HEAD.pack(int(dataset.labels[i]), float(dataset.c1[i]),
                                       float(dataset.c2[i]), float(dataset.energies[i])))
        a = np.asarray(dataset.amplitudes[i], dtype=np.complex128)
        parts.append(np.stack([a.real, a.imag], axis=1).astype(amp_dtype).tobytes())
    data = b"".join(parts)
    from .container import atomic_write_bytes
    atomic_write_bytes(path, data)


def load_dataset(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, model_id, reserved, n, count = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if model_id >= len(MODELS):
        raise FormatError(f"{path}: unknown model id {model_id} at offset 5")
    if reserved != 0:
        raise FormatError(f"{path}: reserved field nonzero at offset 6")
    if not 1 <= n <= MAX_QUBITS:
        raise FormatError(f"{path}: n_qubits {n} out of range at offset 8")
    dim = 1 << n
    rec = _SAMPLE_HEAD.size + 16 * dim
    expected = _HEADER.size + count * rec
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {count} samples, "
                          f"found {len(data)} (truncation at offset {min(len(data), expected)})")
    labels = np.empty(count, dtype=np.int64)
    c1 = np.empty(count)
    c2 = np.empty(count)
    en = np.empty(count)
    amps = np.empty((count, dim), dtype=np.complex128)
    off = _HEADER.size
    for i in range(count):
        labels[i], c1[i], c2[i], en[i] = _SAMPLE_HEAD.unpack_from(data, off)
        off += _SAMPLE_HEAD.size
        pair = np.frombuffer(data, dtype="<f8", count=2 * dim, offset=off).reshape(dim, 2)
        amps[i].real = pair[:, 0]
        amps[i].imag = pair[:, 1]
        off += 16 * dim
    return Dataset(MODELS[model_id], n, labels, c1, c2, en, amps)
