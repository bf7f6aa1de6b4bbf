"""Classical shadows from random Pauli measurements and the shadow kernel.

A snapshot measures every qubit once in a uniformly random basis from
{X, Y, Z}.  Its single-qubit inverse is 3|b><b| - I, and for two snapshots
the trace of the product factorises over qubits with factors 5 (same basis,
same bit), -4 (same basis, other bit) and 1/2 (different bases).  K_ij is
the mean of that product over snapshot pairs, an unbiased estimate of
tr(rho_i rho_j); on the diagonal the s = t pairs are dropped.

Two routes compute the same numbers: a direct sum over snapshot pairs, and
a Pauli-coefficient route that averages each sample's snapshots into a
4^n-vector first (cost linear instead of quadratic in snapshots).
"""
import logging
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import ArgumentError, NumericError
from ..statevector import noise_angles

log = logging.getLogger(__name__)

BASES = ("X", "Y", "Z")


@dataclass
class ShadowSet:
    """Snapshots of one sample: ``codes[s, q] = 2 * basis + bit``."""
    n_qubits: int
    codes: np.ndarray

    @property
    def n_snapshots(self):
        return self.codes.shape[0]

    def bases(self):
        return self.codes // 2

    def bits(self):
        return self.codes % 2


def _basis_rotation(bases):
    """Per-snapshot RZ then RX angles mapping X/Y/Z measurements onto Z."""
    rz = np.where(bases == 0, np.pi / 2, 0.0)
    rx = np.where(bases == 2, 0.0, np.pi / 2)
    return rz, rx


def shadow_collect(state, n_snapshots, rng, noise_p=0.0):
    """Snapshots of ``state``; with ``noise_p`` each snapshot sees its own RX noise row."""
    if n_snapshots < 1:
        raise ArgumentError("need at least one snapshot")
    n = state.n_qubits
    bases = rng.integers(0, 3, size=(n_snapshots, n))
    rz, rx = _basis_rotation(bases)
    rows = [rz, rx]
    gates = [kernels.RZ] * n + [kernels.RX] * n
    if noise_p > 0:
        rows.insert(0, np.stack([noise_angles(n, noise_p, rng) for _ in range(n_snapshots)]))
        gates = [kernels.RX] * n + gates
    reps = len(rows)
    psi = np.tile(state.amplitudes, (n_snapshots, 1))
    codes = np.array(gates, dtype=np.int64)
    qs = np.tile(np.arange(n, dtype=np.int64), reps)
    zero = np.zeros(reps * n, dtype=np.int64)
    kernels.apply_program_batch(psi, n, codes, qs, zero, zero,
                                np.ascontiguousarray(np.concatenate(rows, axis=1)))
    probs = psi.real ** 2 + psi.imag ** 2
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(n_snapshots)
    idx = np.minimum((cdf < u[:, None]).sum(axis=1), (1 << n) - 1)
    bits = (idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    return ShadowSet(n, (2 * bases + bits).astype(np.int8))


def pair_kernel(a, b=None):
    """K between two shadow sets (pair route); ``b=None`` gives the
    same-sample U-statistic."""
    if b is None:
        s = a.n_snapshots
        if s < 2:
            raise ArgumentError("the diagonal estimate needs two snapshots")
        return kernels.shadow_pair_sum(a.codes, a.codes, True) / (s * (s - 1))
    return kernels.shadow_pair_sum(a.codes, b.codes, False) / (a.n_snapshots * b.n_snapshots)


def pauli_coefficients(shadow):
    return kernels.shadow_pauli_coefficients(shadow.codes, shadow.n_qubits)


def _diag_from_coeff(coeff, n, s):
    """U-statistic diagonal from the averaged Pauli coefficients."""
    full = coeff @ coeff / 2 ** n          # mean over all s, t pairs
    return (s * s * full - s * 5.0 ** n) / (s * (s - 1))


def kernel_matrix(sets_a, sets_b=None, method="pauli", chunk=64):
    """Raw K between two lists of shadow sets (or within one list).

    Within one list the diagonal is the U-statistic.  Returns (K, diag_a,
    diag_b) where the diagonals are the same-sample estimates.
    """
    same = sets_b is None
    sets_b = sets_a if same else sets_b
    counts = {s.n_snapshots for s in list(sets_a) + list(sets_b)}
    if len(counts) != 1:
        raise ArgumentError(f"snapshot counts differ across samples: {sorted(counts)}")
    if method == "pairs":
        K = np.empty((len(sets_a), len(sets_b)))
        for i, a in enumerate(sets_a):
            for j, b in enumerate(sets_b):
                if same and j < i:
                    K[i, j] = K[j, i]
                elif same and i == j:
                    K[i, j] = pair_kernel(a)
                else:
                    K[i, j] = pair_kernel(a, b)
        da = np.diag(K).copy() if same else np.array([pair_kernel(a) for a in sets_a])
        db = da if same else np.array([pair_kernel(b) for b in sets_b])
        return K, da, db
    if method != "pauli":
        raise ArgumentError(f"unknown kernel route {method!r}")
    n = sets_a[0].n_qubits
    s = counts.pop()
    cb = np.stack([pauli_coefficients(b) for b in sets_b])
    db = np.array([_diag_from_coeff(c, n, s) for c in cb])
    rows, da = [], []
    for start in range(0, len(sets_a), chunk):
        if same:
            ca = cb[start:start + chunk]
        else:
            ca = np.stack([pauli_coefficients(a) for a in sets_a[start:start + chunk]])
            da.extend(_diag_from_coeff(c, n, s) for c in ca)
        rows.append(ca @ cb.T / 2 ** n)
    K = np.concatenate(rows, axis=0)
    if same:
        da = db
        K[np.diag_indices_from(K)] = db
    return K, np.asarray(da), db


class BadDiagonalError(NumericError):
    def __init__(self, indices):
        super().__init__(f"nonpositive shadow diagonal estimate for samples {list(indices)}")
        self.indices = list(indices)


def normalize(K, diag_a, diag_b):
    bad_a = np.flatnonzero(diag_a <= 0)
    bad_b = np.flatnonzero(diag_b <= 0)
    if bad_a.size or bad_b.size:
        raise BadDiagonalError(sorted(set(bad_a.tolist()) | set(bad_b.tolist())))
    return K / np.sqrt(np.outer(diag_a, diag_b))


def shadow_gram(shadow_sets, method="pauli"):
    """Normalised Gram matrix with an exact unit diagonal."""
    K, d, _ = kernel_matrix(shadow_sets, method=method)
    G = normalize(K, d, d)
    G = 0.5 * (G + G.T)
    np.fill_diagonal(G, 1.0)
    return G


def shadow_gram_excluding(shadow_sets, method="pauli"):
    """Gram over the samples whose diagonal estimate is positive.

    Returns (gram, kept indices, excluded indices); excluded samples are
    logged so reports can state them.
    """
    K, d, _ = kernel_matrix(shadow_sets, method=method)
    keep = np.flatnonzero(d > 0)
    drop = np.flatnonzero(d <= 0)
    if drop.size:
        log.warning("excluding %d samples with nonpositive shadow purity: %s",
                    drop.size, drop.tolist())
    G = normalize(K[np.ix_(keep, keep)], d[keep], d[keep])
    G = 0.5 * (G + G.T)
    np.fill_diagonal(G, 1.0)
    return G, keep, drop


def shadow_cross_gram(test_sets, train_sets, method="pauli"):
    K, da, db = kernel_matrix(test_sets, train_sets, method=method)
    return normalize(K, da, db)


def purity_estimate(shadow):
    """Same-sample U-statistic of tr(rho^2), via the linear-cost route."""
    if shadow.n_snapshots < 2:
        raise ArgumentError("the purity estimate needs two snapshots")
    return float(_diag_from_coeff(pauli_coefficients(shadow), shadow.n_qubits,
                                  shadow.n_snapshots))


def write_gram_csv(path, gram):
    from ..container import atomic_write_text
    lines = [",".join(repr(float(v)) for v in row) for row in np.asarray(gram)]
    atomic_write_text(path, "\n".join(lines) + "\n")
