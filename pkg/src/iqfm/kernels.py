"""Hot loops with a numba path and a numpy path.

Every public function here dispatches to a jitted kernel when numba is
active (see ``_accel``) and to a vectorised numpy version otherwise.  Both
paths are tested against each other.

Gate programs are flat arrays so a whole circuit runs in one call:
``codes[g]`` is the gate kind, ``qa/qb/qc`` the qubits, ``angles`` the
rotation angle.  Qubit 0 is the most significant bit of a basis index.
"""
import numpy as np

from ._accel import njit, HAVE_NUMBA

# gate codes shared with statevector.GATE_CODES
H, X, RX, RZ, RZZ, CZ, CNOT, CCX, SWAP = range(9)

_SQ2 = 1.0 / np.sqrt(2.0)


def _apply_program_loops(psi, n, codes, qa, qb, qc, angles):
    dim = psi.shape[0]
    for g in range(codes.shape[0]):
        c = codes[g]
        ma = 1 << (n - 1 - qa[g])
        if c == 0:
            for i in range(dim):
                if i & ma == 0:
                    a = psi[i]
                    b = psi[i | ma]
                    psi[i] = (a + b) * 0.7071067811865476
                    psi[i | ma] = (a - b) * 0.7071067811865476
        elif c == 1:
            for i in range(dim):
                if i & ma == 0:
                    a = psi[i]
                    psi[i] = psi[i | ma]
                    psi[i | ma] = a
        elif c == 2:
            co = np.cos(0.5 * angles[g])
            si = np.sin(0.5 * angles[g])
            for i in range(dim):
                if i & ma == 0:
                    a = psi[i]
                    b = psi[i | ma]
                    psi[i] = co * a - 1j * si * b
                    psi[i | ma] = co * b - 1j * si * a
        elif c == 3:
            p0 = np.exp(-0.5j * angles[g])
            p1 = np.exp(0.5j * angles[g])
            for i in range(dim):
                if i & ma == 0:
                    psi[i] *= p0
                else:
                    psi[i] *= p1
        elif c == 4:
            mb = 1 << (n - 1 - qb[g])
            p0 = np.exp(-0.5j * angles[g])
            p1 = np.exp(0.5j * angles[g])
            for i in range(dim):
                if ((i & ma) == 0) == ((i & mb) == 0):
                    psi[i] *= p0
                else:
                    psi[i] *= p1
        elif c == 5:
            mb = 1 << (n - 1 - qb[g])
            for i in range(dim):
                if (i & ma) and (i & mb):
                    psi[i] = -psi[i]
        elif c == 6:
            mb = 1 << (n - 1 - qb[g])
            for i in range(dim):
                if (i & ma) and not (i & mb):
                    a = psi[i]
                    psi[i] = psi[i | mb]
                    psi[i | mb] = a
        elif c == 7:
            mb = 1 << (n - 1 - qb[g])
            mc = 1 << (n - 1 - qc[g])
            for i in range(dim):
                if (i & ma) and (i & mb) and not (i & mc):
                    a = psi[i]
                    psi[i] = psi[i | mc]
                    psi[i | mc] = a
        elif c == 8:
            mb = 1 << (n - 1 - qb[g])
            for i in range(dim):
                if (i & ma) and not (i & mb):
                    j = (i ^ ma) | mb
                    a = psi[i]
                    psi[i] = psi[j]
                    psi[j] = a
    return psi


def _bits(n, q):
    return (np.arange(1 << n) >> (n - 1 - q)) & 1


def _apply_program_numpy(psi, n, codes, qa, qb, qc, angles):
    """Vectorised fallback; ``psi`` is (batch, 2**n), ``angles`` (batch, gates)."""
    rows = psi.shape[0]
    for g in range(codes.shape[0]):
        c = int(codes[g])
        a = int(qa[g])
        ang = angles[:, g][:, None]
        if c in (0, 1, 2):
            t = psi.reshape(rows, 1 << a, 2, 1 << (n - 1 - a))
            u, v = t[:, :, 0, :].copy(), t[:, :, 1, :].copy()
            if c == 0:
                t[:, :, 0, :] = (u + v) * _SQ2
                t[:, :, 1, :] = (u - v) * _SQ2
            elif c == 1:
                t[:, :, 0, :] = v
                t[:, :, 1, :] = u
            else:
                co = np.cos(0.5 * ang)[:, :, None]
                si = np.sin(0.5 * ang)[:, :, None]
                t[:, :, 0, :] = co * u - 1j * si * v
                t[:, :, 1, :] = co * v - 1j * si * u
        elif c == 3:
            z = 1 - 2 * _bits(n, a)
            psi *= np.exp(-0.5j * ang * z[None, :])
        elif c == 4:
            z = (1 - 2 * _bits(n, a)) * (1 - 2 * _bits(n, int(qb[g])))
            psi *= np.exp(-0.5j * ang * z[None, :])
        elif c == 5:
            both = _bits(n, a) & _bits(n, int(qb[g]))
            psi *= (1 - 2 * both)[None, :]
        else:
            idx = np.arange(1 << n)
            ba = _bits(n, a)
            mb = 1 << (n - 1 - int(qb[g]))
            if c == 6:
                perm = np.where(ba == 1, idx ^ mb, idx)
            elif c == 7:
                bb = _bits(n, int(qb[g]))
                mc = 1 << (n - 1 - int(qc[g]))
                perm = np.where((ba & bb) == 1, idx ^ mc, idx)
            else:
                bb = (idx & mb) > 0
                ma = 1 << (n - 1 - a)
                perm = np.where(ba.astype(bool) != bb, idx ^ ma ^ mb, idx)
            psi[:] = psi[:, perm]
    return psi


_apply_program_nb = njit(_apply_program_loops)


def _apply_batch_loops(psi, n, codes, qa, qb, qc, angles):
    for r in range(psi.shape[0]):
        _apply_program_nb(psi[r], n, codes, qa, qb, qc, angles[r])
    return psi


_apply_batch_nb = njit(_apply_batch_loops) if _apply_program_nb is not None else None


def apply_program(psi, n, codes, qa, qb, qc, angles):
    """Apply a flat gate program to the 1-D ``psi`` in place and return it."""
    if _apply_program_nb is not None:
        return _apply_program_nb(psi, n, codes, qa, qb, qc, angles)
    _apply_program_numpy(psi.reshape(1, -1), n, codes, qa, qb, qc, angles[None, :])
    return psi


def apply_program_batch(psi, n, codes, qa, qb, qc, angles):
    """Apply one gate sequence to every row of ``psi`` (in place).

    ``angles`` has one row per state so data-dependent circuits (embeddings,
    noise) share a single call.
    """
    if _apply_batch_nb is not None:
        return _apply_batch_nb(psi, n, codes, qa, qb, qc, angles)
    return _apply_program_numpy(psi, n, codes, qa, qb, qc, angles)


def _z_expect_loops(probs, n):
    out = np.zeros(n)
    for i in range(probs.shape[0]):
        p = probs[i]
        for q in range(n):
            if (i >> (n - 1 - q)) & 1:
                out[q] -= p
            else:
                out[q] += p
    return out


def _z_expect_numpy(probs, n):
    t = probs.reshape((2,) * n)
    out = np.empty(n)
    for q in range(n):
        m = t.sum(axis=tuple(k for k in range(n) if k != q))
        out[q] = m[0] - m[1]
    return out


_z_expect_nb = njit(_z_expect_loops)


def z_expectations(probs, n):
    """Per-qubit <Z> from a probability vector over basis indices."""
    if _z_expect_nb is not None:
        return _z_expect_nb(probs, n)
    return _z_expect_numpy(probs, n)


# single-snapshot trace factor tr(s_a s_b) for s = 3|b><b| - I, indexed by
# code = 2*basis + bit
_SHADOW_FACTOR = np.array(
    [[5.0 if a == b else (-4.0 if a // 2 == b // 2 else 0.5) for b in range(6)]
     for a in range(6)])


def _shadow_pair_loops(ci, cj, skip_diag, table):
    s_i, n = ci.shape
    s_j = cj.shape[0]
    total = 0.0
    for s in range(s_i):
        for t in range(s_j):
            if skip_diag and s == t:
                continue
            prod = 1.0
            for q in range(n):
                prod *= table[ci[s, q], cj[t, q]]
                if prod == 0.0:
                    break
            total += prod
    return total


def _shadow_pair_numpy(ci, cj, skip_diag, table):
    total = 0.0
    for s in range(ci.shape[0]):
        prods = table[ci[s][None, :], cj].prod(axis=1)
        if skip_diag:
            prods[s] = 0.0
        total += prods.sum()
    return total


_shadow_pair_nb = njit(_shadow_pair_loops)


def shadow_pair_sum(ci, cj, skip_diag=False):
    """Sum over snapshot pairs of the product of per-qubit trace factors.

    ``ci``/``cj`` are (snapshots, qubits) int arrays of ``2*basis + bit``.
    With ``skip_diag`` the s == t terms are left out (same-sample U-statistic).
    """
    ci = np.ascontiguousarray(ci, dtype=np.int64)
    cj = np.ascontiguousarray(cj, dtype=np.int64)
    if _shadow_pair_nb is not None:
        return _shadow_pair_nb(ci, cj, skip_diag, _SHADOW_FACTOR)
    return _shadow_pair_numpy(ci, cj, skip_diag, _SHADOW_FACTOR)


def _pauli_coeff_loops(codes, n):
    out = np.zeros(4 ** n)
    n_sub = 1 << n
    idx = np.zeros(n_sub, dtype=np.int64)
    val = np.zeros(n_sub)
    for s in range(codes.shape[0]):
        # subsets of qubits carrying a non-identity factor, built by doubling
        idx[0] = 0
        val[0] = 1.0
        size = 1
        for q in range(n):
            c = codes[s, q]
            digit = c // 2 + 1
            sign = -3.0 if c % 2 else 3.0
            for k in range(size):
                idx[size + k] = idx[k] * 4 + digit
                val[size + k] = val[k] * sign
                idx[k] = idx[k] * 4
            size *= 2
        for k in range(n_sub):
            out[idx[k]] += val[k]
    return out / codes.shape[0]


def _pauli_coeff_numpy(codes, n):
    n_snap = codes.shape[0]
    idx = np.zeros((n_snap, 1), dtype=np.int64)
    val = np.ones((n_snap, 1))
    for q in range(n):
        digit = (codes[:, q] // 2 + 1)[:, None]
        sign = (3.0 - 6.0 * (codes[:, q] % 2))[:, None]
        idx = np.concatenate([idx * 4, idx * 4 + digit], axis=1)
        val = np.concatenate([val, val * sign], axis=1)
    out = np.bincount(idx.ravel(), weights=val.ravel(), minlength=4 ** n)
    return out / n_snap


_pauli_coeff_nb = njit(_pauli_coeff_loops)


def shadow_pauli_coefficients(codes, n):
    """Average Pauli-basis coefficients of the shadow snapshots.

    The averaged shadow is rho = 2^-n sum_P a(P) P, with the returned vector
    holding a(P) for P enumerated as base-4 digits (I, X, Y, Z) per qubit,
    qubit 0 most significant.
    """
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if _pauli_coeff_nb is not None:
        return _pauli_coeff_nb(codes, n)
    return _pauli_coeff_numpy(codes, n)


def _smo_loops(Q, y, C, tol, max_iter, alpha, grad):
    """Second-order working-set SMO on min 1/2 a'Qa - 1'a, y'a = 0, 0<=a<=C.

    ``Q[i, j] = y_i y_j K[i, j]``.  ``alpha``/``grad`` are updated in place.
    Returns the iteration count and the final maximal violation gap.
    """
    m = y.shape[0]
    tau = 1e-12
    it = 0
    gap = 0.0
    while it < max_iter:
        # i: argmax over I_up of -y_i grad_i
        gmax = -1e300
        i = -1
        for t in range(m):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * grad[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmin = 1e300
        for t in range(m):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * grad[t]
                if v < gmin:
                    gmin = v
        gap = gmax - gmin
        if i < 0 or gap < tol:
            break
        # j: second-order choice among I_low with -y_t grad_t < gmax
        j = -1
        best = 1e300
        for t in range(m):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                b = gmax + y[t] * grad[t]
                if b > 0:
                    a = Q[i, i] + Q[t, t] - 2.0 * y[i] * y[t] * Q[i, t]
                    if a <= 0:
                        a = tau
                    obj = -(b * b) / a
                    if obj < best:
                        best = obj
                        j = t
        if j < 0:
            break
        a_i_old = alpha[i]
        a_j_old = alpha[j]
        if y[i] != y[j]:
            quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            if quad <= 0:
                quad = tau
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            if quad <= 0:
                quad = tau
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        d_i = alpha[i] - a_i_old
        d_j = alpha[j] - a_j_old
        for t in range(m):
            grad[t] += Q[t, i] * d_i + Q[t, j] * d_j
        it += 1
    return it, gap


_smo_nb = njit(_smo_loops)


def smo_solve(Q, y, C, tol, max_iter, alpha, grad):
    """Run the SMO loop (jitted when possible); see ``_smo_loops``."""
    if _smo_nb is not None:
        return _smo_nb(Q, y, C, tol, max_iter, alpha, grad)
    return _smo_loops(Q, y, C, tol, max_iter, alpha, grad)


__all__ = ["apply_program", "apply_program_batch", "z_expectations", "shadow_pair_sum",
           "shadow_pauli_coefficients", "smo_solve", "HAVE_NUMBA"]
