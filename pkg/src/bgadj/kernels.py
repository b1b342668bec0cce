"""Hot loops: component densities, responsibilities, EM iterations and
per-voxel standardization.

Every kernel exists twice, as an explicit loop compiled with numba and as a
vectorized numpy expression. The public wrappers at the bottom dispatch on
:func:`bgadj._accel.backend`. Both paths implement identical arithmetic up
to floating-point reassociation.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

LOG_2PI = math.log(2.0 * math.pi)

# status codes returned by the EM loops
EM_CONVERGED = 0
EM_MAX_ITER = 1
EM_DEGENERATE_CLUSTER = 2
EM_NONFINITE = 3
EM_DEGENERATE_TEMPLATE = 4

MIN_EIG_FRACTION = 1e-10

METHOD_CODES = {"T1": 1, "T2": 2, "T3": 3}


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit
def jacobi_eigh(a):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns,
    unsorted.
    """
    p = a.shape[0]
    m = a.copy()
    v = np.eye(p)
    total = 0.0
    for i in range(p):
        for j in range(p):
            total += m[i, j] * m[i, j]
    for _sweep in range(64):
        off = 0.0
        for i in range(p):
            for j in range(i + 1, p):
                off += m[i, j] * m[i, j]
        if off <= 1e-32 * total or off == 0.0:
            break
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = m[i, j]
                if aij == 0.0:
                    continue
                theta = (m[j, j] - m[i, i]) / (2.0 * aij)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(p):
                    mik = m[i, k]
                    mjk = m[j, k]
                    m[i, k] = c * mik - s * mjk
                    m[j, k] = s * mik + c * mjk
                for k in range(p):
                    mki = m[k, i]
                    mkj = m[k, j]
                    m[k, i] = c * mki - s * mkj
                    m[k, j] = s * mki + c * mkj
                for k in range(p):
                    vki = v[k, i]
                    vkj = v[k, j]
                    v[k, i] = c * vki - s * vkj
                    v[k, j] = s * vki + c * vkj
    lam = np.empty(p)
    for i in range(p):
        lam[i] = m[i, i]
    return lam, v


@njit
def _sym_power(lam, vec, power):
    p = lam.shape[0]
    out = np.zeros((p, p))
    for k in range(p):
        f = lam[k] ** power
        for i in range(p):
            for j in range(p):
                out[i, j] += vec[i, k] * f * vec[j, k]
    return out


@njit
def _inv_sqrt_small(a):
    p = a.shape[0]
    if p == 1:
        out = np.empty((1, 1))
        out[0, 0] = 1.0 / math.sqrt(a[0, 0])
        return out
    lam, vec = jacobi_eigh(a)
    return _sym_power(lam, vec, -0.5)


@njit
def _whiten_params(covs):
    """Inverse square roots, log-determinants and eigenvalue ratio per component."""
    K, p = covs.shape[0], covs.shape[1]
    inv_sqrts = np.empty((K, p, p))
    logdets = np.empty(K)
    ratio = np.empty(K)
    for k in range(K):
        lam, vec = jacobi_eigh(covs[k])
        lo = lam.min()
        hi = lam.max()
        ratio[k] = lo / hi if hi > 0 else -1.0
        if lo <= 0.0:
            inv_sqrts[k] = np.nan
            logdets[k] = np.nan
            continue
        inv_sqrts[k] = _sym_power(lam, vec, -0.5)
        s = 0.0
        for i in range(p):
            s += math.log(lam[i])
        logdets[k] = s
    return inv_sqrts, logdets, ratio


@njit
def _logpdf_numba(y, means, inv_sqrts, logdets):
    n, p = y.shape
    K = means.shape[0]
    out = np.empty((n, K))
    r = np.empty(p)
    for k in range(K):
        const = -0.5 * (p * LOG_2PI + logdets[k])
        for i in range(n):
            for a in range(p):
                r[a] = y[i, a] - means[k, a]
            q = 0.0
            for a in range(p):
                z = 0.0
                for b in range(p):
                    z += inv_sqrts[k, a, b] * r[b]
                q += z * z
            out[i, k] = const - 0.5 * q
    return out


@njit
def _responsibilities_numba(logpdf, logpi):
    """Normalized responsibilities and per-row log-likelihood (log-sum-exp)."""
    n, K = logpdf.shape
    shared = logpi.shape[0] == 1
    w = np.empty((n, K))
    ll = np.empty(n)
    for i in range(n):
        row = 0 if shared else i
        mx = -np.inf
        for k in range(K):
            v = logpdf[i, k] + logpi[row, k]
            w[i, k] = v
            if v > mx:
                mx = v
        if mx == -np.inf:
            for k in range(K):
                w[i, k] = np.nan
            ll[i] = -np.inf
            continue
        s = 0.0
        for k in range(K):
            e = math.exp(w[i, k] - mx)
            w[i, k] = e
            s += e
        for k in range(K):
            w[i, k] /= s
        ll[i] = mx + math.log(s)
    return w, ll


@njit
def _spatial_logpi_numba(gamma, b):
    n, K = b.shape
    out = np.empty((n, K))
    ok = True
    for i in range(n):
        den = 0.0
        for k in range(K):
            den += gamma[k] * b[i, k]
        if not den > 0.0:
            ok = False
            for k in range(K):
                out[i, k] = np.nan
            continue
        lden = math.log(den)
        for k in range(K):
            v = gamma[k] * b[i, k]
            out[i, k] = math.log(v) - lden if v > 0.0 else -np.inf
    return out, ok


@njit
def _update_gamma_numba(w, gamma, b):
    n, K = w.shape
    num = np.zeros(K)
    den = np.zeros(K)
    for i in range(n):
        s = 0.0
        for k in range(K):
            s += gamma[k] * b[i, k]
        for k in range(K):
            num[k] += w[i, k]
            den[k] += b[i, k] / s
    out = num / den
    return out / out.sum()


@njit
def _mstep_numba(y, w, means, inv_sqrts, robust, k1):
    """Plain or Huber-weighted M-step for every component.

    Returns ``(means, covs, mass)`` where ``mass`` is the effective weight
    (``sum w`` for plain, ``sum w u^2`` for robust) of each component.
    """
    n, p = y.shape
    K = w.shape[1]
    new_means = np.zeros((K, p))
    covs = np.zeros((K, p, p))
    mass = np.zeros(K)
    r = np.empty(p)
    u1 = np.empty(n)
    for k in range(K):
        # mean update: radii from the previous mean
        sw = 0.0
        for i in range(n):
            uu = 1.0
            if robust:
                for a in range(p):
                    r[a] = y[i, a] - means[k, a]
                q = 0.0
                for a in range(p):
                    z = 0.0
                    for c in range(p):
                        z += inv_sqrts[k, a, c] * r[c]
                    q += z * z
                d = math.sqrt(q)
                if d > k1:
                    uu = k1 / d
            u1[i] = w[i, k] * uu
            sw += u1[i]
        for i in range(n):
            for a in range(p):
                new_means[k, a] += u1[i] * y[i, a]
        if sw > 0.0:
            for a in range(p):
                new_means[k, a] /= sw
        # covariance update: radii from the new mean, previous scatter
        sw2 = 0.0
        for i in range(n):
            for a in range(p):
                r[a] = y[i, a] - new_means[k, a]
            uu = 1.0
            if robust:
                q = 0.0
                for a in range(p):
                    z = 0.0
                    for c in range(p):
                        z += inv_sqrts[k, a, c] * r[c]
                    q += z * z
                d = math.sqrt(q)
                if d > k1:
                    uu = k1 / d
            wt = w[i, k] * uu * uu
            sw2 += wt
            for a in range(p):
                for c in range(a, p):
                    covs[k, a, c] += wt * r[a] * r[c]
        for a in range(p):
            for c in range(a, p):
                v = covs[k, a, c] / sw2 if sw2 > 0.0 else np.nan
                covs[k, a, c] = v
                covs[k, c, a] = v
        mass[k] = sw2
    return new_means, covs, mass


@njit
def _floor_covs(covs):
    K, p = covs.shape[0], covs.shape[1]
    for k in range(K):
        tr = 0.0
        for a in range(p):
            tr += covs[k, a, a]
        floor = MIN_EIG_FRACTION * tr / p
        lam, vec = jacobi_eigh(covs[k])
        if lam.min() < floor:
            for a in range(p):
                if lam[a] < floor:
                    lam[a] = floor
            covs[k] = _sym_power(lam, vec, 1.0)
    return covs


@njit
def _em_numba(y, b, spatial, mix0, means0, covs0, robust, k1, tol, max_iter):
    n, p = y.shape
    K = means0.shape[0]
    means = means0.copy()
    covs = covs0.copy()
    mix = mix0.copy()
    trace = np.full(max_iter + 1, np.nan)
    min_mass = p + 1.0

    inv_sqrts, logdets, ratio = _whiten_params(covs)
    if spatial:
        logpi, ok = _spatial_logpi_numba(mix, b)
        if not ok:
            return means, covs, mix, np.empty((n, K)), trace, 0, EM_DEGENERATE_TEMPLATE
    else:
        logpi = np.log(mix).reshape(1, K)
    w, ll = _responsibilities_numba(_logpdf_numba(y, means, inv_sqrts, logdets), logpi)
    cur = ll.sum()
    trace[0] = cur
    if not math.isfinite(cur):
        return means, covs, mix, w, trace, 0, EM_NONFINITE

    status = EM_MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        if spatial:
            mix = _update_gamma_numba(w, mix, b)
        else:
            mix = w.sum(axis=0) / n
        means, covs, mass = _mstep_numba(y, w, means, inv_sqrts, robust, k1)
        bad = False
        for k in range(K):
            if not mass[k] >= min_mass or w[:, k].sum() < min_mass:
                bad = True
        if bad:
            return means, covs, mix, w, trace, it, EM_DEGENERATE_CLUSTER
        covs = _floor_covs(covs)
        inv_sqrts, logdets, ratio = _whiten_params(covs)
        if spatial:
            logpi, ok = _spatial_logpi_numba(mix, b)
        else:
            logpi = np.log(mix).reshape(1, K)
        w, ll = _responsibilities_numba(_logpdf_numba(y, means, inv_sqrts, logdets), logpi)
        prev = cur
        cur = ll.sum()
        trace[it] = cur
        if not math.isfinite(cur):
            return means, covs, mix, w, trace, it, EM_NONFINITE
        if abs(cur - prev) < tol * abs(cur):
            status = EM_CONVERGED
            break
    return means, covs, mix, w, trace, it, status


@njit
def _standardize_numba(y, s, means, covs, inv_sqrts, method):
    n, p = y.shape
    K = means.shape[0]
    out = np.empty((n, p))
    mu = np.empty(p)
    r = np.empty(p)
    mat = np.empty((p, p))
    for i in range(n):
        hard = -1
        for k in range(K):
            if s[i, k] == 1.0:
                hard = k
        for a in range(p):
            v = 0.0
            for k in range(K):
                v += s[i, k] * means[k, a]
            mu[a] = v
            r[a] = y[i, a] - v
        if hard >= 0:
            mat[:, :] = inv_sqrts[hard]
        elif method == 1:
            mat[:, :] = 0.0
            for k in range(K):
                if s[i, k] != 0.0:
                    for a in range(p):
                        for c in range(p):
                            mat[a, c] += s[i, k] * inv_sqrts[k, a, c]
        else:
            comb = np.zeros((p, p))
            for k in range(K):
                sk = s[i, k]
                if sk == 0.0:
                    continue
                for a in range(p):
                    for c in range(p):
                        v = covs[k, a, c]
                        if method == 3:
                            v += (means[k, a] - mu[a]) * (means[k, c] - mu[c])
                        comb[a, c] += sk * v
            mat[:, :] = _inv_sqrt_small(comb)
        for a in range(p):
            v = 0.0
            for c in range(p):
                v += mat[a, c] * r[c]
            out[i, a] = v
    return out


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _sym_power_np(a, power):
    lam, vec = np.linalg.eigh(a)
    return np.einsum("...ik,...k,...jk->...ij", vec, lam**power, vec)


def _whiten_params_np(covs):
    lam, vec = np.linalg.eigh(covs)
    ratio = lam.min(axis=-1) / lam.max(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_sqrts = np.einsum("kim,km,kjm->kij", vec, lam**-0.5, vec)
        logdets = np.log(lam).sum(axis=-1)
    bad = lam.min(axis=-1) <= 0
    inv_sqrts[bad] = np.nan
    logdets[bad] = np.nan
    return inv_sqrts, logdets, ratio


def _logpdf_np(y, means, inv_sqrts, logdets):
    p = y.shape[1]
    r = y[:, None, :] - means[None, :, :]
    z = np.einsum("kab,nkb->nka", inv_sqrts, r)
    q = np.einsum("nka,nka->nk", z, z)
    return -0.5 * (p * LOG_2PI + logdets[None, :] + q)


def _responsibilities_np(logpdf, logpi):
    v = logpdf + logpi
    mx = v.max(axis=1, keepdims=True)
    finite = np.isfinite(mx[:, 0])
    safe = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(v - safe)
    s = e.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = e / s
        ll = safe[:, 0] + np.log(s[:, 0])
    w[~finite] = np.nan
    ll[~finite] = -np.inf
    return w, ll


def _spatial_logpi_np(gamma, b):
    num = gamma[None, :] * b
    den = num.sum(axis=1, keepdims=True)
    ok = bool(np.all(den > 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(num) - np.log(den)
    out[~(den[:, 0] > 0)] = np.nan
    return out, ok


def _update_gamma_np(w, gamma, b):
    den = b @ gamma
    out = w.sum(axis=0) / (b / den[:, None]).sum(axis=0)
    return out / out.sum()


def _huber_u(d, k1):
    with np.errstate(divide="ignore"):
        return np.where(d > k1, k1 / np.where(d > 0, d, 1.0), 1.0)


def _mstep_np(y, w, means, inv_sqrts, robust, k1):
    if robust:
        r1 = y[:, None, :] - means[None, :, :]
        d1 = np.linalg.norm(np.einsum("kab,nkb->nka", inv_sqrts, r1), axis=2)
        wt1 = w * _huber_u(d1, k1)
    else:
        wt1 = w
    sw = wt1.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        new_means = (wt1.T @ y) / np.where(sw > 0, sw, 1.0)[:, None]
    r2 = y[:, None, :] - new_means[None, :, :]
    if robust:
        d2 = np.linalg.norm(np.einsum("kab,nkb->nka", inv_sqrts, r2), axis=2)
        wt2 = w * _huber_u(d2, k1) ** 2
    else:
        wt2 = w
    mass = wt2.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        covs = np.einsum("nk,nka,nkb->kab", wt2, r2, r2) / mass[:, None, None]
    covs[~(mass > 0)] = np.nan
    return new_means, covs, mass


def _floor_covs_np(covs):
    p = covs.shape[1]
    floor = MIN_EIG_FRACTION * np.trace(covs, axis1=1, axis2=2) / p
    lam, vec = np.linalg.eigh(covs)
    low = lam < floor[:, None]
    if not low.any():
        return covs
    lam = np.maximum(lam, floor[:, None])
    fixed = np.einsum("kim,km,kjm->kij", vec, lam, vec)
    return np.where(low.any(axis=1)[:, None, None], fixed, covs)


def _em_np(y, b, spatial, mix0, means0, covs0, robust, k1, tol, max_iter):
    n, p = y.shape
    K = means0.shape[0]
    means, covs, mix = means0.copy(), covs0.copy(), mix0.copy()
    trace = np.full(max_iter + 1, np.nan)
    min_mass = p + 1.0

    def estep(means, covs, mix):
        inv_sqrts, logdets, _ = _whiten_params_np(covs)
        if spatial:
            logpi, ok = _spatial_logpi_np(mix, b)
        else:
            logpi, ok = np.log(mix)[None, :], True
        w, ll = _responsibilities_np(_logpdf_np(y, means, inv_sqrts, logdets), logpi)
        return inv_sqrts, w, ll.sum(), ok

    inv_sqrts, w, cur, ok = estep(means, covs, mix)
    if not ok:
        return means, covs, mix, np.empty((n, K)), trace, 0, EM_DEGENERATE_TEMPLATE
    trace[0] = cur
    if not np.isfinite(cur):
        return means, covs, mix, w, trace, 0, EM_NONFINITE
    status = EM_MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        mix = _update_gamma_np(w, mix, b) if spatial else w.sum(axis=0) / n
        means, covs, mass = _mstep_np(y, w, means, inv_sqrts, robust, k1)
        if np.any(~(mass >= min_mass)) or np.any(w.sum(axis=0) < min_mass):
            return means, covs, mix, w, trace, it, EM_DEGENERATE_CLUSTER
        covs = _floor_covs_np(covs)
        inv_sqrts, w, new, _ = estep(means, covs, mix)
        prev, cur = cur, new
        trace[it] = cur
        if not np.isfinite(cur):
            return means, covs, mix, w, trace, it, EM_NONFINITE
        if abs(cur - prev) < tol * abs(cur):
            status = EM_CONVERGED
            break
    return means, covs, mix, w, trace, it, status


def _standardize_np(y, s, means, covs, inv_sqrts, method):
    mu = s @ means
    r = y - mu
    if method == 1:
        mats = np.einsum("nk,kab->nab", s, inv_sqrts)
    else:
        comb = np.einsum("nk,kab->nab", s, covs)
        if method == 3:
            dm = means[None, :, :] - mu[:, None, :]
            comb = comb + np.einsum("nk,nka,nkb->nab", s, dm, dm)
        mats = _sym_power_np(comb, -0.5)
        hard = s.max(axis=1) == 1.0
        if hard.any():
            mats[hard] = inv_sqrts[np.argmax(s[hard], axis=1)]
    return np.einsum("nab,nb->na", mats, r)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def whiten_params(covs):
    covs = _f64(covs)
    if _accel.backend() == "numba":
        return _whiten_params(covs)
    return _whiten_params_np(covs)


def component_logpdf(y, means, inv_sqrts, logdets):
    args = (_f64(y), _f64(means), _f64(inv_sqrts), _f64(logdets))
    if _accel.backend() == "numba":
        return _logpdf_numba(*args)
    return _logpdf_np(*args)


def responsibilities(logpdf, logpi):
    """Return ``(w, loglik_rows)``; ``logpi`` is ``(1, K)`` or ``(n, K)``."""
    logpdf, logpi = _f64(logpdf), _f64(np.atleast_2d(logpi))
    if _accel.backend() == "numba":
        return _responsibilities_numba(logpdf, logpi)
    return _responsibilities_np(logpdf, logpi)


def spatial_logpi(gamma, b):
    if _accel.backend() == "numba":
        return _spatial_logpi_numba(_f64(gamma), _f64(b))
    return _spatial_logpi_np(_f64(gamma), _f64(b))


def update_gamma(w, gamma, b):
    if _accel.backend() == "numba":
        return _update_gamma_numba(_f64(w), _f64(gamma), _f64(b))
    return _update_gamma_np(_f64(w), _f64(gamma), _f64(b))


def mstep(y, w, means, inv_sqrts, robust, k1):
    args = (_f64(y), _f64(w), _f64(means), _f64(inv_sqrts), bool(robust), float(k1))
    if _accel.backend() == "numba":
        return _mstep_numba(*args)
    return _mstep_np(*args)


def em(y, b, spatial, mix0, means0, covs0, robust, k1, tol, max_iter):
    """Run the EM loop; returns ``(means, covs, mix, w, trace, iters, status)``."""
    n, K = y.shape[0], means0.shape[0]
    b = _f64(b) if b is not None else np.ones((1, K))
    args = (_f64(y), b, bool(spatial), _f64(mix0), _f64(means0), _f64(covs0),
            bool(robust), float(k1), float(tol), int(max_iter))
    if _accel.backend() == "numba":
        return _em_numba(*args)
    return _em_np(*args)


def standardize(y, s, means, covs, inv_sqrts, method):
    args = (_f64(y), _f64(s), _f64(means), _f64(covs), _f64(inv_sqrts), METHOD_CODES[method])
    if _accel.backend() == "numba":
        return _standardize_numba(*args)
    return _standardize_np(*args)
