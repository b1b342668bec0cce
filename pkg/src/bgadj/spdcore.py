"""Symmetric positive-definite roots and scalar distribution functions."""
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import SingularMatrixError

SPD_RTOL = 1e-12
SYM_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """A symmetric positive-definite ``p x p`` matrix.

    Construction symmetrizes the input after checking it is symmetric to
    ``SYM_RTOL`` and rejects any matrix whose smallest eigenvalue is not above
    ``SPD_RTOL`` times its largest.
    """

    values: np.ndarray
    _eig: tuple = field(init=False, repr=False)

    def __post_init__(self):
        a = np.array(self.values, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        scale = max(np.abs(a).max(), np.finfo(float).tiny)
        if np.abs(a - a.T).max() > SYM_RTOL * scale:
            raise ValueError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        lam, vec = np.linalg.eigh(a)
        if lam[-1] <= 0 or lam[0] <= SPD_RTOL * lam[-1]:
            raise SingularMatrixError(
                f"matrix is not positive definite (eigenvalues {lam[0]:.3g}..{lam[-1]:.3g})"
            )
        a.setflags(write=False)
        object.__setattr__(self, "values", a)
        object.__setattr__(self, "_eig", (lam, vec))

    @property
    def dim(self):
        return self.values.shape[0]

    @property
    def eigenvalues(self):
        return self._eig[0]

    def _power(self, power):
        lam, vec = self._eig
        return (vec * lam**power) @ vec.T

    def sqrt(self):
        return SpdMatrix(_symmetrize(self._power(0.5)))

    def inv_sqrt(self):
        return SpdMatrix(_symmetrize(self._power(-0.5)))

    def inverse(self):
        return SpdMatrix(_symmetrize(self._power(-1.0)))

    def logdet(self):
        return float(np.sum(np.log(self._eig[0])))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _symmetrize(a):
    return 0.5 * (a + a.T)


def as_spd(m):
    return m if isinstance(m, SpdMatrix) else SpdMatrix(m)


def spd_sqrt(m):
    """Principal (symmetric) square root."""
    return as_spd(m).sqrt()


def spd_inv_sqrt(m):
    return as_spd(m).inv_sqrt()


def norm_cdf(x):
    return special.ndtr(x)


def norm_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def norm_quantile(q):
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)) or np.any(np.isnan(q)):
        raise ValueError("normal quantile requires 0 < q < 1")
    out = special.ndtri(q)
    return float(out) if out.ndim == 0 else out


def chi2_quantile(p_dim, q):
    """Quantile of the chi-square distribution with ``p_dim`` degrees of freedom."""
    if p_dim < 1 or int(p_dim) != p_dim:
        raise ValueError("degrees of freedom must be a positive integer")
    if not 0 < q < 1:
        raise ValueError("chi-square quantile requires 0 < q < 1")
    return float(2.0 * special.gammaincinv(0.5 * p_dim, q))


def huber_k1(p_dim, q=0.99):
    """Huber tuning constant: square root of the ``q`` chi-square quantile."""
    return float(np.sqrt(chi2_quantile(p_dim, q)))


def ks_statistic(samples):
    """Kolmogorov-Smirnov distance to the standard normal.

    Returns ``(D, p_value)`` with the asymptotic Kolmogorov p-value.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    cdf = special.ndtr(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(n) / n
    d = float(max(upper.max(), lower.max()))
    return d, float(special.kolmogorov(np.sqrt(n) * d))
