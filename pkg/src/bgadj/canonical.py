"""Two-class reduced parametrization and the exact law of the hard-assigned
standardized score.

A two-component model enters the score only through
``delta1 = S1^{-1/2} (mu1 - mu2)``, ``tau = S2^{-1/2} S1^{1/2}`` and
``pi0 = 2 log(pi2 / pi1)``; ``delta2 = tau @ delta1``.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DegenerateParametersError
from .spdcore import as_spd, norm_cdf

THETA0_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CanonicalParams:
    delta1: np.ndarray
    tau: np.ndarray
    pi0: float

    def __post_init__(self):
        d1 = np.atleast_1d(np.array(self.delta1, dtype=float))
        tau = np.atleast_2d(np.array(self.tau, dtype=float))
        if tau.shape != (d1.size, d1.size):
            raise ValueError("tau must be p x p for a p-vector delta1")
        det = np.linalg.det(tau)
        if not abs(det) > 0:
            raise ValueError("tau must be invertible")
        object.__setattr__(self, "delta1", d1)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "pi0", float(self.pi0))

    @property
    def p(self):
        return self.delta1.size

    @property
    def delta2(self):
        return self.tau @ self.delta1

    @property
    def pi1(self):
        if self.pi0 == math.inf:
            return 0.0
        if self.pi0 == -math.inf:
            return 1.0
        return 1.0 / (1.0 + math.exp(0.5 * self.pi0))

    @property
    def log_det_tau(self):
        return float(np.linalg.slogdet(self.tau)[1])

    @property
    def in_theta0(self):
        """True on the degenerate set where standardization is exact."""
        if math.isinf(self.pi0):
            return True
        return (np.linalg.norm(self.delta1) < THETA0_TOL
                and np.linalg.norm(self.tau - np.eye(self.p)) < THETA0_TOL)

    def swapped(self):
        """The same model with component labels exchanged."""
        tau_inv = np.linalg.inv(self.tau)
        return CanonicalParams(-self.delta2, tau_inv, -self.pi0)

    def flipped(self):
        return CanonicalParams(-self.delta1, self.tau, self.pi0)


def canonicalize(mu1, mu2, S1, S2, pi1, pi2):
    """Reduce full two-class parameters to :class:`CanonicalParams`.

    ``pi1`` or ``pi2`` equal to zero gives an infinite ``pi0`` (a degenerate
    but valid parameter), not an error.
    """
    if pi1 < 0 or pi2 < 0 or abs(pi1 + pi2 - 1.0) > 1e-12:
        raise ValueError("class probabilities must be nonnegative and sum to one")
    S1, S2 = as_spd(S1), as_spd(S2)
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    delta1 = S1.inv_sqrt().values @ (mu1 - mu2)
    tau = S2.inv_sqrt().values @ S1.sqrt().values
    if pi1 == 0:
        pi0 = math.inf
    elif pi2 == 0:
        pi0 = -math.inf
    else:
        pi0 = 2.0 * math.log(pi2 / pi1)
    return CanonicalParams(delta1, tau, pi0)


def canonicalize_model(model):
    if model.K != 2 or model.spatial:
        raise ValueError("canonical parameters need a two-component model with global weights")
    return canonicalize(model.means[0], model.means[1], model.covs[0], model.covs[1],
                        model.weights[0], model.weights[1])


def log_ratio_r(y, model):
    """``2 log(phi1(y) / phi2(y))`` from the component densities."""
    lp = model.logpdf(y)
    return 2.0 * (lp[:, 0] - lp[:, 1])


def log_ratio_latent(z, s1, theta):
    """The same ratio written through the latent normal draw ``z`` and label ``s1``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    s1 = np.broadcast_to(np.asarray(s1, dtype=bool), z.shape[:1])
    tau = theta.tau
    g = z @ tau.T + theta.delta2
    x = z @ np.linalg.inv(tau).T - theta.delta1
    zz = np.einsum("ij,ij->i", z, z)
    r1 = np.einsum("ij,ij->i", g, g) - zz
    r0 = zz - np.einsum("ij,ij->i", x, x)
    return -2.0 * theta.log_det_tau + np.where(s1, r1, r0)


def _h_scalar(x, tau, delta2):
    return (tau * tau - 1.0) * x * x + 2.0 * tau * delta2 * x + delta2 * delta2 - 2.0 * math.log(tau)


@dataclass(frozen=True)
class DecisionInterval:
    """Open interval ``(lower, upper)`` where the hard rule flips class 1 to class 2.

    ``swapped`` marks an interval computed after exchanging labels (scale
    ratio below one); it then refers to the exchanged labeling.
    """

    lower: float
    upper: float
    swapped: bool = False

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lower) & (x < self.upper)


def _check_univariate(theta):
    if theta.p != 1:
        raise ValueError("this operation needs p = 1")
    if theta.in_theta0:
        raise DegenerateParametersError(
            "parameters are degenerate (delta1 = 0 and tau = 1, or a vanishing class); "
            "the standardized score is exactly standard normal there"
        )
    tau = float(theta.tau[0, 0])
    if not tau > 0:
        raise ValueError("univariate tau must be positive")
    return tau


def _oriented(theta):
    tau = _check_univariate(theta)
    if tau < 1.0:
        return theta.swapped(), True
    return theta, False


def _interval_tau_ge1(tau, delta2, pi0):
    a = tau * tau - 1.0
    c0 = a * (pi0 + 2.0 * math.log(tau)) + delta2 * delta2
    c = delta2 * delta2 - 2.0 * math.log(tau) - pi0
    if a == 0.0:
        root = pi0 / (2.0 * delta2) - delta2 / 2.0
        return (-math.inf, root) if delta2 > 0 else (root, math.inf)
    if c0 <= 0.0:
        mid = -tau * delta2 / a
        return mid, mid
    sq = math.sqrt(c0)
    q = -(tau * delta2 + math.copysign(sq, delta2))
    r1 = q / a
    r2 = c / q
    return min(r1, r2), max(r1, r2)


def decision_interval(theta):
    """Region ``{x : h(x) < pi0}`` for ``p = 1``, as an interval.

    Uses a cancellation-free root formula so that scale ratios just above one
    approach the equal-variance limit continuously.
    """
    th, swapped = _oriented(theta)
    lo, hi = _interval_tau_ge1(float(th.tau[0, 0]), float(th.delta2[0]), th.pi0)
    return DecisionInterval(lo, hi, swapped)


def h_univariate(x, theta):
    return _h_scalar(np.asarray(x, dtype=float), float(theta.tau[0, 0]), float(theta.delta2[0]))


def hard_cdf_univariate(t, theta):
    """Exact CDF of the hard-assigned score for ``p = 1``."""
    th, _ = _oriented(theta)
    tau = float(th.tau[0, 0])
    d1 = float(th.delta1[0])
    d2 = float(th.delta2[0])
    pi1 = th.pi1
    pi2 = 1.0 - pi1
    am, ap = _interval_tau_ge1(tau, d2, th.pi0)
    bm, bp = tau * am + d2, tau * ap + d2
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        f = (norm_cdf(t)
             + pi1 * (norm_cdf(np.maximum(bm, np.minimum(t, bp)) / tau - d1)
                      - norm_cdf(np.maximum(am, np.minimum(t, ap))))
             + pi2 * (norm_cdf(tau * np.minimum(t, am) + d2)
                      + norm_cdf(tau * np.maximum(t, ap) + d2)
                      - norm_cdf(np.minimum(t, bm)) - norm_cdf(np.maximum(t, bp))))
    return np.clip(f, 0.0, 1.0)


def simulate_hard_scores(theta, m, gen):
    """Draw ``m`` hard-assigned scores from the latent representation."""
    p = theta.p
    z = gen.standard_normal((m, p))
    s1 = gen.random(m) < theta.pi1
    tau = theta.tau
    g = z @ tau.T + theta.delta2
    x = z @ np.linalg.inv(tau).T - theta.delta1
    zz = np.einsum("ij,ij->i", z, z)
    ldt = 2.0 * theta.log_det_tau
    r = np.where(s1, np.einsum("ij,ij->i", g, g) - zz, zz - np.einsum("ij,ij->i", x, x)) - ldt
    label1 = r >= theta.pi0
    out = z.copy()
    miss1 = s1 & ~label1
    miss0 = ~s1 & label1
    out[miss1] = g[miss1]
    out[miss0] = x[miss0]
    return out


@dataclass(frozen=True)
class MCEstimate:
    value: np.ndarray
    se: np.ndarray
    reps: int


def hard_contrast_cdf_mc(t, a, theta, reps=100_000, seed=0, threads=None):
    """Monte Carlo CDF of ``a^T T_H`` at each ``t`` with binomial standard errors."""
    if reps < 1000:
        raise ValueError("reps must be at least 1000")
    a = np.asarray(a, dtype=float).ravel()
    if a.size != theta.p or abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ValueError("contrast must be a unit p-vector")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    order = np.argsort(t)

    def work(chunk):
        j, m = chunk
        z = simulate_hard_scores(theta, m, rng.stream(seed, 0x4C44, j)) @ a
        z.sort()
        return np.searchsorted(z, t[order], side="left")

    counts = np.zeros(t.size, dtype=np.int64)
    for c in rng.pmap(work, rng.chunk_bounds(reps), threads):
        counts += c
    f = np.empty(t.size)
    f[order] = counts / reps
    se = np.sqrt(f * (1.0 - f) / reps)
    return MCEstimate(f, se, reps)
