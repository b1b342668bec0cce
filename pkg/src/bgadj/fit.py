"""EM estimation of plain, spatial and Huber-robust Gaussian mixtures, and
error metrics against known parameters."""
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (DegenerateClusterError, DegenerateTemplateError,
                     NonFiniteLikelihoodError)
from .mixture import MixtureModel, TemplateStack, spatial_weights
from .spdcore import huber_k1

INITS = ("auto", "template-moments", "quantile-1d", "farthest-point", "explicit")
DECREASE_SLACK = 1e-6


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-5
    max_iter: int = 1000
    huber_q: float = 0.99
    robust: bool = False
    spatial: bool = False
    init: str = "auto"
    init_model: MixtureModel = None
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0.5 < self.huber_q < 1:
            raise ValueError("huber_q must lie in (0.5, 1)")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "explicit" and self.init_model is None:
            raise ValueError("explicit init needs init_model")

    @classmethod
    def gmm(cls, **kw):
        return cls(robust=False, spatial=False, **kw)

    @classmethod
    def sgmm(cls, **kw):
        return cls(robust=False, spatial=True, **kw)

    @classmethod
    def rb_sgmm(cls, **kw):
        return cls(robust=True, spatial=True, **kw)


@dataclass(frozen=True, eq=False)
class FitResult:
    model: MixtureModel
    responsibilities: np.ndarray
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    warnings: list = field(default_factory=list)
    decreases: int = 0
    restarts: int = 0

    @property
    def loglik(self):
        return float(self.loglik_trace[-1])


def _template_values(templates):
    if templates is None:
        return None
    return templates.values if isinstance(templates, TemplateStack) else np.asarray(templates, float)


def e_step(y, model, templates=None):
    """Responsibilities and total log-likelihood under ``model``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    pi = model.mixing(templates)
    with np.errstate(divide="ignore"):
        w, ll = kernels.responsibilities(model.logpdf(y), np.log(pi))
    return w, float(ll.sum())


def update_gamma(w, gamma_prev, templates):
    """One fixed-point step for the template weights, renormalized to the simplex."""
    b = _template_values(templates)
    gamma_prev = np.asarray(gamma_prev, dtype=float)
    den = b @ gamma_prev
    if np.any(den <= 0):
        raise DegenerateTemplateError("template row with zero total weight")
    return kernels.update_gamma(np.asarray(w, dtype=float), gamma_prev, b)


def _check_mass(mass, w, p):
    bad = (mass < p + 1) | (np.asarray(w).sum(axis=0) < p + 1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DegenerateClusterError(
            f"component {k} has effective weight {mass[k]:.3g} < {p + 1}")


def m_step_plain(y, w):
    """Weighted means and (1/sum w) weighted covariances per component."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    w = np.asarray(w, dtype=float)
    K, p = w.shape[1], y.shape[1]
    dummy = np.broadcast_to(np.eye(p), (K, p, p))
    means, covs, mass = kernels.mstep(y, w, np.zeros((K, p)), dummy, False, 0.0)
    _check_mass(mass, w, p)
    return means, covs


def m_step_robust(y, w, model_prev, k1):
    """Huber-weighted M-step; radii use the previous scatter, the covariance
    radii are taken about the new means."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    w = np.asarray(w, dtype=float)
    means, covs, mass = kernels.mstep(y, w, model_prev.means, model_prev.inv_sqrts, True, float(k1))
    _check_mass(mass, w, y.shape[1])
    return means, covs


# -- initialization ---------------------------------------------------------


def _weighted_moments(y, wts, shrink=0.0):
    """Weighted means and covariances; ``shrink`` pseudo-points of the pooled
    covariance keep small groups nonsingular."""
    mass = wts.sum(axis=0)
    if np.any(mass <= 0):
        raise DegenerateClusterError("initial partition has an empty component")
    means = (wts.T @ y) / mass[:, None]
    r = y[:, None, :] - means[None]
    scatter = np.einsum("nk,nka,nkb->kab", wts, r, r)
    pooled = np.atleast_2d(np.cov(y.T, bias=True))
    covs = (scatter + shrink * pooled) / (mass + shrink)[:, None, None]
    return means, kernels._floor_covs_np(covs)


def init_template_moments(y, templates):
    b = _template_values(templates)
    means, covs = _weighted_moments(y, b)
    K = b.shape[1]
    return MixtureModel(means, covs, np.full(K, 1.0 / K), spatial=True)


def init_quantile_1d(y, K):
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    order = np.argsort(y[:, 0], kind="stable")
    groups = np.array_split(order, K)
    onehot = np.zeros((y.shape[0], K))
    for k, g in enumerate(groups):
        onehot[g, k] = 1.0
    means, covs = _weighted_moments(y, onehot, shrink=2.0)
    return MixtureModel(means, covs, np.full(K, 1.0 / K))


def init_farthest_point(y, K, seed=0, subsample=4000):
    """Seed centers by farthest-point traversal of a random subsample, then
    take moments of the nearest-center partition of all points."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x1417])))
    n = y.shape[0]
    idx = gen.choice(n, size=min(n, subsample), replace=False)
    pts = y[np.sort(idx)]
    scale = y.std(axis=0)
    scale[scale == 0] = 1.0
    z = pts / scale
    centers = [z[gen.integers(z.shape[0])]]
    dmin = np.sum((z - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        c = z[int(np.argmax(dmin))]
        centers.append(c)
        dmin = np.minimum(dmin, np.sum((z - c) ** 2, axis=1))
    centers = np.array(centers)
    d = np.sum((y[:, None, :] / scale - centers[None]) ** 2, axis=2)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), np.argmin(d, axis=1)] = 1.0
    means, covs = _weighted_moments(y, onehot, shrink=y.shape[1] + 1.0)
    return MixtureModel(means, covs, onehot.mean(axis=0))


def _initial_model(y, templates, cfg, K):
    init = cfg.init
    if init == "explicit":
        m = cfg.init_model
        if cfg.spatial and not m.spatial:
            m = MixtureModel(m.means, m.covs, m.weights, spatial=True)
        return m
    if init == "auto":
        if cfg.spatial:
            init = "template-moments"
        elif y.shape[1] == 1:
            init = "quantile-1d"
        else:
            init = "farthest-point"
    if init == "template-moments":
        if templates is None:
            raise ValueError("template-moment initialization needs templates")
        m = init_template_moments(y, templates)
        if not cfg.spatial:
            m = MixtureModel(m.means, m.covs, m.weights)
        return m
    if init == "quantile-1d":
        if y.shape[1] != 1:
            raise ValueError("quantile initialization needs p = 1")
        m = init_quantile_1d(y, K)
    else:
        m = init_farthest_point(y, K, cfg.seed)
    if cfg.spatial:
        m = MixtureModel(m.means, m.covs, np.full(K, 1.0 / K), spatial=True)
    return m


def _perturbed(model, y, seed):
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x9E57])))
    scale = y.std(axis=0)
    means = model.means + 0.1 * scale * gen.standard_normal(model.means.shape)
    covs = model.covs + np.diag(0.05 * scale ** 2)[None]
    K = model.K
    return MixtureModel(means, covs, np.full(K, 1.0 / K), model.spatial)


# -- driver -----------------------------------------------------------------


def fit(y, templates=None, cfg=None, K=None):
    """Fit a mixture by EM.

    ``K`` defaults to the template count when templates are given.
    Raises on degenerate clusters (after one restart from a perturbed start)
    and on non-finite likelihoods.
    """
    cfg = cfg or FitConfig()
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    n, p = y.shape
    if templates is not None and not isinstance(templates, TemplateStack):
        raise TypeError("templates must be a TemplateStack")
    if cfg.spatial:
        if templates is None:
            raise ValueError("a spatial fit needs templates")
        if templates.grid.n != n:
            raise ValueError("template grid does not match the observations")
    if K is None:
        if templates is not None:
            K = templates.K
        elif cfg.init == "explicit":
            K = cfg.init_model.K
        else:
            raise ValueError("K is required without templates")
    if n < K * (p + 1):
        raise ValueError(f"need at least {K * (p + 1)} observations, got {n}")

    k1 = huber_k1(p, cfg.huber_q)
    b = templates.values if cfg.spatial else None
    model0 = _initial_model(y, templates, cfg, K)
    if model0.K != K:
        raise ValueError(f"initial model has {model0.K} components, expected {K}")

    restarts = 0
    while True:
        means, covs, mix, w, trace, iters, status = kernels.em(
            y, b, cfg.spatial, model0.weights, model0.means, model0.covs,
            cfg.robust, k1, cfg.tol, cfg.max_iter)
        if status == kernels.EM_DEGENERATE_CLUSTER and restarts == 0:
            restarts = 1
            model0 = _perturbed(model0, y, cfg.seed)
            continue
        break
    if status == kernels.EM_DEGENERATE_CLUSTER:
        raise DegenerateClusterError("a component lost its support twice (after a perturbed restart)")
    if status == kernels.EM_NONFINITE:
        raise NonFiniteLikelihoodError("log-likelihood became non-finite")
    if status == kernels.EM_DEGENERATE_TEMPLATE:
        raise DegenerateTemplateError("template row with zero total weight")

    trace = trace[: iters + 1].copy()
    diffs = np.diff(trace)
    decreases = int(np.sum(diffs < -DECREASE_SLACK))
    notes = []
    if decreases:
        notes.append(f"log-likelihood decreased at {decreases} iteration(s)")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    if restarts:
        notes.append("restarted once from a perturbed start after a degenerate cluster")
    converged = status == kernels.EM_CONVERGED
    if not converged:
        notes.append(f"no convergence within {cfg.max_iter} iterations")
    model = MixtureModel(means, covs, mix / mix.sum(), spatial=cfg.spatial)
    return FitResult(model, w, trace, int(iters), converged, notes, decreases, restarts)


# -- evaluation -------------------------------------------------------------


@dataclass(frozen=True)
class ParamError:
    names: tuple
    values: np.ndarray

    def rows(self):
        return list(zip(self.names, self.values.tolist()))

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def as_dict(self):
        return dict(self.rows())


def _pi_matrix(model, templates, n):
    if model.spatial:
        if templates is None:
            raise ValueError("spatial models need templates for the probability matrix")
        return spatial_weights(model.weights, templates)
    return np.broadcast_to(model.weights, (n, model.K))


def match_labels(est, truth):
    """Permutation of ``est`` components minimizing the summed mean error."""
    if est.K != truth.K or est.p != truth.p:
        raise ValueError("models differ in K or p")
    best, best_err = None, np.inf
    for perm in itertools.permutations(range(est.K)):
        err = sum(np.linalg.norm(est.means[j] - truth.means[k]) for k, j in enumerate(perm))
        if err < best_err:
            best, best_err = perm, err
    return list(best)


def param_error(est, truth, templates=None, n=None):
    """Mean errors (Euclidean), covariance errors (spectral norm) and the
    spectral norm of the difference of the n x K class-probability matrices."""
    if est.K != truth.K or est.p != truth.p:
        raise ValueError(f"models differ: K {est.K} vs {truth.K}, p {est.p} vs {truth.p}")
    K = est.K
    names, vals = [], []
    for k in range(K):
        names.append(f"mu{k + 1}")
        vals.append(np.linalg.norm(est.means[k] - truth.means[k]))
    for k in range(K):
        names.append(f"sigma{k + 1}")
        vals.append(np.linalg.norm(est.covs[k] - truth.covs[k], 2))
    if templates is not None or n is not None:
        n = templates.grid.n if templates is not None else int(n)
        d = _pi_matrix(est, templates, n) - _pi_matrix(truth, templates, n)
        names.append("pi")
        vals.append(np.linalg.norm(d, 2))
    return ParamError(tuple(names), np.array(vals))
