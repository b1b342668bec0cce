"""Mixture model types, responsibilities, label assignment and the three
standardizing transforms."""
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateTemplateError
from .spdcore import SpdMatrix, norm_cdf

SIMPLEX_TOL = 1e-12
METHODS = ("T1", "T2", "T3")
ASSIGNMENTS = ("soft", "hard")


@dataclass(frozen=True)
class VoxelGrid:
    nx: int
    ny: int = 1

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def n(self):
        return self.nx * self.ny

    @property
    def dims(self):
        return (self.nx, self.ny)

    def coords(self):
        """Pixel coordinates ``(x, y)`` in vectorized order (x fastest)."""
        yy, xx = np.divmod(np.arange(self.n), self.nx)
        return xx, yy


@dataclass(frozen=True, eq=False)
class TemplateStack:
    """Per-voxel prior class probabilities, rows renormalized to sum to one."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        b = np.array(self.values, dtype=float)
        if b.ndim != 2 or b.shape[0] != self.grid.n:
            raise ValueError(f"templates of shape {b.shape} do not match a grid of {self.grid.n} voxels")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise ValueError("template values must be finite and nonnegative")
        s = b.sum(axis=1)
        if np.any(s <= 0):
            raise DegenerateTemplateError(f"{int(np.sum(s <= 0))} voxels have all-zero templates")
        b /= s[:, None]
        b.setflags(write=False)
        object.__setattr__(self, "values", b)

    @property
    def K(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    cov: SpdMatrix


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """``K`` Gaussian components with global weights or template weights.

    When ``spatial`` is true, ``weights`` are the template weights gamma and
    voxel mixing probabilities come from :func:`spatial_weights`.
    """

    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray
    spatial: bool = False
    _white: tuple = field(init=False, repr=False)

    def __post_init__(self):
        means = np.atleast_2d(np.array(self.means, dtype=float))
        K, p = means.shape
        covs = np.array(self.covs, dtype=float).reshape(K, p, p)
        weights = np.array(self.weights, dtype=float).ravel()
        if weights.shape != (K,):
            raise ValueError(f"expected {K} weights, got {weights.shape}")
        if not np.all(np.isfinite(means)):
            raise ValueError("component means must be finite")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("weights must be positive and sum to one")
        spd = [SpdMatrix(c) for c in covs]
        covs = np.stack([s.values for s in spd])
        inv_sqrts = np.stack([s.inv_sqrt().values for s in spd])
        logdets = np.array([s.logdet() for s in spd])
        for a in (means, covs, weights, inv_sqrts, logdets):
            a.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_white", (inv_sqrts, logdets))

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def p(self):
        return self.means.shape[1]

    @property
    def inv_sqrts(self):
        return self._white[0]

    @property
    def logdets(self):
        return self._white[1]

    @property
    def components(self):
        return [GaussianComponent(m, SpdMatrix(c)) for m, c in zip(self.means, self.covs)]

    def mixing(self, templates=None):
        """Mixing probabilities: ``(1, K)`` for global weights, ``(n, K)`` for spatial."""
        if not self.spatial:
            return self.weights[None, :]
        if templates is None:
            raise ValueError("a spatial model needs templates to resolve voxel weights")
        if templates.K != self.K:
            raise ValueError(f"templates have {templates.K} classes, model has {self.K}")
        return spatial_weights(self.weights, templates)

    def permuted(self, perm):
        perm = list(perm)
        return MixtureModel(self.means[perm], self.covs[perm], self.weights[perm], self.spatial)

    def logpdf(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return kernels.component_logpdf(y, self.means, self.inv_sqrts, self.logdets)


def spatial_weights(gamma, templates):
    """Voxel mixing probabilities ``gamma_k b_ik / sum_j gamma_j b_ij``."""
    b = templates.values if isinstance(templates, TemplateStack) else np.asarray(templates, float)
    num = np.asarray(gamma, dtype=float)[None, :] * b
    den = num.sum(axis=1, keepdims=True)
    if np.any(den <= 0):
        raise DegenerateTemplateError("template row with zero total weight")
    return num / den


def responsibilities(y, model, pi=None):
    """Posterior class probabilities for one observation or a stack of them.

    ``pi`` overrides the model's mixing weights and may be ``(K,)`` or ``(n, K)``.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    if np.any(np.isnan(y2)):
        raise ValueError("observation contains NaN")
    pi = model.mixing() if pi is None else np.atleast_2d(np.asarray(pi, dtype=float))
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    w, _ = kernels.responsibilities(model.logpdf(y2), logpi)
    return w[0] if single else w


def assign(w, mode="soft"):
    """Estimated labels from responsibilities; ties go to the lowest class index."""
    w = np.asarray(w, dtype=float)
    if mode == "soft":
        return w.copy()
    if mode != "hard":
        raise ValueError(f"unknown assignment {mode!r}")
    out = np.zeros_like(w)
    idx = np.argmax(w, axis=-1)
    np.put_along_axis(out, np.expand_dims(idx, -1), 1.0, axis=-1)
    return out


def _weighted_center(s, model):
    s = np.asarray(s, dtype=float)
    return s, s @ model.means


def standardize_t1(y, s, model):
    """Blend the components' inverse square roots, then whiten the residual."""
    s, mu = _weighted_center(s, model)
    mat = np.einsum("k,kab->ab", s, model.inv_sqrts)
    return mat @ (np.asarray(y, dtype=float) - mu)


def standardize_t2(y, s, model):
    """Whiten with the inverse square root of the blended covariance."""
    s, mu = _weighted_center(s, model)
    comb = SpdMatrix(np.einsum("k,kab->ab", s, model.covs))
    return comb.inv_sqrt().values @ (np.asarray(y, dtype=float) - mu)


def standardize_t3(y, s, model):
    """Whiten with the blended marginal covariance (within plus between classes)."""
    s, mu = _weighted_center(s, model)
    dm = model.means - mu
    comb = np.einsum("k,kab->ab", s, model.covs) + np.einsum("k,ka,kb->ab", s, dm, dm)
    return SpdMatrix(comb).inv_sqrt().values @ (np.asarray(y, dtype=float) - mu)


@dataclass(frozen=True, eq=False)
class ScoreField:
    grid: VoxelGrid
    scores: np.ndarray
    method: str
    assignment: str

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float)
        if scores.ndim != 2 or scores.shape[0] != self.grid.n:
            raise ValueError("scores do not match the grid")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)


def standardize_field(obs, model, templates=None, method="T1", assignment="soft", grid=None):
    """Standardized scores at every voxel."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if assignment not in ASSIGNMENTS:
        raise ValueError(f"unknown assignment {assignment!r}")
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if obs.ndim != 2 or obs.shape[1] != model.p:
        raise ValueError(f"observations must be n x {model.p}")
    n = obs.shape[0]
    if grid is None:
        grid = templates.grid if templates is not None else VoxelGrid(n, 1)
    if grid.n != n:
        raise ValueError("observation count does not match the grid")
    if templates is not None and templates.grid.n != n:
        raise ValueError("template grid does not match the observations")
    pi = model.mixing(templates)
    with np.errstate(divide="ignore"):
        w, _ = kernels.responsibilities(model.logpdf(obs), np.log(pi))
    s = assign(w, assignment)
    scores = kernels.standardize(obs, s, model.means, model.covs, model.inv_sqrts, method)
    return ScoreField(grid, scores, method, assignment)


@dataclass(frozen=True)
class ContrastResult:
    z: np.ndarray
    p_two: np.ndarray
    p_left: np.ndarray
    p_right: np.ndarray


def normalize_contrast(a, p=None):
    a = np.asarray(a, dtype=float).ravel()
    if p is not None and a.size != p:
        raise ValueError(f"contrast has {a.size} entries, scores have {p}")
    nrm = np.linalg.norm(a)
    if nrm == 0 or not np.isfinite(nrm):
        raise ValueError("contrast vector must be nonzero and finite")
    if abs(nrm - 1.0) > 1e-12:
        warnings.warn(f"contrast renormalized from norm {nrm:.6g} to 1", stacklevel=3)
        a = a / nrm
    return a


def contrast_scores(field_or_scores, a):
    """Contrast ``a^T T`` at each voxel with two- and one-sided normal p-values."""
    scores = field_or_scores.scores if isinstance(field_or_scores, ScoreField) else np.atleast_2d(field_or_scores)
    a = normalize_contrast(a, scores.shape[1])
    z = scores @ a
    left = norm_cdf(z)
    right = norm_cdf(-z)
    return ContrastResult(z, 2.0 * norm_cdf(-np.abs(z)), left, right)
