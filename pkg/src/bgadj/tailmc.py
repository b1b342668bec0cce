"""Monte Carlo relative size of voxelwise tests built on standardized scores."""
import csv
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fit, kernels, rng
from .errors import BgadjError
from .mixture import MixtureModel, assign, normalize_contrast, standardize_field
from .spdcore import ks_statistic, norm_quantile, spd_sqrt

SIDES = ("two", "left", "right")
DEFAULT_CONTRAST = (1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0))


@dataclass(frozen=True)
class TailSpec:
    alpha: float = 0.001
    side: str = "two"
    contrast: tuple = DEFAULT_CONTRAST
    reps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        if self.reps < 1:
            raise ValueError("reps must be positive")

    @property
    def threshold(self):
        if self.side == "two":
            return abs(norm_quantile(self.alpha / 2.0))
        if self.side == "left":
            return norm_quantile(self.alpha)
        return norm_quantile(1.0 - self.alpha)

    @property
    def wide_ci(self):
        return self.reps * self.alpha < 100


@dataclass(frozen=True)
class RelativeSize:
    R: float
    se: float
    count: int
    reps: int
    alpha: float
    warnings: tuple = ()


def _sample_mixture(model, m, gen):
    K, p = model.K, model.p
    cum = np.cumsum(model.weights)
    cls = np.minimum(np.searchsorted(cum, gen.random(m), side="right"), K - 1)
    z = gen.standard_normal((m, p))
    roots = np.stack([spd_sqrt(c).values for c in model.covs])
    y = np.einsum("nab,nb->na", roots[cls], z) + model.means[cls]
    return y, cls


def contrast_sample(model, method, assignment, a, m, gen):
    """Draw ``m`` observations from ``model`` and return ``a^T T``."""
    y, _ = _sample_mixture(model, m, gen)
    with np.errstate(divide="ignore"):
        w, _ = kernels.responsibilities(model.logpdf(y), np.log(model.weights)[None, :])
    s = assign(w, assignment)
    scores = kernels.standardize(y, s, model.means, model.covs, model.inv_sqrts, method)
    return scores @ a


def tail_counts(model, method, assignment, spec, cell=0, threads=None):
    """Exceedance counts ``(two, left, right)`` at the thresholds implied by ``spec.alpha``."""
    if model.spatial:
        raise ValueError("tail studies need a model with global weights")
    a = normalize_contrast(spec.contrast, model.p)
    c_two = abs(norm_quantile(spec.alpha / 2.0))
    c_left = norm_quantile(spec.alpha)
    c_right = norm_quantile(1.0 - spec.alpha)

    def work(chunk):
        j, m = chunk
        z = contrast_sample(model, method, assignment, a, m, rng.stream(spec.seed, cell, j))
        return np.array([np.sum(np.abs(z) >= c_two), np.sum(z <= c_left), np.sum(z >= c_right)])

    total = np.zeros(3, dtype=np.int64)
    for c in rng.pmap(work, rng.chunk_bounds(spec.reps), threads):
        total += c
    return tuple(int(v) for v in total)


def _as_relative(count, reps, alpha):
    phat = np.asarray(count) / reps
    se = np.sqrt(phat * (1.0 - phat) / reps) / alpha
    if phat.ndim == 0:
        return float(phat) / alpha, float(se)
    return phat / alpha, se


def relative_size(model, method="T1", assignment="soft", spec=TailSpec(), cell=0, threads=None):
    """True rejection rate of the normal-threshold test divided by ``alpha``."""
    counts = dict(zip(SIDES, tail_counts(model, method, assignment, spec, cell, threads)))
    count = counts[spec.side]
    R, se = _as_relative(count, spec.reps, spec.alpha)
    notes = ()
    if spec.wide_ci:
        notes = (f"reps * alpha = {spec.reps * spec.alpha:g} < 100; interval is wide",)
        warnings.warn(notes[0], stacklevel=2)
    return RelativeSize(R, se, count, spec.reps, spec.alpha, notes)


# ---------------------------------------------------------------------------
# parameter families and heatmaps
# ---------------------------------------------------------------------------


def case_model(case_id, kappa1, kappa2, rho, pi1):
    """Two-class bivariate model with ``mu2 = 0`` and ``Sigma2 = I``."""
    if case_id == 1:
        direction = np.array([1.0, 1.0])
    elif case_id == 2:
        direction = np.array([2.0, 1.0]) / math.sqrt(5.0)
    else:
        raise ValueError("case must be 1 or 2")
    mu1 = kappa1 * direction
    s1 = kappa2 * np.array([[1.0, rho], [rho, 1.0]])
    return MixtureModel([mu1, [0.0, 0.0]], [s1, np.eye(2)], [pi1, 1.0 - pi1])


@dataclass(frozen=True)
class CaseGrid:
    case_id: int = 1
    rho: float = 0.0
    kappa2: float = 1.0
    kappa1_grid: tuple = tuple(np.linspace(0.0, 8.0, 25))
    pi1_grid: tuple = tuple(np.linspace(0.02, 0.98, 25))

    def __post_init__(self):
        if self.case_id not in (1, 2):
            raise ValueError("case must be 1 or 2")
        if not -1 < self.rho < 1 or not self.kappa2 > 0:
            raise ValueError("need -1 < rho < 1 and kappa2 > 0")
        k1 = np.asarray(self.kappa1_grid, dtype=float)
        p1 = np.asarray(self.pi1_grid, dtype=float)
        if k1.size == 0 or p1.size == 0:
            raise ValueError("grids must be nonempty")
        if np.any(k1 < 0) or np.any(np.diff(k1) <= 0):
            raise ValueError("kappa1 grid must be increasing and nonnegative")
        if np.any((p1 <= 0) | (p1 >= 1)):
            raise ValueError("pi1 grid must lie in (0, 1)")

    @classmethod
    def coarse(cls, case_id, rho, kappa2, n_kappa=5, n_pi=5, kappa_max=8.0):
        return cls(case_id, rho, kappa2, tuple(np.linspace(0.0, kappa_max, n_kappa)),
                   tuple(np.linspace(0.02, 0.98, n_pi)))


@dataclass
class Heatmap:
    grid: CaseGrid
    R: np.ndarray
    se: np.ndarray
    method: str
    assignment: str
    spec: TailSpec
    meta: dict = field(default_factory=dict)

    def rows(self):
        for i, p1 in enumerate(self.grid.pi1_grid):
            for j, k1 in enumerate(self.grid.kappa1_grid):
                yield float(k1), float(p1), float(self.R[i, j]), float(self.se[i, j])

    def to_csv(self, path_or_file):
        write_csv(path_or_file, ["kappa1", "pi1", "R", "SE"], self.rows())


def heatmap(grid, method="T1", assignment="soft", spec=TailSpec(), threads=None):
    """Relative size on every ``(pi1, kappa1)`` cell; rows index ``pi1``."""
    nk = len(grid.kappa1_grid)
    cells = [(i, j) for i in range(len(grid.pi1_grid)) for j in range(nk)]

    def work(ij):
        i, j = ij
        model = case_model(grid.case_id, grid.kappa1_grid[j], grid.kappa2, grid.rho, grid.pi1_grid[i])
        counts = tail_counts(model, method, assignment, spec, cell=i * nk + j, threads=1)
        return _as_relative(dict(zip(SIDES, counts))[spec.side], spec.reps, spec.alpha)

    res = rng.pmap(work, cells, threads)
    R = np.array([r for r, _ in res]).reshape(len(grid.pi1_grid), nk)
    se = np.array([s for _, s in res]).reshape(len(grid.pi1_grid), nk)
    return Heatmap(grid, R, se, method, assignment, spec)


# ---------------------------------------------------------------------------
# symmetry and limit checks
# ---------------------------------------------------------------------------


def reflect_first_mean(model):
    """Flip the sign of ``delta1`` by reflecting ``mu1`` through ``mu2``."""
    means = model.means.copy()
    means[0] = 2.0 * means[1] - means[0]
    return MixtureModel(means, model.covs, model.weights)


@dataclass(frozen=True)
class SymmetryResult:
    passed: bool
    R_pos: float
    R_neg: float
    se_pos: float
    se_neg: float

    @property
    def z(self):
        se = math.hypot(self.se_pos, self.se_neg)
        return abs(self.R_pos - self.R_neg) / se if se > 0 else 0.0


def symmetry_check(model, spec=TailSpec(alpha=0.01), method="T1", assignment="soft", n_se=4.0, threads=None):
    """Compare the relative size at ``delta1`` and ``-delta1``.

    For one-sided specs, the left tail at ``delta1`` is compared with the
    right tail at ``-delta1`` (and vice versa), since the reflection negates
    the score.
    """
    mirror = reflect_first_mean(model)
    pos = dict(zip(SIDES, tail_counts(model, method, assignment, spec, cell=0, threads=threads)))
    neg = dict(zip(SIDES, tail_counts(mirror, method, assignment, spec, cell=1, threads=threads)))
    other = {"two": "two", "left": "right", "right": "left"}[spec.side]
    rp, sp = _as_relative(pos[spec.side], spec.reps, spec.alpha)
    rn, sn = _as_relative(neg[other], spec.reps, spec.alpha)
    se = math.hypot(sp, sn)
    return SymmetryResult(abs(rp - rn) <= n_se * se, rp, rn, sp, sn)


@dataclass(frozen=True)
class ConvergenceRow:
    index: int
    assignment: str
    ks: float
    p_value: float


def limit_convergence(regime, models, spec=TailSpec(), method="T1", assignments=("soft", "hard")):
    """KS distance of ``a^T T`` to the standard normal along a parameter sequence."""
    if regime not in (1, 2, 3, 4):
        raise ValueError("regime must be 1, 2, 3 or 4")
    if regime == 4 and spec.contrast is None:
        raise ValueError("regime 4 needs the contrast along which the components agree")
    rows = []
    for idx, model in enumerate(models):
        a = normalize_contrast(spec.contrast, model.p)
        for asg in assignments:
            z = np.concatenate([
                contrast_sample(model, method, asg, a, m, rng.stream(spec.seed, idx, j))
                for j, m in rng.chunk_bounds(spec.reps)
            ])
            d, pv = ks_statistic(z)
            rows.append(ConvergenceRow(idx, asg, d, pv))
    return rows


def _model_from_canonical(delta1, tau_sym, pi1):
    """Model with ``mu2 = 0``, ``Sigma2 = I`` realizing a symmetric ``tau``."""
    tau_sym = np.asarray(tau_sym, dtype=float)
    s1 = tau_sym @ tau_sym
    mu1 = tau_sym @ np.asarray(delta1, dtype=float)
    p = mu1.size
    return MixtureModel([mu1, np.zeros(p)], [s1, np.eye(p)], [pi1, 1.0 - pi1])


def regime_sequence(regime):
    """Default bivariate parameter sequences approaching each limit regime.

    All use the contrast ``(1, -1)/sqrt(2)``.
    """
    a = np.array(DEFAULT_CONTRAST)
    v = np.array([1.0, 1.0]) / math.sqrt(2.0)
    tau0 = np.array([[1.2, 0.3], [0.3, 0.5]])
    d0 = np.array([1.0, -0.6])
    if regime == 1:
        return [_model_from_canonical(d0, tau0, p1) for p1 in (0.5, 0.9, 0.99, 0.999)]
    if regime == 2:
        u = d0 / np.linalg.norm(d0)
        return [_model_from_canonical(r * u, tau0, 0.5) for r in (1.0, 3.0, 10.0, 30.0)]
    if regime == 3:
        b = np.array([[0.8, 0.4], [0.4, -0.6]])
        b /= np.linalg.norm(b)
        u = d0 / np.linalg.norm(d0)
        return [_model_from_canonical(e * u, np.eye(2) + e * b, 0.5) for e in (1.0, 0.3, 0.1, 0.01)]
    if regime == 4:
        tau = np.eye(2) + 1.5 * np.outer(v, v)
        return [_model_from_canonical(2.0 * v + e * a, tau, 0.5) for e in (1.0, 0.3, 0.1, 0.01)]
    raise ValueError("regime must be 1, 2, 3 or 4")


# ---------------------------------------------------------------------------
# voxelwise studies with re-estimated parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VoxelwiseSize:
    """Relative size per voxel over the repetitions whose fit succeeded."""

    R: np.ndarray
    se: np.ndarray
    reps: int
    failed: int


def pipeline_relative_size(model, templates, estimators, spec=TailSpec(alpha=0.01),
                           scores=(("T1", "soft"),), threads=None):
    """Voxelwise relative size when every repetition redraws the image and refits.

    ``estimators`` maps a name to a :class:`fit.FitConfig`, or to ``None`` to
    standardize with the true ``model``. Each repetition draws class labels
    and observations at every voxel of ``templates`` from ``model``, fits each
    estimator, standardizes and counts exceedances of the ``spec`` threshold.
    Returns ``{(name, method, assignment): VoxelwiseSize}``. Repetitions
    whose fit fails are left out of that estimator's counts.
    """
    from .synth import class_probabilities, draw_background

    pi = class_probabilities(model, templates)
    a = normalize_contrast(spec.contrast, model.p) if model.p > 1 else np.ones(1)
    c = spec.threshold
    n = templates.grid.n
    names = list(estimators)

    def exceed(z):
        if spec.side == "two":
            return np.abs(z) >= c
        if spec.side == "left":
            return z <= c
        return z >= c

    def work(r):
        _, y = draw_background(model, pi, spec.seed, key=(r,))
        out = {}
        for name in names:
            cfg = estimators[name]
            if cfg is None:
                est = model
            else:
                try:
                    est = fit.fit(y, templates if cfg.spatial else None, cfg, K=model.K).model
                except BgadjError:
                    out[name] = None
                    continue
            tpl = templates if est.spatial else None
            out[name] = [exceed(standardize_field(y, est, tpl, m, asg).scores @ a) for m, asg in scores]
        return out

    counts = {(nm, m, asg): np.zeros(n, dtype=np.int64) for nm in names for m, asg in scores}
    ok = dict.fromkeys(names, 0)
    for res in rng.pmap(work, range(spec.reps), threads):
        for name, hits in res.items():
            if hits is None:
                continue
            ok[name] += 1
            for (m, asg), h in zip(scores, hits):
                counts[(name, m, asg)] += h
    out = {}
    for key, cnt in counts.items():
        reps = ok[key[0]]
        if reps == 0:
            raise BgadjError(f"every fit failed for estimator {key[0]!r}")
        R, se = _as_relative(cnt, reps, spec.alpha)
        out[key] = VoxelwiseSize(R, se, reps, spec.reps - reps)
    return out


def write_csv(path_or_file, header, rows):
    """CSV with every float at 17 significant digits."""
    def fmt(v):
        return format(v, ".17g") if isinstance(v, float) else str(v)

    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    finally:
        if own:
            fh.close()
