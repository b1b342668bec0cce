"""Synthetic data: the univariate ramp study, a bivariate three-class phantom
on concentric templates, and circular lesions."""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import rng
from .mixture import MixtureModel, TemplateStack, VoxelGrid, spatial_weights
from .spdcore import norm_cdf, spd_sqrt

PHANTOM_DIMS = (320, 256)
PHANTOM_MEANS = np.array([[4.91, 6.68], [8.04, 10.77], [2.76, 3.71]])
PHANTOM_COVS = np.array([
    [[1.23, 1.63], [1.63, 2.21]],
    [[1.28, 1.34], [1.34, 1.61]],
    [[0.24, 0.31], [0.31, 0.44]],
])
PHANTOM_GAMMA = np.array([0.94, 0.01, 0.05])

# concentric template geometry, in units of the half-axes of the grid
CORE_RADIUS = 0.28
BAND_RADIUS = 0.93
EDGE_WIDTH = 0.025

_CLASS_KEY = 0x5359
_LESION_KEY = 0x4C45


def phantom_model(gamma=PHANTOM_GAMMA):
    """Three classes (GM, WM, CSF analogs) with template weights ``gamma``."""
    return MixtureModel(PHANTOM_MEANS, PHANTOM_COVS, gamma, spatial=True)


def univariate_setting(n=1000):
    """Two-class ramp study: templates on an even grid over [0, 1] and the model."""
    t = np.linspace(0.0, 1.0, n)
    b1 = norm_cdf(10.0 * t - 4.0)
    templates = TemplateStack(VoxelGrid(n, 1), np.column_stack([b1, 1.0 - b1]))
    model = MixtureModel([[0.1], [0.2]], [[[0.01]], [[0.01]]], [0.2, 0.8], spatial=True)
    return templates, model


def _radius(grid):
    xx, yy = grid.coords()
    cx, cy = (grid.nx - 1) / 2.0, (grid.ny - 1) / 2.0
    hx, hy = max(grid.nx / 2.0, 1.0), max(grid.ny / 2.0, 1.0)
    return np.hypot((xx - cx) / hx, (yy - cy) / hy)


def synth_templates(dims=PHANTOM_DIMS, style="concentric"):
    """Smooth template maps.

    ``concentric``: CSF-like core (class 3), GM-like band (class 1) and WM-like
    exterior (class 2) joined by logistic radial edges.
    ``ramp``: the two-class map of :func:`univariate_setting` over ``nx`` points.
    """
    grid = VoxelGrid(*dims)
    if style == "ramp":
        t = np.linspace(0.0, 1.0, grid.n)
        b1 = norm_cdf(10.0 * t - 4.0)
        return TemplateStack(grid, np.column_stack([b1, 1.0 - b1]))
    if style != "concentric":
        raise ValueError(f"unknown template style {style!r}")
    r = _radius(grid)
    core = expit((CORE_RADIUS - r) / EDGE_WIDTH)
    inner = expit((BAND_RADIUS - r) / EDGE_WIDTH)
    gm = (1.0 - core) * inner
    wm = (1.0 - core) * (1.0 - inner)
    return TemplateStack(grid, np.column_stack([gm, wm, core]))


@dataclass(frozen=True)
class LesionSpec:
    center: tuple
    radius: float = 10.0
    intensity_mean: float = 15.0
    intensity_sd: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("lesion radius must be positive")
        if not self.intensity_sd >= 0:
            raise ValueError("lesion sd must be nonnegative")


def default_lesion(dims=PHANTOM_DIMS, radius=10.0):
    """Lesion centered in the GM-like band, to the right of the core."""
    nx, ny = dims
    mid = 0.5 * (CORE_RADIUS + BAND_RADIUS)
    cx = int(round((nx - 1) / 2.0 + mid * nx / 2.0))
    cy = int(round((ny - 1) / 2.0))
    return LesionSpec((cx, cy), radius)


def lesion_mask(grid, lesion):
    """Boolean mask of pixels within ``radius`` of the center (boundary included)."""
    cx, cy = lesion.center
    r = lesion.radius
    if cx - r < 0 or cy - r < 0 or cx + r > grid.nx - 1 or cy + r > grid.ny - 1:
        raise ValueError(f"lesion at {lesion.center} with radius {r} does not fit a {grid.nx}x{grid.ny} grid")
    xx, yy = grid.coords()
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def inject_lesion(obs, lesion, seed=0, grid=None):
    """Overwrite lesion pixels with independent normal draws in every channel.

    ``lesion`` is a :class:`LesionSpec` (needs ``grid``) or a boolean mask;
    a mask must have one entry per observation row.
    """
    obs = np.array(obs, dtype=float)
    if isinstance(lesion, LesionSpec):
        if grid is None:
            raise ValueError("a LesionSpec needs the voxel grid")
        mask, mean, sd = lesion_mask(grid, lesion), lesion.intensity_mean, lesion.intensity_sd
    else:
        mask = np.asarray(lesion, dtype=bool)
        mean, sd = LesionSpec((0, 0)).intensity_mean, LesionSpec((0, 0)).intensity_sd
    if mask.shape != obs.shape[:1]:
        raise ValueError(f"mask of shape {mask.shape} does not match {obs.shape[0]} observations")
    m = int(mask.sum())
    if m:
        gen = rng.stream(seed, _LESION_KEY)
        obs[mask] = mean + sd * gen.standard_normal((m, obs.shape[1]))
    return obs


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    scenario: str = "A"
    dims: tuple = PHANTOM_DIMS
    model: MixtureModel = None
    templates: TemplateStack = None
    lesion: LesionSpec = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("A", "B"):
            raise ValueError("scenario must be 'A' or 'B'")
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if self.model is None:
            object.__setattr__(self, "model", phantom_model())
        if self.templates is None:
            object.__setattr__(self, "templates", synth_templates(dims))
        if self.templates.grid.dims != dims:
            raise ValueError("templates do not match the grid dimensions")
        if self.templates.K != self.model.K:
            raise ValueError("templates and model disagree on K")
        if self.scenario == "A" and self.lesion is not None:
            raise ValueError("scenario A has no lesion")
        if self.scenario == "B" and self.lesion is None:
            object.__setattr__(self, "lesion", default_lesion(dims))

    @property
    def grid(self):
        return VoxelGrid(*self.dims)


@dataclass(frozen=True, eq=False)
class Truth:
    labels: np.ndarray
    mask: np.ndarray
    model: MixtureModel
    templates: TemplateStack
    grid: VoxelGrid = field(default=None)


def sample_classes(pi, u):
    """Class index per row by inverse-CDF on uniforms ``u``."""
    cum = np.cumsum(pi, axis=1)
    lab = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(lab, pi.shape[1] - 1)


def draw_background(model, pi, seed, key=()):
    """Labels and observations for every row of the ``n x K`` matrix ``pi``.

    Each fixed-size chunk of rows uses its own counter-based stream, so the
    output does not depend on how the chunks are scheduled.
    """
    n, K = pi.shape
    p = model.p
    roots = np.stack([spd_sqrt(c).values for c in model.covs])
    labels = np.empty(n, dtype=np.int64)
    obs = np.empty((n, p))
    for j, m in rng.chunk_bounds(n):
        lo = j * rng.CHUNK
        gen = rng.stream(seed, _CLASS_KEY, *key, j)
        u = gen.random(m)
        z = gen.standard_normal((m, p))
        lab = sample_classes(pi[lo:lo + m], u)
        labels[lo:lo + m] = lab
        obs[lo:lo + m] = model.means[lab] + np.einsum("nab,nb->na", roots[lab], z)
    return labels, obs


def generate(spec):
    """Draw a phantom: ``(obs, truth)`` with ``obs`` of shape ``n x p``."""
    grid = spec.grid
    pi = class_probabilities(spec.model, spec.templates)
    labels, obs = draw_background(spec.model, pi, spec.seed)
    mask = np.zeros(grid.n, dtype=bool)
    if spec.lesion is not None:
        mask = lesion_mask(grid, spec.lesion)
        obs = inject_lesion(obs, spec.lesion, spec.seed, grid)
    return obs, Truth(labels, mask, spec.model, spec.templates, grid)


def class_probabilities(model, templates):
    """``n x K`` class probabilities, spatial or broadcast from global weights."""
    if model.spatial:
        return spatial_weights(model.weights, templates)
    return np.broadcast_to(model.weights, (templates.grid.n, model.K))
