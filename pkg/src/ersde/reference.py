"""Independent oracles and metrics for checking the solvers.

For a data predictor that is affine in the state (a single-Gaussian oracle, or
a constant), every solver step is an affine map of ``x_T`` and the injected
noise.  :func:`propagate_affine` tracks those maps symbolically and returns
the exact mean and variance of the solver's output at every node, with no
Monte Carlo.  The exact probability-flow map is known in closed form for the
same predictors, which gives a ground truth for convergence studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ParameterError
from .noise_scale import NoiseScaleFn, catalogue
from .predictors import ConstantPredictor, DataPredictor, GaussianMixtureOracle, MixturePredictor
from .schedules import TimeGrid, edm_step_grid
from .solvers import SamplerConfig, prior_scale


def exact_gaussian_marginal(oracle: GaussianMixtureOracle, sigma: float, alpha: float = 1.0):
    """Mean and per-dimension variance of ``alpha x_0 + sigma z``."""
    if not oracle.is_single:
        raise ParameterError("exact marginal is implemented for single-Gaussian oracles only")
    s2 = float(oracle.scales[0]) ** 2
    return alpha * oracle.means[0], alpha * alpha * s2 + sigma * sigma


class LinearForm:
    """``offset + coef . xi`` per dimension, with ``xi`` i.i.d. standard normal.

    ``coef`` is shared across dimensions because every map involved is
    isotropic.  ``xi[0]`` is the standardized prior draw, ``xi[i]`` the step-i noise.
    """

    __slots__ = ("offset", "coef")

    def __init__(self, offset, coef):
        self.offset = np.asarray(offset, dtype=np.float64)
        self.coef = np.asarray(coef, dtype=np.float64)

    def __add__(self, other):
        return LinearForm(self.offset + other.offset, self.coef + other.coef)

    def __sub__(self, other):
        return LinearForm(self.offset - other.offset, self.coef - other.coef)

    def __mul__(self, c):
        return LinearForm(self.offset * c, self.coef * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return LinearForm(self.offset / c, self.coef / c)

    @property
    def mean(self) -> np.ndarray:
        return self.offset

    @property
    def var(self) -> float:
        return float(self.coef @ self.coef)


@dataclass
class NodeMoments:
    mean: np.ndarray
    var: float


def propagate_affine(config: SamplerConfig, model, prior_mean=None,
                     prior_var: float | None = None) -> list[NodeMoments]:
    """Exact per-node law of the solver output for an affine ``x_theta``.

    ``model`` must expose ``affine_coefficients(level, alpha) -> (slope, offset)``
    and ``dim``.  The prior defaults to the sampler's own prior
    (zero mean, ``prior_scale(config)**2`` variance).
    """
    if not hasattr(model, "affine_coefficients"):
        raise ParameterError("propagate_affine needs a predictor with an affine form")
    grid, m = config.grid, config.steps
    dim = model.dim
    mean0 = np.zeros(dim) if prior_mean is None else np.broadcast_to(
        np.asarray(prior_mean, dtype=np.float64), (dim,))
    var0 = prior_scale(config) ** 2 if prior_var is None else float(prior_var)
    alphas = grid.alphas if config.param == "vp" else np.ones_like(grid.alphas)
    levels = grid.lambdas

    basis = np.zeros(m + 1)
    basis[0] = math.sqrt(var0)
    x = LinearForm(mean0, basis)
    out = [NodeMoments(x.mean.copy(), x.var)]
    q = q_level = d = d_level = None
    for i, c in enumerate(config.coefficients(), start=1):
        a_s, a_t = float(alphas[i - 1]), float(alphas[i])
        slope, offset = model.affine_coefficients(float(levels[i - 1]), a_s)
        pred = LinearForm(slope * x.offset + offset, slope * x.coef)
        nxt = x * (a_t / a_s * c.ratio) + pred * (a_t * (1.0 - c.ratio))
        new_d = new_d_level = None
        if config.order >= 2 and q is not None:
            new_d = (pred - q) / (levels[i - 1] - q_level)
            new_d_level = q_level
            nxt = nxt + new_d * (a_t * c.delta1)
            if config.order >= 3 and d is not None:
                u = (new_d - d) / ((levels[i - 1] - d_level) / 2)
                nxt = nxt + u * (a_t * c.delta2)
        noise = np.zeros(m + 1)
        noise[i] = a_t * c.noise_std
        x = nxt + LinearForm(np.zeros(dim), noise)
        q, q_level = pred, float(levels[i - 1])
        if new_d is not None:
            d, d_level = new_d, new_d_level
        out.append(NodeMoments(x.mean.copy(), x.var))
    return out


def exact_ode_map(model, grid: TimeGrid, param: str = "ve"):
    """``(A, b)`` with ``x(t_M) = A x(t_0) + b`` under the exact probability-flow ODE.

    Closed forms exist for a single-Gaussian oracle and for a constant predictor.
    """
    a0, a1 = (grid.alphas[0], grid.alphas[-1]) if param == "vp" else (1.0, 1.0)
    l0, l1 = grid.lambdas[0], grid.lambdas[-1]
    if isinstance(model, MixturePredictor) and model.oracle.is_single:
        s2 = float(model.oracle.scales[0]) ** 2
        centre = model.oracle.means[0]
        gain = (a1 / a0) * math.sqrt((s2 + l1 * l1) / (s2 + l0 * l0))
    elif isinstance(model, ConstantPredictor):
        centre = model.value
        gain = (a1 / a0) * (l1 / l0)
    else:
        raise ParameterError("no closed-form flow for this predictor")
    return gain, a1 * centre - gain * a0 * centre


def gaussian_w2(mean_a, var_a: float, mean_b, var_b: float) -> float:
    """2-Wasserstein distance between isotropic Gaussians of equal dimension."""
    mean_a, mean_b = np.atleast_1d(mean_a), np.atleast_1d(mean_b)
    dm = float(np.sum((mean_a - mean_b) ** 2))
    ds = mean_a.size * (math.sqrt(var_a) - math.sqrt(var_b)) ** 2
    return math.sqrt(dm + ds)


@dataclass
class ConvergenceResult:
    order: int
    steps: list[int]
    errors: list[float]
    slope: float


def loglog_slope(steps, errors) -> float:
    """Negated least-squares slope of log(error) against log(M)."""
    steps, errors = np.asarray(steps, float), np.asarray(errors, float)
    if np.any(errors <= 0):
        return math.nan
    return float(-np.polyfit(np.log(steps), np.log(errors), 1)[0])


def convergence_study(order: int, model=None, steps=(10, 20, 40, 80, 160), *,
                      phi: NoiseScaleFn | None = None, grid_factory=edm_step_grid,
                      param: str = "ve", schedule=None, quad_points: int = 100,
                      quadrature: str = "midpoint") -> ConvergenceResult:
    """Deterministic global error against the exact flow as ``M`` grows.

    The error at each ``M`` is the W2 distance between the solver's terminal
    law (from :func:`propagate_affine`) and the exact pushforward of the same
    prior.  With the default single-Gaussian model the prior is the true
    marginal at ``t_0``, so the exact terminal law is the data distribution.
    ``schedule`` maps a VE grid's levels onto a VP schedule when ``param='vp'``.
    """
    model = MixturePredictor(GaussianMixtureOracle.single([0.0])) if model is None else model
    phi = catalogue("ode") if phi is None else phi
    errors = []
    for m in steps:
        grid = grid_factory(m)
        if schedule is not None:
            grid = schedule.grid_from_levels(grid.lambdas)
        cfg = SamplerConfig(grid=grid, phi=phi, order=order, param=param,
                            quad_points=quad_points, quadrature=quadrature)
        a0 = float(grid.alphas[0]) if param == "vp" else 1.0
        if isinstance(model, MixturePredictor):
            pm, pv = exact_gaussian_marginal(model.oracle, a0 * float(grid.lambdas[0]), a0)
        else:
            pm, pv = np.zeros(model.dim), prior_scale(cfg) ** 2
        law = propagate_affine(cfg, model, pm, pv)[-1]
        gain, shift = exact_ode_map(model, grid, param)
        errors.append(gaussian_w2(law.mean, law.var, gain * np.asarray(pm) + shift, gain**2 * pv))
    return ConvergenceResult(order, list(steps), errors, loglog_slope(steps, errors))


def reference_step(x_prev, level_prev: float, level_next: float, phi: NoiseScaleFn,
                   model: DataPredictor, x_next=None, points: int = 10_000) -> np.ndarray:
    """Nonlinear term ``phi(l_t) * int_{l_t}^{l_s} phi'(l)/phi(l)^2 x_theta(x(l), l) dl``.

    Midpoint rule on ``points`` nodes.  The state argument follows the straight
    line from ``x_prev`` (at ``l_s``) to ``x_next`` (at ``l_t``), or stays at
    ``x_prev`` when ``x_next`` is omitted.  VE levels only.
    """
    x_prev = np.asarray(x_prev, dtype=np.float64)
    x_next = x_prev if x_next is None else np.asarray(x_next, dtype=np.float64)
    if level_next <= 0:
        return np.zeros_like(x_prev)
    h = (level_prev - level_next) / points
    ells = level_next + (np.arange(points) + 0.5) * h
    weights = phi.derivative_at(ells) / np.asarray(phi(ells)) ** 2 * h
    total = np.zeros_like(x_prev)
    span = level_prev - level_next
    for ell, w in zip(ells, weights):
        frac = (level_prev - ell) / span
        total += w * model(x_prev + frac * (x_next - x_prev), float(ell))
    return float(phi(level_next)) * total


def energy_distance(a, b, max_points: int = 10_000, seed: int = 0,
                    chunk: int = 2048) -> float:
    """V-statistic energy distance ``2E|A-B| - E|A-A'| - E|B-B'|``.

    Batches larger than ``max_points`` are subsampled without replacement
    with a fixed seed.
    """
    a, b = _as_batch(a), _as_batch(b)
    if a.size == 0 or b.size == 0:
        raise ParameterError("energy distance needs non-empty batches")
    if a.shape[1] != b.shape[1]:
        raise ParameterError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(seed)
    if a.shape[0] > max_points:
        a = a[rng.choice(a.shape[0], max_points, replace=False)]
    if b.shape[0] > max_points:
        b = b[rng.choice(b.shape[0], max_points, replace=False)]
    ab = _mean_distance(a, b, chunk)
    aa = _mean_distance(a, a, chunk)
    bb = _mean_distance(b, b, chunk)
    return max(2.0 * ab - aa - bb, 0.0)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def _mean_distance(a, b, chunk):
    total = 0.0
    for start in range(0, a.shape[0], chunk):
        total += cdist(a[start:start + chunk], b).sum()
    return total / (a.shape[0] * b.shape[0])


@dataclass
class MetricReport:
    mean_error: float
    cov_error: float
    energy_distance: float
    n_samples: int
    n_reference: int


def compute_metrics(samples, reference, max_points: int = 10_000, seed: int = 0) -> MetricReport:
    """Moment errors and energy distance between two sample batches."""
    samples, reference = _as_batch(samples), _as_batch(reference)
    mean_err = float(np.linalg.norm(samples.mean(0) - reference.mean(0)))
    cov_s = np.atleast_2d(np.cov(samples, rowvar=False))
    cov_r = np.atleast_2d(np.cov(reference, rowvar=False))
    return MetricReport(
        mean_error=mean_err,
        cov_error=float(np.max(np.abs(cov_s - cov_r))),
        energy_distance=energy_distance(samples, reference, max_points, seed),
        n_samples=samples.shape[0],
        n_reference=reference.shape[0],
    )
