"""ER-SDE multistep solvers of order 1-3 for VE and VP parameterizations.

One step from level ``l_s`` down to ``l_t`` (``sigma`` for VE, ``lambda`` for
VP) computes, with ``r = phi(l_t) / phi(l_s)``::

    x_t = (a_t / a_s) r x_s + a_t (1 - r) x0
          + a_t [l_t - l_s + phi(l_t) S1] D             (order >= 2)
          + a_t [(l_t - l_s)^2 / 2 + phi(l_t) S2] U     (order 3)
          + a_t sqrt(l_t^2 - r^2 l_s^2) z

where ``x0`` is the model output at ``l_s``, ``D`` and ``U`` are backward
divided differences of past model outputs in the level, and ``S1``/``S2`` are
``N``-point quadratures of ``1/phi`` and ``(l - l_s)/phi`` over ``[l_t, l_s]``.
VE is the special case ``a = 1``.  Multistep buffers start empty and each
step uses the highest order its buffers support, so a run makes exactly one
model call per step.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, DividedDifferenceError, ParameterError, SolverError
from .noise_scale import NoiseScaleFn, catalogue
from .predictors import DataPredictor
from .schedules import TimeGrid
from .streams import NOISE_STREAM, PRIOR_STREAM, chain_normals

QUADRATURE_RULES = ("midpoint", "left")
DEFAULT_QUAD_POINTS = 100
# negative noise radicands (relative to l_t^2) smaller than this are rounding
RADICAND_TOL = 1e-12


def quadrature(phi: NoiseScaleFn, lo: float, hi: float, n: int = DEFAULT_QUAD_POINTS,
               rule: str = "midpoint", weighted: bool = False) -> float:
    """``N``-point Riemann sum of ``w(l) / phi(l)`` over ``[lo, hi]``.

    ``w = 1`` by default and ``w = l - hi`` with ``weighted=True``.  The
    ``left`` rule samples ``lo + k*h`` for ``k = 0..N-1``; ``midpoint`` shifts
    the samples by ``h/2``.
    """
    if n < 1:
        raise ParameterError(f"need at least one quadrature point, got {n}")
    if rule not in QUADRATURE_RULES:
        raise ParameterError(f"unknown quadrature rule {rule!r}")
    h = (hi - lo) / n
    k = np.arange(n, dtype=np.float64)
    if rule == "midpoint":
        k += 0.5
    pts = lo + k * h
    if weighted:
        return float(np.sum((pts - hi) / phi(pts) * h))
    return float(np.sum(h / phi(pts)))


@dataclass(frozen=True)
class StepCoefficients:
    level_prev: float
    level_next: float
    ratio: float
    noise_std: float
    s1: float
    s2: float
    delta1: float
    delta2: float

    @property
    def noise_var(self) -> float:
        return self.noise_std**2


def step_coefficients(phi: NoiseScaleFn, level_prev: float, level_next: float,
                      quad_points: int = DEFAULT_QUAD_POINTS, rule: str = "midpoint",
                      second: bool = True) -> StepCoefficients:
    """Scalar coefficients of one step; identical for every chain.

    At a terminal ``level_next = 0`` the products ``phi(l_t) S`` are taken in
    their limit, which is 0.
    """
    if level_next < 0 or level_prev < level_next:
        raise ParameterError(
            f"need 0 <= level_next <= level_prev, got {level_next}, {level_prev}")
    phi_next = float(phi(level_next)) if level_next > 0 else phi.at_zero
    ratio = float(phi.ratio(level_next, level_prev))
    if level_next > 0:
        # q = r * l_s / l_t; exactly 1 for phi(x) = x, so the ODE gets zero noise
        q = float(phi.excess(level_next, level_prev))
        frac = (1.0 - q) * (1.0 + q)
        if frac < -RADICAND_TOL:
            raise AdmissibilityError(
                f"{phi.name}: negative noise variance on step {level_prev!r} -> {level_next!r}"
                f" (phi ratio {ratio!r} exceeds level ratio {level_next / level_prev!r})",
                pair=(level_next, level_prev))
        noise_std = level_next * math.sqrt(max(frac, 0.0))
    else:
        noise_std = 0.0
    h = level_next - level_prev
    if phi_next == 0.0:
        s1 = s2 = math.nan
        delta1, delta2 = h, h * h / 2
    else:
        s1 = quadrature(phi, level_next, level_prev, quad_points, rule)
        delta1 = h + s1 * phi_next
        if second:
            s2 = quadrature(phi, level_next, level_prev, quad_points, rule, weighted=True)
            delta2 = h * h / 2 + s2 * phi_next
        else:
            s2 = delta2 = math.nan
    return StepCoefficients(level_prev, level_next, ratio, noise_std, s1, s2, delta1, delta2)


@dataclass
class History:
    """Multistep buffers: last model output (Q) and last divided difference (Q_d)."""

    prediction: np.ndarray | None = None
    level: float | None = None
    slope: np.ndarray | None = None
    #: far node of ``slope``; the second difference spans back to it
    slope_level: float | None = None


@dataclass
class StepResult:
    x: np.ndarray
    history: History
    coefficients: StepCoefficients
    order_used: int


def _usable_order(order: int, history: History) -> int:
    if order >= 3 and history.slope is not None:
        return 3
    if order >= 2 and history.prediction is not None:
        return 2
    return 1


def _advance(order, x, x0, history, coeffs, alpha_prev, alpha_next, z):
    """Apply one update given the fresh model output ``x0``."""
    level_prev = coeffs.level_prev
    new = History(prediction=x0, level=level_prev)
    used = _usable_order(order, history)
    r = coeffs.ratio
    out = (alpha_next / alpha_prev) * r * x + alpha_next * (1.0 - r) * x0
    if used >= 2:
        span = level_prev - history.level
        if span == 0:
            raise DividedDifferenceError(f"repeated level {level_prev!r} in first difference")
        slope = (x0 - history.prediction) / span
        new.slope, new.slope_level = slope, history.level
        out = out + alpha_next * coeffs.delta1 * slope
        if used == 3:
            half_span = (level_prev - history.slope_level) / 2
            if half_span == 0:
                raise DividedDifferenceError(
                    f"repeated level {level_prev!r} in second difference")
            curvature = (slope - history.slope) / half_span
            out = out + alpha_next * coeffs.delta2 * curvature
    out = out + alpha_next * coeffs.noise_std * z
    return StepResult(out, new, coeffs, used)


def step(order: int, x, level_prev: float, level_next: float, phi: NoiseScaleFn,
         model: DataPredictor, z, history: History | None = None, *,
         alpha_prev: float = 1.0, alpha_next: float = 1.0,
         quad_points: int = DEFAULT_QUAD_POINTS, quadrature_rule: str = "midpoint") -> StepResult:
    """One solver step of the requested order (degrading while buffers fill)."""
    if order not in (1, 2, 3):
        raise ParameterError(f"order must be 1, 2 or 3, got {order}")
    history = History() if history is None else history
    coeffs = step_coefficients(phi, level_prev, level_next, quad_points, quadrature_rule,
                               second=_usable_order(order, history) == 3)
    x = np.asarray(x, dtype=np.float64)
    x0 = model(x, level_prev, alpha_prev)
    return _advance(order, x, x0, history, coeffs, alpha_prev, alpha_next,
                    np.asarray(z, dtype=np.float64))


def ve_step_order1(x_prev, sigma_prev, sigma_next, phi, model, z) -> np.ndarray:
    return step(1, x_prev, sigma_prev, sigma_next, phi, model, z).x


def ve_step_order2(x_prev, sigma_prev, sigma_next, phi, model, z, history=None,
                   quad_points=DEFAULT_QUAD_POINTS, quadrature_rule="midpoint"):
    """Returns ``(x_next, history)``; an empty history gives the order-1 update."""
    res = step(2, x_prev, sigma_prev, sigma_next, phi, model, z, history,
               quad_points=quad_points, quadrature_rule=quadrature_rule)
    return res.x, res.history


def ve_step_order3(x_prev, sigma_prev, sigma_next, phi, model, z, history=None,
                   quad_points=DEFAULT_QUAD_POINTS, quadrature_rule="midpoint"):
    res = step(3, x_prev, sigma_prev, sigma_next, phi, model, z, history,
               quad_points=quad_points, quadrature_rule=quadrature_rule)
    return res.x, res.history


def vp_step_orderk(order, x_prev, node_prev, node_next, phi, model, z, history=None,
                   quad_points=DEFAULT_QUAD_POINTS, quadrature_rule="midpoint"):
    """VP step; ``node_prev`` and ``node_next`` are ``(alpha, lambda)`` pairs."""
    (a_prev, l_prev), (a_next, l_next) = node_prev, node_next
    res = step(order, x_prev, l_prev, l_next, phi, model, z, history,
               alpha_prev=a_prev, alpha_next=a_next,
               quad_points=quad_points, quadrature_rule=quadrature_rule)
    return res.x, res.history


@dataclass
class SamplerConfig:
    grid: TimeGrid
    phi: NoiseScaleFn = field(default_factory=catalogue)
    order: int = 3
    param: str = "ve"
    quad_points: int = DEFAULT_QUAD_POINTS
    quadrature: str = "midpoint"
    seed: int = 0
    chains: int = 1
    record_states: bool = True
    #: worker threads over chain blocks; ``None`` reads ERSDE_THREADS
    workers: int | None = None

    def validate(self) -> None:
        if self.order not in (1, 2, 3):
            raise ParameterError(f"order must be 1, 2 or 3, got {self.order}")
        if self.param not in ("ve", "vp"):
            raise ParameterError(f"param must be 've' or 'vp', got {self.param!r}")
        if self.param == "ve" and not self.grid.is_ve:
            raise ParameterError("the VE solver needs a grid with alpha = 1 at every node")
        if self.quad_points < 1:
            raise ParameterError(f"quad_points must be >= 1, got {self.quad_points}")
        if self.quadrature not in QUADRATURE_RULES:
            raise ParameterError(f"unknown quadrature rule {self.quadrature!r}")
        if self.chains < 1:
            raise ParameterError(f"chains must be >= 1, got {self.chains}")
        if self.order > self.grid.steps:
            warnings.warn(
                f"order {self.order} with only {self.grid.steps} steps: "
                "the multistep warm-up never reaches full order", stacklevel=3)

    @property
    def steps(self) -> int:
        return self.grid.steps

    def coefficients(self) -> list[StepCoefficients]:
        """Per-step coefficients; raises with the offending step annotated."""
        levels = self.grid.lambdas
        out = []
        for i in range(1, len(levels)):
            try:
                out.append(step_coefficients(self.phi, levels[i - 1], levels[i],
                                             self.quad_points, self.quadrature,
                                             second=self.order == 3))
            except SolverError as err:
                err.step = i
                err.args = (f"step {i}: {err.args[0]}",)
                raise
        return out


@dataclass
class SampleResult:
    samples: np.ndarray                 # (chains, D) terminal states
    states: np.ndarray | None           # (M + 1, chains, D) when recorded
    coefficients: list[StepCoefficients]
    orders_used: list[int]
    nfe: int                            # model calls per chain
    first_order3_step: int | None

    def trajectory(self, chain: int) -> np.ndarray:
        if self.states is None:
            raise ParameterError("states were not recorded; set record_states=True")
        return self.states[:, chain, :]


def prior_scale(config: SamplerConfig) -> float:
    """Std of the Gaussian prior: ``sigma_T`` for VE, 1 for VP."""
    return float(config.grid.lambdas[0]) if config.param == "ve" else 1.0


def draw_prior(config: SamplerConfig, dim: int, chains=None) -> np.ndarray:
    chains = range(config.chains) if chains is None else chains
    return prior_scale(config) * chain_normals(config.seed, chains, (dim,), PRIOR_STREAM)


def _workers(config: SamplerConfig) -> int:
    if config.workers is not None:
        return max(1, int(config.workers))
    try:
        return max(1, int(os.environ.get("ERSDE_THREADS", "1")))
    except ValueError:
        return 1


def _run_block(config, model, coeffs, x, chains):
    grid = config.grid
    alphas = grid.alphas if config.param == "vp" else np.ones_like(grid.alphas)
    noise = chain_normals(config.seed, chains, (config.steps, model.dim), NOISE_STREAM)
    states = [x] if config.record_states else None
    history = History()
    orders = []
    for i, c in enumerate(coeffs, start=1):
        try:
            x0 = model(x, c.level_prev, float(alphas[i - 1]))
            res = _advance(config.order, x, x0, history, c, float(alphas[i - 1]),
                           float(alphas[i]), noise[:, i - 1, :])
        except SolverError as err:
            err.step = i
            err.args = (f"step {i}: {err.args[0]}",)
            raise
        x, history = res.x, res.history
        if not np.all(np.isfinite(x)):
            raise SolverError(f"step {i}: non-finite state", step=i)
        orders.append(res.order_used)
        if states is not None:
            states.append(x)
    return x, (np.stack(states) if states is not None else None), orders


def sample(config: SamplerConfig, model: DataPredictor, x_T=None) -> SampleResult:
    """Run ``config.chains`` independent chains through the whole grid.

    ``x_T`` defaults to a draw from the prior (chain-indexed streams).  The
    result only depends on ``(config, x_T)``, never on the worker count.
    """
    config.validate()
    coeffs = config.coefficients()
    if x_T is None:
        x_T = draw_prior(config, model.dim)
    x_T = np.array(x_T, dtype=np.float64, ndmin=2)
    if x_T.shape != (config.chains, model.dim):
        raise ParameterError(
            f"x_T must have shape ({config.chains}, {model.dim}), got {x_T.shape}")

    n_workers = min(_workers(config), config.chains)
    bounds = np.linspace(0, config.chains, n_workers + 1).astype(int)
    blocks = [range(bounds[k], bounds[k + 1]) for k in range(n_workers)]
    if n_workers == 1:
        parts = [_run_block(config, model, coeffs, x_T, blocks[0])]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(
                lambda b: _run_block(config, model, coeffs, x_T[b.start:b.stop], b), blocks))

    samples = np.concatenate([p[0] for p in parts], axis=0)
    states = (np.concatenate([p[1] for p in parts], axis=1)
              if config.record_states else None)
    orders = parts[0][2]
    first3 = next((i for i, k in enumerate(orders, start=1) if k == 3), None)
    return SampleResult(samples, states, coeffs, orders, config.steps, first3)
