"""Forward noise schedules and solver time grids.

A schedule fixes the perturbation ``x_t = alpha_t * x_0 + sigma_t * z`` over
continuous time.  Solvers never see ``t`` directly; they integrate in the
noise level ``lambda_t = sigma_t / alpha_t`` (which equals ``sigma_t`` for
variance-exploding schedules), so every schedule exposes an analytic inverse
``t_of_lambda``.

All arithmetic is float64.  Schedules are frozen dataclasses and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

VE_EDM = "ve-edm"
VP_LINEAR = "vp-linear"
VP_COSINE = "vp-cosine"
VP_FROM_EDM = "vp-from-edm"

SCHEDULE_KINDS = (VE_EDM, VP_LINEAR, VP_COSINE, VP_FROM_EDM)


def _as_float(t):
    return np.asarray(t, dtype=np.float64)


def _unwrap(a):
    return float(a) if np.ndim(a) == 0 else a


class NoiseSchedule:
    """Common interface for all schedules.

    Subclasses provide ``alpha``, ``sigma``, ``lam`` and ``t_of_lambda``;
    all accept scalars or arrays.
    """

    kind: str = ""
    is_vp: bool = True
    #: largest time at which the schedule is finite (the prior time ``T``)
    t_max: float = 1.0

    def alpha(self, t):
        raise NotImplementedError

    def sigma(self, t):
        raise NotImplementedError

    def lam(self, t):
        raise NotImplementedError

    def t_of_lambda(self, lam):
        raise NotImplementedError

    @property
    def params(self) -> dict[str, float]:
        raise NotImplementedError

    def grid(self, times, terminal_epsilon: float | None = None) -> "TimeGrid":
        """Evaluate the schedule on explicit, strictly decreasing times."""
        t = _as_float(times)
        return TimeGrid(
            nodes=t,
            sigmas=_as_float(self.sigma(t)),
            alphas=_as_float(self.alpha(t)),
            lambdas=_as_float(self.lam(t)),
            terminal_epsilon=terminal_epsilon,
        )

    def grid_from_levels(self, levels) -> "TimeGrid":
        """Grid whose ``lambdas`` are exactly ``levels``; times via the inverse map."""
        lv = _as_float(levels)
        t = _as_float(self.t_of_lambda(lv))
        alphas = _as_float(self.alpha(t))
        return TimeGrid(nodes=t, sigmas=alphas * lv, alphas=alphas, lambdas=lv.copy())


@dataclass(frozen=True)
class VESchedule(NoiseSchedule):
    """EDM-style variance-exploding schedule: ``alpha = 1`` and ``sigma(t) = t``."""

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0

    kind = VE_EDM
    is_vp = False

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ParameterError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.rho <= 0:
            raise ParameterError(f"rho must be positive, got {self.rho}")

    @property
    def t_max(self) -> float:  # type: ignore[override]
        return self.sigma_max

    @property
    def params(self):
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max, "rho": self.rho}

    def alpha(self, t):
        return _unwrap(np.ones_like(_as_float(t)))

    def sigma(self, t):
        return _unwrap(_as_float(t).copy())

    lam = sigma

    def t_of_lambda(self, lam):
        return _unwrap(_as_float(lam).copy())


def linear_vp_alpha(t, beta_min: float = 0.1, beta_max: float = 20.0):
    """Signal scale of the linear VP schedule at time ``t`` in [0, 1]."""
    t = _as_float(t)
    if np.any(t < 0) or np.any(t > 1):
        raise ParameterError("linear VP schedule is defined for t in [0, 1]")
    return _unwrap(np.exp(-0.25 * t**2 * (beta_max - beta_min) - 0.5 * t * beta_min))


@dataclass(frozen=True)
class LinearVPSchedule(NoiseSchedule):
    beta_min: float = 0.1
    beta_max: float = 20.0

    kind = VP_LINEAR

    def __post_init__(self):
        if self.beta_min < 0 or self.beta_max < self.beta_min:
            raise ParameterError(
                f"need 0 <= beta_min <= beta_max, got {self.beta_min}, {self.beta_max}")

    @property
    def params(self):
        return {"beta_min": self.beta_min, "beta_max": self.beta_max}

    def _log_alpha(self, t):
        t = _as_float(t)
        return -0.25 * t**2 * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min

    def alpha(self, t):
        return linear_vp_alpha(t, self.beta_min, self.beta_max)

    def sigma(self, t):
        return _unwrap(np.sqrt(-np.expm1(2.0 * self._log_alpha(t))))

    def lam(self, t):
        return _unwrap(np.sqrt(np.expm1(-2.0 * self._log_alpha(t))))

    def t_of_lambda(self, lam):
        # 1/4 (bmax - bmin) t^2 + 1/2 bmin t = 1/2 log(1 + lam^2)
        c = 0.5 * np.log1p(_as_float(lam) ** 2)
        a = 0.25 * (self.beta_max - self.beta_min)
        b = 0.5 * self.beta_min
        if a == 0.0:
            if b == 0.0:
                raise ParameterError("degenerate zero-beta schedule has no inverse")
            return _unwrap(c / b)
        return _unwrap(2.0 * c / (b + np.sqrt(b * b + 4.0 * a * c)))


@dataclass(frozen=True)
class CosineVPSchedule(NoiseSchedule):
    """Cosine VP schedule; ``alpha_t`` is the square root of ``f(t)/f(0)``.

    ``alpha`` reaches zero at ``t = 1``, so the usable range stops at ``t_max``.
    """

    s: float = 0.008
    t_max: float = 0.9946

    kind = VP_COSINE

    def __post_init__(self):
        if self.s < 0:
            raise ParameterError(f"s must be non-negative, got {self.s}")
        if not 0 < self.t_max < 1:
            raise ParameterError(f"t_max must lie in (0, 1), got {self.t_max}")

    @property
    def params(self):
        return {"s": self.s, "t_max": self.t_max}

    def _angle(self, t):
        return (_as_float(t) + self.s) / (1.0 + self.s) * (math.pi / 2)

    def alpha(self, t):
        return _unwrap(np.cos(self._angle(t)) / math.cos(self._angle(0.0)))

    def sigma(self, t):
        a = _as_float(self.alpha(t))
        return _unwrap(np.sqrt((1.0 - a) * (1.0 + a)))

    def lam(self, t):
        a = _as_float(self.alpha(t))
        return _unwrap(np.sqrt((1.0 - a) * (1.0 + a)) / a)

    def t_of_lambda(self, lam):
        a = 1.0 / np.sqrt(1.0 + _as_float(lam) ** 2)
        angle = np.arccos(np.clip(a * math.cos(self._angle(0.0)), -1.0, 1.0))
        return _unwrap(angle * 2.0 * (1.0 + self.s) / math.pi - self.s)


@dataclass(frozen=True)
class EDMVPSchedule(NoiseSchedule):
    """VP view of an EDM model: ``alpha = s(t)``, ``lambda = sigma_edm(t)``.

    With ``L(t) = beta_d t^2 / 2 + beta_min t`` we have
    ``sigma_edm(t) = sqrt(exp(L) - 1)`` and ``s(t) = exp(-L / 2)``.
    """

    beta_d: float = 19.9
    beta_min: float = 0.1
    epsilon: float = 1e-3

    kind = VP_FROM_EDM

    @property
    def params(self):
        return {"beta_d": self.beta_d, "beta_min": self.beta_min, "epsilon": self.epsilon}

    def _exponent(self, t):
        t = _as_float(t)
        return 0.5 * self.beta_d * t**2 + self.beta_min * t

    def alpha(self, t):
        return _unwrap(np.exp(-0.5 * self._exponent(t)))

    def sigma(self, t):
        return _unwrap(np.sqrt(-np.expm1(-self._exponent(t))))

    def lam(self, t):
        return _unwrap(np.sqrt(np.expm1(self._exponent(t))))

    def t_of_lambda(self, lam):
        big_l = np.log1p(_as_float(lam) ** 2)
        if self.beta_d == 0.0:
            return _unwrap(big_l / self.beta_min)
        root = np.sqrt(self.beta_min**2 + 2.0 * self.beta_d * big_l)
        if self.beta_min >= 0:
            return _unwrap(2.0 * big_l / (self.beta_min + root))
        return _unwrap((root - self.beta_min) / self.beta_d)


def edm_to_vp(sigma_min: float = 0.002, sigma_max: float = 80.0,
              epsilon: float = 1e-3) -> EDMVPSchedule:
    """Fit ``(beta_d, beta_min)`` so the VP view hits ``sigma_min`` at ``epsilon``
    and ``sigma_max`` at ``t = 1``.

    The exponent ``L(t)`` is linear in the two unknowns, so the fit is a 2x2
    solve.  Raises :class:`ParameterError` when the resulting ``L`` is not
    increasing on ``[epsilon, 1]``.
    """
    if not 0 < sigma_min < sigma_max:
        raise ParameterError(
            f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if not 0 < epsilon < 1:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    l_hi = math.log1p(sigma_max**2)
    l_lo = math.log1p(sigma_min**2)
    beta_d = 2.0 * (l_lo - l_hi * epsilon) / (epsilon**2 - epsilon)
    beta_min = l_hi - 0.5 * beta_d
    # L'(t) is affine, so positivity at both ends covers the interval
    if beta_d * epsilon + beta_min <= 0 or beta_d + beta_min <= 0:
        raise ParameterError(
            f"no increasing VP schedule matches sigma range [{sigma_min}, {sigma_max}]"
            f" with epsilon={epsilon}")
    return EDMVPSchedule(beta_d=beta_d, beta_min=beta_min, epsilon=epsilon)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly decreasing solver nodes ``t_0 > ... > t_M`` with their levels."""

    nodes: np.ndarray
    sigmas: np.ndarray
    alphas: np.ndarray
    lambdas: np.ndarray
    terminal_epsilon: float | None = field(default=None)

    def __post_init__(self):
        for name in ("nodes", "sigmas", "alphas", "lambdas"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.nodes.shape
        if len(n) != 1 or n[0] < 2:
            raise ParameterError("a time grid needs at least two nodes (M >= 1)")
        if any(getattr(self, a).shape != n for a in ("sigmas", "alphas", "lambdas")):
            raise ParameterError("grid arrays must have equal length")
        for name in ("nodes", "sigmas", "lambdas"):
            if not np.all(np.diff(getattr(self, name)) < 0):
                raise ParameterError(f"grid {name} must be strictly decreasing")
        if np.any(self.lambdas < 0) or np.any(self.alphas <= 0):
            raise ParameterError("grid needs lambda >= 0 and alpha > 0")

    @property
    def steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def is_ve(self) -> bool:
        return bool(np.all(self.alphas == 1.0))

    def __len__(self):
        return len(self.nodes)


def _edm_levels(count: int, sigma_min: float, sigma_max: float, rho: float) -> np.ndarray:
    if count == 1:
        return np.array([sigma_max])
    i = np.arange(count, dtype=np.float64)
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    levels = (hi + i / (count - 1) * (lo - hi)) ** rho
    # pin the endpoints to the closed form exactly
    levels[0], levels[-1] = sigma_max, sigma_min
    return levels


def edm_step_grid(M: int, sigma_min: float = 0.002, sigma_max: float = 80.0,
                  rho: float = 7.0, terminal: bool = True) -> TimeGrid:
    """Karras-style sigma grid on the VE schedule (``t = sigma``).

    ``M`` nodes come from the rho-warped interpolation between ``sigma_max``
    and ``sigma_min``; with ``terminal=True`` a final ``sigma = 0`` node is
    appended so the grid has ``M`` steps.
    """
    if M < 1 or (M < 2 and not terminal):
        raise ParameterError(f"not enough nodes for a grid: M={M}, terminal={terminal}")
    VESchedule(sigma_min, sigma_max, rho)  # validates the range
    levels = _edm_levels(M, sigma_min, sigma_max, rho)
    if terminal:
        levels = np.append(levels, 0.0)
    ones = np.ones_like(levels)
    return TimeGrid(nodes=levels, sigmas=levels, alphas=ones, lambdas=levels)


def uniform_time_grid(M: int, epsilon: float = 1e-3, schedule: NoiseSchedule | None = None,
                      terminal: bool = True) -> TimeGrid:
    """Uniform times from ``t_max`` (1 for most schedules) down to ``epsilon``.

    ``terminal=True`` appends ``t = 0``; ``terminal=False`` stops at ``epsilon``.
    """
    if not 0 < epsilon < 1:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if M < 1 or (M < 2 and not terminal):
        raise ParameterError(f"not enough nodes for a grid: M={M}, terminal={terminal}")
    schedule = LinearVPSchedule() if schedule is None else schedule
    top = schedule.t_max
    if epsilon >= top:
        raise ParameterError(f"epsilon {epsilon} must be below t_max {top}")
    if M == 1:
        t = np.array([top])
    else:
        i = np.arange(M, dtype=np.float64)
        t = top + i / (M - 1) * (epsilon - top)
        t[0], t[-1] = top, epsilon
    if terminal:
        t = np.append(t, 0.0)
    return schedule.grid(t, terminal_epsilon=epsilon)


def make_schedule(kind: str, **params) -> NoiseSchedule:
    """Build a schedule from its CLI name and constants."""
    if kind == VE_EDM:
        return VESchedule(**params)
    if kind == VP_LINEAR:
        return LinearVPSchedule(**params)
    if kind == VP_COSINE:
        return CosineVPSchedule(**params)
    if kind == VP_FROM_EDM:
        return edm_to_vp(**params)
    raise ParameterError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
