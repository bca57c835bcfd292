"""Reverse-process noise-scale functions ``phi`` and the diagnostics built on them.

A noise-scale function picks one member of the extended reverse SDE family.
Solvers only ever use ratios ``phi(x_t) / phi(x_s)``, so ``phi`` is defined up
to a positive constant.  ``phi(x) = x`` gives the probability-flow ODE and
``phi(x) = x**2`` the classic reverse SDE.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError, ParameterError
from .schedules import TimeGrid

# relative slack for floating-point jitter in the ratio bound
ADMISSIBILITY_RTOL = 1e-12

ScalarFn = Callable[[np.ndarray], np.ndarray]


def _positive_part(fn: ScalarFn) -> ScalarFn:
    """Wrap ``fn`` so that it returns exactly 0 at x = 0."""

    def wrapped(x):
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(x > 0, x, 1.0)
        with np.errstate(over="ignore"):
            out = np.where(x > 0, fn(safe), 0.0)
        return out if out.ndim else float(out)

    return wrapped


@dataclass(frozen=True)
class NoiseScaleFn:
    name: str
    fn: ScalarFn
    derivative: ScalarFn | None = None
    #: limit of phi at 0+; every catalogue entry vanishes there
    at_zero: float = 0.0
    #: optional g(x) = phi(x) / x; ratios are then formed as (x_t/x_s)(g_t/g_s),
    #: which keeps the bound phi_t/phi_s <= x_t/x_s exact under rounding
    reduced: ScalarFn | None = None

    def __call__(self, x):
        return self.fn(x)

    def excess(self, x_t, x_s):
        """``(phi(x_t)/phi(x_s)) / (x_t/x_s)``; at most 1 for admissible phi."""
        if self.reduced is not None:
            return np.asarray(self.reduced(x_t)) / np.asarray(self.reduced(x_s))
        return (np.asarray(self.fn(x_t)) * x_s) / (np.asarray(self.fn(x_s)) * x_t)

    def ratio(self, x_t, x_s):
        """``phi(x_t) / phi(x_s)`` for ``x_t >= 0``, ``x_s > 0``."""
        x_t = np.asarray(x_t, dtype=np.float64)
        x_s = np.asarray(x_s, dtype=np.float64)
        pos = x_t > 0
        safe = np.where(pos, x_t, 1.0)
        if self.reduced is not None:
            inner = (safe / x_s) * self.excess(safe, x_s)
        else:
            inner = np.asarray(self.fn(safe)) / np.asarray(self.fn(x_s))
        out = np.where(pos, inner, self.at_zero / np.asarray(self.fn(x_s)))
        return out if out.ndim else float(out)

    def derivative_at(self, x, rel_step: float = 1e-6):
        """phi'(x), analytic when registered, else a central finite difference."""
        if self.derivative is not None:
            return self.derivative(x)
        x = np.asarray(x, dtype=np.float64)
        h = rel_step * np.maximum(np.abs(x), 1e-300)
        return (self.fn(x + h) - self.fn(x - h)) / (2 * h)

    def implied_xi(self, x):
        """Reverse-diffusion intensity xi(x) = 2x (x phi'/phi - 1) implied by phi."""
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * x * (x * self.derivative_at(x) / self.fn(x) - 1.0)

    def scaled(self, c: float) -> "NoiseScaleFn":
        """The same member of the family written as ``c * phi``."""
        if c <= 0:
            raise ParameterError(f"scale must be positive, got {c}")
        fn, der, red = self.fn, self.derivative, self.reduced
        return NoiseScaleFn(
            name=f"{c}*{self.name}",
            fn=lambda x: c * fn(x),
            derivative=None if der is None else (lambda x: c * der(x)),
            at_zero=c * self.at_zero,
            reduced=None if red is None else (lambda x: c * red(x)),
        )


def power(p: float) -> NoiseScaleFn:
    """phi(x) = x**p; admissible exactly when p >= 1."""
    if p <= 0:
        raise ParameterError(f"power must be positive, got {p}")
    return NoiseScaleFn(
        name=f"pow:{p:g}",
        fn=_positive_part(lambda x: x**p),
        derivative=_positive_part(lambda x: p * x ** (p - 1)),
        reduced=_positive_part(lambda x: x ** (p - 1)),
    )


def _er3(x):
    return x**0.9 * np.log10(1.0 + 100.0 * x**1.5)


def _er3_reduced(x):
    return x**-0.1 * np.log10(1.0 + 100.0 * x**1.5)


def _er3_prime(x):
    u = 100.0 * x**1.5
    return (0.9 * x**-0.1 * np.log10(1.0 + u)
            + x**0.9 * 150.0 * x**0.5 / ((1.0 + u) * math.log(10.0)))


def _er4(x):
    return x * (np.exp(-1.0 / x) + 10.0)


def _er4_reduced(x):
    return np.exp(-1.0 / x) + 10.0


def _er4_prime(x):
    return np.exp(-1.0 / x) * (1.0 + 1.0 / x) + 10.0


def _er5(x):
    return x * (np.exp(x**0.3) + 10.0)


def _er5_reduced(x):
    return np.exp(x**0.3) + 10.0


def _er5_prime(x):
    e = np.exp(x**0.3)
    return e * (1.0 + 0.3 * x**0.3) + 10.0


def _build_catalogue() -> dict[str, NoiseScaleFn]:
    # (phi, phi', phi / x)
    entries = {
        "ode": (lambda x: x, lambda x: np.ones_like(x), lambda x: np.ones_like(x)),
        "sde": (lambda x: x**2, lambda x: 2.0 * x, lambda x: x),
        "er1": (lambda x: x**1.5, lambda x: 1.5 * x**0.5, lambda x: x**0.5),
        "er2": (lambda x: x**2.5, lambda x: 2.5 * x**1.5, lambda x: x**1.5),
        "er3": (_er3, _er3_prime, _er3_reduced),
        "er4": (_er4, _er4_prime, _er4_reduced),
        "er5": (_er5, _er5_prime, _er5_reduced),
    }
    return {
        name: NoiseScaleFn(name=name, fn=_positive_part(f), derivative=_positive_part(d),
                           reduced=_positive_part(g))
        for name, (f, d, g) in entries.items()
    }


CATALOGUE = _build_catalogue()
CATALOGUE_NAMES = tuple(CATALOGUE)
DEFAULT_PHI = "er5"


def catalogue(name: str = DEFAULT_PHI) -> NoiseScaleFn:
    key = name.lower()
    if key not in CATALOGUE:
        raise ParameterError(f"unknown noise-scale function {name!r}; "
                             f"expected one of {CATALOGUE_NAMES}")
    return CATALOGUE[key]


def parse_phi(text: str) -> NoiseScaleFn:
    """Resolve a CLI name: a catalogue entry or ``pow:<p>``."""
    if text.lower().startswith("pow:"):
        try:
            p = float(text[4:])
        except ValueError:
            raise ParameterError(f"bad power in {text!r}") from None
        return power(p)
    return catalogue(text)


def fei(phi: NoiseScaleFn, x_t: float, x_s: float) -> float:
    """First-order Euler integral coefficient ``1 - phi(x_t) / phi(x_s)``."""
    if x_t <= 0 or x_s <= 0:
        raise ParameterError(f"levels must be positive, got x_t={x_t}, x_s={x_s}")
    if x_t >= x_s:
        raise ParameterError(f"need x_t < x_s, got x_t={x_t}, x_s={x_s}")
    return 1.0 - phi.ratio(x_t, x_s)


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    pairs_checked: int
    #: first (x_t, x_s) pair with phi(x_t)/phi(x_s) > x_t/x_s, if any
    violation: tuple[float, float] | None = None
    worst_excess: float = 0.0

    def __bool__(self):
        return self.passed


def _ratio_excess(phi: NoiseScaleFn, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Relative amount by which phi(lo)/phi(hi) exceeds lo/hi (<= 0 when admissible)."""
    pos = lo > 0
    safe = np.where(pos, lo, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(pos, phi.excess(safe, hi) - 1.0, phi.ratio(lo, hi))


def check_admissible(phi: NoiseScaleFn, grid: TimeGrid | np.ndarray,
                     dense_points: int = 1000) -> AdmissibilityReport:
    """Check the ratio bound on adjacent grid pairs and on a dense sweep.

    ``grid`` may be a :class:`TimeGrid` (its ``lambdas`` are used) or a raw
    decreasing array of levels.
    """
    levels = np.asarray(grid.lambdas if isinstance(grid, TimeGrid) else grid, dtype=np.float64)
    hi, lo = levels[:-1], levels[1:]
    positive = levels[levels > 0]
    if positive.size >= 1 and dense_points > 1:
        top, bottom = positive.max(), positive.min()
        if bottom == top:
            bottom = top / 2
        dense = np.geomspace(top, bottom, dense_points + 1)
        hi = np.concatenate([hi, dense[:-1]])
        lo = np.concatenate([lo, dense[1:]])
    excess = _ratio_excess(phi, lo, hi)
    bad = np.flatnonzero(~(excess <= ADMISSIBILITY_RTOL))
    if bad.size:
        k = bad[0]
        return AdmissibilityReport(False, len(hi), (float(lo[k]), float(hi[k])),
                                   float(np.nanmax(np.where(np.isnan(excess), np.inf, excess))))
    return AdmissibilityReport(True, len(hi), None, float(np.max(excess, initial=-np.inf)))


def require_admissible(phi: NoiseScaleFn, grid: TimeGrid | np.ndarray) -> None:
    report = check_admissible(phi, grid)
    if not report.passed:
        lo, hi = report.violation
        raise AdmissibilityError(
            f"{phi.name} violates phi(x_t)/phi(x_s) <= x_t/x_s at "
            f"(x_t, x_s) = ({lo!r}, {hi!r})", pair=report.violation)


def fei_curve(phi: NoiseScaleFn, grid: TimeGrid) -> list[tuple[int, float]]:
    """FEI coefficient of every step ``i = 1..M`` on ``grid``.

    A terminal ``level = 0`` node yields FEI = 1 (phi vanishes at 0).
    """
    require_admissible(phi, grid)
    levels = grid.lambdas
    out = []
    for i in range(1, len(levels)):
        lo, hi = levels[i], levels[i - 1]
        value = 1.0 - phi.ratio(lo, hi)
        out.append((i, float(value)))
    return out
