"""Data-prediction models ``x_theta`` and analytic oracles.

Every predictor is called as ``model(x, level, alpha=1.0)`` where ``level`` is
``sigma`` for VE samplers and ``lambda = sigma / alpha`` for VP samplers.  The
state ``x`` is the raw (unscaled) sample; VP predictors divide by ``alpha``
before denoising.  ``x`` may be a single vector ``(D,)`` or a batch ``(n, D)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ParameterError


class DataPredictor:
    """Base class: counts evaluations and dispatches to :meth:`predict`.

    ``eval_count`` grows by one per state vector evaluated, so a batch of
    ``n`` chains adds ``n``.
    """

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def eval_count(self) -> int:
        return self._count

    def reset_count(self) -> None:
        with self._lock:
            self._count = 0

    def __call__(self, x, level: float, alpha: float = 1.0) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ParameterError(f"expected state dimension {self.dim}, got {x.shape[-1]}")
        if alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {alpha}")
        with self._lock:
            self._count += 1 if x.ndim == 1 else x.shape[0]
        return self.predict(x, float(level), float(alpha))

    def predict(self, x: np.ndarray, level: float, alpha: float) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class GaussianMixtureOracle:
    """Isotropic Gaussian mixture ``sum_j w_j N(mu_j, s_j^2 I)``."""

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    _log_w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.asarray(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None] if w.size > 1 or mu.size == 1 else mu[None, :]
        s = np.broadcast_to(np.asarray(self.scales, dtype=np.float64), w.shape).copy()
        if mu.shape[0] != w.size:
            raise ParameterError("one mean vector per mixture component is required")
        if np.any(w <= 0):
            raise ParameterError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError(f"mixture weights must sum to 1, got {w.sum()!r}")
        if np.any(s <= 0):
            raise ParameterError("component scales must be positive")
        for name, arr in (("weights", w), ("means", mu), ("scales", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_log_w", np.log(w))

    @classmethod
    def single(cls, mean, scale: float = 1.0) -> "GaussianMixtureOracle":
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        return cls(np.ones(1), mean[None, :], np.array([scale]))

    @classmethod
    def default(cls) -> "GaussianMixtureOracle":
        """Two-component 2-D toy model with modes at (+-2, 0)."""
        return cls(np.array([0.5, 0.5]), np.array([[2.0, 0.0], [-2.0, 0.0]]),
                   np.array([0.25, 0.25]))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def is_single(self) -> bool:
        return self.n_components == 1

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        m = self.mean()
        cov = np.zeros((self.dim, self.dim))
        for w, mu, s in zip(self.weights, self.means, self.scales):
            d = mu - m
            cov += w * (s * s * np.eye(self.dim) + np.outer(d, d))
        return cov

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + self.scales[comp, None] * z


def gaussian_posterior_mean(oracle: GaussianMixtureOracle, x, sigma: float) -> np.ndarray:
    """``E[x_0 | x_0 + sigma z = x]`` for the mixture, evaluated row-wise."""
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    squeeze = x.ndim == 1
    xb = np.atleast_2d(x)
    s2 = oracle.scales**2  # (K,)
    var = s2 + sigma * sigma
    # broadcasting rather than a matmul keeps rows independent of batch size
    diff = xb[:, None, :] - oracle.means[None, :, :]
    sq = np.sum(diff * diff, axis=-1)  # (n, K)
    log_resp = oracle._log_w - 0.5 * oracle.dim * np.log(var) - 0.5 * sq / var
    log_resp = log_resp - logsumexp(log_resp, axis=1, keepdims=True)
    resp = np.exp(log_resp)
    comp_means = (s2[None, :, None] * xb[:, None, :]
                  + sigma * sigma * oracle.means[None, :, :]) / var[None, :, None]
    out = np.sum(resp[:, :, None] * comp_means, axis=1)
    return out[0] if squeeze else out


def vp_predict(oracle: GaussianMixtureOracle, x, alpha: float, sigma: float) -> np.ndarray:
    """Posterior mean of ``x_0`` given ``x = alpha x_0 + sigma z``."""
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    return gaussian_posterior_mean(oracle, x / alpha, sigma / alpha)


PREDICTION_KINDS = ("noise", "score", "data")


def convert_prediction(kind_in: str, value, x, sigma: float, alpha: float = 1.0) -> np.ndarray:
    """Turn a noise, score or data prediction into a data prediction.

    ``alpha = 1`` is the VE case.  Score and noise inputs need ``sigma > 0``.
    """
    value = np.asarray(value, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if kind_in == "data":
        return value.copy()
    if kind_in not in PREDICTION_KINDS:
        raise ParameterError(f"unknown prediction kind {kind_in!r}")
    if sigma <= 0:
        raise ParameterError(f"{kind_in} -> data conversion is singular at sigma={sigma}")
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if kind_in == "score":
        return (x + sigma * sigma * value) / alpha
    return (x - sigma * value) / alpha


def data_to(kind_out: str, x_theta, x, sigma: float, alpha: float = 1.0) -> np.ndarray:
    """Inverse of :func:`convert_prediction`."""
    x_theta = np.asarray(x_theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if kind_out == "data":
        return x_theta.copy()
    if kind_out not in PREDICTION_KINDS:
        raise ParameterError(f"unknown prediction kind {kind_out!r}")
    if sigma <= 0:
        raise ParameterError(f"data -> {kind_out} conversion is singular at sigma={sigma}")
    if kind_out == "score":
        return -(x - alpha * x_theta) / (sigma * sigma)
    return (x - alpha * x_theta) / sigma


class MixturePredictor(DataPredictor):
    """Exact ``x_theta`` for data drawn from a Gaussian-mixture oracle."""

    def __init__(self, oracle: GaussianMixtureOracle):
        super().__init__(oracle.dim)
        self.oracle = oracle

    def predict(self, x, level, alpha):
        if alpha == 1.0:
            return gaussian_posterior_mean(self.oracle, x, level)
        return gaussian_posterior_mean(self.oracle, x / alpha, level)

    def affine_coefficients(self, level: float, alpha: float = 1.0):
        """Slope on ``x`` and offset of ``x_theta`` (single-component oracles only)."""
        if not self.oracle.is_single:
            raise ParameterError("affine form exists only for a single-Gaussian oracle")
        s2 = float(self.oracle.scales[0]) ** 2
        var = s2 + level * level
        return s2 / (alpha * var), level * level * self.oracle.means[0] / var


class ConstantPredictor(DataPredictor):
    """``x_theta`` that ignores its inputs."""

    def __init__(self, value):
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        super().__init__(value.size)
        self.value = value

    def predict(self, x, level, alpha):
        return np.broadcast_to(self.value, x.shape).copy()

    def affine_coefficients(self, level: float, alpha: float = 1.0):
        return 0.0, self.value


class AffineLevelPredictor(DataPredictor):
    """``x_theta = intercept + slope * level``, independent of the state."""

    def __init__(self, intercept, slope):
        intercept = np.atleast_1d(np.asarray(intercept, dtype=np.float64))
        slope = np.broadcast_to(np.asarray(slope, dtype=np.float64), intercept.shape).copy()
        super().__init__(intercept.size)
        self.intercept, self.slope = intercept, slope

    def predict(self, x, level, alpha):
        return np.broadcast_to(self.intercept + self.slope * level, x.shape).copy()


class FunctionPredictor(DataPredictor):
    """Adapter for a plain ``f(x, level, alpha)`` callable."""

    def __init__(self, fn, dim: int):
        super().__init__(dim)
        self.fn = fn

    def predict(self, x, level, alpha):
        return np.asarray(self.fn(x, level, alpha), dtype=np.float64)
