"""Two-parameter Weibull tail fitting for OpenMax calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError

MAX_ITER = 200
TOL = 1e-10


@dataclass(frozen=True)
class WeibullModel:
    shape: float
    scale: float
    tail_size: int
    translation: float = 0.0

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise FitError(f"Weibull parameters must be positive, got shape={self.shape} scale={self.scale}")

    def cdf(self, x):
        return weibull_cdf(self, x)

    def to_dict(self):
        return {
            "shape": self.shape,
            "scale": self.scale,
            "tail_size": self.tail_size,
            "translation": self.translation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["shape"]), float(d["scale"]), int(d["tail_size"]), float(d["translation"]))


def weibull_cdf(model, x):
    """``1 - exp(-((x - tau) / scale) ** shape)`` for x > tau, else 0.

    Works on scalars and arrays.
    """
    z = np.maximum(np.asarray(x, dtype=np.float64) - model.translation, 0.0) / model.scale
    out = -np.expm1(-(z**model.shape))
    return float(out) if out.ndim == 0 else out


def weibull_log_likelihood(model, samples):
    x = np.asarray(samples, dtype=np.float64).ravel() - model.translation
    if x.size == 0:
        return 0.0
    if (x <= 0).any():
        raise FitError("log-likelihood needs every sample above the translation")
    k, lam = model.shape, model.scale
    z = x / lam
    return float(np.sum(math.log(k / lam) + (k - 1.0) * np.log(z) - z**k))


def _profile(k, log_y):
    # log_y are logs of samples scaled so the largest is 1; returns the
    # shape score equation and its derivative.
    w = np.exp(k * log_y)
    s0 = w.sum()
    s1 = (w * log_y).sum()
    s2 = (w * log_y * log_y).sum()
    g = s1 / s0 - 1.0 / k - log_y.mean()
    dg = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k)
    return g, dg


def _solve_shape(log_y):
    lo = hi = 1.0
    for _ in range(200):
        if _profile(lo, log_y)[0] < 0:
            break
        lo /= 2.0
    else:
        raise FitError("could not bracket the Weibull shape from below")
    for _ in range(200):
        if _profile(hi, log_y)[0] > 0:
            break
        hi *= 2.0
    else:
        raise FitError("could not bracket the Weibull shape from above")

    k = 0.5 * (lo + hi)
    for _ in range(MAX_ITER):
        g, dg = _profile(k, log_y)
        if g < 0:
            lo = k
        else:
            hi = k
        step = k - g / dg if dg > 0 else None
        k_new = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
        if abs(k_new - k) < TOL:
            return k_new
        k = k_new
    return k


def fit_weibull(samples, shape=None):
    """MLE ``(shape, scale)`` of a Weibull on strictly positive samples.

    With ``shape`` fixed, only the scale is estimated (closed form).
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise FitError("need at least two samples")
    if (x <= 0).any():
        raise FitError("Weibull samples must be strictly positive")
    if x.max() == x.min():
        raise FitError("degenerate tail: all samples are equal")
    top = x.max()
    log_y = np.log(x / top)
    k = _solve_shape(log_y) if shape is None else float(shape)
    lam = top * float(np.mean(np.exp(k * log_y))) ** (1.0 / k)
    return k, lam


def fit_weibull_tail(samples, tail_size, shape=None):
    """Fit a Weibull to the ``tail_size`` largest samples (translation 0)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    tail_size = int(tail_size)
    if tail_size < 2:
        raise FitError("tail size must be at least 2")
    if tail_size > x.size:
        raise FitError(f"tail size {tail_size} exceeds the {x.size} available samples")
    tail = np.sort(x)[-tail_size:]
    k, lam = fit_weibull(tail, shape=shape)
    return WeibullModel(shape=k, scale=lam, tail_size=tail_size)
