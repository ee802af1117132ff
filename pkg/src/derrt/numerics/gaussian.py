import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
STD_FLOOR = 1e-3


def logsumexp(v, axis=None):
    """Overflow-safe ``log(sum(exp(v)))``.

    Entries equal to ``-inf`` are allowed; an all ``-inf`` slice gives ``-inf``.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("logsumexp of an empty input")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Multivariate normal with diagonal covariance, parameterised by log std."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        log_std = np.atleast_1d(np.asarray(self.log_std, dtype=float))
        if mean.shape != log_std.shape or mean.ndim != 1:
            raise ValueError(f"mean {mean.shape} and log_std {log_std.shape} must be matching vectors")
        log_std = np.maximum(log_std, math.log(STD_FLOOR))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_std", log_std)

    @classmethod
    def from_std(cls, mean, std):
        return cls(mean, np.log(np.maximum(np.asarray(std, dtype=float), STD_FLOOR)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def logpdf(self, x) -> np.ndarray:
        return gaussian_logpdf(self, x)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return self.mean + self.std * rng.standard_normal(shape)


def gaussian_logpdf(g: DiagonalGaussian, x):
    """Log density of ``g`` at ``x``; ``x`` may be a vector or a stack of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, gaussian has {g.dim}")
    z = (x - g.mean) * np.exp(-g.log_std)
    out = -0.5 * np.sum(z * z, axis=-1) - np.sum(g.log_std) - 0.5 * g.dim * LOG_2PI
    return float(out) if out.ndim == 0 else out


def diag_logpdf(x, mean, log_std):
    """Vectorised diagonal log density over the last axis (broadcasting)."""
    z = (x - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * np.shape(x)[-1] * LOG_2PI
