"""Loss-process statistics used to judge whether drops look natural."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

__all__ = [
    "LossDensity",
    "Acf",
    "KsResult",
    "ZeroVarianceError",
    "loss_density",
    "autocorrelation",
    "loss_cdf",
    "ks_test",
    "ks_critical",
    "KS_COEFFICIENTS",
    "write_density",
    "write_acf",
]

# c(alpha) for the two-sample Kolmogorov-Smirnov critical value
KS_COEFFICIENTS = {0.80: 1.073, 0.85: 1.138, 0.90: 1.224, 0.95: 1.358, 0.975: 1.48, 0.99: 1.628, 0.995: 1.731, 0.999: 1.949}


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class LossDensity:
    """Fraction ``f[k]`` of ``q``-event blocks containing exactly ``k`` losses."""

    q: int
    f: np.ndarray = field(repr=False)
    blocks: int

    def __getitem__(self, k: int) -> float:
        return float(self.f[k])


@dataclass(frozen=True)
class Acf:
    rho: np.ndarray = field(repr=False)
    mean: float
    c0: float

    @property
    def max_lag(self) -> int:
        return int(self.rho.size - 1)


@dataclass(frozen=True)
class KsResult:
    distance: float
    epsilon: float

    @property
    def accepted(self) -> bool:
        return self.distance < self.epsilon


def _bits(B) -> np.ndarray:
    b = np.asarray(B)
    if b.ndim != 1:
        raise ValueError("loss vector must be 1-D")
    return b.astype(np.int64, copy=False)


def loss_density(B, q: int) -> LossDensity:
    """Density of losses per block over non-overlapping blocks; the tail remainder is dropped."""
    b = _bits(B)
    if q < 1:
        raise ValueError("block size must be >= 1")
    m = b.size // q
    if m == 0:
        raise ValueError(f"vector of length {b.size} is shorter than one block of {q}")
    counts = b[: m * q].reshape(m, q).sum(axis=1)
    f = np.bincount(counts, minlength=q + 1).astype(np.float64) / m
    return LossDensity(q, f, m)


def autocorrelation(B, max_lag: int) -> Acf:
    """rho(h) = c_h / c_0 with c_h = sum_{i<=N-h} (b_i - mean)(b_{i+h} - mean) / (N - 1)."""
    b = _bits(B).astype(np.float64)
    N = b.size
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if N < max_lag + 2:
        raise ValueError(f"need at least {max_lag + 2} events for lag {max_lag}")
    mean = float(b.mean())
    d = b - mean
    c = np.array([np.dot(d[: N - h], d[h:]) for h in range(max_lag + 1)]) / (N - 1)
    if c[0] <= 0.0:
        raise ZeroVarianceError("loss vector is constant; autocorrelation undefined")
    rho = c / c[0]
    rho[0] = 1.0
    return Acf(rho, mean, float(c[0]))


def loss_cdf(d: LossDensity) -> np.ndarray:
    F = np.cumsum(d.f)
    # blocks cannot hold more than q losses
    F[-1] = 1.0
    return np.minimum(F, 1.0)


def ks_test(dW: LossDensity, dM: LossDensity, epsilon: float | None = None, confidence: float = 0.99) -> KsResult:
    """Sup-distance between the two loss CDFs, accepted when below ``epsilon``.

    ``epsilon`` defaults to :func:`ks_critical` for the two block counts.
    """
    if dW.q != dM.q:
        raise ValueError(f"block sizes differ: {dW.q} vs {dM.q}")
    dist = float(np.max(np.abs(loss_cdf(dW) - loss_cdf(dM))))
    if epsilon is None:
        epsilon = ks_critical(dW.blocks, dM.blocks, confidence)
    return KsResult(dist, float(epsilon))


def ks_critical(n_w: int, n_m: int, confidence: float = 0.99) -> float:
    if n_w < 1 or n_m < 1:
        raise ValueError("block counts must be >= 1")
    try:
        c = KS_COEFFICIENTS[round(confidence, 4)]
    except KeyError:
        # asymptotic Kolmogorov quantile: c = sqrt(-ln((1 - conf) / 2) / 2)
        c = math.sqrt(-math.log((1.0 - confidence) / 2.0) / 2.0)
    return c * math.sqrt((n_w + n_m) / (n_w * n_m))


def write_density(d: LossDensity, fh: TextIO) -> None:
    fh.write("k,f\n")
    fh.writelines(f"{k},{repr(float(x))}\n" for k, x in enumerate(d.f))


def write_acf(a: Acf, fh: TextIO) -> None:
    fh.write("h,rho\n")
    fh.writelines(f"{h},{repr(float(x))}\n" for h, x in enumerate(a.rho))
