"""
Exact KDE-optimal denoiser over a finite dataset.

For a Gaussian KDE with bandwidth sigma the posterior mean E[x0 | x] is a
softmax-weighted convex combination of the data points; the same weights
give one mean-shift step at bandwidth h = sigma.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from errors import DomainError

logger = logging.getLogger(__name__)

FIXED_RANDOM = "fixed-random"
PER_QUERY_RANDOM = "per-query-random"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Finite point set {y_i}; rows are points"""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DomainError(f"dataset needs at least one point of dimension >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("dataset entries must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def count(self):
        return self.points.shape[0]

    def translated(self, offset):
        return Dataset(self.points + np.asarray(offset, dtype=float))


@dataclass(frozen=True, eq=False)
class DenoiserOutput:
    r: np.ndarray
    eps: np.ndarray
    weights: Optional[np.ndarray] = None


def _query(data, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (data.d,):
        raise DomainError(f"query has shape {x.shape}, dataset dimension is {data.d}")
    if not np.all(np.isfinite(x)):
        raise DomainError("query must be finite")
    return x


def _squared_distances(data, x):
    diff = data.points - x
    return np.einsum("ij,ij->i", diff, diff)


def posterior_weights(data, x, sigma):
    """Softmax of -||x - y_i||^2 / (2 sigma^2), max-shifted"""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    x = _query(data, x)
    sq = _squared_distances(data, x)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        logits = -sq / (2.0 * sigma * sigma)
    if not np.all(np.isfinite(logits)):
        # sigma underflowed: exact nearest neighbour, lowest index on ties
        weights = np.zeros(data.count)
        weights[int(np.argmin(sq))] = 1.0
        return weights
    return softmax(logits)


def optimal_denoise(data, x, sigma, return_weights=False):
    """r*(x, sigma) = sum_i u_i y_i and eps* = (x - r*) / sigma"""
    x = _query(data, x)
    weights = posterior_weights(data, x, sigma)
    r = weights @ data.points
    eps = (x - r) / sigma
    return DenoiserOutput(r=r, eps=eps, weights=weights if return_weights else None)


def kde_log_density(data, x, h):
    """log of (1/|I|) sum_i N(x; y_i, h^2 I) with the Gaussian normalizer"""
    if not h > 0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    x = _query(data, x)
    dist = np.sqrt(_squared_distances(data, x))
    log_norm = 0.5 * data.d * math.log(2.0 * math.pi) + data.d * math.log(h)
    with np.errstate(over="ignore", divide="ignore"):
        logits = -0.5 * (dist / h) ** 2
        return float(logsumexp(logits) - math.log(data.count) - log_norm)


def mean_shift_step(data, x, h):
    """Mean vector m(x, h); the same computation as the optimal denoiser at sigma = h"""
    return optimal_denoise(data, x, h).r


class OptimalDenoiser:
    """Callable wrapper so samplers can query denoiser(x, sigma)"""

    def __init__(self, data):
        self.data = data

    def __call__(self, x, sigma):
        return optimal_denoise(self.data, x, sigma)


@dataclass
class PerturbedDenoiser:
    """
    Optimal denoiser pushed off its optimum by a controlled amount:
    ||r - r*|| = deviation_scale * ||r* - x||, so d1 <= deviation_scale * d2.
    """

    base: OptimalDenoiser
    deviation_scale: float = 0.0
    rng_seed: int = 0
    direction_mode: str = FIXED_RANDOM
    _stream: np.random.Generator = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.deviation_scale < 0:
            raise DomainError(f"deviation_scale must be >= 0, got {self.deviation_scale}")
        if self.direction_mode not in (FIXED_RANDOM, PER_QUERY_RANDOM):
            raise DomainError(f"unknown direction mode {self.direction_mode!r}")
        self._stream = np.random.default_rng(self.rng_seed)

    def _query_rng(self, x, sigma):
        if self.direction_mode == PER_QUERY_RANDOM:
            return self._stream
        key = (np.round(x, 9) + 0.0).tobytes() + repr(float(sigma)).encode()
        digest = hashlib.sha256(key).digest()
        return np.random.default_rng([self.rng_seed, int.from_bytes(digest[:8], "little")])

    def direction(self, x, sigma):
        v = self._query_rng(x, sigma).standard_normal(self.base.data.d)
        return v / np.linalg.norm(v)

    def __call__(self, x, sigma):
        return perturbed_denoise(self, x, sigma)


def perturbed_denoise(p, x, sigma):
    if p.deviation_scale < 0:
        raise DomainError(f"deviation_scale must be >= 0, got {p.deviation_scale}")
    ref = optimal_denoise(p.base.data, x, sigma)
    if p.deviation_scale == 0:
        return ref
    x = np.asarray(x, dtype=float)
    radius = p.deviation_scale * np.linalg.norm(ref.r - x)
    r = ref.r + radius * p.direction(x, sigma)
    return DenoiserOutput(r=r, eps=(x - r) / sigma)
