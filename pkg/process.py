"""
Linear diffusion schemes (s_t, sigma_t), forward perturbation and the
change of variables x = z / s_t that maps any linear scheme onto its
variance-exploding counterpart with the same SNR.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from errors import DomainError, LabError

logger = logging.getLogger(__name__)

VE = "VE"
VP = "VP-preset"
CUSTOM = "Custom"


@dataclass(frozen=True)
class LinearScheme:
    """A linear diffusion process given by closed-form s(t) and sigma(t)"""

    kind: str
    sigma_of_t: Callable[[float], float]
    scale_of_t: Callable[[float], float]
    t_min: float = 0.002
    t_max: float = 80.0

    def sigma(self, t):
        return float(self.sigma_of_t(t))

    def scale(self, t):
        return float(self.scale_of_t(t))

    def snr(self, t):
        """SNR = s^2 / (s sigma)^2 = 1 / sigma^2; independent of s"""
        return 1.0 / self.sigma(t) ** 2


def ve_scheme(t_min=0.002, t_max=80.0):
    """EDM parameterization: s(t)=1, sigma(t)=t"""
    return LinearScheme(VE, lambda t: t, lambda t: 1.0, t_min, t_max)


def vp_scheme(t_min=0.002, t_max=80.0):
    """s(t)=1/sqrt(1+t^2), sigma(t)=t, so s^2 (1 + sigma^2) = 1"""
    return LinearScheme(VP, lambda t: t, lambda t: 1.0 / math.sqrt(1.0 + t * t), t_min, t_max)


@dataclass(frozen=True, eq=False)
class ForwardSample:
    t: float
    x: np.ndarray
    x0: np.ndarray
    eps: np.ndarray = field(repr=False)


def _check_time(scheme, t, low=0.0):
    if not np.isfinite(t) or t < low or t > scheme.t_max:
        raise DomainError(f"t={t} outside [{low}, {scheme.t_max}] for {scheme.kind} scheme")


def perturb(scheme, x0, t, rng):
    """Draw x = s_t x0 + s_t sigma_t eps from the transition kernel"""
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise DomainError("x0 must be finite")
    _check_time(scheme, t)
    eps = rng.standard_normal(x0.shape)
    s = scheme.scale(t)
    x = s * x0 + s * scheme.sigma(t) * eps
    return ForwardSample(t=float(t), x=x, x0=x0.copy(), eps=eps)


def _positive_scale(scheme, t):
    s = scheme.scale(t)
    if not s > 0:
        raise LabError(f"scheme {scheme.kind} has non-positive scale s({t})={s}")
    return s


def to_ve(scheme, z, t):
    """Map a z-space state to VE coordinates: x = z / s(t)"""
    _check_time(scheme, t)
    return np.asarray(z, dtype=float) / _positive_scale(scheme, t)


def from_ve(scheme, x, t):
    """Inverse of to_ve: z = s(t) x"""
    _check_time(scheme, t)
    return _positive_scale(scheme, t) * np.asarray(x, dtype=float)


def drift_and_diffusion(scheme, t, h=1e-6):
    """Recover f(t) = d log s/dt and g(t) = s sqrt(d sigma^2/dt) by central differences"""
    _check_time(scheme, t)
    lo = max(t - h, 0.0)
    hi = t + h
    width = hi - lo
    f = (math.log(scheme.scale(hi)) - math.log(scheme.scale(lo))) / width
    dsig2 = (scheme.sigma(hi) ** 2 - scheme.sigma(lo) ** 2) / width
    g = scheme.scale(t) * math.sqrt(max(dsig2, 0.0))
    return f, g


def _relative_gap(a, b):
    ref = np.linalg.norm(b)
    gap = np.linalg.norm(a - b)
    return gap / ref if ref > 0 else gap


def verify_space_equivalence(scheme, denoiser, schedule, x_init_ve):
    """
    Run the semi-linear update in z-space and the Euler update in x-space
    along the same schedule and return the largest relative discrepancy
    between z_t / s_t and x_t over all nodes.

    The denoiser is queried in x-space (VE coordinates) as denoiser(x, sigma).
    """
    times = list(schedule.times)
    if times[0] > scheme.t_max * (1 + 1e-12) or times[-1] < scheme.t_min * (1 - 1e-12):
        raise DomainError(
            f"schedule [{times[-1]}, {times[0]}] outside scheme range [{scheme.t_min}, {scheme.t_max}]"
        )

    x = np.asarray(x_init_ve, dtype=float).copy()
    z = from_ve(scheme, x, times[0])
    worst = _relative_gap(to_ve(scheme, z, times[0]), x)

    for t_cur, t_next in zip(times[:-1], times[1:]):
        sig_cur, sig_next = scheme.sigma(t_cur), scheme.sigma(t_next)
        s_cur, s_next = scheme.scale(t_cur), scheme.scale(t_next)
        dsig = sig_next - sig_cur

        # z-space: exact linear part, noise prediction held constant over the step
        z_as_x = z / s_cur
        eps_z = (z_as_x - denoiser(z_as_x, sig_cur).r) / sig_cur
        z = (s_next / s_cur) * z + s_next * (dsig * eps_z)

        eps_x = (x - denoiser(x, sig_cur).r) / sig_cur
        x = x + dsig * eps_x

        worst = max(worst, _relative_gap(z / s_next, x))

    logger.debug("space equivalence for %s: max relative gap %.3e", scheme.kind, worst)
    return worst
