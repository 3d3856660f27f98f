"""
Handcrafted time schedules for the VE sampler (sigma = t).

Every generator returns a TimeSchedule whose times run from t_max down to
t_min with both endpoints pinned to the exact constants.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from errors import DataIOError, DomainError

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
LOGSNR = "logsnr"
POLYNOMIAL = "polynomial"
GITS = "gits"
EXPLICIT = "explicit"
KINDS = (UNIFORM, LOGSNR, POLYNOMIAL, GITS, EXPLICIT)

T_MIN = 0.002
T_MAX = 80.0


@dataclass(frozen=True, eq=False)
class TimeSchedule:
    """Descending timestamps t_N ... t_0 plus the generator that produced them"""

    times: tuple
    kind: str = EXPLICIT
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) < 2:
            raise DomainError(f"a schedule needs at least 2 times, got {len(times)}")
        if self.kind not in KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if not all(math.isfinite(t) and t > 0 for t in times):
            raise DomainError("schedule times must be finite and positive")
        for a, b in zip(times[:-1], times[1:]):
            if not a > b:
                raise DomainError(f"schedule times must be strictly decreasing ({a} then {b})")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def n_steps(self):
        return len(self.times) - 1

    @property
    def t_max(self):
        return self.times[0]

    @property
    def t_min(self):
        return self.times[-1]

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, TimeSchedule):
            return NotImplemented
        return self.times == other.times and self.kind == other.kind and self.params == other.params

    def to_dict(self):
        return {"kind": self.kind, "times": list(self.times), "params": dict(self.params)}


def _check_bounds(n_steps, t_min, t_max):
    if int(n_steps) != n_steps or n_steps < 1:
        raise DomainError(f"n_steps must be a positive integer, got {n_steps}")
    if not (0 < t_min < t_max) or not math.isfinite(t_max):
        raise DomainError(f"need 0 < t_min < t_max, got t_min={t_min}, t_max={t_max}")


def _pinned(values, t_min, t_max):
    times = [float(v) for v in values]
    times[0] = float(t_max)
    times[-1] = float(t_min)
    return times


def polynomial_schedule(n_steps, t_min=T_MIN, t_max=T_MAX, rho=7.0):
    """EDM discretization: uniform in t^(1/rho)"""
    _check_bounds(n_steps, t_min, t_max)
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho}")
    frac = np.arange(n_steps, -1, -1) / n_steps
    lo, hi = t_min ** (1.0 / rho), t_max ** (1.0 / rho)
    times = (lo + frac * (hi - lo)) ** rho
    return TimeSchedule(
        _pinned(times, t_min, t_max), POLYNOMIAL, {"rho": rho, "t_min": t_min, "t_max": t_max}
    )


def logsnr_schedule(n_steps, t_min=T_MIN, t_max=T_MAX):
    """Uniform in lambda = -log t, i.e. a geometric progression"""
    _check_bounds(n_steps, t_min, t_max)
    lam = np.linspace(-math.log(t_max), -math.log(t_min), n_steps + 1)
    return TimeSchedule(
        _pinned(np.exp(-lam), t_min, t_max), LOGSNR, {"t_min": t_min, "t_max": t_max}
    )


def uniform_schedule(n_steps, t_min=T_MIN, t_max=T_MAX, eps_s=1e-3):
    """
    Uniform steps in the VP time tau on [eps_s, 1], carried over to sigma.

    beta_d and beta_min are chosen so that tau=1 lands on t_max and
    tau=eps_s lands on t_min.
    """
    _check_bounds(n_steps, t_min, t_max)
    if not 0 < eps_s < 1:
        raise DomainError(f"eps_s must lie in (0, 1), got {eps_s}")
    log_hi = math.log1p(t_max * t_max)
    log_lo = math.log1p(t_min * t_min)
    beta_d = (2.0 / (eps_s - 1.0)) * (log_lo / eps_s - log_hi)
    beta_min = log_hi - 0.5 * beta_d
    tau = 1.0 + np.arange(n_steps + 1) / n_steps * (eps_s - 1.0)
    times = np.sqrt(np.expm1(0.5 * beta_d * tau ** 2 + beta_min * tau))
    params = {"eps_s": eps_s, "t_min": t_min, "t_max": t_max, "beta_d": beta_d, "beta_min": beta_min}
    return TimeSchedule(_pinned(times, t_min, t_max), UNIFORM, params)


GENERATORS = {
    UNIFORM: uniform_schedule,
    LOGSNR: logsnr_schedule,
    POLYNOMIAL: polynomial_schedule,
}


def make_schedule(kind, n_steps, t_min=T_MIN, t_max=T_MAX, **params):
    try:
        generator = GENERATORS[kind]
    except KeyError:
        raise DomainError(f"no generator for schedule kind {kind!r}; choose from {sorted(GENERATORS)}") from None
    return generator(n_steps, t_min=t_min, t_max=t_max, **params)


def schedule_table(kind, nfes, t_min=T_MIN, t_max=T_MAX, decimals=4, **params):
    """One row per NFE, one column per node, rounded like the published tables"""
    rows = []
    for n in nfes:
        times = make_schedule(kind, n, t_min=t_min, t_max=t_max, **params).times
        row = {"NFE": n}
        row.update({f"t{i}": round(t, decimals) for i, t in enumerate(times)})
        rows.append(row)
    return pd.DataFrame(rows)


def _float17(value):
    return float("%.17g" % value)


def save_schedule(schedule, path, extra=None):
    payload = schedule.to_dict()
    payload["times"] = [_float17(t) for t in schedule.times]
    if extra:
        payload.update(extra)
    try:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise DataIOError(path, f"cannot write schedule: {exc.strerror or exc}") from exc
    logger.info("wrote %s schedule with %d steps to %s", schedule.kind, schedule.n_steps, path)


def load_schedule(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataIOError(path, f"cannot read schedule: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIOError(path, f"not a schedule JSON file: {exc}") from exc
    try:
        return TimeSchedule(payload["times"], payload.get("kind", EXPLICIT), payload.get("params", {}))
    except KeyError:
        raise DataIOError(path, "schedule JSON has no 'times' entry") from None
