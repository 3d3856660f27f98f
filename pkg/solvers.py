"""
Samplers for the empirical probability-flow ODE dx/dt = (x - r(x, t)) / t.

Every step is written around the convex combination

    x_next = (t_next / t_cur) * x + (1 - t_next / t_cur) * R

where R is the plain denoising output r for Euler and a finite-difference
corrected output for the second-order methods.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from denoiser import DenoiserOutput
from errors import DataIOError, DomainError, LabError, PreconditionError, StepError

logger = logging.getLogger(__name__)

EULER = "euler"
HEUN = "heun"
DPM2 = "dpm2"
SPNDM = "spndm"
IPNDM = "ipndm"
DEIS_AB1 = "deis_ab1"
METHODS = (EULER, HEUN, DPM2, SPNDM, IPNDM, DEIS_AB1)
TWO_EVAL_METHODS = (HEUN, DPM2)
MULTISTEP_METHODS = (SPNDM, DEIS_AB1)
SECOND_ORDER_METHODS = TWO_EVAL_METHODS + MULTISTEP_METHODS

NATIVE = "native"
GENERALIZED = "generalized"

# Adams-Bashforth weights on eps, most recent first
AB_COEFFICIENTS = (
    (1.0,),
    (3.0 / 2.0, -1.0 / 2.0),
    (23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0),
    (55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0),
)


@dataclass(frozen=True)
class SolverSpec:
    method: str = EULER
    order: int = 4
    afs: bool = False
    formulation: str = NATIVE

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown solver {self.method!r}; choose from {', '.join(METHODS)}")
        if self.formulation not in (NATIVE, GENERALIZED):
            raise DomainError(f"unknown formulation {self.formulation!r}")
        if self.method == IPNDM and not 1 <= self.order <= 4:
            raise DomainError(f"ipndm order must lie in [1, 4], got {self.order}")

    def expected_nfe(self, n_steps):
        """Denoiser evaluations `sample` spends on an n_steps schedule"""
        paid = n_steps - 1 if self.afs else n_steps
        if self.method in TWO_EVAL_METHODS:
            return max(2 * paid - 1, 0)
        return paid

    def steps_for_nfe(self, nfe):
        """Longest schedule whose evaluation count stays within nfe"""
        if nfe < 1:
            raise DomainError(f"nfe must be >= 1, got {nfe}")
        n_steps = 1
        while self.expected_nfe(n_steps + 1) <= nfe:
            n_steps += 1
        return n_steps

    def label(self):
        parts = [self.method]
        if self.method == IPNDM:
            parts.append(f"order{self.order}")
        if self.method in SECOND_ORDER_METHODS and self.formulation == GENERALIZED:
            parts.append(GENERALIZED)
        if self.afs:
            parts.append("afs")
        return "-".join(parts)


@dataclass(eq=False)
class Trajectory:
    """
    Sampling trajectory and the denoising trajectory coupled to it.

    denoised[n] is r at states[n], or None where no evaluation happened there
    (always at the last node; at the first node when AFS was used).
    """

    times: List[float]
    states: List[np.ndarray]
    denoised: List[Optional[np.ndarray]] = field(default_factory=list)
    nfe: int = 0

    def __post_init__(self):
        self.times = [float(t) for t in self.times]
        if len(self.states) != len(self.times):
            raise DomainError(f"{len(self.states)} states for {len(self.times)} times")
        for a, b in zip(self.times[:-1], self.times[1:]):
            if not a > b:
                raise DomainError(f"trajectory times must be strictly decreasing ({a} then {b})")
        if len(self.denoised) > len(self.times):
            raise DomainError(f"{len(self.denoised)} denoising outputs for {len(self.times)} nodes")
        self.denoised = list(self.denoised) + [None] * (len(self.times) - len(self.denoised))

    def __len__(self):
        return len(self.times)

    @property
    def d(self):
        return int(np.asarray(self.states[0]).shape[-1])

    @property
    def initial(self):
        return self.states[0]

    @property
    def final(self):
        return self.states[-1]

    def states_array(self):
        return np.vstack(self.states)

    def evaluated_nodes(self):
        return [n for n, r in enumerate(self.denoised) if r is not None]


@dataclass(frozen=True, eq=False)
class StepHistory:
    """What a multistep method remembers about the previous node"""

    t: float
    x: np.ndarray
    r: np.ndarray
    eps: np.ndarray


@dataclass(frozen=True, eq=False)
class StepAux:
    output: DenoiserOutput
    nfe: int
    generalized_r: Optional[np.ndarray] = None


def _check_times(t_cur, t_next):
    if not (math.isfinite(t_cur) and math.isfinite(t_next)):
        raise DomainError(f"non-finite step times {t_cur} -> {t_next}")
    if t_next > t_cur:
        raise DomainError(f"t_next={t_next} exceeds t_cur={t_cur}; sampling runs backward in time")
    if t_next < 0 or t_cur <= 0:
        raise DomainError(f"step {t_cur} -> {t_next} leaves the positive time axis")


def convex_step(x, r, t_cur, t_next):
    """(t_next/t_cur) x + (1 - t_next/t_cur) r; returns r exactly when t_next = 0"""
    ratio = t_next / t_cur
    return ratio * x + (1.0 - ratio) * r


def euler_step(denoiser, x, t_cur, t_next):
    _check_times(t_cur, t_next)
    out = denoiser(x, t_cur)
    return convex_step(np.asarray(x, dtype=float), out.r, t_cur, t_next), out


def afs_step(x, t_cur, t_next):
    """Euler step under the Gaussian prior score (r = 0); no denoiser call"""
    _check_times(t_cur, t_next)
    return np.asarray(x, dtype=float) * (t_next / t_cur)


def _finite_difference(method, t_cur, t_next, r, r_other, t_other):
    """Derivative estimate of the denoising trajectory used in R = r + (h/2) D"""
    h = t_next - t_cur
    if method == HEUN:
        gamma = t_cur / t_next
        return gamma * (r_other - r) / h
    if method == DPM2:
        gamma = t_cur / t_other
        return gamma * (r_other - r) / (h / 2.0)
    if method == SPNDM:
        return (r - r_other) / h
    # deis_ab1: slope of the line through the last two denoising outputs
    return (r - r_other) / (t_cur - t_other)


def second_order_step(spec, denoiser, x, t_cur, t_next, history=None):
    """
    One heun / dpm2 / spndm / deis_ab1 step.

    history is the StepHistory of the previous node and is required by the
    multistep methods; heun and dpm2 ignore it and call the denoiser twice.
    """
    method = spec.method
    if method not in SECOND_ORDER_METHODS:
        raise DomainError(f"{method} is not a second-order method")
    _check_times(t_cur, t_next)
    if method in MULTISTEP_METHODS and history is None:
        raise PreconditionError(f"{method} needs the previous denoising output")

    x = np.asarray(x, dtype=float)
    out = denoiser(x, t_cur)
    if t_next == t_cur:
        return x, StepAux(out, 1)
    if method in TWO_EVAL_METHODS and t_next == 0:
        return convex_step(x, out.r, t_cur, t_next), StepAux(out, 1)

    h = t_next - t_cur
    nfe = 1
    if method == HEUN:
        x_mid = convex_step(x, out.r, t_cur, t_next)
        mid = denoiser(x_mid, t_next)
        nfe = 2
        if spec.formulation == NATIVE:
            return x + h * 0.5 * (out.eps + mid.eps), StepAux(out, nfe)
        d_hat = _finite_difference(HEUN, t_cur, t_next, out.r, mid.r, t_next)
    elif method == DPM2:
        s = math.sqrt(t_cur * t_next)
        x_mid = x + (s - t_cur) * out.eps
        mid = denoiser(x_mid, s)
        nfe = 2
        if spec.formulation == NATIVE:
            return x + h * mid.eps, StepAux(out, nfe)
        d_hat = _finite_difference(DPM2, t_cur, t_next, out.r, mid.r, s)
    elif method == SPNDM:
        if spec.formulation == NATIVE:
            return x + h * 0.5 * (3.0 * out.eps - history.eps), StepAux(out, nfe)
        d_hat = _finite_difference(SPNDM, t_cur, t_next, out.r, history.r, history.t)
    else:
        t_prev = history.t
        if not t_prev > t_cur:
            raise PreconditionError(f"history time {t_prev} must precede t_cur={t_cur}")
        if spec.formulation == NATIVE:
            a = ((t_next - t_prev) ** 2 - (t_cur - t_prev) ** 2) / (2.0 * (t_cur - t_prev))
            b = h ** 2 / (2.0 * (t_prev - t_cur))
            return x + a * out.eps + b * history.eps, StepAux(out, nfe)
        d_hat = _finite_difference(DEIS_AB1, t_cur, t_next, out.r, history.r, t_prev)

    big_r = out.r + 0.5 * h * d_hat
    return convex_step(x, big_r, t_cur, t_next), StepAux(out, nfe, big_r)


def ipndm_step(denoiser, x, t_cur, t_next, eps_history, order=4):
    """
    Adams-Bashforth step on eps. eps_history holds previous noise predictions,
    most recent first; entries beyond order - 1 are ignored. Returns the new
    state and the denoiser output whose eps goes to the front of the history.
    """
    _check_times(t_cur, t_next)
    x = np.asarray(x, dtype=float)
    out = denoiser(x, t_cur)
    usable = list(eps_history)[: max(order - 1, 0)]
    coeffs = AB_COEFFICIENTS[len(usable)]
    slope = coeffs[0] * out.eps
    for b, eps in zip(coeffs[1:], usable):
        slope = slope + b * eps
    return x + (t_next - t_cur) * slope, out


def sample(spec, denoiser, schedule, x_init):
    """Integrate from schedule.times[0] to schedule.times[-1] and record both trajectories"""
    times = list(getattr(schedule, "times", schedule))
    x = np.array(x_init, dtype=float)
    if x.ndim != 1:
        raise DomainError(f"x_init must be a vector, got shape {x.shape}")

    states = [x.copy()]
    denoised = []
    nfe = 0
    history = None
    eps_history = []
    n_steps = len(times) - 1

    for i, (t_cur, t_next) in enumerate(zip(times[:-1], times[1:])):
        try:
            if i == 0 and spec.afs:
                x_next = afs_step(x, t_cur, t_next)
                r, eps = np.zeros_like(x), x / t_cur
                denoised.append(None)
            elif spec.method == EULER:
                x_next, out = euler_step(denoiser, x, t_cur, t_next)
                r, eps = out.r, out.eps
                denoised.append(r)
                nfe += 1
            elif spec.method == IPNDM:
                x_next, out = ipndm_step(denoiser, x, t_cur, t_next, eps_history, spec.order)
                r, eps = out.r, out.eps
                denoised.append(r)
                nfe += 1
            elif spec.method in TWO_EVAL_METHODS and i == n_steps - 1:
                # no correction on the final step
                x_next, out = euler_step(denoiser, x, t_cur, t_next)
                r, eps = out.r, out.eps
                denoised.append(r)
                nfe += 1
            elif spec.method in MULTISTEP_METHODS and history is None:
                # warm start
                x_next, out = euler_step(denoiser, x, t_cur, t_next)
                r, eps = out.r, out.eps
                denoised.append(r)
                nfe += 1
            else:
                x_next, aux = second_order_step(spec, denoiser, x, t_cur, t_next, history)
                r, eps = aux.output.r, aux.output.eps
                denoised.append(r)
                nfe += aux.nfe
        except StepError:
            raise
        except (LabError, ArithmeticError, ValueError) as exc:
            raise StepError(i, exc) from exc

        if not np.all(np.isfinite(x_next)):
            raise StepError(i, f"non-finite state after {t_cur} -> {t_next}")

        history = StepHistory(t_cur, x, r, eps)
        eps_history = [eps] + eps_history[:3]
        x = x_next
        states.append(x.copy())
        logger.debug("%s step %d: t %.6g -> %.6g, nfe %d", spec.method, i, t_cur, t_next, nfe)

    return Trajectory(times, states, denoised, nfe)


def sample_batch(spec, denoiser, schedule, inits, threads=1, progress=False, desc="sampling"):
    """One trajectory per initial state, in input order"""
    inits = list(inits)
    bar = tqdm(total=len(inits), desc=desc, disable=not progress, leave=False)
    try:
        if threads <= 1:
            results = []
            for x_init in inits:
                results.append(sample(spec, denoiser, schedule, x_init))
                bar.update()
            return results
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(sample, spec, denoiser, schedule, x_init) for x_init in inits]
            results = []
            for fut in futures:
                results.append(fut.result())
                bar.update()
            return results
    finally:
        bar.close()


def trajectory_frame(traj):
    d = traj.d
    x_cols = [f"x{k}" for k in range(d)]
    r_cols = [f"r{k}" for k in range(d)]
    frame = pd.DataFrame(traj.states_array(), columns=x_cols)
    frame.insert(0, "t", traj.times)
    missing = np.full(d, np.nan)
    r_block = np.vstack([missing if r is None else r for r in traj.denoised])
    return pd.concat([frame, pd.DataFrame(r_block, columns=r_cols)], axis=1)


def save_trajectory(traj, path):
    try:
        trajectory_frame(traj).to_csv(path, index=False, float_format="%.17g", na_rep="")
    except OSError as exc:
        raise DataIOError(path, f"cannot write trajectory: {exc.strerror or exc}") from exc


def load_trajectory(path):
    """Inverse of save_trajectory; nfe is taken as the number of evaluated nodes"""
    try:
        frame = pd.read_csv(path, dtype=float)
    except OSError as exc:
        raise DataIOError(path, f"cannot read trajectory: {exc.strerror or exc}") from exc
    except (ValueError, pd.errors.ParserError) as exc:
        raise DataIOError(path, f"malformed trajectory CSV: {exc}") from exc

    if "t" not in frame.columns:
        raise DataIOError(path, "trajectory CSV has no 't' column")
    x_cols = [c for c in frame.columns if c.startswith("x")]
    r_cols = [c for c in frame.columns if c.startswith("r")]
    if not x_cols or (r_cols and len(r_cols) != len(x_cols)):
        raise DataIOError(path, f"expected matching x and r columns, got {len(x_cols)} and {len(r_cols)}")

    states = list(frame[x_cols].to_numpy())
    denoised = []
    for row in (frame[r_cols].to_numpy() if r_cols else [None] * len(frame)):
        denoised.append(None if row is None or np.isnan(row).any() else row)
    try:
        traj = Trajectory(frame["t"].tolist(), states, denoised)
    except DomainError as exc:
        raise DataIOError(path, str(exc)) from exc
    traj.nfe = len(traj.evaluated_nodes())
    return traj
