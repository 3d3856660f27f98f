"""
Trajectory regularity analytics: deviation from the endpoint chord, PCA in
the chord's orthogonal complement, length and turning angles, noise-norm
tracking, likelihood along the trajectory and score-deviation diagnosis.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
import pandas as pd

from denoiser import kde_log_density
from errors import DataIOError, DomainError
from solvers import EULER, SolverSpec, sample

logger = logging.getLogger(__name__)

DEFAULT_BANDWIDTHS = (0.1, 1.0, 10.0)
MONOTONE_TOL = 1e-9


@dataclass(eq=False)
class GeometryReport:
    deviation: List[float]
    sample_distance: List[float]
    max_deviation_ratio: float
    length: float
    step_angles_deg: List[float]
    step_cosines: List[float]
    eps_norms: List[float]
    likelihood_curve: List[List[float]]
    bandwidths: List[float]
    monotone: bool
    times: List[float] = field(default_factory=list)
    # gains at the step bandwidth h = t_n; see stepwise_likelihood
    step_gains: List[float] = field(default_factory=list)
    denoised_gains: List[float] = field(default_factory=list)
    stepwise_monotone: bool = True

    def to_dict(self):
        return asdict(self)

    def node_frame(self):
        """Per-node curves; eps_norm is blank where the denoiser was not evaluated"""
        frame = pd.DataFrame(
            {
                "node": np.arange(len(self.deviation)),
                "t": self.times,
                "deviation": self.deviation,
                "distance": self.sample_distance,
                "eps_norm": self.eps_norms,
                "step_gain": self.step_gains + [math.nan] if self.step_gains else math.nan,
                "denoised_gain": self.denoised_gains or math.nan,
            }
        )
        curve = np.asarray(self.likelihood_curve, dtype=float).reshape(len(self.deviation), -1)
        for col, h in enumerate(self.bandwidths):
            frame[f"logp_h{h:g}"] = curve[:, col]
        return frame


@dataclass(eq=False)
class PcaReport:
    k_values: List[int]
    recon_error: List[float]
    explained_variance_ratio: List[float]
    basis: List[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "k_values": list(self.k_values),
            "recon_error": list(self.recon_error),
            "explained_variance_ratio": list(self.explained_variance_ratio),
        }


def _chord(states):
    chord = states[0] - states[-1]
    norm = np.linalg.norm(chord)
    if norm == 0:
        raise DomainError("trajectory endpoints coincide; the chord direction is undefined")
    return chord / norm


def _residuals(states, u):
    """Components of x_n - x_0 orthogonal to the chord, one row per node"""
    rel = states - states[-1]
    return rel - np.outer(rel @ u, u)


def deviation_profile(traj):
    """Perpendicular distance of every node to the chord, and its distance to the final sample"""
    states = traj.states_array()
    if len(states) < 3:
        raise DomainError(f"deviation needs at least 3 nodes, got {len(states)}")
    u = _chord(states)
    deviation = np.linalg.norm(_residuals(states, u), axis=1)
    distance = np.linalg.norm(states - states[-1], axis=1)
    return deviation.tolist(), distance.tolist()


def _principal_axes(residuals):
    """
    Eigendecomposition of the uncentred second-moment matrix of the residuals,
    sorted by decreasing eigenvalue. Works on the smaller of the d x d and
    n x n Gram matrices.
    """
    n, d = residuals.shape
    if d <= n:
        values, vectors = np.linalg.eigh(residuals.T @ residuals / n)
    else:
        values, small = np.linalg.eigh(residuals @ residuals.T / n)
        vectors = residuals.T @ small
        norms = np.linalg.norm(vectors, axis=0)
        keep = norms > 1e-12 * max(norms.max(), 1.0)
        vectors = vectors[:, keep] / norms[keep]
        values = values[keep]
    order = np.argsort(values)[::-1]
    return np.clip(values[order], 0.0, None), vectors[:, order]


def pca_reconstruct(trajs, k_max):
    """
    Per trajectory: keep the chord direction, then add the top k-1 principal
    directions of the orthogonal complement. recon_error[k] is the RMS node
    error of that reconstruction averaged over trajectories.

    explained_variance_ratio[k] is the share of the top k eigenvalues of the
    complement's uncentred second moment about the final sample, so it counts
    one direction more than recon_error[k] uses: for a single trajectory
    1 - ratio[k] == recon_error[k + 1]**2 / recon_error[1]**2.
    """
    if k_max < 1:
        raise DomainError(f"k_max must be >= 1, got {k_max}")
    trajs = list(trajs)
    if not trajs:
        raise DomainError("no trajectories to analyse")

    errors = np.zeros(k_max)
    ratios = np.zeros(k_max)
    bases = []
    for traj in trajs:
        states = traj.states_array()
        if len(states) < k_max + 1:
            raise DomainError(f"trajectory has {len(states)} nodes, k_max={k_max} needs {k_max + 1}")
        u = _chord(states)
        res = _residuals(states, u)
        values, axes = _principal_axes(res)
        total = values.sum()
        for k in range(1, k_max + 1):
            top = axes[:, : k - 1]
            left = res - (res @ top) @ top.T
            errors[k - 1] += math.sqrt(np.mean(np.sum(left * left, axis=1)))
            ratios[k - 1] += min(values[:k].sum() / total, 1.0) if total > 0 else 1.0
        bases.append(np.column_stack([u, axes[:, : k_max - 1]]))

    count = len(trajs)
    return PcaReport(
        k_values=list(range(1, k_max + 1)),
        recon_error=(errors / count).tolist(),
        explained_variance_ratio=(ratios / count).tolist(),
        basis=bases,
    )


def _angle(a, b):
    """Angle between two vectors in radians, stable near 0 and pi"""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    ua, ub = a / na, b / nb
    return 2.0 * math.atan2(np.linalg.norm(ua - ub), np.linalg.norm(ua + ub))


def _steps(traj):
    states = traj.states_array()
    if len(states) < 2:
        raise DomainError(f"need at least 2 nodes, got {len(states)}")
    return np.diff(states, axis=0)


def length_and_angles(traj):
    """Total path length and turning angle (degrees) between consecutive steps"""
    steps = _steps(traj)
    length = float(np.linalg.norm(steps, axis=1).sum())
    angles = [math.degrees(_angle(a, b)) for a, b in zip(steps[:-1], steps[1:])]
    return length, angles


def step_cosines(traj):
    """Cosine between consecutive steps; 1 where a step has zero length"""
    steps = _steps(traj)
    return [math.cos(_angle(a, b)) for a, b in zip(steps[:-1], steps[1:])]


def eps_norm_profile(traj):
    """||(x - r) / t|| at every node where the denoiser was evaluated"""
    return [
        float(np.linalg.norm((traj.states[n] - traj.denoised[n]) / traj.times[n]))
        for n in traj.evaluated_nodes()
    ]


def likelihood_profile(traj, data, bandwidths=DEFAULT_BANDWIDTHS):
    """
    KDE log-density of every node at every bandwidth (rows are nodes) and
    whether it is non-decreasing toward t_0 at all of them.
    """
    bandwidths = list(bandwidths)
    if not bandwidths or min(bandwidths) <= 0:
        raise DomainError(f"bandwidths must be positive, got {bandwidths}")
    curve = np.array([[kde_log_density(data, x, h) for h in bandwidths] for x in traj.states])
    monotone = bool(np.all(np.diff(curve, axis=0) >= -MONOTONE_TOL))
    return curve, monotone


def denoised_dominance(traj, data, bandwidths=DEFAULT_BANDWIDTHS):
    """True when p_h(r(x_n)) >= p_h(x_n) at every evaluated node and bandwidth"""
    for n in traj.evaluated_nodes():
        for h in bandwidths:
            gain = kde_log_density(data, traj.denoised[n], h) - kde_log_density(data, traj.states[n], h)
            if gain < -MONOTONE_TOL:
                logger.debug("denoised output loses likelihood at node %d, h=%g: %.3e", n, h, gain)
                return False
    return True


def _gain_at(data, h, before, after):
    base = kde_log_density(data, before, h)
    gain = kde_log_density(data, after, h) - base
    return gain, bool(gain >= -MONOTONE_TOL * max(1.0, abs(base)))


def stepwise_likelihood(traj, data):
    """
    Likelihood gains measured at each step's own noise level, h = t_n:
      step_gains[n]     = log p_h(x_{n+1}) - log p_h(x_n)
      denoised_gains[n] = log p_h(r_n) - log p_h(x_n)   (NaN where not evaluated)

    An Euler step with the optimal denoiser moves x_n toward the mean-shift
    point of bandwidth t_n, so both gains are >= 0 there up to rounding.
    Returns (step_gains, denoised_gains, holds).
    """
    step_gains = []
    denoised_gains = [math.nan] * len(traj)
    holds = True
    for n in range(len(traj) - 1):
        h = traj.times[n]
        gain, ok = _gain_at(data, h, traj.states[n], traj.states[n + 1])
        step_gains.append(gain)
        holds = holds and ok
        if traj.denoised[n] is not None:
            gain, ok = _gain_at(data, h, traj.states[n], traj.denoised[n])
            denoised_gains[n] = gain
            holds = holds and ok
    if not holds:
        logger.debug("likelihood drops at the step bandwidth: %s", step_gains)
    return step_gains, denoised_gains, holds


def summarize(traj, data, bandwidths=DEFAULT_BANDWIDTHS):
    deviation, distance = deviation_profile(traj)
    length, angles = length_and_angles(traj)
    curve, monotone = likelihood_profile(traj, data, bandwidths)
    step_gains, denoised_gains, stepwise = stepwise_likelihood(traj, data)
    eps_by_node = [math.nan] * len(traj)
    for n, value in zip(traj.evaluated_nodes(), eps_norm_profile(traj)):
        eps_by_node[n] = value
    return GeometryReport(
        deviation=deviation,
        sample_distance=distance,
        max_deviation_ratio=max(deviation) / distance[0],
        length=length,
        step_angles_deg=angles,
        step_cosines=step_cosines(traj),
        eps_norms=eps_by_node,
        likelihood_curve=curve.tolist(),
        bandwidths=list(bandwidths),
        monotone=monotone,
        times=list(traj.times),
        step_gains=step_gains,
        denoised_gains=denoised_gains,
        stepwise_monotone=stepwise,
    )


@dataclass(eq=False)
class DiagnosisReport:
    """Optimal-driven vs perturbed-driven sampling with cross-evaluated denoisers"""

    times: List[float]
    deviation_on_optimal: List[float]
    deviation_on_perturbed: List[float]
    ratio: List[float]
    final_distance: float
    nearest_data_optimal: float
    nearest_data_perturbed: float

    def to_dict(self):
        return asdict(self)


def _nearest_distance(data, x):
    return float(np.min(np.linalg.norm(data.points - x, axis=1)))


def deviation_diagnosis(data, perturbed, schedule, x_init, spec=None):
    """
    Per evaluated node n:
      deviation_on_optimal[n]   = ||r*(x*_n) - r(x*_n)||  along the optimal trajectory
      deviation_on_perturbed[n] = ||r*(x_n) - r(x_n)||    along the perturbed trajectory (d1)
      ratio[n]                  = d1 / ||r*(x_n) - x_n||  (d1 / d2)
    """
    if perturbed.deviation_scale > 1:
        raise DomainError(f"deviation_scale must be <= 1, got {perturbed.deviation_scale}")
    spec = spec if spec is not None else SolverSpec(EULER)
    optimal = perturbed.base
    reference = sample(spec, optimal, schedule, x_init)
    driven = sample(spec, perturbed, schedule, x_init)

    dev_opt, dev_pert, ratio = [], [], []
    for n in driven.evaluated_nodes():
        t = driven.times[n]
        x_star = reference.states[n]
        dev_opt.append(float(np.linalg.norm(optimal(x_star, t).r - perturbed(x_star, t).r)))
        x = driven.states[n]
        r_star = optimal(x, t).r
        d1 = float(np.linalg.norm(r_star - driven.denoised[n]))
        d2 = float(np.linalg.norm(r_star - x))
        dev_pert.append(d1)
        ratio.append(d1 / d2 if d2 > 0 else 0.0)

    report = DiagnosisReport(
        times=[driven.times[n] for n in driven.evaluated_nodes()],
        deviation_on_optimal=dev_opt,
        deviation_on_perturbed=dev_pert,
        ratio=ratio,
        final_distance=float(np.linalg.norm(reference.final - driven.final)),
        nearest_data_optimal=_nearest_distance(data, reference.final),
        nearest_data_perturbed=_nearest_distance(data, driven.final),
    )
    logger.info("deviation diagnosis: max d1/d2 %.4f over %d nodes", max(ratio, default=0.0), len(ratio))
    return report


def gaussian_shell_check(d, sigma, n_samples, rng):
    """Mean and standard deviation of ||z|| for z ~ N(0, sigma^2 I_d)"""
    if d < 1:
        raise DomainError(f"d must be >= 1, got {d}")
    if n_samples < 100:
        raise DomainError(f"n_samples must be >= 100, got {n_samples}")
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    norms = np.empty(n_samples)
    chunk = max(1, 2 ** 22 // d)
    for start in range(0, n_samples, chunk):
        stop = min(start + chunk, n_samples)
        z = sigma * rng.standard_normal((stop - start, d))
        norms[start:stop] = np.linalg.norm(z, axis=1)
    return float(norms.mean()), float(norms.std())


def _json_ready(payload):
    """NaN is not valid JSON; write it as null"""
    if isinstance(payload, dict):
        return {k: _json_ready(v) for k, v in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [_json_ready(v) for v in payload]
    if isinstance(payload, float) and math.isnan(payload):
        return None
    return payload


def save_json(payload, path):
    try:
        with open(path, "w") as fh:
            json.dump(_json_ready(payload), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise DataIOError(path, f"cannot write report: {exc.strerror or exc}") from exc


def save_node_csv(report, path):
    try:
        report.node_frame().to_csv(path, index=False, float_format="%.17g", na_rep="")
    except OSError as exc:
        raise DataIOError(path, f"cannot write node curves: {exc.strerror or exc}") from exc


def load_geometry_report(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataIOError(path, f"cannot read report: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIOError(path, f"not a JSON report: {exc}") from exc
    for key in ("eps_norms", "denoised_gains"):
        payload[key] = [math.nan if v is None else v for v in payload.get(key, [])]
    try:
        return GeometryReport(**payload)
    except TypeError as exc:
        raise DataIOError(path, f"not a geometry report: {exc}") from exc


def load_pca_report(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
        return PcaReport(**payload)
    except OSError as exc:
        raise DataIOError(path, f"cannot read report: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, TypeError) as exc:
        raise DataIOError(path, f"not a PCA report: {exc}") from exc
