"""
Geometry-inspired time scheduling.

A few warmup trajectories are solved accurately on a fine time grid. The cost
of jumping from grid node i to node j with a single Euler step is the mean L2
gap between that jump and the fine trajectory at t_j, optionally carried to
t_min (SCALED). A dynamic program then picks the cheapest path of a given
number of jumps from t_max to t_min.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import DataIOError, DomainError, InfeasibleError
from schedules import GITS, T_MAX, T_MIN, TimeSchedule, polynomial_schedule
from solvers import IPNDM, SolverSpec, sample, sample_batch

logger = logging.getLogger(__name__)

L2 = "L2"
# L2 gap carried to t_min by the contraction t_min / t_j of every later Euler step
SCALED = "scaled"
METRICS = (L2, SCALED)
DEFAULT_GAMMA = 1.15


@dataclass(frozen=True)
class FineGrid:
    grid_times: TimeSchedule
    teacher_spec: SolverSpec = field(default_factory=lambda: SolverSpec(IPNDM, order=4))

    @property
    def n_t(self):
        return self.grid_times.n_steps

    @property
    def times(self):
        return self.grid_times.times


def fine_grid(n_t=60, t_min=T_MIN, t_max=T_MAX, rho=7.0, teacher_spec=None):
    """Polynomial search grid with n_t intervals (n_t + 1 nodes)"""
    spec = teacher_spec if teacher_spec is not None else SolverSpec(IPNDM, order=4)
    return FineGrid(polynomial_schedule(n_t, t_min, t_max, rho), spec)


@dataclass(eq=False)
class CostMatrix:
    """c[i, j] for i < j; entries with i >= j are NaN (undefined, not zero)"""

    c: np.ndarray
    batch: int = 1
    metric: str = L2

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise DomainError(f"cost matrix must be square with >= 2 nodes, got shape {c.shape}")
        upper = np.triu(np.ones_like(c, dtype=bool), k=1)
        if np.any(~np.isfinite(c[upper])) or np.any(c[upper] < 0):
            raise DomainError("costs above the diagonal must be finite and non-negative")
        c[~upper] = np.nan
        self.c = c
        if self.metric not in METRICS:
            raise DomainError(f"unsupported cost metric {self.metric!r}")

    @property
    def n_t(self):
        return self.c.shape[0] - 1

    @classmethod
    def from_entries(cls, n_nodes, entries, batch=1, metric=L2):
        """Build from {(i, j): cost}; every i < j pair must be given"""
        c = np.full((n_nodes, n_nodes), np.nan)
        for (i, j), value in entries.items():
            c[i, j] = value
        missing = [(i, j) for i, j in itertools.combinations(range(n_nodes), 2) if np.isnan(c[i, j])]
        if missing:
            raise DomainError(f"missing costs for transitions {missing}")
        return cls(c, batch, metric)

    def to_frame(self):
        frame = pd.DataFrame(self.c, columns=[str(j) for j in range(self.c.shape[1])])
        frame.insert(0, "i", np.arange(self.c.shape[0]))
        return frame

    def save_csv(self, path):
        try:
            self.to_frame().to_csv(path, index=False, float_format="%.17g", na_rep="")
        except OSError as exc:
            raise DataIOError(path, f"cannot write cost matrix: {exc.strerror or exc}") from exc


@dataclass(eq=False)
class DPResult:
    schedule: TimeSchedule
    path_indices: List[int]
    total_cost: float
    budget: int
    gamma: float
    V: Optional[np.ndarray] = None

    def to_dict(self):
        payload = self.schedule.to_dict()
        payload.update(
            {
                "path_indices": list(self.path_indices),
                "total_cost": float("%.17g" % self.total_cost),
                "budget": self.budget,
                "gamma": self.gamma,
            }
        )
        return payload


def build_teacher(fine, denoiser, warmup, threads=1, progress=False):
    """One fine-grid trajectory per warmup sample"""
    warmup = list(warmup)
    if not warmup:
        raise DomainError("need at least one warmup sample")
    teachers = sample_batch(
        fine.teacher_spec, denoiser, fine.grid_times, warmup, threads=threads, progress=progress, desc="teacher"
    )
    logger.info(
        "built %d %s teacher trajectories on %d grid nodes",
        len(teachers), fine.teacher_spec.label(), fine.n_t + 1,
    )
    return teachers


def _trajectory_costs(times, denoiser, traj, metric=L2):
    n_nodes = len(times)
    costs = np.zeros((n_nodes, n_nodes))
    states = traj.states_array()
    for i in range(n_nodes - 1):
        r = traj.denoised[i]
        if r is None:
            r = denoiser(states[i], times[i]).r
        ratios = np.asarray(times[i + 1:]) / times[i]
        # same arithmetic as convex_step, one row per target node
        predicted = ratios[:, None] * states[i] + (1.0 - ratios[:, None]) * r
        costs[i, i + 1:] = np.linalg.norm(predicted - states[i + 1:], axis=1)
        if metric == SCALED:
            costs[i, i + 1:] *= times[-1] / np.asarray(times[i + 1:])
    return costs


def build_cost_matrix(fine, denoiser, teachers, threads=1, progress=False, metric=L2):
    """
    Mean over warmup trajectories of ||euler(x_i, t_i -> t_j) - x_j||.

    With metric=SCALED each gap is multiplied by t_min / t_j: under a locally
    constant denoiser every later Euler step shrinks an error by t_next / t_cur,
    so this is the gap as it would arrive at t_min. The last hop keeps its
    full weight, early hops are discounted.

    Each jump starts at the teacher state x_i and reuses the denoising output
    the teacher recorded there, so no extra denoiser calls are made unless the
    teacher skipped a node (AFS).
    """
    if metric not in METRICS:
        raise DomainError(f"unsupported cost metric {metric!r}")
    times = fine.times
    if not teachers:
        raise DomainError("need at least one teacher trajectory")
    for k, traj in enumerate(teachers):
        if len(traj) != len(times) or not np.allclose(traj.times, times, rtol=1e-12, atol=0):
            raise DomainError(f"teacher {k} has {len(traj)} nodes, grid has {len(times)}")
        if k and traj.d != teachers[0].d:
            raise DomainError(f"teacher {k} has dimension {traj.d}, teacher 0 has {teachers[0].d}")

    bar = tqdm(total=len(teachers), desc="costs", disable=not progress, leave=False)
    total = np.zeros((len(times), len(times)))
    try:
        if threads <= 1:
            for traj in teachers:
                total += _trajectory_costs(times, denoiser, traj, metric)
                bar.update()
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                # summed in submission order
                for part in pool.map(lambda tr: _trajectory_costs(times, denoiser, tr, metric), teachers):
                    total += part
                    bar.update()
    finally:
        bar.close()
    return CostMatrix(total / len(teachers), batch=len(teachers), metric=metric)


def _check_dp_args(costs, budget, gamma):
    if int(budget) != budget or budget < 1:
        raise DomainError(f"budget must be a positive integer, got {budget}")
    if budget > costs.n_t:
        raise InfeasibleError(f"budget {budget} exceeds the {costs.n_t} grid intervals")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")


def _candidates(costs, V, j, k, gamma):
    """gamma * c[j, i] + V[i, k-1] for i = j+1 .. N-1 (the last hop is never scaled)"""
    n = costs.n_t
    return gamma * costs.c[j, j + 1:n] + V[j + 1:n, k - 1]


def dp_fill(costs, max_budget, gamma=DEFAULT_GAMMA):
    """
    Value table V[j, k]: cheapest cost from node j to the last node in exactly
    k jumps. Column 0 is unused; unreachable entries are +inf.
    """
    _check_dp_args(costs, max_budget, gamma)
    n = costs.n_t
    V = np.full((n + 1, max_budget + 1), np.inf)
    V[:n, 1] = costs.c[:n, n]
    for k in range(2, max_budget + 1):
        for j in range(n - 1):
            cand = _candidates(costs, V, j, k, gamma)
            if cand.size:
                V[j, k] = cand.min()
    return V


def fetch_path(costs, V, budget, gamma=DEFAULT_GAMMA):
    """Walk the table from node 0; ties go to the smallest next index"""
    _check_dp_args(costs, budget, gamma)
    if V.shape[1] <= budget:
        raise DomainError(f"value table covers budgets up to {V.shape[1] - 1}, asked for {budget}")
    path = [0]
    j = 0
    for k in range(budget, 1, -1):
        cand = _candidates(costs, V, j, k, gamma)
        j = j + 1 + int(np.argmin(cand))
        path.append(j)
    path.append(costs.n_t)
    return path


def _result(costs, V, budget, gamma, grid_times):
    path = fetch_path(costs, V, budget, gamma)
    if grid_times is None:
        times = np.arange(costs.n_t, -1, -1, dtype=float) + 1.0
    else:
        if len(grid_times) != costs.n_t + 1:
            raise DomainError(f"grid has {len(grid_times)} nodes, cost matrix {costs.n_t + 1}")
        times = grid_times.times
    params = {"budget": budget, "gamma": gamma, "grid_intervals": costs.n_t, "metric": costs.metric}
    schedule = TimeSchedule([times[i] for i in path], GITS, params)
    return DPResult(schedule, path, float(V[0, budget]), budget, gamma, V)


def dp_schedule(costs, budget_nfe, gamma=DEFAULT_GAMMA, grid_times=None):
    """
    Cheapest path of exactly budget_nfe Euler jumps from grid node 0 to the
    last node. Without grid_times the schedule uses placeholder times
    (n_t + 1 - index), which keeps it a valid descending schedule.
    """
    V = dp_fill(costs, budget_nfe, gamma)
    result = _result(costs, V, budget_nfe, gamma, grid_times)
    logger.debug("dp budget %d: path %s cost %.6g", budget_nfe, result.path_indices, result.total_cost)
    return result


def dp_schedules(costs, budgets, gamma=DEFAULT_GAMMA, grid_times=None):
    """One table fill, one fetch per budget"""
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets:
        raise DomainError("no budgets requested")
    V = dp_fill(costs, budgets[-1], gamma)
    return {b: _result(costs, V, b, gamma, grid_times) for b in budgets}


def path_cost(costs, path, gamma=DEFAULT_GAMMA):
    """DP objective of a path, accumulated from the end like the table"""
    total = costs.c[path[-2], path[-1]]
    for a, b in reversed(list(zip(path[:-2], path[1:-1]))):
        total = gamma * costs.c[a, b] + total
    return float(total)


def brute_force_schedule(costs, budget, gamma=DEFAULT_GAMMA):
    """Exhaustive search over every monotone path; first minimum in lexicographic order wins"""
    _check_dp_args(costs, budget, gamma)
    n = costs.n_t
    best_path, best_cost = None, np.inf
    for middle in itertools.combinations(range(1, n), budget - 1):
        path = [0, *middle, n]
        cost = path_cost(costs, path, gamma)
        if cost < best_cost:
            best_path, best_cost = path, cost
    return best_path, best_cost


def reference_trajectories(denoiser, x_inits, n_steps=640, t_min=T_MIN, t_max=T_MAX, spec=None, threads=1):
    """High-accuracy solutions used as ground truth by global_error"""
    spec = spec if spec is not None else SolverSpec(IPNDM, order=4)
    schedule = polynomial_schedule(n_steps, t_min, t_max)
    return sample_batch(spec, denoiser, schedule, x_inits, threads=threads)


def global_error(schedule, spec, denoiser, x_inits, reference):
    """Mean endpoint L2 distance to the reference trajectories started from the same noise"""
    x_inits = [np.asarray(x, dtype=float) for x in x_inits]
    if len(x_inits) != len(reference) or not x_inits:
        raise DomainError(f"{len(x_inits)} initial states for {len(reference)} reference trajectories")
    errors = []
    for k, (x_init, ref) in enumerate(zip(x_inits, reference)):
        if not np.array_equal(x_init, ref.initial):
            raise DomainError(f"reference trajectory {k} starts from a different initial state")
        traj = sample(spec, denoiser, schedule, x_init)
        errors.append(np.linalg.norm(traj.final - ref.final))
    return float(np.mean(errors))
