"""Run configuration, seed streams and key=value config files"""

import configparser
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from errors import DataIOError, DomainError
from gits import L2, METRICS
from schedules import GENERATORS, POLYNOMIAL, T_MAX, T_MIN
from solvers import EULER, IPNDM, NATIVE, SolverSpec

logger = logging.getLogger(__name__)

DEFAULT_DATASET = "gmm:modes=2,d=2,spread=0.1,points=64"

# spawn keys keeping dataset, warmup and sample noise on disjoint streams
DATASET_KEY = 1
WARMUP_KEY = 2


def sample_rng(seed, index):
    """Noise stream for sample `index`; independent of how many samples are drawn"""
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def dataset_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(DATASET_KEY,)))


def warmup_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence((seed, index), spawn_key=(WARMUP_KEY,)))


def initial_noise(rng, d, t_max=T_MAX):
    """x_T ~ N(0, t_max^2 I)"""
    return t_max * rng.standard_normal(d)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: str = DEFAULT_DATASET
    solver: SolverSpec = field(default_factory=SolverSpec)
    schedule_kind: str = POLYNOMIAL
    nfe: int = 10
    t_min: float = T_MIN
    t_max: float = T_MAX
    rho: float = 7.0
    eps_s: float = 1e-3
    batch: int = 4
    threads: int = 1
    out_dir: str = "out"
    db_path: Optional[str] = None
    teacher_nfe: int = 60
    teacher: SolverSpec = field(default_factory=lambda: SolverSpec(IPNDM, order=4))
    budgets: Tuple[int, ...] = (10,)
    gamma: float = 1.15
    metric: str = L2
    warmup: int = 256
    per_sample: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.schedule_kind not in GENERATORS:
            raise DomainError(f"unknown schedule kind {self.schedule_kind!r}")
        for name in ("nfe", "batch", "threads", "teacher_nfe", "warmup"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.budgets or min(self.budgets) < 1:
            raise DomainError(f"budgets must be positive, got {self.budgets}")
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if self.metric not in METRICS:
            raise DomainError(f"unknown cost metric {self.metric!r}")

    def schedule_params(self):
        if self.schedule_kind == POLYNOMIAL:
            return {"rho": self.rho}
        if self.schedule_kind == "uniform":
            return {"eps_s": self.eps_s}
        return {}


def _as_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise DomainError(f"not a boolean: {text!r}")


def _as_budgets(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(b) for b in text)
    return tuple(int(b) for b in str(text).replace(",", " ").split())


_CONVERTERS = {
    "seed": int,
    "dataset": str,
    "schedule_kind": str,
    "nfe": int,
    "t_min": float,
    "t_max": float,
    "rho": float,
    "eps_s": float,
    "batch": int,
    "threads": int,
    "out_dir": str,
    "db_path": str,
    "teacher_nfe": int,
    "budgets": _as_budgets,
    "gamma": float,
    "metric": str,
    "warmup": int,
    "per_sample": int,
}
# solver keys feed SolverSpec rather than RunConfig directly
_SOLVER_KEYS = {"solver": str, "order": int, "afs": _as_bool, "formulation": str}


def load_config_file(path):
    """Read `key = value` lines (no section header needed; # comments allowed)"""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read(), source=str(path))
    except OSError as exc:
        raise DataIOError(path, f"cannot read config: {exc.strerror or exc}") from exc
    except configparser.Error as exc:
        raise DataIOError(path, f"malformed config: {exc}") from exc
    values = {k.replace("-", "_"): v for k, v in parser["run"].items()}
    unknown = sorted(set(values) - set(_CONVERTERS) - set(_SOLVER_KEYS))
    if unknown:
        raise DataIOError(path, f"unknown config keys: {', '.join(unknown)}")
    logger.info("loaded %d settings from %s", len(values), path)
    return values


def build_run_config(file_values=None, overrides=None):
    """
    Merge config-file values and explicit overrides (CLI flags) into a
    RunConfig; overrides win. Values that are None are treated as unset.
    """
    merged = {}
    for source in (file_values or {}, overrides or {}):
        merged.update({k: v for k, v in source.items() if v is not None})

    kwargs = {}
    for key, convert in _CONVERTERS.items():
        if key in merged:
            try:
                kwargs[key] = convert(merged[key])
            except (TypeError, ValueError) as exc:
                raise DomainError(f"bad value for {key}: {merged[key]!r}") from exc

    solver = SolverSpec(
        method=str(merged.get("solver", EULER)),
        order=int(merged.get("order", 4)),
        afs=_as_bool(merged.get("afs", False)),
        formulation=str(merged.get("formulation", NATIVE)),
    )
    return RunConfig(solver=solver, **kwargs)
