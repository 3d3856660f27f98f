"""
Dataset ingestion (headerless CSV) and the synthetic point sets used by the
sampling experiments.
"""

import logging

import numpy as np
import pandas as pd

from denoiser import Dataset
from errors import DataIOError, DomainError

logger = logging.getLogger(__name__)


def load_csv(path):
    """One point per row, comma-separated floats, no header"""
    try:
        frame = pd.read_csv(path, header=None, dtype=float, skip_blank_lines=True)
    except FileNotFoundError as exc:
        raise DataIOError(path, "dataset file not found") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataIOError(path, "dataset file is empty") from exc
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        # ragged rows longer than the first one land here
        raise DataIOError(path, f"cannot parse dataset: {exc}") from exc

    values = frame.to_numpy()
    short_rows = np.flatnonzero(np.isnan(values).any(axis=1))
    if short_rows.size:
        row = int(short_rows[0])
        raise DataIOError(path, f"row {row + 1} has a missing or non-numeric entry; expected {values.shape[1]} values")
    try:
        data = Dataset(values)
    except DomainError as exc:
        raise DataIOError(path, str(exc)) from exc
    logger.info("loaded %d points of dimension %d from %s", data.count, data.d, path)
    return data


def save_csv(data, path):
    try:
        pd.DataFrame(data.points).to_csv(path, header=False, index=False, float_format="%.17g")
    except OSError as exc:
        raise DataIOError(path, f"cannot write dataset: {exc.strerror or exc}") from exc


def gmm_points(rng, modes=2, d=2, spread=0.1, points=64):
    """
    Isotropic Gaussian clusters around +-0.5 sign-vector centres, clipped to
    the unit cube. Two modes always sit at c and -c.
    """
    if modes < 1 or d < 1 or points < modes:
        raise DomainError(f"need modes >= 1, d >= 1 and points >= modes; got {modes}, {d}, {points}")
    if spread < 0:
        raise DomainError(f"spread must be >= 0, got {spread}")
    signs = rng.choice([-1.0, 1.0], size=(modes, d))
    if modes >= 2:
        signs[1] = -signs[0]
    centres = 0.5 * signs
    labels = np.arange(points) % modes
    pts = centres[labels] + spread * rng.standard_normal((points, d))
    return Dataset(np.clip(pts, -1.0, 1.0))


def plane_points(rng, m=2, d=512, points=64):
    """Points on a random m-dimensional linear subspace of R^d, coefficients in [-1, 1]"""
    if not 1 <= m <= d:
        raise DomainError(f"need 1 <= m <= d, got m={m}, d={d}")
    if points < 1:
        raise DomainError(f"points must be >= 1, got {points}")
    basis, _ = np.linalg.qr(rng.standard_normal((d, m)))
    coeffs = rng.uniform(-1.0, 1.0, size=(points, m))
    return Dataset(coeffs @ basis.T)


def corner_points(rng, d=1024, points=32):
    """Random vertices of the hypercube [-1, 1]^d"""
    if d < 1 or points < 1:
        raise DomainError(f"need d >= 1 and points >= 1, got d={d}, points={points}")
    return Dataset(rng.choice([-1.0, 1.0], size=(points, d)))


PRESETS = {
    "gmm": (gmm_points, {"modes": int, "d": int, "spread": float, "points": int}),
    "plane": (plane_points, {"m": int, "d": int, "points": int}),
    "corners": (corner_points, {"d": int, "points": int}),
}


def parse_source(source):
    """Split 'gmm:modes=2,d=64' into ('gmm', {'modes': 2, 'd': 64})"""
    kind, _, rest = source.partition(":")
    kind = kind.strip().lower()
    if kind == "csv":
        if not rest:
            raise DomainError("csv source needs a path, e.g. csv:data.csv")
        return kind, {"path": rest}
    if kind not in PRESETS:
        raise DomainError(f"unknown dataset source {source!r}; use csv:<path> or one of {sorted(PRESETS)}")
    _, types = PRESETS[kind]
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in types:
            raise DomainError(f"bad {kind} parameter {item!r}; known keys: {', '.join(types)}")
        try:
            params[key] = types[key](value)
        except ValueError as exc:
            raise DomainError(f"bad value for {kind} parameter {key}: {value!r}") from exc
    return kind, params


def load_dataset(source, rng):
    """Build the Dataset named by a source string; rng drives the synthetic presets"""
    kind, params = parse_source(source)
    if kind == "csv":
        return load_csv(params["path"])
    builder, _ = PRESETS[kind]
    data = builder(rng, **params)
    logger.info("generated %s dataset: %d points, d=%d", kind, data.count, data.d)
    return data
