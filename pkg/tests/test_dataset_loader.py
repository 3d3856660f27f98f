import numpy as np
import pytest

from dataset_loader import (
    corner_points,
    gmm_points,
    load_csv,
    load_dataset,
    parse_source,
    plane_points,
    save_csv,
)
from errors import DataIOError, DomainError


def test_load_csv(tmp_path):
    path = tmp_path / "points.csv"
    path.write_text("1.0,2.0\n-0.5,0.25\n\n3,4\n")
    data = load_csv(path)
    assert (data.count, data.d) == (3, 2)
    np.testing.assert_array_equal(data.points[1], [-0.5, 0.25])


def test_save_and_load_preserve_points(tmp_path, gmm2):
    path = tmp_path / "gmm.csv"
    save_csv(gmm2, path)
    np.testing.assert_array_equal(load_csv(path).points, gmm2.points)


@pytest.mark.parametrize(
    "content",
    [
        "1,2\n3\n",      # short row
        "1\n2,3\n",      # long row
        "1,a\n2,3\n",    # non-numeric
        "",              # empty
    ],
)
def test_malformed_csv_raises_with_path(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(DataIOError) as info:
        load_csv(path)
    assert info.value.path == str(path)


def test_missing_csv(tmp_path):
    with pytest.raises(DataIOError):
        load_csv(tmp_path / "nope.csv")


def test_gmm_modes_are_symmetric():
    data = gmm_points(np.random.default_rng(0), modes=2, d=8, spread=0.0, points=10)
    np.testing.assert_array_equal(data.points[0], -data.points[1])
    assert set(np.unique(np.abs(data.points))) == {0.5}


def test_gmm_points_stay_in_unit_cube():
    data = gmm_points(np.random.default_rng(1), modes=3, d=4, spread=2.0, points=50)
    assert data.points.min() >= -1.0 and data.points.max() <= 1.0


def test_plane_points_span_m_dimensions():
    data = plane_points(np.random.default_rng(2), m=2, d=32, points=20)
    assert data.d == 32
    assert np.linalg.matrix_rank(data.points) == 2


def test_corner_points_are_hypercube_vertices():
    data = corner_points(np.random.default_rng(3), d=16, points=5)
    assert set(np.unique(data.points)) <= {-1.0, 1.0}


@pytest.mark.parametrize(
    "call",
    [
        lambda rng: gmm_points(rng, modes=3, points=2),
        lambda rng: gmm_points(rng, spread=-1.0),
        lambda rng: plane_points(rng, m=5, d=3),
        lambda rng: corner_points(rng, d=0),
    ],
)
def test_generator_validation(call):
    with pytest.raises(DomainError):
        call(np.random.default_rng(0))


def test_parse_source():
    assert parse_source("gmm:modes=3, d=64") == ("gmm", {"modes": 3, "d": 64})
    assert parse_source("corners") == ("corners", {})
    assert parse_source("csv:data/points.csv") == ("csv", {"path": "data/points.csv"})
    for bad in ("lattice:d=2", "gmm:colour=red", "gmm:d=two", "csv:"):
        with pytest.raises(DomainError):
            parse_source(bad)


def test_load_dataset_is_reproducible():
    a = load_dataset("gmm:d=4,points=8", np.random.default_rng(11))
    b = load_dataset("gmm:d=4,points=8", np.random.default_rng(11))
    np.testing.assert_array_equal(a.points, b.points)


def test_load_dataset_from_csv(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("0,1\n1,0\n")
    data = load_dataset(f"csv:{path}", np.random.default_rng(0))
    assert data.count == 2
