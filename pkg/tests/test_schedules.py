import json

import numpy as np
import pytest

from errors import DataIOError, DomainError
from schedules import (
    LOGSNR,
    POLYNOMIAL,
    T_MAX,
    T_MIN,
    UNIFORM,
    TimeSchedule,
    load_schedule,
    logsnr_schedule,
    make_schedule,
    polynomial_schedule,
    save_schedule,
    schedule_table,
    uniform_schedule,
)

# published CIFAR-10 rows, four decimals
PUBLISHED = [
    (UNIFORM, [80.0000, 6.9503, 1.2867, 0.0020]),
    (UNIFORM, [80.0000, 20.9656, 6.9503, 2.8237, 1.2867, 0.5272, 0.0020]),
    (LOGSNR, [80.0000, 5.6569, 0.4000, 0.0283, 0.0020]),
    (LOGSNR, [80.0000, 27.7258, 9.6090, 3.3302, 1.1542, 0.4000, 0.1386, 0.0480, 0.0167, 0.0058, 0.0020]),
    (POLYNOMIAL, [80.0000, 24.4083, 5.8389, 0.9654, 0.0851, 0.0020]),
    (POLYNOMIAL, [80.0000, 39.0167, 17.5278, 7.1005, 2.5152, 0.7434, 0.1698, 0.0261, 0.0020]),
]


@pytest.mark.parametrize("kind, expected", PUBLISHED)
def test_matches_published_rows(kind, expected):
    times = make_schedule(kind, len(expected) - 1).times
    np.testing.assert_allclose(times, expected, rtol=0, atol=5e-5 + 1e-12)


@pytest.mark.parametrize("kind", [UNIFORM, LOGSNR, POLYNOMIAL])
@pytest.mark.parametrize("n_steps", [1, 2, 7, 60])
def test_endpoints_are_pinned(kind, n_steps):
    schedule = make_schedule(kind, n_steps)
    assert schedule.times[0] == T_MAX and schedule.times[-1] == T_MIN
    assert schedule.n_steps == n_steps and len(schedule) == n_steps + 1
    assert all(a > b for a, b in zip(schedule.times[:-1], schedule.times[1:]))
    assert schedule.kind == kind


def test_logsnr_is_geometric():
    ratios = np.diff(np.log(logsnr_schedule(9).times))
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)


def test_polynomial_with_unit_rho_is_linear():
    times = polynomial_schedule(4, t_min=1.0, t_max=5.0, rho=1.0).times
    np.testing.assert_allclose(times, [5.0, 4.0, 3.0, 2.0, 1.0], rtol=1e-14)


def test_uniform_records_vp_constants():
    params = uniform_schedule(5, eps_s=1e-3).params
    assert params["beta_d"] > 0
    assert set(params) >= {"eps_s", "beta_d", "beta_min"}


def test_uniform_times_follow_the_vp_constants():
    schedule = uniform_schedule(6, eps_s=1e-3)
    p = schedule.params
    tau = np.linspace(1.0, p["eps_s"], 7)
    expected = np.sqrt(np.expm1(0.5 * p["beta_d"] * tau ** 2 + p["beta_min"] * tau))
    np.testing.assert_allclose(schedule.times, expected, rtol=1e-9)


def test_large_rho_front_loads_the_big_steps():
    assert polynomial_schedule(5, rho=50.0).times[1] < polynomial_schedule(5, rho=7.0).times[1]


@pytest.mark.parametrize(
    "call",
    [
        lambda: polynomial_schedule(0),
        lambda: polynomial_schedule(2.5),
        lambda: polynomial_schedule(3, t_min=80.0, t_max=1.0),
        lambda: polynomial_schedule(3, t_min=0.0),
        lambda: polynomial_schedule(3, rho=0.0),
        lambda: uniform_schedule(3, eps_s=1.0),
        lambda: make_schedule("cosine", 3),
    ],
)
def test_generator_validation(call):
    with pytest.raises(DomainError):
        call()


def test_time_schedule_validation():
    with pytest.raises(DomainError):
        TimeSchedule([1.0])
    with pytest.raises(DomainError):
        TimeSchedule([1.0, 2.0])
    with pytest.raises(DomainError):
        TimeSchedule([1.0, 1.0])
    with pytest.raises(DomainError):
        TimeSchedule([1.0, 0.0])
    with pytest.raises(DomainError):
        TimeSchedule([2.0, 1.0], kind="zigzag")


def test_schedule_table_layout():
    table = schedule_table(LOGSNR, [3, 4])
    assert list(table["NFE"]) == [3, 4]
    assert list(table.columns) == ["NFE", "t0", "t1", "t2", "t3", "t4"]
    assert np.isnan(table.loc[0, "t4"])
    assert table.loc[1, "t2"] == 0.4


def test_save_and_load(tmp_path):
    schedule = uniform_schedule(6)
    path = tmp_path / "schedule.json"
    save_schedule(schedule, path, extra={"note": "test"})
    assert json.loads(path.read_text())["note"] == "test"
    assert load_schedule(path) == schedule


def test_load_errors(tmp_path):
    with pytest.raises(DataIOError):
        load_schedule(tmp_path / "missing.json")
    garbled = tmp_path / "garbled.json"
    garbled.write_text("{not json")
    with pytest.raises(DataIOError):
        load_schedule(garbled)
    no_times = tmp_path / "no_times.json"
    no_times.write_text('{"kind": "explicit"}')
    with pytest.raises(DataIOError):
        load_schedule(no_times)
