import json
import math

import numpy as np
import pytest

from denoiser import Dataset, OptimalDenoiser, PerturbedDenoiser
from errors import DataIOError, DomainError
from geometry import (
    denoised_dominance,
    deviation_diagnosis,
    deviation_profile,
    eps_norm_profile,
    gaussian_shell_check,
    length_and_angles,
    likelihood_profile,
    load_geometry_report,
    load_pca_report,
    pca_reconstruct,
    save_json,
    save_node_csv,
    step_cosines,
    stepwise_likelihood,
    summarize,
)
from schedules import polynomial_schedule
from solvers import EULER, SolverSpec, Trajectory, sample


@pytest.fixture
def bent():
    """Three nodes with a right-angle turn in the middle"""
    states = [np.array([2.0, 0.0]), np.array([1.0, 1.0]), np.array([0.0, 0.0])]
    return Trajectory([3.0, 2.0, 1.0], states, [np.zeros(2), np.zeros(2)])


@pytest.fixture
def euler_trajs(gmm64):
    denoiser = OptimalDenoiser(gmm64)
    inits = [80.0 * np.random.default_rng(i).standard_normal(64) for i in range(3)]
    return [sample(SolverSpec(EULER), denoiser, polynomial_schedule(12), x) for x in inits]


def test_deviation_of_bent_path(bent):
    deviation, distance = deviation_profile(bent)
    np.testing.assert_allclose(deviation, [0.0, 1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(distance, [2.0, math.sqrt(2.0), 0.0])


def test_length_and_angles_of_bent_path(bent):
    length, angles = length_and_angles(bent)
    assert length == pytest.approx(2.0 * math.sqrt(2.0))
    assert angles == [pytest.approx(90.0)]
    assert step_cosines(bent) == [pytest.approx(0.0, abs=1e-15)]


def test_straight_path_has_no_deviation(constant_denoiser):
    traj = sample(SolverSpec(EULER), constant_denoiser, polynomial_schedule(8), np.array([30.0, 40.0]))
    deviation, distance = deviation_profile(traj)
    assert max(deviation) <= 1e-12 * distance[0]
    length, angles = length_and_angles(traj)
    assert length == pytest.approx(distance[0], rel=1e-12)
    assert max(angles) < 1e-6
    assert min(step_cosines(traj)) == pytest.approx(1.0)


def test_deviation_needs_a_real_chord():
    short = Trajectory([2.0, 1.0], [np.zeros(2), np.ones(2)])
    with pytest.raises(DomainError):
        deviation_profile(short)
    loop = Trajectory([3.0, 2.0, 1.0], [np.zeros(2), np.ones(2), np.zeros(2)])
    with pytest.raises(DomainError):
        deviation_profile(loop)


def test_deviation_vanishes_at_both_ends(euler_trajs):
    for traj in euler_trajs:
        deviation, distance = deviation_profile(traj)
        assert deviation[0] <= 1e-9 * distance[0]
        assert deviation[-1] == 0.0


def test_pca_reconstruction(euler_trajs):
    k_max = len(euler_trajs[0]) - 2
    report = pca_reconstruct(euler_trajs, k_max)
    errors = np.asarray(report.recon_error)
    assert report.k_values == list(range(1, k_max + 1))
    assert np.all(np.diff(errors) <= 1e-12 * errors[0])
    # k = 1 keeps only the chord, so the error is the RMS deviation
    rms = np.mean([math.sqrt(np.mean(np.square(deviation_profile(t)[0]))) for t in euler_trajs])
    assert errors[0] == pytest.approx(rms, rel=1e-9)
    assert report.explained_variance_ratio[-1] == pytest.approx(1.0, abs=1e-9)
    assert all(0.0 <= r <= 1.0 for r in report.explained_variance_ratio)
    assert report.basis[0].shape == (64, k_max)


def test_explained_ratio_is_one_direction_ahead_of_the_reconstruction(euler_trajs):
    traj = euler_trajs[0]
    k_max = len(traj) - 2
    report = pca_reconstruct([traj], k_max)
    errors = np.asarray(report.recon_error)
    ratios = np.asarray(report.explained_variance_ratio)
    np.testing.assert_allclose(1.0 - ratios[:-1], (errors[1:] / errors[0]) ** 2, atol=1e-9)


def test_pca_validation(euler_trajs):
    with pytest.raises(DomainError):
        pca_reconstruct(euler_trajs, 0)
    with pytest.raises(DomainError):
        pca_reconstruct([], 2)
    with pytest.raises(DomainError):
        pca_reconstruct(euler_trajs, len(euler_trajs[0]))


def test_eps_norms_skip_the_last_node(gmm2):
    traj = sample(SolverSpec(EULER), OptimalDenoiser(gmm2), polynomial_schedule(5), np.array([10.0, 5.0]))
    norms = eps_norm_profile(traj)
    assert len(norms) == 5
    expected = np.linalg.norm((traj.states[0] - traj.denoised[0]) / traj.times[0])
    assert norms[0] == pytest.approx(expected)


def test_likelihood_rises_toward_a_single_point():
    data = Dataset([[0.0, 0.0]])
    states = [np.array([4.0, 3.0]) * s for s in (1.0, 0.5, 0.1)]
    traj = Trajectory([3.0, 2.0, 1.0], states)
    curve, monotone = likelihood_profile(traj, data, (0.5, 2.0))
    assert curve.shape == (3, 2)
    assert monotone
    backwards = Trajectory([3.0, 2.0, 1.0], states[::-1])
    assert not likelihood_profile(backwards, data, (0.5,))[1]
    with pytest.raises(DomainError):
        likelihood_profile(traj, data, (0.0,))


def test_denoised_output_of_single_point_dominates(single_point):
    traj = sample(SolverSpec(EULER), OptimalDenoiser(single_point), polynomial_schedule(4), np.array([20.0, -9.0]))
    assert denoised_dominance(traj, single_point)


def test_euler_gains_likelihood_at_the_step_bandwidth(euler_trajs, gmm64):
    for traj in euler_trajs:
        step_gains, denoised_gains, holds = stepwise_likelihood(traj, gmm64)
        assert holds
        assert len(step_gains) == len(traj) - 1
        assert math.isnan(denoised_gains[-1])
        assert summarize(traj, gmm64).stepwise_monotone


def test_moving_away_from_the_data_loses_likelihood():
    data = Dataset([[0.0, 0.0]])
    states = [np.array([4.0, 3.0]) * s for s in (0.1, 0.5, 1.0)]
    step_gains, _, holds = stepwise_likelihood(Trajectory([3.0, 2.0, 1.0], states), data)
    assert not holds
    assert all(g < 0 for g in step_gains)


def test_summary_and_reports_on_disk(tmp_path, bent, pair):
    report = summarize(bent, pair)
    assert report.max_deviation_ratio == pytest.approx(0.5)
    assert math.isnan(report.eps_norms[-1])
    path = tmp_path / "report.json"
    save_json(report.to_dict(), path)
    assert json.loads(path.read_text())["eps_norms"][-1] is None
    loaded = load_geometry_report(path)
    assert loaded.deviation == report.deviation and math.isnan(loaded.eps_norms[-1])

    save_node_csv(report, tmp_path / "nodes.csv")
    header = (tmp_path / "nodes.csv").read_text().splitlines()[0]
    assert header == "node,t,deviation,distance,eps_norm,step_gain,denoised_gain,logp_h0.1,logp_h1,logp_h10"
    assert math.isnan(loaded.denoised_gains[-1]) and loaded.step_gains == report.step_gains


def test_pca_report_round_trip(tmp_path, euler_trajs):
    report = pca_reconstruct(euler_trajs, 3)
    path = tmp_path / "pca.json"
    save_json(report.to_dict(), path)
    assert load_pca_report(path).recon_error == report.recon_error
    (tmp_path / "other.json").write_text('{"unexpected": 1}')
    with pytest.raises(DataIOError):
        load_pca_report(tmp_path / "other.json")


def test_shell_concentration():
    mean, std = gaussian_shell_check(10_000, 1.0, 200, np.random.default_rng(0))
    assert 99.5 <= mean <= 100.5
    assert 0.5 < std < 1.0
    with pytest.raises(DomainError):
        gaussian_shell_check(10, 1.0, 50, np.random.default_rng(0))


@pytest.mark.parametrize("scale", [0.1, 0.5, 1.0])
def test_diagnosis_ratio_stays_under_the_deviation_scale(gmm2, scale):
    perturbed = PerturbedDenoiser(OptimalDenoiser(gmm2), deviation_scale=scale, rng_seed=3)
    report = deviation_diagnosis(gmm2, perturbed, polynomial_schedule(10), np.array([50.0, -20.0]))
    assert len(report.ratio) == 10
    assert max(report.ratio) <= scale + 1e-12
    assert report.final_distance > 0.0


def test_diagnosis_without_perturbation(gmm2):
    perturbed = PerturbedDenoiser(OptimalDenoiser(gmm2), deviation_scale=0.0)
    report = deviation_diagnosis(gmm2, perturbed, polynomial_schedule(6), np.array([50.0, -20.0]))
    assert report.final_distance == 0.0
    assert max(report.deviation_on_optimal) == 0.0
    with pytest.raises(DomainError):
        deviation_diagnosis(gmm2, PerturbedDenoiser(OptimalDenoiser(gmm2), 1.5), polynomial_schedule(6), np.zeros(2))


def test_planar_path_needs_two_directions():
    rng = np.random.default_rng(11)
    e1, e2 = np.eye(6)[0], np.eye(6)[3]
    coeffs = rng.standard_normal((7, 2))
    states = [a * e1 + b * e2 for a, b in coeffs]
    traj = Trajectory(list(np.linspace(7.0, 1.0, 7)), states)
    report = pca_reconstruct([traj], 3)
    assert report.recon_error[0] > 1e-3
    assert report.recon_error[1] < 1e-9


def test_shell_check_without_noise():
    assert gaussian_shell_check(16, 0.0, 100, np.random.default_rng(0)) == (0.0, 0.0)


def test_eps_norm_toward_the_origin():
    x_init = np.array([30.0, -40.0])
    traj = sample(SolverSpec(EULER), OptimalDenoiser(Dataset([[0.0, 0.0]])), polynomial_schedule(3), x_init)
    assert eps_norm_profile(traj)[0] == pytest.approx(50.0 / 80.0, rel=1e-14)


def test_constant_denoiser_path(constant_denoiser):
    traj = sample(SolverSpec(EULER), constant_denoiser, polynomial_schedule(6), np.array([-12.0, 25.0]))
    length, _ = length_and_angles(traj)
    chord = np.linalg.norm(traj.states[0] - traj.states[-1])
    assert length >= chord * (1.0 - 1e-12)
    assert likelihood_profile(traj, Dataset([[0.25, -0.5]]))[1]


def test_deviation_is_translation_invariant(gmm2):
    offset = np.array([3.0, -2.0])
    x_init = np.array([40.0, 25.0])
    base = sample(SolverSpec(EULER), OptimalDenoiser(gmm2), polynomial_schedule(8), x_init)
    moved = sample(SolverSpec(EULER), OptimalDenoiser(gmm2.translated(offset)), polynomial_schedule(8), x_init + offset)
    np.testing.assert_allclose(moved.states_array() - offset, base.states_array(), rtol=0, atol=1e-10)
    dev_base, dist_base = deviation_profile(base)
    dev_moved, _ = deviation_profile(moved)
    np.testing.assert_allclose(dev_moved, dev_base, rtol=0, atol=1e-10 * dist_base[0])
