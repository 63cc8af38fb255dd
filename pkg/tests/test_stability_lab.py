import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posereg.errors import InvalidConfig, SingularInformation
from posereg.residuals import RobustBetas
from posereg.stability_lab import (SQUARE_POSE, a8_closed_form, a8_csv, a8_scan, covariance_csv, effective_weights,
                                   implicit_derivative_check, jacobian_stacks, make_square_model,
                                   monte_carlo_covariance, predict_covariance, square_closed_forms, square_csv,
                                   square_example, square_scene, variance_reduction_check)
from posereg.synth import GenConfig, NoiseModel, generate_scene

from _util import random_scene


def _clean(model, seed):
    return random_scene(model, seed)


# --- predicted covariance -----------------------------------------------------------

def test_zero_noise_gives_zero_covariance(model):
    s = _clean(model, 0)
    rep = predict_covariance(model, s.gt_pose, s, 0.3, 0.2, NoiseModel())
    assert np.array_equal(rep.predicted_cov, np.zeros((6, 6)))


def test_keypoints_only_reduces_to_direct_formula(model):
    s = _clean(model, 1)
    sigma = 2e-3
    rep = predict_covariance(model, s.gt_pose, s, 0.0, 0.0, NoiseModel(sigma, 0.05, 0.05))
    want = sigma ** 2 * np.linalg.inv(rep.j_k @ rep.j_k.T)
    assert np.max(np.abs(rep.predicted_cov - want)) <= 1e-12 * np.max(np.abs(want))


def test_keypoints_only_scales_with_variance(model):
    s = _clean(model, 2)
    a = predict_covariance(model, s.gt_pose, s, 0.0, 0.0, NoiseModel(1e-3)).predicted_cov
    b = predict_covariance(model, s.gt_pose, s, 0.0, 0.0, NoiseModel(3e-3)).predicted_cov
    assert np.allclose(b, 9 * a, rtol=1e-10, atol=0)


def test_symmetry_stack_has_no_translation_rows(model):
    s = _clean(model, 3)
    rep = predict_covariance(model, s.gt_pose, s, 0.1, 0.1, NoiseModel.uniform(1e-3))
    assert rep.j_s.shape == (6, s.n_sym) and np.all(rep.j_s[3:] == 0)
    assert rep.j_k.shape == (6, 16) and rep.j_e.shape == (6, 56)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 5), st.floats(0, 5), st.floats(1e-4, 1e-2), st.floats(0, 1e-2))
def test_predicted_covariance_is_psd(seed, be, bs, sk, se):
    from posereg.synth import make_procedural_model
    model = make_procedural_model("box")
    s = _clean(model, seed)
    rep = predict_covariance(model, s.gt_pose, s, be, bs, NoiseModel(sk, se, se))
    C = rep.predicted_cov
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C)[0] >= -1e-12 * max(1.0, np.abs(C).max())
    assert np.linalg.eigvalsh(rep.a_mat)[0] >= -1e-12 * np.abs(rep.a_mat).max()


def test_singular_information_reports_null_directions():
    from posereg.geometry import ObjectModel, Pose, SymmetryPlane
    from posereg.observations import Scene
    # two keypoints give four residual rows: at least two pose directions are free
    m = ObjectModel.build(np.array([[0.1, 0, 0], [-0.1, 0.05, 0]]),
                          SymmetryPlane(np.array([1.0, 0, 0]), np.zeros(3)), np.zeros((0, 3)))
    gt = Pose(np.eye(3), np.array([0, 0, 1.0]))
    kp = m.keypoints[:, :2] / (m.keypoints[:, 2:] + 1.0)
    s = Scene(kp, kp[[1]] - kp[[0]], np.zeros((0, 2)), np.zeros((0, 2)), gt_pose=gt)
    with pytest.raises(SingularInformation) as err:
        predict_covariance(m, gt, s, 0.0, 0.0, NoiseModel(1e-3))
    null = np.atleast_2d(err.value.null_directions)
    assert null.shape[1] == 6 and len(null) >= 2
    j_k = jacobian_stacks(m, gt, s)[0]
    for v in null:
        assert np.linalg.norm(v @ j_k) <= 1e-6 * np.linalg.norm(j_k)


def test_negative_weights_rejected(model):
    s = _clean(model, 0)
    with pytest.raises(InvalidConfig):
        predict_covariance(model, s.gt_pose, s, -1.0, 0.0, NoiseModel())


# --- Monte Carlo ---------------------------------------------------------------------------

def test_monte_carlo_zero_noise(model):
    s = _clean(model, 5)
    cov = monte_carlo_covariance(model, s.gt_pose, NoiseModel(), 100, base_scene=s)
    assert np.max(np.abs(cov)) <= 1e-16


def test_monte_carlo_is_deterministic(model):
    s = _clean(model, 6)
    a = monte_carlo_covariance(model, s.gt_pose, NoiseModel.uniform(1e-3), 100, seed=3, base_scene=s)
    b = monte_carlo_covariance(model, s.gt_pose, NoiseModel.uniform(1e-3), 100, seed=3, base_scene=s)
    assert np.array_equal(a, b)


def test_monte_carlo_needs_trials(model):
    s = _clean(model, 6)
    with pytest.raises(InvalidConfig):
        monte_carlo_covariance(model, s.gt_pose, NoiseModel(1e-3), 99, base_scene=s)


def test_monte_carlo_matches_prediction(model):
    s = _clean(model, 7)
    betas = RobustBetas.quadratic()
    noise = NoiseModel.uniform(1e-3)
    emp = monte_carlo_covariance(model, s.gt_pose, noise, 2000, seed=1, base_scene=s, betas=betas)
    pred = predict_covariance(model, s.gt_pose, s, *effective_weights(model, s, betas), noise).predicted_cov
    ratio = np.diag(emp) / np.diag(pred)
    assert np.all(np.abs(ratio - 1) <= 0.25), ratio


def test_doubling_sigma_quadruples_covariance(model):
    s = _clean(model, 8)
    a = monte_carlo_covariance(model, s.gt_pose, NoiseModel(1e-3), 2000, seed=2, base_scene=s)
    b = monte_carlo_covariance(model, s.gt_pose, NoiseModel(2e-3), 2000, seed=2, base_scene=s)
    ratio = np.diag(b) / np.diag(a)
    assert np.all(np.abs(ratio / 4 - 1) <= 0.15), ratio


# --- square example ------------------------------------------------------------------------

def test_square_example_values():
    ex = square_example(0.5)
    assert ex.h_k[0, 0] == pytest.approx(1.453125, abs=1e-9)
    assert ex.h_k[1, 3] == pytest.approx(1.1875, abs=1e-9)
    assert ex.h_k[2, 2] == pytest.approx(0.375, abs=1e-9)
    assert ex.h_e[0, 0] == pytest.approx(0.098214286, abs=1e-9)
    assert ex.h_e[2, 2] == pytest.approx(0.857142857, abs=1e-9)
    off = ex.h_e - np.diag(np.diag(ex.h_e))
    assert np.max(np.abs(off)) <= 1e-9 and np.max(np.abs(ex.h_e[3:5])) <= 1e-9


@pytest.mark.parametrize("delta", [0.25, 0.5, 1.0])
def test_square_matches_closed_forms(delta):
    ex = square_example(delta, 100)
    h_k, h_e = square_closed_forms(delta)
    assert np.max(np.abs(ex.h_k - h_k)) <= 1e-9
    assert np.max(np.abs(ex.h_e - h_e)) <= 1e-9


def test_square_symmetry_eigenvalues():
    ex = square_example(0.5)
    lam = ex.h_s_nonzero_eigenvalues
    assert len(lam) == 2
    assert np.allclose(lam, [4 / 9 * 0.5 ** 4, 4 / 3 * 0.5 ** 2], atol=1e-4)


def test_square_symmetry_component_ordering():
    # the assembled H_S is diagonal, with the quartic term on the second
    # rotation component and the quadratic one on the third
    ex = square_example(0.5)
    assert np.max(np.abs(ex.h_s - np.diag(np.diag(ex.h_s)))) <= 1e-12
    assert ex.h_s[1, 1] == pytest.approx(4 / 9 * 0.5 ** 4, abs=1e-4)
    assert ex.h_s[2, 2] == pytest.approx(4 / 3 * 0.5 ** 2, abs=1e-4)
    assert ex.h_s[0, 0] == 0.0


def test_square_example_validation():
    with pytest.raises(InvalidConfig):
        square_example(0.0)
    with pytest.raises(InvalidConfig):
        square_example(0.5, 50)


def test_square_csv_parses():
    rows = list(csv.DictReader(io.StringIO(square_csv(square_example(0.5, 100)))))
    assert len(rows) == 108
    assert {r["matrix"] for r in rows} == {"H_K", "H_E", "H_S"}
    r = next(r for r in rows if r["matrix"] == "H_K" and r["row"] == "0" and r["col"] == "0")
    assert float(r["value"]) == pytest.approx(1.453125, abs=1e-12)


# --- a8 --------------------------------------------------------------------------------------

def test_a8_minimizer_quarter():
    grid = np.logspace(np.log10(0.025), np.log10(2.5), 101)
    scan = a8_scan(0.5, 0.01, 0.02, grid)
    best, values = scan
    step = np.diff(np.log(grid))[0]
    assert abs(np.log(best) - np.log(0.25)) <= step
    assert values.shape == grid.shape


def test_a8_equal_noise_minimizer_is_one():
    grid = np.logspace(-1, 1, 101)
    assert a8_scan(0.5, 0.01, 0.01, grid).best_closed == pytest.approx(1.0, abs=1e-12)


def test_a8_covariance_agrees_with_closed_form():
    grid = np.logspace(-2, 1, 101)
    scan = a8_scan(0.5, 0.01, 0.02, grid)
    assert scan.best_cov == scan.best_closed
    # the covariance sums over the 8 keypoints and 28 edges instead of averaging
    hk, he = 8 * 1.5 * 0.25, 28 * 24 / 7 * 0.25
    raw = (1e-4 * hk + grid ** 2 * 4e-4 * he) / (hk + grid * he) ** 2
    assert np.allclose(scan.a8_cov, raw, rtol=1e-9)


def test_a8_closed_form_oracle():
    # hand substitution at beta_e = 0: variance sigma_k^2 / (1.5 delta^2)
    assert a8_closed_form(0.5, 0.01, 0.02, 0.0) == pytest.approx(1e-4 / 0.375, rel=1e-14)


def test_a8_csv_parses():
    grid = np.logspace(-1, 0, 11)
    rows = list(csv.reader(io.StringIO(a8_csv(a8_scan(0.5, 0.01, 0.02, grid)))))
    assert rows[0] == ["beta_e", "a8_closed", "a8_covariance"] and len(rows) == 12
    assert float(rows[1][0]) == grid[0]


def test_covariance_csv_parses(model):
    s = _clean(model, 0)
    C = predict_covariance(model, s.gt_pose, s, 0.1, 0.1, NoiseModel.uniform(1e-3)).predicted_cov
    rows = list(csv.DictReader(io.StringIO(covariance_csv(C, 2 * C))))
    assert [float(r["predicted"]) for r in rows] == np.diag(C).tolist()
    assert [float(r["empirical"]) for r in rows] == (2 * np.diag(C)).tolist()


# --- variance reduction ----------------------------------------------------------------------

def test_edges_reduce_variance_on_square_poses():
    from posereg.geometry import Pose, exp_so3
    model = make_square_model(0.5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        pose = Pose(exp_so3(0.3 * rng.normal(size=3)), np.array([*rng.uniform(-0.2, 0.2, 2), rng.uniform(2, 4)]))
        scene = generate_scene(model, pose, GenConfig(n_sym_corrs=0))
        rep = variance_reduction_check(model, pose, NoiseModel(1e-3, 1e-3, 0.0), scene=scene)
        assert rep.independent and rep.reduces
        assert rep.derivative_analytic < 0
        assert rep.derivative_fd == pytest.approx(rep.derivative_analytic, rel=1e-3)


def test_edges_reduce_variance_on_random_scenes(model):
    for seed in range(20):
        s = random_scene(model, seed, n_sym=0)
        rep = variance_reduction_check(model, s.gt_pose, NoiseModel(1e-3, 2e-3, 0.0), scene=s)
        assert rep.reduces and rep.derivative_analytic < 0


def test_correlated_noise_is_reported_only(model):
    s = random_scene(model, 0, n_sym=0)
    # edge noise copies the keypoint noise difference: strongly correlated
    cross = np.zeros((16, 56))
    for e, (a, b) in enumerate(model.edges):
        cross[2 * b:2 * b + 2, 2 * e:2 * e + 2] += 1e-6 * np.eye(2)
        cross[2 * a:2 * a + 2, 2 * e:2 * e + 2] -= 1e-6 * np.eye(2)
    rep = variance_reduction_check(model, s.gt_pose, NoiseModel(1e-3, 1e-3, 0.0), scene=s, cross_ke=cross)
    assert not rep.independent
    assert np.isfinite(rep.derivative_fd) and np.isfinite(rep.derivative_analytic)


def test_very_noisy_edges_hurt(model):
    s = random_scene(model, 1, n_sym=0)
    base = predict_covariance(model, s.gt_pose, s, 0.0, 0.0, NoiseModel(1e-3, 1.0, 0.0)).predicted_cov
    with_edges = predict_covariance(model, s.gt_pose, s, 0.01, 0.0, NoiseModel(1e-3, 1.0, 0.0)).predicted_cov
    assert np.trace(with_edges) > np.trace(base)


# --- implicit derivative ----------------------------------------------------------------------

def _direction_size(s):
    return 2 * (s.n_keypoints + s.n_edges + s.n_sym)


def test_implicit_derivative_single_keypoint(model):
    s = random_scene(model, 9)
    d = np.zeros(_direction_size(s))
    d[0] = 1.0
    rep = implicit_derivative_check(model, s.gt_pose, d, scene=s)
    assert rep.relative_error <= 1e-3
    assert np.linalg.norm(rep.analytic) > 0


def test_implicit_derivative_random_direction(model):
    s = random_scene(model, 10)
    d = np.random.default_rng(0).normal(size=_direction_size(s))
    assert implicit_derivative_check(model, s.gt_pose, d, scene=s).relative_error <= 1e-3


def test_null_space_direction_leaves_pose(model):
    s = random_scene(model, 11)
    betas = RobustBetas()
    be, bs = effective_weights(model, s, betas)
    j_k, j_e, j_s, d_k, d_e, d_s = jacobian_stacks(model, s.gt_pose, s)
    sym = np.zeros((6, 2 * s.n_sym))
    sym[:, 0::2] = bs * j_s * d_s[:, 0]
    sym[:, 1::2] = bs * j_s * d_s[:, 1]
    B = np.hstack([j_k @ d_k, be * (j_e @ d_e), sym])
    _, _, vt = np.linalg.svd(B)
    d = vt[-1]
    assert np.linalg.norm(B @ d) <= 1e-12
    # a 1e-5 step keeps the re-solve above the refinement's convergence floor
    rep = implicit_derivative_check(model, s.gt_pose, d, scene=s, betas=betas, step=1e-5)
    assert np.linalg.norm(rep.analytic) <= 1e-8
    assert np.linalg.norm(rep.numeric) <= 1e-8


def test_symmetry_perturbation_has_no_translation_forcing(model):
    s = random_scene(model, 12)
    j_s = jacobian_stacks(model, s.gt_pose, s)[2]
    assert np.all(j_s[3:] == 0.0)
    d = np.zeros(_direction_size(s))
    d[2 * (s.n_keypoints + s.n_edges)] = 1.0
    rep = implicit_derivative_check(model, s.gt_pose, d, scene=s)
    assert rep.relative_error <= 1e-3


def test_implicit_direction_length_checked(model):
    s = random_scene(model, 0)
    with pytest.raises(InvalidConfig):
        implicit_derivative_check(model, s.gt_pose, np.zeros(3), scene=s)


def test_square_scene_is_consistent():
    model, scene = square_scene(0.5, 100)
    assert scene.n_sym == 10_000
    assert np.allclose(scene.keypoints, model.keypoints[:, :2])
    assert SQUARE_POSE.t[2] == 1.0
