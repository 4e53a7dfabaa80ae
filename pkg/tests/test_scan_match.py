import json
import math

import numpy as np
import pytest

from shadowgrid.geometry import RigidTransform, apply_transform, invert, rotation_from_euler
from shadowgrid.harness import desk_config, sensor_fov, simulate_pair
from shadowgrid.scan_match import (
    CartesianGrid,
    DivergenceError,
    InsufficientPointsError,
    InsufficientVoxelsError,
    MatchConfig,
    SolutionReport,
    cartesian_grid_prepare,
    cartesian_model,
    estimate_ground_plane,
    grouped_stats,
    match,
    predicted_sigma,
    remove_ground_plane,
    spherical_model,
    transformed_mean_jacobian,
    voxel_stats,
)
from shadowgrid.sim import (
    CYLINDER_LABEL_BASE,
    GROUND_LABEL,
    FlatGround,
    LidarModel,
    Scene,
    Wall,
    build_offroad_scene,
    build_roadway_scene,
    raycast_scan,
)


def test_two_point_stats():
    s = voxel_stats([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    np.testing.assert_array_equal(s.mean, [1, 0, 0])
    np.testing.assert_array_equal(s.covariance, np.diag([2.0, 0.0, 0.0]))


def test_repeated_point_has_zero_covariance():
    s = voxel_stats(np.tile([1.5, -2.0, 3.0], (7, 1)))
    assert s.count == 7
    np.testing.assert_array_equal(s.covariance, np.zeros((3, 3)))


def test_sample_covariance_converges(rng):
    s = voxel_stats(rng.normal(0.0, 0.2, (10_000, 3)))
    np.testing.assert_allclose(np.diag(s.covariance), 0.04, rtol=0.05)
    assert np.abs(s.covariance - np.diag(np.diag(s.covariance))).max() < 0.002
    assert np.array_equal(s.covariance, s.covariance.T)


def test_single_point_is_insufficient():
    with pytest.raises(InsufficientPointsError):
        voxel_stats([[1.0, 2.0, 3.0]])


def test_grouped_stats_match_per_voxel_stats(rng):
    pts = rng.normal(size=(500, 3))
    slots = rng.integers(-1, 6, 500)
    counts, means, covs = grouped_stats(pts, slots, 6)
    for k in range(6):
        ref = voxel_stats(pts[slots == k])
        assert counts[k] == ref.count
        np.testing.assert_allclose(means[k], ref.mean, atol=1e-12)
        np.testing.assert_allclose(covs[k], ref.covariance, atol=1e-12)


def test_jacobian_matches_central_differences(rng):
    h = 1e-6
    for _ in range(100):
        state = np.concatenate([rng.uniform(-2, 2, 3), rng.uniform(-0.5, 0.5, 3)])
        m = rng.uniform(-30, 30, (4, 3))

        def f(s):
            return m @ rotation_from_euler(*s[3:]).T - s[:3]

        J = transformed_mean_jacobian(state, m)
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            fd = (f(state + e) - f(state - e)) / (2 * h)
            scale = np.maximum(np.abs(fd), 1.0)
            assert np.all(np.abs(J[:, :, k] - fd) / scale < 1e-5)


def test_jacobian_sign_follows_subtracted_translation():
    J = transformed_mean_jacobian(np.zeros(6), np.array([[1.0, 0.0, 0.0]]))
    np.testing.assert_array_equal(J[0, :, :3], -np.eye(3))


def test_predicted_sigma_of_diagonal_covariance():
    rep = SolutionReport(RigidTransform(), np.zeros(6), np.eye(6) * 1e-6, 1, True, 10)
    np.testing.assert_allclose(predicted_sigma(rep), 1e-3)


def test_predicted_sigma_permutes_with_state(rng):
    A = rng.normal(size=(6, 6))
    cov = A @ A.T
    perm = rng.permutation(6)
    rep = SolutionReport(RigidTransform(), np.zeros(6), cov, 1, True, 10)
    rep_p = SolutionReport(RigidTransform(), np.zeros(6), cov[np.ix_(perm, perm)], 1, True, 10)
    np.testing.assert_allclose(predicted_sigma(rep_p), predicted_sigma(rep)[perm])


def test_match_config_validation():
    with pytest.raises(ValueError):
        MatchConfig(max_iterations=0)
    with pytest.raises(ValueError):
        MatchConfig(divergence_radius=-1.0)


@pytest.fixture(scope="module")
def roadway_pair():
    cfg = desk_config()
    A, B, truth, scene = simulate_pair(cfg, 10, 0)
    return cfg, A, B, truth, scene


def test_self_match_converges_immediately(roadway_pair):
    cfg, A, *_ = roadway_pair
    rep = match(spherical_model(A, cfg.grid_config()), A)
    assert rep.converged and rep.iterations <= 2
    assert np.abs(rep.state).max() < 1e-6


def test_roadway_pair_recovers_motion(roadway_pair):
    cfg, A, B, truth, _ = roadway_pair
    rep = match(spherical_model(A, cfg.grid_config(), sensor_fov(cfg.lidar)), B)
    assert rep.converged
    err = rep.state - truth.state()
    sig = predicted_sigma(rep)
    assert np.all(np.abs(err) < 5 * sig)
    cov = rep.predicted_covariance
    assert np.array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > 0
    # along-track information comes only from the columns
    assert sig[0] > 3 * sig[1]


def test_report_serialization(roadway_pair):
    cfg, A, B, *_ = roadway_pair
    rep = match(spherical_model(A, cfg.grid_config()), B)
    d = json.loads(rep.to_json())
    assert set(d) == {"state", "predicted_sigma", "iterations", "converged", "voxels_used"}
    assert d["state"]["x"] == float(rep.state[0])
    assert d["predicted_sigma"]["psi"] == float(predicted_sigma(rep)[5])


def test_too_few_voxels():
    pts = np.random.default_rng(1).normal(size=(200, 3)) + [10, 0, 0]
    with pytest.raises(InsufficientVoxelsError):
        match(cartesian_model(pts, 3.0), pts)


def test_divergence_guard(roadway_pair):
    cfg, A, B, *_ = roadway_pair
    far = RigidTransform.from_state([6.0, 0, 0, 0, 0, 0])
    with pytest.raises(DivergenceError):
        match(cartesian_model(A, 3.0), B, far, MatchConfig(divergence_radius=5.0))


def test_fov_validation(roadway_pair):
    cfg, A, *_ = roadway_pair
    with pytest.raises(ValueError):
        spherical_model(A, cfg.grid_config(), fov=(0.1, -0.1))


def box_room():
    g = -1.8
    w = (Wall(-12, 9, 14, 9, g, 5), Wall(-12, -7, 14, -7, g, 5),
         Wall(14, -7, 14, 9, g, 5), Wall(-12, 9, -12, -7, g, 5))
    return Scene(FlatGround(g), w, kind="box_room")


@pytest.mark.parametrize("lidar", [LidarModel.desk(range_noise_sigma=0.0), LidarModel.hdl64(range_noise_sigma=0.0)],
                         ids=["desk", "hdl64"])
def test_noise_free_planar_room_from_identity(lidar):
    scene = box_room()
    p1 = RigidTransform.from_pose([0.0, 0.0, 0.0])
    p2 = RigidTransform.from_pose([0.5, 0.0, 0.0])
    A = raycast_scan(scene, lidar, p1)
    B = raycast_scan(scene, lidar, p2)
    grid = desk_config(lidar=lidar).grid_config()
    rep = match(spherical_model(A, grid, sensor_fov(lidar)), B)
    assert rep.converged
    np.testing.assert_allclose(rep.state, [-0.5, 0, 0, 0, 0, 0], atol=1e-3)


def _noise_free_errors(scene_kind):
    cfg = desk_config(scene_kind, lidar=LidarModel.desk(range_noise_sigma=0.0), init="truth")
    out = []
    for loc in (0, 9, 19):
        A, B, truth, _ = simulate_pair(cfg, loc)
        rep = match(spherical_model(A, cfg.grid_config(), sensor_fov(cfg.lidar)), B, truth)
        out.append(rep.state - truth.state())
    return np.array(out)


@pytest.mark.xfail(strict=True, raises=AssertionError, reason="curved columns and terrain are resampled differently from each pose; "
                                        "the residual bias is millimetres, above the 1 mm / 0.1 mrad bound")
@pytest.mark.parametrize("scene_kind", ["roadway", "offroad"])
def test_noise_free_fixture_scenes_within_tolerance(scene_kind):
    err = _noise_free_errors(scene_kind)
    assert np.abs(err[:, :3]).max() < 1e-3
    assert np.abs(err[:, 3:]).max() < 1e-4


@pytest.mark.parametrize("scene_kind", ["roadway", "offroad"])
def test_noise_free_fixture_scenes_bias_is_small(scene_kind):
    err = _noise_free_errors(scene_kind)
    assert np.abs(err[:, :3]).max() < 2e-2
    assert np.abs(err[:, 3:]).max() < 1e-3


def test_cartesian_voxel_index():
    g = CartesianGrid.from_points(np.array([[0.0, 0.0, 0.0]]), 3.0)
    np.testing.assert_array_equal(g.voxel_index(np.array([[4.1, -0.2, 0.3]])), [[1, -1, 0]])


def test_plane_bisects_cartesian_voxels(rng):
    pts = np.column_stack([np.full(400, 1.5), rng.uniform(0, 2.9, 400), rng.uniform(0, 2.9, 400)])
    model = cartesian_model(pts, 3.0)
    assert len(model) == 1
    np.testing.assert_allclose(model.means[0, 0], 1.5)
    assert np.all(model.grid.voxel_index(pts) == 0)


def test_cartesian_prepare_bins_secondary_on_primary_grid(roadway_pair):
    _, A, B, *_ = roadway_pair
    model, (n_s, mu_s, cov_s) = cartesian_grid_prepare(A, B, 3.0, (0.0, 0.0, 0.0))
    assert n_s.shape == (len(model),)
    assert n_s.sum() <= len(B)


def test_cartesian_density_falls_with_range():
    lidar = LidarModel.desk()
    pts, lab = raycast_scan(build_roadway_scene(), lidar, RigidTransform(), seed=0, with_labels=True)
    model = cartesian_model(pts, 3.0)
    idx = np.floor(pts / 3.0).astype(int)
    centres = (np.unique(idx, axis=0) + 0.5) * 3.0
    slots = model.grid.locate(centres)
    rng_ = np.hypot(centres[:, 0], centres[:, 1])
    near = model.counts[slots[rng_ < 6]].max()
    far = model.counts[slots[(rng_ > 55) & (rng_ < 65)]]
    assert far.size and near >= 50 * far.max()


def test_ground_removal_flat():
    lidar = LidarModel.desk()
    scene = build_roadway_scene(mount_height=1.8)
    pts, lab = raycast_scan(scene, lidar, RigidTransform(), seed=1, with_labels=True)
    kept = remove_ground_plane(pts, 0.3, -1.8)
    assert np.all(kept[:, 2] + 1.8 >= 0.3)
    # surfaces standing on the ground keep every point above the tolerance
    mask = (lab != GROUND_LABEL) & (pts[:, 2] + 1.8 >= 0.3)
    assert len(kept) == np.count_nonzero(mask)
    assert np.count_nonzero(lab >= CYLINDER_LABEL_BASE) > 0


def test_ground_plane_estimate_on_flat_scene():
    pts = raycast_scan(build_roadway_scene(), LidarModel.desk(range_noise_sigma=0.0), RigidTransform())
    h = estimate_ground_plane(pts)
    assert abs(h(3.0, -2.0) + 1.8) < 1e-6
    assert len(remove_ground_plane(pts, 0.3)) == len(remove_ground_plane(pts, 0.3, -1.8))


def test_ground_removal_weakens_vertical_information(roadway_pair):
    cfg, A, B, truth, _ = roadway_pair
    full = match(cartesian_model(A, 3.0), B, truth)
    A2, B2 = remove_ground_plane(A, 0.3, -1.8), remove_ground_plane(B, 0.3, -1.8)
    cut = match(cartesian_model(A2, 3.0), B2, truth)
    s_full, s_cut = predicted_sigma(full), predicted_sigma(cut)
    assert np.all(s_cut[[2, 3, 4]] > s_full[[2, 3, 4]])
