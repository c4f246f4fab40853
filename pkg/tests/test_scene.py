import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compscene import plyio
from compscene.errors import ContractError, InputFormatError, PointCountError
from compscene.scene import (
    Camera,
    Gaussian3D,
    GaussianObject,
    Scene,
    build_knn,
    covariance_of,
    initial_scales,
    load_object_from_pointcloud,
    make_object,
    orbit_camera,
    quaternion_to_matrix,
    query_gaussian,
    uniform_time_grid,
)
from compscene.trajectory import Trajectory

from conftest import brute_knn


Z90 = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])


def test_covariance_identity():
    g = Gaussian3D(np.zeros(3), np.ones(3))
    assert np.array_equal(covariance_of(g), np.eye(3))


def test_covariance_axis_aligned():
    g = Gaussian3D(np.zeros(3), [2.0, 1.0, 1.0])
    assert np.allclose(covariance_of(g), np.diag([4.0, 1.0, 1.0]), atol=1e-15)


def test_covariance_z_rotation_swaps_axes():
    g = Gaussian3D(np.zeros(3), [2.0, 1.0, 1.0], Z90)
    assert np.allclose(covariance_of(g), np.diag([1.0, 4.0, 1.0]), atol=1e-12)


unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1)


@settings(max_examples=100, deadline=None)
@given(q=unit_quats, s=st.lists(st.floats(1e-3, 10.0), min_size=3, max_size=3))
def test_covariance_spd_with_scale_eigenvalues(q, s):
    q = np.asarray(q) / np.linalg.norm(q)
    cov = covariance_of(Gaussian3D(np.zeros(3), s, q))
    assert np.max(np.abs(cov - cov.T)) <= 1e-12
    np.linalg.cholesky(cov)
    assert np.allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(np.square(s)), rtol=1e-9)


def test_query_examples():
    g = Gaussian3D(np.zeros(3), np.ones(3))
    assert query_gaussian(g, np.zeros(3)) == 1.0
    assert query_gaussian(g, [1.0, 0.0, 0.0]) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert query_gaussian(g, [3.0, 4.0, 0.0]) == pytest.approx(np.exp(-12.5), rel=1e-12)


def test_query_matches_inverse_covariance(rng):
    for _ in range(20):
        q = rng.normal(size=4)
        g = Gaussian3D(rng.normal(size=3), rng.uniform(0.2, 2.0, 3), q / np.linalg.norm(q))
        x = rng.normal(size=3)
        d = x - g.center
        expected = np.exp(-0.5 * d @ np.linalg.solve(covariance_of(g), d))
        assert query_gaussian(g, x) == pytest.approx(expected, rel=1e-10)


def test_query_rigid_invariance(rng):
    q = rng.normal(size=4)
    g = Gaussian3D(rng.normal(size=3), [0.5, 1.0, 1.5], q / np.linalg.norm(q))
    x = rng.normal(size=3)
    r = rng.normal(size=4)
    r /= np.linalg.norm(r)
    rot = quaternion_to_matrix(r)
    shift = rng.normal(size=3)
    # compose quaternions: r * q
    w1, x1, y1, z1 = r
    w2, x2, y2, z2 = g.rotation
    rq = np.array([w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2, w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                   w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2, w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2])
    moved = Gaussian3D(rot @ g.center + shift, g.scale, rq)
    assert query_gaussian(moved, rot @ x + shift) == pytest.approx(query_gaussian(g, x), rel=1e-10)


def test_gaussian_validation():
    with pytest.raises(ContractError):
        Gaussian3D(np.zeros(3), [1.0, 0.0, 1.0])
    with pytest.raises(ContractError):
        Gaussian3D(np.zeros(3), np.ones(3), [1.0, 0.1, 0.0, 0.0])
    g = Gaussian3D(np.zeros(3), np.ones(3), opacity=1.7, color=[-1.0, 0.5, 2.0])
    assert g.opacity == 1.0
    assert np.array_equal(g.color, [0.0, 0.5, 1.0])


def test_knn_matches_brute_force(rng):
    for trial in range(5):
        n = int(rng.integers(10, 200))
        pts = rng.normal(size=(n, 3))
        k = int(rng.integers(1, min(60, n - 1) + 1))
        assert np.array_equal(build_knn(pts, k), brute_knn(pts, k))


def test_knn_ties_by_lower_index():
    # grid points have many equal distances
    g = np.arange(4.0)
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    assert np.array_equal(build_knn(pts, 6), brute_knn(pts, 6))
    dup = np.zeros((5, 3))
    assert np.array_equal(build_knn(dup, 3), brute_knn(dup, 3))


def test_knn_clamped_to_point_count():
    pts = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
    knn = build_knn(pts, 60)
    assert knn.shape == (8, 7)
    assert not np.any(knn == np.arange(8)[:, None])


def test_initial_scales_isotropic():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    s = initial_scales(pts)
    assert s.shape == (4, 3)
    assert np.all(s[:, 0] == s[:, 1])
    # origin's 3 nearest are at distance 1
    assert s[0, 0] == pytest.approx(0.5)


def test_object_invariants():
    obj = make_object(np.random.default_rng(0).normal(size=(30, 3)), np.full((30, 3), 0.3), k=5)
    assert obj.k == 5 and len(obj) == 30
    assert np.all(obj.deformation.weights[-1] == 0)
    with pytest.raises(ContractError):
        GaussianObject(obj.centers, obj.scales, obj.rotations, obj.opacities, obj.colors, obj.deformation,
                       np.tile(np.arange(5), (30, 1)))
    with pytest.raises(ContractError):
        GaussianObject(obj.centers, obj.scales, obj.rotations, obj.opacities, obj.colors, obj.deformation,
                       obj.knn_cache, canonical_heading=[1.0, 1.0, 0.0])
    with pytest.raises(ContractError):
        GaussianObject(obj.centers, obj.scales, obj.rotations, obj.opacities, obj.colors, obj.deformation,
                       obj.knn_cache, object_scale=0.0)


def test_cube_ply_import(tmp_path):
    corners = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
    path = tmp_path / "cube.ply"
    plyio.write_point_cloud(path, corners, np.full((8, 3), 0.5), text=True)
    obj = load_object_from_pointcloud(path, 8)
    assert len(obj) == 8
    assert np.allclose(obj.centers, corners)
    assert obj.knn_cache.shape == (8, 7)


def test_ply_binary_roundtrip_and_subsample(tmp_path):
    rng = np.random.default_rng(3)
    pts, cols = rng.normal(size=(100, 3)), rng.uniform(size=(100, 3))
    path = tmp_path / "cloud.ply"
    plyio.write_point_cloud(path, pts, cols)
    cloud = plyio.read_ply(path)
    assert np.allclose(cloud.positions, pts.astype(np.float32))
    assert np.max(np.abs(cloud.colors - cols)) <= 0.5 / 255 + 1e-12
    obj = load_object_from_pointcloud(path, 40, k=10)
    assert len(obj) == 40
    with pytest.raises(PointCountError):
        load_object_from_pointcloud(path, 101)


def test_ply_errors(tmp_path):
    with pytest.raises(InputFormatError):
        plyio.read_ply(tmp_path / "missing.ply")
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"not a ply file at all")
    with pytest.raises(InputFormatError):
        plyio.read_ply(bad)


def test_gaussian_ply_lossless(tmp_path):
    obj = make_object(np.random.default_rng(1).normal(size=(20, 3)), np.random.default_rng(2).uniform(size=(20, 3)), k=4)
    path = tmp_path / "g.ply"
    plyio.write_gaussians(path, obj.centers, obj.colors, obj.opacities, obj.scales, obj.rotations)
    cloud = plyio.read_ply(path)
    assert np.array_equal(cloud.positions, obj.centers)
    assert np.array_equal(cloud.colors, obj.colors)
    assert np.array_equal(cloud.extra["opacity"], obj.opacities)


def test_scene_validation():
    obj = make_object(np.random.default_rng(0).normal(size=(10, 3)), np.zeros((10, 3)), k=3)
    with pytest.raises(ContractError):
        Scene([obj], [])
    with pytest.raises(ContractError):
        Scene([obj], [Trajectory.stationary()], time_grid=np.array([0.0, 0.7, 0.5, 1.0]))
    grid = uniform_time_grid(16)
    assert grid[0] == 0 and grid[-1] == 1 and np.allclose(np.diff(grid), 1 / 15)


def test_camera_validation():
    with pytest.raises(ContractError):
        Camera([0, 0, 5], [0, 0, 0], [0, 0, 1])  # view axis parallel to up
    with pytest.raises(ContractError):
        Camera([5, 0, 0], [0, 0, 0], near=0.0)
    with pytest.raises(ContractError):
        Camera([5, 0, 0], [0, 0, 0], vertical_fov=np.pi)
    cam = orbit_camera(90.0, 0.0, 6.0)
    assert np.allclose(cam.position, [0.0, 6.0, 0.0])
    assert (cam.image_height, cam.image_width) == (320, 576)
