import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compscene.errors import ContractError
from compscene.orientation import (
    CANONICAL_HEADING,
    PlacementSequence,
    heading_at,
    place_object,
    placement_sequence,
    rotation_between,
    skew,
)
from compscene.scene import make_object
from compscene.trajectory import Trajectory


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def check_rotation(r, a, b):
    assert np.linalg.norm(r @ a - b) < 1e-9
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_skew_is_cross_product(rng):
    a, b = rng.normal(size=(2, 3))
    assert np.allclose(skew(a) @ b, np.cross(a, b), atol=1e-15)


def test_identity_case():
    a = unit([0.3, -0.4, 0.5])
    assert np.array_equal(rotation_between(a, a), np.eye(3))


def test_quarter_turn_example():
    r = rotation_between([1.0, 0, 0], [0, 1.0, 0])
    assert np.allclose(r, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_antipodal_axis_rule():
    r = rotation_between([1.0, 0, 0], [-1.0, 0, 0])
    check_rotation(r, np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]))
    # pi about +z
    assert np.allclose(r, np.diag([-1.0, -1.0, 1.0]), atol=1e-15)
    # along z the axis falls back to +y
    r = rotation_between([0, 0, 1.0], [0, 0, -1.0])
    assert np.allclose(r, np.diag([-1.0, 1.0, -1.0]), atol=1e-15)


def test_rejects_non_unit():
    with pytest.raises(ContractError):
        rotation_between([2.0, 0, 0], [0, 1.0, 0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_random_pairs(v):
    a, b = np.asarray(v[:3]), np.asarray(v[3:])
    if min(np.linalg.norm(a), np.linalg.norm(b)) < 1e-3:
        return
    a, b = unit(a), unit(b)
    check_rotation(rotation_between(a, b), a, b)


@pytest.mark.parametrize("sign", [1.0, -1.0])
@pytest.mark.parametrize("eps", [1e-4, 1e-7, 1e-10, 1e-13])
def test_nearly_aligned_pairs(rng, sign, eps):
    for _ in range(50):
        a = unit(rng.normal(size=3))
        b = unit(sign * a + rng.normal(scale=eps, size=3))
        check_rotation(rotation_between(a, b), a, b)


def test_exact_antipodal_pairs(rng):
    for _ in range(10):
        a = unit(rng.normal(size=3))
        check_rotation(rotation_between(a, -a), a, -a)


def test_heading_examples():
    ts = np.linspace(0, 1, 16)
    line = Trajectory.constant_velocity((0, 0, 0), (2.0, 0, 0))
    for i in range(16):
        assert np.allclose(heading_at(line, i, ts), [1.0, 0, 0], atol=1e-15)
    proj = Trajectory.projectile((0, 0, 0), (1.0, 0, 1.0), (0, 0, -2.0))
    small = np.linspace(0, 1e-6, 3)
    assert np.allclose(heading_at(proj, 0, small), unit([1.0, 0, 1.0]), atol=1e-6)
    still = Trajectory.stationary((1.0, 2.0, 3.0))
    assert np.array_equal(heading_at(still, 5, ts), CANONICAL_HEADING)
    with pytest.raises(ContractError):
        heading_at(line, 16, ts)


def test_heading_falls_back_to_previous_segment():
    # moves until t = 0.5, then rests at the apex of a parabola in x
    traj = Trajectory.projectile((0, 0, 0), (1.0, 0, 0), (-2.0, 0, 0))
    ts = np.array([0.0, 0.25, 0.5, 0.5 + 1e-15, 1.0])
    h_rest = heading_at(traj, 2, ts[:4])
    assert np.allclose(h_rest, heading_at(traj, 1, ts[:4]))
    # the last sample reuses the previous segment
    assert np.array_equal(heading_at(traj, 4, ts), heading_at(traj, 3, ts))


def cloud(seed=0, n=30):
    rng = np.random.default_rng(seed)
    return make_object(rng.normal(size=(n, 3)), np.full((n, 3), 0.5), k=4)


def test_place_identity():
    obj = cloud()
    ts = np.linspace(0, 1, 16)
    placed = place_object(obj, Trajectory.stationary(), 0.4, ts)
    assert np.allclose(placed, obj.centers, atol=1e-12)


def test_place_scaled_about_centroid():
    obj = cloud()
    obj.object_scale = 2.0
    placed = place_object(obj, Trajectory.stationary(), 0.0, np.linspace(0, 1, 4))
    assert np.allclose(placed.mean(axis=0), obj.centroid, atol=1e-12)
    assert np.allclose(placed - obj.centroid, 2.0 * (obj.centers - obj.centroid), atol=1e-12)


def test_place_along_y_rotates_quarter_turn():
    obj = cloud()
    ts = np.linspace(0, 1, 16)
    traj = Trajectory.constant_velocity((0, 1.0, 0), (0, 2.0, 0))
    placed = place_object(obj, traj, 0.5, ts)
    rz = np.array([[0, -1.0, 0], [1.0, 0, 0], [0, 0, 1.0]])
    expected = (obj.centers - obj.centroid) @ rz.T + obj.centroid + [0, 2.0, 0]
    assert np.allclose(placed, expected, atol=1e-12)


def test_distances_preserved_up_to_scale(rng):
    obj = cloud(3)
    obj.object_scale = 0.7
    ts = np.linspace(0, 1, 16)
    traj = Trajectory.projectile((-2, 0, 0.5), (2.0, 1.0, 3.0))
    d0 = np.linalg.norm(obj.centers[:, None] - obj.centers[None], axis=-1)
    for t in ts:
        p = place_object(obj, traj, t, ts)
        assert np.allclose(np.linalg.norm(p[:, None] - p[None], axis=-1), 0.7 * d0, atol=1e-12)


def test_placement_sequence_is_proper():
    obj = cloud()
    ts = np.linspace(0, 1, 16)
    seq = placement_sequence(obj, Trajectory.circular((0, 0, 0), 2.0, 3.0), ts)
    assert seq.rotations.shape == (16, 3, 3) and seq.translations.shape == (16, 3)
    with pytest.raises(ContractError):
        PlacementSequence(np.tile(np.diag([1.0, 1.0, -1.0]), (2, 1, 1)), np.zeros((2, 3)))
