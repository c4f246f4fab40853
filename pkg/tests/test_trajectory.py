import numpy as np
import pytest

from compscene.errors import ContractError, DomainError, UnrecoverablePlacementError
from compscene.orientation import place_object
from compscene.trajectory import (
    DEFAULT_SAMPLES,
    GRAVITY,
    MIN_FRACTION,
    Trajectory,
    check_and_truncate,
    position_at,
    sample_uniform,
)

from conftest import brute_contact, fibonacci_sphere, sphere_object

# Two unit spheres (200-point Fibonacci lattices), B at the origin, A approaching
# head-on from (-4, 0, 0) at speed 3. Frozen from ``brute_contact``.
HEAD_ON = Trajectory.constant_velocity((-4.0, 0.0, 0.0), (3.0, 0.0, 0.0))
HEAD_ON_LOSS = {0.7: 0.0019090770657915692, 0.8: 0.0196, 0.9: 0.0278, 1.0: 0.1108}


def test_position_examples():
    p0 = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(Trajectory.projectile(p0, (1.0, 2.0, 3.0)).position(0.0), p0)
    traj = Trajectory.projectile((0.0, 0.0, 0.0), (1.0, 0.0, 2.0), (0.0, 0.0, -9.8))
    assert np.max(np.abs(position_at(traj, 0.5) - [0.5, 0.0, -0.225])) <= 1e-12
    cv = Trajectory.constant_velocity(p0, (0.5, 0.25, -1.0))
    for t in np.linspace(0, 1, 9):
        assert np.max(np.abs(cv.position(t) - (p0 + t * np.array([0.5, 0.25, -1.0])))) <= 1e-12


def test_closed_form_exactness(rng):
    for _ in range(100):
        p0, v, a = rng.normal(size=(3, 3))
        t = float(rng.uniform())
        expected = p0 + v * t + 0.5 * a * t * t
        assert np.max(np.abs(Trajectory.projectile(p0, v, a).position(t) - expected)) <= 1e-12


def test_projectile_apex():
    vz = 4.0
    traj = Trajectory.projectile((0.0, 0.0, 0.0), (0.5, 0.0, vz))
    t_star = vz / GRAVITY
    dense = np.linspace(0, 1, 10001)
    heights = np.array([traj.position(t)[2] for t in dense])
    assert traj.position(t_star)[2] >= heights.max()
    assert abs(dense[np.argmax(heights)] - t_star) <= 1e-4


def test_circular_template():
    traj = Trajectory.circular((0.0, 0.0, 1.0), 2.0, np.pi)
    assert np.allclose(traj.position(0.5), [0.0, 2.0, 1.0], atol=1e-12)
    assert np.allclose(traj.position(1.0), [-2.0, 0.0, 1.0], atol=1e-12)


def test_domain_and_contract_errors():
    traj = Trajectory.constant_velocity((0, 0, 0), (1, 0, 0), t_max=0.5)
    with pytest.raises(DomainError):
        traj.position(0.6)
    with pytest.raises(DomainError):
        traj.position(-0.1)
    with pytest.raises(ContractError):
        Trajectory(t_max=0.0)
    with pytest.raises(ContractError):
        Trajectory(t_max=1.5)
    with pytest.raises(ContractError):
        Trajectory(initial_velocity=(np.nan, 0, 0))
    with pytest.raises(ContractError):
        Trajectory(template="spline")


def test_sampling():
    traj = Trajectory.constant_velocity((0, 0, 0), (1, 0, 0))
    ts, pos = sample_uniform(traj, 2)
    assert np.array_equal(ts, [0.0, 1.0])
    assert np.array_equal(pos[1], [1.0, 0.0, 0.0])
    ts, _ = sample_uniform(traj, 16)
    assert np.allclose(np.diff(ts), 1 / 15, atol=1e-15)
    ts, _ = sample_uniform(traj.truncated(0.5), 3)
    assert np.array_equal(ts, [0.0, 0.25, 0.5])
    with pytest.raises(ContractError):
        sample_uniform(traj, 1)


def test_defaults():
    assert DEFAULT_SAMPLES == 64
    assert MIN_FRACTION == 0.3


def test_serialization_roundtrip():
    for traj in (HEAD_ON.truncated(0.6), Trajectory.projectile((1, 2, 3), (0, 1, 2), (0, 0, -2)),
                 Trajectory.circular((0, 0, 0.5), 1.5, 2.0, 0.8)):
        back = Trajectory.from_dict(traj.to_dict())
        for t in (0.0, 0.3, traj.t_max):
            assert np.array_equal(back.position(t), traj.position(t))
        assert back.t_max == traj.t_max and back.template == traj.template
    with pytest.raises(ContractError):
        Trajectory.from_dict({"template": "spline", "parameters": {}})
    with pytest.raises(ContractError):
        Trajectory.from_dict({"parameters": {}})


def test_two_sphere_oracle_values():
    mover = sphere_object(200, 1.0)
    anchor = fibonacci_sphere(200, 1.0)
    ts = np.linspace(0.0, 1.0, 11)
    losses = {round(t, 1): brute_contact(place_object(mover, HEAD_ON, t, ts), anchor) for t in ts}
    assert all(losses[t] == 0.0 for t in losses if t <= 0.6)
    assert losses[0.7] == pytest.approx(HEAD_ON_LOSS[0.7], rel=1e-9)
    for t in (0.8, 0.9, 1.0):
        assert losses[t] == pytest.approx(HEAD_ON_LOSS[t], abs=5e-5)


def test_head_on_truncation():
    mover = sphere_object(200, 1.0)
    anchor = fibonacci_sphere(200, 1.0)
    traj, report = check_and_truncate(HEAD_ON, mover, [anchor], n_samples=11)
    assert report.first_collision_t == pytest.approx(0.7, abs=1e-15)
    assert traj.t_max == pytest.approx(0.6, abs=1e-15)
    assert report.original_t_max == 1.0 and not report.requery
    # every sample left in the domain is contact free
    ts, _ = sample_uniform(traj, 11)
    assert all(brute_contact(place_object(mover, traj, t, ts), anchor) == 0.0 for t in ts)
    again, second = check_and_truncate(traj, mover, [anchor], n_samples=11)
    assert again.t_max == traj.t_max and not second.collided


def test_no_collision_is_unchanged():
    mover = sphere_object(100, 0.5)
    traj = Trajectory.constant_velocity((-4.0, 3.0, 0.0), (3.0, 0.0, 0.0))
    out, report = check_and_truncate(traj, mover, [fibonacci_sphere(100, 1.0)])
    assert out is traj
    assert not report.collided and report.t_max == 1.0 and not report.requery


def test_short_remainder_requests_requery():
    mover = sphere_object(200, 1.0)
    traj = Trajectory.constant_velocity((-2.5, 0.0, 0.0), (3.0, 0.0, 0.0))
    out, report = check_and_truncate(traj, mover, [fibonacci_sphere(200, 1.0)], n_samples=11)
    assert out.t_max == pytest.approx(0.1)
    assert report.requery
    assert report.to_dict()["requery"] is True


def test_collision_at_start_is_unrecoverable():
    mover = sphere_object(100, 1.0)
    with pytest.raises(UnrecoverablePlacementError):
        check_and_truncate(Trajectory.stationary((0.5, 0.0, 0.0)), mover, [fibonacci_sphere(100, 1.0)])


def test_truncation_never_lengthens(rng):
    mover = sphere_object(80, 0.5)
    anchor = fibonacci_sphere(80, 1.0)
    for _ in range(5):
        start = np.array([-3.0, 0.0, 0.0]) + rng.normal(scale=0.3, size=3)
        traj = Trajectory.projectile(start, -start * rng.uniform(0.5, 2.0), (0, 0, -1.0))
        out, _ = check_and_truncate(traj, mover, [anchor], n_samples=16)
        assert out.t_max <= traj.t_max
        again, _ = check_and_truncate(out, mover, [anchor], n_samples=16)
        assert again.t_max == out.t_max
