import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compscene.errors import ContractError
from compscene.regularizers import (
    RegWeights,
    acceleration_loss,
    collides,
    contact_loss,
    rigidity_loss,
    total_regularization,
)
from compscene.scene import build_knn

from conftest import (
    central_diff,
    check_acceleration_grad,
    check_contact_grad,
    check_rigidity_grad,
    contact_pair,
    fibonacci_sphere,
    rel_err,
)

MUTUAL = np.array([[1], [0]])


def test_default_weights():
    w = RegWeights()
    assert (w.omega1, w.omega2, w.contact) == (1e-4, 1e3, 1.0)
    with pytest.raises(ContractError):
        RegWeights(omega1=-1.0)


def test_rigidity_uniform_translation_is_exactly_zero(rng):
    pts = rng.normal(size=(40, 3))
    loss, grad = rigidity_loss(np.tile([0.3, 0.0, 0.0], (40, 1)), build_knn(pts, 6))
    assert loss == 0.0
    assert not grad.any()


def test_rigidity_two_point_example():
    loss, _ = rigidity_loss(np.array([[1.0, 0, 0], [0.0, 0, 0]]), MUTUAL)
    assert loss == 1.0


def test_rigidity_penalizes_rotation():
    pts = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0], [0, 0, 1.0]])
    a = np.radians(10.0)
    rot = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    loss, _ = rigidity_loss(pts @ rot.T - pts, build_knn(pts, 3))
    assert loss > 0.01


def test_rigidity_contract():
    with pytest.raises(ContractError):
        rigidity_loss(np.zeros((3, 3)), np.zeros((3, 0), dtype=int))
    with pytest.raises(ContractError):
        rigidity_loss(np.zeros((3, 3)), MUTUAL)


def test_acceleration_examples():
    d = np.array([[[0.0, 0, 0]], [[0.0, 0, 0]], [[1.0, 0, 0]]])
    assert acceleration_loss(d)[0] == 1.0
    const = np.tile([[[0.2, -0.1, 0.4]]], (5, 1, 1))
    assert acceleration_loss(const)[0] == 0.0
    with pytest.raises(ContractError):
        acceleration_loss(np.zeros((2, 4, 3)))


def test_acceleration_time_affine_is_exactly_zero(rng):
    # offsets and slopes on a dyadic grid keep the second differences exact
    base = rng.integers(-64, 64, size=(30, 3)) / 16.0
    slope = rng.integers(-64, 64, size=(30, 3)) / 16.0
    ts = np.arange(16)[:, None, None] / 16.0
    loss, grad = acceleration_loss(base + ts * slope)
    assert loss == 0.0
    assert not grad.any()


def test_acceleration_time_affine_general(rng):
    base, slope = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    ts = np.linspace(0, 1, 16)[:, None, None]
    loss, _ = acceleration_loss(base + ts * slope)
    assert loss == 0.0


def test_contact_separated_example():
    theta_case = contact_loss(np.array([[0.5, 0, 0]]), np.array([[3.0, 0, 0]]), center_a=np.zeros(3))
    assert theta_case[0] == 0.0


def test_contact_interpenetration_example():
    loss, _, _ = contact_loss(np.array([[0.5, 0, 0]]), np.array([[0.2, 0, 0]]), center_a=np.zeros(3))
    assert abs(loss - 0.06) <= 1e-12


def test_contact_separated_spheres_identically_zero():
    a = fibonacci_sphere(200, 1.0)
    b = fibonacci_sphere(150, 0.7) + [1.71, 0.0, 0.0]
    loss, ga, gb = contact_loss(a, b)
    assert loss == 0.0 and not ga.any() and not gb.any()
    assert not collides(a, b)
    assert collides(a, fibonacci_sphere(150, 0.7) + [1.2, 0.0, 0.0])


def test_contact_translation_invariant(rng):
    a = fibonacci_sphere(100, 1.0)
    b = fibonacci_sphere(80, 0.8) + [1.0, 0.3, 0.0]
    shift = rng.normal(size=3) * 5
    l1 = contact_loss(a, b)[0]
    l2 = contact_loss(a + shift, b + shift)[0]
    assert l1 > 0
    assert l2 == pytest.approx(l1, rel=1e-9)


def test_contact_requires_points():
    with pytest.raises(ContractError):
        contact_loss(np.zeros((0, 3)), np.zeros((2, 3)))


def test_total_zero_case(rng):
    pts = rng.normal(size=(20, 3))
    knn = build_knn(pts, 4)
    deltas = [np.zeros((16, 20, 3)), np.zeros((16, 20, 3))]
    placed = [np.tile(pts, (16, 1, 1)), np.tile(pts + 50.0, (16, 1, 1))]
    jac = [np.tile(np.eye(3), (16, 1, 1))] * 2
    terms, grads = total_regularization(deltas, [knn, knn], placed, jac)
    assert terms.total == 0.0
    assert all(not g.any() for g in grads)


def test_total_weighted_sum():
    # object 0: rigidity 1 at every step and acceleration 1; contact 0.06 against object 1
    d0 = np.array([[[0.0, 0, 0], [-1.0, 0, 0]], [[0.0, 0, 0], [-1.0, 0, 0]], [[1.0, 0, 0], [0.0, 0, 0]]])
    d1 = np.zeros((3, 2, 3))
    a = np.array([[0.5, 0, 0], [-0.5, 0, 0]])
    b = np.array([[0.2, 0, 0], [-0.2, 0, 0]])
    placed = [np.tile(a, (3, 1, 1)), np.tile(b, (3, 1, 1))]
    jac = [np.tile(np.eye(3), (3, 1, 1))] * 2
    terms, _ = total_regularization([d0, d1], [MUTUAL, MUTUAL], placed, jac)
    assert terms.rigidity == 1.0 and terms.acceleration == 1.0
    assert abs(terms.contact - 0.06) <= 1e-12
    assert terms.total == pytest.approx(0.06 + 1e-4 + 1e3, rel=1e-12)


@pytest.mark.parametrize("check", [check_rigidity_grad, check_acceleration_grad, check_contact_grad])
def test_gradients_match_finite_differences(check):
    rng = np.random.default_rng(7)
    for _ in range(20):
        assert check(rng) < 1e-4


def test_total_gradient_matches_finite_differences(rng):
    pts = [rng.normal(size=(12, 3)), rng.normal(size=(10, 3)) + [0.8, 0, 0]]
    knns = [build_knn(p, 3) for p in pts]
    deltas = [rng.normal(scale=0.3, size=(4, len(p), 3)) for p in pts]
    rots = [np.linalg.qr(rng.normal(size=(3, 3)))[0] for _ in pts]
    w = RegWeights(omega1=0.3, omega2=2.0, contact=1.5)

    def evaluate():
        placed = [np.stack([(p + d[t]) @ r.T for t in range(4)]) for p, d, r in zip(pts, deltas, rots)]
        jac = [np.tile(r, (4, 1, 1)) for r in rots]
        return total_regularization(deltas, knns, placed, jac, w)

    terms, grads = evaluate()
    assert terms.contact > 0
    for d, g in zip(deltas, grads):
        assert rel_err(g, central_diff(lambda: evaluate()[0].total, d)) < 1e-4


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, 3, elements=finite))
def test_rigidity_nonnegative_and_translation_invariant(d, c):
    knn = build_knn(np.arange(18.0).reshape(6, 3) ** 1.5, 2)
    loss, _ = rigidity_loss(d, knn)
    assert loss >= 0.0
    assert rigidity_loss(d + c, knn)[0] == pytest.approx(loss, rel=1e-9, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4, 3), elements=finite))
def test_acceleration_nonnegative(d):
    assert acceleration_loss(d)[0] >= 0.0
