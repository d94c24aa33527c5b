import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from common.errors import CapacityError, InvalidArgumentError
from services.particle_system import Ensemble
from services.transport_metrics import (
    Coupling,
    DiscreteMeasure,
    _solve_lp,
    brute_force_w1,
    cost_matrix,
    cost_t,
    dual_check,
    paired_w1_shifted,
    shift_measure,
    w1,
    w1_shifted,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _random_measure(rng, n, d=3, uniform=True) -> DiscreteMeasure:
    r, v = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    if uniform:
        return DiscreteMeasure.uniform(r, v)
    w = rng.random(n) + 0.1
    return DiscreteMeasure(r=r, v=v, weights=w / w.sum())


def _point(r, v) -> DiscreteMeasure:
    return DiscreteMeasure(r=[r], v=[v], weights=[1.0])


def test_cost_t_examples():
    p = (np.zeros(3), np.array([1.0, 0.0, 0.0]))
    q = (np.array([1.0, 0.0, 0.0]), np.zeros(3))
    assert cost_t(p, q, 0.0) == pytest.approx(2.0)
    assert cost_t(p, q, 2.0) == pytest.approx(4.0)
    assert cost_t(p, p, 5.0) == 0.0
    with pytest.raises(InvalidArgumentError):
        cost_t(p, (np.zeros(4), np.zeros(4)))


@given(seed=seeds, t=st.floats(min_value=0.0, max_value=10.0))
@settings(max_examples=50)
def test_shifted_norms_are_equivalent(seed, t):
    """Property: cost_t <= (1 + t) cost_0 and cost_0 <= (1 + t) cost_t."""
    rng = np.random.default_rng(seed)
    p = (rng.normal(size=3), rng.normal(size=3))
    q = (rng.normal(size=3), rng.normal(size=3))
    c0, ct = cost_t(p, q, 0.0), cost_t(p, q, t)
    assert ct <= (1.0 + t) * c0 + 1e-12
    assert c0 <= (1.0 + t) * ct + 1e-12


def test_measure_validation():
    with pytest.raises(InvalidArgumentError):
        DiscreteMeasure(r=np.zeros((2, 3)), v=np.zeros((2, 3)), weights=[0.5, 0.6])
    with pytest.raises(InvalidArgumentError):
        DiscreteMeasure(r=np.zeros((2, 3)), v=np.zeros((2, 3)), weights=[1.5, -0.5])
    with pytest.raises(InvalidArgumentError):
        DiscreteMeasure(r=np.zeros((2, 3)), v=np.zeros((2, 2)), weights=[0.5, 0.5])


def test_from_ensemble_is_uniform():
    m = DiscreteMeasure.from_ensemble(Ensemble(r=np.zeros((4, 3)), v=np.ones((4, 3))))
    assert m.is_uniform and m.size == 4 and m.total_mass == pytest.approx(1.0)


def test_shift_measure_group_property():
    m = _random_measure(np.random.default_rng(0), 5)
    np.testing.assert_array_equal(shift_measure(m, 0.0).r, m.r)
    np.testing.assert_allclose(shift_measure(shift_measure(m, 0.7), 1.3).r, shift_measure(m, 2.0).r, atol=1e-12)
    np.testing.assert_array_equal(shift_measure(m, 3.0).weights, m.weights)


def test_w1_of_identical_measures_is_zero():
    m = _random_measure(np.random.default_rng(1), 6)
    result = w1(m, m)
    assert result.value == 0.0
    np.testing.assert_allclose(result.coupling.plan, np.eye(6) / 6)


def test_w1_between_point_masses_is_cost():
    p, q = _point([0, 0, 0], [1, 0, 0]), _point([1, 0, 0], [0, 0, 0])
    assert w1(p, q).value == pytest.approx(2.0)
    assert w1_shifted(p, q, 2.0).value == pytest.approx(4.0)


@given(seed=seeds, t=st.floats(min_value=0.0, max_value=5.0))
@settings(max_examples=30)
def test_transport_shift_of_a_point_mass(seed, t):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=3), rng.normal(size=3)
    value = w1_shifted(_point(r, v), _point(r + t * v, v), t).value
    assert value == pytest.approx(t * np.linalg.norm(v), abs=1e-10)


@given(seed=seeds, n=st.integers(min_value=1, max_value=6))
@settings(max_examples=40)
def test_w1_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    mu, nu = _random_measure(rng, n), _random_measure(rng, n)
    assert w1(mu, nu).value == pytest.approx(brute_force_w1(mu, nu), rel=1e-12, abs=1e-12)


def test_brute_force_two_atom_crossing():
    mu = DiscreteMeasure.uniform([[0, 0, 0], [10, 0, 0]], np.zeros((2, 3)))
    nu = DiscreteMeasure.uniform([[11, 0, 0], [1, 0, 0]], np.zeros((2, 3)))
    assert brute_force_w1(mu, nu) == pytest.approx(1.0)
    with pytest.raises(CapacityError):
        big = _random_measure(np.random.default_rng(0), 9)
        brute_force_w1(big, big)


@given(seed=seeds)
@settings(max_examples=25)
def test_metric_axioms(seed):
    """Property: symmetry and the triangle inequality, including non-uniform weights."""
    rng = np.random.default_rng(seed)
    a, b, c = (_random_measure(rng, k, uniform=False) for k in (3, 4, 5))
    ab, ba = w1(a, b).value, w1(b, a).value
    assert ab == pytest.approx(ba, abs=1e-10)
    assert w1(a, c).value <= ab + w1(b, c).value + 1e-10


@given(seed=seeds)
@settings(max_examples=25)
def test_lp_agrees_with_assignment(seed):
    rng = np.random.default_rng(seed)
    mu, nu = _random_measure(rng, 5), _random_measure(rng, 5)
    cost = cost_matrix(mu, nu)
    lp = _solve_lp(cost, mu.weights, nu.weights)
    assert lp.value == pytest.approx(w1(mu, nu).value, abs=1e-10)
    assert lp.coupling.marginal_error(mu, nu) <= 1e-10


@given(seed=seeds, t=st.floats(min_value=0.0, max_value=3.0))
@settings(max_examples=30)
def test_shifted_routes_agree(seed, t):
    rng = np.random.default_rng(seed)
    mu, nu = _random_measure(rng, 5, uniform=False), _random_measure(rng, 4, uniform=False)
    direct = w1_shifted(mu, nu, t)
    via_shift = w1(shift_measure(mu, t), shift_measure(nu, t))
    assert direct.value == pytest.approx(via_shift.value, abs=1e-10)
    assert direct.coupling.marginal_error(mu, nu) <= 1e-10


def test_pure_transport_keeps_shifted_distance():
    rng = np.random.default_rng(4)
    mu, nu = _random_measure(rng, 6), _random_measure(rng, 6)
    start = w1(mu, nu).value
    for t in (0.5, 1.0, 2.0):
        moved_mu = DiscreteMeasure.uniform(mu.r + t * mu.v, mu.v)
        moved_nu = DiscreteMeasure.uniform(nu.r + t * nu.v, nu.v)
        assert w1_shifted(moved_mu, moved_nu, t).value == pytest.approx(start, abs=1e-10)


def test_paired_distance_bounds_w1():
    rng = np.random.default_rng(2)
    mu, nu = _random_measure(rng, 7), _random_measure(rng, 7)
    assert paired_w1_shifted(mu, nu, 1.0) >= w1_shifted(mu, nu, 1.0).value - 1e-12
    with pytest.raises(InvalidArgumentError):
        paired_w1_shifted(mu, _random_measure(rng, 3), 1.0)


def test_capacity_limit():
    m = _random_measure(np.random.default_rng(3), 5)
    with pytest.raises(CapacityError) as info:
        w1(m, m, max_support=4)
    assert info.value.exit_code == 4


@pytest.mark.parametrize("uniform", [True, False])
def test_dual_certificate_closes_gap(uniform):
    rng = np.random.default_rng(8)
    mu, nu = _random_measure(rng, 6, uniform=uniform), _random_measure(rng, 6, uniform=uniform)
    result = w1_shifted(mu, nu, 0.5)
    cert = dual_check(mu, nu, result.coupling, 0.5)
    assert cert.coupling_optimal
    assert abs(cert.gap) <= 1e-9
    assert cert.primal == pytest.approx(result.value)
    assert cert.lipschitz_violation <= 1e-9


def test_dual_certificate_of_suboptimal_coupling():
    mu = DiscreteMeasure.uniform([[0, 0, 0], [10, 0, 0]], np.zeros((2, 3)))
    nu = DiscreteMeasure.uniform([[1, 0, 0], [11, 0, 0]], np.zeros((2, 3)))
    swapped = Coupling(plan=np.array([[0.0, 0.5], [0.5, 0.0]]))
    cert = dual_check(mu, nu, swapped)
    assert not cert.coupling_optimal
    assert cert.primal == pytest.approx(10.0)
    assert cert.dual == pytest.approx(1.0)
    assert cert.primal > cert.dual


def test_dual_certificate_of_identical_measures():
    m = _random_measure(np.random.default_rng(9), 4)
    cert = dual_check(m, m, Coupling(plan=np.eye(4) / 4))
    assert cert.gap == pytest.approx(0.0, abs=1e-9)


def test_dual_check_rejects_infeasible_coupling():
    m = _random_measure(np.random.default_rng(9), 3)
    with pytest.raises(InvalidArgumentError):
        dual_check(m, m, Coupling(plan=np.full((3, 3), 0.2)))


@pytest.mark.parametrize("t", [0.0, 0.5, 2.0])
def test_shifted_routes_agree_on_fifty_atoms(t):
    rng = np.random.default_rng(17)
    for _ in range(100):
        mu, nu = _random_measure(rng, 50), _random_measure(rng, 50)
        route_a = w1(mu, nu, cost_matrix(mu, nu, t)).value
        route_b = w1(shift_measure(mu, t), shift_measure(nu, t)).value
        assert abs(route_a - route_b) <= 1e-10


@pytest.mark.slow
@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7])
def test_w1_is_exact_against_brute_force(n):
    """Property: on 500 uniform instances w1 equals the n! minimum exactly with duality gap <= 1e-9."""
    rng = np.random.default_rng(1000 + n)
    for _ in range(500):
        mu, nu = _random_measure(rng, n), _random_measure(rng, n)
        result = w1(mu, nu)
        assert result.value == brute_force_w1(mu, nu)
        cert = dual_check(mu, nu, result.coupling)
        assert abs(cert.gap) <= 1e-9
