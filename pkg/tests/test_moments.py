import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from analysis.moments import (
    integrability_functional,
    lambda_singular,
    moment_c_gamma,
    moment_report,
    psi_integrand,
    second_moment,
)
from common.errors import InvalidArgumentError
from services.kernels import BetaProfile, CollisionKernel, CrossSection, SpatialRate
from services.transport_metrics import DiscreteMeasure


def _atom(r, v) -> DiscreteMeasure:
    return DiscreteMeasure(r=[r], v=[v], weights=[1.0])


def test_c_gamma_single_atoms():
    assert moment_c_gamma(_atom([0, 0, 0], [0, 0, 0]), 0.0, delta=1.0) == pytest.approx(1.0)
    assert moment_c_gamma(_atom([0, 0, 0], [0, 1, 0]), 0.0, delta=1.0) == pytest.approx(2.718281828, rel=1e-9)
    # |r|^(1 + delta) with |r| = 2, delta = 1
    assert moment_c_gamma(_atom([2, 0, 0], [0, 0, 0]), 1.0, delta=1.0) == pytest.approx(5.0)


def test_c_gamma_is_linear_in_the_measure():
    a, b = _atom([1, 0, 0], [0, 0, 0.5]), _atom([0, 0, 0], [1, 1, 0])
    both = DiscreteMeasure.uniform([[1, 0, 0], [0, 0, 0]], [[0, 0, 0.5], [1, 1, 0]])
    expected = 0.5 * (moment_c_gamma(a, 0.5) + moment_c_gamma(b, 0.5))
    assert moment_c_gamma(both, 0.5) == pytest.approx(expected)


def test_c_gamma_overflow_is_infinite():
    assert moment_c_gamma(_atom([0, 0, 0], [1e3, 0, 0]), 1.0, delta=1.0) == float("inf")


def test_c_gamma_argument_checks():
    m = _atom([0, 0, 0], [0, 0, 0])
    with pytest.raises(InvalidArgumentError):
        moment_c_gamma(m, -1.5)
    with pytest.raises(InvalidArgumentError):
        moment_c_gamma(m, 0.0, delta=0.0)


def test_second_moment():
    assert second_moment(_atom([5, 5, 5], [1, 2, 3])) == pytest.approx(14.0)


def test_lambda_at_distance_two():
    estimate = lambda_singular(_atom([0, 0, 0], [0, 0, 0]), -1.0, probes=[[2.0, 0.0, 0.0]])
    assert estimate.value == pytest.approx(0.5)
    assert estimate.cap_hits == 0 and estimate.probes == 1


def test_lambda_probe_on_an_atom_is_capped():
    m = DiscreteMeasure.uniform([[0, 0, 0], [0, 0, 0]], [[0, 0, 0], [3, 0, 0]])
    estimate = lambda_singular(m, -1.0, probes=[[0.0, 0.0, 0.0]], cap=100.0)
    assert estimate.value == pytest.approx(0.5 * 100.0 + 0.5 / 3.0)
    assert estimate.cap_hits == 1


def test_lambda_near_zero_exponent_is_total_mass():
    rng = np.random.default_rng(0)
    m = DiscreteMeasure.uniform(rng.normal(size=(20, 3)), 5.0 * rng.normal(size=(20, 3)))
    estimate = lambda_singular(m, -1e-6, probes=[[100.0, 100.0, 100.0]], cap=1e6)
    assert estimate.value == pytest.approx(1.0, abs=1e-3)


@given(seed=st.integers(min_value=0, max_value=2**32 - 1), gamma=st.floats(min_value=-2.5, max_value=-0.1))
@settings(max_examples=25)
def test_lambda_sums_over_measures(seed, gamma):
    """Property: Lambda of mu + nu at a fixed probe is the sum of the two terms."""
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure.uniform(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    nu = DiscreteMeasure.uniform(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    probe = rng.normal(size=(1, 3)) + 10.0
    joint = lambda_singular([mu, nu], gamma, probes=probe).value
    parts = lambda_singular(mu, gamma, probes=probe).value + lambda_singular(nu, gamma, probes=probe).value
    assert joint == pytest.approx(parts, rel=1e-12)


def test_lambda_default_probes_include_atoms_and_grid():
    m = DiscreteMeasure.uniform(np.zeros((3, 3)), [[0, 0, 0], [1, 1, 1], [2, 0, 1]])
    assert lambda_singular(m, -1.0, grid=2).probes == 3 + 2 ** 3


def test_lambda_argument_checks():
    m = _atom([0, 0, 0], [0, 0, 0])
    with pytest.raises(InvalidArgumentError):
        lambda_singular(m, 0.0)
    with pytest.raises(InvalidArgumentError):
        lambda_singular(m, -1.0, cap=0.0)
    with pytest.raises(InvalidArgumentError):
        lambda_singular(m, -1.0, probes=[[0.0, 0.0]])
    with pytest.raises(InvalidArgumentError):
        lambda_singular([], -1.0)


def test_moment_report():
    m = DiscreteMeasure.uniform([[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [0, 2, 0]])
    hard = moment_report(m, 0.5)
    assert hard.lambda_value is None and not hard.divergent
    assert hard.second_moment == pytest.approx(2.0)
    soft = moment_report([m, m], -1.5, lambda_cap=10.0)
    assert soft.lambda_value is not None and soft.lambda_cap_hits > 0
    # gamma below -1 is clamped to -1 in the exponent
    assert soft.c_gamma == pytest.approx(2.0 * moment_c_gamma(m, -1.0))


def test_moment_report_flags_divergence():
    m = DiscreteMeasure.uniform([[0, 0, 0], [0, 0, 0]], [[0, 0, 0], [1e3, 0, 0]])
    report = moment_report(m, 1.0, delta=1.0)
    assert report.divergent and report.max_atom == 1


def test_integrability_of_a_single_atom():
    m = _atom([3, 0, 0], [0, 4, 0])
    assert integrability_functional(m, CollisionKernel()) == pytest.approx(2.0 * (3.0 + 4.0))


FLAT_MAXWELL = CollisionKernel(spatial=SpatialRate(profile=BetaProfile.FLAT))


def test_psi_vanishes_on_identical_copies():
    rng = np.random.default_rng(1)
    x, y = (rng.normal(size=3), rng.normal(size=3)), (rng.normal(size=3), rng.normal(size=3))
    kernel = CollisionKernel(cross_section=CrossSection(gamma=1.0))
    assert float(psi_integrand((x, x), (y, y), kernel)) == 0.0


def test_psi_vanishes_outside_beta_support():
    rng = np.random.default_rng(2)
    far = np.array([10.0, 0.0, 0.0])
    pair1 = ((np.zeros(3), rng.normal(size=3)), (np.zeros(3), rng.normal(size=3)))
    pair0 = ((far, rng.normal(size=3)), (far, rng.normal(size=3)))
    assert float(psi_integrand(pair1, pair0, CollisionKernel())) == 0.0


def test_psi_for_maxwellian_flat_kernel():
    rng = np.random.default_rng(3)
    r, v, rt, vt, q, u, qt, ut = rng.normal(size=(8, 3))
    value = float(psi_integrand(((r, v), (rt, vt)), ((q, u), (qt, ut)), FLAT_MAXWELL))
    assert value == pytest.approx(np.linalg.norm(v - vt) + np.linalg.norm(u - ut))


@given(seed=st.integers(min_value=0, max_value=2**32 - 1), gamma_value=st.sampled_from([-1.5, -0.5, 0.0, 1.0]))
@settings(max_examples=30, deadline=None)
def test_psi_parts_are_nonnegative(seed, gamma_value):
    """Property: both parts of Psi are nonnegative and Psi is their sum."""
    rng = np.random.default_rng(seed)
    r, v, rt, vt, q, u, qt, ut = rng.normal(size=(8, 64, 3))
    kernel = CollisionKernel(cross_section=CrossSection(gamma=gamma_value), spatial=SpatialRate(rho=2.0))
    psi = psi_integrand(((r, v), (rt, vt)), ((q, u), (qt, ut)), kernel)
    assert psi.rate_term.shape == psi.velocity_term.shape == (64,)
    assert np.all(psi.rate_term >= 0.0) and np.all(psi.velocity_term >= 0.0)
    np.testing.assert_array_equal(psi.value, psi.rate_term + psi.velocity_term)


def test_psi_flat_maxwellian_has_no_rate_term():
    rng = np.random.default_rng(5)
    r, v, rt, vt, q, u, qt, ut = rng.normal(size=(8, 3))
    psi = psi_integrand(((r, v), (rt, vt)), ((q, u), (qt, ut)), FLAT_MAXWELL)
    assert float(psi.rate_term) == 0.0
    assert float(psi.velocity_term) == pytest.approx(float(psi))
