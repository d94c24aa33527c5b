import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from common.errors import DegenerateInputError, InvalidArgumentError
from services.collision_geometry import (
    AngleParam,
    alpha,
    deflect,
    deflect_n,
    deflection_angle,
    frame,
    gamma,
    gamma_inverse,
    n_from_angles,
    tanaka_shift,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=3, max_value=6)


def _unit(rng, k, size=None):
    shape = (k,) if size is None else (size, k)
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


@given(seed=seeds, d=dims)
@settings(max_examples=50)
def test_gamma_orthogonal_with_norm_of_x(seed, d):
    """Property: gamma(X, xi) is orthogonal to X and has length |X|."""
    rng = np.random.default_rng(seed)
    X = rng.normal(scale=3.0, size=(16, d))
    xi = _unit(rng, d - 1, 16)
    g = gamma(X, xi)
    np.testing.assert_allclose((g * X).sum(axis=1), 0.0, atol=1e-10 * (1 + np.linalg.norm(X, axis=1) ** 2).max())
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), np.linalg.norm(X, axis=1), rtol=1e-12)


@given(seed=seeds, d=dims)
@settings(max_examples=50)
def test_gamma_inverse_recovers_xi(seed, d):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(8, d))
    xi = _unit(rng, d - 1, 8)
    np.testing.assert_allclose(gamma_inverse(X, gamma(X, xi)), xi, atol=1e-10)


def test_gamma_of_zero_is_zero():
    xi = np.array([0.6, 0.8])
    np.testing.assert_array_equal(gamma(np.zeros(3), xi), np.zeros(3))


def test_gamma_handles_negative_last_component():
    X = np.array([0.0, 0.0, -2.0])
    g = gamma(X, np.array([1.0, 0.0]))
    assert abs(g @ X) < 1e-12
    assert np.linalg.norm(g) == pytest.approx(2.0)


@given(seed=seeds, d=dims, theta=st.floats(min_value=1e-3, max_value=np.pi, allow_nan=False, allow_infinity=False))
@settings(max_examples=60)
def test_collisions_conserve_momentum_and_energy(seed, d, theta):
    """Property: (v + alpha, u - alpha) keeps v + u and |v|^2 + |u|^2."""
    rng = np.random.default_rng(seed)
    v, u = rng.normal(size=d), rng.normal(size=d)
    xi = _unit(rng, d - 1)
    vs, us = deflect(v, u, theta, xi)
    np.testing.assert_allclose(vs + us, v + u, atol=1e-12)
    assert vs @ vs + us @ us == pytest.approx(v @ v + u @ u, rel=1e-12)


@given(seed=seeds, theta=st.floats(min_value=1e-3, max_value=np.pi, allow_nan=False, allow_infinity=False))
@settings(max_examples=60)
def test_alpha_norm(seed, theta):
    """Property: |alpha| = sin(theta/2)|u - v|."""
    rng = np.random.default_rng(seed)
    v, u = rng.normal(size=3), rng.normal(size=3)
    a = alpha(v, u, theta, _unit(rng, 2))
    assert np.linalg.norm(a) == pytest.approx(np.sin(theta / 2) * np.linalg.norm(u - v), rel=1e-10)


@given(seed=seeds, theta=st.floats(min_value=0.05, max_value=np.pi - 0.05))
@settings(max_examples=60)
def test_deflection_angle_is_theta(seed, theta):
    rng = np.random.default_rng(seed)
    v, u = rng.normal(size=4), rng.normal(size=4)
    vs, us = deflect(v, u, theta, _unit(rng, 3))
    assert float(deflection_angle(v, u, vs, us)) == pytest.approx(theta, abs=1e-7)


@given(seed=seeds, theta=st.floats(min_value=1e-3, max_value=np.pi))
@settings(max_examples=40)
def test_n_parameterization_matches_angles(seed, theta):
    rng = np.random.default_rng(seed)
    v, u = rng.normal(size=3), rng.normal(size=3)
    xi = _unit(rng, 2)
    n = n_from_angles(v, u, theta, xi)
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
    for got, want in zip(deflect_n(v, u, n), deflect(v, u, theta, xi)):
        np.testing.assert_allclose(got, want, atol=1e-12)


@given(seed=seeds, d=dims)
@settings(max_examples=50)
def test_deflect_n_is_an_involution(seed, d):
    """Property: applying deflect_n twice with the same n returns (v, u) within 1e-12."""
    rng = np.random.default_rng(seed)
    v, u = rng.normal(size=(64, d)), rng.normal(size=(64, d))
    n = _unit(rng, d, 64)
    once = deflect_n(v, u, n)
    twice = deflect_n(*once, n)
    np.testing.assert_allclose(twice[0], v, atol=1e-12)
    np.testing.assert_allclose(twice[1], u, atol=1e-12)


def test_head_on_collision_swaps_velocities():
    v, u = np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])
    vs, us = deflect(v, u, np.pi, np.array([1.0, 0.0]))
    np.testing.assert_allclose(vs, u, atol=1e-15)
    np.testing.assert_allclose(us, v, atol=1e-15)


@given(seed=seeds, d=dims)
@settings(max_examples=40)
def test_frame_is_orthonormal_complement(seed, d):
    X = np.random.default_rng(seed).normal(size=d)
    E = frame(X)
    assert E.shape == (d, d - 1)
    np.testing.assert_allclose(E.T @ E, np.eye(d - 1), atol=1e-12)
    np.testing.assert_allclose(X @ E, 0.0, atol=1e-12 * (1 + np.linalg.norm(X)))


@given(seed=seeds, d=dims, scale=st.floats(min_value=1e-3, max_value=10.0))
@settings(max_examples=80)
def test_tanaka_shift_bound(seed, d, scale):
    """Property: |gamma(X, xi) - gamma(Y, xi0)| <= 3|X - Y| with xi0 a unit vector."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(32, d))
    Y = X + scale * rng.normal(size=(32, d))
    xi = _unit(rng, d - 1, 32)
    xi0 = tanaka_shift(X, Y, xi)
    np.testing.assert_allclose(np.linalg.norm(xi0, axis=1), 1.0, atol=1e-12)
    lhs = np.linalg.norm(gamma(X, xi) - gamma(Y, xi0), axis=1)
    rhs = 3.0 * np.linalg.norm(X - Y, axis=1)
    assert np.all(lhs <= rhs + 1e-10)


def test_tanaka_shift_antiparallel_and_equal():
    rng = np.random.default_rng(3)
    X = np.array([[1.0, 2.0, -0.5], [0.3, -1.0, 2.0]])
    xi = _unit(rng, 2, 2)
    xi0 = tanaka_shift(X, -2.0 * X, xi)
    lhs = np.linalg.norm(gamma(X, xi) - gamma(-2.0 * X, xi0), axis=1)
    assert np.all(lhs <= 3.0 * np.linalg.norm(3.0 * X, axis=1))
    np.testing.assert_allclose(tanaka_shift(X, X, xi), xi, atol=1e-12)


def test_tanaka_shift_is_injective_in_xi():
    rng = np.random.default_rng(11)
    X, Y = rng.normal(size=3), rng.normal(size=3)
    xi = _unit(rng, 2, 64)
    xi0 = tanaka_shift(np.tile(X, (64, 1)), np.tile(Y, (64, 1)), xi)
    gaps = np.linalg.norm(xi0[:, None, :] - xi0[None, :, :], axis=-1) + np.eye(64)
    assert gaps.min() > 1e-9


@given(seed=seeds, d=dims, scale=st.sampled_from([1e-1, 1e-2, 1e-3, 3e-4, 1e-5, 0.0]))
@settings(max_examples=60)
def test_tanaka_shift_inverts_near_antiparallel(seed, d, scale):
    """Property: shifting X -> Y and back Y -> X returns xi to 1e-10, also for Y close to -X."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(32, d))
    Y = -X * rng.uniform(0.5, 2.0, size=(32, 1)) + scale * rng.normal(size=(32, d))
    xi = _unit(rng, d - 1, 32)
    back = tanaka_shift(Y, X, tanaka_shift(X, Y, xi))
    np.testing.assert_allclose(back, xi, atol=1e-10)


@given(seed=seeds, d=dims, scale=st.floats(min_value=1e-3, max_value=10.0))
@settings(max_examples=40)
def test_tanaka_shift_inverts_for_generic_pairs(seed, d, scale):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(32, d))
    Y = X + scale * rng.normal(size=(32, d))
    xi = _unit(rng, d - 1, 32)
    np.testing.assert_allclose(tanaka_shift(Y, X, tanaka_shift(X, Y, xi)), xi, atol=1e-10)


def test_degenerate_inputs_raise():
    with pytest.raises(DegenerateInputError):
        frame(np.zeros(3))
    with pytest.raises(DegenerateInputError):
        tanaka_shift(np.zeros(3), np.ones(3), np.array([1.0, 0.0]))
    with pytest.raises(DegenerateInputError):
        deflection_angle(np.ones(3), np.ones(3), np.ones(3), np.ones(3))
    with pytest.raises(DegenerateInputError):
        n_from_angles(np.ones(3), np.ones(3), 1.0, np.array([1.0, 0.0]))


def test_invalid_arguments_raise():
    with pytest.raises(InvalidArgumentError):
        gamma(np.ones(2), np.array([1.0]))
    with pytest.raises(InvalidArgumentError):
        gamma(np.ones(3), np.array([1.0, 1.0]))
    with pytest.raises(InvalidArgumentError):
        gamma(np.ones(3), np.array([1.0, 0.0, 0.0]))


def test_angle_param_validation():
    theta, xi = AngleParam(theta=np.pi, xi=[0.0, 1.0]).as_arrays()
    assert theta == np.pi and xi.shape == (2,)
    with pytest.raises(ValidationError):
        AngleParam(theta=0.0, xi=[0.0, 1.0])
    with pytest.raises(ValidationError):
        AngleParam(theta=1.0, xi=[0.0, 2.0])


@pytest.mark.slow
@pytest.mark.parametrize("d", [3, 4, 5])
def test_collision_identities_at_scale(d):
    """Property: over 10^6 draws, conservation, |alpha| and the deflect_n involution hold to 1e-12."""
    rng = np.random.default_rng(100 + d)
    batch = 100_000
    for _ in range(10):
        v, u = rng.normal(size=(batch, d)), rng.normal(size=(batch, d))
        theta = np.pi * (1.0 - rng.random(batch))
        xi = _unit(rng, d - 1, batch)
        vs, us = deflect(v, u, theta, xi)
        scale = 1.0 + np.linalg.norm(v, axis=1) + np.linalg.norm(u, axis=1)
        assert np.all(np.linalg.norm((vs + us) - (v + u), axis=1) <= 1e-12 * scale)
        before = (v * v).sum(axis=1) + (u * u).sum(axis=1)
        after = (vs * vs).sum(axis=1) + (us * us).sum(axis=1)
        assert np.all(np.abs(after - before) <= 1e-12 * before)
        speed = np.linalg.norm(u - v, axis=1)
        a = np.linalg.norm(alpha(v, u, theta, xi), axis=1)
        assert np.all(np.abs(a - np.sin(theta / 2.0) * speed) <= 1e-12 * scale)
        n = n_from_angles(v, u, theta, xi)
        back = deflect_n(*deflect_n(v, u, n), n)
        assert np.all(np.abs(back[0] - v) <= 1e-12 * scale[:, None])
        assert np.all(np.abs(back[1] - u) <= 1e-12 * scale[:, None])
