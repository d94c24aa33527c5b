"""
Generator of the Enskog dynamics applied to test functions, and the weak and mild
formulation residuals of simulated trajectories.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from analysis.models import ResidualSeries, TestFunction
from common.errors import InvalidArgumentError
from common.utils import STREAM_GENERATOR, make_rng
from services.collision_geometry import alpha
from services.kernels import BetaProfile, CollisionKernel, angular_moment
from services.particle_system import Ensemble

logger = logging.getLogger(__name__)

# pair x sample evaluations held in memory at once
_CHUNK = 200_000


def velocity_factor(kernel: CollisionKernel) -> float:
    """|S^{d-2}| times the integral of sin^2(theta/2) Q(dtheta) over (eps, pi]."""
    return kernel.sphere_area * angular_moment(kernel.angular, lambda t: np.sin(t / 2.0) ** 2)


def _affine_collision_term(psi: TestFunction, v, u, kernel: CollisionKernel, tau: float) -> Optional[np.ndarray]:
    # The Gamma part of alpha integrates to zero over xi, leaving c (u - v).
    if psi.kind == "constant":
        return np.zeros(np.asarray(v).shape[:-1])
    if psi.kind == "coordinate_v":
        return velocity_factor(kernel) * (np.asarray(u) - np.asarray(v))[..., psi.index]
    if psi.kind == "coordinate_r":
        return tau * velocity_factor(kernel) * (np.asarray(u) - np.asarray(v))[..., psi.index]
    return None


def _collision_samples(
    psi: TestFunction,
    r: np.ndarray,
    v: np.ndarray,
    u: np.ndarray,
    theta: np.ndarray,
    xi: np.ndarray,
    tau: float,
) -> np.ndarray:
    """psi(S(tau)(r, v + alpha)) - psi(S(tau)(r, v)) for every pair (rows) and angle draw (columns)."""
    r3, v3, u3 = r[:, None, :], v[:, None, :], u[:, None, :]
    v_new = v3 + alpha(v3, u3, theta, xi)
    before = psi.value(r3 + tau * v3, v3)
    after = psi.value(r3 + tau * v_new, v_new)
    return after - before


def collision_integral(
    psi: TestFunction,
    r,
    v,
    u,
    kernel: CollisionKernel,
    mc_samples: int,
    rng: np.random.Generator,
    tau: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate of (L S(tau)psi)(r, v; u) and its standard error."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    exact = _affine_collision_term(psi, v, u, kernel, tau)
    if exact is not None:
        return exact, np.zeros_like(exact)
    if mc_samples < 2:
        raise InvalidArgumentError("mc_samples must be at least 2", mc_samples=mc_samples)
    theta, xi = kernel.sample_angles(rng, mc_samples)
    chunk = max(1, _CHUNK // mc_samples)
    means, errors = [], []
    for start in range(0, r.shape[0], chunk):
        stop = start + chunk
        diff = _collision_samples(psi, r[start:stop], v[start:stop], u[start:stop], theta, xi, tau)
        means.append(diff.mean(axis=1))
        errors.append(diff.std(axis=1, ddof=1) / np.sqrt(mc_samples))
    factor = kernel.rate_factor
    return factor * np.concatenate(means), factor * np.concatenate(errors)


def apply_generator(
    psi: TestFunction,
    x: Tuple[np.ndarray, np.ndarray],
    y: Tuple[np.ndarray, np.ndarray],
    kernel: CollisionKernel,
    mc_samples: int,
    rng: np.random.Generator,
) -> float:
    """(A psi)(r, v; q, u) = v . grad_r psi + sigma beta (L psi)."""
    r, v = (np.atleast_2d(np.asarray(a, dtype=float)) for a in x)
    q, u = (np.atleast_2d(np.asarray(a, dtype=float)) for a in y)
    transport = (v * psi.grad_r(r, v)).sum(axis=-1)
    rate = kernel.effective_sigma(np.linalg.norm(v - u, axis=-1))[0] * kernel.beta(r - q)
    collision, _ = collision_integral(psi, r, v, u, kernel, mc_samples, rng)
    return float((transport + rate * collision)[0])


def _interacting_pairs(e: Ensemble, kernel: CollisionKernel) -> Tuple[np.ndarray, np.ndarray]:
    """Ordered pairs (i, j), i != j, with beta(r_i - r_j) possibly positive."""
    n = e.n
    if kernel.spatial.profile == BetaProfile.FLAT:
        i, j = np.nonzero(~np.eye(n, dtype=bool))
        return i, j
    pairs = cKDTree(e.r).query_pairs(kernel.spatial.rho, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate([pairs[:, 0], pairs[:, 1]]), np.concatenate([pairs[:, 1], pairs[:, 0]])


def pair_generator(
    psi: TestFunction,
    e: Ensemble,
    kernel: Optional[CollisionKernel],
    mc_samples: int,
    rng: np.random.Generator,
    tau: float = 0.0,
    include_transport: bool = True,
) -> Tuple[float, float]:
    """<A psi, mu (x) mu> for the empirical measure of e (<B S(tau) psi, mu (x) mu> without transport)."""
    n = e.n
    value = 0.0
    if include_transport:
        value += float((e.v * psi.grad_r(e.r, e.v)).sum(axis=-1).mean())
    if kernel is None or n < 2:
        return value, 0.0

    # self-pairs have alpha = 0 and contribute nothing
    i, j = _interacting_pairs(e, kernel)
    if len(i) == 0:
        return value, 0.0
    weight = kernel.effective_sigma(np.linalg.norm(e.v[i] - e.v[j], axis=-1))[0] * kernel.beta(e.r[i] - e.r[j])
    keep = weight > 0.0
    i, j, weight = i[keep], j[keep], weight[keep] / (n * n)

    exact = _affine_collision_term(psi, e.v[i], e.v[j], kernel, tau)
    if exact is not None:
        return value + float((weight * exact).sum()), 0.0

    theta, xi = kernel.sample_angles(rng, mc_samples)
    totals = np.zeros(mc_samples)
    chunk = max(1, _CHUNK // mc_samples)
    for start in range(0, len(i), chunk):
        sl = slice(start, start + chunk)
        diff = _collision_samples(psi, e.r[i[sl]], e.v[i[sl]], e.v[j[sl]], theta, xi, tau)
        totals += (weight[sl, None] * diff).sum(axis=0)
    totals *= kernel.rate_factor
    return value + float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(mc_samples))


def _pairing(psi: TestFunction, e: Ensemble, tau: float = 0.0) -> float:
    return float(psi.value(e.r + tau * e.v, e.v).mean())


def _spacing(trajectory: Sequence[Ensemble]) -> np.ndarray:
    if len(trajectory) < 1:
        raise InvalidArgumentError("trajectory is empty")
    times = np.array([e.time for e in trajectory])
    steps = np.diff(times)
    if len(steps) and (np.any(steps <= 0.0) or np.ptp(steps) > 1e-9 * max(1.0, steps.max())):
        raise InvalidArgumentError("snapshots must be equally spaced in time", times=times.tolist())
    return times


def weak_form_residual(
    trajectory: Sequence[Ensemble],
    psi: TestFunction,
    kernel: Optional[CollisionKernel],
    mc_samples: int = 64,
    seed: int = 0,
) -> ResidualSeries:
    """<psi, mu_t> - <psi, mu_0> - left Riemann sum of <A psi, mu_s (x) mu_s>; kernel None means no collisions."""
    times = _spacing(trajectory)
    base = _pairing(psi, trajectory[0])
    residual, stderr = [0.0], [0.0]
    integral, variance = 0.0, 0.0
    for m in range(1, len(trajectory)):
        dt = times[m] - times[m - 1]
        rng = make_rng(seed, STREAM_GENERATOR, m - 1)
        value, err = pair_generator(psi, trajectory[m - 1], kernel, mc_samples, rng)
        integral += value * dt
        variance += (err * dt) ** 2
        residual.append(_pairing(psi, trajectory[m]) - base - integral)
        stderr.append(float(np.sqrt(variance)))
    return ResidualSeries(times=times.tolist(), residual=residual, stderr=stderr)


def mild_form_residual(
    trajectory: Sequence[Ensemble],
    psi: TestFunction,
    kernel: Optional[CollisionKernel],
    mc_samples: int = 64,
    seed: int = 0,
) -> ResidualSeries:
    """<psi, mu_t> - <S(t)psi, mu_0> - left Riemann sum of <B S(t - s)psi, mu_s (x) mu_s>."""
    times = _spacing(trajectory)
    t0 = times[0]
    residual, stderr = [0.0], [0.0]
    for k in range(1, len(trajectory)):
        integral, variance = 0.0, 0.0
        if kernel is not None:
            for m in range(k):
                dt = times[m + 1] - times[m]
                rng = make_rng(seed, STREAM_GENERATOR, m)
                value, err = pair_generator(psi, trajectory[m], kernel, mc_samples, rng,
                                            tau=times[k] - times[m], include_transport=False)
                integral += value * dt
                variance += (err * dt) ** 2
        free = _pairing(psi, trajectory[0], tau=times[k] - t0)
        residual.append(_pairing(psi, trajectory[k]) - free - integral)
        stderr.append(float(np.sqrt(variance)))
    return ResidualSeries(times=times.tolist(), residual=residual, stderr=stderr)
