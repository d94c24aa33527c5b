"""
Collision parameterization in dimension d >= 3.

Every function accepts single vectors of shape (d,) or batches of shape (n, d);
angles are scalars or arrays of shape (n,), and xi has d-1 trailing components.
"""
import logging
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, field_validator, model_validator

from common.errors import DegenerateInputError, InvalidArgumentError
from common.utils import row_norm
from config import settings

logger = logging.getLogger(__name__)

# Below this value of 1 + cos(angle(X, Y)) the rotation goes through an intermediate direction
ANTIPARALLEL_THRESHOLD = 1e-6


class AngleParam(BaseModel):
    theta: float
    xi: List[float]

    @field_validator("theta")
    @classmethod
    def _theta_range(cls, value: float) -> float:
        if not 0.0 < value <= np.pi:
            raise ValueError("theta must lie in (0, pi]")
        return value

    @model_validator(mode="after")
    def _unit_xi(self) -> "AngleParam":
        if len(self.xi) < 2:
            raise ValueError("xi needs d-1 >= 2 components")
        if abs(float(np.linalg.norm(self.xi)) - 1.0) > settings.ALGEBRAIC_TOL:
            raise ValueError("xi must be a unit vector")
        return self

    def as_arrays(self) -> Tuple[float, np.ndarray]:
        return self.theta, np.asarray(self.xi, dtype=float)


def _as_vectors(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 3:
        raise InvalidArgumentError(f"{name} must have dimension d >= 3", shape=list(x.shape))
    return x


def _check_unit(xi: np.ndarray, name: str = "xi") -> None:
    err = np.abs(row_norm(xi) - 1.0)
    if np.any(err > settings.ALGEBRAIC_TOL):
        raise InvalidArgumentError(f"{name} must be a unit vector", max_error=float(np.max(err)))


def _check_xi(X: np.ndarray, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != X.shape[-1] - 1:
        raise InvalidArgumentError("xi must have d-1 components", d=int(X.shape[-1]), got=int(xi.shape[-1]))
    _check_unit(xi)
    return xi


def _reflector(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Householder vector u with H = I - 2uu^T/|u|^2 mapping X/|X| onto -sign(X_d) e_d."""
    nx = row_norm(X)
    safe = np.where(nx > 0.0, nx, 1.0)
    xhat = X / safe[..., None]
    sign = np.where(xhat[..., -1] >= 0.0, 1.0, -1.0)
    u = xhat.copy()
    u[..., -1] += sign
    return u, nx


def _reflect(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    coef = 2.0 * (u * w).sum(axis=-1) / (u * u).sum(axis=-1)
    return w - coef[..., None] * u


def frame(X: np.ndarray) -> np.ndarray:
    """Orthonormal basis of X^perp as the d-1 columns of the returned (..., d, d-1) array."""
    X = _as_vectors(X, "X")
    u, nx = _reflector(X)
    if np.any(nx == 0.0):
        raise DegenerateInputError("frame of the zero vector is undefined")
    d = X.shape[-1]
    H = np.eye(d) - 2.0 * u[..., :, None] * u[..., None, :] / (u * u).sum(axis=-1)[..., None, None]
    return H[..., :, : d - 1]


def gamma(X: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Point of the sphere S^{d-2}(X) of radius |X| orthogonal to X selected by xi; zero when X = 0."""
    X = _as_vectors(X, "X")
    xi = _check_xi(X, xi)
    u, nx = _reflector(X)
    shape = np.broadcast_shapes(X.shape[:-1], xi.shape[:-1]) + (X.shape[-1],)
    embedded = np.zeros(shape)
    embedded[..., :-1] = xi
    return nx[..., None] * _reflect(u, embedded)


def gamma_inverse(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Recover xi from w = gamma(X, xi)."""
    X = _as_vectors(X, "X")
    w = np.asarray(w, dtype=float)
    u, nx = _reflector(X)
    if np.any(nx == 0.0):
        raise DegenerateInputError("gamma(0, .) is not invertible")
    back = _reflect(u, w / nx[..., None])
    return back[..., :-1]


def alpha(v: np.ndarray, u: np.ndarray, theta, xi: np.ndarray) -> np.ndarray:
    v = _as_vectors(v, "v")
    u = _as_vectors(u, "u")
    theta = np.asarray(theta, dtype=float)
    X = u - v
    half = np.sin(theta / 2.0)
    return (half * half)[..., None] * X + (np.sin(theta) / 2.0)[..., None] * gamma(X, xi)


def deflect(v: np.ndarray, u: np.ndarray, theta, xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Post-collision velocities (v + alpha, u - alpha)."""
    a = alpha(v, u, theta, xi)
    return np.asarray(v, dtype=float) + a, np.asarray(u, dtype=float) - a


def deflect_n(v: np.ndarray, u: np.ndarray, n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Collision rule written with the unit direction n."""
    v = _as_vectors(v, "v")
    u = _as_vectors(u, "u")
    n = np.asarray(n, dtype=float)
    _check_unit(n, "n")
    c = ((u - v) * n).sum(axis=-1)[..., None]
    return v + c * n, u - c * n


def n_from_angles(v: np.ndarray, u: np.ndarray, theta, xi: np.ndarray) -> np.ndarray:
    v = _as_vectors(v, "v")
    u = _as_vectors(u, "u")
    X = u - v
    nx = row_norm(X)
    if np.any(nx == 0.0):
        raise DegenerateInputError("n is undefined for v = u")
    theta = np.asarray(theta, dtype=float)
    g = gamma(X, xi)
    return (np.sin(theta / 2.0)[..., None] * X + np.cos(theta / 2.0)[..., None] * g) / nx[..., None]


def deflection_angle(v: np.ndarray, u: np.ndarray, v_star: np.ndarray, u_star: np.ndarray) -> np.ndarray:
    """theta with (v - u, v* - u*) = cos(theta)|v - u||v* - u*|."""
    before = np.asarray(v, dtype=float) - np.asarray(u, dtype=float)
    after = np.asarray(v_star, dtype=float) - np.asarray(u_star, dtype=float)
    denom = row_norm(before) * row_norm(after)
    if np.any(denom == 0.0):
        raise DegenerateInputError("deflection angle undefined for equal velocities")
    cos = np.clip((before * after).sum(axis=-1) / denom, -1.0, 1.0)
    return np.arccos(cos)


def _plane_rotation(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Rotation in span{a, b} taking unit a to unit b, identity on the complement.
    # Written in the orthonormal pair (a, e) with e the unit part of b orthogonal to a.
    c = (a * b).sum(axis=-1)[..., None]
    e = b - c * a
    s = row_norm(e)[..., None]
    e = np.divide(e, s, out=np.zeros_like(e), where=s > 0.0)
    wa = (w * a).sum(axis=-1)[..., None]
    we = (w * e).sum(axis=-1)[..., None]
    return w + a * ((c - 1.0) * wa - s * we) + e * (s * wa + (c - 1.0) * we)


def _rotate(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    c = (a * b).sum(axis=-1)
    flipped = (1.0 + c) < ANTIPARALLEL_THRESHOLD
    if not np.any(flipped):
        return _plane_rotation(a, b, w)
    out = np.empty_like(w)
    direct = ~flipped
    if np.any(direct):
        out[direct] = _plane_rotation(a[direct], b[direct], w[direct])
    af, bf, wf = a[flipped], b[flipped], w[flipped]
    # Two quarter turns through a fixed direction m orthogonal to a - b.
    s = af - bf
    s /= row_norm(s)[:, None]
    k = np.argmin(np.abs(s), axis=1)
    m = np.zeros_like(s)
    m[np.arange(len(k)), k] = 1.0
    m -= (m * s).sum(axis=1)[:, None] * s
    m /= row_norm(m)[:, None]
    out[flipped] = _plane_rotation(m, bf, _plane_rotation(af, m, wf))
    return out


def tanaka_shift(X: np.ndarray, Y: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Angle xi0 with |gamma(X, xi) - gamma(Y, xi0)| <= 3|X - Y|, bijective in xi."""
    X = _as_vectors(X, "X")
    Y = _as_vectors(Y, "Y")
    xi = _check_xi(X, xi)
    nx = row_norm(X)
    ny = row_norm(Y)
    if np.any(nx == 0.0) or np.any(ny == 0.0):
        raise DegenerateInputError("tanaka_shift needs X != 0 and Y != 0")
    d = X.shape[-1]
    if Y.shape[-1] != d:
        raise InvalidArgumentError("X and Y must share the dimension", d=int(d), got=int(Y.shape[-1]))
    lead = np.broadcast_shapes(X.shape[:-1], Y.shape[:-1], xi.shape[:-1])
    X2 = np.broadcast_to(X, lead + (d,)).reshape(-1, d)
    Y2 = np.broadcast_to(Y, lead + (d,)).reshape(-1, d)
    xi2 = np.broadcast_to(xi, lead + (d - 1,)).reshape(-1, d - 1)
    nx2 = row_norm(X2)[:, None]
    ny2 = row_norm(Y2)[:, None]
    g = gamma(X2, xi2)
    w = (ny2 / nx2) * _rotate(X2 / nx2, Y2 / ny2, g)
    xi0 = gamma_inverse(Y2, w)
    xi0 /= row_norm(xi0)[:, None]
    return xi0.reshape(lead + (d - 1,))
