"""
Collision kernels: cross-section sigma, angular measure Q restricted to (eps, pi],
spatial rate beta and the exponent algebra of inverse-power potentials.
"""
import logging
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import cumulative_trapezoid, quad
from scipy.special import gamma as gamma_fn

from common.errors import (
    DivergentMeasureError,
    InvalidArgumentError,
    NonNormalizableError,
    SingularInputError,
)
from common.utils import row_norm
from config import settings

logger = logging.getLogger(__name__)


class SigmaForm(str, Enum):
    POWER = "power"
    TEMPERED = "tempered"


class AngularKind(str, Enum):
    LONGRANGE = "longrange"
    HARDSPHERE = "hardsphere"
    TABLE = "table"


class BetaProfile(str, Enum):
    BUMP = "bump"
    # beta == 1 everywhere; a test surrogate for rho -> infinity
    FLAT = "flat"


class Regime(str, Enum):
    VERY_SOFT = "very-soft"
    SOFT = "soft"
    MAXWELLIAN = "maxwellian"
    HARD = "hard"


class CrossSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    form: SigmaForm = SigmaForm.POWER
    gamma: float = Field(default=0.0, le=2.0)
    c_sigma: float = Field(default=1.0, ge=1.0)


class AngularMeasure(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: AngularKind = AngularKind.LONGRANGE
    nu: Optional[float] = Field(default=0.5, gt=0.0)
    cutoff_eps: float = Field(default=settings.CUTOFF_EPS, ge=0.0, lt=np.pi)
    table_theta: Optional[List[float]] = None
    table_density: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "AngularMeasure":
        if self.kind == AngularKind.LONGRANGE and self.nu is None:
            raise ValueError("longrange angular measure needs nu")
        if self.kind == AngularKind.TABLE:
            if not self.table_theta or not self.table_density:
                raise ValueError("table angular measure needs table_theta and table_density")
            if len(self.table_theta) != len(self.table_density) or len(self.table_theta) < 2:
                raise ValueError("table_theta and table_density must have equal length >= 2")
            theta = np.asarray(self.table_theta)
            if np.any(np.diff(theta) <= 0) or theta[0] < 0.0 or theta[-1] > np.pi:
                raise ValueError("table_theta must be increasing inside [0, pi]")
            if np.any(np.asarray(self.table_density) < 0.0):
                raise ValueError("table_density must be nonnegative")
        return self


class SpatialRate(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rho: float = Field(default=1.0, gt=0.0)
    profile: BetaProfile = BetaProfile.BUMP


class PotentialExponents(BaseModel):
    model_config = ConfigDict(frozen=True)

    s: float
    gamma: float
    nu: float
    regime: Regime


def exponents_from_s(s: float) -> PotentialExponents:
    if not s > 2.0:
        raise InvalidArgumentError("inverse-power exponent must satisfy s > 2", s=s)
    if s <= 3.0:
        regime = Regime.VERY_SOFT
    elif s < 5.0:
        regime = Regime.SOFT
    elif s == 5.0:
        regime = Regime.MAXWELLIAN
    else:
        regime = Regime.HARD
    return PotentialExponents(s=s, gamma=(s - 5.0) / (s - 1.0), nu=2.0 / (s - 1.0), regime=regime)


def sigma(cs: CrossSection, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise InvalidArgumentError("relative speed must be nonnegative")
    if cs.form == SigmaForm.TEMPERED:
        return (1.0 + z * z) ** (cs.gamma / 2.0)
    if cs.gamma == 0.0:
        return np.ones_like(z)
    if cs.gamma < 0.0 and np.any(z == 0.0):
        raise SingularInputError("power cross-section is singular at zero speed", gamma=cs.gamma)
    return z ** cs.gamma


def sigma_envelope(cs: CrossSection, z) -> np.ndarray:
    """Growth envelope c_sigma |z|^gamma (gamma <= 0) or c_sigma (1 + z^2)^(gamma/2) (gamma >= 0) bounding sigma."""
    z = np.asarray(z, dtype=float)
    if cs.gamma >= 0.0:
        return cs.c_sigma * (1.0 + z * z) ** (cs.gamma / 2.0)
    with np.errstate(divide="ignore"):
        return cs.c_sigma * np.where(z > 0.0, np.where(z > 0.0, z, 1.0) ** cs.gamma, np.inf)


def beta_rate(sr: SpatialRate, x) -> np.ndarray:
    """(1 - (|x|/rho)^2)^2 inside the ball of radius rho, zero outside."""
    dist = row_norm(x)
    if sr.profile == BetaProfile.FLAT:
        return np.ones_like(dist)
    s = 1.0 - (dist / sr.rho) ** 2
    return np.where(dist < sr.rho, s * s, 0.0)


def sphere_area(k: int) -> float:
    """Surface measure of the unit sphere S^{k-1} in R^k."""
    if k < 1:
        raise InvalidArgumentError("sphere dimension must be positive", k=k)
    return float(2.0 * np.pi ** (k / 2.0) / gamma_fn(k / 2.0))


def angular_density(am: AngularMeasure, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if am.kind == AngularKind.LONGRANGE:
        return theta ** (-1.0 - am.nu)
    if am.kind == AngularKind.HARDSPHERE:
        return np.sin(theta / 2.0) * np.cos(theta / 2.0)
    return np.interp(theta, am.table_theta, am.table_density, left=0.0, right=0.0)


def _table_grid(am: AngularMeasure) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(am.table_theta, dtype=float)
    density = np.asarray(am.table_density, dtype=float)
    if am.cutoff_eps > theta[0]:
        keep = theta > am.cutoff_eps
        start = np.interp(am.cutoff_eps, theta, density)
        theta = np.concatenate([[am.cutoff_eps], theta[keep]])
        density = np.concatenate([[start], density[keep]])
    return theta, density


def _require_normalizable(am: AngularMeasure) -> None:
    if am.kind == AngularKind.LONGRANGE and am.cutoff_eps == 0.0:
        raise NonNormalizableError("long-range angular measure needs a positive cutoff", nu=am.nu)


def angular_mass(am: AngularMeasure) -> float:
    """Q((eps, pi])."""
    _require_normalizable(am)
    eps = am.cutoff_eps
    if am.kind == AngularKind.LONGRANGE:
        return (eps ** -am.nu - np.pi ** -am.nu) / am.nu
    if am.kind == AngularKind.HARDSPHERE:
        return (1.0 + np.cos(eps)) / 2.0
    theta, density = _table_grid(am)
    return float(np.trapezoid(density, theta))


def angular_cdf(am: AngularMeasure, theta) -> np.ndarray:
    """Normalized distribution function of Q restricted to (eps, pi]."""
    eps = am.cutoff_eps
    mass = angular_mass(am)
    theta = np.clip(np.asarray(theta, dtype=float), max(eps, 1e-300), np.pi)
    if am.kind == AngularKind.LONGRANGE:
        return (eps ** -am.nu - theta ** -am.nu) / am.nu / mass
    if am.kind == AngularKind.HARDSPHERE:
        return (np.cos(eps) - np.cos(theta)) / 2.0 / mass
    grid, density = _table_grid(am)
    cdf = cumulative_trapezoid(density, grid, initial=0.0)
    return np.interp(theta, grid, cdf / cdf[-1])


def kappa(am: AngularMeasure) -> float:
    """Integral of theta against Q over (eps, pi]."""
    eps = am.cutoff_eps
    if am.kind == AngularKind.LONGRANGE:
        nu = am.nu
        if eps == 0.0 and nu >= 1.0:
            raise DivergentMeasureError("theta Q(dtheta) is not integrable at zero", nu=nu)
        if nu == 1.0:
            return float(np.log(np.pi / eps))
        return (np.pi ** (1.0 - nu) - eps ** (1.0 - nu)) / (1.0 - nu)
    if am.kind == AngularKind.HARDSPHERE:
        return (np.pi - np.sin(eps) + eps * np.cos(eps)) / 2.0
    theta, density = _table_grid(am)
    return float(np.trapezoid(theta * density, theta))


def kappa_quadrature(am: AngularMeasure) -> float:
    """Adaptive quadrature for kappa, independent of the closed forms."""
    eps = am.cutoff_eps
    if am.kind == AngularKind.LONGRANGE:
        if eps == 0.0:
            if am.nu >= 1.0:
                raise DivergentMeasureError("theta Q(dtheta) is not integrable at zero", nu=am.nu)
            # algebraic weight (theta - 0)^(-nu) handles the endpoint singularity
            value, _ = quad(lambda t: 1.0, 0.0, np.pi, weight="alg", wvar=(-am.nu, 0.0),
                            epsabs=settings.QUAD_TOL, epsrel=settings.QUAD_TOL)
            return float(value)
        return angular_moment(am, lambda t: t)
    return angular_moment(am, lambda t: t)


def angular_moment(am: AngularMeasure, f: Callable[[float], float]) -> float:
    """Integral of f(theta) Q(dtheta) over (eps, pi]."""
    eps = am.cutoff_eps
    if am.kind == AngularKind.TABLE:
        theta, density = _table_grid(am)
        fine = np.linspace(theta[0], theta[-1], 20 * len(theta) + 1)
        values = np.array([f(t) for t in fine]) * np.interp(fine, theta, density)
        return float(np.trapezoid(values, fine))
    _require_normalizable(am)
    value, _ = quad(lambda t: f(t) * float(angular_density(am, t)), eps, np.pi,
                    epsabs=settings.QUAD_TOL, epsrel=settings.QUAD_TOL, limit=200)
    return float(value)


def sample_theta(am: AngularMeasure, rng: np.random.Generator, size=None) -> np.ndarray:
    """Inverse-CDF draws from Q restricted to (eps, pi], normalized."""
    _require_normalizable(am)
    eps = am.cutoff_eps
    # U in (0, 1] so that theta stays strictly above eps
    U = 1.0 - rng.random(size)
    if am.kind == AngularKind.LONGRANGE:
        top = eps ** -am.nu
        theta = (top - U * (top - np.pi ** -am.nu)) ** (-1.0 / am.nu)
    elif am.kind == AngularKind.HARDSPHERE:
        theta = np.arccos(np.clip(np.cos(eps) - U * (1.0 + np.cos(eps)), -1.0, 1.0))
    else:
        grid, density = _table_grid(am)
        cdf = cumulative_trapezoid(density, grid, initial=0.0)
        theta = np.interp(U, cdf / cdf[-1], grid)
    return np.clip(theta, np.nextafter(eps, np.pi), np.pi)


def sample_xi(d: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform draws on S^{d-2}, as unit vectors of R^{d-1}."""
    if d < 3:
        raise InvalidArgumentError("dimension must be at least 3", d=d)
    shape = (d - 1,) if size is None else tuple(np.atleast_1d(size)) + (d - 1,)
    g = rng.standard_normal(shape)
    return g / row_norm(g)[..., None]


class CollisionKernel(BaseModel):
    """sigma, Q and beta bundled for a fixed dimension."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dimension: int = Field(default=3, ge=3)
    cross_section: CrossSection = CrossSection()
    angular: AngularMeasure = AngularMeasure()
    spatial: SpatialRate = SpatialRate()
    z_min: float = Field(default=settings.Z_MIN, gt=0.0)

    @model_validator(mode="after")
    def _gamma_above_minus_d(self) -> "CollisionKernel":
        if self.cross_section.gamma <= -self.dimension:
            raise ValueError("sigma.gamma must exceed -d")
        return self

    @property
    def gamma(self) -> float:
        return self.cross_section.gamma

    @property
    def sphere_area(self) -> float:
        return sphere_area(self.dimension - 1)

    @property
    def angular_mass(self) -> float:
        return angular_mass(self.angular)

    @property
    def kappa(self) -> float:
        return kappa(self.angular)

    @property
    def rate_factor(self) -> float:
        """mass(Q_eps) |S^{d-2}|, the total angular rate of one pair."""
        return self.angular_mass * self.sphere_area

    @property
    def singular(self) -> bool:
        return self.cross_section.form == SigmaForm.POWER and self.gamma < 0.0

    def sigma(self, z) -> np.ndarray:
        return sigma(self.cross_section, z)

    def sigma_envelope(self, z) -> np.ndarray:
        return sigma_envelope(self.cross_section, z)

    def sigma_max(self, speed_bound: float) -> float:
        """sup of the effective sigma over relative speeds <= speed_bound."""
        cs = self.cross_section
        if self.singular:
            return float(sigma(cs, self.z_min))
        if cs.gamma <= 0.0:
            return float(sigma(cs, 0.0))
        return float(sigma(cs, speed_bound))

    def effective_sigma(self, z) -> Tuple[np.ndarray, np.ndarray]:
        """sigma with speeds below z_min raised to z_min when sigma is singular; returns (values, capped)."""
        z = np.asarray(z, dtype=float)
        if not self.singular:
            return self.sigma(z), np.zeros(z.shape, dtype=bool)
        capped = z < self.z_min
        return self.sigma(np.maximum(z, self.z_min)), capped

    def beta(self, x) -> np.ndarray:
        return beta_rate(self.spatial, x)

    def pair_rate(self, v_i, v_j, r_i, r_j) -> Tuple[np.ndarray, np.ndarray]:
        """Total collision rate of each pair and the mask of sigma-cap events."""
        sig, capped = self.effective_sigma(row_norm(np.asarray(v_i) - np.asarray(v_j)))
        rate = sig * self.beta(np.asarray(r_i) - np.asarray(r_j)) * self.rate_factor
        return rate, capped

    def sample_angles(self, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
        theta = sample_theta(self.angular, rng, size)
        xi = sample_xi(self.dimension, rng, size)
        return theta, xi
