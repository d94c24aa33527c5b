# analysis/models.py
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator


# max |phi'(s)| for phi(s) = (1 - s^2)^2 on [-1, 1], reached at s = 1/sqrt(3)
_BUMP_SLOPE = 8.0 / (3.0 * np.sqrt(3.0))


def _bump(s: np.ndarray) -> np.ndarray:
    inside = np.abs(s) < 1.0
    return np.where(inside, (1.0 - s * s) ** 2, 0.0)


def _bump_slope(s: np.ndarray) -> np.ndarray:
    inside = np.abs(s) < 1.0
    return np.where(inside, -4.0 * s * (1.0 - s * s), 0.0)


class TestFunction(BaseModel):
    """
    Closed library of C^1 test functions psi(r, v) with analytic gradients.

    coordinate_r and coordinate_v are unbounded and only meant for test mode.
    """

    __test__ = False
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constant", "coordinate_r", "coordinate_v", "gaussian_bump", "tensor_poly_bump"]
    dimension: int = Field(default=3, ge=3)
    index: int = Field(default=0, ge=0)
    center: Optional[List[float]] = None
    width: float = Field(default=1.0, gt=0.0)
    half_width: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def _check(self) -> "TestFunction":
        if self.index >= self.dimension:
            raise ValueError("index must be below the dimension")
        if self.center is not None and len(self.center) != 2 * self.dimension:
            raise ValueError("center needs 2d components (r then v)")
        return self

    @property
    def bounded(self) -> bool:
        return self.kind not in ("coordinate_r", "coordinate_v")

    def _centers(self):
        c = np.zeros(2 * self.dimension) if self.center is None else np.asarray(self.center, dtype=float)
        return c[: self.dimension], c[self.dimension:]

    def value(self, r, v) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "constant":
            return np.ones(r.shape[:-1])
        if self.kind == "coordinate_r":
            return r[..., self.index].copy()
        if self.kind == "coordinate_v":
            return v[..., self.index].copy()
        cr, cv = self._centers()
        if self.kind == "gaussian_bump":
            sq = ((r - cr) ** 2).sum(axis=-1) + ((v - cv) ** 2).sum(axis=-1)
            return np.exp(-sq / (2.0 * self.width ** 2))
        s = np.concatenate([r - cr, v - cv], axis=-1) / self.half_width
        return _bump(s).prod(axis=-1)

    def grad_r(self, r, v) -> np.ndarray:
        return self._grad(r, v)[0]

    def grad_v(self, r, v) -> np.ndarray:
        return self._grad(r, v)[1]

    def _grad(self, r, v):
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        d = self.dimension
        zeros = np.zeros(np.broadcast_shapes(r.shape, v.shape))
        if self.kind == "constant":
            return zeros, zeros.copy()
        if self.kind == "coordinate_r":
            gr = zeros.copy()
            gr[..., self.index] = 1.0
            return gr, zeros
        if self.kind == "coordinate_v":
            gv = zeros.copy()
            gv[..., self.index] = 1.0
            return zeros, gv
        cr, cv = self._centers()
        if self.kind == "gaussian_bump":
            psi = self.value(r, v)[..., None]
            return -(r - cr) / self.width ** 2 * psi, -(v - cv) / self.width ** 2 * psi
        s = np.concatenate([r - cr, v - cv], axis=-1) / self.half_width
        phi = _bump(s)
        grad = np.empty_like(s)
        for k in range(2 * d):
            others = np.delete(phi, k, axis=-1).prod(axis=-1)
            grad[..., k] = _bump_slope(s[..., k]) / self.half_width * others
        return grad[..., :d], grad[..., d:]

    def sup_grad_r(self) -> float:
        """sup of |grad_r psi| over phase space."""
        if self.kind in ("constant", "coordinate_v"):
            return 0.0
        if self.kind == "coordinate_r":
            return 1.0
        return self._sup_grad_block()

    def sup_grad_v(self) -> float:
        if self.kind in ("constant", "coordinate_r"):
            return 0.0
        if self.kind == "coordinate_v":
            return 1.0
        return self._sup_grad_block()

    def _sup_grad_block(self) -> float:
        if self.kind == "gaussian_bump":
            return float(np.exp(-0.5) / self.width)
        return float(np.sqrt(self.dimension) * _BUMP_SLOPE / self.half_width)

    def lipschitz(self) -> float:
        """Lipschitz constant with respect to |r - q| + |v - u|."""
        return max(self.sup_grad_r(), self.sup_grad_v())

    def max_grad_v_ball(self, r, radius) -> np.ndarray:
        """Upper bound of max |grad_v psi(r, zeta)| over |zeta| <= radius."""
        r = np.asarray(r, dtype=float)
        radius = np.asarray(radius, dtype=float)
        shape = np.broadcast_shapes(r.shape[:-1], radius.shape)
        if self.kind in ("constant", "coordinate_r"):
            return np.zeros(shape)
        if self.kind == "coordinate_v":
            return np.ones(shape)
        cr, cv = self._centers()
        if self.kind == "gaussian_bump":
            # |grad_v| = rho/w^2 exp(-rho^2/(2w^2)) exp(-|r-cr|^2/(2w^2)) with rho = |zeta - cv|, peaked at rho = w
            w = self.width
            c_norm = float(np.linalg.norm(cv))
            lo = np.maximum(c_norm - radius, 0.0)
            hi = c_norm + radius
            rho = np.clip(w, lo, hi)
            spatial = np.exp(-((r - cr) ** 2).sum(axis=-1) / (2.0 * w * w))
            return np.broadcast_to(rho / (w * w) * np.exp(-rho * rho / (2.0 * w * w)) * spatial, shape).copy()
        spatial = _bump((r - cr) / self.half_width).prod(axis=-1)
        return np.broadcast_to(spatial * np.sqrt(self.dimension) * _BUMP_SLOPE / self.half_width, shape).copy()


class MomentReport(BaseModel):
    c_gamma: float
    lambda_value: Optional[float] = None
    lambda_cap_hits: int = 0
    second_moment: float
    delta: float
    divergent: bool = False
    max_atom: Optional[int] = None


class PsiValue(BaseModel):
    """Coupling integrand split into its rate-difference and velocity-difference parts."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rate_term: np.ndarray
    velocity_term: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return self.rate_term + self.velocity_term

    def __float__(self) -> float:
        return float(self.value)


class LambdaEstimate(BaseModel):
    value: float
    cap_hits: int
    cap: float
    probes: int


class OsgoodSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    a: float = Field(ge=0.0)
    rate: Literal["linear", "loglinear"] = "loglinear"
    K: float = Field(gt=0.0)
    T: float = Field(default=1.0, gt=0.0)

    def g(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.rate == "linear":
            return self.K * x
        with np.errstate(divide="ignore"):
            return np.where(x > 0.0, self.K * x * (1.0 + np.abs(np.log(np.where(x > 0.0, x, 1.0)))), 0.0)


class ResidualSeries(BaseModel):
    times: List[float]
    residual: List[float]
    stderr: List[float]


class StabilityRow(BaseModel):
    t: float
    w1_shifted: float
    majorant: float
    c_gamma_mu: float
    c_gamma_nu: float
    lambda_value: Optional[float] = None
    second_moment: float


class StabilityReport(BaseModel):
    regime: Literal["loglinear", "loglinear-lambda", "lambda"]
    coupling_mode: str
    epsilon: float
    K: float
    K_normalized: float
    calibration_seeds: List[int]
    validation_seeds: List[int]
    validation_violations: int
    # sum of the integrability functional over both systems, one entry per snapshot
    integrability: Optional[List[float]] = None
    rows: List[StabilityRow]

    @computed_field
    @property
    def validated(self) -> bool:
        return self.validation_violations == 0


class AuditReport(BaseModel):
    family: str
    samples: int
    max_ratio: float
    # None for families without an explicit constant
    violations: Optional[int] = None
    constant: Optional[float] = None
    excluded: int = 0
