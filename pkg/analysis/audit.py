"""
Sampled audits of the pointwise inequalities behind the stability estimates.

Each family draws random inputs, evaluates the left-hand side and the right-hand
side without its constant, and reports the largest ratio. Families with an explicit
constant also count violations.
"""
import logging
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from analysis.generator import collision_integral
from analysis.models import AuditReport, TestFunction
from analysis.moments import psi_integrand
from common.errors import InvalidArgumentError
from common.utils import row_norm
from config import settings
from services.collision_geometry import alpha, gamma, tanaka_shift
from services.kernels import CollisionKernel

logger = logging.getLogger(__name__)

# relative slack for rounding in the explicit-constant families
AUDIT_SLACK = 1e-9
# angle draws per input in the generator-bound families
GENERATOR_MC = 16

Evaluator = Callable[[CollisionKernel, int, np.random.Generator, float], Tuple[np.ndarray, np.ndarray]]


class GammaRange(NamedTuple):
    """Admissible gamma interval; a missing lower end means -d (open)."""

    low: Optional[float] = None
    high: Optional[float] = 2.0
    low_open: bool = True
    high_open: bool = False

    def contains(self, gamma_value: float, d: int) -> bool:
        low = -d if self.low is None else self.low
        above = gamma_value > low if self.low_open or self.low is None else gamma_value >= low
        if self.high is None:
            return above
        below = gamma_value < self.high if self.high_open else gamma_value <= self.high
        return above and below

    def describe(self) -> str:
        low = "-d" if self.low is None else f"{self.low:g}"
        high = "inf" if self.high is None else f"{self.high:g}"
        left = "(" if self.low_open or self.low is None else "["
        right = ")" if self.high_open else "]"
        return f"{left}{low}, {high}{right}"


ANY_GAMMA = GammaRange()


class AuditFamily:
    def __init__(self, name: str, evaluate: Evaluator, constant: Optional[float], gamma_range: GammaRange):
        self.name = name
        self.evaluate = evaluate
        self.constant = constant
        self.gamma_range = gamma_range

    def check_kernel(self, kernel: CollisionKernel) -> None:
        if not self.gamma_range.contains(kernel.gamma, kernel.dimension):
            raise InvalidArgumentError(
                "kernel gamma outside the family's range",
                family=self.name,
                gamma=kernel.gamma,
                allowed=self.gamma_range.describe(),
            )


class AuditRegistry:
    """Named inequality families."""

    def __init__(self) -> None:
        self._families: Dict[str, AuditFamily] = {}

    def register(self, name: str, constant: Optional[float] = None, gamma_range: GammaRange = ANY_GAMMA):
        def wrap(fn: Evaluator) -> Evaluator:
            self._families[name] = AuditFamily(name, fn, constant, gamma_range)
            return fn

        return wrap

    def get(self, name: str) -> AuditFamily:
        family = self._families.get(name)
        if family is None:
            raise InvalidArgumentError("unknown audit family", family=name, known=self.names())
        return family

    def names(self) -> List[str]:
        return sorted(self._families)


registry = AuditRegistry()


# -- samplers ---------------------------------------------------------------

def _vectors(rng: np.random.Generator, n: int, d: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Gaussian directions with log-uniform magnitudes between 10^lo and 10^hi."""
    return rng.standard_normal((n, d)) * 10.0 ** rng.uniform(lo, hi, size=(n, 1))


def _nearby(rng: np.random.Generator, x: np.ndarray, lo: float = -4.0, hi: float = 0.0) -> np.ndarray:
    return x + _vectors(rng, x.shape[0], x.shape[1], lo, hi)


def _angles(rng: np.random.Generator, n: int, d: int) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.pi * (1.0 - rng.random(n))
    xi = rng.standard_normal((n, d - 1))
    return theta, xi / row_norm(xi)[:, None]


class _Coupled(NamedTuple):
    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    u: np.ndarray
    rt: np.ndarray
    vt: np.ndarray
    qt: np.ndarray
    ut: np.ndarray


def _coupled(rng: np.random.Generator, n: int, d: int) -> _Coupled:
    r, q = _vectors(rng, n, d, -1.5, 0.5), _vectors(rng, n, d, -1.5, 0.5)
    v, u = _vectors(rng, n, d), _vectors(rng, n, d)
    return _Coupled(r, v, q, u, _nearby(rng, r), _nearby(rng, v), _nearby(rng, q), _nearby(rng, u))


def _bracket(x: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + (x * x).sum(axis=-1))


def _speeds(p: _Coupled) -> Tuple[np.ndarray, np.ndarray]:
    return row_norm(p.v - p.u), row_norm(p.vt - p.ut)


def _dv(p: _Coupled) -> np.ndarray:
    return row_norm(p.v - p.vt) + row_norm(p.u - p.ut)


def _dr(p: _Coupled) -> np.ndarray:
    return row_norm(p.r - p.rt) + row_norm(p.q - p.qt)


def _bracket_sum(p: _Coupled, power: float) -> np.ndarray:
    return sum(_bracket(x) ** power for x in (p.v, p.u, p.vt, p.ut))


def _sigma_gap(kernel: CollisionKernel, p: _Coupled) -> np.ndarray:
    z, zt = _speeds(p)
    return (z + zt) * np.abs(kernel.sigma(z) - kernel.sigma(zt))


def _rate_gap(kernel: CollisionKernel, p: _Coupled) -> np.ndarray:
    z, zt = _speeds(p)
    s = kernel.sigma(z) * kernel.beta(p.r - p.q)
    st = kernel.sigma(zt) * kernel.beta(p.rt - p.qt)
    return (z + zt) * np.abs(s - st)


def _psi(kernel: CollisionKernel, p: _Coupled) -> np.ndarray:
    return psi_integrand(((p.r, p.v), (p.rt, p.vt)), ((p.q, p.u), (p.qt, p.ut)), kernel).value


def _speed_powers(kernel: CollisionKernel, p: _Coupled, shift: float = 0.0) -> np.ndarray:
    z, zt = _speeds(p)
    return z ** (kernel.gamma + shift) + zt ** (kernel.gamma + shift)


def _soft_bound(kernel: CollisionKernel, p: _Coupled, spatial: np.ndarray) -> np.ndarray:
    return spatial * _dr(p) + _speed_powers(kernel, p) * _dv(p)


def _bump_function(d: int) -> TestFunction:
    return TestFunction(kind="gaussian_bump", dimension=d, width=1.0)


# -- families with explicit constants ---------------------------------------

@registry.register("tanaka", constant=3.0)
def _tanaka(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    d = kernel.dimension
    X = _vectors(rng, n, d)
    mode = rng.integers(0, 3, size=n)[:, None]
    Y = np.where(mode == 0, _nearby(rng, X, -6.0, 0.0),
                 np.where(mode == 1, _nearby(rng, -X, -6.0, 0.0), _vectors(rng, n, d)))
    xi = _angles(rng, n, d)[1]
    lhs = row_norm(gamma(X, xi) - gamma(Y, tanaka_shift(X, Y, xi)))
    return lhs, row_norm(X - Y)


@registry.register("deflection", constant=2.0)
def _deflection(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    d = kernel.dimension
    v, u = _vectors(rng, n, d), _vectors(rng, n, d)
    far = rng.random(n)[:, None] < 0.1
    vt = np.where(far, _vectors(rng, n, d), _nearby(rng, v, -6.0, 0.0))
    ut = np.where(far, _vectors(rng, n, d), _nearby(rng, u, -6.0, 0.0))
    theta, xi = _angles(rng, n, d)
    xi0 = tanaka_shift(u - v, ut - vt, xi)
    lhs = row_norm(alpha(v, u, theta, xi) - alpha(vt, ut, theta, xi0))
    return lhs, theta * (row_norm(v - vt) + row_norm(u - ut))


@registry.register("test_function_increment", constant=1.0)
def _test_function_increment(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    d = kernel.dimension
    psi = _bump_function(d)
    r, v, u = _vectors(rng, n, d, -1.0, 0.5), _vectors(rng, n, d), _vectors(rng, n, d)
    theta, xi = _angles(rng, n, d)
    lhs = np.abs(psi.value(r, v + alpha(v, u, theta, xi)) - psi.value(r, v))
    radius = 2.0 * (row_norm(v) + row_norm(u))
    return lhs, theta * row_norm(v - u) * psi.max_grad_v_ball(r, radius)


@registry.register("sigma_envelope", constant=1.0)
def _sigma_envelope(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    z = 10.0 ** rng.uniform(-3.0, 3.0, size=n)
    return kernel.sigma(z), kernel.sigma_envelope(z)


# -- ratio-only families ----------------------------------------------------

@registry.register("hard_sigma_lipschitz", gamma_range=GammaRange(0.0, 2.0, False, False))
def _hard_sigma_lipschitz(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    return _sigma_gap(kernel, p), _speed_powers(kernel, p) * _dv(p)


@registry.register("hard_rate_lipschitz", gamma_range=GammaRange(0.0, 2.0, False, False))
def _hard_rate_lipschitz(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    g = kernel.gamma
    return _rate_gap(kernel, p), _bracket_sum(p, g) * _dv(p) + _bracket_sum(p, 1.0 + g) * _dr(p)


@registry.register("soft_sigma_lipschitz", gamma_range=GammaRange(None, 0.0, True, False))
def _soft_sigma_lipschitz(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    return _sigma_gap(kernel, p), _speed_powers(kernel, p) * _dv(p)


@registry.register("soft_rate_lipschitz", gamma_range=GammaRange(-1.0, 0.0, True, False))
def _soft_rate_lipschitz(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    return _rate_gap(kernel, p), _soft_bound(kernel, p, _bracket_sum(p, 1.0 + kernel.gamma))


@registry.register("very_soft_rate_lipschitz", gamma_range=GammaRange(None, -1.0, True, False))
def _very_soft_rate_lipschitz(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    return _rate_gap(kernel, p), _soft_bound(kernel, p, _speed_powers(kernel, p, 1.0))


@registry.register("hard_coupling_integrand", gamma_range=GammaRange(0.0, 2.0, False, False))
def _hard_coupling_integrand(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    k = 1.0 + kernel.gamma
    first = row_norm(p.v - p.vt) + row_norm(p.r - p.rt)
    second = row_norm(p.u - p.ut) + row_norm(p.q - p.qt)
    with np.errstate(over="ignore"):
        base = (
            (np.exp(delta * _bracket(p.u) ** k) + np.exp(delta * _bracket(p.ut) ** k)) * first
            + (np.exp(delta * _bracket(p.v) ** k) + np.exp(delta * _bracket(p.vt) ** k)) * second
            + (_bracket(p.v) ** k + _bracket(p.vt) ** k) * first
            + (_bracket(p.u) ** k + _bracket(p.ut) ** k) * second
        )
    return _psi(kernel, p), base


@registry.register("very_soft_coupling_integrand", gamma_range=GammaRange(None, -1.0, True, False))
def _very_soft_coupling_integrand(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    return _psi(kernel, p), _soft_bound(kernel, p, _speed_powers(kernel, p, 1.0))


@registry.register("soft_coupling_integrand", gamma_range=GammaRange(-1.0, 0.0, True, True))
def _soft_coupling_integrand(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    p = _coupled(rng, n, kernel.dimension)
    return _psi(kernel, p), _soft_bound(kernel, p, _bracket_sum(p, 1.0 + kernel.gamma))


@registry.register("generator_bound")
def _generator_bound(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    d = kernel.dimension
    psi = _bump_function(d)
    r, q = _vectors(rng, n, d, -1.5, 0.5), _vectors(rng, n, d, -1.5, 0.5)
    v, u = _vectors(rng, n, d), _vectors(rng, n, d)
    z = row_norm(v - u)
    sig, _ = kernel.effective_sigma(z)
    collision, _ = collision_integral(psi, r, v, u, kernel, GENERATOR_MC, rng)
    lhs = np.abs((v * psi.grad_r(r, v)).sum(axis=-1) + sig * kernel.beta(r - q) * collision)
    base = psi.sup_grad_r() * row_norm(v) + psi.sup_grad_v() * z * sig * kernel.sphere_area * kernel.kappa
    return lhs, base


@registry.register("collision_operator_bound")
def _collision_operator_bound(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    d = kernel.dimension
    psi = _bump_function(d)
    r, q = _vectors(rng, n, d, -1.5, 0.5), _vectors(rng, n, d, -1.5, 0.5)
    v, u = _vectors(rng, n, d), _vectors(rng, n, d)
    z = row_norm(v - u)
    sig, _ = kernel.effective_sigma(z)
    collision, _ = collision_integral(psi, r, v, u, kernel, GENERATOR_MC, rng)
    return np.abs(sig * kernel.beta(r - q) * collision), z * sig * psi.lipschitz()


@registry.register("integrability", gamma_range=GammaRange(0.0, 2.0, False, False))
def _integrability(kernel: CollisionKernel, n: int, rng: np.random.Generator, delta: float):
    d = kernel.dimension
    r, q = _vectors(rng, n, d), _vectors(rng, n, d)
    v, u = _vectors(rng, n, d), _vectors(rng, n, d)
    lhs = (row_norm(v) + row_norm(u) + row_norm(r) + row_norm(q)) * kernel.sigma(row_norm(v - u))
    tail = 2.0 + 2.0 / delta
    base = _bracket(v) ** 3 * _bracket(u) ** 3 + (
        (_bracket(r) ** (1.0 + delta) + _bracket(v) ** tail) * (_bracket(q) ** (1.0 + delta) + _bracket(u) ** tail)
    )
    return lhs, base


# -- driver -----------------------------------------------------------------

def audit_inequality(
    family: str,
    samples: int,
    rng: np.random.Generator,
    kernel: Optional[CollisionKernel] = None,
    delta: float = settings.DELTA,
    batch: int = settings.AUDIT_BATCH,
) -> AuditReport:
    """Largest sampled LHS/RHS ratio of one family; 0/0 samples are excluded."""
    if samples < 1:
        raise InvalidArgumentError("samples must be positive", samples=samples)
    if delta <= 0.0:
        raise InvalidArgumentError("delta must be positive", delta=delta)
    fam = registry.get(family)
    kernel = kernel or CollisionKernel()
    fam.check_kernel(kernel)

    max_ratio, violations, excluded, done = 0.0, 0, 0, 0
    while done < samples:
        size = min(batch, samples - done)
        lhs, base = fam.evaluate(kernel, size, rng, delta)
        valid = (base > 0.0) & np.isfinite(base) & np.isfinite(lhs)
        excluded += int(size - valid.sum())
        if valid.any():
            ratio = lhs[valid] / base[valid]
            max_ratio = max(max_ratio, float(ratio.max()))
            if fam.constant is not None:
                violations += int((ratio > fam.constant * (1.0 + AUDIT_SLACK)).sum())
        done += size

    if violations:
        logger.warning("Audit %s: %s violations of constant %s", fam.name, violations, fam.constant)
    logger.info("Audit %s: max ratio %s over %s samples (%s excluded)", fam.name, max_ratio, samples, excluded)
    return AuditReport(
        family=fam.name,
        samples=samples,
        max_ratio=max_ratio,
        violations=violations if fam.constant is not None else None,
        constant=fam.constant,
        excluded=excluded,
    )
