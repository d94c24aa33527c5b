"""
Moment functionals of discrete phase-space measures: the exponential velocity
moment C_gamma, the singular-potential functional Lambda, second moments and the
integrand Psi of the coupling inequality.
"""
import itertools
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from analysis.models import LambdaEstimate, MomentReport, PsiValue
from common.errors import InvalidArgumentError
from common.utils import row_norm
from config import settings
from services.kernels import CollisionKernel
from services.transport_metrics import DiscreteMeasure

logger = logging.getLogger(__name__)

_PROBE_CHUNK = 512

Measures = Union[DiscreteMeasure, Sequence[DiscreteMeasure]]


def _as_list(measures: Measures) -> Sequence[DiscreteMeasure]:
    if isinstance(measures, DiscreteMeasure):
        return [measures]
    if not measures:
        raise InvalidArgumentError("at least one measure is required")
    return list(measures)


def _c_gamma_terms(m: DiscreteMeasure, gamma: float, delta: float) -> np.ndarray:
    if not -1.0 <= gamma <= 2.0:
        raise InvalidArgumentError("gamma must lie in [-1, 2]", gamma=gamma)
    if delta <= 0.0:
        raise InvalidArgumentError("delta must be positive", delta=delta)
    speed = row_norm(m.v)
    with np.errstate(over="ignore"):
        return np.exp(delta * speed ** (1.0 + gamma)) + row_norm(m.r) ** (1.0 + delta)


def moment_c_gamma(m: DiscreteMeasure, gamma: float, delta: float = settings.DELTA) -> float:
    """sum_i w_i (exp(delta |v_i|^(1+gamma)) + |r_i|^(1+delta)); inf on overflow."""
    terms = _c_gamma_terms(m, gamma, delta)
    with np.errstate(over="ignore", invalid="ignore"):
        value = float((m.weights * terms).sum())
    if not np.isfinite(value):
        worst = int(np.argmax(np.where(np.isfinite(terms), terms, np.inf)))
        logger.warning("C_gamma diverges; largest contribution from atom %s", worst)
        return float("inf")
    return value


def second_moment(m: DiscreteMeasure) -> float:
    return float((m.weights * (m.v * m.v).sum(axis=1)).sum())


def _default_probes(velocities: np.ndarray, grid: int) -> np.ndarray:
    lo, hi = velocities.min(axis=0), velocities.max(axis=0)
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    lattice = np.array(list(itertools.product(*axes)))
    return np.concatenate([velocities, lattice])


def lambda_singular(
    measures: Measures,
    gamma: float,
    probes: Optional[np.ndarray] = None,
    cap: float = settings.LAMBDA_CAP,
    grid: int = settings.LAMBDA_GRID,
) -> LambdaEstimate:
    """
    max over probe velocities u of sum_i w_i min(|v_i - u|^gamma, cap), summed over the measures.

    Empirical measures make the supremum infinite at their atoms, so every term is
    capped; an atom sitting exactly on a probe contributes cap * w.
    """
    if gamma >= 0.0:
        raise InvalidArgumentError("Lambda needs gamma < 0", gamma=gamma)
    if cap <= 0.0:
        raise InvalidArgumentError("cap must be positive", cap=cap)
    items = _as_list(measures)
    v = np.concatenate([m.v for m in items])
    w = np.concatenate([m.weights for m in items])
    if probes is None:
        probes = _default_probes(v, grid)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[1] != v.shape[1]:
        raise InvalidArgumentError("probe dimension does not match the measures")

    best, best_hits = -np.inf, 0
    for start in range(0, len(probes), _PROBE_CHUNK):
        dist = cdist(probes[start:start + _PROBE_CHUNK], v)
        with np.errstate(divide="ignore"):
            terms = np.where(dist > 0.0, np.minimum(dist ** gamma, cap), cap)
        totals = terms @ w
        k = int(np.argmax(totals))
        if totals[k] > best:
            best = float(totals[k])
            best_hits = int((terms[k] >= cap).sum())
    if best_hits:
        logger.warning("Lambda estimate hit the cap %s on %s atoms", cap, best_hits)
    return LambdaEstimate(value=best, cap_hits=best_hits, cap=cap, probes=len(probes))


def moment_report(
    measures: Measures,
    gamma: float,
    delta: float = settings.DELTA,
    lambda_cap: float = settings.LAMBDA_CAP,
    grid: int = settings.LAMBDA_GRID,
) -> MomentReport:
    """C_gamma, Lambda (gamma < 0 only) and the second moment of the summed measures."""
    items = _as_list(measures)
    gamma_eff = max(gamma, -1.0)
    values = [moment_c_gamma(m, gamma_eff, delta) for m in items]
    c_gamma = float(sum(values))
    report = MomentReport(
        c_gamma=c_gamma,
        second_moment=sum(second_moment(m) for m in items),
        delta=delta,
        divergent=not np.isfinite(c_gamma),
    )
    if report.divergent:
        atoms = np.concatenate([_c_gamma_terms(m, gamma_eff, delta) for m in items])
        report.max_atom = int(np.argmax(np.where(np.isfinite(atoms), atoms, np.inf)))
    if gamma < 0.0:
        estimate = lambda_singular(items, gamma, cap=lambda_cap, grid=grid)
        report.lambda_value = estimate.value
        report.lambda_cap_hits = estimate.cap_hits
    return report


def integrability_functional(m: DiscreteMeasure, kernel: CollisionKernel) -> float:
    """sum_ij w_i w_j (|v_i| + |v_j| + |r_i| + |r_j|) sigma(|v_i - v_j|), sigma capped below z_min."""
    size = row_norm(m.v) + row_norm(m.r)
    total = 0.0
    for start in range(0, m.size, _PROBE_CHUNK):
        sl = slice(start, start + _PROBE_CHUNK)
        sig, _ = kernel.effective_sigma(cdist(m.v[sl], m.v))
        total += float(m.weights[sl] @ ((size[sl, None] + size[None, :]) * sig) @ m.weights)
    return total


Pair = Tuple[Tuple[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def psi_integrand(pair1: Pair, pair0: Pair, kernel: CollisionKernel) -> PsiValue:
    """
    Psi = (|v - u| + |v~ - u~|) |s - s~| + (|v - v~| + |u - u~|) min(s, s~)

    with s = sigma(|v - u|) beta(r - q) and s~ the same on the tilde copy.
    pair1 = ((r, v), (r~, v~)) and pair0 = ((q, u), (q~, u~)). sigma is not capped.
    """
    (r, v), (rt, vt) = ((np.asarray(a, dtype=float), np.asarray(b, dtype=float)) for a, b in pair1)
    (q, u), (qt, ut) = ((np.asarray(a, dtype=float), np.asarray(b, dtype=float)) for a, b in pair0)
    z, zt = row_norm(v - u), row_norm(vt - ut)
    s = kernel.sigma(z) * kernel.beta(r - q)
    st = kernel.sigma(zt) * kernel.beta(rt - qt)
    return PsiValue(
        rate_term=np.asarray((z + zt) * np.abs(s - st)),
        velocity_term=np.asarray((row_norm(v - vt) + row_norm(u - ut)) * np.minimum(s, st)),
    )
