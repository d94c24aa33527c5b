"""
Stability experiment: two particle systems started W1-close are evolved together,
their shifted distance is tracked, and a regime-appropriate majorant is fitted on
calibration seeds and checked on fresh seeds.
"""
import asyncio
import logging
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import cumulative_trapezoid

from analysis.models import OsgoodSpec, StabilityReport, StabilityRow
from analysis.moments import integrability_functional, moment_c_gamma, moment_report
from analysis.osgood import osgood_G, osgood_majorant
from common.errors import InvalidArgumentError
from common.utils import STREAM_COLLISIONS, STREAM_COLLISIONS_INDEPENDENT, STREAM_PERTURBATION, make_rng
from config import settings
from services.particle_system import SimConfig, energy_rate_cap, init_ensemble, perturb_ensemble, simulate
from services.transport_metrics import DiscreteMeasure, paired_w1_shifted, w1_shifted

logger = logging.getLogger(__name__)

CRN = "common-random-numbers"
INDEPENDENT = "independent"
# floor for fitted rate constants
K_FLOOR = 1e-12
VALIDATION_SLACK = 1e-9


class StabilityParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(ge=0.0)
    coupling_mode: Literal["common-random-numbers", "independent"] = CRN
    calibration_seeds: int = Field(default=3, ge=1)
    validation_seeds: int = Field(default=5, ge=0)
    safety: float = Field(default=settings.MAJORANT_SAFETY, ge=1.0)


class SeedSeries(BaseModel):
    """Distances and moments of one seed at the snapshot times."""

    seed: int
    times: List[float]
    w1: List[float]
    c_gamma_mu: List[float]
    c_gamma_nu: List[float]
    lambda_value: Optional[List[float]] = None
    second_moment: List[float]
    integrability: Optional[List[float]] = None

    def integral_one_plus_lambda(self) -> np.ndarray:
        lam = np.zeros(len(self.times)) if self.lambda_value is None else np.asarray(self.lambda_value)
        return cumulative_trapezoid(1.0 + lam, self.times, initial=0.0)


def regime_for(gamma: float) -> str:
    if gamma >= 0.0:
        return "loglinear"
    if gamma > -1.0:
        return "loglinear-lambda"
    return "lambda"


def run_seed(
    sim: SimConfig,
    params: StabilityParams,
    seed: int,
    times: Sequence[float],
    delta: float = settings.DELTA,
    lambda_cap: float = settings.LAMBDA_CAP,
    grid: int = settings.LAMBDA_GRID,
    integrability: bool = False,
) -> SeedSeries:
    cfg = sim.model_copy(update={"seed": seed})
    kernel = cfg.kernel
    mu0 = init_ensemble(cfg)
    nu0 = perturb_ensemble(mu0, params.epsilon, make_rng(seed, STREAM_PERTURBATION))
    # one majorant for both systems keeps the common-random-number coupling intact
    cap = cfg.rate_cap if cfg.rate_cap is not None else energy_rate_cap([mu0, nu0], kernel)
    nu_stream = STREAM_COLLISIONS if params.coupling_mode == CRN else STREAM_COLLISIONS_INDEPENDENT
    mu_path = simulate(cfg, times, initial=mu0, rate_cap=cap).snapshots
    nu_path = simulate(cfg, times, initial=nu0, rate_cap=cap, collision_stream=nu_stream).snapshots

    gamma_eff = max(kernel.gamma, -1.0)
    series: Dict[str, list] = {"w1": [], "c_mu": [], "c_nu": [], "lam": [], "m2": [], "int": []}
    for e_mu, e_nu in zip(mu_path, nu_path):
        t = e_mu.time
        mu, nu = DiscreteMeasure.from_ensemble(e_mu), DiscreteMeasure.from_ensemble(e_nu)
        if params.coupling_mode == CRN:
            series["w1"].append(paired_w1_shifted(mu, nu, t))
        else:
            series["w1"].append(w1_shifted(mu, nu, t).value)
        series["c_mu"].append(moment_c_gamma(mu, gamma_eff, delta))
        series["c_nu"].append(moment_c_gamma(nu, gamma_eff, delta))
        joint = moment_report([mu, nu], kernel.gamma, delta, lambda_cap, grid)
        if joint.divergent:
            logger.warning("seed %s: C_gamma diverges at t=%s (atom %s)", seed, t, joint.max_atom)
        series["m2"].append(joint.second_moment)
        if joint.lambda_value is not None:
            series["lam"].append(joint.lambda_value)
        if integrability:
            series["int"].append(integrability_functional(mu, kernel) + integrability_functional(nu, kernel))
    logger.debug("seed %s: final shifted distance %s", seed, series["w1"][-1])
    return SeedSeries(
        seed=seed,
        times=[e.time for e in mu_path],
        w1=series["w1"],
        c_gamma_mu=series["c_mu"],
        c_gamma_nu=series["c_nu"],
        lambda_value=series["lam"] if kernel.gamma < 0.0 else None,
        second_moment=series["m2"],
        integrability=series["int"] if integrability else None,
    )


async def _run_seeds(seeds: List[int], threads: int, **kwargs) -> List[SeedSeries]:
    semaphore = asyncio.Semaphore(max(1, threads))

    async def one(seed: int) -> SeedSeries:
        async with semaphore:
            return await asyncio.to_thread(run_seed, seed=seed, **kwargs)

    tasks = {seed: one(seed) for seed in seeds}
    results = await asyncio.gather(*tasks.values(), return_exceptions=True)
    for seed, result in zip(tasks.keys(), results):
        if isinstance(result, Exception):
            logger.error("Stability run for seed %s failed: %s", seed, str(result))
            raise result
    return list(results)


def _growth_points(regime: str, s: SeedSeries, horizon: float) -> List[tuple]:
    """(x, y) pairs whose slope y/x is the rate constant implied by one snapshot."""
    w = np.asarray(s.w1)
    w0 = w[0]
    if w0 <= 0.0:
        return []
    times = np.asarray(s.times)
    integral = s.integral_one_plus_lambda()
    points = []
    unit = OsgoodSpec(a=w0, rate="loglinear", K=1.0, T=max(horizon, 1e-12))
    for k in range(1, len(times)):
        if times[k] > horizon / 2.0 or w[k] <= 0.0:
            continue
        if regime == "lambda":
            points.append((integral[k], float(np.log(w[k] / w0))))
        else:
            points.append((times[k], float(osgood_G(unit, w0) - osgood_G(unit, w[k]))))
    return [(x, y) for x, y in points if x > 0.0]


def fit_rate_constant(regime: str, calibration: Sequence[SeedSeries], safety: float) -> float:
    """max(least-squares slope through the origin, envelope slope) times the safety factor."""
    points = [p for s in calibration for p in _growth_points(regime, s, s.times[-1])]
    if not points:
        return K_FLOOR
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    slope = float((x * y).sum() / (x * x).sum())
    envelope = float((y / x).max())
    return max(max(slope, envelope) * safety, K_FLOOR)


def majorant_series(regime: str, K: float, s: SeedSeries) -> np.ndarray:
    times = np.asarray(s.times)
    w0 = s.w1[0]
    if w0 <= 0.0:
        return np.zeros(len(times))
    if regime == "lambda":
        with np.errstate(over="ignore"):
            return w0 * np.exp(K * s.integral_one_plus_lambda())
    if times[-1] <= 0.0:
        return np.full(len(times), w0)
    spec = OsgoodSpec(a=w0, rate="loglinear", K=K, T=float(times[-1]))
    with np.errstate(over="ignore"):
        return np.asarray(osgood_majorant(spec, times))


def _violations(regime: str, K: float, s: SeedSeries) -> int:
    bound = majorant_series(regime, K, s) * (1.0 + VALIDATION_SLACK) + 1e-12
    return int((np.asarray(s.w1) > bound).sum())


def _normalized_constant(regime: str, K: float, s: SeedSeries) -> float:
    c_gamma = float(np.max(np.add(s.c_gamma_mu, s.c_gamma_nu)))
    if regime == "lambda":
        return K
    if not np.isfinite(c_gamma) or c_gamma <= 0.0:
        return 0.0
    if regime == "loglinear":
        return K / c_gamma
    lam = float(np.max(s.lambda_value)) if s.lambda_value else 1.0
    return K / (c_gamma * lam)


def stability_experiment(
    sim: SimConfig,
    params: StabilityParams,
    times: Optional[Sequence[float]] = None,
    delta: float = settings.DELTA,
    lambda_cap: float = settings.LAMBDA_CAP,
    grid: int = settings.LAMBDA_GRID,
    integrability: bool = False,
    threads: int = 1,
) -> StabilityReport:
    """Measured W1^t series of the configured seed with the majorant fitted on disjoint seeds."""
    if times is None:
        times = list(np.linspace(0.0, sim.t_end, 11))
    times = [float(t) for t in times]
    if not times or times[0] != 0.0:
        raise InvalidArgumentError("stability snapshot times must start at 0", times=times)
    regime = regime_for(sim.kernel.gamma)

    calibration = [sim.seed + k for k in range(1, params.calibration_seeds + 1)]
    fresh = [sim.seed + params.calibration_seeds + k for k in range(1, params.validation_seeds + 1)]
    validation = [sim.seed] + fresh
    kwargs = dict(
        sim=sim, params=params, times=times, delta=delta, lambda_cap=lambda_cap, grid=grid, integrability=integrability
    )
    runs = asyncio.run(_run_seeds(calibration + validation, threads, **kwargs))
    by_seed = {s.seed: s for s in runs}

    K = fit_rate_constant(regime, [by_seed[k] for k in calibration], params.safety)
    violations = sum(_violations(regime, K, by_seed[k]) for k in validation)
    if violations:
        logger.warning("Fitted %s majorant (K=%s) violated at %s snapshot(s)", regime, K, violations)

    report_run = by_seed[sim.seed]
    majorant = majorant_series(regime, K, report_run)
    rows = [
        StabilityRow(
            t=t,
            w1_shifted=report_run.w1[k],
            majorant=float(majorant[k]),
            c_gamma_mu=report_run.c_gamma_mu[k],
            c_gamma_nu=report_run.c_gamma_nu[k],
            lambda_value=None if report_run.lambda_value is None else report_run.lambda_value[k],
            second_moment=report_run.second_moment[k],
        )
        for k, t in enumerate(report_run.times)
    ]
    logger.info("Stability (%s, eps=%s): K=%s, %s validation violations", regime, params.epsilon, K, violations)
    return StabilityReport(
        regime=regime,
        coupling_mode=params.coupling_mode,
        epsilon=params.epsilon,
        K=K,
        K_normalized=_normalized_constant(regime, K, report_run),
        calibration_seeds=calibration,
        validation_seeds=validation,
        validation_violations=violations,
        integrability=report_run.integrability,
        rows=rows,
    )
