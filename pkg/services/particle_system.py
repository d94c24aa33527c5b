"""
N-particle approximation of the Enskog dynamics.

Each step applies free transport and then a Nanbu-style collision step: every
unordered pair is a candidate with probability dt * rate_cap / N, and candidates
are accepted with probability pair_rate / rate_cap.
"""
import logging
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from common.errors import ConfigError, InvalidArgumentError, MajorantViolationError
from common.utils import STREAM_COLLISIONS, STREAM_INIT, make_rng, row_norm
from services.collision_geometry import alpha
from services.kernels import CollisionKernel

logger = logging.getLogger(__name__)

# Relative slack for rounding when comparing a pair rate with the majorant
MAJORANT_SLACK = 1e-12


class Ensemble(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    r: np.ndarray
    v: np.ndarray
    time: float = 0.0
    step: int = 0

    @field_validator("r", "v", mode="before")
    @classmethod
    def _two_dimensional(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if value.ndim != 2 or value.shape[0] < 1:
            raise ValueError("phase coordinates must have shape (N, d) with N >= 1")
        if not np.all(np.isfinite(value)):
            raise ValueError("phase coordinates must be finite")
        return value

    @property
    def n(self) -> int:
        return int(self.r.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.r.shape[1])

    def copy(self) -> "Ensemble":
        return Ensemble(r=self.r.copy(), v=self.v.copy(), time=self.time, step=self.step)


class ConservedQuantities(BaseModel):
    mass: float
    momentum: List[float]
    energy: float


class EventLog(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = 0
    time: float = 0.0
    candidates: int = 0
    pairs: np.ndarray = Field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    thetas: np.ndarray = Field(default_factory=lambda: np.zeros(0))
    sigma_cap_events: int = 0
    rate_cap: float = 0.0

    @property
    def accepted(self) -> int:
        return int(self.pairs.shape[0])


class InitSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    law: str = "gaussian"
    r_mean: Optional[List[float]] = None
    r_std: float = Field(default=1.0, ge=0.0)
    v_mean: Optional[List[float]] = None
    v_std: float = Field(default=1.0, ge=0.0)
    radius: float = Field(default=1.0, gt=0.0)
    separation: float = Field(default=2.0, ge=0.0)
    v_shift: float = Field(default=1.0, ge=0.0)


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    dt: float = Field(gt=0.0)
    t_end: float = Field(ge=0.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    kernel: CollisionKernel = CollisionKernel()
    init: InitSpec = InitSpec()
    # None: majorant recomputed from the current speeds every step; 0 disables collisions
    rate_cap: Optional[float] = Field(default=None, ge=0.0)
    rate_headroom: float = Field(default=1.0, ge=1.0)


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    snapshots: List[Ensemble]
    logs: List[EventLog] = []

    @property
    def sigma_cap_events(self) -> int:
        return sum(log.sigma_cap_events for log in self.logs)

    @property
    def collisions(self) -> int:
        return sum(log.accepted for log in self.logs)


def _vector(values: Optional[List[float]], d: int, name: str) -> np.ndarray:
    if values is None:
        return np.zeros(d)
    if len(values) != d:
        raise ConfigError(f"{name} must have {d} components", key=f"sim.init.{name}")
    return np.asarray(values, dtype=float)


def _draw_gaussian(spec: InitSpec, n: int, d: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    r = _vector(spec.r_mean, d, "r_mean") + spec.r_std * rng.standard_normal((n, d))
    v = _vector(spec.v_mean, d, "v_mean") + spec.v_std * rng.standard_normal((n, d))
    return r, v


def _draw_uniform_ball(spec: InitSpec, n: int, d: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    direction = rng.standard_normal((n, d))
    direction /= row_norm(direction)[:, None]
    radius = spec.radius * rng.random(n) ** (1.0 / d)
    r = _vector(spec.r_mean, d, "r_mean") + radius[:, None] * direction
    v = _vector(spec.v_mean, d, "v_mean") + spec.v_std * rng.standard_normal((n, d))
    return r, v


def _draw_two_cluster(spec: InitSpec, n: int, d: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    e1 = np.zeros(d)
    e1[0] = 1.0
    r = _vector(spec.r_mean, d, "r_mean") + sign * (spec.separation / 2.0) * e1 + spec.r_std * rng.standard_normal((n, d))
    # clusters drift toward each other
    v = _vector(spec.v_mean, d, "v_mean") - sign * (spec.v_shift / 2.0) * e1 + spec.v_std * rng.standard_normal((n, d))
    return r, v


def _draw_point(spec: InitSpec, n: int, d: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    r = np.tile(_vector(spec.r_mean, d, "r_mean"), (n, 1))
    v = np.tile(_vector(spec.v_mean, d, "v_mean"), (n, 1))
    return r, v


class InitLaw(Enum):
    GAUSSIAN = ("gaussian", _draw_gaussian)
    UNIFORM_BALL = ("uniform_ball", _draw_uniform_ball)
    TWO_CLUSTER = ("two_cluster", _draw_two_cluster)
    POINT = ("point", _draw_point)

    @property
    def law_name(self) -> str:
        return self.value[0]

    @property
    def sampler(self) -> Callable[..., Tuple[np.ndarray, np.ndarray]]:
        return self.value[1]

    @classmethod
    def from_name(cls, name: str) -> "InitLaw":
        for law in cls:
            if law.law_name == name:
                return law
        raise ConfigError(f"unknown initial law '{name}'", key="sim.init.law",
                          allowed=[law.law_name for law in cls])


class EnsembleFactory:
    @staticmethod
    def create(spec: InitSpec, n: int, d: int, rng: np.random.Generator) -> Ensemble:
        law = InitLaw.from_name(spec.law)
        r, v = law.sampler(spec, n, d, rng)
        return Ensemble(r=r, v=v, time=0.0, step=0)


def init_ensemble(cfg: SimConfig, rng: Optional[np.random.Generator] = None) -> Ensemble:
    if rng is None:
        rng = make_rng(cfg.seed, STREAM_INIT)
    return EnsembleFactory.create(cfg.init, cfg.n, cfg.kernel.dimension, rng)


def perturb_ensemble(e: Ensemble, epsilon: float, rng: np.random.Generator) -> Ensemble:
    """Shift every velocity by epsilon along an independent uniform direction."""
    if epsilon < 0.0:
        raise InvalidArgumentError("epsilon must be nonnegative", epsilon=epsilon)
    direction = rng.standard_normal(e.v.shape)
    direction /= row_norm(direction)[:, None]
    return Ensemble(r=e.r.copy(), v=e.v + epsilon * direction, time=e.time, step=e.step)


def free_transport(e: Ensemble, dt: float) -> Ensemble:
    if dt < 0.0:
        raise InvalidArgumentError("transport step must be nonnegative", dt=dt)
    return Ensemble(r=e.r + dt * e.v, v=e.v.copy(), time=e.time + dt, step=e.step)


def conserved_quantities(e: Ensemble) -> ConservedQuantities:
    return ConservedQuantities(
        mass=1.0,
        momentum=[float(x) for x in e.v.mean(axis=0)],
        energy=float((e.v * e.v).sum(axis=1).mean()),
    )


def auto_rate_cap(ensembles: Sequence[Ensemble], kernel: CollisionKernel, headroom: float = 1.0) -> float:
    """Majorant of every pair rate: sigma bounded through 2 max|v| (hard) or sigma(z_min) (soft)."""
    vmax = max(float(row_norm(e.v).max()) for e in ensembles)
    return kernel.sigma_max(2.0 * vmax) * kernel.rate_factor * headroom


def energy_rate_cap(ensembles: Sequence[Ensemble], kernel: CollisionKernel) -> float:
    """Majorant valid for the whole run: kinetic energy bounds every relative speed."""
    # |v_i - v_j|^2 <= 2(|v_i|^2 + |v_j|^2) <= 2 * total energy
    bound = max(float(np.sqrt(2.0 * (e.v * e.v).sum())) for e in ensembles)
    return kernel.sigma_max(bound * (1.0 + 1e-9)) * kernel.rate_factor


def _unrank_pairs(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # colex order: k = j(j-1)/2 + i with 0 <= i < j
    k = k.astype(np.int64)
    j = np.floor((1.0 + np.sqrt(1.0 + 8.0 * k.astype(float))) / 2.0).astype(np.int64)
    j = np.where(j * (j - 1) // 2 > k, j - 1, j)
    j = np.where((j + 1) * j // 2 <= k, j + 1, j)
    i = k - j * (j - 1) // 2
    return i, j


def _conflict_free_batches(i: np.ndarray, j: np.ndarray) -> List[Tuple[int, int]]:
    batches = []
    start = 0
    seen: set = set()
    for k in range(len(i)):
        a, b = int(i[k]), int(j[k])
        if a in seen or b in seen:
            batches.append((start, k))
            start = k
            seen = set()
        seen.add(a)
        seen.add(b)
    if len(i) > start:
        batches.append((start, len(i)))
    return batches


def collision_step(
    e: Ensemble,
    dt: float,
    kernel: CollisionKernel,
    rate_cap: float,
    rng: np.random.Generator,
) -> Tuple[Ensemble, EventLog]:
    n = e.n
    log = EventLog(step=e.step, time=e.time, rate_cap=rate_cap)
    if n < 2 or rate_cap == 0.0:
        return e.copy(), log
    p = dt * rate_cap / n
    if p > 1.0:
        raise InvalidArgumentError("dt * rate_cap / N exceeds 1; reduce dt", dt=dt, rate_cap=rate_cap, n=n)

    pair_count = n * (n - 1) // 2
    k = int(rng.binomial(pair_count, p))
    ranks = np.sort(rng.choice(pair_count, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    i, j = _unrank_pairs(ranks)
    accept_u = rng.random(k)
    theta, xi = kernel.sample_angles(rng, k)
    log.candidates = k

    rate, capped = kernel.pair_rate(e.v[i], e.v[j], e.r[i], e.r[j])
    log.sigma_cap_events = int(capped.sum())
    over = rate > rate_cap * (1.0 + MAJORANT_SLACK)
    if np.any(over):
        worst = int(np.argmax(np.where(over, rate, -np.inf)))
        logger.error("Pair rate %s exceeds majorant %s for pair (%s, %s)", rate[worst], rate_cap, i[worst], j[worst])
        raise MajorantViolationError("pair rate exceeds rate_cap", pair=(i[worst], j[worst]),
                                     rate=rate[worst], cap=rate_cap)

    accepted = accept_u * rate_cap < rate
    i, j, theta, xi = i[accepted], j[accepted], theta[accepted], xi[accepted]
    v = e.v.copy()
    for start, stop in _conflict_free_batches(i, j):
        a = alpha(v[i[start:stop]], v[j[start:stop]], theta[start:stop], xi[start:stop])
        v[i[start:stop]] += a
        v[j[start:stop]] -= a

    log.pairs = np.stack([i, j], axis=1) if len(i) else np.zeros((0, 2), dtype=np.int64)
    log.thetas = theta
    logger.debug("step %s: %s candidates, %s collisions, %s sigma-cap events",
                 e.step, k, len(i), log.sigma_cap_events)
    return Ensemble(r=e.r.copy(), v=v, time=e.time, step=e.step), log


def snapshot_steps(times: Sequence[float], dt: float, t_end: float) -> List[int]:
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])):
        raise InvalidArgumentError("snapshot times must be sorted", times=times)
    if times and (times[0] < 0.0 or times[-1] > t_end + 1e-12 * max(1.0, t_end)):
        raise InvalidArgumentError("snapshot times must lie in [0, t_end]", times=times, t_end=t_end)
    return [int(round(t / dt)) for t in times]


def simulate(
    cfg: SimConfig,
    snapshot_times: Optional[Sequence[float]] = None,
    initial: Optional[Ensemble] = None,
    rate_cap: Optional[float] = None,
    collision_stream: int = STREAM_COLLISIONS,
) -> Trajectory:
    """Lie splitting (transport, then collisions) from 0 to t_end with deep snapshots."""
    if snapshot_times is None:
        snapshot_times = sorted({0.0, cfg.t_end})
    wanted = snapshot_steps(snapshot_times, cfg.dt, cfg.t_end)
    n_steps = int(round(cfg.t_end / cfg.dt))
    cap = cfg.rate_cap if rate_cap is None else rate_cap
    e = init_ensemble(cfg) if initial is None else initial.copy()

    snapshots: List[Ensemble] = [e.copy() for s in wanted if s == 0]
    logs: List[EventLog] = []
    for step in range(1, n_steps + 1):
        e = free_transport(e, cfg.dt)
        e.step = step
        e.time = step * cfg.dt
        step_cap = auto_rate_cap([e], cfg.kernel, cfg.rate_headroom) if cap is None else cap
        e, log = collision_step(e, cfg.dt, cfg.kernel, step_cap, make_rng(cfg.seed, collision_stream, step))
        logs.append(log)
        snapshots.extend(e.copy() for s in wanted if s == step)

    cap_events = sum(log.sigma_cap_events for log in logs)
    if cap_events:
        logger.warning("sigma was capped at z_min=%s in %s candidate pairs", cfg.kernel.z_min, cap_events)
    logger.info("Simulated %s steps of %s particles: %s collisions", n_steps, e.n, sum(log.accepted for log in logs))
    return Trajectory(snapshots=snapshots, logs=logs)


def run(cfg: SimConfig, snapshot_times: Optional[Sequence[float]] = None) -> List[Ensemble]:
    return simulate(cfg, snapshot_times).snapshots
