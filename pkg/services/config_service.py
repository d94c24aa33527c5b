import json
import logging
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from analysis.audit import registry as audit_registry
from analysis.stability import StabilityParams
from common.errors import ConfigError, InvalidArgumentError, LabIOError
from config import settings
from services.kernels import AngularMeasure, CollisionKernel, CrossSection, SpatialRate
from services.particle_system import InitSpec, SimConfig, snapshot_steps

logger = logging.getLogger(__name__)

MODE_BLOCKS = {
    "simulate": ["sim"],
    "stability": ["sim", "stability"],
    "metrics": ["metrics"],
    "audit": ["audit"],
}


class MomentsBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delta: float = Field(default=settings.DELTA, gt=0.0)
    lambda_cap: float = Field(default=settings.LAMBDA_CAP, gt=0.0)
    probe_grid: int = Field(default=settings.LAMBDA_GRID, ge=1)
    # None: Lambda is computed exactly when gamma < 0
    lambda_probes: Optional[bool] = None
    # report the integrability functional of both systems in stability_fit.json
    integrability: bool = False


class SimBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    dt: float = Field(gt=0.0)
    t_end: float = Field(ge=0.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    snapshot_times: Optional[List[float]] = None
    init: InitSpec = InitSpec()
    rate_cap: Optional[float] = Field(default=None, ge=0.0)
    rate_headroom: float = Field(default=1.0, ge=1.0)


class MetricsBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mu_path: str
    nu_path: str
    times: List[float] = [0.0]


class AuditBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    families: List[str] = Field(min_length=1)
    samples: int = Field(default=settings.AUDIT_BATCH, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    # defaults to moments.delta
    delta: Optional[float] = Field(default=None, gt=0.0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["simulate", "stability", "metrics", "audit"]
    dimension: int = Field(default=3, ge=3)
    sigma: CrossSection = CrossSection()
    angular: AngularMeasure = AngularMeasure()
    beta: SpatialRate = SpatialRate()
    z_min: float = Field(default=settings.Z_MIN, gt=0.0)
    moments: MomentsBlock = MomentsBlock()
    sim: Optional[SimBlock] = None
    stability: Optional[StabilityParams] = None
    metrics: Optional[MetricsBlock] = None
    audit: Optional[AuditBlock] = None
    output_dir: Optional[str] = None
    threads: int = Field(default=1, ge=1)

    def kernel(self) -> CollisionKernel:
        try:
            return CollisionKernel(
                dimension=self.dimension,
                cross_section=self.sigma,
                angular=self.angular,
                spatial=self.beta,
                z_min=self.z_min,
            )
        except ValidationError as e:
            raise ConfigError("sigma.gamma must exceed -dimension", key="sigma.gamma",
                              gamma=self.sigma.gamma, dimension=self.dimension) from e

    def sim_config(self) -> SimConfig:
        if self.sim is None:
            raise ConfigError(f"mode {self.mode} requires a 'sim' block", key="sim")
        block = self.sim.model_dump(exclude={"snapshot_times", "init"})
        return SimConfig(kernel=self.kernel(), init=self.sim.init, **block)

    def snapshot_times(self) -> Optional[List[float]]:
        return None if self.sim is None else self.sim.snapshot_times


def _validation_key(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first["loc"])
    if first["type"] == "extra_forbidden":
        return ConfigError(f"unknown key {key}", key=key)
    if first["type"] == "missing":
        return ConfigError(f"missing key {key}", key=key)
    return ConfigError(f"invalid value for {key}: {first['msg']}", key=key)


def _check_semantics(cfg: ExperimentConfig) -> None:
    for block in MODE_BLOCKS[cfg.mode]:
        if getattr(cfg, block) is None:
            raise ConfigError(f"mode {cfg.mode} requires a '{block}' block", key=block)
    kernel = cfg.kernel()

    if cfg.moments.lambda_probes and kernel.gamma >= 0.0:
        raise ConfigError("Lambda probes need gamma < 0", key="moments.lambda_probes", gamma=kernel.gamma)
    if cfg.mode == "stability" and kernel.gamma < 0.0 and cfg.moments.lambda_probes is False:
        raise ConfigError("soft-potential stability runs need Lambda", key="moments.lambda_probes",
                          gamma=kernel.gamma)

    if cfg.sim is not None and cfg.sim.snapshot_times is not None:
        try:
            snapshot_steps(cfg.sim.snapshot_times, cfg.sim.dt, cfg.sim.t_end)
        except InvalidArgumentError as e:
            raise ConfigError(str(e), key="sim.snapshot_times") from e
        if cfg.mode == "stability" and (not cfg.sim.snapshot_times or cfg.sim.snapshot_times[0] != 0.0):
            raise ConfigError("stability snapshot times must start at 0", key="sim.snapshot_times")

    if cfg.audit is not None:
        for name in cfg.audit.families:
            try:
                audit_registry.get(name).check_kernel(kernel)
            except InvalidArgumentError as e:
                raise ConfigError(str(e), key="audit.families", **e.detail) from e

    if cfg.metrics is not None and any(t < 0.0 for t in cfg.metrics.times):
        raise ConfigError("shift times must be nonnegative", key="metrics.times")


def parse_config(path: Path) -> ExperimentConfig:
    """Load a JSON experiment config, fill defaults and reject unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise LabIOError("config file not found", path=str(path))
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        logger.error("Failed reading config %s: %s", path, str(e))
        raise LabIOError("cannot read config file", path=str(path)) from e
    except json.JSONDecodeError as e:
        raise ConfigError("config is not valid JSON", line=e.lineno, column=e.colno) from e
    if not isinstance(payload, dict):
        raise ConfigError("config must be a JSON object")

    try:
        cfg = ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise _validation_key(e) from e
    _check_semantics(cfg)
    logger.info("Loaded %s config from %s", cfg.mode, path)
    return cfg
