import logging
import time
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel

from analysis.audit import audit_inequality
from analysis.stability import stability_experiment
from common.utils import STREAM_AUDIT, config_hash, make_rng
from config import settings
from services.config_service import ExperimentConfig
from services.io_service import ArtifactWriter, read_measure
from services.particle_system import simulate
from services.transport_metrics import dual_check, w1_shifted

logger = logging.getLogger(__name__)

STABILITY_HEADER = ["t", "w1_shifted", "majorant", "c_gamma_mu", "c_gamma_nu", "lambda", "second_moment"]
DISTANCE_HEADER = ["t", "w1_shifted", "primal", "dual", "gap"]
AUDIT_HEADER = ["family", "samples", "max_ratio", "violations"]


class RunManifest(BaseModel):
    config_hash: str
    seed: Optional[int] = None
    version: str
    wall_time: float
    files: List[str]


class ScenarioService:
    """Runs one experiment config and writes its artifacts and manifest."""

    def run(self, cfg: ExperimentConfig, out_dir: Optional[Path] = None, base_dir: Optional[Path] = None) -> RunManifest:
        started = time.perf_counter()
        out = Path(out_dir or cfg.output_dir or settings.OUTPUT_DIR)
        writer = ArtifactWriter(out)
        handlers = {
            "simulate": self._simulate,
            "stability": self._stability,
            "metrics": self._metrics,
            "audit": self._audit,
        }
        logger.info("Running %s scenario into %s", cfg.mode, out)
        seed = handlers[cfg.mode](cfg, writer, Path(base_dir) if base_dir else Path.cwd())

        digest = config_hash(cfg.model_dump(mode="json"))
        manifest = RunManifest(
            config_hash=digest,
            seed=seed,
            version=f"{settings.APP_NAME} {settings.VERSION}+{digest[:12]}",
            wall_time=time.perf_counter() - started,
            files=writer.files + ["manifest.json"],
        )
        writer.write_json("manifest.json", manifest.model_dump())
        logger.info("Scenario %s finished in %.3fs", cfg.mode, manifest.wall_time)
        return manifest

    @staticmethod
    def _threads(cfg: ExperimentConfig) -> int:
        return settings.THREADS if settings.THREADS is not None else cfg.threads

    def _simulate(self, cfg: ExperimentConfig, writer: ArtifactWriter, base_dir: Path) -> int:
        sim = cfg.sim_config()
        trajectory = simulate(sim, cfg.sim.snapshot_times)
        writer.write_snapshots(trajectory.snapshots)
        writer.write_conserved(trajectory.snapshots)
        return sim.seed

    def _stability(self, cfg: ExperimentConfig, writer: ArtifactWriter, base_dir: Path) -> int:
        sim = cfg.sim_config()
        report = stability_experiment(
            sim,
            cfg.stability,
            times=cfg.sim.snapshot_times,
            delta=cfg.moments.delta,
            lambda_cap=cfg.moments.lambda_cap,
            grid=cfg.moments.probe_grid,
            integrability=cfg.moments.integrability,
            threads=self._threads(cfg),
        )
        rows = (
            [row.t, row.w1_shifted, row.majorant, row.c_gamma_mu, row.c_gamma_nu, row.lambda_value, row.second_moment]
            for row in report.rows
        )
        writer.write_csv("stability.csv", STABILITY_HEADER, rows)
        writer.write_json("stability_fit.json", report.model_dump(exclude={"rows"}))
        return sim.seed

    def _metrics(self, cfg: ExperimentConfig, writer: ArtifactWriter, base_dir: Path) -> Optional[int]:
        block = cfg.metrics
        mu = read_measure(base_dir / block.mu_path)
        nu = read_measure(base_dir / block.nu_path)
        certify = max(mu.size, nu.size) <= settings.DUAL_MAX_SUPPORT
        if not certify:
            logger.warning("Supports above %s atoms: skipping duality certificates", settings.DUAL_MAX_SUPPORT)
        rows = []
        for t in block.times:
            result = w1_shifted(mu, nu, t, max_support=settings.MAX_SUPPORT)
            if certify:
                cert = dual_check(mu, nu, result.coupling, t)
                rows.append([t, result.value, cert.primal, cert.dual, cert.gap])
            else:
                rows.append([t, result.value, result.value, None, None])
        writer.write_csv("distances.csv", DISTANCE_HEADER, rows)
        return None

    def _audit(self, cfg: ExperimentConfig, writer: ArtifactWriter, base_dir: Path) -> int:
        block = cfg.audit
        kernel = cfg.kernel()
        delta = block.delta if block.delta is not None else cfg.moments.delta
        rows = []
        for index, family in enumerate(block.families):
            report = audit_inequality(family, block.samples, make_rng(block.seed, STREAM_AUDIT, index), kernel, delta)
            rows.append([report.family, report.samples, report.max_ratio, report.violations])
        writer.write_csv("audit.csv", AUDIT_HEADER, rows)
        return block.seed


def get_scenario_service() -> ScenarioService:
    return ScenarioService()


def run_scenario(cfg: ExperimentConfig, out_dir: Optional[Path] = None, base_dir: Optional[Path] = None) -> RunManifest:
    return get_scenario_service().run(cfg, out_dir=out_dir, base_dir=base_dir)
