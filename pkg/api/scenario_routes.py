import json
import logging
from pathlib import Path
from typing import Optional

import typer

from common.errors import ConfigError, LabError, internal_error_record
from services.config_service import ExperimentConfig, parse_config
from services.scenario_service import get_scenario_service

logger = logging.getLogger(__name__)

router = typer.Typer(help="Enskog stability laboratory", no_args_is_help=True, add_completion=False)

ConfigOption = typer.Option(..., "--config", "-c", help="Path to the JSON experiment config")
ValidateOption = typer.Option(False, "--validate-only", help="Parse the config and exit")
OutOption = typer.Option(None, "--out", "-o", help="Output directory (overrides output_dir)")


def _fail(record: dict, exit_code: int) -> None:
    typer.echo(json.dumps(record, sort_keys=True), err=True)
    raise typer.Exit(code=exit_code)


def _load(mode: str, config: Path) -> ExperimentConfig:
    cfg = parse_config(config)
    if cfg.mode != mode:
        raise ConfigError(f"config mode is '{cfg.mode}', not '{mode}'", key="mode")
    return cfg


def _dispatch(mode: str, config: Path, validate_only: bool, out: Optional[Path]) -> None:
    try:
        cfg = _load(mode, config)
        if validate_only:
            typer.echo(json.dumps({"valid": True, "mode": cfg.mode}))
            return
        manifest = get_scenario_service().run(cfg, out_dir=out, base_dir=config.parent)
        typer.echo(json.dumps({"files": manifest.files, "config_hash": manifest.config_hash}))
    except LabError as e:
        logger.error("%s run failed: %s", mode, str(e))
        _fail(e.to_record(), e.exit_code)
    except Exception as e:
        logger.error("Unexpected error in %s run: %s", mode, str(e))
        _fail(internal_error_record(e), 1)


@router.command()
def simulate(config: Path = ConfigOption, validate_only: bool = ValidateOption, out: Optional[Path] = OutOption):
    """Run the particle system and write snapshots and conserved quantities."""
    _dispatch("simulate", config, validate_only, out)


@router.command()
def stability(config: Path = ConfigOption, validate_only: bool = ValidateOption, out: Optional[Path] = OutOption):
    """Track W1^t between two nearby systems and fit the stability majorant."""
    _dispatch("stability", config, validate_only, out)


@router.command()
def metrics(config: Path = ConfigOption, validate_only: bool = ValidateOption, out: Optional[Path] = OutOption):
    """Shifted W1 distances with duality certificates between two measure files."""
    _dispatch("metrics", config, validate_only, out)


@router.command()
def audit(config: Path = ConfigOption, validate_only: bool = ValidateOption, out: Optional[Path] = OutOption):
    """Sample the pointwise inequalities and report empirical constants."""
    _dispatch("audit", config, validate_only, out)
