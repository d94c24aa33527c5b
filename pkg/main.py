import logging

import typer

from api.scenario_routes import router as app
from config import settings

logger = logging.getLogger(__name__)


def configure_logging() -> None:
    level = logging.DEBUG if settings.DEBUG else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


@app.callback()
def startup() -> None:
    """Enskog stability laboratory."""
    configure_logging()
    logger.debug("Starting %s %s", settings.APP_NAME, settings.VERSION)


@app.command()
def version() -> None:
    """Print the package version."""
    typer.echo(f"{settings.APP_NAME} {settings.VERSION}")


if __name__ == "__main__":
    app()
