import os
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _optional_int(name: str) -> Optional[int]:
    raw = os.getenv(name, "").strip()
    return int(raw) if raw else None


class Settings:
    # Application Configuration
    APP_NAME: str = os.getenv("ENSKOG_LAB_APP_NAME", "enskog-lab")
    VERSION: str = "0.3.0"
    DEBUG: bool = os.getenv("ENSKOG_LAB_DEBUG", "False").lower() == "true"
    LOG_LEVEL: str = os.getenv("ENSKOG_LAB_LOG_LEVEL", "INFO")

    # Overrides the `threads` key of experiment configs when set
    THREADS: Optional[int] = _optional_int("ENSKOG_LAB_THREADS")
    # Largest support accepted by the transport solvers
    MAX_SUPPORT: int = int(os.getenv("ENSKOG_LAB_MAX_SUPPORT", "10000"))
    OUTPUT_DIR: str = os.getenv("ENSKOG_LAB_OUTPUT_DIR", "runs")
    # Largest support for which metrics runs also build a duality certificate
    DUAL_MAX_SUPPORT: int = int(os.getenv("ENSKOG_LAB_DUAL_MAX_SUPPORT", "400"))

    # Numerical defaults
    CUTOFF_EPS: float = 1e-2
    DELTA: float = 0.5
    LAMBDA_CAP: float = 1e6
    LAMBDA_GRID: int = 5
    Z_MIN: float = 1e-3
    ALGEBRAIC_TOL: float = 1e-12
    COMPOSED_TOL: float = 1e-10
    MARGINAL_TOL: float = 1e-10
    QUAD_TOL: float = 1e-10
    ODE_RTOL: float = 1e-10
    MAJORANT_SAFETY: float = 1.25
    AUDIT_BATCH: int = 100_000


settings = Settings()
