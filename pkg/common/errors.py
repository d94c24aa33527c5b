from typing import Any, Dict, Optional, Tuple


class LabError(Exception):
    """Base error carrying a machine-readable code and a process exit status."""

    code: str = "lab-error"
    exit_code: int = 6

    def __init__(self, message: str, **detail: Any):
        super().__init__(message)
        self.message = message
        self.detail: Dict[str, Any] = detail

    def to_record(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "detail": self.detail}


class InvalidArgumentError(LabError):
    code = "invalid-argument"


class DegenerateInputError(LabError):
    code = "degenerate-input"


class SingularInputError(LabError):
    code = "singular-input"


class DivergentMeasureError(LabError):
    code = "divergent-measure"


class NonNormalizableError(LabError):
    code = "non-normalizable"


class CapacityError(LabError):
    code = "capacity-error"
    exit_code = 4


class MajorantViolationError(LabError):
    code = "majorant-violation"
    exit_code = 5

    def __init__(self, message: str, pair: Tuple[int, int], rate: float, cap: float):
        super().__init__(message, pair=[int(pair[0]), int(pair[1])], rate=float(rate), cap=float(cap))
        self.pair = (int(pair[0]), int(pair[1]))
        self.rate = float(rate)
        self.cap = float(cap)


class ConfigError(LabError):
    code = "config-error"
    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None, **detail: Any):
        if key is not None:
            detail["key"] = key
        super().__init__(message, **detail)
        self.key = key


class LabIOError(LabError):
    code = "io-error"
    exit_code = 3


def internal_error_record(exc: BaseException) -> Dict[str, Any]:
    return {"error": "internal-error", "message": str(exc), "detail": {"type": type(exc).__name__}}
