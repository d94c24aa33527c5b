from typing import Any, Iterable, List
import hashlib
import json

import numpy as np

# Random stream identifiers, combined with the run seed through SeedSequence.spawn_key
STREAM_INIT = 0
STREAM_PERTURBATION = 1
STREAM_COLLISIONS = 2
STREAM_COLLISIONS_INDEPENDENT = 3
STREAM_GENERATOR = 4
STREAM_AUDIT = 5


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream addressed by (seed, *key)."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(sequence)


def format_float(value: Any) -> str:
    """17 significant digits, enough to round-trip a double."""
    return f"{float(value):.17g}"


def format_row(values: Iterable[Any]) -> List[str]:
    row = []
    for value in values:
        if value is None:
            row.append("")
        elif isinstance(value, (bool, np.bool_)):
            row.append(str(bool(value)).lower())
        elif isinstance(value, (int, np.integer)):
            row.append(str(int(value)))
        elif isinstance(value, (float, np.floating)):
            row.append(format_float(value))
        else:
            row.append(str(value))
    return row


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def row_norm(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt((x * x).sum(axis=-1))
