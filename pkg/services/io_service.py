import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from common.errors import LabIOError
from common.utils import format_row
from services.particle_system import Ensemble, conserved_quantities
from services.transport_metrics import DiscreteMeasure

logger = logging.getLogger(__name__)


def phase_header(d: int) -> List[str]:
    return [f"r{k}" for k in range(1, d + 1)] + [f"v{k}" for k in range(1, d + 1)]


class ArtifactWriter:
    """Writes run artifacts into one directory and remembers every file it wrote."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.files: List[str] = []
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error("Cannot create output directory %s: %s", out_dir, str(e))
            raise LabIOError("cannot create output directory", path=str(out_dir)) from e

    def _register(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.out_dir / name

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Iterable[Any]]) -> Path:
        path = self._register(name)
        try:
            with path.open("w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow(format_row(row))
        except OSError as e:
            logger.error("Failed writing %s: %s", path, str(e))
            raise LabIOError("cannot write artifact", path=str(path)) from e
        logger.info("Wrote %s", path)
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self._register(name)
        try:
            path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            logger.error("Failed writing %s: %s", path, str(e))
            raise LabIOError("cannot write artifact", path=str(path)) from e
        return path

    def write_snapshots(self, snapshots: Sequence[Ensemble], name: str = "snapshots.csv") -> Path:
        d = snapshots[0].dimension if snapshots else 3
        rows = (
            [e.time, pid, *e.r[pid], *e.v[pid]]
            for e in snapshots
            for pid in range(e.n)
        )
        return self.write_csv(name, ["t", "particle_id"] + phase_header(d), rows)

    def write_conserved(self, snapshots: Sequence[Ensemble], name: str = "conserved.csv") -> Path:
        d = snapshots[0].dimension if snapshots else 3
        header = ["t", "mass"] + [f"p{k}" for k in range(1, d + 1)] + ["energy"]
        rows = []
        for e in snapshots:
            q = conserved_quantities(e)
            rows.append([e.time, q.mass, *q.momentum, q.energy])
        return self.write_csv(name, header, rows)

    def write_measure(self, m: DiscreteMeasure, name: str) -> Path:
        rows = ([m.weights[k], *m.r[k], *m.v[k]] for k in range(m.size))
        return self.write_csv(name, ["weight"] + phase_header(m.dimension), rows)


def read_measure(path: Path) -> DiscreteMeasure:
    """Load a measure CSV with header weight,r1..rd,v1..vd."""
    path = Path(path)
    if not path.is_file():
        raise LabIOError("measure file not found", path=str(path))
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            data = np.array([[float(x) for x in row] for row in reader if row], dtype=float)
    except (OSError, StopIteration, ValueError) as e:
        logger.error("Failed reading measure %s: %s", path, str(e))
        raise LabIOError("cannot parse measure file", path=str(path)) from e
    d = (len(header) - 1) // 2
    if header != ["weight"] + phase_header(d) or d < 1:
        raise LabIOError("unexpected measure header", path=str(path), header=header)
    if data.ndim != 2 or data.shape[0] == 0:
        raise LabIOError("measure file has no atoms", path=str(path))
    weights = data[:, 0]
    if abs(weights.sum() - 1.0) > 1e-9:
        raise LabIOError("measure weights do not sum to 1", path=str(path), total=float(weights.sum()))
    # decimal weights sum to 1 only up to rounding
    weights = weights / weights.sum()
    return DiscreteMeasure(r=data[:, 1:1 + d], v=data[:, 1 + d:], weights=weights)
