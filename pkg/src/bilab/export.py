import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from bilab.errors import FieldFormatError
from bilab.grid import DomainGrid, ScalarField
from bilab.logging import configure_module_logger

logger = configure_module_logger(__name__)


@dataclass
class ExportParams:
    output_dir: Path
    precision: int = 17

    def path(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name


def save_field(u: ScalarField, path: Path, precision: int = 17) -> Path:
    """Write ``# nx,ny`` and ``# hx,hy`` headers, then ``i,j,value`` rows in row-major order."""
    path = Path(path)
    grid = u.grid
    lines = [
        f"# {grid.nx},{grid.ny}",
        f"# {grid.hx:.{precision}g},{grid.hy:.{precision}g}",
    ]
    for i in range(grid.nx):
        for j in range(grid.ny):
            lines.append(f"{i},{j},{u.values[i, j]:.{precision}g}")
    path.write_text("\n".join(lines) + "\n")
    logger.debug(f"Saved field to {path}")
    return path


def _header(line: str, number: int, cast) -> tuple:
    if not line.startswith("#"):
        raise FieldFormatError(f"Line {number}: expected a '#' header, got {line!r}")
    parts = line[1:].strip().split(",")
    if len(parts) != 2:
        raise FieldFormatError(f"Line {number}: header needs two comma-separated values")
    try:
        return cast(parts[0]), cast(parts[1])
    except ValueError as e:
        raise FieldFormatError(f"Line {number}: {e}") from e


def load_field(path: Path, grid: Optional[DomainGrid] = None) -> ScalarField:
    """Read a field written by ``save_field``; ``grid`` pins the expected size."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise FieldFormatError(f"{path}: missing header lines")
    nx, ny = _header(lines[0], 1, int)
    hx, hy = _header(lines[1], 2, float)
    try:
        loaded_grid = DomainGrid(nx, ny)
    except ValueError as e:
        raise FieldFormatError(f"Line 1: {e}") from e
    if not (np.isclose(hx, loaded_grid.hx) and np.isclose(hy, loaded_grid.hy)):
        raise FieldFormatError(f"Line 2: spacings {hx},{hy} do not match {nx}x{ny} nodes")
    if grid is not None and grid != loaded_grid:
        logger.error(f"Field in {path} is {nx}x{ny}, expected {grid.nx}x{grid.ny}")
        raise FieldFormatError(f"{path}: field is {nx}x{ny}, expected {grid.nx}x{grid.ny}")

    rows = lines[2:]
    if len(rows) != nx * ny:
        raise FieldFormatError(f"{path}: expected {nx * ny} rows, found {len(rows)}")
    values = np.empty(nx * ny)
    for k, row in enumerate(rows):
        number = k + 3
        parts = row.split(",")
        if len(parts) != 3:
            raise FieldFormatError(f"Line {number}: expected 'i,j,value', got {row!r}")
        try:
            i, j, value = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as e:
            raise FieldFormatError(f"Line {number}: {e}") from e
        if (i, j) != divmod(k, ny):
            raise FieldFormatError(f"Line {number}: node ({i}, {j}) out of row-major order")
        values[k] = value
    return ScalarField(loaded_grid, values.reshape(nx, ny))


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Path):
        return value.as_posix()
    return value


def write_report(report: dict, path: Path) -> Path:
    """Deterministic JSON: sorted keys, fixed indentation, non-finite numbers as strings."""
    path = Path(path)
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    logger.info(f"Report written to {path}")
    return path


def write_table(rows: Iterable[dict], path: Path) -> Path:
    rows: List[dict] = list(rows)
    path = Path(path)
    with open(path, "w", newline="") as handle:
        if rows:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _jsonable(v) for k, v in row.items()})
    logger.debug(f"Table written to {path}")
    return path
