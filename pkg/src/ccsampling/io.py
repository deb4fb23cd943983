"""Population CSV files and variable manifests.

File layout::

    # ccs-pop v1, nm=<rows>, nd=<cols>, label=<text>
    <nd comma-separated values>     (nm lines)

Values are written with 17 significant digits, which round-trips doubles.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .population import PopulationGrid

__all__ = ["write_population", "read_population", "write_manifest", "read_manifest", "PopulationFileError"]

_HEADER = re.compile(r"^# ccs-pop v1, nm=(\d+), nd=(\d+), label=(.*)$")


class PopulationFileError(ValueError):
    pass


def write_population(path, grid: PopulationGrid) -> Path:
    path = Path(path)
    label = grid.label.replace("\n", " ")
    header = f"ccs-pop v1, nm={grid.n_rows}, nd={grid.n_cols}, label={label}"
    np.savetxt(path, grid.values, fmt="%.17g", delimiter=",", header=header, comments="# ")
    return path


def read_population(path) -> PopulationGrid:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().rstrip("\n")
    m = _HEADER.match(first)
    if not m:
        raise PopulationFileError(f"{path}: missing or malformed 'ccs-pop v1' header")
    nm, nd, label = int(m.group(1)), int(m.group(2)), m.group(3)
    try:
        values = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise PopulationFileError(f"{path}: {exc}") from None
    if values.shape != (nm, nd):
        raise PopulationFileError(f"{path}: header declares {nm}x{nd}, file holds {values.shape[0]}x{values.shape[1]}")
    try:
        return PopulationGrid(values, label)
    except ValueError as exc:
        raise PopulationFileError(f"{path}: {exc}") from None


def write_manifest(path, variables: dict[str, str | Path]) -> Path:
    """Write ``{"variables": [{"name", "path"}, ...]}``; paths are stored as given."""
    path = Path(path)
    doc = {"variables": [{"name": name, "path": str(p)} for name, p in variables.items()]}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def read_manifest(path) -> dict[str, PopulationGrid]:
    """Load every variable of a manifest; relative paths resolve against its directory."""
    path = Path(path)
    doc = json.loads(path.read_text())
    out = {}
    for entry in doc.get("variables", []):
        p = Path(entry["path"])
        if not p.is_absolute():
            p = path.parent / p
        out[entry["name"]] = read_population(p)
    return out
