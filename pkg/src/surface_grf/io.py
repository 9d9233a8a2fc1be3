"""CSV tables and legacy ASCII VTK output."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VTK_QUAD = 9
SIG_DIGITS = 6


def format_value(v) -> str:
    """Format a table cell: integers verbatim, floats with 6 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.{SIG_DIGITS}g}"
    return str(v)


@dataclass
class Table:
    """Ordered columns and rows; the unit of output for every experiment."""

    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"row is missing columns {sorted(missing)}")
        self.rows.append(row)

    def column(self, name) -> list:
        return [r[name] for r in self.rows]

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow([format_value(r[c]) for c in self.columns])
        return buf.getvalue()


def export_csv(table: Table, path) -> Path:
    path = Path(path)
    try:
        path.write_text(table.to_csv(), encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot write CSV to {path}: {err}") from err
    return path


def read_csv(path) -> Table:
    """Parse a CSV written by :func:`export_csv`; numeric cells become floats."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        table = Table(columns)
        for raw in reader:
            row = {}
            for name, cell in zip(columns, raw):
                try:
                    row[name] = float(cell)
                except ValueError:
                    row[name] = cell
            table.rows.append(row)
    return table


def export_field_vtk(mesh, values, path, name: str = "u") -> Path:
    """Write ``mesh`` and nodal ``values`` as a legacy ASCII VTK 3.0 unstructured grid."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise ValueError(f"field has shape {values.shape}, mesh has {mesh.n_vertices} vertices")
    if not name or any(c.isspace() for c in name):
        raise ValueError(f"invalid scalar name {name!r}")
    nq = mesh.n_faces
    lines = [
        "# vtk DataFile Version 3.0",
        f"{name} on {mesh.surface.kind} level {mesh.level}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.vertices]
    lines.append(f"CELLS {nq} {5 * nq}")
    lines += ["4 " + " ".join(str(int(i)) for i in q) for q in mesh.quads]
    lines.append(f"CELL_TYPES {nq}")
    lines += [str(VTK_QUAD)] * nq
    lines += [f"POINT_DATA {mesh.n_vertices}", f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    lines += [repr(float(v)) for v in values]
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as err:
        raise OSError(f"cannot write VTK to {path}: {err}") from err
    return path


def read_vtk(path):
    """Minimal reader for files from :func:`export_field_vtk`: ``(points, quads, values)``."""
    tokens = Path(path).read_text(encoding="ascii").split("\n")
    it = iter(tokens)
    points = quads = values = None
    for line in it:
        head = line.split()
        if not head:
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            points = np.array([[float(t) for t in next(it).split()] for _ in range(n)])
        elif head[0] == "CELLS":
            n = int(head[1])
            quads = np.array([[int(t) for t in next(it).split()[1:]] for _ in range(n)])
        elif head[0] == "POINT_DATA":
            n = int(head[1])
            next(it)
            next(it)
            values = np.array([float(next(it)) for _ in range(n)])
    return points, quads, values
