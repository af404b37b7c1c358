"""Result persistence: binary field snapshots, CSV tables, manifests, VTK.

Snapshot layout (little endian)::

    b"HLTR1"                       magic
    <B3I4dQ                        degree, nx, ny, nz, h, origin x/y/z, count
    count * <f8                    values in active-entity order

The header identifies the lattice; the active set is recovered from the
domain recipe, so a snapshot is read back against a complex.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from importlib import metadata
from pathlib import Path

import numpy as np

from .grid import CellComplex, Field

MAGIC = b"HLTR1"
_HEADER = struct.Struct("<B3I4dQ")


class SnapshotError(ValueError):
    pass


def write_snapshot(path, f: Field) -> Path:
    path = Path(path)
    s = f.complex.spec
    head = _HEADER.pack(f.degree, s.nx, s.ny, s.nz, s.h, *s.origin, f.values.size)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(head)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_snapshot_raw(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise SnapshotError(f"{path}: not an HLTR1 snapshot")
    off = len(MAGIC)
    if len(data) < off + _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    deg, nx, ny, nz, h, ox, oy, oz, count = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    if len(data) != off + 8 * count:
        raise SnapshotError(f"{path}: expected {count} values, file holds {(len(data) - off) / 8:g}")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    head = {"degree": deg, "shape": (nx, ny, nz), "h": h, "origin": (ox, oy, oz), "count": count}
    return head, values


def read_snapshot(path, c: CellComplex) -> Field:
    head, values = read_snapshot_raw(path)
    s = c.spec
    if head["shape"] != s.shape or head["h"] != s.h or head["origin"] != tuple(s.origin):
        raise SnapshotError(f"{path}: lattice {head['shape']} h={head['h']} does not match the complex")
    if head["count"] != c.size(head["degree"]):
        raise SnapshotError(f"{path}: {head['count']} values for {c.size(head['degree'])} active entities")
    return Field(head["degree"], values, c)


def fmt(x) -> str:
    """17 significant digits for floats (round-trip exact); plain text otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_matrix_csv(path, M: np.ndarray) -> Path:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return write_csv(path, [f"col_{j + 1}" for j in range(M.shape[1])], M.tolist())


def read_matrix_csv(path) -> np.ndarray:
    _, rows = read_csv(path)
    return np.array([[float(v) for v in r] for r in rows], dtype=float)


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, config: dict, outputs: list[str], extra: dict | None = None) -> Path:
    """Config echo, code version and output digests; enough to re-run and compare."""
    path = Path(path)
    out_dir = path.parent
    doc = {
        "package": "taylorhel",
        "version": package_version(),
        "numpy": np.__version__,
        "config": config,
        "outputs": {name: file_digest(out_dir / name) for name in sorted(outputs)},
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_vtk(path, c: CellComplex, fields: dict[str, Field], title: str = "taylorhel") -> Path:
    """Legacy VTK structured-points file with cell-averaged vectors (display only)."""
    path = Path(path)
    s = c.spec
    nc = c.lattice.nc
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {s.nx + 1} {s.ny + 1} {s.nz + 1}",
        "ORIGIN " + " ".join(fmt(o) for o in s.origin),
        f"SPACING {fmt(s.h)} {fmt(s.h)} {fmt(s.h)}",
        f"CELL_DATA {nc}",
        "SCALARS active int 1",
        "LOOKUP_TABLE default",
    ]
    # VTK orders cells with x fastest; our lattice is C-ordered (z fastest)
    active = c.mask.transpose(2, 1, 0).ravel().astype(int)
    lines += [" ".join(map(str, active[i : i + 16])) for i in range(0, nc, 16)]
    for name, f in fields.items():
        if f.degree == 2:
            vec = (c.face_to_cell @ f.values).reshape(-1, 3) / s.h**2
        elif f.degree == 1:
            vec = (c.edge_to_cell @ f.values).reshape(-1, 3) / s.h
        else:
            raise SnapshotError("only edge and face fields can be exported as cell vectors")
        full = np.zeros((nc, 3))
        full[c.cell_idx] = vec
        full = full.reshape(s.nx, s.ny, s.nz, 3).transpose(2, 1, 0, 3).reshape(-1, 3)
        lines.append(f"VECTORS {name} double")
        lines += [" ".join(fmt(v) for v in row) for row in full]
    path.write_text("\n".join(lines) + "\n")
    return path


def save_basis(directory, basis) -> list[str]:
    """Write ``h_i.hltr``, ``rho_i.hltr``, the flux/period matrices and the atlas report."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for i, (hf, r) in enumerate(zip(basis.h_fields, basis.rho)):
        write_snapshot(d / f"h_{i + 1}.hltr", hf)
        write_snapshot(d / f"rho_{i + 1}.hltr", r)
        names += [f"h_{i + 1}.hltr", f"rho_{i + 1}.hltr"]
    write_matrix_csv(d / "flux_matrix.csv", basis.flux_matrix.reshape(basis.g, basis.g))
    write_matrix_csv(d / "period_matrix.csv", basis.period_matrix.reshape(basis.g, basis.g))
    (d / "atlas.txt").write_text(basis.atlas.report() + "\n")
    return names + ["flux_matrix.csv", "period_matrix.csv", "atlas.txt"]


def load_basis(directory, c: CellComplex, atlas):
    """Read a basis written by :func:`save_basis`; stored matrices are kept as read."""
    from .harmonic import HarmonicBasis

    d = Path(directory)
    g = atlas.g
    h_fields = [read_snapshot(d / f"h_{i + 1}.hltr", c) for i in range(g)]
    rho = [read_snapshot(d / f"rho_{i + 1}.hltr", c) for i in range(g)]
    if g:
        try:
            fm = read_matrix_csv(d / "flux_matrix.csv")
        except (OSError, ValueError, IndexError) as exc:
            raise SnapshotError(f"{d}: flux_matrix.csv is unreadable ({exc})") from exc
        try:
            pm = read_matrix_csv(d / "period_matrix.csv")
        except (OSError, ValueError, IndexError) as exc:
            raise SnapshotError(f"{d}: period_matrix.csv is unreadable ({exc})") from exc
    else:
        fm = pm = np.zeros((0, 0))
    if fm.shape != (g, g) or pm.shape != (g, g):
        raise SnapshotError(f"{d}: stored matrices do not have shape ({g}, {g})")
    return HarmonicBasis(c, atlas, h_fields, rho, fm, pm)
