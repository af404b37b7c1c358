"""Voxel cell complex on a uniform Cartesian lattice.

Entities live on a staggered lattice: scalars on vertices, circulations on
edges, fluxes on faces and densities in cells.  Every operator below is first
assembled on the full lattice and then restricted to the active entities
(the closure of the active cells), so ``d`` is an integer incidence matrix and
``d @ d`` vanishes identically.

Entity ordering (the "lexicographic entity order" used by snapshots) is the
global lattice index: for edges and faces the x-, y- and z-oriented blocks are
concatenated, each block in C order over ``(i, j, k)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import ndimage


class ComplexError(ValueError):
    """Raised for invalid masks, fields or mismatched complexes."""


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nz: int
    h: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 2:
            raise ComplexError("GridSpec needs at least 2 cells per axis")
        if not self.h > 0:
            raise ComplexError("GridSpec spacing h must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @classmethod
    def cube(cls, n: int, length: float = 1.0) -> "GridSpec":
        return cls(n, n, n, length / n)


# ---------------------------------------------------------------------------
# full-lattice index bookkeeping


def _shapes(shape):
    nx, ny, nz = shape
    vert = (nx + 1, ny + 1, nz + 1)
    edges = [(nx, ny + 1, nz + 1), (nx + 1, ny, nz + 1), (nx + 1, ny + 1, nz)]
    faces = [(nx + 1, ny, nz), (nx, ny + 1, nz), (nx, ny, nz + 1)]
    return vert, edges, faces


class Lattice:
    """Global numbering of every vertex, edge, face and cell of a lattice."""

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)
        self.vshape, self.eshapes, self.fshapes = _shapes(self.shape)
        self.nv = int(np.prod(self.vshape))
        self.eoff = np.cumsum([0] + [int(np.prod(s)) for s in self.eshapes])
        self.foff = np.cumsum([0] + [int(np.prod(s)) for s in self.fshapes])
        self.ne = int(self.eoff[-1])
        self.nf = int(self.foff[-1])
        self.nc = int(np.prod(self.shape))

    # index helpers; out-of-range positions map to -1
    @staticmethod
    def _flat(shape, i, j, k):
        i, j, k = np.broadcast_arrays(np.asarray(i), np.asarray(j), np.asarray(k))
        ok = (i >= 0) & (j >= 0) & (k >= 0) & (i < shape[0]) & (j < shape[1]) & (k < shape[2])
        out = np.full(i.shape, -1, dtype=np.int64)
        out[ok] = np.ravel_multi_index((i[ok], j[ok], k[ok]), shape)
        return out

    def vert(self, i, j, k):
        return self._flat(self.vshape, i, j, k)

    def edge(self, axis, i, j, k):
        idx = self._flat(self.eshapes[axis], i, j, k)
        return np.where(idx >= 0, idx + self.eoff[axis], -1)

    def face(self, axis, i, j, k):
        idx = self._flat(self.fshapes[axis], i, j, k)
        return np.where(idx >= 0, idx + self.foff[axis], -1)

    def cell(self, i, j, k):
        return self._flat(self.shape, i, j, k)

    def edge_coords(self, axis):
        return np.indices(self.eshapes[axis]).reshape(3, -1)

    def face_coords(self, axis):
        return np.indices(self.fshapes[axis]).reshape(3, -1)

    def edge_axis(self, e):
        return np.searchsorted(self.eoff, e, side="right") - 1

    def face_axis(self, f):
        return np.searchsorted(self.foff, f, side="right") - 1

    def edge_position(self, e):
        """(axis, i, j, k) of global edge indices."""
        e = np.asarray(e)
        ax = self.edge_axis(e)
        out = np.zeros((4,) + e.shape, dtype=np.int64)
        out[0] = ax
        for a in range(3):
            sel = ax == a
            out[1:, sel] = np.unravel_index(e[sel] - self.eoff[a], self.eshapes[a])
        return out

    def face_position(self, f):
        f = np.asarray(f)
        ax = self.face_axis(f)
        out = np.zeros((4,) + f.shape, dtype=np.int64)
        out[0] = ax
        for a in range(3):
            sel = ax == a
            out[1:, sel] = np.unravel_index(f[sel] - self.foff[a], self.fshapes[a])
        return out


def _unit(axis):
    u = [0, 0, 0]
    u[axis] = 1
    return u


def _coo(rows, cols, vals, shape):
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    ok = (rows >= 0) & (cols >= 0)
    m = sp.coo_matrix((vals[ok], (rows[ok], cols[ok])), shape=shape)
    return m.tocsr()


def _lattice_d0(lat: Lattice):
    rows, cols, vals = [], [], []
    for a in range(3):
        i, j, k = lat.edge_coords(a)
        e = lat.edge(a, i, j, k)
        u = _unit(a)
        rows += [e, e]
        cols += [lat.vert(i, j, k), lat.vert(i + u[0], j + u[1], k + u[2])]
        vals += [-np.ones(e.size), np.ones(e.size)]
    return _coo(rows, cols, vals, (lat.ne, lat.nv))


def _lattice_d1(lat: Lattice):
    # face with normal a, in-plane axes (b, c) cyclic: circulation b -> c
    rows, cols, vals = [], [], []
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        i, j, k = lat.face_coords(a)
        f = lat.face(a, i, j, k)
        p = np.array([i, j, k])
        ub, uc = np.array(_unit(b))[:, None], np.array(_unit(c))[:, None]
        # curl_a = d_b A_c - d_c A_b
        terms = [(c, p + ub, 1.0), (c, p, -1.0), (b, p + uc, -1.0), (b, p, 1.0)]
        for ax, q, s in terms:
            rows.append(f)
            cols.append(lat.edge(ax, *q))
            vals.append(np.full(f.size, s))
    return _coo(rows, cols, vals, (lat.nf, lat.ne))


def _lattice_d2(lat: Lattice):
    rows, cols, vals = [], [], []
    i, j, k = np.indices(lat.shape).reshape(3, -1)
    cidx = lat.cell(i, j, k)
    for a in range(3):
        u = _unit(a)
        rows += [cidx, cidx]
        cols += [lat.face(a, i, j, k), lat.face(a, i + u[0], j + u[1], k + u[2])]
        vals += [-np.ones(cidx.size), np.ones(cidx.size)]
    return _coo(rows, cols, vals, (lat.nc, lat.nf))


def _lattice_edge_to_cell(lat: Lattice):
    """Cell-vector average of edges: row 3*c + a = mean of the 4 a-edges of c."""
    rows, cols, vals = [], [], []
    i, j, k = np.indices(lat.shape).reshape(3, -1)
    cidx = lat.cell(i, j, k)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        ub, uc = np.array(_unit(b))[:, None], np.array(_unit(c))[:, None]
        p = np.array([i, j, k])
        for q in (p, p + ub, p + uc, p + ub + uc):
            rows.append(3 * cidx + a)
            cols.append(lat.edge(a, *q))
            vals.append(np.full(cidx.size, 0.25))
    return _coo(rows, cols, vals, (3 * lat.nc, lat.ne))


def _lattice_face_to_cell(lat: Lattice):
    """Cell-vector average of faces: row 3*c + a = mean of the 2 a-faces of c."""
    rows, cols, vals = [], [], []
    i, j, k = np.indices(lat.shape).reshape(3, -1)
    cidx = lat.cell(i, j, k)
    for a in range(3):
        u = _unit(a)
        rows += [3 * cidx + a, 3 * cidx + a]
        cols += [lat.face(a, i, j, k), lat.face(a, i + u[0], j + u[1], k + u[2])]
        vals += [np.full(cidx.size, 0.5), np.full(cidx.size, 0.5)]
    return _coo(rows, cols, vals, (3 * lat.nc, lat.nf))


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CellComplex:
    """Closure of a set of active cells, with restricted operators.

    Attributes ``*_idx`` hold sorted global lattice indices of the active
    entities; field values are stored in that order.
    """

    spec: GridSpec
    mask: np.ndarray
    lattice: Lattice = field(repr=False)
    cell_idx: np.ndarray = field(repr=False)
    face_idx: np.ndarray = field(repr=False)
    edge_idx: np.ndarray = field(repr=False)
    vert_idx: np.ndarray = field(repr=False)
    face_count: np.ndarray = field(repr=False)
    edge_count: np.ndarray = field(repr=False)
    vert_count: np.ndarray = field(repr=False)
    d0: sp.csr_matrix = field(repr=False)
    d1: sp.csr_matrix = field(repr=False)
    d2: sp.csr_matrix = field(repr=False)

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (self.vert_idx.size, self.edge_idx.size, self.face_idx.size, self.cell_idx.size)

    def size(self, degree: int) -> int:
        return self.counts[degree]

    def global_index(self, degree: int) -> np.ndarray:
        return (self.vert_idx, self.edge_idx, self.face_idx, self.cell_idx)[degree]

    def local_index(self, degree: int, gidx) -> np.ndarray:
        """Map global lattice indices to active positions (-1 if inactive)."""
        table = self._lookup(degree)
        gidx = np.asarray(gidx)
        out = np.full(gidx.shape, -1, dtype=np.int64)
        ok = gidx >= 0
        out[ok] = table[gidx[ok]]
        return out

    def _lookup(self, degree):
        cache = self.__dict__.setdefault("_lookup_cache", {})
        if degree not in cache:
            n = (self.lattice.nv, self.lattice.ne, self.lattice.nf, self.lattice.nc)[degree]
            t = np.full(n, -1, dtype=np.int64)
            g = self.global_index(degree)
            t[g] = np.arange(g.size)
            cache[degree] = t
        return cache[degree]

    # -- boundary classification ------------------------------------------
    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return self.face_count == 1

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_count < 4

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return self.vert_count < 8

    @cached_property
    def face_normal_sign(self) -> np.ndarray:
        """Outward normal sign (+1/-1 along the face axis) on boundary faces, 0 inside."""
        ax, i, j, k = self.lattice.face_position(self.face_idx)
        upper = np.zeros(ax.shape, dtype=bool)
        for a in range(3):
            sel = ax == a
            # cell on the +a side of the face has the same (i, j, k)
            c = self.lattice.cell(i[sel], j[sel], k[sel])
            act = np.zeros(c.shape, dtype=bool)
            ok = c >= 0
            act[ok] = self.mask.ravel()[c[ok]]
            upper[sel] = act
        sign = np.where(upper, -1, 1)
        return np.where(self.boundary_faces, sign, 0).astype(np.int64)

    # -- mass weights (dual-volume fraction times h^3) ----------------------
    @cached_property
    def mass0(self) -> np.ndarray:
        return self.vert_count / 8.0

    @cached_property
    def mass1(self) -> np.ndarray:
        return self.edge_count / 4.0

    @cached_property
    def mass2(self) -> np.ndarray:
        return self.face_count / 2.0

    # -- averaging operators (full-lattice, restricted) ---------------------
    @cached_property
    def avg8(self) -> sp.csr_matrix:
        """Edge <- face average over the 8 co-directional faces straddling the edge."""
        full = (self._full_e2c.T @ self._full_f2c).tocsr()
        return full[self.edge_idx][:, self.face_idx].tocsr()

    @cached_property
    def _full_e2c(self):
        return _lattice_edge_to_cell(self.lattice)

    @cached_property
    def _full_f2c(self):
        return _lattice_face_to_cell(self.lattice)

    @cached_property
    def _cell_vec_rows(self):
        return (3 * self.cell_idx[:, None] + np.arange(3)[None, :]).ravel()

    @cached_property
    def edge_to_cell(self) -> sp.csr_matrix:
        """Active cells (3 components each) <- active edges, 4-edge means."""
        return self._full_e2c[self._cell_vec_rows][:, self.edge_idx].tocsr()

    @cached_property
    def face_to_cell(self) -> sp.csr_matrix:
        """Active cells (3 components each) <- active faces, 2-face means."""
        return self._full_f2c[self._cell_vec_rows][:, self.face_idx].tocsr()

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return ~self.boundary_edges

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return ~self.boundary_faces

    def d(self, degree: int) -> sp.csr_matrix:
        if degree not in (0, 1, 2):
            raise ComplexError(f"no coboundary from degree {degree}")
        return (self.d0, self.d1, self.d2)[degree]

    # -- entity geometry ------------------------------------------------------
    def edge_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis and physical midpoint of every active edge."""
        ax, i, j, k = self.lattice.edge_position(self.edge_idx)
        x = np.stack([i, j, k]).astype(float)
        x[ax, np.arange(ax.size)] += 0.5
        return ax, self.spec.h * x.T + np.asarray(self.spec.origin)

    def face_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis (normal) and physical centre of every active face."""
        ax, i, j, k = self.lattice.face_position(self.face_idx)
        x = np.stack([i, j, k]).astype(float) + 0.5
        x[ax, np.arange(ax.size)] -= 0.5
        return ax, self.spec.h * x.T + np.asarray(self.spec.origin)

    def vertex_positions(self) -> np.ndarray:
        i, j, k = np.unravel_index(self.vert_idx, self.lattice.vshape)
        return self.spec.h * np.stack([i, j, k]).T.astype(float) + np.asarray(self.spec.origin)

    def cell_positions(self) -> np.ndarray:
        i, j, k = np.unravel_index(self.cell_idx, self.lattice.shape)
        return self.spec.h * (np.stack([i, j, k]).T + 0.5) + np.asarray(self.spec.origin)


def _neighbour_counts(mask, shape_out, offsets):
    """Number of active cells among the given cell offsets for each entity."""
    pad = np.pad(mask, 1).astype(np.int64)
    out = np.zeros(shape_out, dtype=np.int64)
    sx, sy, sz = shape_out
    for dx, dy, dz in offsets:
        out += pad[1 + dx : 1 + dx + sx, 1 + dy : 1 + dy + sy, 1 + dz : 1 + dz + sz]
    return out


def _offsets(axes):
    """Cell offsets (0 or -1) along ``axes`` adjacent to a lattice entity."""
    res = [(0, 0, 0)]
    for a in axes:
        new = []
        for o in res:
            for s in (0, -1):
                q = list(o)
                q[a] = s
                new.append(tuple(q))
        res = new
    return res


def build_complex(mask, spec: GridSpec, *, require_connected: bool = True) -> CellComplex:
    """Build the closure complex of the active cells selected by ``mask``.

    ``mask`` is a boolean array of shape ``spec.shape`` (or a callable taking
    the three integer cell-index arrays).  The active cells must avoid the
    outermost layer of the lattice and, unless ``require_connected`` is off,
    form a single face-connected component.
    """
    if callable(mask):
        mask = mask(*np.indices(spec.shape))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != spec.shape:
        raise ComplexError(f"mask shape {mask.shape} != grid shape {spec.shape}")
    if not mask.any():
        raise ComplexError("empty mask")
    rim = mask.copy()
    rim[1:-1, 1:-1, 1:-1] = False
    if rim.any():
        raise ComplexError("mask touches the lattice boundary (one-cell margin required)")
    if require_connected:
        _, ncomp = ndimage.label(mask)
        if ncomp != 1:
            raise ComplexError(f"mask is disconnected ({ncomp} components)")

    lat = Lattice(spec.shape)
    vcount = _neighbour_counts(mask, lat.vshape, _offsets((0, 1, 2)))
    ecount = np.concatenate(
        [_neighbour_counts(mask, lat.eshapes[a], _offsets([(a + 1) % 3, (a + 2) % 3])).ravel() for a in range(3)]
    )
    fcount = np.concatenate([_neighbour_counts(mask, lat.fshapes[a], _offsets([a])).ravel() for a in range(3)])
    vcount = vcount.ravel()
    cell_idx = np.flatnonzero(mask.ravel())
    face_idx = np.flatnonzero(fcount)
    edge_idx = np.flatnonzero(ecount)
    vert_idx = np.flatnonzero(vcount)

    d0 = _lattice_d0(lat)[edge_idx][:, vert_idx].tocsr()
    d1 = _lattice_d1(lat)[face_idx][:, edge_idx].tocsr()
    d2 = _lattice_d2(lat)[cell_idx][:, face_idx].tocsr()
    return CellComplex(
        spec=spec,
        mask=mask,
        lattice=lat,
        cell_idx=cell_idx,
        face_idx=face_idx,
        edge_idx=edge_idx,
        vert_idx=vert_idx,
        face_count=fcount[face_idx],
        edge_count=ecount[edge_idx],
        vert_count=vcount[vert_idx],
        d0=d0,
        d1=d1,
        d2=d2,
    )


# ---------------------------------------------------------------------------
# fields


@dataclass(eq=False)
class Field:
    """A k-cochain on a complex; values are integrated quantities."""

    degree: int
    values: np.ndarray
    complex: CellComplex = field(repr=False)

    def __post_init__(self):
        if self.degree not in (0, 1, 2, 3):
            raise ComplexError(f"bad degree {self.degree}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.complex.size(self.degree),):
            raise ComplexError(
                f"degree-{self.degree} field needs {self.complex.size(self.degree)} values, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ComplexError("field values must be finite")

    @classmethod
    def zeros(cls, c: CellComplex, degree: int) -> "Field":
        return cls(degree, np.zeros(c.size(degree)), c)

    def _check(self, other: "Field"):
        if other.complex is not self.complex:
            raise ComplexError("fields live on different complexes")
        if other.degree != self.degree:
            raise ComplexError("fields have different degrees")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.degree, self.values + other.values, self.complex)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.degree, self.values - other.values, self.complex)

    def __mul__(self, s: float) -> "Field":
        return Field(self.degree, self.values * s, self.complex)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.degree, -self.values, self.complex)

    def copy(self) -> "Field":
        return Field(self.degree, self.values.copy(), self.complex)


def d(c: CellComplex, f: Field) -> Field:
    """Coboundary: grad (0->1), curl (1->2), div (2->3) as signed incidence sums."""
    if f.complex is not c:
        raise ComplexError("field is not defined on this complex")
    if f.degree == 3:
        raise ComplexError("no coboundary of a 3-cochain")
    return Field(f.degree + 1, c.d(f.degree) @ f.values, c)


def _same(c, *fields):
    for f in fields:
        if f.complex is not c:
            raise ComplexError("field is not defined on this complex")


def pair_12(c: CellComplex, A: Field, B: Field) -> float:
    """Discrete ``integral A . B`` for edge circulations A and face fluxes B.

    The h factors cancel: (A/h) * (avg8 B / h^2) * h^3 per edge.
    """
    _same(c, A, B)
    if A.degree != 1 or B.degree != 2:
        raise ComplexError("pair_12 takes a 1-cochain and a 2-cochain")
    return float(A.values @ (c.avg8 @ B.values))


def pair_00(c: CellComplex, a: Field, b: Field) -> float:
    _same(c, a, b)
    if a.degree != 0 or b.degree != 0:
        raise ComplexError("pair_00 takes 0-cochains")
    return float(c.h**3 * np.sum(c.mass0 * a.values * b.values))


def pair_11(c: CellComplex, a: Field, b: Field) -> float:
    _same(c, a, b)
    if a.degree != 1 or b.degree != 1:
        raise ComplexError("pair_11 takes 1-cochains")
    return float(c.h * np.sum(c.mass1 * a.values * b.values))


def pair_22(c: CellComplex, v: Field, w: Field) -> float:
    _same(c, v, w)
    if v.degree != 2 or w.degree != 2:
        raise ComplexError("pair_22 takes 2-cochains")
    return float(np.sum(c.mass2 * v.values * w.values) / c.h)


def pair_33(c: CellComplex, a: Field, b: Field) -> float:
    _same(c, a, b)
    if a.degree != 3 or b.degree != 3:
        raise ComplexError("pair_33 takes 3-cochains")
    return float(np.sum(a.values * b.values) / c.h**3)
