"""Canonical multiply connected voxel domains with their cycles and cuts.

Each builder returns a complex plus a :class:`TopologyAtlas` holding the
interior generators ``gamma[i]`` (loops on the boundary that go around a
handle), the boundary generators ``gamma_prime[i]`` (the rims of the cutting
surfaces) and the cutting surfaces themselves.  Cuts are planar: a primal face
set on a vertex plane plus the set of edges that cross the plane half a cell
further on (the dual realization used by the cut potentials).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .grid import CellComplex, ComplexError, GridSpec, build_complex

RECIPES = ("box", "solid_torus", "nfold_torus", "toroidal_shell")


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Cut:
    """Planar cut: vertex plane ``plane`` normal to ``axis``.

    ``lo``/``hi`` bound the vertex coordinates along the two in-plane axes
    ``(axis+1)%3, (axis+2)%3``.  ``sign`` orients the normal along +axis (+1)
    or -axis (-1).
    """

    axis: int
    plane: int
    lo: tuple[int, int]
    hi: tuple[int, int]
    sign: int = 1

    def flipped(self) -> "Cut":
        return replace(self, sign=-self.sign)

    def shifted(self, offset: int) -> "Cut":
        return Cut(
            self.axis,
            self.plane + offset,
            (self.lo[0] + offset, self.lo[1] + offset),
            (self.hi[0] + offset, self.hi[1] + offset),
            self.sign,
        )


@dataclass(eq=False)
class Cycle:
    edges: np.ndarray  # active edge positions
    signs: np.ndarray
    label: str = ""

    def chain(self, n_edges: int) -> np.ndarray:
        out = np.zeros(n_edges)
        np.add.at(out, self.edges, self.signs)
        return out

    def __len__(self):
        return int(self.edges.size)


@dataclass(eq=False)
class CuttingSurface:
    cut: Cut
    faces: np.ndarray  # active face positions
    face_signs: np.ndarray
    crossing_edges: np.ndarray  # active edge positions
    crossing_signs: np.ndarray
    label: str = ""

    @property
    def normal_sign(self) -> int:
        return self.cut.sign

    def crossing_cochain(self, n_edges: int) -> np.ndarray:
        out = np.zeros(n_edges)
        out[self.crossing_edges] = self.crossing_signs
        return out

    def face_chain(self, n_faces: int) -> np.ndarray:
        out = np.zeros(n_faces)
        out[self.faces] = self.face_signs
        return out

    @property
    def area(self) -> int:
        return int(self.faces.size)


@dataclass(eq=False)
class TopologyAtlas:
    recipe: str
    g: int
    gamma: list[Cycle]
    gamma_prime: list[Cycle]
    surfaces: list[CuttingSurface]
    exterior_cuts: list[Cut] = field(default_factory=list)
    b0: int = 1
    b2: int = 0
    euler_characteristic: int = 1
    params: dict = field(default_factory=dict)

    def report(self) -> str:
        lines = [f"recipe: {self.recipe}", f"g = {self.g}  b0 = {self.b0}  b2 = {self.b2}  chi = {self.euler_characteristic}"]
        for i in range(self.g):
            lines.append(
                f"  [{i + 1}] |gamma| = {len(self.gamma[i])} edges, |gamma'| = {len(self.gamma_prime[i])} edges, "
                f"|Sigma| = {self.surfaces[i].area} faces"
            )
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# primitive constructions


def make_surface(c: CellComplex, cut: Cut, label: str = "") -> CuttingSurface:
    lat = c.lattice
    a, p = cut.axis, cut.plane
    b, cc = (a + 1) % 3, (a + 2) % 3
    ub = np.arange(cut.lo[0], cut.hi[0])
    uc = np.arange(cut.lo[1], cut.hi[1])
    B, C = np.meshgrid(ub, uc, indexing="ij")
    pos = [None, None, None]
    pos[a], pos[b], pos[cc] = np.full(B.shape, p), B, C
    faces = c.local_index(2, lat.face(a, *pos)).ravel()
    faces = faces[faces >= 0]
    if faces.size == 0:
        raise TopologyError(f"cut {cut} selects no active faces")
    if not np.all(c.face_count[faces] == 2):
        raise TopologyError(f"cut {cut} contains boundary faces")

    vb = np.arange(cut.lo[0], cut.hi[0] + 1)
    vc = np.arange(cut.lo[1], cut.hi[1] + 1)
    B, C = np.meshgrid(vb, vc, indexing="ij")
    pos[a], pos[b], pos[cc] = np.full(B.shape, p), B, C
    edges = c.local_index(1, lat.edge(a, *pos)).ravel()
    edges = np.sort(edges[edges >= 0])
    return CuttingSurface(
        cut=cut,
        faces=np.sort(faces),
        face_signs=np.full(faces.size, cut.sign, dtype=np.int64),
        crossing_edges=edges,
        crossing_signs=np.full(edges.size, cut.sign, dtype=np.int64),
        label=label,
    )


def rim_cycle(c: CellComplex, surf: CuttingSurface, label: str = "") -> Cycle:
    """The boundary chain of the surface's face set (discrete ``dSigma``)."""
    chain = c.d1.T @ surf.face_chain(c.size(2))
    e = np.flatnonzero(chain)
    return Cycle(e, np.rint(chain[e]).astype(np.int64), label)


def rect_loop(c: CellComplex, axis: int, level: int, urange, vrange, label: str = "") -> Cycle:
    """Axis-aligned rectangular loop, counter-clockwise about +axis."""
    lat = c.lattice
    b, cc = (axis + 1) % 3, (axis + 2) % 3
    (u0, u1), (v0, v1) = urange, vrange
    if u1 <= u0 or v1 <= v0:
        raise TopologyError("degenerate rectangle")
    parts = []

    def run(dir_axis, fixed_axis, fixed, span, sign):
        for s in span:
            pos = [0, 0, 0]
            pos[axis], pos[fixed_axis], pos[dir_axis] = level, fixed, s
            parts.append((lat.edge(dir_axis, *pos)[()], sign))

    run(b, cc, v0, range(u0, u1), 1)
    run(cc, b, u1, range(v0, v1), 1)
    run(b, cc, v1, range(u0, u1), -1)
    run(cc, b, u0, range(v0, v1), -1)
    g = np.array([p[0] for p in parts])
    loc = c.local_index(1, g)
    if np.any(loc < 0):
        raise TopologyError(f"loop {label!r} leaves the complex")
    return Cycle(loc, np.array([p[1] for p in parts], dtype=np.int64), label)


def intersection_number(cycle: Cycle, surf: CuttingSurface, n_edges: int) -> int:
    k = surf.crossing_cochain(n_edges)
    return int(np.sum(cycle.signs * k[cycle.edges].astype(np.int64)))


def _orient(c, cycle, surf):
    s = intersection_number(cycle, surf, c.size(1))
    if s == -1:
        return Cycle(cycle.edges, -cycle.signs, cycle.label)
    return cycle


# ---------------------------------------------------------------------------
# topology


def betti1(c: CellComplex) -> tuple[int, int, int, int]:
    """(g, b0, b2, chi) from Euler characteristic and flood fills."""
    full = np.ones((3, 3, 3), dtype=bool)
    _, b0 = ndimage.label(c.mask, structure=full)
    lab, ncomp = ndimage.label(~c.mask)
    touching = set(np.unique(np.concatenate([lab[0].ravel(), lab[-1].ravel(), lab[:, 0].ravel(),
                                             lab[:, -1].ravel(), lab[:, :, 0].ravel(), lab[:, :, -1].ravel()])))
    touching.discard(0)
    b2 = ncomp - len(touching)
    V, E, F, C = c.counts
    chi = V - E + F - C
    return int(b0 + b2 - chi), int(b0), int(b2), int(chi)


@dataclass
class TopologyReport:
    checks: dict = field(default_factory=dict)

    def add(self, name, ok, detail=""):
        self.checks[name] = (bool(ok), detail)

    @property
    def ok(self) -> bool:
        return all(v[0] for v in self.checks.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v[0]]


def validate_topology(c: CellComplex, atlas: TopologyAtlas) -> TopologyReport:
    rep = TopologyReport()
    ne = c.size(1)
    g = len(atlas.surfaces)
    imat = np.array([[intersection_number(gm, s, ne) for s in atlas.surfaces] for gm in atlas.gamma], dtype=np.int64)
    imat = imat.reshape(len(atlas.gamma), g)
    rep.add("intersection", imat.shape == (g, g) and np.array_equal(imat, np.eye(g, dtype=np.int64)), imat.tolist())

    closed = all(not np.any(c.d0.T @ cy.chain(ne)) for cy in atlas.gamma + atlas.gamma_prime)
    rep.add("cycles_closed", closed)

    rims = len(atlas.gamma_prime) == g and all(
        np.array_equal(c.d1.T @ s.face_chain(c.size(2)), gp.chain(ne)) for s, gp in zip(atlas.surfaces, atlas.gamma_prime)
    )
    rep.add("rim", rims)

    on_bnd = all(np.all(c.boundary_edges[gp.edges]) for gp in atlas.gamma_prime)
    rep.add("gamma_prime_on_boundary", on_bnd)

    cross_closed = all(not np.any(c.d1 @ s.crossing_cochain(ne)) for s in atlas.surfaces)
    rep.add("crossing_closed", cross_closed)

    gb = betti1(c)[0]
    rep.add("betti", gb == g == atlas.g, f"betti1={gb}, surfaces={g}, declared={atlas.g}")
    return rep


# ---------------------------------------------------------------------------
# builders


def _atlas(c, recipe, cuts, loops, exterior_cuts, params):
    surfaces = [make_surface(c, cut, f"Sigma_{i + 1}") for i, cut in enumerate(cuts)]
    ne = c.size(1)
    for s in surfaces:
        if np.any(c.d1 @ s.crossing_cochain(ne)):
            raise TopologyError(f"crossing set of {s.label} is not closed; cut region is malformed")
    gammas = [_orient(c, lp, s) for lp, s in zip(loops, surfaces)]
    rims = [rim_cycle(c, s, f"gamma'_{i + 1}") for i, s in enumerate(surfaces)]
    g, b0, b2, chi = betti1(c)
    return TopologyAtlas(
        recipe=recipe,
        g=len(surfaces),
        gamma=gammas,
        gamma_prime=rims,
        surfaces=surfaces,
        exterior_cuts=list(exterior_cuts),
        b0=b0,
        b2=b2,
        euler_characteristic=chi,
        params=dict(params),
    )


def _default_hole(n):
    w = max(2, n // 4)
    a = (n - w) // 2
    return (a, a + w)


def build_box(spec: GridSpec):
    nx, ny, nz = spec.shape
    m = np.zeros(spec.shape, dtype=bool)
    m[1 : nx - 1, 1 : ny - 1, 1 : nz - 1] = True
    c = build_complex(m, spec)
    return c, _atlas(c, "box", [], [], [], {})


def build_solid_torus(spec: GridSpec, hole=None):
    """Square annulus extruded along z; the hole is a column through z."""
    nx, ny, nz = spec.shape
    if nx != ny:
        raise TopologyError("solid_torus needs nx == ny")
    a, b = hole if hole is not None else _default_hole(nx)
    if b - a < 1:
        raise TopologyError("hole width must be at least 1 cell")
    if a < 4 or b > nx - 4:
        raise TopologyError("hole leaves too little room for the loops (need 3 cells of solid around it)")
    m = np.zeros(spec.shape, dtype=bool)
    m[1 : nx - 1, 1 : ny - 1, 1 : nz - 1] = True
    m[a:b, a:b, :] = False
    c = build_complex(m, spec)
    p = (a + b - 1) // 2
    top = nz - 1
    cuts = [Cut(1, p, (1, b), (nz - 1, nx - 1))]
    loops = [rect_loop(c, 2, top, (a - 2, b + 2), (a - 2, b + 2), "gamma_1")]
    q = nz // 2
    ext = [Cut(2, q, (a, a), (b, b))]
    return c, _atlas(c, "solid_torus", cuts, loops, ext, {"hole": (a, b)})


def build_nfold_torus(spec: GridSpec, n: int = 2, hole_width=None):
    """Slab with ``n`` square holes in a row along x, each threaded along z."""
    nx, ny, nz = spec.shape
    if n < 1:
        raise TopologyError("nfold_torus needs n >= 1")
    w = hole_width if hole_width is not None else max(2, (nx - 2 - 3 * (n + 1)) // (2 * n))
    if w < 1:
        raise TopologyError("hole width must be at least 1 cell")
    gap = (nx - 2 - n * w) // (n + 1)
    if gap < 3:
        raise TopologyError("holes too close together for this lattice")
    ya, yb = (ny - w) // 2, (ny - w) // 2 + w
    if ya < 4 or yb > ny - 4:
        raise TopologyError("lattice too small in y for nfold_torus")
    m = np.zeros(spec.shape, dtype=bool)
    m[1 : nx - 1, 1 : ny - 1, 1 : nz - 1] = True
    holes = []
    x = 1 + gap
    for _ in range(n):
        holes.append((x, x + w))
        m[x : x + w, ya:yb, :] = False
        x += w + gap
    c = build_complex(m, spec)
    top = nz - 1
    cuts, loops, ext = [], [], []
    for i, (xa, xb) in enumerate(holes):
        p = (xa + xb - 1) // 2
        cuts.append(Cut(0, p, (yb, 1), (ny - 1, nz - 1)))
        loops.append(rect_loop(c, 2, top, (xa - 1, xb + 1), (ya - 1, yb + 1), f"gamma_{i + 1}"))
        ext.append(Cut(2, nz // 2, (xa, ya), (xb, yb)))
    return c, _atlas(c, "nfold_torus", cuts, loops, ext, {"n": n, "holes": holes, "y": (ya, yb)})


def build_toroidal_shell(spec: GridSpec, hole=None, thickness: int = 2):
    """Solid torus with a concentric toroidal cavity of wall ``thickness``."""
    nx, ny, nz = spec.shape
    if nx != ny:
        raise TopologyError("toroidal_shell needs nx == ny")
    t = int(thickness)
    if t < 1:
        raise TopologyError("shell thickness must be at least 1 cell")
    a, b = hole if hole is not None else _default_hole(nx)
    if b - a < 1:
        raise TopologyError("hole width must be at least 1 cell")
    if (a - 1) - 2 * t < 1 or (nz - 2) - 2 * t < 2:
        raise TopologyError("shell too thick for this lattice (cavity would vanish)")
    m = np.zeros(spec.shape, dtype=bool)
    m[1 : nx - 1, 1 : ny - 1, 1 : nz - 1] = True
    m[a:b, a:b, :] = False
    cav = np.zeros_like(m)
    cav[1 + t : nx - 1 - t, 1 + t : ny - 1 - t, 1 + t : nz - 1 - t] = True
    cav[a - t : b + t, a - t : b + t, :] = False
    m &= ~cav
    c = build_complex(m, spec)
    p = (a + b - 1) // 2
    q = (1 + t + nz - 1 - t) // 2 - 1
    top = nz - 1
    cuts = [
        Cut(1, p, (1, b), (nz - 1, nx - 1)),
        Cut(2, q, (a - t, a - t), (b + t, b + t)),
    ]
    y2 = (a + b) // 2
    loops = [
        rect_loop(c, 2, top, (a - 1, b + 1), (a - 1, b + 1), "gamma_1"),
        # meridian of the cavity wall (axis 1: in-plane axes are z then x);
        # it bounds the cavity's meridian disk, unlike the outer meridian
        rect_loop(c, 1, y2, (1 + t, nz - 1 - t), (b + t, nx - 1 - t), "gamma_2"),
    ]
    ext = [
        Cut(2, nz // 2, (a, a), (b, b)),
        Cut(1, p, (1 + t, b + t), (nz - 1 - t, nx - 1 - t)),
    ]
    return c, _atlas(c, "toroidal_shell", cuts, loops, ext, {"hole": (a, b), "thickness": t})


def build_domain(recipe: str, spec: GridSpec, **params):
    """Build ``(complex, atlas)`` for one of :data:`RECIPES`."""
    try:
        if recipe == "box":
            return build_box(spec)
        if recipe == "solid_torus":
            return build_solid_torus(spec, **params)
        if recipe == "nfold_torus":
            return build_nfold_torus(spec, **params)
        if recipe == "toroidal_shell":
            return build_toroidal_shell(spec, **params)
    except ComplexError as exc:
        raise TopologyError(str(exc)) from exc
    raise TopologyError(f"unknown recipe {recipe!r}")
