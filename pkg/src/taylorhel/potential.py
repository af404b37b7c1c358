"""Vector potentials, gauge shifts, circulations and boundary pairings.

The potential of a face field is obtained from the gauged curl-curl system

    (d1^T W2 d1 + W1 d0 W0^-1 d0^T W1) A = d1^T W2 B

with the dimensionless dual-volume fractions W0, W1, W2 of the complex.  Its
null space is spanned by the period fields ``rho``; those components are
removed afterwards by a pair_11 projection, which fixes the gauge uniquely
and realises the condition "zero flux through every cut" for potentials.

The exterior complex is the padded bounding box with the domain (and a one
cell rim) removed.  Its period fields ``rho_prime`` are traced onto the
shared boundary edges and used in surface quadratures of ``(w x n) . v``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import TopologyAtlas, make_surface
from .grid import CellComplex, ComplexError, Field, GridSpec, build_complex
from .harmonic import HarmonicBasis, circulation, decompose, period_potential
from .solvers import CG_RTOL, pcg

__all__ = [
    "PotentialBundle",
    "ExteriorComplex",
    "vector_potential",
    "potential_bundle",
    "harmonic_potential",
    "gauge_shift",
    "circulation",
    "build_exterior",
    "boundary_wedge",
    "boundary_circulation",
    "boundary_circulation_prime",
]


@dataclass(eq=False)
class PotentialBundle:
    A: Field
    A_sigma: Field
    A_harm: Field
    phi: Field | None = None
    periods: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# gauged curl-curl solve


def _curlcurl(c: CellComplex) -> sp.csr_matrix:
    cache = c.__dict__.setdefault("_curlcurl_cache", {})
    if "K" not in cache:
        W2 = sp.diags(c.mass2)
        W1d0 = sp.diags(c.mass1) @ c.d0
        K = c.d1.T @ W2 @ c.d1 + W1d0 @ sp.diags(1.0 / c.mass0) @ W1d0.T
        cache["K"] = K.tocsr()
    return cache["K"]


def _project_out_rho(c: CellComplex, A: np.ndarray, rho: list[Field]) -> np.ndarray:
    if not rho:
        return A
    R = np.array([r.values for r in rho])
    G = (R * c.mass1) @ R.T
    coef = np.linalg.solve(G, (R * c.mass1) @ A)
    return A - coef @ R


def _solve_potential(c: CellComplex, b: np.ndarray, rho: list[Field], rtol: float) -> np.ndarray:
    if not np.any(b):
        return np.zeros(c.size(1))
    A = pcg(_curlcurl(c), c.d1.T @ (c.mass2 * b), rtol=rtol)
    return _project_out_rho(c, A, rho)


def _harmonic_potentials(basis: HarmonicBasis) -> list[Field]:
    if basis.a_harm is None:
        c = basis.complex
        basis.a_harm = [Field(1, _solve_potential(c, hf.values, basis.rho, basis.solver_tolerance), c) for hf in basis.h_fields]
    return basis.a_harm


def harmonic_potential(B_harm: Field, basis: HarmonicBasis, *, tol: float = 1e-8) -> Field:
    """Gauged potential of a field in the harmonic span.

    The result is a linear combination of the precomputed potentials of the
    basis fields, so the map is exactly linear up to rounding.
    """
    c = basis.complex
    coef = np.array([np.dot(B_harm.values[s.faces], s.face_signs) for s in basis.atlas.surfaces])
    resid = B_harm.values - sum((ci * hf.values for ci, hf in zip(coef, basis.h_fields)), np.zeros(c.size(2)))
    scale = max(1.0, float(np.max(np.abs(B_harm.values), initial=0.0)))
    if np.max(np.abs(resid), initial=0.0) > tol * scale:
        raise ComplexError(f"field is not in the harmonic span (residual {np.max(np.abs(resid)):.3e})")
    out = np.zeros(c.size(1))
    for ci, a in zip(coef, _harmonic_potentials(basis)):
        out += ci * a.values
    return Field(1, out, c)


def potential_bundle(B: Field, basis: HarmonicBasis) -> PotentialBundle:
    """A = A_sigma + A_harm with both parts in the gauge described above."""
    c = basis.complex
    dec = decompose(B, basis)
    A_sigma = Field(1, _solve_potential(c, dec.B_sigma.values, basis.rho, basis.solver_tolerance), c)
    A_harm = harmonic_potential(dec.B_harm, basis)
    return PotentialBundle(A_sigma + A_harm, A_sigma, A_harm, None, np.zeros(basis.g))


def vector_potential(B: Field, basis: HarmonicBasis) -> Field:
    return potential_bundle(B, basis).A


def gauge_shift(A: Field, phi: Field | None, p, basis: HarmonicBasis) -> Field:
    """``A + d(phi) + sum_i p_i rho_i``; leaves d(A) unchanged."""
    c = basis.complex
    out = A.values.copy()
    if phi is not None:
        if phi.degree != 0 or phi.complex is not c:
            raise ComplexError("gauge scalar must be a 0-cochain on the same complex")
        out += c.d0 @ phi.values
    p = np.zeros(basis.g) if p is None else np.asarray(p, dtype=float)
    if p.shape != (basis.g,):
        raise ComplexError(f"expected {basis.g} periods, got shape {p.shape}")
    for pi, r in zip(p, basis.rho):
        if pi:
            out += pi * r.values
    return Field(1, out, c)


# ---------------------------------------------------------------------------
# exterior complex and boundary quadrature


@dataclass(eq=False)
class ExteriorComplex:
    interior: CellComplex
    complex: CellComplex
    margin: int
    rho_prime: list[Field]
    period_matrix: np.ndarray
    edge_map: np.ndarray  # interior edge position -> exterior edge position (-1 if none)

    @property
    def g(self) -> int:
        return len(self.rho_prime)

    def trace(self, w: Field) -> Field:
        """Pull an exterior 1-cochain back to the shared boundary edges of the interior complex."""
        if w.complex is not self.complex or w.degree != 1:
            raise ComplexError("trace takes a 1-cochain on the exterior complex")
        out = np.zeros(self.interior.size(1))
        ok = self.edge_map >= 0
        out[ok] = w.values[self.edge_map[ok]]
        return Field(1, out, self.interior)

    @cached_property
    def rho_prime_traces(self) -> list[Field]:
        return [self.trace(r) for r in self.rho_prime]


def build_exterior(c: CellComplex, atlas: TopologyAtlas, margin: int = 4, rtol: float = CG_RTOL) -> ExteriorComplex:
    if margin < 2:
        raise ComplexError("exterior margin must be at least 2 cells")
    if len(atlas.exterior_cuts) != atlas.g:
        raise ComplexError(f"recipe {atlas.recipe!r} provides {len(atlas.exterior_cuts)} exterior cuts for g = {atlas.g}")
    s = c.spec
    M = margin
    spec = GridSpec(s.nx + 2 * M, s.ny + 2 * M, s.nz + 2 * M, s.h, tuple(o - M * s.h for o in s.origin))
    mask = np.zeros(spec.shape, dtype=bool)
    mask[1:-1, 1:-1, 1:-1] = True
    mask[M : M + s.nx, M : M + s.ny, M : M + s.nz] &= ~c.mask
    ext = build_complex(mask, spec, require_connected=False)

    ax, i, j, k = c.lattice.edge_position(c.edge_idx)
    gidx = np.full(ax.shape, -1, dtype=np.int64)
    for a in range(3):
        sel = ax == a
        gidx[sel] = ext.lattice.edge(a, i[sel] + M, j[sel] + M, k[sel] + M)
    edge_map = ext.local_index(1, gidx)

    out = ExteriorComplex(c, ext, M, [], np.zeros((0, 0)), edge_map)
    for n, cut in enumerate(atlas.exterior_cuts):
        rho = Field(1, period_potential(ext, make_surface(ext, cut.shifted(M)), rtol), ext)
        # exterior cuts carry no orientation contract; align each with its rim generator
        if circulation(out.trace(rho), atlas.gamma_prime[n]) < 0:
            rho = -rho
        out.rho_prime.append(rho)
    out.period_matrix = np.array(
        [[circulation(r, gp) for gp in atlas.gamma_prime] for r in out.rho_prime_traces]
    ).reshape(atlas.g, atlas.g)
    if not np.array_equal(out.period_matrix, np.eye(atlas.g)):
        raise ComplexError(f"exterior period matrix is not the identity:\n{out.period_matrix}")
    return out


def _face_edges(c: CellComplex):
    """For every boundary face: outward sign and the two edges along each in-plane axis."""
    cache = c.__dict__.setdefault("_face_edge_cache", {})
    if "fe" not in cache:
        bf = np.flatnonzero(c.boundary_faces)
        ax, i, j, k = c.lattice.face_position(c.face_idx[bf])
        pos = np.stack([i, j, k])
        e1 = np.zeros((2, bf.size), dtype=np.int64)
        e2 = np.zeros((2, bf.size), dtype=np.int64)
        for a in range(3):
            sel = ax == a
            b, cc = (a + 1) % 3, (a + 2) % 3
            p = pos[:, sel]
            ub = np.zeros((3, 1), dtype=np.int64)
            uc = np.zeros((3, 1), dtype=np.int64)
            ub[b] = 1
            uc[cc] = 1
            e1[0, sel] = c.lattice.edge(b, *p)
            e1[1, sel] = c.lattice.edge(b, *(p + uc))
            e2[0, sel] = c.lattice.edge(cc, *p)
            e2[1, sel] = c.lattice.edge(cc, *(p + ub))
        cache["fe"] = (c.face_normal_sign[bf].astype(float), c.local_index(1, e1), c.local_index(1, e2))
    return cache["fe"]


def boundary_wedge(w: Field, v: Field) -> float:
    """Surface quadrature of ``(w x n) . v`` over the boundary.

    Tangential components are the averages of the two parallel edges of each
    boundary face; edge circulations already carry one factor h each, which
    together supply the face area.
    """
    c = w.complex
    if v.complex is not c or w.degree != 1 or v.degree != 1:
        raise ComplexError("boundary_wedge takes two 1-cochains on one complex")
    sgn, e1, e2 = _face_edges(c)
    w1 = 0.5 * (w.values[e1[0]] + w.values[e1[1]])
    w2 = 0.5 * (w.values[e2[0]] + w.values[e2[1]])
    v1 = 0.5 * (v.values[e1[0]] + v.values[e1[1]])
    v2 = 0.5 * (v.values[e2[0]] + v.values[e2[1]])
    return float(np.sum(sgn * (w2 * v1 - w1 * v2)))


def boundary_circulation(w: Field, i: int, ext: ExteriorComplex, atlas: TopologyAtlas) -> tuple[float, float]:
    """Circulation of w around the i-th interior generator, computed two ways.

    Returns ``(direct, pairing)``: the explicit cycle sum and the boundary
    pairing of w against the traced exterior period field.
    """
    if not 0 <= i < ext.g:
        raise ComplexError(f"no exterior period field with index {i}")
    direct = circulation(w, atlas.gamma[i])
    pairing = boundary_wedge(w, ext.rho_prime_traces[i])
    return direct, pairing


def boundary_circulation_prime(w: Field, i: int, basis: HarmonicBasis, atlas: TopologyAtlas) -> tuple[float, float]:
    """Same for the boundary generator: cycle sum versus pairing against ``rho[i]``."""
    return circulation(w, atlas.gamma_prime[i]), -boundary_wedge(w, basis.rho[i])

