"""Discrete harmonic Neumann fields and the decomposition B = B_sigma + B_harm.

Two representations of the g-dimensional harmonic space are built from cut
potentials:

* ``h_fields[i]`` (2-cochains): a cell-centred potential with a unit jump
  across the primal faces of cut i.  Divergence-free to solver tolerance,
  zero on boundary faces, normalised so that its flux through cut j is
  ``delta_ij``.
* ``rho[i]`` (1-cochains): a vertex potential with a unit jump across the
  crossing edges of cut i.  Closed exactly; periods around the interior
  generators are exactly ``delta_ik``.

The two sets are not discrete Hodge duals of each other; each carries the
exact property the helicity identities rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CuttingSurface, Cycle, TopologyAtlas
from .grid import CellComplex, ComplexError, Field
from .solvers import CG_RTOL, graph_components, solve_pinned

# theta is rounded to this dyadic grid so cycle sums of rho are exact
_QUANTUM = 2.0**-32


class HarmonicError(ValueError):
    pass


def cut_flux(B: Field, surf: CuttingSurface) -> float:
    """Signed flux of a 2-cochain through a cutting surface."""
    if B.degree != 2:
        raise ComplexError("cut_flux takes a 2-cochain")
    if surf.faces.size and surf.faces.max() >= B.values.size:
        raise ComplexError("surface does not belong to this complex")
    return float(np.dot(B.values[surf.faces], surf.face_signs))


def circulation(A: Field, cycle: Cycle) -> float:
    """Signed sum of edge values along a loop."""
    if A.degree != 1:
        raise ComplexError("circulation takes a 1-cochain")
    if cycle.edges.size and cycle.edges.max() >= A.values.size:
        raise ComplexError("cycle does not belong to this complex")
    return float(np.dot(A.values[cycle.edges], cycle.signs))


@dataclass(eq=False)
class HarmonicBasis:
    complex: CellComplex
    atlas: TopologyAtlas
    h_fields: list[Field]
    rho: list[Field]
    flux_matrix: np.ndarray
    period_matrix: np.ndarray
    solver_tolerance: float = CG_RTOL
    a_harm: list[Field] | None = field(default=None, repr=False)

    @property
    def g(self) -> int:
        return len(self.h_fields)


@dataclass(eq=False)
class Decomposition:
    B_sigma: Field
    B_harm: Field
    coefficients: np.ndarray


def _cell_laplacian(c: CellComplex):
    d2i = c.d2[:, np.flatnonzero(c.interior_faces)]
    return d2i, (d2i @ d2i.T).tocsr()


def _raw_flux_field(c: CellComplex, surf: CuttingSurface, d2i, L, rtol) -> np.ndarray:
    jump = surf.face_chain(c.size(2))
    rhs = c.d2 @ jump
    comps = np.zeros(c.size(3), dtype=np.int64)
    theta = solve_pinned(L, rhs, comps, rtol=rtol)
    vals = jump.copy()
    vals[c.interior_faces] -= d2i.T @ theta
    vals[c.boundary_faces] = 0.0
    return vals


def compute_flux_basis(c: CellComplex, atlas: TopologyAtlas, rtol: float = CG_RTOL):
    """Flux-normalised harmonic 2-cochains; returns ``(fields, raw_flux_matrix)``."""
    g = len(atlas.surfaces)
    if g == 0:
        return [], np.zeros((0, 0))
    d2i, L = _cell_laplacian(c)
    raw = np.array([_raw_flux_field(c, s, d2i, L, rtol) for s in atlas.surfaces])
    F = np.array([[np.dot(raw[i][s.faces], s.face_signs) for s in atlas.surfaces] for i in range(g)])
    if abs(np.linalg.det(F)) < 1e-12 * np.prod(np.abs(np.diag(F))):
        raise HarmonicError("flux matrix is singular; the atlas cuts are not independent")
    coef = np.linalg.inv(F)
    # flux(h'_i, S_j) = sum_k coef[i,k] F[k,j] = delta_ij
    fields = [Field(2, coef[i] @ raw, c) for i in range(g)]
    return fields, F


def period_potential(c: CellComplex, surf: CuttingSurface, rtol: float = CG_RTOL) -> np.ndarray:
    """Edge cochain ``d theta + K`` with unit jump K across the surface's crossing edges."""
    K = surf.crossing_cochain(c.size(1))
    W = c.mass1
    L = (c.d0.T @ (c.d0.multiply(W[:, None]))).tocsr()
    rhs = -(c.d0.T @ (W * K))
    comps = graph_components(abs(c.d0.T) @ abs(c.d0))
    theta = solve_pinned(L, rhs, comps, rtol=rtol)
    theta = np.round(theta / _QUANTUM) * _QUANTUM
    return c.d0 @ theta + K


def compute_period_basis(c: CellComplex, atlas: TopologyAtlas, rtol: float = CG_RTOL) -> list[Field]:
    return [Field(1, period_potential(c, s, rtol), c) for s in atlas.surfaces]


def build_basis(c: CellComplex, atlas: TopologyAtlas, rtol: float = CG_RTOL) -> HarmonicBasis:
    h_fields, _ = compute_flux_basis(c, atlas, rtol)
    rho = compute_period_basis(c, atlas, rtol)
    fm = np.array([[cut_flux(hf, s) for s in atlas.surfaces] for hf in h_fields]).reshape(len(h_fields), atlas.g)
    pm = np.array([[circulation(r, gm) for gm in atlas.gamma] for r in rho]).reshape(len(rho), atlas.g)
    return HarmonicBasis(c, atlas, h_fields, rho, fm, pm, rtol)


def divergence_residual(B: Field) -> float:
    return float(np.max(np.abs(B.complex.d2 @ B.values), initial=0.0))


def decompose(B: Field, basis: HarmonicBasis, *, div_tol: float = 1e-8) -> Decomposition:
    """Split B into its zero-cut-flux part and its harmonic part.

    Coefficients are the cut fluxes of B (the basis is flux-normalised).
    """
    c = basis.complex
    if B.complex is not c or B.degree != 2:
        raise ComplexError("decompose takes a 2-cochain on the basis complex")
    scale = max(np.max(np.abs(B.values), initial=0.0), 1e-300)
    if divergence_residual(B) > div_tol * scale:
        raise HarmonicError(f"field is not divergence-free (residual {divergence_residual(B):.3e})")
    if np.any(B.values[c.boundary_faces] != 0.0):
        raise HarmonicError("field is not tangential (nonzero boundary-face flux)")
    coef = np.array([cut_flux(B, s) for s in basis.atlas.surfaces])
    harm = np.zeros(c.size(2))
    for ci, hf in zip(coef, basis.h_fields):
        harm += ci * hf.values
    B_harm = Field(2, harm, c)
    return Decomposition(B - B_harm, B_harm, coef)


def is_in_Qperp(v: Field, basis: HarmonicBasis, tol: float = 1e-9) -> bool:
    """Divergence-free, tangential and with vanishing cut fluxes (relative to |v|)."""
    c = basis.complex
    scale = float(np.linalg.norm(v.values))
    if scale == 0.0:
        return True
    if divergence_residual(v) > tol * scale:
        return False
    if np.any(v.values[c.boundary_faces] != 0.0):
        return False
    return all(abs(cut_flux(v, s)) <= tol * scale for s in basis.atlas.surfaces)
