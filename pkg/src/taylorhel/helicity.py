"""Helicity functionals on a multiply connected complex.

``H`` is the plain pairing of a potential with its field.  ``Upsilon``
subtracts, for each handle, the circulation of A around the interior
generator times the flux of B through the matching cut, which removes the
dependence on the choice of A.  ``Z`` replaces that correction by a surface
term built from the split ``A = A_sigma + A_harm``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import TopologyAtlas
from .grid import ComplexError, Field, pair_12
from .harmonic import HarmonicBasis, circulation, cut_flux, decompose
from .potential import boundary_wedge, harmonic_potential

CURL_TOL = 1e-8


@dataclass
class HelicityReport:
    H_classical: float
    upsilon: float
    Z: float = float("nan")
    circulations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fluxes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gauge_record: dict = field(default_factory=dict)

    def csv_header(self) -> list[str]:
        g = self.fluxes.size
        return ["H", "Upsilon", "Z"] + [f"flux_{i + 1}" for i in range(g)] + [f"circ_{i + 1}" for i in range(g)]

    def csv_row(self) -> list[float]:
        return [self.H_classical, self.upsilon, self.Z, *self.fluxes.tolist(), *self.circulations.tolist()]


def _check_curl(A: Field, B: Field, tol: float = CURL_TOL):
    if A.degree != 1 or B.degree != 2 or A.complex is not B.complex:
        raise ComplexError("expected a 1-cochain A and a 2-cochain B on one complex")
    res = float(np.max(np.abs(A.complex.d1 @ A.values - B.values), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(B.values), initial=0.0)))
    if res > tol * scale:
        raise ComplexError(f"d(A) does not reproduce B (max residual {res:.3e})")


def classical_helicity(A: Field, B: Field, *, tol: float = CURL_TOL) -> float:
    _check_curl(A, B, tol)
    return pair_12(A.complex, A, B)


def upsilon(B: Field, A: Field, atlas: TopologyAtlas, basis: HarmonicBasis | None = None, *, tol: float = CURL_TOL) -> HelicityReport:
    """Gauge-invariant helicity together with the pieces it is built from.

    ``basis`` is accepted for symmetry with :func:`z_functional`; circulations
    and fluxes only need the atlas.
    """
    H = classical_helicity(A, B, tol=tol)
    circ = np.array([circulation(A, gm) for gm in atlas.gamma])
    flux = np.array([cut_flux(B, s) for s in atlas.surfaces])
    ups = H - float(np.dot(circ, flux)) if atlas.g else H
    return HelicityReport(H, ups, float("nan"), circ, flux)


def z_functional(B: Field, A: Field, basis: HarmonicBasis, *, tol: float = CURL_TOL) -> float:
    """``pair(A, B)`` minus the boundary term of ``A_sigma x n . A_harm``."""
    _check_curl(A, B, tol)
    c = A.complex
    if basis.g == 0:
        return pair_12(c, A, B)
    A_harm = harmonic_potential(decompose(B, basis).B_harm, basis)
    A_sigma = A - A_harm
    return pair_12(c, A, B) - boundary_wedge(A_sigma, A_harm)


def helicity_report(B: Field, A: Field, basis: HarmonicBasis, *, tol: float = CURL_TOL) -> HelicityReport:
    rep = upsilon(B, A, basis.atlas, basis, tol=tol)
    rep.Z = z_functional(B, A, basis, tol=tol)
    return rep


def iden_check(w: Field, v: Field, atlas: TopologyAtlas) -> tuple[float, float]:
    """Boundary pairing of two potentials versus its expression in periods.

    Returns ``(lhs, rhs)`` with ``lhs`` the surface quadrature of
    ``(w x n) . v`` and ``rhs = sum_i circ(w, gamma_i) circ(v, gamma'_i)
    - circ(w, gamma'_i) circ(v, gamma_i)``.
    """
    lhs = boundary_wedge(w, v)
    rhs = 0.0
    for gm, gp in zip(atlas.gamma, atlas.gamma_prime):
        rhs += circulation(w, gm) * circulation(v, gp) - circulation(w, gp) * circulation(v, gm)
    return lhs, rhs
