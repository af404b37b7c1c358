"""Invariant suite: exact identities, gauge invariance and convergence rows.

Every check produces one :class:`Check` row with the measured error and the
tolerance it was held to.  Rows that are expected to converge under grid
refinement get an observed order between consecutive levels; when the error
already sits at the rounding floor the order is not meaningful and the row
passes on the floor instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import build_domain, validate_topology
from .grid import Field, GridSpec, pair_12
from .harmonic import HarmonicBasis, build_basis, circulation, cut_flux
from .helicity import iden_check, upsilon, z_functional
from .potential import (
    _harmonic_potentials,
    boundary_circulation,
    boundary_circulation_prime,
    build_exterior,
    gauge_shift,
    vector_potential,
)

EXPECTED_BETTI = {"box": 0, "solid_torus": 1, "toroidal_shell": 2}
FLUX_MATRIX_TOL = 1e-10
HARMONIC_TOL = 1e-8
IDENTITY_TOL = 1e-10
GAUGE_TOL = 1e-10
CIRCULATION_TOL = 1e-8
# errors below this (relative) count as converged regardless of the observed order
ROUNDOFF_FLOOR = 1e-9
MIN_ORDER = 1.0


@dataclass
class Check:
    name: str
    level: int
    value: float
    tolerance: float
    passed: bool
    order: float | None = None
    note: str = ""

    HEADER = ("check", "level", "value", "tolerance", "order", "pass", "note")

    def row(self) -> list:
        order = "n/a" if self.order is None else self.order
        return [self.name, self.level, float(self.value), float(self.tolerance), order, "pass" if self.passed else "FAIL", self.note]


@dataclass
class SuiteResult:
    recipe: str
    checks: list[Check] = field(default_factory=list)
    bases: dict = field(default_factory=dict)  # level -> HarmonicBasis

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> Check | None:
        return next((c for c in self.checks if not c.passed), None)


def _dyadic(rng, n):
    """Random values with few mantissa bits, so sums of them are exact."""
    return rng.integers(-(2**20), 2**20, size=n).astype(float) / 2.0**10


def random_tangential_field(basis: HarmonicBasis, rng, harmonic=True) -> tuple[Field, Field]:
    """A random divergence-free tangential field and a potential of it.

    The zero-flux part is the curl of random values on interior edges; the
    harmonic part reuses the cached potentials of the basis fields.
    """
    c = basis.complex
    e = rng.standard_normal(c.size(1)) * c.interior_edges
    B = c.d1 @ e
    A = e.copy()
    if harmonic and basis.g:
        coef = rng.standard_normal(basis.g)
        for ci, hf, ah in zip(coef, basis.h_fields, _harmonic_potentials(basis)):
            B = B + ci * hf.values
            A = A + ci * ah.values
    return Field(2, B, c), Field(1, A, c)


def check_basis_matrices(basis: HarmonicBasis, level: int) -> list[Check]:
    """Recompute flux and period matrices from the fields and compare with the stored ones and with I."""
    atlas = basis.atlas
    g = basis.g
    out = []
    fm = np.array([[cut_flux(hf, s) for s in atlas.surfaces] for hf in basis.h_fields]).reshape(g, g)
    err = max(float(np.max(np.abs(fm - np.eye(g)), initial=0.0)), float(np.max(np.abs(basis.flux_matrix - fm), initial=0.0)))
    # the matrix only means something if the fields are harmonic: check that too
    c = basis.complex
    div = curl = bnd = 0.0
    for hf in basis.h_fields:
        scale = max(float(np.max(np.abs(hf.values), initial=0.0)), 1e-300)
        div = max(div, float(np.max(np.abs(c.d2 @ hf.values), initial=0.0)) / scale)
        curl = max(curl, float(np.max(np.abs(c.interior_edges * (c.d1.T @ (c.mass2 * hf.values))), initial=0.0)) / scale)
        bnd = max(bnd, float(np.max(np.abs(hf.values[c.boundary_faces]), initial=0.0)))
    fields_ok = div <= HARMONIC_TOL and curl <= HARMONIC_TOL and bnd == 0.0
    note = f"fields: div {div:.1e}, curl {curl:.1e}, boundary {bnd:.1e} (tol {HARMONIC_TOL:g})"
    out.append(Check("flux_matrix", level, err, FLUX_MATRIX_TOL, err <= FLUX_MATRIX_TOL and fields_ok, note=note))
    pm = np.array([[circulation(r, gm) for gm in atlas.gamma] for r in basis.rho]).reshape(g, g)
    err = max(float(np.max(np.abs(pm - np.eye(g)), initial=0.0)), float(np.max(np.abs(basis.period_matrix - pm), initial=0.0)))
    out.append(Check("period_matrix", level, err, 0.0, err == 0.0, note="exact"))
    return out


def level_checks(recipe: str, n: int, *, params=None, seed: int = 0, gauge_samples: int = 100, basis: HarmonicBasis | None = None, domain=None):
    """All single-level checks plus the raw errors used for convergence rows."""
    params = params or {}
    rng = np.random.default_rng(seed)
    c, atlas = domain if domain is not None else build_domain(recipe, GridSpec.cube(n), **params)
    out: list[Check] = []

    dd1 = abs(c.d1 @ c.d0)
    dd2 = abs(c.d2 @ c.d1)
    v = max(dd1.max() if dd1.nnz else 0.0, dd2.max() if dd2.nnz else 0.0)
    out.append(Check("d_squared_zero", n, v, 0.0, v == 0.0, note="bitwise"))

    topo = validate_topology(c, atlas)
    for name, (ok, detail) in topo.checks.items():
        out.append(Check(f"topology_{name}", n, 0.0 if ok else 1.0, 0.0, ok, note=str(detail)))
    if recipe in EXPECTED_BETTI or recipe == "nfold_torus":
        want = EXPECTED_BETTI.get(recipe, params.get("n", 2))
        out.append(Check("betti_number", n, abs(atlas.g - want), 0.0, atlas.g == want, note=f"g = {atlas.g}, expected {want}"))

    # discrete Stokes on dyadic data: both sides are exact sums
    A = Field(1, _dyadic(rng, c.size(1)), c)
    dA = Field(2, c.d1 @ A.values, c)
    err = max((abs(circulation(A, gp) - cut_flux(dA, s)) for gp, s in zip(atlas.gamma_prime, atlas.surfaces)), default=0.0)
    out.append(Check("stokes", n, err, 0.0, err == 0.0, note="exact"))

    basis = basis if basis is not None else build_basis(c, atlas)
    mats = check_basis_matrices(basis, n)
    out += mats
    if not all(m.passed for m in mats):
        # every later check builds on the basis; report the broken matrix and stop
        return out, None, basis

    # flux identity: pairing with rho_i reads off the cut flux
    worst = 0.0
    for _ in range(5):
        B, _A = random_tangential_field(basis, rng)
        for r, s in zip(basis.rho, atlas.surfaces):
            phi = cut_flux(B, s)
            worst = max(worst, abs(pair_12(c, r, B) - phi) / max(1.0, abs(phi)))
    out.append(Check("flux_identity", n, worst, IDENTITY_TOL, worst <= IDENTITY_TOL))

    # gauge invariance of Upsilon, and the exact shift of H
    dU = dH = 0.0
    for _ in range(gauge_samples):
        B, A = random_tangential_field(basis, rng)
        phi = Field(0, rng.standard_normal(c.size(0)), c)
        p = rng.standard_normal(basis.g)
        A2 = gauge_shift(A, phi, p, basis)
        r1 = upsilon(B, A, atlas)
        r2 = upsilon(B, A2, atlas)
        scale = max(1.0, float(np.linalg.norm(A.values) * np.linalg.norm(B.values)))
        dU = max(dU, abs(r2.upsilon - r1.upsilon) / scale)
        shift = float(np.dot(p, r1.fluxes))
        dH = max(dH, abs((r2.H_classical - r1.H_classical) - shift) / max(1.0, abs(shift), abs(r1.H_classical)))
    out.append(Check("gauge_invariance", n, dU, GAUGE_TOL, dU <= GAUGE_TOL, note=f"{gauge_samples} samples"))
    out.append(Check("helicity_shift", n, dH, GAUGE_TOL, dH <= GAUGE_TOL, note=f"{gauge_samples} samples"))

    conv = {}
    if basis.g:
        B, _ = random_tangential_field(basis, rng)
        A = vector_potential(B, basis)
        ext = build_exterior(c, atlas)
        worst = 0.0
        for i in range(basis.g):
            for direct, pairing in (boundary_circulation(A, i, ext, atlas), boundary_circulation_prime(A, i, basis, atlas)):
                worst = max(worst, abs(direct - pairing) / max(1.0, abs(direct)))
        out.append(Check("boundary_circulation", n, worst, CIRCULATION_TOL, worst <= CIRCULATION_TOL))

        # potentials assembled without a fresh solve, so the error reflects the identity itself
        _, w = random_tangential_field(basis, rng)
        _, v = random_tangential_field(basis, rng)
        v = gauge_shift(v, Field(0, rng.standard_normal(c.size(0)), c), rng.standard_normal(basis.g), basis)
        lhs, rhs = iden_check(w, v, atlas)
        conv["iden_check"] = abs(lhs - rhs) / max(1.0, abs(lhs))

        # two fields with equal fluxes: Z and Upsilon must change by the same amount
        B1, A1 = random_tangential_field(basis, rng, harmonic=False)
        Bh = Field(2, B.values - B1.values, c)
        Ah = Field(1, A.values - A1.values, c)
        # B1 carries no flux, so B and B - B1 share all cut fluxes
        dZ = z_functional(B, A, basis) - z_functional(Bh, Ah, basis)
        dY = upsilon(B, A, atlas).upsilon - upsilon(Bh, Ah, atlas).upsilon
        conv["z_consistency"] = abs(dZ - dY) / max(1.0, abs(dY))
    return out, conv, basis


def observed_order(errors: list[float], levels: list[int]) -> list[float | None]:
    out: list[float | None] = [None]
    for (e0, n0), (e1, n1) in zip(zip(errors, levels), zip(errors[1:], levels[1:])):
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(n1 / n0))
        else:
            out.append(math.inf if e1 == 0 else None)
    return out


def run_suite(recipe: str, levels, *, params=None, seed: int = 0, gauge_samples: int = 100, basis_override=None) -> SuiteResult:
    """Run every check at each level; ``basis_override`` maps a level to a preloaded ``(complex, atlas, basis)``."""
    levels = sorted(int(n) for n in levels)
    res = SuiteResult(recipe)
    conv_rows: dict[str, list[float]] = {}
    for n in levels:
        pre = (basis_override or {}).get(n)
        checks, conv, res.bases[n] = level_checks(
            recipe, n, params=params, seed=seed, gauge_samples=gauge_samples,
            basis=None if pre is None else pre[2], domain=None if pre is None else pre[:2],
        )
        res.checks += checks
        if conv is None:
            return res
        for k, v in conv.items():
            conv_rows.setdefault(k, []).append(v)
    for name in ("iden_check", "z_consistency"):
        if name not in conv_rows:
            res.checks.append(Check(name, levels[-1], 0.0, 0.0, True, None, "n/a (g = 0)"))
            continue
        errs = conv_rows[name]
        for k, (n, e, p) in enumerate(zip(levels, errs, observed_order(errs, levels))):
            at_floor = e <= ROUNDOFF_FLOOR
            if at_floor:
                ok, note = True, "rounding floor"
            elif k == 0:
                # reference level: judged through the orders of the finer levels
                ok, note = len(levels) > 1, "reference level"
            else:
                ok, note = p is not None and p >= MIN_ORDER, f"order >= {MIN_ORDER:g} required"
            res.checks.append(Check(name, n, e, ROUNDOFF_FLOOR, ok, p, note))
    return res
