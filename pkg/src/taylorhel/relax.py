"""Energy relaxation at fixed gauge-invariant helicity and fixed cut fluxes.

Fields are parameterised as ``B = B0 + d1 a`` with ``a`` supported on
interior edges, so the cut fluxes and the boundary condition never change.
With that parameterisation the helicity is an exact quadratic in ``a``:

    Upsilon(a) = Upsilon(B0) + 2 a . avg8 B0 + a . avg8 d1 a,

which lets the constraint be restored exactly after every descent step by
solving a scalar quadratic.

A constrained critical point satisfies ``J = lambda * Be`` on interior edges,
with ``J = P d1^T B / h^2`` the edge circulation of curl B and
``Be = P avg8 B / h`` the edge circulation of B; this is the discrete linear
force-free condition, and ``lambda`` is reported as the edge Rayleigh
quotient ``J . Be / Be . Be``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, eigsh, spsolve, splu

from .grid import CellComplex, ComplexError, Field
from .harmonic import HarmonicBasis, circulation, cut_flux, decompose
from .helicity import upsilon
from .potential import vector_potential

log = logging.getLogger(__name__)


class RelaxError(RuntimeError):
    pass


@dataclass
class RelaxOptions:
    tol: float = 1e-6
    max_iter: int = 50_000
    energy_slack: float = 1e-12
    record_every: int = 1


@dataclass(eq=False)
class RelaxReport:
    B_final: Field
    lam: float
    residual: float
    energies: np.ndarray
    upsilon0: float
    upsilon_final: float
    upsilon_drift: float  # relative
    flux_drift: float  # max absolute change of any cut flux, as measured on the stored field
    iterations: int
    converged: bool
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # flux change carried by the update itself: circulation of a around each rim (Stokes)
    flux_drift_structural: float = 0.0

    @property
    def energy_monotone(self) -> bool:
        e = self.energies
        return bool(np.all(np.diff(e) <= 1e-12 * np.abs(e[:-1])))


def _interior(c: CellComplex) -> np.ndarray:
    return c.interior_edges.astype(float)


def force_free_residual(B: Field) -> tuple[float, float]:
    """``(lambda, |J - lambda Be| / |Be|)`` on interior edges."""
    c = B.complex
    if B.degree != 2:
        raise ComplexError("force_free_residual takes a 2-cochain")
    P = _interior(c)
    Be = P * (c.avg8 @ B.values) / c.h
    nb = float(Be @ Be)
    if nb == 0.0:
        raise ComplexError("force-free residual is undefined for a zero field")
    J = P * (c.d1.T @ B.values) / c.h**2
    lam = float(J @ Be) / nb
    r = J - lam * Be
    return lam, math.sqrt(float(r @ r) / nb)


class _Problem:
    def __init__(self, B0: Field, ups0: float):
        c = B0.complex
        self.c = c
        self.h = c.h
        self.P = _interior(c)
        self.B0 = B0.values
        self.ups0 = ups0
        self.avg8 = c.avg8
        self.d1 = c.d1
        self.d1T = c.d1.T.tocsr()
        self.lin = 2.0 * self.P * (self.avg8 @ self.B0)

    def field(self, a):
        return self.B0 + self.d1 @ a

    def energy(self, B):
        return 0.5 * float(B @ B) / self.h

    def helicity(self, a):
        return self.ups0 + float(a @ self.lin) + float(a @ (self.P * (self.avg8 @ (self.d1 @ a))))

    def grad_energy(self, B):
        return self.P * (self.d1T @ B) / self.h

    def grad_helicity(self, B):
        return 2.0 * self.P * (self.avg8 @ B)

    def quad(self, n):
        return float(n @ (self.P * (self.avg8 @ (self.d1 @ n))))

    def restore(self, a, target):
        """Move along the helicity gradient until the helicity equals ``target``."""
        B = self.field(a)
        n = self.grad_helicity(B)
        c0 = self.helicity(a) - target
        c1 = float(n @ n)
        c2 = self.quad(n)
        if c0 == 0.0:
            return a
        if abs(c2) * abs(c0) < 1e-14 * c1 * c1:
            tau = -c0 / c1
        else:
            disc = c1 * c1 - 4.0 * c2 * c0
            if disc < 0:
                raise RelaxError("helicity cannot be restored along the gradient direction")
            # root of smallest magnitude, in the cancellation-free form
            tau = -2.0 * c0 / (c1 + math.copysign(math.sqrt(disc), c1))
        return a + tau * n


def woltjer_relax(B0: Field, basis: HarmonicBasis, opts: RelaxOptions | None = None) -> RelaxReport:
    """Minimise the magnetic energy at fixed helicity and cut fluxes."""
    opts = opts or RelaxOptions()
    c = B0.complex
    decompose(B0, basis)  # validates divergence and tangency
    A0 = vector_potential(B0, basis)
    ups0 = upsilon(B0, A0, basis.atlas).upsilon
    flux0 = np.array([cut_flux(B0, s) for s in basis.atlas.surfaces])
    scale = float(B0.values @ B0.values) / c.h
    if not np.any(flux0) and abs(ups0) <= 1e-12 * scale:
        raise RelaxError("zero helicity and zero fluxes: the constrained minimiser is B = 0")
    prob = _Problem(B0, ups0)

    a = np.zeros(c.size(1))
    B = prob.field(a)
    W = prob.energy(B)
    energies, residuals = [W], []
    alpha = c.h / 12.0
    prev = None
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        gW = prob.grad_energy(B)
        n = prob.grad_helicity(B)
        nn = float(n @ n)
        gt = gW - (float(gW @ n) / nn) * n if nn > 0 else gW
        lam, res = force_free_residual(Field(2, B, c))
        residuals.append(res)
        if res <= opts.tol:
            converged = True
            break
        if prev is not None:
            s, y = a - prev[0], gt - prev[1]
            sy = float(s @ y)
            if sy > 0:
                alpha = float(s @ s) / sy
        prev = (a, gt)
        for _ in range(60):
            trial = prob.restore(a - alpha * gt, ups0)
            Bt = prob.field(trial)
            Wt = prob.energy(Bt)
            if Wt <= W + opts.energy_slack * abs(W):
                break
            alpha *= 0.5
        else:
            log.warning("no energy-decreasing step at iteration %d; stopping", it)
            break
        a, B, W = trial, Bt, Wt
        if it % opts.record_every == 0:
            energies.append(W)
    Bf = Field(2, B, c)
    lam, res = force_free_residual(Bf)
    ups_f = prob.helicity(a)
    flux_f = np.array([cut_flux(Bf, s) for s in basis.atlas.surfaces])
    drift = abs(ups_f - ups0) / max(abs(ups0), 1e-300)
    log.info("relaxation: %d iterations, residual %.3e, lambda %.6g", it, res, lam)
    return RelaxReport(
        B_final=Bf,
        lam=lam,
        residual=res,
        energies=np.array(energies),
        upsilon0=ups0,
        upsilon_final=ups_f,
        upsilon_drift=drift,
        flux_drift=float(np.max(np.abs(flux_f - flux0), initial=0.0)),
        iterations=it,
        converged=converged,
        residuals=np.array(residuals),
        flux_drift_structural=max((abs(circulation(Field(1, a, c), gp)) for gp in basis.atlas.gamma_prime), default=0.0),
    )


# ---------------------------------------------------------------------------
# reference solutions on small grids


class _Pencil:
    """Interior-edge matrices ``K`` (energy), ``S`` (helicity) and the gauge penalty ``G``."""

    def __init__(self, c: CellComplex):
        self.c = c
        ie = np.flatnonzero(c.interior_edges)
        iv = np.flatnonzero(c.vert_count == 8)
        self.ie = ie
        d1i = c.d1[:, ie]
        self.K = (d1i.T @ d1i / c.h).tocsc()
        S = (c.avg8 @ c.d1)[ie][:, ie]
        self.S = (0.5 * (S + S.T)).tocsc()
        d0i = c.d0[ie][:, iv]
        self.G = (d0i @ d0i.T / c.h).tocsc()
        self.KG = (self.K + self.G).tocsc()

    def embed(self, x):
        out = np.zeros(self.c.size(1))
        out[self.ie] = x
        return out


def curl_eigen_oracle(c: CellComplex, sign: int = 1, tol: float = 1e-12, maxiter: int = 200):
    """Smallest-magnitude eigenvalue of the requested sign of ``K a = lam S a``.

    A Lanczos estimate from ``eigsh`` is refined by shifted inverse
    iteration.  Returns ``(lam, B)`` with ``B = d1 a`` the eigenfield.
    """
    pen = _Pencil(c)
    lu = splu(pen.KG)
    which = "LA" if sign > 0 else "SA"
    # S x = mu (K + G) x  <=>  (K + G)^-1 S x = mu x, mu = 1 / lam; symmetric in the (K+G) inner product
    Minv = LinearOperator(pen.KG.shape, matvec=lu.solve, dtype=float)
    mu, vec = eigsh(pen.S, k=1, M=pen.KG, Minv=Minv, which=which, tol=1e-10)
    lam = 1.0 / float(mu[0])
    x = vec[:, 0]
    shift = lam * (1.0 - 1e-3)
    lu_s = splu((pen.KG - shift * pen.S).tocsc())
    for _ in range(maxiter):
        y = lu_s.solve(pen.S @ x)
        y /= np.linalg.norm(y)
        new = float(y @ (pen.K @ y)) / float(y @ (pen.S @ y))
        done = abs(new - lam) <= tol * abs(new)
        x, lam = y, new
        if done:
            break
    return lam, Field(2, c.d1 @ pen.embed(x), c)


def flux_constrained_oracle(B0: Field, basis: HarmonicBasis, target: float, bracket: tuple[float, float], tol: float = 1e-13):
    """Constrained minimiser for fields with nonzero harmonic part.

    Solves ``(K + G - lam S) a = lam b`` with ``b = P avg8 B_harm`` and
    finds ``lam`` in ``bracket`` such that the helicity equals ``target``.
    ``bracket`` should lie strictly between the nearest negative and positive
    eigenvalues of the zero-flux pencil.
    """
    c = B0.complex
    pen = _Pencil(c)
    B_h = decompose(B0, basis).B_harm
    A_h = vector_potential(B_h, basis)
    ups_h = upsilon(B_h, A_h, basis.atlas).upsilon
    b = (c.avg8 @ B_h.values)[pen.ie]

    def solve(lam):
        return spsolve((pen.KG - lam * pen.S).tocsc(), lam * b)

    def ups(lam):
        a = solve(lam)
        return ups_h + 2.0 * float(a @ b) + float(a @ (pen.S @ a)) - target

    lam = brentq(ups, bracket[0], bracket[1], xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200)
    a = pen.embed(solve(lam))
    return lam, Field(2, B_h.values + c.d1 @ a, c)
