"""Incompressible viscous resistive MHD on the voxel complex.

Both B and u are face fluxes.  The induction equation is advanced in
constrained-transport form ``B <- B - dt d1 E`` with an edge EMF

    E = E_adv(u, B) + eta * J,

where ``J = P d1^T B / h^2`` is the edge circulation of curl B and ``P`` zeroes
every boundary edge.  Because E vanishes on the boundary, the cell
divergence of B and the flux of B through every cut are untouched by a
step (up to rounding of the individual face updates).

The advective EMF is built from cell vectors so that it is orthogonal to B
under ``pair_12`` cell by cell; the Lorentz force is assembled from the same
cell vectors, so the energy exchanged between u and B cancels identically.
Momentum advection uses the rotational (Lamb vector) form ``u x omega``.

Two integrators are available.  ``euler`` is the explicit scheme with the
stability guard ``dt <= 0.25 h^2 / max(eta, nu, h |u|)``.  ``midpoint`` is
the implicit midpoint rule solved by fixed-point iteration with the
diffusive terms treated implicitly; its discrete helicity and energy
budgets close to solver precision.

The potential A is carried along with ``A <- A - dt E`` so that
``d1 A = B`` holds at every step without a fresh solve.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.sparse import identity

from .geometry import TopologyAtlas, build_domain
from .grid import CellComplex, ComplexError, Field, GridSpec, pair_12, pair_22
from .harmonic import HarmonicBasis, build_basis, cut_flux, decompose
from .helicity import helicity_report
from .potential import vector_potential
from .solvers import CG_RTOL, pcg

log = logging.getLogger(__name__)

MODES = ("kinematic", "coupled")
INTEGRATORS = ("euler", "midpoint")
FIELD_NAMES = ("abc", "linked", "random", "zero")
VELOCITY_NAMES = ("abc", "zero")


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


@dataclass
class InitialCondition:
    """Named initial data.

    ``field`` selects the potential of the zero-flux part of B, scaled by
    ``amplitude``; ``harmonic`` gives the cut fluxes.  ``velocity`` and
    ``u_amplitude`` select the (projected) initial velocity.
    """

    field: str = "abc"
    amplitude: float = 1.0
    wavenumber: float = 1.0
    harmonic: tuple = (1.0,)
    seed: int = 7
    velocity: str = "zero"
    u_amplitude: float = 0.0
    smoothing: float = 0.003

    def validate(self):
        if self.field not in FIELD_NAMES:
            raise ConfigError(f"unknown initial field {self.field!r}; choose from {FIELD_NAMES}")
        if self.velocity not in VELOCITY_NAMES:
            raise ConfigError(f"unknown initial velocity {self.velocity!r}; choose from {VELOCITY_NAMES}")
        if not self.smoothing >= 0:
            raise ConfigError("smoothing must be >= 0")
        for name in ("amplitude", "wavenumber", "u_amplitude"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")


@dataclass
class SimConfig:
    recipe: str = "solid_torus"
    grid: GridSpec = field(default_factory=lambda: GridSpec.cube(24))
    recipe_params: dict = field(default_factory=dict)
    eta: float = 1e-2
    nu: float = 0.0
    dt: float | None = None  # None: the largest step the stability guard allows
    t_end: float = 1.0
    mode: str = "kinematic"
    integrator: str = "midpoint"
    initial: InitialCondition = field(default_factory=InitialCondition)
    cadence: int = 1
    picard_tol: float = 1e-14
    picard_maxiter: int = 200

    def validate(self):
        if self.eta < 0 or not math.isfinite(self.eta):
            raise ConfigError("eta must be a finite number >= 0")
        if self.nu < 0 or not math.isfinite(self.nu):
            raise ConfigError("nu must be a finite number >= 0")
        if self.dt is not None and not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be > 0")
        if self.t_end < 0 or not math.isfinite(self.t_end):
            raise ConfigError("t_end must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}")
        if self.cadence < 1:
            raise ConfigError("cadence must be >= 1")
        self.initial.validate()


@dataclass
class DiagnosticsRow:
    step: int
    t: float
    H: float
    upsilon: float
    Z: float
    fluxes: tuple
    circulations: tuple
    energy: float
    kinetic: float
    magnetic: float
    ohmic: float  # cumulative ohmic dissipation
    viscous: float  # cumulative viscous dissipation
    D: float  # cumulative helicity dissipation 2 eta int pair(J, B) dt, trapezoidal in time
    D_step: float  # the same integral with the quadrature implied by the integrator
    div_B: float
    div_u: float

    @staticmethod
    def header(g: int) -> list[str]:
        return (
            ["step", "t", "H", "Upsilon", "Z"]
            + [f"flux_{i + 1}" for i in range(g)]
            + [f"circ_{i + 1}" for i in range(g)]
            + ["energy", "kinetic", "magnetic", "ohmic", "viscous", "D", "D_step", "div_B", "div_u"]
        )

    def values(self) -> list:
        return (
            [self.step, self.t, self.H, self.upsilon, self.Z]
            + list(self.fluxes)
            + list(self.circulations)
            + [self.energy, self.kinetic, self.magnetic, self.ohmic, self.viscous, self.D, self.D_step, self.div_B, self.div_u]
        )


@dataclass(eq=False)
class SimState:
    t: float
    step: int
    B: Field
    u: Field
    A: Field
    p: Field | None = None
    ohmic: float = 0.0
    viscous: float = 0.0
    D: float = 0.0
    D_step: float = 0.0
    history: list[DiagnosticsRow] = field(default_factory=list)


@dataclass(eq=False)
class RunResult:
    config: SimConfig
    complex: CellComplex
    atlas: TopologyAtlas
    basis: HarmonicBasis
    state: SimState
    B0: Field
    u0: Field

    @property
    def history(self) -> list[DiagnosticsRow]:
        return self.state.history


# ---------------------------------------------------------------------------
# discrete operators


class MHDOperators:
    """Sparse operators and helpers shared by all steps on one complex."""

    def __init__(self, c: CellComplex):
        self.c = c
        self.h = c.h
        self.P = c.interior_edges.astype(float)
        self.fint = c.interior_faces.astype(float)
        self.E2C = c.edge_to_cell
        self.F2C = c.face_to_cell
        self.d1 = c.d1
        self.d1T = c.d1.T.tocsr()
        self.curlcurl = (c.d1 @ (c.d1.T.multiply(self.P[:, None]))).tocsr()
        fi = np.flatnonzero(c.interior_faces)
        self._fi = fi
        self._D2i = c.d2[:, fi].tocsr()
        L = (self._D2i @ self._D2i.T).tocsr()
        keep = np.arange(1, c.size(3))  # complex is connected: pin the first cell
        self._Lp = L[keep][:, keep].tocsr()
        self._keep = keep

    # -- cell vectors --------------------------------------------------------
    def cell_from_faces(self, F: np.ndarray) -> np.ndarray:
        return (self.F2C @ F).reshape(-1, 3) / self.h**2

    def smoothed_cell_B(self, Bc: np.ndarray) -> np.ndarray:
        """Cell vector -> interior edges -> cell vector (the field used in the EMF and the force)."""
        return (self.E2C @ (self.P * (self.E2C.T @ Bc.ravel()))).reshape(-1, 3)

    # -- currents and forces ---------------------------------------------------
    def current(self, B: np.ndarray) -> np.ndarray:
        """Edge circulation of curl B, zero on boundary edges."""
        return self.P * (self.d1T @ B) / self.h**2

    def emf_adv(self, u: np.ndarray, B: np.ndarray) -> np.ndarray:
        uc = self.cell_from_faces(u)
        Bt = self.smoothed_cell_B(self.cell_from_faces(B))
        F = -np.cross(uc, Bt)
        return self.h * self.P * (self.E2C.T @ F.ravel())

    def emf(self, u: np.ndarray, B: np.ndarray, eta: float, kinematic_zero_u: bool = False) -> np.ndarray:
        E = eta * self.current(B) if eta else np.zeros(self.c.size(1))
        if not kinematic_zero_u:
            E = E + self.emf_adv(u, B)
        return E

    def lorentz(self, B: np.ndarray) -> np.ndarray:
        Jc = (self.E2C @ self.current(B)).reshape(-1, 3) / self.h
        Bt = self.smoothed_cell_B(self.cell_from_faces(B))
        return self.fint * (self.h**2 * (self.F2C.T @ np.cross(Jc, Bt).ravel()))

    def advection(self, u: np.ndarray) -> np.ndarray:
        uc = self.cell_from_faces(u)
        wc = (self.E2C @ self.current(u)).reshape(-1, 3) / self.h
        return self.fint * (self.h**2 * (self.F2C.T @ np.cross(uc, wc).ravel()))

    def viscous(self, u: np.ndarray, nu: float) -> np.ndarray:
        return -(nu / self.h**2) * (self.curlcurl @ u)

    # -- solves ----------------------------------------------------------------
    def project(self, x: np.ndarray, rtol: float = CG_RTOL) -> tuple[np.ndarray, np.ndarray]:
        """Euclidean projection onto divergence-free fields vanishing on boundary faces."""
        out = self.fint * x
        rhs = self._D2i @ out[self._fi]
        p = np.zeros(self.c.size(3))
        p[self._keep] = pcg(self._Lp, rhs[self._keep], rtol=rtol)
        out[self._fi] -= self._D2i.T @ p
        return out, p

    def implicit_diffusion(self, rhs: np.ndarray, coef: float) -> np.ndarray:
        """Solve ``(I + coef * d1 P d1^T) x = rhs``."""
        if coef == 0.0:
            return rhs.copy()
        cache = self.__dict__.setdefault("_diff_cache", {})
        if coef not in cache:
            cache[coef] = (identity(self.c.size(2), format="csr") + coef * self.curlcurl).tocsr()
        return pcg(cache[coef], rhs, rtol=CG_RTOL, x0=rhs)

    # -- integrals -------------------------------------------------------------
    def ohmic_rate(self, B: np.ndarray, eta: float) -> float:
        J = self.current(B)
        return eta * self.h * float(J @ J)

    def viscous_rate(self, u: np.ndarray, nu: float) -> float:
        w = self.current(u)
        return nu * self.h * float(w @ w)

    def helicity_rate(self, B: np.ndarray, eta: float) -> float:
        """``2 eta pair_12(J, B)``, the rate at which resistivity removes helicity."""
        return 2.0 * eta * float(self.current(B) @ (self.c.avg8 @ B))


# ---------------------------------------------------------------------------
# initial data


def _abc(x, y, z, k):
    return np.stack(
        [np.sin(k * z) + np.cos(k * y), np.sin(k * x) + np.cos(k * z), np.sin(k * y) + np.cos(k * x)]
    )


def _domain_wavenumber(c: CellComplex, wavenumber: float) -> float:
    L = c.h * max(c.spec.shape)
    return 2.0 * np.pi * wavenumber / L


def _sample_edges(c: CellComplex, k: float) -> np.ndarray:
    ax, mid = c.edge_positions()
    vec = _abc(mid[:, 0], mid[:, 1], mid[:, 2], k)
    return c.h * vec[ax, np.arange(ax.size)]


def _sample_faces(c: CellComplex, k: float) -> np.ndarray:
    ax, mid = c.face_positions()
    vec = _abc(mid[:, 0], mid[:, 1], mid[:, 2], k)
    return c.h**2 * vec[ax, np.arange(ax.size)]


def initial_field(config: SimConfig, c: CellComplex, basis: HarmonicBasis, ops: MHDOperators | None = None):
    """Return ``(B0, u0)`` for the configured initial condition.

    The zero-flux part is ``d1`` of a potential supported on interior edges,
    so it is divergence-free and tangential.  It is smoothed by three implicit
    diffusion passes of length ``smoothing`` (in units of the squared box
    length) and scaled so that its largest cell-averaged magnitude equals
    ``amplitude``.  The harmonic part adds ``harmonic[i]`` times the i-th
    flux-normalised basis field.
    """
    ic = config.initial
    ic.validate()
    ops = ops or MHDOperators(c)
    k = _domain_wavenumber(c, ic.wavenumber)
    if ic.field == "abc":
        a = _sample_edges(c, k)
    elif ic.field == "linked":
        # potential along the harmonic field: its curl threads the handles and links their flux
        a = c.avg8 @ sum((hf.values for hf in basis.h_fields), np.zeros(c.size(2)))
    elif ic.field == "random":
        a = np.random.default_rng(int(ic.seed)).standard_normal(c.size(1))
    else:
        a = np.zeros(c.size(1))
    Bs = c.d1 @ (ops.P * a)
    if ic.smoothing > 0:
        L = c.h * max(c.spec.shape)
        for _ in range(3):
            Bs = ops.implicit_diffusion(Bs, ic.smoothing * L * L / c.h**2)
    peak = float(np.max(np.linalg.norm(ops.cell_from_faces(Bs), axis=1), initial=0.0))
    Bs = Bs * (ic.amplitude / peak) if peak > 0 else Bs
    B = Bs
    coef = np.zeros(basis.g)
    harm = tuple(ic.harmonic)[: basis.g]
    coef[: len(harm)] = harm
    for ci, hf in zip(coef, basis.h_fields):
        B = B + ci * hf.values
    B[c.boundary_faces] = 0.0
    if ic.velocity == "abc" and ic.u_amplitude:
        u, _ = ops.project(_sample_faces(c, k))
        u *= ic.u_amplitude / max(1e-300, max_speed(ops, u))
    else:
        u = np.zeros(c.size(2))
    return Field(2, B, c), Field(2, u, c)


# ---------------------------------------------------------------------------
# stepping


def max_speed(ops: MHDOperators, u: np.ndarray) -> float:
    return float(np.max(np.abs(u), initial=0.0)) / ops.h**2


def stable_dt(config: SimConfig, h: float, umax: float) -> float:
    rate = max(config.eta, config.nu, h * umax)
    return math.inf if rate == 0.0 else 0.25 * h * h / rate


def check_cfl(config: SimConfig, h: float, umax: float, dt: float):
    limit = stable_dt(config, h, umax)
    if dt > limit * (1 + 1e-12):
        raise ConfigError(f"dt = {dt:.6g} exceeds the stability bound {limit:.6g}")


def _euler(ops: MHDOperators, s: SimState, cfg: SimConfig, dt: float, frozen_u: bool):
    B, u = s.B.values, s.u.values
    zero_u = frozen_u and not np.any(u)
    E = ops.emf(u, B, cfg.eta, zero_u)
    B_new = B - dt * (ops.d1 @ E)
    A_new = s.A.values - dt * E
    if frozen_u:
        u_new, p = u, None
    else:
        force = ops.lorentz(B) + ops.advection(u) + ops.viscous(u, cfg.nu)
        u_new, p = ops.project(u + dt * force)
    incr = [dt * ops.ohmic_rate(B, cfg.eta), dt * ops.viscous_rate(u, cfg.nu), dt * ops.helicity_rate(B, cfg.eta)]
    return B_new, u_new, A_new, p, incr


def _midpoint(ops: MHDOperators, s: SimState, cfg: SimConfig, dt: float, frozen_u: bool):
    B0, u0 = s.B.values, s.u.values
    zero_u = frozen_u and not np.any(u0)
    half = 0.5 * dt
    cB = half * cfg.eta / ops.h**2
    cu = half * cfg.nu / ops.h**2
    Bm, um = B0.copy(), u0.copy()
    p = None
    scale = max(1.0, float(np.max(np.abs(B0))), float(np.max(np.abs(u0), initial=0.0)))
    for it in range(cfg.picard_maxiter):
        rhs = B0 if zero_u else B0 - half * (ops.d1 @ ops.emf_adv(um, Bm))
        Bn = ops.implicit_diffusion(rhs, cB)
        if frozen_u:
            un = u0
        else:
            un = ops.implicit_diffusion(u0 + half * (ops.lorentz(Bm) + ops.advection(um)), cu)
            un, p = ops.project(un)
        change = max(float(np.max(np.abs(Bn - Bm))), float(np.max(np.abs(un - um), initial=0.0)))
        Bm, um = Bn, un
        if zero_u or change <= cfg.picard_tol * scale:
            break
    else:
        raise NumericalError(f"midpoint iteration did not converge (last change {change:.3e})", s.step)
    E = ops.emf(um, Bm, cfg.eta, zero_u)
    B_new = B0 - dt * (ops.d1 @ E)
    A_new = s.A.values - dt * E
    u_new = u0 if frozen_u else 2.0 * um - u0
    incr = [dt * ops.ohmic_rate(Bm, cfg.eta), dt * ops.viscous_rate(um, cfg.nu), dt * ops.helicity_rate(Bm, cfg.eta)]
    return B_new, u_new, A_new, p, incr


def step(ops: MHDOperators, state: SimState, config: SimConfig, dt: float) -> SimState:
    """Advance one step of length ``dt`` and return the new state."""
    frozen = config.mode == "kinematic"
    fn = _euler if config.integrator == "euler" else _midpoint
    B, u, A, p, (d_ohm, d_visc, d_hel) = fn(ops, state, config, dt, frozen)
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(u))):
        raise NumericalError("non-finite field values", state.step + 1)
    d_trap = 0.5 * dt * (ops.helicity_rate(state.B.values, config.eta) + ops.helicity_rate(B, config.eta))
    c = ops.c
    return SimState(
        t=state.t + dt,
        step=state.step + 1,
        B=Field(2, B, c),
        u=Field(2, u, c),
        A=Field(1, A, c),
        p=None if p is None else Field(3, p, c),
        ohmic=state.ohmic + d_ohm,
        viscous=state.viscous + d_visc,
        D=state.D + d_trap,
        D_step=state.D_step + d_hel,
        history=state.history,
    )


def diagnostics(state: SimState, basis: HarmonicBasis) -> DiagnosticsRow:
    c = basis.complex
    rep = helicity_report(state.B, state.A, basis)
    kin = 0.5 * pair_22(c, state.u, state.u)
    mag = 0.5 * pair_22(c, state.B, state.B)
    return DiagnosticsRow(
        step=state.step,
        t=state.t,
        H=rep.H_classical,
        upsilon=rep.upsilon,
        Z=rep.Z,
        fluxes=tuple(rep.fluxes.tolist()),
        circulations=tuple(rep.circulations.tolist()),
        energy=kin + mag,
        kinetic=kin,
        magnetic=mag,
        ohmic=state.ohmic,
        viscous=state.viscous,
        D=state.D,
        D_step=state.D_step,
        div_B=float(np.max(np.abs(c.d2 @ state.B.values), initial=0.0)),
        div_u=float(np.max(np.abs(c.d2 @ state.u.values), initial=0.0)),
    )


def setup(config: SimConfig):
    config.validate()
    c, atlas = build_domain(config.recipe, config.grid, **config.recipe_params)
    basis = build_basis(c, atlas)
    return c, atlas, basis


def run(config: SimConfig, *, domain=None, on_row=None, on_state=None) -> RunResult:
    """Integrate from t = 0 to ``t_end`` and record diagnostics.

    ``domain`` may pass a precomputed ``(complex, atlas, basis)`` triple.
    ``on_row`` receives every recorded diagnostics row and ``on_state`` every
    state, the initial one included.
    """
    config.validate()
    c, atlas, basis = domain if domain is not None else setup(config)
    ops = MHDOperators(c)
    B0, u0 = initial_field(config, c, basis, ops)
    umax = max_speed(ops, u0.values)
    if config.mode == "coupled":
        # Alfven waves travel at |B| (unit density), so they enter the guard too
        umax = max(umax, float(np.max(np.linalg.norm(ops.cell_from_faces(B0.values), axis=1))))
    dt = config.dt if config.dt is not None else stable_dt(config, c.h, umax)
    if not math.isfinite(dt):
        dt = config.t_end if config.t_end > 0 else 1.0
    check_cfl(config, c.h, umax, dt)
    A0 = vector_potential(B0, basis)
    state = SimState(0.0, 0, B0, u0, A0)
    nsteps = 0 if config.t_end == 0 else max(1, int(math.ceil(config.t_end / dt - 1e-9)))

    def record(s):
        row = diagnostics(s, basis)
        s.history.append(row)
        if on_row is not None:
            on_row(row)

    record(state)
    if on_state is not None:
        on_state(state)
    for n in range(nsteps):
        t_next = config.t_end if n == nsteps - 1 else (n + 1) * dt
        state = step(ops, state, config, t_next - state.t)
        state.t = t_next
        if state.step % config.cadence == 0 or n == nsteps - 1:
            record(state)
        if on_state is not None:
            on_state(state)
    log.info("run finished: %d steps, dt = %.6g", nsteps, dt)
    return RunResult(config, c, atlas, basis, state, B0, u0)


# ---------------------------------------------------------------------------
# analysis of a run


def helicity_balance(history: list[DiagnosticsRow], eps: float = 1e-300) -> np.ndarray:
    """Normalised residual ``(Upsilon(t) - Upsilon(0) + D(t)) / max(|Upsilon(0)|, |D(t)|)``."""
    if not history:
        raise ValueError("empty history")
    u0 = history[0].upsilon
    out = []
    for r in history:
        res = (r.upsilon - u0) + r.D
        out.append(res / max(abs(u0), abs(r.D), eps))
    return np.array(out)


def energy_inequality(history: list[DiagnosticsRow], rel: float = 1e-8) -> tuple[bool, float]:
    """Check ``E(t) + dissipated <= E(0) (1 + rel)``; returns the worst excess."""
    E0 = history[0].energy
    excess = max(r.energy + r.ohmic + r.viscous - E0 for r in history)
    return bool(excess <= rel * E0), float(excess)


def dissipation_bound_check(result: RunResult, slack: float = 1e-10) -> tuple[bool, float]:
    """Compare ``|Upsilon(t) - Upsilon(0)|`` with ``3 sqrt(t eta) (|u0|^2 + |B0|^2)``.

    Returns ``(holds, worst margin)`` over the recorded times ``t > 0``.
    With ``eta = 0`` the bound is zero and the check allows ``slack``.
    """
    c = result.complex
    hist = result.history
    norm0 = pair_22(c, result.u0, result.u0) + pair_22(c, result.B0, result.B0)
    eta = result.config.eta
    margins = []
    for r in hist[1:]:
        bound = 3.0 * math.sqrt(r.t * eta) * norm0
        dU = abs(r.upsilon - hist[0].upsilon)
        margins.append(bound - dU if eta > 0 else slack - dU)
    if not margins:
        return True, math.inf
    worst = min(margins)
    return bool(worst > 0), float(worst)


@dataclass
class IdealLimitTable:
    etas: np.ndarray
    max_dU: np.ndarray
    slope: float

    def monotone(self) -> bool:
        """|dU| strictly decreasing as eta decreases (rows are sorted by decreasing eta)."""
        pos = self.etas > 0
        v = self.max_dU[pos]
        return bool(np.all(np.diff(v) < 0))

    def rows(self):
        return list(zip(self.etas.tolist(), self.max_dU.tolist()))


def ideal_limit_study(base: SimConfig, etas, *, domain=None) -> IdealLimitTable:
    etas = sorted((float(e) for e in etas), reverse=True)
    if len(etas) < 3:
        raise ConfigError("an ideal-limit study needs at least three resistivities")
    if any(e < 0 for e in etas):
        raise ConfigError("resistivities must be >= 0")
    domain = domain if domain is not None else setup(base)
    out = []
    for eta in etas:
        res = run(replace(base, eta=eta), domain=domain)
        u0 = res.history[0].upsilon
        out.append(max(abs(r.upsilon - u0) for r in res.history))
    e = np.array(etas)
    d = np.array(out)
    pos = (e > 0) & (d > 0)
    slope = float(np.polyfit(np.log(e[pos]), np.log(d[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    return IdealLimitTable(e, d, slope)


def config_dict(config: SimConfig) -> dict:
    d = asdict(config)
    d["grid"] = asdict(config.grid)
    return d
