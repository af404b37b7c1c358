"""Command-line front end.

Each experiment is a subcommand.  A YAML config supplies every setting;
flags given on the command line override the matching config keys.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
3 numerical failure.  ``TAYLORHEL_THREADS`` caps the BLAS/OpenMP thread
pools; it must be set before numpy is first imported, which this module
does as its first action.
"""
from __future__ import annotations

import os

_THREADS = os.environ.get("TAYLORHEL_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import dataclasses  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import io  # noqa: E402
from .config import ConfigError, RunConfig, from_dict, load_config  # noqa: E402
from .geometry import TopologyError, build_domain  # noqa: E402
from .grid import ComplexError, Field  # noqa: E402
from .harmonic import HarmonicError, build_basis  # noqa: E402
from .helicity import helicity_report, upsilon  # noqa: E402
from .mhd import (  # noqa: E402
    DiagnosticsRow,
    NumericalError,
    energy_inequality,
    helicity_balance,
    ideal_limit_study,
    initial_field,
    run,
)
from .potential import gauge_shift, vector_potential  # noqa: E402
from .relax import RelaxError, RelaxOptions, woltjer_relax  # noqa: E402
from .solvers import SolverError  # noqa: E402
from .verify import Check, run_suite  # noqa: E402

log = logging.getLogger("taylorhel")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class CheckFailed(Exception):
    """A computed invariant is outside its tolerance."""


# ---------------------------------------------------------------------------
# argument handling


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taylorhel", description="Gauge-invariant magnetic helicity on voxel domains.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", type=Path, help="YAML run configuration")
        sp.add_argument("-o", "--out", help="output directory (output.directory)")
        sp.add_argument("--recipe", help="domain.recipe")
        sp.add_argument("--dims", type=_ints, help="domain.dims, one value or nx,ny,nz")
        sp.add_argument("--seed", type=int, help="numerics.seed")
        sp.add_argument("--dry-run", action="store_true", help="validate the configuration and stop")
        return sp

    sp = common(sub.add_parser("verify-identities", help="exact identities and convergence rows"))
    sp.add_argument("--levels", type=_ints, help="numerics.levels, e.g. 16,24,32")
    sp.add_argument("--gauge-samples", type=int, help="numerics.gauge_samples")
    sp.add_argument("--basis", type=Path, help="use a saved basis directory for the matching level")

    sp = common(sub.add_parser("helicity", help="H, Upsilon and Z of the configured initial field"))

    for name, hlp in (("evolve", "MHD run with helicity diagnostics"), ("ideal-limit", "helicity change versus resistivity")):
        sp = common(sub.add_parser(name, help=hlp))
        sp.add_argument("--eta", type=_floats, help="numerics.eta (comma separated)")
        sp.add_argument("--nu", type=float, help="numerics.nu")
        sp.add_argument("--dt", type=float, help="numerics.dt")
        sp.add_argument("--t-end", type=float, help="numerics.t_end")
        sp.add_argument("--mode", choices=("kinematic", "coupled"), help="numerics.mode")
        sp.add_argument("--cadence", type=int, help="output.cadence")

    sp = common(sub.add_parser("relax", help="energy relaxation at fixed helicity and fluxes"))
    sp.add_argument("--max-iter", type=int, help="numerics.max_iter")

    sp = common(sub.add_parser("export-vtk", help="write HLTR1 snapshots as a legacy VTK file"))
    sp.add_argument("snapshots", nargs="+", type=Path, help="snapshot files (face or edge fields)")
    sp.add_argument("--vtk", type=Path, help="output file (default: <out>/fields.vtk)")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else from_dict(_preset(args.command))
    cfg.experiment = args.command
    d, n, o = cfg.domain, cfg.numerics, cfg.output
    if args.out is not None:
        o.directory = args.out
    if args.recipe is not None:
        d.recipe = args.recipe
    if args.dims is not None:
        d.dims = args.dims[0] if len(args.dims) == 1 else args.dims
    if args.seed is not None:
        n.seed = args.seed
    for flag, attr in (("levels", "levels"), ("gauge_samples", "gauge_samples"), ("eta", "eta"), ("nu", "nu"),
                       ("dt", "dt"), ("t_end", "t_end"), ("mode", "mode"), ("max_iter", "max_iter")):
        val = getattr(args, flag, None)
        if val is not None:
            setattr(n, attr, val)
    if getattr(args, "cadence", None) is not None:
        o.cadence = args.cadence
    return cfg.validate()


def _preset(command: str) -> dict:
    """Defaults used when no config file is given."""
    if command == "ideal-limit":
        return {
            "numerics": {
                "eta": [1e-2, 3e-3, 1e-3, 3e-4],
                "t_end": 1.0,
                "initial": {"field": "linked", "velocity": "abc", "u_amplitude": 1.0},
            },
            "output": {"cadence": 4},
        }
    if command == "relax":
        return {"domain": {"dims": 16}, "numerics": {"initial": {"field": "linked"}}}
    return {}


# ---------------------------------------------------------------------------
# helpers


def _domain(cfg: RunConfig):
    c, atlas = build_domain(cfg.domain.recipe, cfg.domain.grid(), **cfg.domain.params)
    return c, atlas, build_basis(c, atlas, cfg.numerics.tolerances.solver)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(cfg: RunConfig, out: Path, outputs: list[str], extra: dict | None = None):
    io.write_manifest(out / "manifest.json", cfg.to_dict(), outputs, extra)
    log.info("wrote %d files to %s", len(outputs) + 1, out)


def _summary(out: Path, name: str, items: list[tuple[str, object]]) -> str:
    io.write_csv(out / name, ["key", "value"], items)
    return name


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify_identities(cfg: RunConfig, basis_dir: Path | None = None) -> int:
    out = _outdir(cfg)
    n = cfg.numerics
    override = None
    if basis_dir is not None:
        files = sorted(basis_dir.glob("*.hltr"))
        if not files:
            raise ConfigError(f"{basis_dir} holds no basis snapshots")
        head, _ = io.read_snapshot_raw(files[0])
        level = head["shape"][0]
        if level not in n.levels:
            raise ConfigError(f"basis in {basis_dir} is for level {level}, not one of {n.levels}")
        cfg_l = dataclasses.replace(cfg, domain=dataclasses.replace(cfg.domain, dims=level))
        c, atlas = build_domain(cfg.domain.recipe, cfg_l.domain.grid(), **cfg.domain.params)
        override = {level: (c, atlas, io.load_basis(basis_dir, c, atlas))}
    res = run_suite(cfg.domain.recipe, n.levels, params=cfg.domain.params, seed=int(n.seed),
                    gauge_samples=n.gauge_samples, basis_override=override)
    io.write_csv(out / "identities.csv", Check.HEADER, [ch.row() for ch in res.checks])
    outputs = ["identities.csv"]
    if basis_dir is None:
        for lv, basis in sorted(res.bases.items()):
            names = io.save_basis(out / f"basis_{lv}", basis)
            outputs += [f"basis_{lv}/{nm}" for nm in names]
    _finish(cfg, out, outputs)
    for ch in res.checks:
        print(f"{'PASS' if ch.passed else 'FAIL'}  {ch.name:<34} level {ch.level:<3} value {ch.value:.3e}  tol {ch.tolerance:.1e}"
              + ("" if ch.order is None else f"  order {ch.order:.2f}"))
    bad = res.first_failure
    if bad is not None:
        detail = f"; {bad.note}" if bad.note else ""
        raise CheckFailed(f"{bad.name} failed at level {bad.level}: value {bad.value:.3e}, tolerance {bad.tolerance:.1e}{detail}")
    return EXIT_OK


def cmd_helicity(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    c, atlas, basis = _domain(cfg)
    B, _ = initial_field(cfg.sim_config(), c, basis)
    A = vector_potential(B, basis)
    rep = helicity_report(B, A, basis)
    rng = np.random.default_rng(int(cfg.numerics.seed))
    A2 = gauge_shift(A, Field(0, rng.standard_normal(c.size(0)), c), rng.standard_normal(basis.g), basis)
    rep2 = upsilon(B, A2, atlas)
    dU = abs(rep2.upsilon - rep.upsilon)
    scale = max(1.0, float(np.linalg.norm(A.values) * np.linalg.norm(B.values)))
    io.write_csv(out / "helicity.csv", rep.csv_header(), [rep.csv_row()])
    io.write_snapshot(out / "B.hltr", B)
    io.write_snapshot(out / "A.hltr", A)
    (out / "atlas.txt").write_text(atlas.report() + "\n")
    names = ["helicity.csv", "B.hltr", "A.hltr", "atlas.txt",
             _summary(out, "summary.csv", [("gauge_shift_dUpsilon", dU), ("gauge_shift_dH", rep2.H_classical - rep.H_classical)])]
    _finish(cfg, out, names)
    print(f"H = {rep.H_classical:.12g}  Upsilon = {rep.upsilon:.12g}  Z = {rep.Z:.12g}  gauge |dU| = {dU:.2e}")
    if dU > 1e-10 * scale:
        raise CheckFailed(f"gauge_invariance: |dUpsilon| = {dU:.3e}")
    return EXIT_OK


def cmd_evolve(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    sim = cfg.sim_config()
    domain = _domain(cfg)
    c = domain[0]
    times = sorted(cfg.output.snapshot_times)
    written: list[str] = []

    def on_state(state):
        while times and state.t >= times[0] - 1e-12:
            k = len(written) // 2
            for name, f in (("B", state.B), ("u", state.u)):
                fn = f"{name}_{k:03d}.hltr"
                io.write_snapshot(out / fn, f)
                written.append(fn)
            times.pop(0)

    res = run(sim, domain=domain, on_state=on_state)
    hist = res.history
    io.write_csv(out / "diagnostics.csv", DiagnosticsRow.header(res.basis.g), [r.values() for r in hist])
    io.write_snapshot(out / "B_final.hltr", res.state.B)
    io.write_snapshot(out / "u_final.hltr", res.state.u)
    tol = cfg.numerics.tolerances.conservation
    f0 = np.array(hist[0].fluxes)
    flux_drift = max((float(np.max(np.abs(np.array(r.fluxes) - f0), initial=0.0)) for r in hist), default=0.0)
    balance = helicity_balance(hist)
    e_ok, e_excess = energy_inequality(hist)
    div_b = max(r.div_B for r in hist)
    items = [
        ("steps", res.state.step),
        ("flux_drift", flux_drift),
        ("balance_residual_final", float(balance[-1])),
        ("balance_residual_max", float(np.max(np.abs(balance)))),
        ("energy_excess", e_excess),
        ("div_B_max", div_b),
        ("dUpsilon_final", hist[-1].upsilon - hist[0].upsilon),
    ]
    names = ["diagnostics.csv", "B_final.hltr", "u_final.hltr", *written, _summary(out, "summary.csv", items)]
    _finish(cfg, out, names)
    print(f"{res.state.step} steps; Upsilon {hist[0].upsilon:.12g} -> {hist[-1].upsilon:.12g}; "
          f"balance residual {balance[-1]:.3e}; flux drift {flux_drift:.1e}")
    scale = max(1.0, float(np.max(np.abs(f0), initial=0.0)))
    if flux_drift > tol * scale:
        raise CheckFailed(f"flux_conservation: drift {flux_drift:.3e}")
    if not e_ok:
        raise CheckFailed(f"energy_inequality: excess {e_excess:.3e}")
    if div_b > 1e-10 * max(1.0, float(np.max(np.abs(res.B0.values)))):
        raise CheckFailed(f"divergence: max |div B| = {div_b:.3e}")
    return EXIT_OK


def cmd_ideal_limit(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    tab = ideal_limit_study(cfg.sim_config(), cfg.numerics.eta, domain=_domain(cfg))
    io.write_csv(out / "ideal_limit.csv", ["eta", "max_abs_dUpsilon"], tab.rows())
    names = ["ideal_limit.csv", _summary(out, "summary.csv", [("slope", tab.slope), ("monotone", tab.monotone())])]
    _finish(cfg, out, names)
    for eta, du in tab.rows():
        print(f"eta = {eta:<10.3g} max |dUpsilon| = {du:.6e}")
    print(f"log-log slope {tab.slope:.3f}; monotone {tab.monotone()}")
    if not tab.monotone():
        raise CheckFailed("ideal_limit: |dUpsilon| is not monotone in eta")
    if not tab.slope >= cfg.numerics.slope_min:
        raise CheckFailed(f"ideal_limit: slope {tab.slope:.3f} < {cfg.numerics.slope_min}")
    return EXIT_OK


def cmd_relax(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    c, atlas, basis = _domain(cfg)
    B0, _ = initial_field(cfg.sim_config(), c, basis)
    tol = cfg.numerics.tolerances.relax
    rep = woltjer_relax(B0, basis, RelaxOptions(tol=tol, max_iter=cfg.numerics.max_iter))
    res = rep.residuals
    rows = [(i, e, res[i] if i < res.size else float("nan")) for i, e in enumerate(rep.energies)]
    io.write_csv(out / "relax.csv", ["iteration", "energy", "residual"], rows)
    io.write_snapshot(out / "B_final.hltr", rep.B_final)
    items = [
        ("lambda", rep.lam),
        ("residual", rep.residual),
        ("upsilon_initial", rep.upsilon0),
        ("upsilon_final", rep.upsilon_final),
        ("upsilon_drift", rep.upsilon_drift),
        ("flux_drift", rep.flux_drift),
        ("flux_drift_structural", rep.flux_drift_structural),
        ("iterations", rep.iterations),
        ("converged", rep.converged),
        ("energy_monotone", rep.energy_monotone),
    ]
    _finish(cfg, out, ["relax.csv", "B_final.hltr", _summary(out, "summary.csv", items)])
    print(f"lambda = {rep.lam:.10g}  residual {rep.residual:.2e}  iterations {rep.iterations}  "
          f"helicity drift {rep.upsilon_drift:.1e}  flux drift {rep.flux_drift:.1e}")
    if not rep.converged:
        raise CheckFailed(f"relax: residual {rep.residual:.3e} above {tol:.1e} after {rep.iterations} iterations")
    if not rep.energy_monotone:
        raise CheckFailed("relax: energy increased")
    if rep.flux_drift_structural != 0.0:
        raise CheckFailed(f"relax: update changes a cut flux by {rep.flux_drift_structural:.3e}")
    if rep.upsilon_drift > 1e-8:
        raise CheckFailed(f"relax: helicity drift {rep.upsilon_drift:.3e}")
    return EXIT_OK


def cmd_export_vtk(cfg: RunConfig, snapshots: list[Path], target: Path | None) -> int:
    c, _ = build_domain(cfg.domain.recipe, cfg.domain.grid(), **cfg.domain.params)
    fields = {p.stem: io.read_snapshot(p, c) for p in snapshots}
    target = target or _outdir(cfg) / "fields.vtk"
    target.parent.mkdir(parents=True, exist_ok=True)
    io.write_vtk(target, c, fields)
    print(f"wrote {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "export-vtk":
            for p in args.snapshots:
                if not p.is_file():
                    raise ConfigError(f"snapshot {p} does not exist")
        if args.command == "verify-identities" and args.basis is not None and not args.basis.is_dir():
            raise ConfigError(f"basis directory {args.basis} does not exist")
    except (ConfigError, TopologyError, ComplexError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        print(f"configuration valid for {args.command}")
        return EXIT_OK
    try:
        if args.command == "verify-identities":
            return cmd_verify_identities(cfg, args.basis)
        if args.command == "helicity":
            return cmd_helicity(cfg)
        if args.command == "evolve":
            return cmd_evolve(cfg)
        if args.command == "ideal-limit":
            return cmd_ideal_limit(cfg)
        if args.command == "relax":
            return cmd_relax(cfg)
        return cmd_export_vtk(cfg, args.snapshots, args.vtk)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, TopologyError, io.SnapshotError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SolverError, RelaxError, HarmonicError, ComplexError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
