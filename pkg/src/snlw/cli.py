"""Command line entry point: ``snlw <subcommand> [--config PATH] [--seed-override INT] [--out DIR] [--jobs INT]``.

Subcommands
-----------
simulate            run_global per seed; trajectory and window CSVs (optional binary field dumps)
verify-noise        renormalisation, covariance, moment, centering and Cauchy tests
verify-commutators  commutator slope suite for the configured ``s``
verify-propagation  two-cutoff finite-speed test with its negative control
schedule            print the N_k ladder and re-check each step's inequality
energy-audit        finite-difference check of the four-term energy derivative

Exit codes: 0 pass, 1 test failure, 2 config error, 3 runtime error.

Artifacts
---------
Everything is written below ``--out`` (default ``run.out``).  CSV files
start with two comment lines, ``# format=<version>`` and ``# config=<json>``
(the resolved configuration).  JSON reports carry ``format`` and ``config``
keys.  A binary field dump (``*.bin``) is little-endian: ``int64 n``,
``float64 L``, ``float64 t``, then ``n * n`` ``float64`` values in row-major
order; its configuration and format version are recorded in
``manifest.json`` next to it.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import struct
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .imethod import MultiplierSpec
from .noise import FORMAT_RNG, NoiseConfig, NoiseSource
from .solver import (
    BlowUp,
    InfeasibleSchedule,
    NonConvergence,
    ScheduleParams,
    SolverConfig,
    WaveState,
    cutoff_profile,
    run_global,
    schedule_ladder,
)
from .spectral_grid import GridSpec, RealField, bessel
from . import verify as V

FORMAT_ARTIFACT = "snlw-artifact/1"
FORMAT_FIELD = "snlw-field/1"
FIELD_HEADER = struct.Struct("<qdd")
SUBCOMMANDS = ("simulate", "verify-noise", "verify-commutators", "verify-propagation", "schedule", "energy-audit")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# emitters

class Emitter:
    """Single writer for one output directory; every artifact embeds the config."""

    def __init__(self, out: Path, config: dict):
        self.out = Path(out)
        self.config = config
        self.files: list[str] = []
        self.out.mkdir(parents=True, exist_ok=True)

    def _path(self, name: str) -> Path:
        path = (self.out / name).resolve()
        if self.out.resolve() not in path.parents:
            raise ValueError(f"refusing to write {name!r} outside {self.out}")
        self.files.append(name)
        return path

    def csv(self, name: str, header: list[str], rows):
        with open(self._path(name), "w", newline="") as fh:
            fh.write(f"# format={FORMAT_ARTIFACT}\n")
            fh.write("# config=" + json.dumps(self.config, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])

    def json(self, name: str, payload: dict):
        body = {"format": FORMAT_ARTIFACT, "config": self.config, **payload}
        with open(self._path(name), "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")

    def field(self, name: str, values: np.ndarray, L: float, t: float):
        write_field(self._path(name), values, L, t)

    def manifest(self, command: str, status: str):
        self.json("manifest.json", {"command": command, "status": status, "version": __version__,
                                    "rng": FORMAT_RNG, "field_format": FORMAT_FIELD,
                                    "files": sorted(set(self.files) - {"manifest.json"})})


def write_field(path, values: np.ndarray, L: float, t: float):
    """Binary dump: little-endian header ``(int64 n, float64 L, float64 t)`` then row-major float64."""
    values = np.ascontiguousarray(values, dtype="<f8")
    n = values.shape[0]
    if values.shape != (n, n):
        raise ValueError("field dumps need a square array")
    with open(path, "wb") as fh:
        fh.write(FIELD_HEADER.pack(n, float(L), float(t)))
        fh.write(values.tobytes(order="C"))


def read_field(path) -> tuple[np.ndarray, float, float]:
    with open(path, "rb") as fh:
        n, L, t = FIELD_HEADER.unpack(fh.read(FIELD_HEADER.size))
        values = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
    return values.astype(float), L, t


# ---------------------------------------------------------------------------
# shared construction

def _grid(cfg: ExperimentConfig) -> GridSpec:
    return GridSpec(cfg.grid.L, cfg.grid.n)


def _solver_cfg(cfg: ExperimentConfig, grid: GridSpec, dt: float | None = None) -> SolverConfig:
    return SolverConfig(dt=cfg.dt if dt is None else dt, rho=cutoff_profile(grid, cfg.cutoff.R),
                        s=cfg.schedule.s, picard_iters=cfg.solver.picard_iters, picard_tol=cfg.solver.picard_tol,
                        blowup_threshold=cfg.solver.blowup_threshold)


def _schedule(cfg: ExperimentConfig) -> ScheduleParams:
    sc = cfg.schedule
    return ScheduleParams(sc.s, sc.alpha, sc.beta, sc.margin)


def _initial_state(cfg: ExperimentConfig, grid: GridSpec) -> WaveState:
    x1, x2 = grid.coordinates()
    v = cfg.run.data_amplitude * np.exp(-(x1**2 + x2**2))
    return WaveState(RealField(grid, v), RealField(grid, np.zeros_like(v)), 0.0)


def _noise(cfg: ExperimentConfig, grid: GridSpec, seed: int | None = None) -> NoiseSource:
    nz = cfg.noise
    return NoiseSource(NoiseConfig(nz.seed if seed is None else seed, nz.N, grid, nz.amplitude),
                       sigma_scale=nz.sigma_scale)


def _seeds(cfg: ExperimentConfig, count: int) -> list[int]:
    return [cfg.noise.seed + i for i in range(count)]


# ---------------------------------------------------------------------------
# subcommands

def _simulate_one(seed: int, cfg: ExperimentConfig) -> dict:
    grid = _grid(cfg)
    run = run_global(_initial_state(cfg, grid), _noise(cfg, grid, seed), cfg.run.T, _solver_cfg(cfg, grid),
                     _schedule(cfg), tau=cfg.solver.window_tau)
    rows = [(r.t, r.hs_norm, r.energy.total, r.energy.kinetic, r.energy.mass, r.energy.gradient, r.energy.quartic,
             math.log2(r.N) if math.isfinite(r.N) else "inf") for r in run.trajectory.records]
    windows = [(w.index, w.log2_N, w.t_start, w.t_end, w.energy_start, w.energy_sup, w.hs_norm_sup,
                int(w.induction_ok), int(w.alpha_ok)) for w in run.log]
    final = run.trajectory.final
    return {"seed": seed, "rows": rows, "windows": windows, "violations": [str(v) for v in run.violations],
            "final": (final.v.values, final.v_t.values, final.t)}


def cmd_simulate(cfg: ExperimentConfig, em: Emitter, jobs: int) -> int:
    results = V.seed_map(partial(_simulate_one, cfg=cfg), _seeds(cfg, cfg.run.seeds), jobs)
    summary = []
    for res in results:
        s = res["seed"]
        em.csv(f"trajectory_seed{s}.csv",
               ["t", "hs_norm", "E_total", "E_kinetic", "E_mass", "E_gradient", "E_quartic", "log2_N"], res["rows"])
        em.csv(f"windows_seed{s}.csv", ["window", "log2_N", "t_start", "t_end", "E_start", "E_sup", "hs_norm_sup",
                                         "induction_ok", "alpha_ok"], res["windows"])
        if cfg.run.dump_fields:
            v, vt, t = res["final"]
            em.field(f"v_seed{s}.bin", v, cfg.grid.L, t)
            em.field(f"vt_seed{s}.bin", vt, cfg.grid.L, t)
        summary.append({"seed": s, "violations": res["violations"], "windows": len(res["windows"])})
        print(f"seed {s}: {len(res['windows'])} windows, {len(res['violations'])} schedule violations")
    em.json("simulate.json", {"runs": summary})
    return EXIT_PASS


def _emit_reports(em: Emitter, name: str, reports: list[V.TestReport], controls: list[V.TestReport]) -> int:
    for r in reports + controls:
        print(r.line() + ("  (negative control)" if r in controls else ""))
    em.json(f"{name}.json", {"reports": [r.to_dict() for r in reports],
                             "controls": [r.to_dict() for r in controls]})
    V.write_summary_csv(reports + controls, em._path(f"{name}_summary.csv"), em.config)
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_FAIL


def cmd_verify_noise(cfg: ExperimentConfig, em: Emitter, jobs: int) -> int:
    """Noise tests on the verification box (side ``2 pi``, 128 points, cutoff radius 1, ``T = 1``).

    The box is fixed so that cutoffs up to 64 are resolved whatever the
    simulation grid is; the config supplies seeds, draws, ``eps`` and the
    counterterm scale (``noise.sigma_scale != 1`` is a fault injection).
    """
    ve = cfg.verify
    seeds = _seeds(cfg, ve.seeds)
    setup = V.WickSetup.default(n=128, T=1.0, steps=8)
    scale = cfg.noise.sigma_scale
    N_list = [8, 16, 32]
    reports = [
        V.renormalisation_test(GridSpec(cfg.grid.L, 16), math.pi * 16 / cfg.grid.L, draws=ve.draws,
                               seed=cfg.noise.seed, sigma_scale=scale),
        V.covariance_test(draws=ve.draws, seed=cfg.noise.seed),
        V.moment_bound_test(1, 0.1, 2.0, 32, seeds, setup=setup, sigma_scale=scale, jobs=jobs),
        V.moment_bound_test(2, 0.1, 2.0, 32, seeds, setup=setup, sigma_scale=scale, jobs=jobs),
        V.centering_test(2, 64, seeds, setup=setup, sigma_scale=scale, jobs=jobs),
        V.cauchy_rate_test(1, ve.eps, N_list, seeds, setup=setup, sigma_scale=scale, jobs=jobs)[1],
    ]
    controls = [V.cauchy_rate_test(1, ve.eps, N_list, seeds, setup=setup, coupling="decoupled",
                                   sigma_scale=scale, jobs=jobs)[1]]
    return _emit_reports(em, "verify_noise", reports, controls)


def cmd_verify_commutators(cfg: ExperimentConfig, em: Emitter, jobs: int) -> int:
    grid = GridSpec(2 * np.pi, cfg.verify.commutator_n)
    N_list = [8, 16, 32, 64] if grid.nyquist >= 192 else [2, 4, 8, 16]
    out = V.commutator_slope_suite([cfg.schedule.s], [1, 2, 3], N_list, _seeds(cfg, 3), grid=grid)
    return _emit_reports(em, "verify_commutators", [r for _, r in out], [])


def cmd_verify_propagation(cfg: ExperimentConfig, em: Emitter, jobs: int) -> int:
    T, R = cfg.run.T, cfg.cutoff.R
    if R < 2 * T:
        raise ConfigError([f"verify-propagation needs cutoff.R >= 2 T so the cutoff is 1 on B_2T (R={R}, T={T})"])
    setup = V.PropagationSetup(L=cfg.grid.L, n=cfg.grid.n, T=T, R_inner=R, R_outer=R + 1.5, seed=cfg.noise.seed,
                               cutoff_N=cfg.noise.N, amplitude=cfg.noise.amplitude,
                               dt_factor=cfg.dt / (cfg.grid.L / cfg.grid.n))
    grid = setup.grid
    rho1 = cutoff_profile(grid, R).values
    rho2 = cutoff_profile(grid, setup.R_outer).values
    rho_bad = V.perturbed_cutoff(grid, T).values
    tol = V.solver_tolerance(setup, R)
    pos = V.propagation_test(rho1, rho2, setup, tol)
    neg = V.propagation_test(rho1, rho_bad, setup, tol, factor=100.0, negative_control=True)
    return _emit_reports(em, "verify_propagation", [pos, neg], [])


def cmd_schedule(cfg: ExperimentConfig, em: Emitter, jobs: int) -> int:
    grid = _grid(cfg)
    p = _schedule(cfg)
    w = _initial_state(cfg, grid)
    c0 = np.fft.fft2(w.v.values) / grid.n**2
    c1 = np.fft.fft2(w.v_t.values) / grid.n**2
    u0 = float(grid.L * np.sqrt(np.sum(bessel(grid, 2 * p.s) * np.abs(c0) ** 2)))
    u1 = float(grid.L * np.sqrt(np.sum(bessel(grid, 2 * (p.s - 1)) * np.abs(c1) ** 2)))
    windows = max(1, math.ceil(cfg.run.T / cfg.solver.window_tau - 1e-9))
    js = schedule_ladder(u0, u1, p, windows)
    rows, ok_all = [], True
    for k, j in enumerate(js):
        if k == 0:
            lhs = math.log2(2 ** (p.lower * j) * (u0**2 + u1**2) + u0**4) if u0 > 0 or u1 > 0 else -math.inf
        else:
            jp = js[k - 1]
            lhs = float(np.logaddexp2(p.lower * j + p.alpha * jp, 2 * p.alpha * jp))
        rhs = math.log2(p.margin) + p.beta * j
        # the ladder resolves exact ties in high precision; the float re-check allows rounding slack
        ok = lhs <= rhs + 1e-9 * max(1.0, abs(rhs)) and (k == 0 or j > js[k - 1])
        ok_all &= ok
        rows.append((k, j, lhs, rhs, int(ok)))
        print(f"N_{k + 1} = 2^{j}   log2 lhs = {lhs:.6g} <= log2 rhs = {rhs:.6g}  {'ok' if ok else 'VIOLATED'}")
    em.csv("schedule.csv", ["k", "log2_N", "log2_lhs", "log2_rhs", "ok"], rows)
    em.json("schedule.json", {"u0_norm": u0, "u1_norm": u1, "log2_N": js, "pass": ok_all})
    return EXIT_PASS if ok_all else EXIT_FAIL


def cmd_energy_audit(cfg: ExperimentConfig, em: Emitter, jobs: int) -> int:
    grid = _grid(cfg)
    scfg = _solver_cfg(cfg, grid, dt=grid.dx / 8)
    spec = MultiplierSpec(cfg.noise.N, cfg.schedule.s)
    report = V.energy_decomposition_test(_initial_state(cfg, grid), _noise(cfg, grid), scfg, spec,
                                         min(cfg.run.T, cfg.solver.window_tau))
    return _emit_reports(em, "energy_audit", [report], [])


COMMANDS = {
    "simulate": cmd_simulate,
    "verify-noise": cmd_verify_noise,
    "verify-commutators": cmd_verify_commutators,
    "verify-propagation": cmd_verify_propagation,
    "schedule": cmd_schedule,
    "energy-audit": cmd_energy_audit,
}


def run_subcommand(name: str, cfg: ExperimentConfig, *, jobs: int = 1) -> int:
    """Run one subcommand, writing artifacts under ``cfg.run.out``; returns the exit code."""
    if name not in COMMANDS:
        raise ValueError(f"unknown subcommand {name!r}; choose from {', '.join(SUBCOMMANDS)}")
    em = Emitter(Path(cfg.run.out), cfg.resolved())
    try:
        code = COMMANDS[name](cfg, em, jobs)
    except (BlowUp, NonConvergence) as exc:
        em.manifest(name, f"runtime error: {type(exc).__name__}: {exc}")
        print(f"runtime error in {name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    em.manifest(name, "pass" if code == EXIT_PASS else "fail")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snlw", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="INI configuration file (defaults are used if omitted)")
        p.add_argument("--seed-override", metavar="INT", type=int, help="replace noise.seed")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides run.out)")
        p.add_argument("--jobs", metavar="INT", type=int, default=1, help="worker processes for seed-parallel work")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.seed_override is not None:
            if args.seed_override < 0:
                raise ConfigError([f"--seed-override must be nonnegative (got {args.seed_override})"])
            cfg = cfg.with_seed(args.seed_override)
        if args.out:
            cfg = cfg.with_out(args.out)
        if args.jobs < 1:
            raise ConfigError([f"--jobs must be >= 1 (got {args.jobs})"])
        return run_subcommand(args.command, cfg, jobs=args.jobs)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleSchedule as exc:
        print(f"config error: InfeasibleSchedule: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a runtime failure, not a test verdict
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
