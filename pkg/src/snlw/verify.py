"""Monte Carlo property tests for the noise, the I-method estimates and the solver.

Every test takes an explicit list of seeds (or a base seed) and is a pure
function of its arguments, so re-running it reproduces the report bit for
bit.  Tests return :class:`TestReport` objects whose ``passed`` flag is
exactly ``band_low <= statistic <= band_high``.

Seed-parallel work goes through :func:`seed_map`, which uses a process pool
when ``jobs > 1``.  Reductions happen in the caller after all seeds return,
in seed order, so the result does not depend on ``jobs``.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterable, Sequence

import numpy as np

from .imethod import MultiplierSpec, _apply, commutator_defect, energy_derivative_terms, multiplier
from .noise import (
    ConvolutionState,
    NoiseConfig,
    NoiseSource,
    WickBundle,
    _neg,
    advance_convolution,
    counterterm_sigma,
    gamma,
    hermite,
    retained_mask,
)
from .spectral_grid import GridSpec, RealField, bessel, norm_hs, resample
from .solver import SolverConfig, WaveState, cutoff_profile, run_local

FORMAT_REPORT = "snlw-report/1"
DEFAULT_BAND_MULTIPLIER = 3.0


# ---------------------------------------------------------------------------
# reports and regression

def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _plain(value):
    """Convert numpy scalars/arrays inside metadata to JSON-friendly values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _json_float(value)
    return value


@dataclass(frozen=True)
class TestReport:
    """Outcome of one property test; ``passed`` is derived from the band."""

    __test__ = False  # not a pytest class

    name: str
    statistic: float
    band_low: float
    band_high: float
    samples: int
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.band_low <= self.statistic <= self.band_high)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_REPORT,
            "name": self.name,
            "statistic": _json_float(self.statistic),
            "band_low": _json_float(self.band_low),
            "band_high": _json_float(self.band_high),
            "samples": int(self.samples),
            "pass": self.passed,
            "metadata": _plain(self.metadata),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), allow_nan=False, **kwargs)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: statistic={self.statistic:.6g} band=[{self.band_low:.6g}, {self.band_high:.6g}]"


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    stderr_slope: float
    points: tuple

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "stderr_slope": _json_float(self.stderr_slope),
                "points": [list(p) for p in self.points]}


def loglog_fit(points: Iterable[tuple[float, float]]) -> RegressionFit:
    """Ordinary least squares of ``log y`` on ``log x`` with the slope's standard error."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("a log-log fit needs at least 3 points")
    xy = np.array(pts)
    if np.any(xy <= 0) or not np.all(np.isfinite(xy)):
        raise ValueError("log-log fit needs positive finite data")
    lx, ly = np.log(xy[:, 0]), np.log(xy[:, 1])
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if sxx == 0:
        raise ValueError("x values must not all coincide")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    s2 = float(resid @ resid) / (len(pts) - 2)
    return RegressionFit(slope, intercept, math.sqrt(s2 / sxx), tuple(zip(lx.tolist(), ly.tolist())))


def write_summary_csv(reports: Sequence[TestReport], path, config: dict | None = None):
    """One row per report; the resolved config (if any) goes into a leading comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# format={FORMAT_REPORT}\n")
        if config is not None:
            fh.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["name", "statistic", "band_low", "band_high", "samples", "pass"])
        for r in reports:
            w.writerow([r.name, repr(float(r.statistic)), repr(float(r.band_low)), repr(float(r.band_high)),
                        r.samples, int(r.passed)])


def seed_map(fn: Callable, seeds: Sequence[int], jobs: int = 1) -> list:
    """``[fn(seed) for seed in seeds]``, optionally across ``jobs`` processes."""
    seeds = list(seeds)
    if jobs <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, seeds))


def _mean_stderr(samples: np.ndarray):
    samples = np.asarray(samples, dtype=float)
    m = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    return m, se


# ---------------------------------------------------------------------------
# shared helpers

def _hs_sq(values: np.ndarray, grid: GridSpec, sigma: float) -> np.ndarray:
    """Squared ``H^sigma`` norm of real samples (batched over leading axes)."""
    c = np.fft.fft2(values) / grid.n**2
    return grid.L**2 * np.sum(bessel(grid, 2 * sigma) * np.abs(c) ** 2, axis=(-2, -1))


def _w_sigma_p(values: np.ndarray, grid: GridSpec, sigma: float, p: float) -> float:
    g = np.fft.ifft2(np.fft.fft2(values) * bessel(grid, sigma)).real
    return float((np.sum(np.abs(g) ** p) * grid.dx**2) ** (1.0 / p))


def _point_values(psi_hat: np.ndarray, grid: GridSpec, x: Sequence[float]) -> np.ndarray:
    """``psi(x) = sum_k psi_hat_k exp(i xi_k . x)`` at an arbitrary point (batched)."""
    x1, x2 = grid.frequencies()
    phase = np.exp(1j * (x1 * x[0] + x2 * x[1]))
    return np.sum(psi_hat * phase, axis=(-2, -1)).real


def _physical(psi_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.ifft2(psi_hat * grid.n**2).real


def _wick(psi1: np.ndarray, sigma: float, l: int) -> np.ndarray:
    return hermite(l, psi1, sigma)


def _time_grid(T: float, steps: int) -> np.ndarray:
    """Midpoints of ``steps`` equal cells of ``[0, T]`` (quadrature nodes for ``L^2_t``)."""
    return (np.arange(steps) + 0.5) * T / steps


# ---------------------------------------------------------------------------
# exact renormalisation and covariance

def _sample_points(rng: np.random.Generator, grid: GridSpec, count: int, t_max: float):
    times = np.sort(rng.uniform(0.1 * t_max, t_max, count))
    xs = rng.uniform(-grid.L / 2, grid.L / 2, (count, 2))
    return times, xs


def renormalisation_test(grid: GridSpec, N: float, *, draws: int = 100_000, points: int = 5, t_max: float = 1.0,
                         seed: int = 0, sigma_scale: float = 1.0, chunk: int = 2000,
                         multiplier_band: float = DEFAULT_BAND_MULTIPLIER) -> TestReport:
    """Empirical mean of ``:psi_N^2:(t, x)`` at random ``(t, x)`` over ``draws`` realisations.

    The statistic is the largest ``|mean| / stderr`` over the points; the test
    passes when it is at most ``multiplier_band``.  ``sigma_scale = 0`` is the
    unrenormalised ablation (the mean is then ``sigma_N(t) > 0``).
    """
    cfg = NoiseConfig(seed, N, grid)
    rng = np.random.default_rng(seed)
    times, xs = _sample_points(rng, grid, points, t_max)
    sigmas = np.array([sigma_scale * counterterm_sigma(cfg, t) for t in times])
    bitgen = np.random.PCG64(seed + 1)
    total = np.zeros(points)
    total_sq = np.zeros(points)
    done = 0
    while done < draws:
        b = min(chunk, draws - done)
        state = ConvolutionState.zero(grid, (b,))
        for i, (t, x) in enumerate(zip(times, xs)):
            state = advance_convolution(state, t - state.t, bitgen, cfg)
            vals = _wick(_point_values(state.psi_hat, grid, x), sigmas[i], 2)
            total[i] += vals.sum()
            total_sq[i] += (vals**2).sum()
        done += b
    mean = total / draws
    var = (total_sq - draws * mean**2) / (draws - 1)
    se = np.sqrt(var / draws)
    z = np.abs(mean) / se
    return TestReport(
        "renormalisation", float(z.max()), 0.0, multiplier_band, draws,
        {"N": N, "times": times, "points": xs, "means": mean, "stderr": se, "sigma_scale": sigma_scale,
         "sigma": sigmas, "seed": seed},
    )


def covariance_oracle(grid: GridSpec, N: float, t: float, x, y, amplitude: float = 1.0) -> float:
    """Explicit mode sum ``weight * sum_retained gamma(t, xi) cos(xi . (x - y))``."""
    cfg = NoiseConfig(0, N, grid, amplitude)
    mask = cfg.retained()
    x1, x2 = grid.frequencies()
    d = np.asarray(x, float) - np.asarray(y, float)
    terms = gamma(t, grid.xi_abs()) * np.cos(x1 * d[0] + x2 * d[1])
    return float(cfg.weight * np.sum(terms[mask]))


def covariance_test(grid: GridSpec | None = None, N: float | None = None, *, draws: int = 100_000, pairs: int = 10,
                    t: float = 1.0, seed: int = 0, chunk: int = 20_000,
                    multiplier_band: float = DEFAULT_BAND_MULTIPLIER) -> TestReport:
    """Monte Carlo ``E[psi_N(t, x) psi_N(t, y)]`` against :func:`covariance_oracle`.

    The default is the ``6 x 6`` grid of side ``2 pi`` with ``N`` at the
    Nyquist frequency, whose retained set is the ``5 x 5`` block
    ``{-2, ..., 2}^2``.  Statistic: largest ``|MC - oracle| / stderr``.
    """
    grid = grid or GridSpec(2 * np.pi, 6)
    N = grid.nyquist if N is None else N
    cfg = NoiseConfig(seed, N, grid)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0, grid.L, (pairs, 2))
    ys = rng.uniform(0, grid.L, (pairs, 2))
    bitgen = np.random.PCG64(seed + 1)
    prods = []
    done = 0
    while done < draws:
        b = min(chunk, draws - done)
        state = advance_convolution(ConvolutionState.zero(grid, (b,)), t, bitgen, cfg)
        px = np.stack([_point_values(state.psi_hat, grid, x) for x in xs], axis=-1)
        py = np.stack([_point_values(state.psi_hat, grid, y) for y in ys], axis=-1)
        prods.append(px * py)
        done += b
    prods = np.concatenate(prods)
    mean, se = _mean_stderr(prods)
    oracle = np.array([covariance_oracle(grid, N, t, x, y) for x, y in zip(xs, ys)])
    z = np.abs(mean - oracle) / se
    return TestReport(
        "covariance", float(z.max()), 0.0, multiplier_band, draws,
        {"N": N, "t": t, "retained_modes": int(cfg.retained().sum()), "mc": mean, "oracle": oracle, "stderr": se,
         "seed": seed},
    )


# ---------------------------------------------------------------------------
# Wick power statistics driven by one master stream per seed

@dataclass(frozen=True)
class WickSetup:
    """Shared geometry for the Wick-power tests: grid, cutoff ``rho`` and time nodes."""

    grid: GridSpec
    rho: np.ndarray
    times: tuple

    @classmethod
    def default(cls, n: int = 256, L: float = 2 * np.pi, R: float = 1.0, T: float = 1.0, steps: int = 10):
        grid = GridSpec(L, n)
        return cls(grid, cutoff_profile(grid, R, 1.0).values, tuple(_time_grid(T, steps)))

    @property
    def dt(self) -> float:
        return self.times[1] - self.times[0] if len(self.times) > 1 else self.times[0]


def _master_path(setup: WickSetup, seed: int, N_max: float):
    """Yield the master convolution state at each time node."""
    cfg = NoiseConfig(seed, N_max, setup.grid)
    bitgen = np.random.PCG64(seed)
    state = ConvolutionState.zero(setup.grid)
    for t in setup.times:
        state = advance_convolution(state, t - state.t, bitgen, cfg)
        yield state


def _truncated_wick(state: ConvolutionState, grid: GridSpec, N: float, sigma_scale: float):
    psi1 = _physical(state.psi_hat * retained_mask(grid, N), grid)
    sigma = sigma_scale * counterterm_sigma(NoiseConfig(0, N, grid), state.t)
    return psi1, sigma


def _moment_worker(seed, *, setup, ls, eps, p, Ns, sigma_scale):
    """Per seed: ``int ||rho :psi_N^l:||^p_{W^{-eps,p}} dt`` and ``int <rho, :psi_N^l:> dt``."""
    g = setup.grid
    norms = np.zeros((len(ls), len(Ns)))
    means = np.zeros((len(ls), len(Ns)))
    for state in _master_path(setup, seed, max(Ns)):
        for j, N in enumerate(Ns):
            psi1, sigma = _truncated_wick(state, g, N, sigma_scale)
            for i, l in enumerate(ls):
                f = setup.rho * _wick(psi1, sigma, l)
                norms[i, j] += _w_sigma_p(f, g, -eps, p) ** p * setup.dt
                means[i, j] += float(np.sum(f)) * g.dx**2 * setup.dt
    return norms, means


def moment_bound_test(l: int, eps: float, p: float, N: float, seeds: Sequence[int], *, setup: WickSetup | None = None,
                      sigma_scale: float = 1.0, jobs: int = 1) -> TestReport:
    """Uniformity in ``N`` of ``E ||rho :psi_N^l:||^p_{L^p_T W^{-eps,p}}``.

    Statistic: the ratio of the estimate at ``2N`` to the one at ``N``;
    band ``[1/2, 2]``.
    """
    setup = setup or WickSetup.default(n=128)
    fn = partial(_moment_worker, setup=setup, ls=(l,), eps=eps, p=p, Ns=(N, 2 * N), sigma_scale=sigma_scale)
    out = seed_map(fn, seeds, jobs)
    norms = np.array([o[0][0] for o in out])
    m, se = _mean_stderr(norms)
    return TestReport(
        f"moment_bound_l{l}", float(m[1] / m[0]), 0.5, 2.0, len(out),
        {"l": l, "eps": eps, "p": p, "N": [N, 2 * N], "mean": m, "stderr": se, "sigma_scale": sigma_scale,
         "seeds": [int(s) for s in seeds],
         "note": "moments stand in for the tail bound, which is unobservable at this sample size"},
    )


def centering_test(l: int, N: float, seeds: Sequence[int], *, setup: WickSetup | None = None,
                   sigma_scale: float = 1.0, jobs: int = 1,
                   multiplier_band: float = DEFAULT_BAND_MULTIPLIER) -> TestReport:
    """``E int int rho :psi_N^l: dx dt`` must vanish: statistic ``|mean| / stderr``.

    This is the check that detects a corrupted counterterm; the moment ratio
    alone barely moves under a 10% error in ``sigma``.
    """
    setup = setup or WickSetup.default(n=128)
    fn = partial(_moment_worker, setup=setup, ls=(l,), eps=0.0, p=2.0, Ns=(N,), sigma_scale=sigma_scale)
    out = seed_map(fn, seeds, jobs)
    vals = np.array([o[1][0, 0] for o in out])
    m, se = _mean_stderr(vals)
    return TestReport(
        f"centering_l{l}", float(abs(m) / se), 0.0, multiplier_band, len(out),
        {"l": l, "N": N, "mean": m, "stderr": se, "sigma_scale": sigma_scale, "seeds": [int(s) for s in seeds]},
    )


def _cauchy_worker(seed, *, setup, ls, eps, Ns, coupling, sigma_scale):
    """Per seed: ``||rho(:psi_2N^l: - :psi_N^l:)||^2_{L^2_t H^-eps}`` for each ``l`` and ``N``."""
    g = setup.grid
    acc = np.zeros((len(ls), len(Ns)))
    fine = _master_path(setup, seed, 2 * max(Ns))
    coarse = _master_path(setup, seed + 2**40, 2 * max(Ns)) if coupling == "decoupled" else None
    for state in fine:
        other = next(coarse) if coarse is not None else state
        for j, N in enumerate(Ns):
            a1, sa = _truncated_wick(other, g, N, sigma_scale)
            b1, sb = _truncated_wick(state, g, 2 * N, sigma_scale)
            for i, l in enumerate(ls):
                diff = setup.rho * (_wick(b1, sb, l) - _wick(a1, sa, l))
                acc[i, j] += float(_hs_sq(diff, g, -eps)) * setup.dt
    return acc


def cauchy_statistics(ls: Sequence[int], eps: float, N_list: Sequence[float], seeds: Sequence[int], *,
                      setup: WickSetup | None = None, coupling: str = "coupled", sigma_scale: float = 1.0,
                      jobs: int = 1) -> np.ndarray:
    """Per-seed squared Cauchy differences, shape ``(seeds, len(ls), len(N_list))``."""
    if coupling not in ("coupled", "decoupled"):
        raise ValueError("coupling must be 'coupled' or 'decoupled'")
    setup = setup or WickSetup.default()
    if 2 * max(N_list) > setup.grid.nyquist * (1 + 1e-12):
        raise ValueError(f"2 max(N) = {2 * max(N_list)} exceeds the grid Nyquist frequency {setup.grid.nyquist:.4g}")
    fn = partial(_cauchy_worker, setup=setup, ls=tuple(ls), eps=eps, Ns=tuple(N_list), coupling=coupling,
                 sigma_scale=sigma_scale)
    return np.array(seed_map(fn, seeds, jobs))


def cauchy_report(l: int, eps: float, N_list: Sequence[float], per_seed: np.ndarray, *,
                  coupling: str = "coupled", sigma_scale: float = 1.0, max_slope: float = -0.05,
                  max_stderr: float = 0.1) -> tuple[RegressionFit, TestReport]:
    """Fit ``log sqrt(E ||.||^2)`` against ``log N``; ``per_seed`` has shape ``(seeds, len(N_list))``.

    The statistic is the slope and the band is ``(-inf, max_slope]``.  A fit
    whose slope standard error exceeds ``max_stderr`` is inconclusive, which
    collapses the band to the empty set ``(-inf, -inf]``.
    """
    rms = np.sqrt(per_seed.mean(axis=0))
    fit = loglog_fit(zip(N_list, rms))
    ok_stderr = fit.stderr_slope <= max_stderr
    return fit, TestReport(
        f"cauchy_l{l}_{coupling}", fit.slope, -math.inf, max_slope if ok_stderr else -math.inf, per_seed.shape[0],
        {"l": l, "eps": eps, "N": list(N_list), "rms": rms, "stderr_slope": fit.stderr_slope,
         "max_stderr": max_stderr, "coupling": coupling, "sigma_scale": sigma_scale},
    )


def cauchy_rate_test(l: int, eps: float, N_list: Sequence[float], seeds: Sequence[int], *,
                     setup: WickSetup | None = None, coupling: str = "coupled", sigma_scale: float = 1.0,
                     jobs: int = 1) -> tuple[RegressionFit, TestReport]:
    """Decay of ``||rho(:psi_2N^l: - :psi_N^l:)||_{L^2_t H^-eps}`` in ``N``; pass if slope <= -0.05."""
    per_seed = cauchy_statistics((l,), eps, N_list, seeds, setup=setup, coupling=coupling,
                                 sigma_scale=sigma_scale, jobs=jobs)
    return cauchy_report(l, eps, N_list, per_seed[:, 0, :], coupling=coupling, sigma_scale=sigma_scale)


def _continuity_worker(seed, *, setup, l, eps, t0, h_list, N):
    g = setup.grid
    cfg = NoiseConfig(seed, N, g)
    bitgen = np.random.PCG64(seed)
    state = advance_convolution(ConvolutionState.zero(g), t0, bitgen, cfg)
    base = setup.rho * _wick(_physical(state.psi_hat, g), counterterm_sigma(cfg, t0), l)
    out = []
    for h in sorted(h_list):
        state = advance_convolution(state, t0 + h - state.t, bitgen, cfg)
        now = setup.rho * _wick(_physical(state.psi_hat, g), counterterm_sigma(cfg, state.t), l)
        out.append(float(_hs_sq(now - base, g, -eps)))
    return out


def time_continuity_test(l: int, eps: float, h_list: Sequence[float], seeds: Sequence[int], *, t0: float = 0.5,
                         N: float = 32.0, setup: WickSetup | None = None, min_slope: float = 0.1,
                         jobs: int = 1) -> tuple[RegressionFit, TestReport]:
    """``E ||rho(:psi^l:(t0 + h) - :psi^l:(t0))||^2_{H^-eps}`` against ``h``; slope must be ``>= min_slope``."""
    setup = setup or WickSetup.default(n=128)
    h_sorted = sorted(h_list)
    fn = partial(_continuity_worker, setup=setup, l=l, eps=eps, t0=t0, h_list=h_sorted, N=N)
    vals = np.array(seed_map(fn, seeds, jobs))
    m, se = _mean_stderr(vals)
    fit = loglog_fit(zip(h_sorted, m))
    return fit, TestReport(
        f"time_continuity_l{l}_t{t0:g}", fit.slope, min_slope, math.inf, len(vals),
        {"l": l, "eps": eps, "t0": t0, "h": h_sorted, "mean": m, "stderr": se, "N": N,
         "stderr_slope": fit.stderr_slope},
    )


# ---------------------------------------------------------------------------
# L^p growth of I_N(rho psi)

def lp_order(N: float) -> int:
    """Finite stand-in for the ``L^{log N}`` norm: ``max(4, ceil(log N))`` capped at 16."""
    return int(min(16, max(4, math.ceil(math.log(N)))))


def lp2_analytic(setup: WickSetup, N: float, s: float, identity: bool = False) -> float:
    """Exact ``E ||I_N(rho psi_N)||^2_{L^2_{t,x}}`` on the grid (time quadrature at the nodes).

    ``rho psi`` has Fourier coefficients ``sum_eta rho_hat(xi - eta) psi_hat(eta)``
    (circular on the lattice, as on the grid), so the expectation is
    ``L^2 sum_xi m^2(xi) (|rho_hat|^2 * C_N)(xi)`` with ``C_N`` the mode variances.
    """
    g = setup.grid
    rho_hat = np.fft.fft2(setup.rho) / g.n**2
    mult = np.ones((g.n, g.n)) if identity else multiplier(g, MultiplierSpec(N, s))
    cfg = NoiseConfig(0, N, g)
    r2 = np.fft.fft2(np.abs(rho_hat) ** 2)
    total = 0.0
    for t in setup.times:
        C = cfg.weight * gamma(t, g.xi_abs()) * cfg.retained()
        conv = np.fft.ifft2(r2 * np.fft.fft2(C)).real
        total += g.L**2 * float(np.sum(mult**2 * conv)) * setup.dt
    return total


def _lp_worker(seed, *, setup, ps, Ns, s, identity):
    g = setup.grid
    acc = np.zeros((len(ps), len(Ns)))
    mults = [np.ones((g.n, g.n)) if identity else multiplier(g, MultiplierSpec(N, s)) for N in Ns]
    for state in _master_path(setup, seed, max(Ns)):
        for j, N in enumerate(Ns):
            f = _apply(setup.rho * _physical(state.psi_hat * retained_mask(g, N), g), mults[j])
            for i, p in enumerate(ps):
                acc[i, j] += float(np.sum(np.abs(f) ** p)) * g.dx**2 * setup.dt
    return acc


def lp_moments(ps: Sequence[float], N_list: Sequence[float], seeds: Sequence[int], *, s: float = 0.9,
               setup: WickSetup | None = None, identity: bool = False, jobs: int = 1) -> np.ndarray:
    """Per-seed ``||I_N(rho psi_N)||^p_{L^p_{t,x}}``, shape ``(seeds, len(ps), len(N_list))``."""
    setup = setup or WickSetup.default()
    fn = partial(_lp_worker, setup=setup, ps=tuple(ps), Ns=tuple(N_list), s=s, identity=identity)
    return np.array(seed_map(fn, seeds, jobs))


def lp_growth_report(p: float, N_list: Sequence[float], per_seed: np.ndarray, *, analytic=None,
                     identity: bool = False) -> TestReport:
    """Normalised ``E||.||^p / (p^{p/2} log^{p/2} N)``; statistic = max / min across ``N_list``, band ``[1, 2]``."""
    m, se = _mean_stderr(per_seed)
    logs = np.log(np.asarray(N_list, dtype=float))
    normalised = m / (p ** (p / 2) * logs ** (p / 2))
    meta = {"p": p, "N": list(N_list), "mean": m, "stderr": se, "normalised": normalised, "identity": identity}
    if analytic is not None:
        meta["analytic"] = analytic
    return TestReport(
        f"lp_growth_p{p:g}" + ("_identity" if identity else ""), float(normalised.max() / normalised.min()), 1.0, 2.0,
        per_seed.shape[0], meta,
    )


def lp_growth_test(p: float, N_list: Sequence[float], seeds: Sequence[int], spec_s: float = 0.9, *,
                   setup: WickSetup | None = None, identity: bool = False, jobs: int = 1) -> TestReport:
    setup = setup or WickSetup.default()
    per_seed = lp_moments((p,), N_list, seeds, s=spec_s, setup=setup, identity=identity, jobs=jobs)[:, 0, :]
    analytic = [lp2_analytic(setup, N, spec_s, identity) for N in N_list] if p == 2 else None
    return lp_growth_report(p, N_list, per_seed, analytic=analytic, identity=identity)


# ---------------------------------------------------------------------------
# commutators

def random_hs_field(grid: GridSpec, s: float, rng: np.random.Generator) -> RealField:
    """Gaussian field with coefficients ``~ <xi>^-(s+1)``: almost surely in ``H^{s-}``."""
    z = rng.standard_normal((grid.n, grid.n)) + 1j * rng.standard_normal((grid.n, grid.n))
    c = np.where(grid.nyquist_line(), 0, z * bessel(grid, -(s + 1)))
    c = 0.5 * (c + np.conj(_neg(c)))
    return RealField(grid, _physical(c, grid))


def bound_exponent(k: int, s: float) -> float:
    """Decay exponent ``-(1 - k(1 - s))`` of the ``k``-th commutator bound."""
    return -(1 - k * (1 - s))


def commutator_slope_suite(s_list: Sequence[float], k_list: Sequence[int], N_list: Sequence[float],
                           seeds: Sequence[int], *, grid: GridSpec | None = None,
                           thresholds: dict | None = None) -> list[tuple[RegressionFit, TestReport]]:
    """Slopes of ``||(Iv)^k - I(v^k)||_{L^2} / ||Iv||_{H^1}^k`` in ``N`` for random ``H^s`` fields.

    Each ``(s, k)`` passes if the slope is at most ``thresholds[(s, k)]``
    (default: the bound's exponent plus 0.3).  ``k = 1`` reports the largest
    defect, which must be exactly zero.
    """
    grid = grid or GridSpec(2 * np.pi, 256)
    thresholds = thresholds or {}
    results = []
    for s in s_list:
        fields = [random_hs_field(grid, s, np.random.default_rng(seed)) for seed in seeds]
        for k in k_list:
            specs = [MultiplierSpec(N, s) for N in N_list]
            if k == 1:
                worst = max(commutator_defect(v, 1, sp) for v in fields for sp in specs)
                results.append((None, TestReport(f"commutator_s{s:g}_k1", worst, 0.0, 0.0, len(fields),
                                                 {"s": s, "k": 1, "N": list(N_list)})))
                continue
            vals = np.zeros(len(N_list))
            for v in fields:
                for j, sp in enumerate(specs):
                    h1 = norm_hs(RealField(grid, _apply(v.values, multiplier(grid, sp))), 1.0)
                    vals[j] += commutator_defect(v, k, sp) / h1**k
            vals /= len(fields)
            fit = loglog_fit(zip(N_list, vals))
            limit = thresholds.get((s, k), bound_exponent(k, s) + 0.3)
            results.append((fit, TestReport(
                f"commutator_s{s:g}_k{k}", fit.slope, -math.inf, limit, len(fields),
                {"s": s, "k": k, "N": list(N_list), "normalised_defect": vals, "stderr_slope": fit.stderr_slope,
                 "exponent": bound_exponent(k, s)},
            )))
    return results


# ---------------------------------------------------------------------------
# energy identity

def energy_decomposition_test(w0: WaveState, noise, cfg: SolverConfig, spec: MultiplierSpec, tau: float, *,
                              tolerance: float = 1e-2) -> TestReport:
    """Centred difference of ``E(I v, I v_t)`` against the four-term derivative along a run.

    Relative error ``sup |FD - S| / sup |S|`` over interior steps.
    """
    traj = run_local(w0, noise, tau, cfg, spec=spec, keep_states=True)
    E = traj.energies()
    h = traj.times[1] - traj.times[0]
    fd = (E[2:] - E[:-2]) / (2 * h)
    terms = [energy_derivative_terms(w, None if noise is None else noise.bundle(w.t), cfg.rho, spec)
             for w in traj.states[1:-1]]
    S = np.array([d.total for d in terms])
    scale = float(np.abs(S).max())
    err = float(np.abs(fd - S).max()) / scale if scale > 0 else float(np.abs(fd).max())
    parts = np.array([tuple(d) for d in terms])
    return TestReport(
        "energy_decomposition", err, 0.0, tolerance, len(S),
        {"dt": cfg.dt, "N": spec.N, "s": spec.s, "max_abs_terms": np.abs(parts).max(axis=0),
         "columns": ["worst", "tame", "commutators", "harmless"]},
    )


def conservation_test(w0: WaveState, cfg: SolverConfig, T: float, *, tolerance: float = 1e-3) -> TestReport:
    """Noise-off run: relative drift of the Hamiltonian per unit time.

    Uses ``E`` without the mass term, which is the invariant of the unforced
    massless cubic wave flow.
    """
    traj = run_local(w0, None, T, cfg)
    H = np.array([r.energy.hamiltonian for r in traj.records])
    drift = float(np.abs(H - H[0]).max() / abs(H[0]) / T)
    return TestReport("conservation", drift, 0.0, tolerance, len(H),
                      {"T": T, "dt": cfg.dt, "n": cfg.grid.n, "H0": H[0]})


# ---------------------------------------------------------------------------
# finite speed of propagation

class ResampledNoise:
    """A noise source seen on a finer grid (trigonometric interpolation of ``psi``).

    The Wick powers are recomputed from the interpolated ``psi`` with the
    same counterterm, so both resolutions share one realisation.
    """

    def __init__(self, source: NoiseSource, n: int):
        self.source = source
        self.n = n

    def bundle(self, t: float) -> WickBundle:
        b = self.source.bundle(t)
        p = resample(b.psi1, self.n)
        return WickBundle(p, hermite(2, p, b.sigma), hermite(3, p, b.sigma), b.sigma, t)


@dataclass(frozen=True)
class PropagationSetup:
    """Two-cutoff experiment: data ``rho_i u0``, zero velocity, shared noise."""

    L: float = 16.0
    n: int = 128
    T: float = 0.5
    R_inner: float = 1.0
    R_outer: float = 2.5
    width: float = 1.0
    seed: int = 3
    cutoff_N: float = 4.0
    amplitude: float = 1.0
    dt_factor: float = 0.25

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.L, self.n)

    @property
    def cone_radius(self) -> float:
        return 2 * self.T

    def data(self, grid: GridSpec) -> np.ndarray:
        x1, x2 = grid.coordinates()
        return 0.5 * np.cos(2 * np.pi * x1 / self.L) + 0.3 * np.sin(4 * np.pi * x2 / self.L)

    def noise(self) -> NoiseSource:
        return NoiseSource(NoiseConfig(self.seed, self.cutoff_N, self.grid, self.amplitude))


def _run_cutoff(setup: PropagationSetup, grid: GridSpec, rho: np.ndarray, noise, dt: float):
    cfg = SolverConfig(dt=dt, rho=RealField(grid, rho))
    w = WaveState(RealField(grid, rho * setup.data(grid)), RealField(grid, np.zeros((grid.n, grid.n))))
    return run_local(w, noise, setup.T, cfg, keep_states=True).states


def perturbed_cutoff(grid: GridSpec, T: float, width: float = 1.0) -> RealField:
    """Negative-control cutoff: the transition starts at ``0.6 * 2T``, inside ``B_{2T}``."""
    return cutoff_profile(grid, 1.2 * T, width)


def cone_discrepancy(states_a, states_b, grid: GridSpec, R: float, stride: int = 1) -> float:
    """``sup_t ||v_a(t) - v_b(t)||_{L^inf(B_{R - t})}``; ``stride`` subsamples the second grid."""
    r = grid.radius()
    worst = 0.0
    for a, b in zip(states_a, states_b):
        inside = r < R - a.t + 1e-12
        if not inside.any():
            continue
        bv = b.v.values[::stride, ::stride]
        worst = max(worst, float(np.abs(a.v.values - bv)[inside].max()))
    return worst


def solver_tolerance(setup: PropagationSetup, R: float | None = None) -> float:
    """Discretisation error of the solver on the cone, by spatial self-convergence.

    Runs the problem with cutoff radius ``R`` (default ``R_inner``) at ``n``
    and ``2n`` points per side (same time step, same noise realisation
    resampled) and returns the largest difference on ``B_{2T - t}``.
    """
    g = setup.grid
    dt = setup.dt_factor * g.dx
    R = setup.R_inner if R is None else R
    src = setup.noise()
    coarse = _run_cutoff(setup, g, cutoff_profile(g, R, setup.width).values, src, dt)
    fine_grid = GridSpec(setup.L, 2 * setup.n)
    fine = _run_cutoff(setup, fine_grid, cutoff_profile(fine_grid, R, setup.width).values,
                       ResampledNoise(src, fine_grid.n), dt)
    return cone_discrepancy(coarse, fine, g, setup.cone_radius, stride=2)


def propagation_test(rho1: np.ndarray, rho2: np.ndarray, setup: PropagationSetup, tolerance: float, *,
                     factor: float = 10.0, negative_control: bool = False) -> TestReport:
    """Run both cutoffs on one noise stream and compare on the cone ``|x| < 2T - t``.

    Positive case: pass if the discrepancy is at most ``factor * tolerance``.
    With ``negative_control=True`` the band becomes ``[factor * tolerance, inf)``
    (use ``factor=100`` for a perturbation inside ``B_{2T}``).
    """
    g = setup.grid
    dt = setup.dt_factor * g.dx
    src = setup.noise()
    a = _run_cutoff(setup, g, rho1, src, dt)
    b = _run_cutoff(setup, g, rho2, src, dt)
    stat = cone_discrepancy(a, b, g, setup.cone_radius)
    low, high = (factor * tolerance, math.inf) if negative_control else (0.0, factor * tolerance)
    name = "propagation_negative_control" if negative_control else "propagation"
    return TestReport(name, stat, low, high, len(a),
                      {"tolerance": tolerance, "factor": factor, "T": setup.T, "cone_radius": setup.cone_radius,
                       "seed": setup.seed, "n": setup.n, "L": setup.L})
