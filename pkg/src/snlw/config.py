"""Experiment configuration: sectioned ``key = value`` text (INI).

Example with every key at its default::

    [grid]
    L = 16.0
    n = 128

    [noise]
    seed = 0
    N = 4.0
    amplitude = 0.1
    sigma_scale = 1.0        # != 1 injects a counterterm fault

    [solver]
    dt = 0.03125             # default dx / 4
    picard_iters = 8
    picard_tol = 1e-10
    blowup_threshold = 1e6
    window_tau = 0.25

    [schedule]
    s = 0.9
    alpha = 0.6
    beta = 0.3
    margin = 0.5

    [cutoff]
    R = 2.0

    [run]
    T = 1.0
    out = out
    seeds = 1
    data_amplitude = 0.3
    dump_fields = false

    [verify]
    seeds = 20
    draws = 20000
    eps = 0.2
    commutator_n = 256

Unknown sections or keys are errors, and :func:`parse_config` reports every
violation at once in a :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, fields, replace

FORMAT_CONFIG = "snlw-config/1"


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))


@dataclass(frozen=True)
class GridSection:
    L: float = 16.0
    n: int = 128


@dataclass(frozen=True)
class NoiseSection:
    seed: int = 0
    N: float = 4.0
    amplitude: float = 0.1
    sigma_scale: float = 1.0


@dataclass(frozen=True)
class SolverSection:
    dt: float | None = None
    picard_iters: int = 8
    picard_tol: float = 1e-10
    blowup_threshold: float = 1e6
    window_tau: float = 0.25


@dataclass(frozen=True)
class ScheduleSection:
    s: float = 0.9
    alpha: float = 0.6
    beta: float = 0.3
    margin: float = 0.5


@dataclass(frozen=True)
class CutoffSection:
    R: float = 2.0


@dataclass(frozen=True)
class RunSection:
    T: float = 1.0
    out: str = "out"
    seeds: int = 1
    data_amplitude: float = 0.3
    dump_fields: bool = False


@dataclass(frozen=True)
class VerifySection:
    seeds: int = 20
    draws: int = 20000
    eps: float = 0.2
    commutator_n: int = 256


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    solver: SolverSection = field(default_factory=SolverSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    cutoff: CutoffSection = field(default_factory=CutoffSection)
    run: RunSection = field(default_factory=RunSection)
    verify: VerifySection = field(default_factory=VerifySection)

    @property
    def dt(self) -> float:
        return self.solver.dt if self.solver.dt is not None else self.grid.L / self.grid.n / 4

    def resolved(self) -> dict:
        """Plain nested dict with defaults filled in (``dt`` made explicit)."""
        d = asdict(self)
        d["solver"]["dt"] = self.dt
        d["format"] = FORMAT_CONFIG
        return d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, noise=replace(self.noise, seed=int(seed)))

    def with_out(self, out: str) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, out=str(out)))


SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _convert(raw: str, typ, where: str, errors: list[str]):
    text = raw.strip()
    try:
        if typ in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ in ("int", int):
            return int(text)
        if typ in ("float", float, "float | None"):
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text
    except ValueError:
        errors.append(f"{where}: cannot read {text!r} as {getattr(typ, '__name__', typ)}")
        return None


def _validate(cfg: ExperimentConfig) -> list[str]:
    v: list[str] = []
    g, nz, so, sc, cu, run, ve = cfg.grid, cfg.noise, cfg.solver, cfg.schedule, cfg.cutoff, cfg.run, cfg.verify
    if not g.L > 0:
        v.append(f"grid.L must be positive (got {g.L})")
    if g.n < 4 or g.n % 2:
        v.append(f"grid.n must be an even integer >= 4 (got {g.n})")
    if not 0 <= nz.seed < 2**63:
        v.append(f"noise.seed must lie in [0, 2^63) (got {nz.seed})")
    if g.L > 0 and g.n > 0:
        nyq = math.pi * g.n / g.L
        if not 0 < nz.N <= nyq * (1 + 1e-12):
            v.append(f"noise.N must lie in (0, pi n / L = {nyq:.6g}] (got {nz.N})")
        if so.dt is not None and not 0 < so.dt <= g.L / g.n * (1 + 1e-12):
            v.append(f"solver.dt must lie in (0, dx = {g.L / g.n:.6g}] (got {so.dt})")
    if nz.amplitude < 0:
        v.append(f"noise.amplitude must be nonnegative (got {nz.amplitude})")
    if nz.sigma_scale < 0:
        v.append(f"noise.sigma_scale must be nonnegative (got {nz.sigma_scale})")
    for name in ("picard_tol", "blowup_threshold", "window_tau"):
        if not getattr(so, name) > 0:
            v.append(f"solver.{name} must be positive (got {getattr(so, name)})")
    if so.picard_iters < 1:
        v.append(f"solver.picard_iters must be >= 1 (got {so.picard_iters})")
    if not sc.s < 1:
        v.append(f"schedule.s must be < 1 (got {sc.s})")
    elif not sc.s > 0.8:
        v.append(f"InfeasibleSchedule: schedule.s = {sc.s} leaves no window 2(1-s) < beta < alpha < 1-3(1-s); "
                 "the growing-N schedule needs s > 4/5")
    else:
        lo, hi = 2 * (1 - sc.s), 1 - 3 * (1 - sc.s)
        if not lo < sc.beta < sc.alpha < hi:
            v.append(f"InfeasibleSchedule: need {lo:.4g} < beta ({sc.beta}) < alpha ({sc.alpha}) < {hi:.4g}")
    if not 0 < sc.margin <= 1:
        v.append(f"schedule.margin must lie in (0, 1] (got {sc.margin})")
    if cu.R < 0:
        v.append(f"cutoff.R must be nonnegative (got {cu.R})")
    if not run.T > 0:
        v.append(f"run.T must be positive (got {run.T})")
    if g.L < 4 * (run.T + cu.R + 1):
        v.append(f"cone wrap: grid.L = {g.L} < 4 (T + R + 1) = {4 * (run.T + cu.R + 1):g}; "
                 "the light cone of the cutoff support would wrap around the periodic box")
    if run.seeds < 1:
        v.append(f"run.seeds must be >= 1 (got {run.seeds})")
    if not run.out:
        v.append("run.out must be a nonempty directory name")
    if ve.seeds < 2:
        v.append(f"verify.seeds must be >= 2 (got {ve.seeds})")
    if ve.draws < 2:
        v.append(f"verify.draws must be >= 2 (got {ve.draws})")
    if not ve.eps > 0:
        v.append(f"verify.eps must be positive (got {ve.eps})")
    if ve.commutator_n < 16 or ve.commutator_n % 2:
        v.append(f"verify.commutator_n must be an even integer >= 16 (got {ve.commutator_n})")
    return v


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text; raises :class:`ConfigError` listing every violation."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keys are case sensitive (L vs n)
    errors: list[str] = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    if parser.defaults():
        errors.append(f"keys outside any section are not allowed: {sorted(parser.defaults())}")
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            errors.append(f"unknown section [{name}] (known: {', '.join(SECTIONS)})")
            continue
        default = SECTIONS[name]()
        known = {f.name: f.type for f in fields(default)}
        values = {}
        for key, raw in parser.items(name, raw=True):
            if key in parser.defaults():
                continue
            if key not in known:
                errors.append(f"unknown key {name}.{key} (known: {', '.join(known)})")
                continue
            value = _convert(raw, known[key], f"{name}.{key}", errors)
            if value is not None:
                values[key] = value
        sections[name] = replace(default, **values)
    cfg = ExperimentConfig(**sections)
    errors.extend(_validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def default_config() -> ExperimentConfig:
    cfg = ExperimentConfig()
    problems = _validate(cfg)
    assert not problems, problems
    return cfg
