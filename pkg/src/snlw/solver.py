"""Time integration of the localised renormalised cubic wave equation.

The unknown ``v`` solves

    v_tt - Laplace v + F = 0,
    F = v^3 + 3 v^2 rho psi + 3 v rho :psi^2: + rho :psi^3:,

in mild form.  One step of length ``h`` is the fixed point of the discrete
Duhamel map

    v(t+h)   = cos(h|D|) v + sin(h|D|)/|D| v_t - h/2 sin(h|D|)/|D| F(t)
    v_t(t+h) = -|D| sin(h|D|) v + cos(h|D|) v_t - h/2 (cos(h|D|) F(t) + F(t+h))

(trapezoidal rule with the exact propagator at the nodes).  Because the
``sin`` kernel vanishes at ``t' = t + h`` the position update does not depend
on the iterate, so the Picard iteration settles after two applications; the
scheme coincides with the symplectic impulse splitting (half kick, exact free
flow, half kick).  ``F`` is dealiased with the 2/3 rule and initial data are
projected onto the dealiased band, which keeps the discrete energy
``1/2 |v_t|^2 + 1/2 |grad v|^2 + 1/4 sum v^4 dx^2`` a conserved quantity of
the semi-discrete flow when the noise is off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext

import numpy as np

from .imethod import EnergySnapshot, MultiplierSpec, modified_energy, smoothstep
from .noise import NoiseSource, WickBundle, free_rotation
from .spectral_grid import GridSpec, RealField, bessel, dealias_mask


class BlowUp(RuntimeError):
    """The ``H^s x H^(s-1)`` norm crossed the blow-up threshold."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class NonConvergence(RuntimeError):
    """The Picard iteration stopped contracting; the step is too large."""


class InfeasibleSchedule(ValueError):
    """No admissible ``(alpha, beta)`` window, or the requested pair lies outside it."""


class ScheduleViolation(UserWarning):
    """A window boundary failed the induction bound ``E <= margin N^beta``."""


@dataclass
class WaveState:
    v: RealField
    v_t: RealField
    t: float = 0.0

    def __post_init__(self):
        if self.v.grid != self.v_t.grid:
            raise ValueError("v and v_t live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.v.grid

    @classmethod
    def zero(cls, grid: GridSpec, t: float = 0.0) -> "WaveState":
        z = np.zeros((grid.n, grid.n))
        return cls(RealField(grid, z), RealField(grid, z.copy()), t)


def cutoff_profile(grid: GridSpec, R: float, width: float = 1.0) -> RealField:
    """Radial bump: 1 on ``|x| <= R``, 0 for ``|x| >= R + width``, quintic step between."""
    if R < 0 or width <= 0:
        raise ValueError("cutoff needs R >= 0 and width > 0")
    if R + width >= grid.L / 2:
        raise ValueError(f"cutoff support radius {R + width} does not fit in the box of side {grid.L}")
    return RealField(grid, 1.0 - smoothstep((grid.radius() - R) / width))


@dataclass
class SolverConfig:
    dt: float
    rho: RealField
    s: float = 0.9
    picard_iters: int = 8
    picard_tol: float = 1e-10
    blowup_threshold: float = 1e6

    def __post_init__(self):
        grid = self.rho.grid
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dt > grid.dx * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds the grid spacing dx={grid.dx}")
        if self.picard_iters < 1:
            raise ValueError("picard_iters must be >= 1")
        if not self.picard_tol > 0 or not self.blowup_threshold > 0:
            raise ValueError("picard_tol and blowup_threshold must be positive")
        if not 0 < self.s < 1:
            raise ValueError("s must lie in (0, 1)")
        r = self.rho.values
        if r.min() < -1e-12 or r.max() > 1 + 1e-12:
            raise ValueError("cutoff rho must take values in [0, 1]")

    @property
    def grid(self) -> GridSpec:
        return self.rho.grid


def hs_norm(w: WaveState, s: float) -> float:
    """``||(v, v_t)||_{H^s x H^(s-1)}``."""
    g = w.grid
    cv = np.fft.fft2(w.v.values) / g.n**2
    cvt = np.fft.fft2(w.v_t.values) / g.n**2
    a = np.sum(bessel(g, 2 * s) * np.abs(cv) ** 2)
    b = np.sum(bessel(g, 2 * (s - 1)) * np.abs(cvt) ** 2)
    return float(g.L * np.sqrt(a + b))


def free_step(w: WaveState, h: float) -> WaveState:
    """Exact linear wave flow over time ``h`` (``h = 0`` is the identity)."""
    g = w.grid
    if h == 0:
        return WaveState(RealField(g, w.v.values.copy()), RealField(g, w.v_t.values.copy()), w.t)
    c, s_over, minus_xs = free_rotation(h, g.xi_abs())
    vh, vth = np.fft.fft2(w.v.values), np.fft.fft2(w.v_t.values)
    v = np.fft.ifft2(c * vh + s_over * vth).real
    vt = np.fft.ifft2(minus_xs * vh + c * vth).real
    return WaveState(RealField(g, v), RealField(g, vt), w.t + h)


class _Stepper:
    """Precomputed propagators and masks for repeated steps of one length."""

    def __init__(self, cfg: SolverConfig, h: float):
        g = cfg.grid
        self.grid = g
        self.h = h
        self.cfg = cfg
        self.c, self.s_over, self.minus_xs = free_rotation(h, g.xi_abs())
        self.mask = dealias_mask(g)
        self.rho = cfg.rho.values
        self.w_s = bessel(g, 2 * cfg.s)
        self.w_s1 = bessel(g, 2 * (cfg.s - 1))

    def forcing(self, vhat: np.ndarray, bundle: WickBundle | None) -> np.ndarray:
        """Dealiased ``fft2`` of the nonlinearity at position ``vhat`` (``fft2`` scaling)."""
        v = np.fft.ifft2(vhat).real
        f = v**3
        if bundle is not None:
            r = self.rho
            f = f + 3 * v * v * (r * bundle.psi1) + 3 * v * (r * bundle.psi2) + r * bundle.psi3
        return np.fft.fft2(f) * self.mask

    def gamma_map(self, vhat, vthat, f0, f1):
        h = self.h
        v1 = self.c * vhat + self.s_over * vthat - 0.5 * h * self.s_over * f0
        vt1 = self.minus_xs * vhat + self.c * vthat - 0.5 * h * (self.c * f0 + f1)
        return v1, vt1

    def distance(self, a, b, at, bt) -> float:
        n2 = self.grid.n**2
        d = np.sum(self.w_s * np.abs(a - b) ** 2) + np.sum(self.w_s1 * np.abs(at - bt) ** 2)
        return float(self.grid.L * np.sqrt(d) / n2)

    def size(self, a, at) -> float:
        n2 = self.grid.n**2
        d = np.sum(self.w_s * np.abs(a) ** 2) + np.sum(self.w_s1 * np.abs(at) ** 2)
        return float(self.grid.L * np.sqrt(d) / n2)

    def step(self, vhat, vthat, b0, b1, f0=None):
        """Iterate the Duhamel map to its fixed point; returns ``(v, v_t, F(t+h))``."""
        if f0 is None:
            f0 = self.forcing(vhat, b0)
        # initial guess: free evolution
        gv = self.c * vhat + self.s_over * vthat
        gvt = self.minus_xs * vhat + self.c * vthat
        tol = self.cfg.picard_tol * (1.0 + self.size(gv, gvt))
        previous = None
        for _ in range(self.cfg.picard_iters):
            f1 = self.forcing(gv, b1)
            nv, nvt = self.gamma_map(vhat, vthat, f0, f1)
            d = self.distance(nv, gv, nvt, gvt)
            gv, gvt = nv, nvt
            if not math.isfinite(d):
                raise NonConvergence("Picard iterate became non-finite")
            if d <= tol:
                return gv, gvt, self.forcing(gv, b1)
            if previous is not None and d > 0.9 * previous:
                raise NonConvergence(f"Picard iteration contracted by {d / previous:.3f} > 0.9; reduce dt")
            previous = d
        raise NonConvergence(f"Picard iteration did not reach tol {tol:.2e} in {self.cfg.picard_iters} iterations")


def _bundle(noise: NoiseSource | None, t: float) -> WickBundle | None:
    return None if noise is None else noise.bundle(t)


def picard_step(w: WaveState, noise: NoiseSource | None, cfg: SolverConfig, h: float | None = None) -> WaveState:
    """One mild-form step of length ``h <= dt`` (default ``dt``)."""
    h = cfg.dt if h is None else h
    if not 0 < h <= cfg.dt * (1 + 1e-12):
        raise ValueError(f"step {h} must lie in (0, dt={cfg.dt}]")
    st = _Stepper(cfg, h)
    g = w.grid
    vh, vth, _ = st.step(np.fft.fft2(w.v.values), np.fft.fft2(w.v_t.values),
                         _bundle(noise, w.t), _bundle(noise, w.t + h))
    return WaveState(RealField(g, np.fft.ifft2(vh).real), RealField(g, np.fft.ifft2(vth).real), w.t + h)


def project_dealiased(w: WaveState) -> WaveState:
    """Drop data above the 2/3 cutoff (the band the solver evolves)."""
    g = w.grid
    mask = dealias_mask(g)
    v = np.fft.ifft2(np.fft.fft2(w.v.values) * mask).real
    vt = np.fft.ifft2(np.fft.fft2(w.v_t.values) * mask).real
    return WaveState(RealField(g, v), RealField(g, vt), w.t)


@dataclass(frozen=True)
class Record:
    t: float
    hs_norm: float
    energy: EnergySnapshot
    N: float


@dataclass
class Trajectory:
    records: list[Record] = field(default_factory=list)
    states: list[WaveState] = field(default_factory=list)
    final: WaveState | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def energies(self, attr: str = "total") -> np.ndarray:
        return np.array([getattr(r.energy, attr) for r in self.records])

    def extend(self, other: "Trajectory", skip_first: bool = True):
        start = 1 if skip_first and self.records else 0
        self.records.extend(other.records[start:])
        self.states.extend(other.states[start:] if self.states else other.states)
        self.final = other.final


def run_local(w0: WaveState, noise: NoiseSource | None, tau: float, cfg: SolverConfig, *,
              spec: MultiplierSpec | None = None, keep_states: bool = False,
              project: bool = True) -> Trajectory:
    """Integrate over ``[t0, t0 + tau]`` in ``ceil(tau / dt)`` equal steps.

    Records ``||(v, v_t)||_{H^s x H^(s-1)}`` and ``E(I v, I v_t)`` (``spec=None``
    means ``I = 1``) at every step.  Raises :class:`BlowUp` (with the partial
    trajectory attached) once the norm exceeds ``cfg.blowup_threshold``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    g = w0.grid
    w = project_dealiased(w0) if project else w0
    traj = Trajectory()

    def record(state: WaveState):
        norm = hs_norm(state, cfg.s)
        N = math.inf if spec is None else spec.N
        traj.records.append(Record(state.t, norm, modified_energy(state, spec), N))
        if keep_states:
            traj.states.append(state)
        if not math.isfinite(norm) or norm > cfg.blowup_threshold:
            traj.final = state
            raise BlowUp(f"H^s norm {norm:.3e} exceeded {cfg.blowup_threshold:.3e} at t={state.t:.6g}", traj)

    record(w)
    steps = int(math.ceil(tau / cfg.dt - 1e-9)) if tau > 0 else 0
    if steps:
        h = tau / steps
        st = _Stepper(cfg, h)
        vh, vth = np.fft.fft2(w.v.values), np.fft.fft2(w.v_t.values)
        t0 = w.t
        f0 = None
        for i in range(steps):
            ta, tb = t0 + i * h, t0 + (i + 1) * h
            vh, vth, f0 = st.step(vh, vth, _bundle(noise, ta), _bundle(noise, tb), f0)
            w = WaveState(RealField(g, np.fft.ifft2(vh).real), RealField(g, np.fft.ifft2(vth).real), tb)
            record(w)
    traj.final = w
    return traj


# ---------------------------------------------------------------------------
# growing-N schedule

@dataclass(frozen=True)
class ScheduleParams:
    s: float
    alpha: float
    beta: float
    margin: float = 0.5

    def __post_init__(self):
        if not 0 < self.margin <= 1:
            raise ValueError("margin must lie in (0, 1]")

    @property
    def lower(self) -> float:
        return 2 * (1 - self.s)

    @property
    def upper(self) -> float:
        return 1 - 3 * (1 - self.s)

    def check(self):
        """Raise :class:`InfeasibleSchedule` unless ``2(1-s) < beta < alpha < 1 - 3(1-s)``."""
        # the window closes at s = 4/5; widths at rounding level count as closed
        if not self.upper - self.lower > 1e-12:
            raise InfeasibleSchedule(
                f"s={self.s} leaves no window 2(1-s) < beta < alpha < 1-3(1-s); the schedule needs s > 4/5"
            )
        if not self.lower < self.beta < self.alpha < self.upper:
            raise InfeasibleSchedule(
                f"need {self.lower:.4g} < beta={self.beta} < alpha={self.alpha} < {self.upper:.4g}"
            )

    @classmethod
    def default_for(cls, s: float, margin: float = 0.5) -> "ScheduleParams":
        """``beta`` and ``alpha`` at one and two thirds of the admissible window."""
        lo, hi = 2 * (1 - s), 1 - 3 * (1 - s)
        p = cls(s, lo + 2 * (hi - lo) / 3, lo + (hi - lo) / 3, margin)
        p.check()
        return p


def log2_of(N) -> float:
    """``log2 N``, exact for integer powers of two of any size."""
    if isinstance(N, (int, np.integer)) and N > 0 and (int(N) & (int(N) - 1)) == 0:
        return float(int(N).bit_length() - 1)
    return math.log2(float(N))


def as_float(N) -> float:
    try:
        return float(N)
    except OverflowError:
        return math.inf


_TIE = 1e-9


def _exact_ok(j: int, exact: tuple, c: float, p: ScheduleParams) -> bool:
    """Decide a near-tie of :func:`_ok` in 60-digit decimal arithmetic.

    ``exact`` holds ``(log2 A, log2 B)`` as decimals (``None`` for zero).  The
    float parameters enter through their exact binary values, so the answer
    is that of the inequality with those parameters.
    """
    with localcontext() as ctx:
        ctx.prec = 60
        ln2 = Decimal(2).ln()
        j = Decimal(int(j))
        rhs = Decimal(p.margin).ln() / ln2 + Decimal(p.beta) * j
        terms = []
        if exact[0] is not None:
            terms.append(Decimal(c) * j + exact[0])
        if exact[1] is not None:
            terms.append(exact[1])
        if not terms:
            return True
        top = max(terms)
        diff = top - rhs
        if len(terms) == 2:
            gap = min(terms) - top
            if gap < -150:
                # log2(1 + x) ~ x / ln 2; the sign is all that matters here
                extra = (gap * ln2).exp() / ln2
            else:
                extra = (1 + (gap * ln2).exp()).ln() / ln2
            diff += extra
        return diff <= 0


def _ok(j: float, log2_a: float, log2_b: float, c: float, p: ScheduleParams, exact: tuple | None = None) -> bool:
    """``2^(c j) A + B <= margin 2^(beta j)`` evaluated in log2.

    Float evaluation decides unless both sides agree to ``_TIE`` in log2; such
    near-ties are settled exactly from ``exact`` when it is given.
    """
    lhs = np.logaddexp2(c * j + log2_a, log2_b)
    rhs = math.log2(p.margin) + p.beta * j
    if exact is not None and abs(lhs - rhs) <= _TIE * max(1.0, abs(rhs)):
        return _exact_ok(j, exact, c, p)
    return bool(lhs <= rhs)


def _smallest_exponent(log2_a: float, log2_b: float, p: ScheduleParams, j_min: int,
                       exact: tuple | None = None) -> int:
    """Smallest integer ``j >= j_min`` with ``2^(c j) A + B <= margin 2^(beta j)``, ``c = 2(1-s)``.

    ``margin 2^(beta j) - A 2^(c j)`` decreases then increases in ``j`` (one
    critical point), so past the first failure the admissible set is a ray
    found by doubling then bisection.
    """
    c = p.lower
    if p.beta <= c:
        raise InfeasibleSchedule(f"beta={p.beta} must exceed 2(1-s)={c:.4g}")
    if _ok(j_min, log2_a, log2_b, c, p, exact):
        return j_min
    start = j_min
    if math.isfinite(log2_a):
        crit = (log2_a + math.log2(c) - math.log2(p.margin * p.beta)) / (p.beta - c)
        start = max(j_min, int(math.ceil(crit)))
    if _ok(start, log2_a, log2_b, c, p, exact):
        return start
    lo, step = start, 1
    hi = start + step
    while not _ok(hi, log2_a, log2_b, c, p, exact):
        lo, step = hi, step * 2
        hi = start + step
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _ok(mid, log2_a, log2_b, c, p, exact):
            hi = mid
        else:
            lo = mid
    return hi


def _log2_or_neg_inf(x: float) -> float:
    return math.log2(x) if x > 0 else -math.inf


def _exact_logs_initial(u0_norm: float, u1_norm: float) -> tuple:
    with localcontext() as ctx:
        ctx.prec = 60
        ln2 = Decimal(2).ln()
        u0, u1 = Decimal(u0_norm), Decimal(u1_norm)
        a = u0 * u0 + u1 * u1
        b = u0 * u0 * u0 * u0
        return (a.ln() / ln2 if a > 0 else None, b.ln() / ln2 if b > 0 else None)


def _exact_logs_next(j_k, p: ScheduleParams) -> tuple:
    alpha = Decimal(p.alpha)
    return (alpha * int(j_k), 2 * alpha * int(j_k))


def initial_exponent(u0_norm: float, u1_norm: float, p: ScheduleParams) -> int:
    p.check()
    a = _log2_or_neg_inf(u0_norm**2 + u1_norm**2)
    b = _log2_or_neg_inf(u0_norm**4)
    return _smallest_exponent(a, b, p, 0, _exact_logs_initial(u0_norm, u1_norm))


def next_exponent(j_k: int, p: ScheduleParams) -> int:
    p.check()
    return _smallest_exponent(p.alpha * j_k, 2 * p.alpha * j_k, p, int(j_k) + 1, _exact_logs_next(j_k, p))


def initial_N(u0_norm: float, u1_norm: float, p: ScheduleParams) -> int:
    """Smallest power of two ``N`` with ``N^(2(1-s)) (|u0|^2 + |u1|^2) + |u0|^4 <= margin N^beta``."""
    return 2 ** initial_exponent(u0_norm, u1_norm, p)


def next_N(N_k, p: ScheduleParams) -> int:
    """Smallest power of two ``N > N_k`` with ``N^(2(1-s)) N_k^alpha + N_k^(2 alpha) <= margin N^beta``."""
    p.check()
    j_k = log2_of(N_k)
    exact = _exact_logs_next(j_k, p) if float(j_k).is_integer() else None
    return 2 ** _smallest_exponent(p.alpha * j_k, 2 * p.alpha * j_k, p, int(math.floor(j_k)) + 1, exact)


def schedule_ladder(u0_norm: float, u1_norm: float, p: ScheduleParams, windows: int) -> list[int]:
    """Exponents ``log2 N_k`` for ``k = 1 .. windows``."""
    js = [initial_exponent(u0_norm, u1_norm, p)]
    while len(js) < windows:
        js.append(next_exponent(js[-1], p))
    return js


@dataclass
class WindowLog:
    index: int
    log2_N: int
    t_start: float
    t_end: float
    energy_start: float
    energy_sup: float
    hs_norm_sup: float
    induction_ok: bool
    alpha_ok: bool

    def as_row(self) -> dict:
        return dict(self.__dict__)


@dataclass
class GlobalRun:
    trajectory: Trajectory
    log: list[WindowLog]
    violations: list[ScheduleViolation]


def _below_power(value: float, log2_N: float, exponent: float, factor: float = 1.0) -> bool:
    """``value <= factor * N^exponent`` without forming ``N``."""
    if value <= 0:
        return True
    return math.log2(value) <= math.log2(factor) + exponent * log2_N


def run_global(w0: WaveState, noise: NoiseSource | None, T: float, cfg: SolverConfig, p: ScheduleParams,
               *, tau: float = 0.25, keep_states: bool = False) -> GlobalRun:
    """Iterate :func:`run_local` over windows of length ``tau`` up to ``T``.

    Window ``k`` uses ``I_{N_k}`` with ``N_1`` from :func:`initial_N` and
    ``N_{k+1}`` from :func:`next_N`.  Each window logs the boundary energy,
    its supremum, and whether ``E(start) <= margin N_k^beta`` (induction) and
    ``sup E <= N_k^alpha`` held.  A failed induction bound is recorded as a
    :class:`ScheduleViolation`; the run continues.
    """
    p.check()
    if not tau > 0:
        raise ValueError("window length tau must be positive")
    w = project_dealiased(w0)
    s = cfg.s
    g = w.grid
    c0 = np.fft.fft2(w.v.values) / g.n**2
    c1 = np.fft.fft2(w.v_t.values) / g.n**2
    u0 = float(g.L * np.sqrt(np.sum(bessel(g, 2 * s) * np.abs(c0) ** 2)))
    u1 = float(g.L * np.sqrt(np.sum(bessel(g, 2 * (s - 1)) * np.abs(c1) ** 2)))
    j = initial_exponent(u0, u1, p)

    traj = Trajectory()
    log: list[WindowLog] = []
    violations: list[ScheduleViolation] = []
    k = 0
    t = w.t
    while t < T - 1e-12:
        if k > 0:
            j = next_exponent(j, p)
        spec = MultiplierSpec(as_float(2**j) if j < 1000 else math.inf, s)
        e_start = modified_energy(w, spec).total
        induction = _below_power(e_start, j, p.beta, p.margin)
        if not induction:
            violations.append(ScheduleViolation(
                f"window {k}: E={e_start:.4g} > {p.margin} N^beta with log2 N={j}"))
        length = min(tau, T - t)
        try:
            part = run_local(w, noise, length, cfg, spec=spec, keep_states=keep_states, project=False)
        except BlowUp as exc:
            if exc.trajectory is not None:
                traj.extend(exc.trajectory)
            raise BlowUp(str(exc), traj) from exc
        traj.extend(part)
        e_sup = max(r.energy.total for r in part.records)
        log.append(WindowLog(
            index=k, log2_N=j, t_start=t, t_end=t + length, energy_start=e_start,
            energy_sup=e_sup, hs_norm_sup=max(r.hs_norm for r in part.records),
            induction_ok=induction, alpha_ok=_below_power(e_sup, j, p.alpha),
        ))
        w = part.final
        t = w.t
        k += 1
    traj.final = w
    return GlobalRun(traj, log, violations)


def gronwall_constant(times: np.ndarray, energies: np.ndarray, log2_N: float, beta: float,
                      t0: float = 0.0) -> float:
    """Smallest ``C`` with ``E(t) <= N^beta exp(C |t - t0| log N)`` on the samples."""
    logN = log2_N * math.log(2)
    cap = beta * logN
    dt = np.abs(np.asarray(times) - t0)
    e = np.asarray(energies)
    pos = (dt > 0) & (e > 0)
    if not np.any(pos):
        return 0.0
    need = (np.log(e[pos]) - cap) / (dt[pos] * logN)
    return float(max(0.0, need.max()))
