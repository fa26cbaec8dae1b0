"""Space-time white noise, the truncated stochastic convolution and its Wick powers.

The stochastic convolution solves ``psi_tt = Laplace psi + dW`` with zero
data.  On the box of side ``L`` the white noise has Fourier coefficients
``dbeta_k / L`` with independent complex Brownian motions ``beta_k``
(``beta_{-k} = conj(beta_k)``), so every retained mode of ``psi`` is an
independent two-dimensional Gaussian process that can be advanced *exactly in
law*: rotate ``(psi_hat, dpsi_hat)`` by the free wave flow, then add a centred
Gaussian pair with the covariance of the noise injected during the step
(:func:`step_covariances`, scaled by ``amplitude**2 / L**2``).

Random numbers
--------------
Each trajectory owns one PCG64 bit generator seeded with ``NoiseConfig.seed``.
Standard normals are produced from its raw 64-bit output by a fixed
Box-Muller transform (:func:`standard_normals`), so trajectories are
bit-reproducible for as long as the PCG64 bit stream is (numpy guarantees it).
Every step draws four normals for *every* lattice point in a fixed order and
then masks by the cutoff, so two cutoffs driven by the same seed and the same
step times are exactly nested: ``psi_N`` is the ``|xi| <= N`` truncation of
``psi_M``.

Mode set
--------
A mode ``k`` is retained when ``|xi(k)| <= N`` and ``k`` does not lie on the
Nyquist line (a component equal to ``-n/2``).  The Nyquist modes have no
distinct conjugate partner on the grid; dropping them keeps ``k = 0`` as the
only self-conjugate mode.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator, TransformerMixin

from .spectral_grid import GridSpec, RealField, SpectralField, to_physical

FORMAT_RNG = "pcg64-boxmuller-53/1"


def _neg(a: np.ndarray) -> np.ndarray:
    """``a[k] -> a[-k]`` on the FFT-ordered lattice (last two axes)."""
    return np.roll(np.flip(a, axis=(-2, -1)), 1, axis=(-2, -1))


def standard_normals(bitgen: np.random.PCG64, shape) -> np.ndarray:
    """Box-Muller normals from the raw 64-bit output of ``bitgen``."""
    size = int(np.prod(shape, dtype=np.int64))
    half = (size + 1) // 2
    raw = bitgen.random_raw(2 * half)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u[:half]))
    theta = 2.0 * np.pi * u[half:]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return z[:size].reshape(shape)


def _x_minus_sin_over_cube(x):
    """``(x - sin(x)) / x^3`` without cancellation for small ``x`` (limit 1/6)."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.1
    x2 = x * x
    series = (1 - x2 / 20 * (1 - x2 / 42 * (1 - x2 / 72))) / 6
    safe = np.where(small, 1.0, x)
    return np.where(small, series, (safe - np.sin(safe)) / safe**3)


def _sinc(x):
    """``sin(x) / x`` with the value 1 at ``x = 0``."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


def gamma(t, xi_abs):
    """Per-mode variance kernel ``int_0^t sin^2((t - t') |xi|) / |xi|^2 dt'``.

    Equals ``t / (2 xi^2) - sin(2 t xi) / (4 xi^3)``, with the limit ``t^3 / 3``
    at ``xi = 0``.  It is evaluated as ``2 t^3 (x - sin x) / x^3`` with
    ``x = 2 t xi`` so that tiny frequencies neither cancel nor underflow.
    """
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi_abs, dtype=float)
    if np.any(t < 0) or np.any(xi < 0):
        raise ValueError("gamma needs t >= 0 and |xi| >= 0")
    return 2 * t**3 * _x_minus_sin_over_cube(2 * t * xi)


def step_covariances(h, xi_abs):
    """Covariance of the noise injected into ``(psi_hat, dpsi_hat)`` over a step ``h``.

    Returns ``(varA, varB, covAB)`` for unit noise weight::

        varA  = int_0^h sin^2(s xi) / xi^2 ds = gamma(h, xi)
        varB  = int_0^h cos^2(s xi) ds        = h/2 + sin(2 h xi) / (4 xi)
        covAB = int_0^h sin(s xi) cos(s xi) / xi ds = sin^2(h xi) / (2 xi^2)
    """
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("step length must be positive")
    xi = np.asarray(xi_abs, dtype=float)
    var_a = gamma(h, xi)
    var_b = h / 2 * (1 + _sinc(2 * h * xi))
    cov = h**2 / 2 * _sinc(h * xi) ** 2
    return var_a, var_b, cov


def free_rotation(h, xi_abs):
    """Entries ``(cos, sin/|xi|, -|xi| sin)`` of the free wave flow over time ``h``."""
    xi = np.asarray(xi_abs, dtype=float)
    c = np.cos(h * xi)
    s_over = h * _sinc(h * xi)
    minus_xs = -xi * np.sin(h * xi)
    return c, s_over, minus_xs


@dataclass(frozen=True)
class NoiseConfig:
    seed: int
    cutoff_N: float
    grid: GridSpec
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if not self.cutoff_N > 0:
            raise ValueError(f"cutoff_N must be positive, got {self.cutoff_N}")
        if self.cutoff_N > self.grid.nyquist * (1 + 1e-12):
            raise ValueError(
                f"cutoff_N={self.cutoff_N} exceeds the grid Nyquist frequency {self.grid.nyquist:.6g}"
            )
        if self.amplitude < 0:
            raise ValueError("noise amplitude must be nonnegative")

    @property
    def weight(self) -> float:
        """Variance of one mode's noise per unit time: ``amplitude^2 / L^2``."""
        return self.amplitude**2 / self.grid.L**2

    def retained(self) -> np.ndarray:
        return retained_mask(self.grid, self.cutoff_N)

    def with_cutoff(self, N: float) -> "NoiseConfig":
        return replace(self, cutoff_N=N)


def retained_mask(grid: GridSpec, N: float) -> np.ndarray:
    return (grid.xi_abs() <= N * (1 + 1e-12)) & ~grid.nyquist_line()


def _canonical_mask(grid: GridSpec) -> np.ndarray:
    """One representative of each conjugate pair ``{k, -k}``, ``k != 0``."""
    k1, k2 = grid.wavenumbers()
    canon = (k1 > 0) | ((k1 == 0) & (k2 > 0))
    return canon & ~grid.nyquist_line()


@dataclass
class ConvolutionState:
    """``(psi_hat, dpsi_hat)`` on the full lattice (zero outside the retained set).

    Arrays may carry leading batch axes; each batch entry is an independent
    realisation.
    """

    grid: GridSpec
    psi_hat: np.ndarray
    dpsi_hat: np.ndarray
    t: float = 0.0

    @classmethod
    def zero(cls, grid: GridSpec, batch: tuple = ()) -> "ConvolutionState":
        shape = tuple(batch) + (grid.n, grid.n)
        return cls(grid, np.zeros(shape, complex), np.zeros(shape, complex), 0.0)

    def truncate(self, N: float) -> "ConvolutionState":
        mask = retained_mask(self.grid, N)
        return ConvolutionState(self.grid, self.psi_hat * mask, self.dpsi_hat * mask, self.t)

    def mode_energy(self) -> np.ndarray:
        """Free-wave invariant ``|xi|^2 |psi_hat|^2 + |dpsi_hat|^2`` per mode."""
        xi = self.grid.xi_abs()
        return xi**2 * np.abs(self.psi_hat) ** 2 + np.abs(self.dpsi_hat) ** 2


def noise_increment(grid: GridSpec, h: float, weight: float, bitgen, batch: tuple = ()):
    """Draw the Hermitian noise pair ``(A, B)`` injected over a step ``h`` (all modes)."""
    n = grid.n
    z = standard_normals(bitgen, tuple(batch) + (4, n, n))
    z0, z1, z2, z3 = (z[..., i, :, :] for i in range(4))
    var_a, var_b, cov = step_covariances(h, grid.xi_abs())
    la = np.sqrt(var_a)
    lb = cov / la
    lc = np.sqrt(np.maximum(var_b - lb**2, 0.0))

    canon = _canonical_mask(grid)
    zero = np.zeros((n, n), bool)
    zero[0, 0] = True
    s = np.sqrt(weight / 2)
    a_half = np.where(canon, s * la * (z0 + 1j * z1), 0)
    b_half = np.where(canon, s * (lb * (z0 + 1j * z1) + lc * (z2 + 1j * z3)), 0)
    s0 = np.sqrt(weight)
    a = a_half + np.conj(_neg(a_half)) + np.where(zero, s0 * la * z0, 0)
    b = b_half + np.conj(_neg(b_half)) + np.where(zero, s0 * (lb * z0 + lc * z2), 0)
    return a, b


def advance_convolution(state: ConvolutionState, h: float, bitgen, cfg: NoiseConfig | None = None,
                        *, noise: bool = True) -> ConvolutionState:
    """Exact-in-law update of ``(psi_hat, dpsi_hat)`` from ``t`` to ``t + h``.

    ``bitgen`` is a ``numpy.random.PCG64``.  Without ``cfg`` the full
    non-Nyquist lattice is driven with unit amplitude.  ``noise=False`` keeps
    only the free rotation (used to test the isometry).
    """
    if not h > 0:
        raise ValueError("step length must be positive")
    grid = state.grid
    xi = grid.xi_abs()
    c, s_over, minus_xs = free_rotation(h, xi)
    psi = c * state.psi_hat + s_over * state.dpsi_hat
    dpsi = minus_xs * state.psi_hat + c * state.dpsi_hat
    if noise:
        weight = cfg.weight if cfg is not None else 1.0 / grid.L**2
        mask = cfg.retained() if cfg is not None else ~grid.nyquist_line()
        batch = state.psi_hat.shape[:-2]
        a, b = noise_increment(grid, h, weight, bitgen, batch)
        psi = psi + a * mask
        dpsi = dpsi + b * mask
    return ConvolutionState(grid, psi, dpsi, state.t + h)


def counterterm_sigma(cfg: NoiseConfig, t: float) -> float:
    """Exact variance of the discrete ``psi_N(t, x)``: ``weight * sum_retained gamma(t, xi)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    xi = cfg.grid.xi_abs()[cfg.retained()]
    return float(cfg.weight * np.sum(gamma(t, xi)))


def counterterm_sigma_continuum(N: float, t: float, amplitude: float = 1.0) -> float:
    """``(2 pi)^-2 int_{|xi| <= N} gamma(t, xi) dxi`` on R^2 (for comparison)."""
    val, _ = integrate.quad(lambda r: float(gamma(t, r)) * r, 0.0, N, limit=500)
    return amplitude**2 * val / (2 * np.pi)


def hermite(k: int, x, sigma):
    """Hermite polynomial ``H_k(x; sigma)`` for ``k <= 3`` (generating function ``exp(tx - sigma t^2 / 2)``)."""
    if k == 0:
        return np.ones_like(np.asarray(x, dtype=float))
    if k == 1:
        return np.asarray(x, dtype=float)
    if k == 2:
        return x * x - sigma
    if k == 3:
        return x * x * x - 3 * sigma * x
    raise ValueError(f"Hermite polynomials are implemented for k <= 3, got {k}")


@dataclass
class WickBundle:
    """Physical-space ``:psi^l:``, ``l = 1, 2, 3``, with the counterterm used."""

    psi1: np.ndarray
    psi2: np.ndarray
    psi3: np.ndarray
    sigma: float
    t: float

    def power(self, l: int) -> np.ndarray:
        if l == 0:
            return np.ones_like(self.psi1)
        return (self.psi1, self.psi2, self.psi3)[l - 1]


def wick_powers(state: ConvolutionState, cfg: NoiseConfig, sigma: float | None = None) -> WickBundle:
    """Wick powers of ``psi_N`` at ``state.t``.

    ``sigma`` overrides the exact counterterm (used by ablations and fault
    injection); by default it is :func:`counterterm_sigma`.
    """
    grid = state.grid
    psi1 = np.fft.ifft2(state.psi_hat * grid.n**2).real
    if sigma is None:
        sigma = counterterm_sigma(cfg, state.t)
    return WickBundle(psi1, hermite(2, psi1, sigma), hermite(3, psi1, sigma), float(sigma), state.t)


def physical(state: ConvolutionState) -> RealField:
    return to_physical(SpectralField(state.grid, state.psi_hat))


class NoiseSource:
    """One seeded realisation of ``psi_N`` and its Wick powers, queried forward in time.

    Bundles are cached by time, so two solvers sharing a source replay the
    same noise (the cache is append-only and read-only once written).

    ``sigma_scale`` multiplies the counterterm (1 is the exact
    renormalisation; other values exist for fault injection).
    """

    def __init__(self, cfg: NoiseConfig, sigma_scale: float = 1.0):
        self.cfg = cfg
        self.sigma_scale = sigma_scale
        self._bitgen = np.random.PCG64(cfg.seed)
        self._state = ConvolutionState.zero(cfg.grid)
        self._cache: dict[float, WickBundle] = {}

    @staticmethod
    def _key(t: float) -> float:
        return round(float(t), 9)

    @property
    def state(self) -> ConvolutionState:
        return self._state

    def bundle(self, t: float) -> WickBundle:
        key = self._key(t)
        if key in self._cache:
            return self._cache[key]
        if t < self._state.t - 1e-12:
            raise ValueError(f"noise already advanced past t={t}")
        if t > self._state.t + 1e-12:
            self._state = advance_convolution(self._state, t - self._state.t, self._bitgen, self.cfg)
        self._state = replace(self._state, t=float(t))
        sigma = self.sigma_scale * counterterm_sigma(self.cfg, t)
        b = wick_powers(self._state, self.cfg, sigma=sigma)
        self._cache[key] = b
        return b


class WickTransformer(TransformerMixin, BaseEstimator):
    """Wick-order Gaussian samples: ``X -> (H_1, H_2, H_3)(X; sigma)``.

    Parameters
    ----------
    sigma : float or None
        Variance used in the Hermite polynomials.  ``None`` estimates it in
        :meth:`fit` as the empirical mean of ``X**2``.
    max_power : int
        Highest Wick power returned (1 to 3).
    """

    def __init__(self, sigma=None, max_power=3):
        self.sigma = sigma
        self.max_power = max_power

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if not np.all(np.isfinite(X)):
            raise ValueError("samples contain non-finite values")
        if not 1 <= self.max_power <= 3:
            raise ValueError("max_power must be 1, 2 or 3")
        self.sigma_ = float(np.mean(X**2)) if self.sigma is None else float(self.sigma)
        return self

    def transform(self, X):
        if not hasattr(self, "sigma_"):
            raise AttributeError("WickTransformer is not fitted")
        X = np.asarray(X, dtype=float)
        return np.stack([hermite(k, X, self.sigma_) for k in range(1, self.max_power + 1)], axis=-1)
