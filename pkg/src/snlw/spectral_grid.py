"""Periodic-box discretisation, Fourier transforms, multipliers and norms.

Normalisation
-------------
A real field ``f`` sampled on the ``n x n`` grid of the box ``[0, L)^2`` is
represented by its Fourier-series coefficients

    c_k = fft2(f)[k] / n**2,    f(x_j) = sum_k c_k exp(i xi_k . x_j),

with ``xi_k = 2 pi k / L`` and ``k`` in ``{-n/2, ..., n/2 - 1}^2`` (numpy FFT
ordering).  With this choice ``sum |c_k|^2 = mean(f**2)`` and the continuum
quadrature norm is ``||f||_{L^2}^2 = L^2 sum |c_k|^2 = dx^2 sum f(x_j)^2``.
Every norm in this module is the grid quadrature of its continuum analogue.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import check_field


@dataclass(frozen=True)
class GridSpec:
    """The periodic box ``[0, L)^2`` sampled at ``n x n`` points."""

    L: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"side length L must be positive, got {self.L}")
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ValueError(f"points per side n must be an even integer >= 4, got {self.n}")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def nyquist(self) -> float:
        """Largest resolved frequency magnitude along an axis, ``pi n / L``."""
        return np.pi * self.n / self.L

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer lattice indices ``(k1, k2)`` in FFT ordering, each ``n x n``."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return np.meshgrid(k, k, indexing="ij")

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        k1, k2 = self.wavenumbers()
        scale = 2 * np.pi / self.L
        return scale * k1, scale * k2

    def xi_abs(self) -> np.ndarray:
        x1, x2 = self.frequencies()
        return np.hypot(x1, x2)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical sample points, centred so the box is ``[-L/2, L/2)^2``."""
        x = (np.arange(self.n) - self.n // 2) * self.dx
        x = np.fft.ifftshift(x)
        return np.meshgrid(x, x, indexing="ij")

    def radius(self) -> np.ndarray:
        """Distance of each sample point from the box centre (the origin)."""
        x1, x2 = self.coordinates()
        return np.hypot(x1, x2)

    def nyquist_line(self) -> np.ndarray:
        """Mask of modes with a component equal to ``-n/2`` (no distinct conjugate)."""
        k1, k2 = self.wavenumbers()
        h = -(self.n // 2)
        return (k1 == h) | (k2 == h)


@dataclass
class RealField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = check_field(self.values, self.grid.n, dtype=float)


@dataclass
class SpectralField:
    grid: GridSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[-2:] != (self.grid.n, self.grid.n):
            raise ValueError(
                f"coefficient array has shape {self.coeffs.shape}, expected (..., {self.grid.n}, {self.grid.n})"
            )


def hermitian_defect(coeffs: np.ndarray) -> float:
    """Max of ``|c(-k) - conj(c(k))|`` over the lattice, relative to max ``|c|``."""
    flipped = np.roll(np.flip(coeffs, axis=(-2, -1)), 1, axis=(-2, -1))
    scale = np.max(np.abs(coeffs), initial=0.0)
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(flipped - np.conj(coeffs))) / scale)


def symmetrize(F: SpectralField) -> SpectralField:
    """Project onto coefficients of real fields: ``(c(k) + conj(c(-k))) / 2``."""
    c = F.coeffs
    flipped = np.roll(np.flip(c, axis=(-2, -1)), 1, axis=(-2, -1))
    return SpectralField(F.grid, 0.5 * (c + np.conj(flipped)))


def to_spectral(f: RealField) -> SpectralField:
    n = f.grid.n
    return SpectralField(f.grid, np.fft.fft2(f.values) / n**2)


def to_physical(F: SpectralField, *, check: bool = True) -> RealField:
    """Inverse of :func:`to_spectral`.

    Raises ``ValueError`` on non-finite coefficients, and (when ``check``) on
    coefficients that are not Hermitian to 1e-10; call :func:`symmetrize` first
    in that case.
    """
    if not np.all(np.isfinite(F.coeffs)):
        raise ValueError("non-finite Fourier coefficients")
    if check:
        defect = hermitian_defect(F.coeffs)
        if defect > 1e-10:
            raise ValueError(f"coefficients are not Hermitian (defect {defect:.2e}); symmetrize first")
    n = F.grid.n
    return RealField(F.grid, np.fft.ifft2(F.coeffs * n**2).real)


def multiplier_on_lattice(grid: GridSpec, m: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Evaluate a radial or vector multiplier on the lattice.

    ``m`` receives the array of ``|xi|`` values; it must return an array of the
    same shape (or a scalar).
    """
    values = np.broadcast_to(np.asarray(m(grid.xi_abs()), dtype=float), (grid.n, grid.n))
    if not np.all(np.isfinite(values)):
        raise ValueError("multiplier takes non-finite values on the lattice")
    return values


def apply_fourier_multiplier(F: SpectralField, m) -> SpectralField:
    """Multiply each coefficient by ``m(|xi(k)|)``.

    ``m`` may be a callable of ``|xi|`` or a precomputed ``n x n`` array.
    """
    if callable(m):
        values = multiplier_on_lattice(F.grid, m)
    else:
        values = np.asarray(m, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("multiplier takes non-finite values on the lattice")
    return SpectralField(F.grid, F.coeffs * values)


def bessel(grid: GridSpec, sigma: float) -> np.ndarray:
    """``<xi>^sigma = (1 + |xi|^2)^(sigma/2)`` on the lattice."""
    return (1.0 + grid.xi_abs() ** 2) ** (0.5 * sigma)


def lp_norm(f: RealField, p: float = 2.0) -> float:
    """Quadrature ``L^p`` norm ``(sum |f|^p dx^2)^(1/p)``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    dx2 = f.grid.dx**2
    a = np.abs(f.values)
    if np.isinf(p):
        return float(a.max())
    # scale out the max so large p does not overflow
    top = a.max()
    if top == 0:
        return 0.0
    return float(top * (np.sum((a / top) ** p) * dx2) ** (1.0 / p))


def norm_hs(f: RealField | SpectralField, sigma: float) -> float:
    """Sobolev norm ``(L^2 sum <xi>^(2 sigma) |c_k|^2)^(1/2)``."""
    F = f if isinstance(f, SpectralField) else to_spectral(f)
    weight = bessel(F.grid, 2 * sigma)
    a = np.abs(F.coeffs)
    top = a.max()
    if top == 0:
        return 0.0
    # scale out the max so tiny or huge coefficients do not under/overflow when squared
    return float(F.grid.L * top * np.sqrt(np.sum(weight * (a / top) ** 2)))


def norm_w_sigma_p(f: RealField, sigma: float, p: float) -> float:
    """``||<nabla>^sigma f||_{L^p}``: Bessel multiplier, then quadrature ``L^p``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if sigma == 0:
        return lp_norm(f, p)
    g = to_physical(apply_fourier_multiplier(to_spectral(f), bessel(f.grid, sigma)), check=False)
    return lp_norm(g, p)


def dealias_mask(grid: GridSpec) -> np.ndarray:
    """True where ``max(|k1|, |k2|) <= n/3`` (2/3 rule)."""
    k1, k2 = grid.wavenumbers()
    return np.maximum(np.abs(k1), np.abs(k2)) <= grid.n / 3


def dealias_cubic(F: SpectralField) -> SpectralField:
    return SpectralField(F.grid, np.where(dealias_mask(F.grid), F.coeffs, 0))


def resample(values: np.ndarray, n_out: int) -> np.ndarray:
    """Trigonometric interpolation of grid samples onto an ``n_out`` grid.

    Zero-pads (or truncates) the spectrum, dropping the Nyquist line of the
    coarser grid so the result stays real.
    """
    n_in = values.shape[-1]
    if n_out == n_in:
        return np.array(values, dtype=float)
    c = np.fft.fft2(values) / n_in**2
    out = np.zeros(values.shape[:-2] + (n_out, n_out), dtype=complex)
    h = min(n_in, n_out) // 2
    idx = np.r_[0:h, -h + 1:0]
    out[..., idx[:, None], idx[None, :]] = c[..., idx[:, None], idx[None, :]]
    return np.fft.ifft2(out * n_out**2).real


class BesselPotential(TransformerMixin, BaseEstimator):
    """Apply ``<nabla>^sigma`` to batches of periodic fields.

    Parameters
    ----------
    sigma : float
        Order of the Bessel potential (negative orders smooth).
    L : float
        Side length of the periodic box the samples live on.
    """

    def __init__(self, sigma=0.0, L=2 * np.pi):
        self.sigma = sigma
        self.L = L

    def fit(self, X, y=None):
        X = check_field(X, dtype=float)
        self.n_ = X.shape[-1]
        self.grid_ = GridSpec(self.L, self.n_)
        return self

    def transform(self, X):
        if not hasattr(self, "grid_"):
            raise AttributeError("BesselPotential is not fitted")
        X = check_field(X, self.n_, dtype=float)
        c = np.fft.fft2(X) * bessel(self.grid_, self.sigma)
        return np.fft.ifft2(c).real
