"""Fourier multipliers on the periodic lattice and smooth frequency cutoffs.

Frequencies live on the torus [-n/2, n/2)^2 with spacing 1/L; the discrete
Laplacian n^2 * sum_{y~x} (f(y) - f(x)) acts on the plane wave e^{2 pi i k.x}
as multiplication by -4 n^2 (sin^2(pi k1/n) + sin^2(pi k2/n)).
"""

from __future__ import annotations

import numpy as np

from .lattice import Grid, Field


def freq_axis(grid: Grid) -> np.ndarray:
    """Fourier frequencies along one axis (cycles per physical unit)."""
    return np.fft.fftfreq(grid.M, d=grid.spacing)


def freq_radius(grid: Grid) -> np.ndarray:
    k = freq_axis(grid)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return np.hypot(kx, ky)


def laplacian_symbol(grid: Grid) -> np.ndarray:
    """lambda(k) = 4 n^2 (sin^2(pi k1/n) + sin^2(pi k2/n)), the symbol of -Laplacian."""
    k = freq_axis(grid)
    s = 4.0 * grid.n**2 * np.sin(np.pi * k / grid.n) ** 2
    return s[:, None] + s[None, :]


def apply_multiplier(field: Field, mult: np.ndarray) -> Field:
    """Real-space result of F^{-1}[ mult * F field ]."""
    out = np.fft.ifft2(np.fft.fft2(field.values) * mult)
    return Field(field.grid, out.real)


def apply_laplacian(field: Field) -> Field:
    """Discrete Laplacian applied in real space (5-point stencil with wrap)."""
    v = field.values
    n2 = field.grid.n**2
    out = n2 * (np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1) + np.roll(v, -1, 1) - 4 * v)
    return Field(field.grid, out)


def fourier_mode(grid: Grid, mx: int, my: int) -> Field:
    """Real plane wave cos(2 pi k.x) with k = (mx, my)/L, an eigenvector of the Laplacian."""
    x, y = grid.coords()
    k1, k2 = mx / grid.L, my / grid.L
    return Field(grid, np.cos(2 * np.pi * (k1 * x + k2 * y)))


# ---------------------------------------------------------------------------
# Smooth radial cutoffs built from the standard C-infinity plateau function.
# ---------------------------------------------------------------------------

def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity monotone step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return a / (a + b)


def radial_plateau(r: np.ndarray, r_inner: float, r_outer: float) -> np.ndarray:
    """1 for r <= r_inner, 0 for r >= r_outer, smooth monotone between."""
    return 1.0 - _smooth_step((r - r_inner) / (r_outer - r_inner))


def chi_mask(grid: Grid, r_zero: float = 0.125, r_one: float = 0.25) -> np.ndarray:
    """High-pass cutoff: 0 for |k| <= r_zero, 1 for |k| >= r_one, smooth ramp between.

    Kills the zero mode (and any mode inside r_zero), so dividing by the
    Laplacian symbol is well defined.
    """
    if r_zero <= 0 or r_one <= r_zero:
        raise ValueError("chi must vanish on a neighborhood of 0: need 0 < r_zero < r_one")
    return 1.0 - radial_plateau(freq_radius(grid), r_zero, r_one)


# ---------------------------------------------------------------------------
# Dyadic partition of unity on the frequency torus.
#
# psi(r) = plateau with psi = 1 for r <= 0.375, psi = 0 for r >= 0.75.
# Block -1 is psi(|k|); block j >= 0 is psi(2^{-(j+1)}|k|) - psi(2^{-j}|k|),
# supported in the annulus [0.375, 1.5] * 2^j, so blocks two apart are
# disjoint.  The top index j_n makes the cumulative bump below it supported
# in B(0, 0.75 * 2^{j_n}) ~ B(0, n/2 * 0.75); the top block is defined as
# 1 minus everything below, which makes the family sum to 1 exactly.
# ---------------------------------------------------------------------------

_PART_INNER = 0.375
_PART_OUTER = 0.75


def top_block_index(grid: Grid) -> int:
    jn = int(np.ceil(np.log2(max(grid.n / 2.0, 1.0))))
    return max(jn, 0)


def lp_masks(grid: Grid) -> list[np.ndarray]:
    """Frequency masks [rho_-1, rho_0, ..., rho_{j_n}] summing to 1 exactly."""
    r = freq_radius(grid)
    jn = top_block_index(grid)
    psi_prev = radial_plateau(r, _PART_INNER, _PART_OUTER)  # cumulative through block -1
    masks = [psi_prev]
    for j in range(0, jn):
        psi_next = radial_plateau(r / 2.0 ** (j + 1), _PART_INNER, _PART_OUTER)
        masks.append(psi_next - psi_prev)
        psi_prev = psi_next
    masks.append(1.0 - psi_prev)  # top block: complement, exact partition
    return masks
