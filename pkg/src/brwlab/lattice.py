"""Periodic 2-d lattice, grid functions and their file format.

The box is [-L/2, L/2)^2 with spacing 1/n, so there are (L*n)^2 sites.
Index axes are (ix, iy), row-major; flat index = ix * M + iy with M = L*n.
Physical coordinate of index i along an axis is (i - M//2) / n.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Periodic square lattice with M = L*n sites per axis at spacing 1/n."""

    n: int
    L: float
    M: int

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def n_sites(self) -> int:
        return self.M * self.M

    def axis_coords(self) -> np.ndarray:
        """Physical coordinates along one axis, in [-L/2, L/2)."""
        return (np.arange(self.M) - self.M // 2) / self.n

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (x, y) of physical coordinates, each of shape (M, M)."""
        c = self.axis_coords()
        return np.meshgrid(c, c, indexing="ij")

    def index_to_coord(self, ix: int, iy: int) -> tuple[float, float]:
        return ((ix - self.M // 2) / self.n, (iy - self.M // 2) / self.n)

    def coord_to_index(self, x: float, y: float) -> tuple[int, int]:
        ix = int(round(x * self.n)) + self.M // 2
        iy = int(round(y * self.n)) + self.M // 2
        if not (0 <= ix < self.M and 0 <= iy < self.M):
            raise ValueError(f"coordinate ({x}, {y}) outside the box")
        return ix, iy

    def radius(self) -> np.ndarray:
        """|x| at every site, shape (M, M)."""
        x, y = self.coords()
        return np.hypot(x, y)


def make_grid(n: int, L: float) -> Grid:
    """Build the periodic lattice; L*n must be an even integer >= 4."""
    if n < 1 or int(n) != n:
        raise ValueError(f"refinement n must be a positive integer, got {n}")
    Mf = L * n
    M = int(round(Mf))
    if abs(Mf - M) > 1e-9:
        raise ValueError(f"L*n = {Mf} is not an integer")
    if M < 4 or M % 2 != 0:
        raise ValueError(f"L*n = {M} must be even and >= 4 so Fourier modes pair up")
    return Grid(n=int(n), L=float(L), M=M)


@dataclass(eq=False)
class Field:
    """Real scalar per lattice site; values has shape (M, M)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.M, self.grid.M):
            raise ValueError(f"values shape {self.values.shape} != grid {(self.grid.M, self.grid.M)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def constant_field(grid: Grid, value: float) -> Field:
    return Field(grid, np.full((grid.M, grid.M), value, dtype=np.float64))


def bump_field(grid: Grid, center=(0.0, 0.0), width: float = 1.0, height: float = 1.0) -> Field:
    """Smooth compactly supported bump: h * exp(1 - 1/(1 - r^2)) for r < 1."""
    x, y = grid.coords()
    r2 = ((x - center[0]) / width) ** 2 + ((y - center[1]) / width) ** 2
    vals = np.zeros_like(x)
    inside = r2 < 1.0
    vals[inside] = height * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return Field(grid, vals)


def square_measure(grid: Grid, center=(0.0, 0.0), side: float = 1.0, mass: float = 1.0) -> np.ndarray:
    """Site masses of a uniform measure on an axis-aligned square (total = mass).

    Site x receives the measure of its Voronoi cell, so the square of side s
    covers round(s*n)^2 sites, each carrying mass / count.
    """
    x, y = grid.coords()
    half = side / 2.0
    # Site belongs iff its center lies in the half-open square.
    inside = (x >= center[0] - half - 1e-12) & (x < center[0] + half - 1e-12) \
        & (y >= center[1] - half - 1e-12) & (y < center[1] + half - 1e-12)
    count = int(inside.sum())
    if count == 0:
        raise ValueError("square too small: no site center inside")
    out = np.zeros_like(x)
    out[inside] = mass / count
    return out


def point_measure(grid: Grid, center=(0.0, 0.0), mass: float = 1.0) -> np.ndarray:
    ix, iy = grid.coord_to_index(*center)
    out = np.zeros((grid.M, grid.M))
    out[ix, iy] = mass
    return out


# ---------------------------------------------------------------------------
# .fld file format: one JSON header line + little-endian float64 payload.
# ---------------------------------------------------------------------------

def write_field(path, field: Field, kind: str = "field", seed=None, dist=None) -> None:
    header = {"n": field.grid.n, "L": field.grid.L, "kind": kind, "seed": seed, "dist": dist}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(field.values.astype("<f8").tobytes())


def read_field(path) -> tuple[Field, dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        payload = fh.read()
    grid = make_grid(header["n"], header["L"])
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.M, grid.M)
    return Field(grid, values.copy()), header
