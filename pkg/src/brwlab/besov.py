"""Littlewood-Paley blocks, paraproducts and weighted Besov norms.

Block j of f is F^{-1}(rho_j F f) for the dyadic partition of unity built in
`spectral.lp_masks`; the blocks sum back to f exactly because the top block
is defined as the complement of everything below it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Field
from .spectral import lp_masks


@dataclass(frozen=True)
class WeightSpec:
    """Spatial weight: polynomial (1+|x|)^a or exponential e^{l |x|^sigma}."""

    kind: str = "polynomial"  # polynomial | exponential
    a: float = 0.0
    l: float = 0.0
    sigma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("polynomial", "exponential"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "polynomial" and self.a < 0:
            raise ValueError("polynomial exponent a must be >= 0")
        if not (0.0 < self.sigma < 1.0):
            raise ValueError("sigma must lie in (0, 1)")

    def evaluate(self, grid) -> np.ndarray:
        r = grid.radius()
        if self.kind == "polynomial":
            return (1.0 + r) ** self.a
        return np.exp(self.l * r**self.sigma)


def lp_blocks(field: Field, masks: list[np.ndarray] | None = None) -> list[Field]:
    """Littlewood-Paley blocks [block_-1, ..., block_{j_n}] of a field."""
    if masks is None:
        masks = lp_masks(field.grid)
    total = sum(masks)
    if np.max(np.abs(total - 1.0)) > 1e-12:
        raise ValueError("frequency masks do not sum to 1 on the grid")
    spectrum = np.fft.fft2(field.values)
    return [Field(field.grid, np.fft.ifft2(m * spectrum).real) for m in masks]


def paraproduct(f: Field, g: Field) -> tuple[Field, Field, Field]:
    """Decompose f*g = less + resonant + greater by frequency comparison.

    less collects pairs with the f-block at least two below the g-block,
    resonant the pairs at distance <= 1, greater the mirror image; the three
    parts sum to the pointwise product exactly.
    """
    if f.grid != g.grid:
        raise ValueError("paraproduct requires both fields on the same grid")
    fb = [b.values for b in lp_blocks(f)]
    gb = [b.values for b in lp_blocks(g)]
    J = len(fb)  # blocks -1 .. J-2

    less = np.zeros_like(f.values)
    greater = np.zeros_like(f.values)
    resonant = np.zeros_like(f.values)

    # cum_f[j] = sum of f-blocks with index <= j - 2 (list offset: block -1 is fb[0])
    cum = np.zeros_like(f.values)
    cum_f = []
    for idx in range(J):
        cum_f.append(cum.copy())
        cum = cum + fb[idx]
    cum_g = []
    cum = np.zeros_like(f.values)
    for idx in range(J):
        cum_g.append(cum.copy())
        cum = cum + gb[idx]

    for idx in range(2, J):
        less += cum_f[idx - 1] * gb[idx]
        greater += cum_g[idx - 1] * fb[idx]

    # Accumulate the resonant part from expressions that are invariant under
    # swapping f and g, in a fixed order, so resonant(f,g) == resonant(g,f)
    # bit for bit.
    for idx in range(J):
        resonant += fb[idx] * gb[idx]
    for idx in range(J - 1):
        resonant += fb[idx] * gb[idx + 1] + fb[idx + 1] * gb[idx]

    return Field(f.grid, less), Field(f.grid, resonant), Field(f.grid, greater)


def resonant_product(f: Field, g: Field) -> Field:
    return paraproduct(f, g)[1]


def besov_norm(field: Field, alpha: float, p: float, q: float, weight: WeightSpec | None = None) -> float:
    """Weighted Besov norm || (2^{j alpha} ||w^{-1} block_j||_{L^p})_j ||_{l^q}.

    L^p uses the lattice measure n^{-2} per site so norms are comparable
    across refinements.
    """
    if not (p >= 1 and q >= 1):
        raise ValueError("p and q must lie in [1, inf]")
    grid = field.grid
    w = weight.evaluate(grid) if weight is not None else 1.0
    blocks = lp_blocks(field)
    per_block = []
    for j, b in enumerate(blocks, start=-1):
        v = np.abs(b.values) / w
        if np.isinf(p):
            lp = float(np.max(v))
        else:
            lp = float((np.sum(v**p) / grid.n**2) ** (1.0 / p))
        per_block.append(2.0 ** (j * alpha) * lp)
    arr = np.asarray(per_block)
    if np.isinf(q):
        return float(np.max(arr))
    return float(np.sum(arr**q) ** (1.0 / q))
