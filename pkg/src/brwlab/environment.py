"""Random environment on the lattice and its renormalization.

The environment is xi(x) = n * Phi_x with Phi i.i.d. mean zero, variance
one and bounded, so |xi|/n stays uniformly bounded over refinements.  Site
values come from a counter-based generator (Philox keyed by the seed, the
stream position being the flat site index), so draws are reproducible and
independent of iteration order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .lattice import Grid, Field, write_field, read_field
from .spectral import chi_mask, laplacian_symbol, apply_multiplier
from .besov import resonant_product

_TRUNC = 3.0
_TRUNC_STD = float(stats.truncnorm(-_TRUNC, _TRUNC).std())


def dist_bound(dist: str) -> float:
    """Uniform bound on |Phi| for the supported distributions."""
    if dist == "rademacher":
        return 1.0
    if dist == "truncated-gaussian":
        return _TRUNC / _TRUNC_STD
    raise ValueError(f"unknown environment distribution {dist!r}")


@dataclass(eq=False)
class EnvironmentField:
    grid: Grid
    xi: Field
    xi_plus: Field
    xi_minus: Field
    xi_abs: Field
    I_xi: Field
    resonant: Field
    c_n: float
    xi_e: Field
    nu_hat: float
    seed: int
    dist: str

    def with_c_n(self, c_n: float) -> "EnvironmentField":
        """Same environment with a different renormalization constant."""
        return EnvironmentField(
            grid=self.grid, xi=self.xi, xi_plus=self.xi_plus, xi_minus=self.xi_minus,
            xi_abs=self.xi_abs, I_xi=self.I_xi, resonant=self.resonant,
            c_n=float(c_n), xi_e=Field(self.grid, self.xi.values - c_n),
            nu_hat=self.nu_hat, seed=self.seed, dist=self.dist,
        )


def _draw_phi(grid: Grid, dist: str, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    size = (grid.M, grid.M)
    if dist == "rademacher":
        return rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0
    if dist == "truncated-gaussian":
        u = rng.random(size=size)
        lo, hi = stats.norm.cdf(-_TRUNC), stats.norm.cdf(_TRUNC)
        z = stats.norm.ppf(lo + u * (hi - lo))
        return z / _TRUNC_STD
    raise ValueError(f"unknown environment distribution {dist!r}")


def compute_I_xi(xi: Field, r_zero: float = 0.125, r_one: float = 0.25) -> Field:
    """Solve -Laplacian I_xi = F^{-1}(chi F xi) spectrally.

    chi vanishes near frequency zero, so the division by the Laplacian
    symbol never touches the zero mode.
    """
    grid = xi.grid
    chi = chi_mask(grid, r_zero, r_one)
    lam = laplacian_symbol(grid)
    mult = np.zeros_like(lam)
    nz = lam > 0
    mult[nz] = chi[nz] / lam[nz]
    if np.any(chi[~nz] != 0.0):
        raise ValueError("chi does not vanish where the Laplacian symbol does")
    return apply_multiplier(xi, mult)


def sample_environment(grid: Grid, dist: str = "rademacher", seed: int = 0) -> EnvironmentField:
    phi = _draw_phi(grid, dist, seed)
    xi_vals = grid.n * phi
    if np.any(np.abs(phi) > dist_bound(dist) + 1e-12):
        raise AssertionError("environment draw exceeds its declared bound")
    xi = Field(grid, xi_vals)
    xi_plus = Field(grid, np.maximum(xi_vals, 0.0))
    xi_minus = Field(grid, np.maximum(-xi_vals, 0.0))
    xi_abs = Field(grid, np.abs(xi_vals))
    I_xi = compute_I_xi(xi)
    resonant = resonant_product(I_xi, xi)
    c_n = float(np.mean(resonant.values))
    nu_hat = float(np.mean(xi_plus.values) / grid.n)
    return EnvironmentField(
        grid=grid, xi=xi, xi_plus=xi_plus, xi_minus=xi_minus, xi_abs=xi_abs,
        I_xi=I_xi, resonant=resonant, c_n=c_n,
        xi_e=Field(grid, xi_vals - c_n), nu_hat=nu_hat, seed=seed, dist=dist,
    )


def constant_environment(grid: Grid, value: float) -> EnvironmentField:
    """Deterministic constant environment (testing aid); c_n is set to 0."""
    xi_vals = np.full((grid.M, grid.M), float(value))
    xi = Field(grid, xi_vals)
    zeros = Field(grid, np.zeros_like(xi_vals))
    I_xi = compute_I_xi(xi)
    resonant = resonant_product(I_xi, xi)
    return EnvironmentField(
        grid=grid, xi=xi,
        xi_plus=Field(grid, np.maximum(xi_vals, 0.0)),
        xi_minus=Field(grid, np.maximum(-xi_vals, 0.0)),
        xi_abs=Field(grid, np.abs(xi_vals)),
        I_xi=I_xi, resonant=resonant, c_n=0.0,
        xi_e=xi, nu_hat=float(np.mean(np.maximum(xi_vals, 0.0)) / grid.n),
        seed=-1, dist="constant",
    )


def renormalization_constant(env: EnvironmentField, n_ensemble: int = 1) -> float:
    """Spatial (and optionally ensemble) mean of the resonant product.

    With n_ensemble > 1 the estimate averages over independent environment
    draws with seeds derived from env.seed; the returned constant is also
    what `with_c_n` expects.
    """
    means = [float(np.mean(env.resonant.values))]
    for i in range(1, n_ensemble):
        extra = sample_environment(env.grid, env.dist, _derived_seed(env.seed, i))
        means.append(float(np.mean(extra.resonant.values)))
    return float(np.mean(means))


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(index,)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Environment bundle on disk: xi.fld, Ixi.fld, resonant.fld, meta.json
# ---------------------------------------------------------------------------

def write_environment(dirpath, env: EnvironmentField, config_hash: str | None = None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    write_field(os.path.join(dirpath, "xi.fld"), env.xi, kind="xi", seed=env.seed, dist=env.dist)
    write_field(os.path.join(dirpath, "Ixi.fld"), env.I_xi, kind="Ixi", seed=env.seed, dist=env.dist)
    write_field(os.path.join(dirpath, "resonant.fld"), env.resonant, kind="resonant", seed=env.seed, dist=env.dist)
    meta = {"c_n": env.c_n, "nu_hat": env.nu_hat, "seed": env.seed, "dist": env.dist,
            "n": env.grid.n, "L": env.grid.L}
    if config_hash is not None:
        meta["config_hash"] = config_hash
    with open(os.path.join(dirpath, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def read_environment(dirpath) -> EnvironmentField:
    xi, header = read_field(os.path.join(dirpath, "xi.fld"))
    I_xi, _ = read_field(os.path.join(dirpath, "Ixi.fld"))
    resonant, _ = read_field(os.path.join(dirpath, "resonant.fld"))
    with open(os.path.join(dirpath, "meta.json")) as fh:
        meta = json.load(fh)
    grid = xi.grid
    vals = xi.values
    return EnvironmentField(
        grid=grid, xi=xi,
        xi_plus=Field(grid, np.maximum(vals, 0.0)),
        xi_minus=Field(grid, np.maximum(-vals, 0.0)),
        xi_abs=Field(grid, np.abs(vals)),
        I_xi=I_xi, resonant=resonant, c_n=float(meta["c_n"]),
        xi_e=Field(grid, vals - float(meta["c_n"])),
        nu_hat=float(meta["nu_hat"]), seed=meta["seed"], dist=meta["dist"],
    )
