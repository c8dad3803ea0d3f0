"""Deterministic evolution solvers on the lattice.

All schemes compose exact sub-flows:

* heat flow: either a single spectral multiplier exp(-lambda(k) t) (used by
  `heat_solve` and `pam_solve`) or a strictly nonnegative circulant kernel
  built from scaled Bessel functions (used inside the positivity-preserving
  solvers) -- both realize exp(t * Laplacian) exactly,
* potential flow: pointwise multiplication by exp(dt * V),
* nonlinear decay flow for dw/dt = -B w^{1+beta}:
  w -> w (1 + beta B w^beta dt)^{-1/beta}, the closed-form solution.

Strang (palindromic) composition of exact sub-flows gives second order in
dt; the positivity-preserving solvers never produce a negative value from
nonnegative data because every sub-step is a nonnegative map.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit
from scipy.special import ive

from .lattice import Grid, Field
from .spectral import laplacian_symbol

_OVERFLOW_LIMIT = 1e300


@dataclass(eq=False)
class Trajectory:
    grid: Grid
    times: np.ndarray
    states: list[np.ndarray]
    meta: dict = dc_field(default_factory=dict)

    def final(self) -> Field:
        return Field(self.grid, self.states[-1])

    def state_at(self, t: float) -> Field:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"time {t} not stored (closest {self.times[i]})")
        return Field(self.grid, self.states[i])


def _resolve_steps(T: float, dt: float) -> tuple[int, float]:
    steps = max(int(round(T / dt)), 1)
    return steps, T / steps


def heat_solve(grid: Grid, phi: Field, t: float) -> Field:
    """Exact spectral heat semigroup exp(t * Laplacian) phi."""
    if t < 0:
        raise ValueError("t must be >= 0")
    mult = np.exp(-laplacian_symbol(grid) * t)
    out = np.fft.ifft2(np.fft.fft2(phi.values) * mult).real
    return Field(grid, out)


def heat_kernel_matrix(grid: Grid, dt: float) -> np.ndarray:
    """Circulant 1-d transition matrix of the axis walk over time dt.

    Entry (i, j) = P[walk at i | started at j]: exponentially scaled Bessel
    values wrapped around the circle of M sites.  All entries are >= 0 and
    each column sums to 1 (renormalized against roundoff), so applying it
    along both axes is an exact, positivity-preserving heat step.
    """
    M = grid.M
    a = 2.0 * grid.n**2 * dt
    # displacement z = -M..M covered by images z + m*M until negligible
    z = np.arange(M)
    col = np.zeros(M)
    for image in range(-4, 5):
        col += ive(z + image * M, a)
    col /= col.sum()
    idx = (np.arange(M)[:, None] - np.arange(M)[None, :]) % M
    return col[idx]


def _heat_step_kernel(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return kernel @ values @ kernel.T


def _check_overflow(values: np.ndarray, context: str) -> None:
    m = np.max(np.abs(values))
    if not np.isfinite(m) or m > _OVERFLOW_LIMIT:
        raise OverflowError(
            f"{context}: state magnitude {m:.3e} exceeded {_OVERFLOW_LIMIT:.0e}; "
            "the Anderson evolution grows exponentially, shorten the horizon")


def _check_dt_guard(dt: float, potential: np.ndarray) -> None:
    m = float(np.max(np.abs(potential)))
    if dt * m > 0.5:
        raise ValueError(f"dt * max|potential| = {dt * m:.3f} > 0.5; reduce dt for splitting accuracy")


def _collect(times, states, store_every, step, steps, t, vals):
    if store_every and (step % store_every == 0 or step == steps):
        times.append(t)
        states.append(vals.copy())


def pam_solve(env, phi: Field, T: float, dt: float, store_every: int = 1) -> Trajectory:
    """Anderson semigroup with the renormalized potential xi_e = xi - c_n.

    Strang splitting: half potential, spectral heat, half potential.
    store_every=0 keeps only the initial and final states.
    """
    grid = env.grid
    pot = env.xi_e.values
    _check_dt_guard(dt, pot)
    steps, dt = _resolve_steps(T, dt)
    half = np.exp(0.5 * dt * pot)
    heat_mult = np.exp(-laplacian_symbol(grid) * dt)
    vals = phi.values.copy()
    times, states = [0.0], [vals.copy()]
    for step in range(1, steps + 1):
        vals = half * vals
        vals = np.fft.ifft2(np.fft.fft2(vals) * heat_mult).real
        vals = half * vals
        _check_overflow(vals, "pam_solve")
        _collect(times, states, store_every, step, steps, step * dt, vals)
    if len(states) == 1 or times[-1] < steps * dt:
        times.append(steps * dt)
        states.append(vals.copy())
    return Trajectory(grid, np.asarray(times), states, meta={"scheme": "strang-pam", "dt": dt})


def _potential_series(pot_ts, steps: int, grid: Grid):
    """Normalize a potential/forcing time series to per-step arrays."""
    if pot_ts is None:
        return None
    if isinstance(pot_ts, Field):
        return [pot_ts.values] * steps
    arrs = [p.values if isinstance(p, Field) else np.asarray(p) for p in pot_ts]
    if len(arrs) == 1:
        return arrs * steps
    if len(arrs) < steps:
        raise ValueError(f"time series has {len(arrs)} entries, need >= {steps} steps")
    return arrs[:steps]


def variant_pam_solve(env, phi: Field, potential=None, forcing=None,
                      T: float = 1.0, dt: float = 1e-3, store_every: int = 1) -> Trajectory:
    """Damped Anderson flow d w = (H - pot_t) w + g_t with pot_t, g_t >= 0.

    Without forcing the step is half-potential, kernel heat, half-potential
    (same composition as pam_solve, with the positive Bessel kernel in place
    of the spectral multiplier); with forcing the heat step splits in two and
    dt * g_t is injected at mid-step.  Nonnegative inputs stay nonnegative
    exactly because every sub-step is a nonnegative map.
    """
    grid = env.grid
    if np.any(phi.values < 0):
        raise ValueError("initial data must be nonnegative")
    steps, dt = _resolve_steps(T, dt)
    pots = _potential_series(potential, steps, grid)
    gs = _potential_series(forcing, steps, grid)
    if pots is not None and any(np.any(p < 0) for p in pots):
        raise ValueError("potential time series must be nonnegative")
    if gs is not None and any(np.any(g < 0) for g in gs):
        raise ValueError("forcing time series must be nonnegative")
    base = env.xi_e.values
    kernel = heat_kernel_matrix(grid, dt)
    kernel_half = heat_kernel_matrix(grid, dt / 2.0) if gs is not None else None
    vals = phi.values.copy()
    times, states = [0.0], [vals.copy()]
    for step in range(1, steps + 1):
        pot = base if pots is None else base - pots[step - 1]
        _check_dt_guard(dt, pot)
        half = np.exp(0.5 * dt * pot)
        vals = half * vals
        if gs is None:
            vals = _heat_step_kernel(vals, kernel)
        else:
            vals = _heat_step_kernel(vals, kernel_half)
            vals = vals + dt * gs[step - 1]
            vals = _heat_step_kernel(vals, kernel_half)
        vals = half * vals
        _check_overflow(vals, "variant_pam_solve")
        _collect(times, states, store_every, step, steps, step * dt, vals)
    if len(states) == 1 or times[-1] < steps * dt:
        times.append(steps * dt)
        states.append(vals.copy())
    traj = Trajectory(grid, np.asarray(times), states,
                      meta={"scheme": "strang-variant", "dt": dt})
    if min(float(s.min()) for s in traj.states) < 0:
        raise AssertionError("variant solver produced a negative value; scheme bug")
    return traj


def nonlinear_decay_step(vals: np.ndarray, B: np.ndarray, beta: float, dt: float) -> np.ndarray:
    """Closed-form flow of dw/dt = -B w^{1+beta} over one step (w >= 0)."""
    return vals * (1.0 + beta * B * vals**beta * dt) ** (-1.0 / beta)


def nonlinear_solve(env, phi: Field, B: Field, beta: float, T: float, dt: float,
                    store_every: int = 1, use_raw_xi: bool = False) -> Trajectory:
    """Nonlinear dual equation d w = (Laplacian + potential) w - B w^{1+beta}.

    Palindromic composition per step: half potential, half kernel heat,
    closed-form nonlinear decay, half kernel heat, half potential.  With
    B = 0 this reduces to pam_solve's composition.  The potential is xi_e
    by default; use_raw_xi=True selects the unrenormalized xi, the form
    under which the fixed-refinement duality identity holds.  States stay
    nonnegative exactly.
    """
    grid = env.grid
    if np.any(phi.values < 0):
        raise ValueError("initial data must be nonnegative")
    if np.any(B.values < 0):
        raise ValueError("nonlinear coefficient B must be nonnegative")
    if not (0.0 < beta < 1.0):
        raise ValueError("beta must lie in (0, 1)")
    pot = env.xi.values if use_raw_xi else env.xi_e.values
    steps, dt = _resolve_steps(T, dt)
    _check_dt_guard(dt, pot)
    kernel_half = heat_kernel_matrix(grid, dt / 2.0)
    half_pot = np.exp(0.5 * dt * pot)
    Bv = B.values
    vals = phi.values.copy()
    times, states = [0.0], [vals.copy()]
    for step in range(1, steps + 1):
        vals = half_pot * vals
        vals = _heat_step_kernel(vals, kernel_half)
        vals = nonlinear_decay_step(vals, Bv, beta, dt)
        vals = _heat_step_kernel(vals, kernel_half)
        vals = half_pot * vals
        _check_overflow(vals, "nonlinear_solve")
        if np.min(vals) < 0:
            raise AssertionError("nonlinear solver produced a negative value; scheme bug")
        _collect(times, states, store_every, step, steps, step * dt, vals)
    if len(states) == 1 or times[-1] < steps * dt:
        times.append(steps * dt)
        states.append(vals.copy())
    return Trajectory(grid, np.asarray(times), states,
                      meta={"scheme": "strang-nonlinear", "dt": dt})


def dual_initial(phi: Field, eps: float) -> Field:
    """(1 - e^{-eps phi}) / eps, the initial datum of the dual equation."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return Field(phi.grid, -np.expm1(-eps * phi.values) / eps)


# ---------------------------------------------------------------------------
# Feynman-Kac cross-checker: continuous-time walk paths with exact
# between-jump weight accumulation.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _fk_paths(seed, n_paths, x0, M, n, T, pot_slots, slot_dt, phi_flat, out):
    """Path weights e^{int V(X_s) ds} phi(X_T) for walks started at x0.

    pot_slots has shape (S, M*M); the potential is constant on time slots of
    length slot_dt (a single row means a static potential).  The exponent is
    accumulated exactly along each piecewise-constant stretch.
    """
    np.random.seed(seed)
    jump_rate = 4.0 * n * n
    n_slots = pot_slots.shape[0]
    for p in range(n_paths):
        x = x0
        t = 0.0
        a = 0.0
        while t < T:
            tau = np.random.exponential(1.0 / jump_rate)
            seg_end = t + tau
            if seg_end > T:
                seg_end = T
            # accumulate potential over [t, seg_end), crossing slot edges
            if n_slots == 1:
                a += pot_slots[0, x] * (seg_end - t)
            else:
                s = t
                while s < seg_end - 1e-15:
                    idx = int(s / slot_dt)
                    if idx >= n_slots:
                        idx = n_slots - 1
                    edge = (idx + 1) * slot_dt
                    e = seg_end if seg_end < edge else edge
                    a += pot_slots[idx, x] * (e - s)
                    s = e
            t = t + tau
            if t >= T:
                break
            d = np.random.randint(0, 4)
            ix = x // M
            iy = x % M
            if d == 0:
                ix += 1
            elif d == 1:
                ix -= 1
            elif d == 2:
                iy += 1
            else:
                iy -= 1
            x = (((ix % M) + M) % M) * M + ((iy % M) + M) % M
        out[p] = np.exp(a) * phi_flat[x]


def feynman_kac_estimate(env, phi: Field, probe_sites, T: float, n_paths: int, seed: int,
                         potential=None, dt: float = 1e-3, use_raw_xi: bool = False) -> dict:
    """Monte Carlo estimate of the damped Anderson solution at probe sites.

    Walk paths jump at rate 4 n^2 to uniform neighbours; the weight
    e^{int (xi_e - pot_{T-s})(X_s) ds} phi(X_T) is averaged per probe site.
    potential, if given, is a time series sampled on slots of length dt
    (indexed by forward solver time, i.e. pot_slots[j] covers solver times
    [j dt, (j+1) dt); the path integral uses pot at time T - s).
    Returns {"sites", "mean", "stderr", "flagged"}.
    """
    if not probe_sites:
        raise ValueError("need at least one probe site")
    if n_paths < 1000:
        raise ValueError("n_paths must be >= 1e3 for a usable estimate")
    grid = env.grid
    M = grid.M
    base = env.xi.values if use_raw_xi else env.xi_e.values
    if potential is None:
        pot_slots = base.reshape(1, -1)
        slot_dt = T
    else:
        steps, slot_dt = _resolve_steps(T, dt)
        series = _potential_series(potential, steps, grid)
        # path time s corresponds to solver time T - s
        pot_slots = np.stack([(base - series[steps - 1 - j]).reshape(-1) for j in range(steps)])
    means, errs = [], []
    keys = np.random.SeedSequence(seed).generate_state(len(probe_sites))
    flagged = False
    for i, site in enumerate(probe_sites):
        ix, iy = site
        x0 = int(ix) * M + int(iy)
        out = np.empty(n_paths)
        _fk_paths(int(keys[i] % (2**31 - 1)), n_paths, x0, M, grid.n, T,
                  pot_slots, slot_dt, phi.flat(), out)
        m = float(np.mean(out))
        se = float(np.std(out, ddof=1) / np.sqrt(n_paths))
        if abs(m) > 0 and se > 10 * abs(m):
            flagged = True
        means.append(m)
        errs.append(se)
    return {"sites": list(probe_sites), "mean": np.asarray(means),
            "stderr": np.asarray(errs), "flagged": flagged}
