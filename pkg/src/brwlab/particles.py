"""Exact event-driven simulation of the branching random walk.

Each particle at site x carries total event rate 4 n^2 + a(x), where a(x)
is the branching rate (|xi(x)|, or (1+c)|xi(x)| for the mixed system).  A
Fenwick tree over particle slots holds the per-particle rates, so the next
event time is exponential with the summed rate, the acting particle is
selected proportionally to its rate, and the event is a jump to a uniform
neighbour with probability 4 n^2 / rate, otherwise a branching whose
offspring count is drawn from the site mechanism.  Everything runs inside
numba; randomness comes from a counter-based splitmix64 stream keyed per
replica, so results do not depend on scheduling or iteration order.

Positions are tracked twice: wrapped (site index, drives rates and test
functions) and unwrapped (lineage displacement accumulator, drives the
support-radius diagnostic).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit

from .lattice import Grid, Field
from .offspring import OffspringLaw, _sample_k

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

STATUS_OK = 0
STATUS_GROW = 1


@njit(cache=True, inline="always")
def _u01(key, cnt):
    z = key + cnt * _GOLDEN
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    z = z ^ (z >> _U64(31))
    return float(z >> _U64(11)) * _INV53


@njit(cache=True)
def _poisson_knuth(key, cnt, lam):
    """Exact Poisson draw; splits large intensities to avoid exp underflow."""
    total = 0
    remaining = lam
    while remaining > 0.0:
        chunk = remaining if remaining <= 500.0 else 500.0
        remaining -= chunk
        limit = np.exp(-chunk)
        prod = 1.0
        k = -1
        while prod > limit:
            cnt += _U64(1)
            prod *= _u01(key, cnt)
            k += 1
        total += k
    return total, cnt


@njit(cache=True, inline="always")
def _fw_update(bit, size, i, delta):
    j = i + 1
    while j <= size:
        bit[j] += delta
        j += j & (-j)


@njit(cache=True, inline="always")
def _fw_select(bit, size, target):
    """Largest slot s with prefix-sum over [0, s) < target."""
    pos = 0
    rem = target
    mask = size
    while mask > 0:
        npos = pos + mask
        if npos <= size and bit[npos] < rem:
            pos = npos
            rem -= bit[npos]
        mask >>= 1
    return pos


@njit(cache=True)
def _poisson_fill(key, cnt, intensity, pos, ux, uy, cap, M):
    """Poisson(intensity[site]) particles per site; returns (count, cnt) or (-1, cnt)."""
    count = 0
    for site in range(intensity.shape[0]):
        lam = intensity[site]
        if lam <= 0.0:
            continue
        k, cnt = _poisson_knuth(key, cnt, lam)
        if count + k > cap:
            return -1, cnt
        ix = site // M
        iy = site % M
        for _ in range(k):
            pos[count] = site
            ux[count] = ix
            uy[count] = iy
            count += 1
    return count, cnt


@njit(cache=True)
def _advance_core(key, cnt, t0, t_end,
                  pos, ux, uy, alive_in, watermark_in,
                  bit, size, freelist, free_top_in,
                  branch_rate, p0q0, qge2,
                  cdf_ge2, mass_ge2, beta, K,
                  M, n, obs_times, phi_flat,
                  out_pair, out_count, out_radius, out_sumr2,
                  ledger_t, ledger_site, ledger_k, ledger_fill_in, record_ledger,
                  capture, capture_mode, capture_fill_in,
                  counters):
    """Run the event loop from t0 to t_end; returns status and bookkeeping.

    counters: int64[4] accumulates (jumps, branchings, deaths, phantom picks).
    """
    jump_rate = 4.0 * n * n
    alive = alive_in
    watermark = watermark_in
    free_top = free_top_in
    ledger_fill = ledger_fill_in
    capture_fill = capture_fill_in
    t = t0
    obs_i = 0
    n_obs = obs_times.shape[0]
    center = M // 2
    status = STATUS_OK
    last_event_t = t0

    while True:
        if alive == 0:
            while obs_i < n_obs:
                out_pair[obs_i] = 0.0
                out_count[obs_i] = 0
                out_radius[obs_i] = 0.0
                out_sumr2[obs_i] = 0.0
                obs_i += 1
            t = t_end
            break
        total = bit[size]
        cnt += _U64(1)
        dt = -np.log(1.0 - _u01(key, cnt)) / total
        t_next = t + dt
        while obs_i < n_obs and obs_times[obs_i] <= t_next:
            s_pair = 0.0
            s_r2max = 0.0
            s_sumr2 = 0.0
            c = 0
            for i in range(watermark):
                if pos[i] >= 0:
                    s_pair += phi_flat[pos[i]]
                    dx = float(ux[i] - center)
                    dy = float(uy[i] - center)
                    r2 = dx * dx + dy * dy
                    s_sumr2 += r2
                    if r2 > s_r2max:
                        s_r2max = r2
                    c += 1
            out_pair[obs_i] = s_pair
            out_count[obs_i] = c
            out_radius[obs_i] = np.sqrt(s_r2max) / n
            out_sumr2[obs_i] = s_sumr2 / (n * n)
            obs_i += 1
        if obs_i >= n_obs:
            t = t_end
            break
        t = t_next

        cnt += _U64(1)
        slot = _fw_select(bit, size, _u01(key, cnt) * total)
        if slot >= watermark or pos[slot] < 0:
            counters[3] += 1  # boundary artefact of the float select; redraw
            continue
        x = pos[slot]
        r_here = jump_rate + branch_rate[x]

        if capture_mode == 1 and alive == 1 and capture_fill < capture.shape[0]:
            capture[capture_fill] = t - last_event_t
            capture_fill += 1
        last_event_t = t

        cnt += _U64(1)
        if _u01(key, cnt) * r_here < jump_rate:
            # jump to a uniform neighbour
            counters[0] += 1
            cnt += _U64(1)
            d = int(_u01(key, cnt) * 4.0)
            ix = x // M
            iy = x % M
            if d == 0:
                ix += 1
                ux[slot] += 1
            elif d == 1:
                ix -= 1
                ux[slot] -= 1
            elif d == 2:
                iy += 1
                uy[slot] += 1
            else:
                iy -= 1
                uy[slot] -= 1
            nx = ((ix % M) + M) % M
            ny = ((iy % M) + M) % M
            new_site = nx * M + ny
            pos[slot] = new_site
            delta = branch_rate[new_site] - branch_rate[x]
            if delta != 0.0:
                _fw_update(bit, size, slot, delta)
        else:
            # branching: particle replaced by k copies at x
            counters[1] += 1
            cnt += _U64(1)
            k = _sample_k(_u01(key, cnt), p0q0[x], qge2[x], cdf_ge2, mass_ge2, beta, K)
            if record_ledger == 1 and ledger_fill < ledger_t.shape[0]:
                ledger_t[ledger_fill] = t
                ledger_site[ledger_fill] = x
                ledger_k[ledger_fill] = k
                ledger_fill += 1
            if capture_mode == 2:
                if capture_fill < capture.shape[0]:
                    capture[capture_fill] = t
                    capture_fill += 1
                t = t_end
                break
            if k == 0:
                counters[2] += 1
                _fw_update(bit, size, slot, -r_here)
                pos[slot] = -1
                freelist[free_top] = slot
                free_top += 1
                alive -= 1
            elif k >= 2:
                for _ in range(k - 1):
                    if free_top > 0:
                        free_top -= 1
                        s2 = freelist[free_top]
                    else:
                        if watermark >= pos.shape[0]:
                            return STATUS_GROW, cnt, alive, watermark, free_top, ledger_fill, capture_fill, t
                        s2 = watermark
                        watermark += 1
                    pos[s2] = x
                    ux[s2] = ux[slot]
                    uy[s2] = uy[slot]
                    _fw_update(bit, size, s2, r_here)
                    alive += 1

    return status, cnt, alive, watermark, free_top, ledger_fill, capture_fill, t


@njit(cache=True)
def _run_replicas(keys, intensity, fixed_init, t_end,
                  branch_rate, p0q0, qge2,
                  cdf_ge2, mass_ge2, beta, K,
                  M, n, obs_times, phi_flat,
                  cap_start, cap_hard,
                  pair_out, count_out, radius_out, sumr2_out,
                  exploded_out, events_out,
                  ledger_t, ledger_site, ledger_k, record_ledger,
                  capture, capture_mode):
    R = keys.shape[0]
    ledger_fill = 0
    capture_fill = 0
    cap = cap_start
    for r in range(R):
        key = keys[r]
        while True:
            size = 1
            while size < cap:
                size *= 2
            pos = np.full(size, -1, dtype=np.int64)
            ux = np.zeros(size, dtype=np.int64)
            uy = np.zeros(size, dtype=np.int64)
            bit = np.zeros(size + 1, dtype=np.float64)
            freelist = np.zeros(size, dtype=np.int64)
            cnt = _U64(0)
            if fixed_init > 0:
                count = fixed_init if fixed_init <= size else -1
                if count > 0:
                    site = (M // 2) * M + (M // 2)
                    for i in range(count):
                        pos[i] = site
                        ux[i] = M // 2
                        uy[i] = M // 2
            else:
                count, cnt = _poisson_fill(key, cnt, intensity, pos, ux, uy, size, M)
            if count < 0:
                if cap >= cap_hard:
                    exploded_out[r] = 1
                    break
                cap = min(cap * 2, cap_hard)
                continue
            jump_rate = 4.0 * n * n
            for i in range(count):
                _fw_update(bit, size, i, jump_rate + branch_rate[pos[i]])
            counters = np.zeros(4, dtype=np.int64)
            res = _advance_core(key, cnt, 0.0, t_end,
                                pos, ux, uy, count, count,
                                bit, size, freelist, 0,
                                branch_rate, p0q0, qge2,
                                cdf_ge2, mass_ge2, beta, K,
                                M, n, obs_times, phi_flat,
                                pair_out[r], count_out[r], radius_out[r], sumr2_out[r],
                                ledger_t, ledger_site, ledger_k, ledger_fill, record_ledger,
                                capture, capture_mode, capture_fill,
                                counters)
            status = res[0]
            if status == STATUS_GROW:
                if cap >= cap_hard:
                    exploded_out[r] = 1
                    ledger_fill = res[5]
                    capture_fill = res[6]
                    break
                cap = min(cap * 2, cap_hard)
                continue
            ledger_fill = res[5]
            capture_fill = res[6]
            events_out[r, 0] = counters[0]
            events_out[r, 1] = counters[1]
            events_out[r, 2] = counters[2]
            break
    return ledger_fill, capture_fill


# ---------------------------------------------------------------------------
# Python-level state, ledger and wrappers
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class JumpLedger:
    t: np.ndarray
    site: np.ndarray
    k: np.ndarray
    overflowed: bool = False

    def __len__(self):
        return len(self.t)

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "site", "k"])
            for t, s, k in zip(self.t, self.site, self.k):
                w.writerow([repr(float(t)), int(s), int(k)])

    @staticmethod
    def from_csv(path) -> "JumpLedger":
        import csv
        ts, sites, ks = [], [], []
        with open(path) as fh:
            for row in csv.DictReader(fh):
                ts.append(float(row["t"]))
                sites.append(int(row["site"]))
                ks.append(int(row["k"]))
        return JumpLedger(np.asarray(ts), np.asarray(sites, dtype=np.int64),
                          np.asarray(ks, dtype=np.int64))


@dataclass(eq=False)
class ParticleState:
    grid: Grid
    positions: np.ndarray  # flat site index per particle
    ux: np.ndarray         # unwrapped lattice coordinates per particle
    uy: np.ndarray
    t: float
    eps: float
    rho: float
    cap: int = 10_000_000
    exploded: bool = False
    events: dict = dc_field(default_factory=lambda: {"jumps": 0, "branchings": 0, "deaths": 0})

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def total_mass(self) -> float:
        return self.eps * self.count

    def site_counts(self) -> dict[int, int]:
        sites, counts = np.unique(self.positions, return_counts=True)
        return {int(s): int(c) for s, c in zip(sites, counts)}


def derive_keys(seed: int, count: int) -> np.ndarray:
    """Per-replica uint64 stream keys from a root seed."""
    return np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)


def init_poisson(grid: Grid, mu0, eps: float, rng) -> ParticleState:
    """Poisson(mu0({x})/eps) particles per site; mu0 is a Field or site-mass array."""
    masses = mu0.values if isinstance(mu0, Field) else np.asarray(mu0)
    if np.any(masses < 0):
        raise ValueError("initial measure must be nonnegative")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    counts = rng.poisson(masses / eps)
    sites = np.nonzero(counts.reshape(-1))[0]
    reps = counts.reshape(-1)[sites]
    positions = np.repeat(sites, reps)
    return ParticleState(
        grid=grid, positions=positions,
        ux=positions // grid.M, uy=positions % grid.M,
        t=0.0, eps=float(eps), rho=float("nan"),
    )


def pair(state: ParticleState, phi: Field) -> float:
    """<measure, phi> = eps * sum of phi over particle positions."""
    if state.count == 0:
        return 0.0
    return state.eps * float(np.sum(phi.flat()[state.positions]))


def support_radius(state: ParticleState) -> float:
    """Largest unwrapped |position| over particles (0 for the empty state)."""
    if state.count == 0:
        return 0.0
    c = state.grid.M // 2
    r = np.hypot((state.ux - c) / state.grid.n, (state.uy - c) / state.grid.n)
    return float(np.max(r))


def _mechanism_tables(env, law: OffspringLaw, kind: str, c_mix: float):
    """Per-site (branch_rate, p0*q0, q_ge2) arrays for the chosen mechanism."""
    xi = env.xi.flat()
    ax = np.abs(xi)
    beta = law.beta
    with np.errstate(divide="ignore", invalid="ignore"):
        q0 = np.where(ax > 0, ((1 - beta) * np.maximum(xi, 0) + (1 + beta) * np.maximum(-xi, 0)) / ax, 1.0)
        qge2 = np.where(ax > 0, 2.0 * np.maximum(xi, 0) / ax, 1.0)
    if kind == "site":
        rate = ax.copy()
    elif kind == "auxiliary":
        rate = ax.copy()
        q0 = np.ones_like(q0)
        qge2 = np.ones_like(qge2)
    elif kind == "mixed":
        if c_mix < 0:
            raise ValueError("c_mix must be >= 0")
        rate = (1.0 + c_mix) * ax
        q0 = (q0 + c_mix) / (1.0 + c_mix)
        qge2 = (qge2 + c_mix) / (1.0 + c_mix)
    elif kind == "none":
        rate = np.zeros_like(ax)
    else:
        raise ValueError(f"unknown mechanism kind {kind!r}")
    return rate, law.p[0] * q0, qge2


@dataclass(eq=False)
class SimBatch:
    """Per-replica observables of a batch of independent simulations."""

    obs_times: np.ndarray
    pair: np.ndarray      # (R, n_obs), already scaled by eps
    mass: np.ndarray      # (R, n_obs)
    count: np.ndarray     # (R, n_obs)
    radius: np.ndarray
    mean_sq_disp: np.ndarray
    exploded: np.ndarray  # bool (R,)
    events: np.ndarray    # (R, 3) jumps/branchings/deaths
    ledger: JumpLedger | None
    capture: np.ndarray | None
    eps: float

    @property
    def n_ok(self) -> int:
        return int(np.sum(~self.exploded))

    def ok(self, arr: np.ndarray) -> np.ndarray:
        return arr[~self.exploded]


def simulate_batch(env, law: OffspringLaw, *, mechanism: str = "site", c_mix: float = 0.0,
                   mu0=None, fixed_init: int = 0, eps: float, T: float,
                   obs_times=None, replicas: int, seed: int,
                   phi: Field | None = None, cap: int = 10_000_000,
                   record_ledger: bool = False, ledger_capacity: int = 0,
                   capture_mode: int = 0, capture_capacity: int = 0) -> SimBatch:
    """Run independent replicas of the branching random walk.

    Observables are recorded at obs_times (default: only T).  phi defaults
    to the constant 1.  Replica r uses the counter-based stream keyed by
    (seed, r); reruns are reproducible bit for bit.
    """
    grid = env.grid
    M = grid.M
    if obs_times is None:
        obs_times = [T]
    obs_times = np.asarray(sorted(obs_times), dtype=np.float64)
    if abs(obs_times[-1] - T) > 1e-12:
        obs_times = np.append(obs_times, T)
    phi_flat = (phi.flat() if phi is not None else np.ones(M * M))
    intensity = (np.zeros(M * M) if mu0 is None
                 else (mu0.values if isinstance(mu0, Field) else np.asarray(mu0)).reshape(-1) / eps)
    branch_rate, p0q0, qge2 = _mechanism_tables(env, law, mechanism, c_mix)

    R = int(replicas)
    n_obs = len(obs_times)
    pair_out = np.zeros((R, n_obs))
    count_out = np.zeros((R, n_obs), dtype=np.int64)
    radius_out = np.zeros((R, n_obs))
    sumr2_out = np.zeros((R, n_obs))
    exploded = np.zeros(R, dtype=np.int64)
    events = np.zeros((R, 3), dtype=np.int64)
    lcap = int(ledger_capacity) if record_ledger else 0
    ledger_t = np.zeros(lcap)
    ledger_site = np.zeros(lcap, dtype=np.int64)
    ledger_k = np.zeros(lcap, dtype=np.int64)
    ccap = int(capture_capacity) if capture_mode else 0
    capture = np.zeros(ccap)

    keys = derive_keys(seed, R)
    ledger_fill, capture_fill = _run_replicas(
        keys, intensity, int(fixed_init), float(T),
        branch_rate, p0q0, qge2,
        law.cdf_ge2, law.mass_ge2, law.beta, law.K,
        M, grid.n, obs_times, phi_flat,
        1 << 12, int(cap),
        pair_out, count_out, radius_out, sumr2_out,
        exploded, events,
        ledger_t, ledger_site, ledger_k, 1 if record_ledger else 0,
        capture, int(capture_mode))

    ledger = None
    if record_ledger:
        ledger = JumpLedger(ledger_t[:ledger_fill].copy(), ledger_site[:ledger_fill].copy(),
                            ledger_k[:ledger_fill].copy(),
                            overflowed=bool(ledger_fill >= lcap > 0))
    counts = count_out.astype(np.float64)
    with np.errstate(invalid="ignore"):
        msd = np.where(count_out > 0, sumr2_out / np.maximum(count_out, 1), 0.0)
    return SimBatch(
        obs_times=obs_times, pair=eps * pair_out, mass=eps * counts,
        count=count_out, radius=radius_out, mean_sq_disp=msd,
        exploded=exploded.astype(bool), events=events, ledger=ledger,
        capture=capture[:capture_fill].copy() if capture_mode else None,
        eps=float(eps),
    )


def advance(state: ParticleState, env, law: OffspringLaw, mechanism_kind: str,
            t_end: float, rng, ledger: JumpLedger | None = None,
            c_mix: float = 0.0, ledger_capacity: int = 1_000_000) -> ParticleState:
    """Advance a single state to exactly t_end; returns a new state.

    rng is an integer seed (or numpy Generator whose next draw seeds the
    stream); the event sequence is reproducible given (state, seed).
    """
    if t_end < state.t:
        raise ValueError("t_end must be >= current time")
    grid = state.grid
    M = grid.M
    if isinstance(rng, (int, np.integer)):
        key = derive_keys(int(rng), 1)[0]
    else:
        key = _U64(rng.integers(0, 2**63, dtype=np.int64))
    branch_rate, p0q0, qge2 = _mechanism_tables(env, law, mechanism_kind, c_mix)

    size = 1 << 12
    while size < max(2 * state.count, 2):
        size *= 2
    status = STATUS_GROW
    while status == STATUS_GROW and size <= state.cap:
        pos = np.full(size, -1, dtype=np.int64)
        ux = np.zeros(size, dtype=np.int64)
        uy = np.zeros(size, dtype=np.int64)
        bit = np.zeros(size + 1, dtype=np.float64)
        freelist = np.zeros(size, dtype=np.int64)
        count = state.count
        pos[:count] = state.positions
        ux[:count] = state.ux
        uy[:count] = state.uy
        jump_rate = 4.0 * grid.n**2
        for i in range(count):
            _fw_update(bit, size, i, jump_rate + branch_rate[pos[i]])
        obs = np.asarray([t_end - state.t])
        out_pair = np.zeros(1)
        out_count = np.zeros(1, dtype=np.int64)
        out_radius = np.zeros(1)
        out_sumr2 = np.zeros(1)
        lcap = ledger_capacity if ledger is not None else 0
        ledger_t = np.zeros(lcap)
        ledger_site = np.zeros(lcap, dtype=np.int64)
        ledger_k = np.zeros(lcap, dtype=np.int64)
        counters = np.zeros(4, dtype=np.int64)
        res = _advance_core(key, _U64(0), 0.0, t_end - state.t,
                            pos, ux, uy, count, count,
                            bit, size, freelist, 0,
                            branch_rate, p0q0, qge2,
                            law.cdf_ge2, law.mass_ge2, law.beta, law.K,
                            M, grid.n, obs, np.ones(M * M),
                            out_pair, out_count, out_radius, out_sumr2,
                            ledger_t, ledger_site, ledger_k, 0, 1 if ledger is not None else 0,
                            np.zeros(0), 0, 0,
                            counters)
        status = res[0]
        if status == STATUS_GROW:
            size *= 2

    exploded = status == STATUS_GROW
    alive_mask = pos[:res[3]] >= 0
    new_state = ParticleState(
        grid=grid,
        positions=pos[:res[3]][alive_mask].copy(),
        ux=ux[:res[3]][alive_mask].copy(),
        uy=uy[:res[3]][alive_mask].copy(),
        t=t_end if not exploded else state.t + res[7],
        eps=state.eps, rho=state.rho, cap=state.cap, exploded=exploded,
        events={"jumps": state.events["jumps"] + int(counters[0]),
                "branchings": state.events["branchings"] + int(counters[1]),
                "deaths": state.events["deaths"] + int(counters[2])},
    )
    if ledger is not None:
        fill = res[5]
        ledger.t = np.concatenate([ledger.t, state.t + ledger_t[:fill]])
        ledger.site = np.concatenate([ledger.site, ledger_site[:fill]])
        ledger.k = np.concatenate([ledger.k, ledger_k[:fill]])
    return new_state
