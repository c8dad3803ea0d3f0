"""Declarative run configuration: parse, validate, freeze.

A run is reproducible from its resolved config and seed alone; every
command writes the resolved config next to its outputs, and the config
hash is embedded in all JSON artifacts of the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import yaml

from .lattice import make_grid, bump_field, square_measure, point_measure, read_field
from .reporting import config_hash


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # grid
    n: int = 8
    L: float = 4.0
    # environment
    dist: str = "rademacher"
    seed: int = 1
    c_n_policy: str = "estimate"      # estimate | zero
    c_n_ensemble: int = 1
    # model
    beta: float = 0.5
    rho: float | None = None          # defaults to beta
    c_mix: float = 0.0
    mechanism: str = "site"           # site | auxiliary | mixed | none
    K: int = 10_000
    K_inv: int = 10_000
    # initial measure
    mu0_kind: str = "square"          # square | point | file
    mu0_center: tuple = (0.0, 0.0)
    mu0_side: float = 1.0
    mu0_mass: float = 1.0
    mu0_path: str | None = None
    # test function
    phi_kind: str = "bump"            # bump | file
    phi_center: tuple = (0.0, 0.0)
    phi_width: float = 1.0
    phi_height: float = 1.0
    phi_path: str | None = None
    # evolution
    T: float = 0.25
    dt: float = 1e-3
    solver_kind: str = "pam"          # heat | pam | variant_pam | nonlinear
    # simulation
    replicas: int = 10_000
    obs_times: tuple = ()
    cap: int = 10_000_000
    record_ledger: bool = False
    ledger_capacity: int = 2_000_000
    # harness
    suite: str = "quick"              # quick | full
    workers: int = 1
    out: str = "runs/out"

    @property
    def rho_eff(self) -> float:
        return self.beta if self.rho is None else self.rho

    @property
    def eps(self) -> float:
        return float(self.n) ** (-1.0 / self.rho_eff)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rho"] = self.rho_eff
        d["eps"] = self.eps
        return d

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def grid(self):
        return make_grid(self.n, self.L)

    def mu0(self, grid):
        if self.mu0_kind == "square":
            return square_measure(grid, self.mu0_center, self.mu0_side, self.mu0_mass)
        if self.mu0_kind == "point":
            return point_measure(grid, self.mu0_center, self.mu0_mass)
        if self.mu0_kind == "file":
            f, _ = read_field(self.mu0_path)
            return f.values
        raise ConfigError(f"unknown initial measure kind {self.mu0_kind!r}")

    def phi(self, grid):
        if self.phi_kind == "bump":
            return bump_field(grid, self.phi_center, self.phi_width, self.phi_height)
        if self.phi_kind == "file":
            f, _ = read_field(self.phi_path)
            return f
        raise ConfigError(f"unknown test function kind {self.phi_kind!r}")

    def write_resolved(self, outdir) -> None:
        """Write the resolved config; refuse to mix configs in one output tree."""
        os.makedirs(outdir, exist_ok=True)
        payload = {**self.to_dict(), "config_hash": self.hash}
        path = os.path.join(outdir, "resolved_config.json")
        if os.path.exists(path):
            with open(path) as fh:
                existing = json.load(fh)
            if existing.get("config_hash") != self.hash:
                raise ConfigError(
                    f"output directory {outdir} already holds a run with config hash "
                    f"{existing.get('config_hash')}; refusing to mix with {self.hash}")
            return
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)


_SECTION_KEYS = {
    "grid": {"n": "n", "L": "L"},
    "environment": {"dist": "dist", "seed": "seed", "c_n_policy": "c_n_policy",
                    "c_n_ensemble": "c_n_ensemble"},
    "model": {"beta": "beta", "rho": "rho", "c_mix": "c_mix", "mechanism": "mechanism",
              "K": "K", "K_inv": "K_inv"},
    "initial": {"kind": "mu0_kind", "center": "mu0_center", "side": "mu0_side",
                "mass": "mu0_mass", "path": "mu0_path"},
    "phi": {"kind": "phi_kind", "center": "phi_center", "width": "phi_width",
            "height": "phi_height", "path": "phi_path"},
    "evolution": {"T": "T", "dt": "dt", "kind": "solver_kind"},
    "simulation": {"replicas": "replicas", "obs_times": "obs_times", "cap": "cap",
                   "record_ledger": "record_ledger", "ledger_capacity": "ledger_capacity"},
    "run": {"suite": "suite", "workers": "workers", "out": "out"},
}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load a nested YAML config, apply CLI overrides, validate and freeze."""
    flat: dict = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a mapping")
        for section, content in raw.items():
            if section not in _SECTION_KEYS:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(content, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            for key, value in content.items():
                if key not in _SECTION_KEYS[section]:
                    raise ConfigError(f"unknown key {key!r} in section {section!r}")
                flat[_SECTION_KEYS[section][key]] = value
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    for tup_key in ("mu0_center", "phi_center", "obs_times"):
        if tup_key in flat and flat[tup_key] is not None:
            flat[tup_key] = tuple(flat[tup_key])
    try:
        cfg = RunConfig(**flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    def fail(field_name, msg):
        raise ConfigError(f"config field {field_name!r}: {msg}")

    if cfg.n < 1:
        fail("grid.n", "must be a positive integer")
    Mf = cfg.L * cfg.n
    if abs(Mf - round(Mf)) > 1e-9 or round(Mf) < 4 or round(Mf) % 2 != 0:
        fail("grid.L", f"L*n = {Mf} must be an even integer >= 4")
    if cfg.dist not in ("rademacher", "truncated-gaussian"):
        fail("environment.dist", f"unknown distribution {cfg.dist!r}")
    if cfg.c_n_policy not in ("estimate", "zero"):
        fail("environment.c_n_policy", "must be 'estimate' or 'zero'")
    if not (0.05 < cfg.beta < 0.95):
        fail("model.beta", "must lie strictly inside (0.05, 0.95)")
    if cfg.rho is not None and not (0 < cfg.rho <= cfg.beta):
        fail("model.rho", "must lie in (0, beta]")
    if cfg.c_mix < 0:
        fail("model.c_mix", "must be >= 0")
    if cfg.mechanism not in ("site", "auxiliary", "mixed", "none"):
        fail("model.mechanism", f"unknown mechanism {cfg.mechanism!r}")
    if cfg.K < 2 or cfg.K_inv < 2:
        fail("model.K", "table cutoffs must be >= 2")
    if cfg.T <= 0 or cfg.dt <= 0:
        fail("evolution.T", "horizon and step must be positive")
    if cfg.dt * cfg.n > 0.5:
        fail("evolution.dt", f"dt * max|xi| = {cfg.dt * cfg.n:.3f} > 0.5 (splitting accuracy guard)")
    if cfg.solver_kind not in ("heat", "pam", "variant_pam", "nonlinear"):
        fail("evolution.kind", f"unknown solver {cfg.solver_kind!r}")
    if cfg.replicas < 1:
        fail("simulation.replicas", "must be >= 1")
    if cfg.cap < 4096:
        fail("simulation.cap", "particle cap must be >= 4096")
    if any(t > cfg.T + 1e-12 for t in cfg.obs_times):
        fail("simulation.obs_times", "observation times must not exceed T")
    if cfg.suite not in ("quick", "full"):
        fail("run.suite", "must be 'quick' or 'full'")
    if cfg.mu0_kind == "file" and not cfg.mu0_path:
        fail("initial.path", "file kind requires a path")
    if cfg.phi_kind == "file" and not cfg.phi_path:
        fail("phi.path", "file kind requires a path")
