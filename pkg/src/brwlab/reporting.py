"""Verification reports: per-check records, JSON and Markdown writers."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, asdict


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class CheckResult:
    name: str
    policy: str                 # "3sigma" | "3sigma+dt" | "absolute" | "trend" | "exact"
    passed: bool
    estimate: float | None = None
    reference: float | None = None
    stderr: float | None = None
    zscore: float | None = None
    residual: float | None = None
    tolerance: float | None = None
    status: str = "ran"         # "ran" | "skipped" | "insufficient"
    detail: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    name: str
    config: dict
    checks: list[CheckResult] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.status == "ran")

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "config": self.config,
            "config_hash": self.config_hash,
            "passed": self.passed,
            "runtime_s": self.runtime_s,
            "checks": [asdict(c) for c in self.checks],
        }

    def to_json(self, path) -> None:
        _write_new(path, json.dumps(self.to_dict(), indent=1, default=_json_default))

    def to_markdown(self) -> str:
        lines = [f"# {self.name}", "",
                 f"- config hash: `{self.config_hash}`",
                 f"- runtime: {self.runtime_s:.1f} s",
                 f"- verdict: {'PASS' if self.passed else 'FAIL'}", "",
                 "| check | policy | estimate | reference | tolerance | verdict |",
                 "|---|---|---|---|---|---|"]
        for c in self.checks:
            verdict = c.status if c.status != "ran" else ("pass" if c.passed else "FAIL")
            est = "" if c.estimate is None else f"{c.estimate:.6g}"
            ref = "" if c.reference is None else f"{c.reference:.6g}"
            tol = "" if c.tolerance is None else f"{c.tolerance:.3g}"
            lines.append(f"| {c.name} | {c.policy} | {est} | {ref} | {tol} | {verdict} |")
        return "\n".join(lines) + "\n"

    def write(self, outdir) -> None:
        os.makedirs(outdir, exist_ok=True)
        stamp = self.name.replace(" ", "_")
        self.to_json(os.path.join(outdir, f"report_{stamp}.json"))
        _write_new(os.path.join(outdir, f"report_{stamp}.md"), self.to_markdown())


def _json_default(obj):
    import numpy as np
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_new(path, text: str) -> None:
    """Append-only output tree: refuse to overwrite an existing artifact."""
    if os.path.exists(path):
        base, ext = os.path.splitext(path)
        path = f"{base}_{int(time.time() * 1000)}{ext}"
    with open(path, "w") as fh:
        fh.write(text)
