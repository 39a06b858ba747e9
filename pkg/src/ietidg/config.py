"""Experiment configuration files (YAML, schema ``ietidg.experiment/1``).

Example::

    schema: ietidg.experiment/1
    name: table1
    domain:
      kind: ring              # ring | thin-ring | square-tgrid
    sweep:
      p: [2, 3, 6, 7]
      r: [4, 5, 6]
      s: p-1                  # p-1 | all | list of integers
    solver:
      delta: 32.0
      rtol: 1.0e-8
      maxit: 500
      threads: 1
    load: sine                # unit | sine | exp
    output:
      dir: results/table1

Unknown keys anywhere are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .assembly import DEFAULT_DELTA, ConfigError
from .multipatch import (
    GRID2X2_SPLITS,
    TEE_SPLITS,
    MultiPatch,
    build_ring,
    build_square_tgrid,
    staggered_ring,
    thin_ring,
)

SCHEMA_ID = "ietidg.experiment/1"

LOADS = {
    "unit": lambda x, y: np.ones_like(x),
    "sine": lambda x, y: 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y),
    "exp": lambda x, y: np.exp(x + 2 * y),
}

_SPLITS = {"tee": TEE_SPLITS, "grid2x2": GRID2X2_SPLITS}
_DOMAIN_KEYS = {
    "ring": {"kind", "layer_widths", "sectors", "offsets"},
    "thin-ring": {"kind"},
    "square-tgrid": {"kind", "splits"},
}
_TOP_KEYS = {"schema", "name", "domain", "sweep", "solver", "load", "output"}
_SWEEP_KEYS = {"p", "r", "s"}
_SOLVER_KEYS = {"delta", "rtol", "maxit", "threads"}
_OUTPUT_KEYS = {"dir"}


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def build(self) -> MultiPatch:
        if self.kind == "ring":
            if not self.params:
                return staggered_ring()
            base = staggered_ring().meta
            return build_ring(self.params.get("layer_widths", base["layer_widths"]),
                              self.params.get("sectors", base["sectors"]),
                              self.params.get("offsets", base["offsets"]))
        if self.kind == "thin-ring":
            return thin_ring()
        splits = self.params.get("splits", "tee")
        if isinstance(splits, str):
            splits = _SPLITS[splits]
        return build_square_tgrid([tuple(map(float, s)) for s in splits])


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    domain: DomainSpec
    p: tuple[int, ...]
    r: tuple[int, ...]
    s: object                 # "p-1", "all" or tuple of ints
    delta: float = DEFAULT_DELTA
    rtol: float = 1e-8
    maxit: int = 500
    threads: int = 1
    load: str = "sine"
    out_dir: str = "results"

    def smoothness(self, p: int) -> list[int]:
        if self.s == "p-1":
            return [p - 1]
        if self.s == "all":
            return list(range(p))
        return [s for s in self.s if s < p]

    def cells(self) -> list[tuple[int, int, int]]:
        """Sweep cells ``(p, r, s)`` in deterministic order (r, then p, then s)."""
        return [(p, r, s) for r in self.r for p in self.p for s in self.smoothness(p)]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        out = replace(self, **kw)
        validate(out)
        return out

    @property
    def f(self):
        return LOADS[self.load]


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def _int_list(value, where: str) -> tuple[int, ...]:
    if value is None:
        return ()
    if isinstance(value, int):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
        raise ConfigError(f"{where}: expected an integer or a list of integers")
    return tuple(value)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.domain.kind not in _DOMAIN_KEYS:
        raise ConfigError(f"domain.kind must be one of {sorted(_DOMAIN_KEYS)}")
    ring = cfg.domain.kind in ("ring", "thin-ring")
    for p in cfg.p:
        if p < 1 or (ring and p < 2):
            raise ConfigError(f"degree p={p} too small for domain {cfg.domain.kind}")
    if any(r < 0 for r in cfg.r):
        raise ConfigError("refinement levels must be nonnegative")
    if not (cfg.s in ("p-1", "all") or isinstance(cfg.s, tuple)):
        raise ConfigError("sweep.s must be 'p-1', 'all' or a list of integers")
    if isinstance(cfg.s, tuple) and any(s < 0 for s in cfg.s):
        raise ConfigError("smoothness must be nonnegative")
    if cfg.delta <= 0:
        raise ConfigError("solver.delta must be positive")
    if not 0 < cfg.rtol < 1:
        raise ConfigError("solver.rtol must lie in (0, 1)")
    if cfg.maxit < 1 or cfg.threads < 1:
        raise ConfigError("solver.maxit and solver.threads must be positive")
    if cfg.load not in LOADS:
        raise ConfigError(f"load must be one of {sorted(LOADS)}")


def from_dict(data: dict) -> ExperimentConfig:
    _check_keys(data, _TOP_KEYS, "config")
    if data.get("schema") != SCHEMA_ID:
        raise ConfigError(f"config: schema must be {SCHEMA_ID!r}, got {data.get('schema')!r}")
    dom = data.get("domain") or {}
    _check_keys(dom, {"kind", "layer_widths", "sectors", "offsets", "splits"}, "domain")
    kind = dom.get("kind")
    if kind not in _DOMAIN_KEYS:
        raise ConfigError(f"domain.kind must be one of {sorted(_DOMAIN_KEYS)}, got {kind!r}")
    _check_keys(dom, _DOMAIN_KEYS[kind], f"domain ({kind})")
    params = {k: v for k, v in dom.items() if k != "kind"}
    sweep = data.get("sweep") or {}
    _check_keys(sweep, _SWEEP_KEYS, "sweep")
    s = sweep.get("s", "p-1")
    if not isinstance(s, str):
        s = _int_list(s, "sweep.s")
    solver = data.get("solver") or {}
    _check_keys(solver, _SOLVER_KEYS, "solver")
    output = data.get("output") or {}
    _check_keys(output, _OUTPUT_KEYS, "output")
    cfg = ExperimentConfig(
        name=str(data.get("name", "experiment")),
        domain=DomainSpec(kind, params),
        p=_int_list(sweep.get("p"), "sweep.p"),
        r=_int_list(sweep.get("r"), "sweep.r"),
        s=s,
        delta=float(solver.get("delta", DEFAULT_DELTA)),
        rtol=float(solver.get("rtol", 1e-8)),
        maxit=int(solver.get("maxit", 500)),
        threads=int(solver.get("threads", 1)),
        load=str(data.get("load", "sine")),
        out_dir=str(output.get("dir", "results")),
    )
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(Path(path)) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        raise ConfigError(f"{path}: empty config")
    return from_dict(data)
