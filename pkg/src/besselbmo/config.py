"""Experiment configuration: parsing, defaults, validation and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .experiments import REGISTRY, ExperimentContext, experiment_names
from .kernel import KernelConfig
from .weighted_domain import WeightedGrid

TOP_KEYS = {"experiment", "seed", "lambda", "kernel", "grid", "params", "output"}
KERNEL_KEYS = {"max_subdivisions", "abs_tol", "rel_tol"}
GRID_KEYS = {"x_min", "x_max", "cells", "spacing"}
MAX_CELLS = 128


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {where} keys {sorted(unknown)}; allowed: {sorted(defaults)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    lam: float
    kernel: dict
    grid: dict | None
    params: dict
    output: dict

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("a config must be a JSON object")
        unknown = set(d) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(TOP_KEYS)}")
        name = d.get("experiment")
        if name not in REGISTRY:
            raise ConfigError(f"unknown experiment {name!r}; known: {experiment_names()}")
        _, pdefaults, gdefaults = REGISTRY[name]
        try:
            seed = int(d.get("seed", 0))
            lam = float(d.get("lambda", 1.0))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad seed or lambda: {exc}") from exc
        kernel = dict(d.get("kernel") or {})
        if set(kernel) - KERNEL_KEYS:
            raise ConfigError(f"unknown kernel keys {sorted(set(kernel) - KERNEL_KEYS)}")
        grid = None
        if gdefaults is not None:
            grid = _merge(gdefaults, dict(d.get("grid") or {}), "grid")
        elif d.get("grid"):
            raise ConfigError(f"experiment {name!r} takes its grids from params, not from 'grid'")
        params = _merge(pdefaults, dict(d.get("params") or {}), "params")
        output = dict(d.get("output") or {})
        if set(output) - {"dir", "stem"}:
            raise ConfigError("output takes only 'dir' and 'stem'")
        output.setdefault("dir", "reports")
        output.setdefault("stem", name)
        cfg = cls(name, seed, lam, kernel, grid, params, output)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    def validate(self):
        self.kernel_config()
        if self.grid is not None:
            WeightedGrid.from_spec(dict(self.grid, **{"lambda": self.lam}))
            if int(self.grid["cells"]) * 2 ** int(self.params.get("refinements", 0)) > MAX_CELLS:
                raise ConfigError(f"grids are limited to {MAX_CELLS} cells per axis, refinements included")
        for key in ("grid_1d", "grid_2d"):
            if key in self.params:
                spec = self.params[key]
                if set(spec) - GRID_KEYS:
                    raise ConfigError(f"unknown {key} keys {sorted(set(spec) - GRID_KEYS)}")
                WeightedGrid.from_spec(dict(spec, **{"lambda": self.lam}))
                if int(spec["cells"]) > MAX_CELLS:
                    raise ConfigError(f"{key} exceeds {MAX_CELLS} cells")

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.lam, **self.kernel)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(self.experiment, int(seed), self.lam, self.kernel, self.grid, self.params, self.output)

    def to_dict(self) -> dict:
        d = {"experiment": self.experiment, "seed": self.seed, "lambda": self.lam, "kernel": self.kernel,
             "params": self.params, "output": self.output}
        if self.grid is not None:
            d["grid"] = self.grid
        return d

    def hash(self) -> str:
        """sha256 of the canonical JSON of everything that affects the numbers (output paths excluded)."""
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def context(self) -> ExperimentContext:
        return ExperimentContext(self.lam, self.kernel_config(), copy.deepcopy(self.params),
                                 copy.deepcopy(self.grid), self.seed)
