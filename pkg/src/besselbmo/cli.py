"""Command-line runner: ``besselbmo list | validate --config F | run --config F [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure,
1 anything unexpected. A run writes <stem>.json (the report), one CSV per
series and <stem>.timing.json (wall time, kept apart so reports are
byte-identical across runs).
"""
from __future__ import annotations

import json
import platform
import re
import sys
import time
from pathlib import Path

import click
import numba
import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigError, NumericalError, UsageError
from .experiments import DESCRIPTIONS, experiment_names, run_experiment

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
SCHEMA = "besselbmo-report/1"


def versions() -> dict:
    return {"besselbmo": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def build_report(cfg: ExperimentConfig) -> tuple[dict, float]:
    t0 = time.perf_counter()
    rep = run_experiment(cfg.context(), cfg.experiment)
    wall = time.perf_counter() - t0
    doc = {
        "schema": SCHEMA,
        "experiment": cfg.experiment,
        "metadata": {"config_hash": cfg.hash(), "seed": cfg.seed, "versions": versions()},
        "config": cfg.to_dict(),
        "scalars": rep.scalars,
        "series": rep.series,
        "checks": rep.checks,
        "passed": rep.passed,
    }
    return doc, wall


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.-]+", "_", name).strip("_")


def write_report(doc: dict, wall: float, out_dir: Path, stem: str) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{stem}.json"]
    paths[0].write_text(dumps(doc))
    for name, s in doc["series"].items():
        p = out_dir / f"{stem}.{_slug(name)}.csv"
        lines = ["x,y,tag"] + [f"{_csv(x)},{_csv(y)},{t}" for x, y, t in s["rows"]]
        p.write_text("\n".join(lines) + "\n")
        paths.append(p)
    t = out_dir / f"{stem}.timing.json"
    t.write_text(json.dumps({"config_hash": doc["metadata"]["config_hash"], "wall_seconds": wall}, indent=2) + "\n")
    paths.append(t)
    return paths


def _csv(v):
    return "" if v is None else repr(v)


def _fail(exc: Exception) -> None:
    code = EXIT_NUMERICAL if isinstance(exc, NumericalError) else EXIT_CONFIG
    kind = "numerical failure" if code == EXIT_NUMERICAL else "configuration error"
    click.echo(f"{kind}: {type(exc).__name__}: {exc}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__, prog_name="besselbmo")
def main():
    """Experiments with Bessel-Riesz commutators, oscillation norms and Hardy-space factorization."""


@main.command("list")
def list_cmd():
    """Print the registered experiment names."""
    for name in experiment_names():
        click.echo(f"{name:22s} {DESCRIPTIONS[name]}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
def validate(config_path):
    """Parse and validate a config without running it."""
    try:
        cfg = ExperimentConfig.load(config_path)
    except (ConfigError, UsageError) as exc:
        _fail(exc)
    click.echo(f"ok: {cfg.experiment} (config hash {cfg.hash()[:16]})")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the seed in the config.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Override the output directory.")
def run(config_path, seed, out_dir):
    """Run one experiment and write its report."""
    try:
        cfg = ExperimentConfig.load(config_path)
        if seed is not None:
            cfg = cfg.with_seed(seed)
        doc, wall = build_report(cfg)
    except (ConfigError, UsageError, NumericalError) as exc:
        _fail(exc)
    out = Path(out_dir) if out_dir is not None else Path(cfg.output["dir"])
    paths = write_report(doc, wall, out, cfg.output["stem"])
    n_ok = sum(doc["checks"].values())
    click.echo(f"{cfg.experiment}: {n_ok}/{len(doc['checks'])} checks passed in {wall:.1f}s")
    for name, ok in doc["checks"].items():
        click.echo(f"  {'PASS' if ok else 'FAIL'}  {name}")
    click.echo(f"report: {paths[0]}")


if __name__ == "__main__":
    main()
