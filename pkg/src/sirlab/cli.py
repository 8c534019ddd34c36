"""Command line entry point: ``sirlab <experiment> --config cfg.json [--field value ...]``.

Exit codes: 0 success, 1 input error, 2 resource limit, 3 bound-check failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import EnumerationTooLarge, ResourceLimit, SirlabError
from .experiments import EXPERIMENTS, GRID_FIELDS, ExperimentConfig, all_checks_passed, run, write_csv
from .sir import SirConfig, fit_sir
from .slicing import read_dataset_csv

EXIT_OK, EXIT_INPUT, EXIT_RESOURCE, EXIT_BOUND = 0, 1, 2, 3


def _grid(cast):
    def parse(text: str):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated values, got {text!r}") from None
    return parse


def _flag_type(name: str):
    if name in GRID_FIELDS:
        return _grid(float if name == "theta" else int)
    if name in ("s", "reps", "seed", "threads", "gp_cap", "samples"):
        return int
    if name == "sigma":
        return float
    return str


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which here means a resource limit.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sirlab", description="Sliced inverse regression experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", type=Path, help="JSON config; flags override its fields")
        for f in fields(ExperimentConfig):
            if f.name == "experiment":
                continue
            sp.add_argument(f"--{f.name}", dest=f.name, type=_flag_type(f.name), default=None)
    fp = sub.add_parser("fit", help="fit SIR to a CSV dataset with header x1..xp,y")
    fp.add_argument("data", type=Path)
    fp.add_argument("--d", type=int, required=True)
    fp.add_argument("--H", type=int, default=None)
    fp.add_argument("--sigma_mode", choices=("identity", "estimated"), default="identity")
    return ap


def load_config(experiment: str, path: Path | None, overrides: dict) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise SirlabError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise SirlabError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise SirlabError(f"{path}: config must be a JSON object")
        if data.get("experiment", experiment) != experiment:
            raise SirlabError(f"{path}: config is for {data['experiment']!r}, not {experiment!r}")
    data["experiment"] = experiment
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def _run_fit(args) -> int:
    data = read_dataset_csv(args.data)
    fit = fit_sir(data, SirConfig(d=args.d, H=args.H, sigma_mode=args.sigma_mode))
    out = {
        "n": data.n,
        "p": data.p,
        "basis": np.round(fit.basis, 9).tolist(),
        "gsnr_hat": fit.gsnr_hat,
        "top_eigenvalues": fit.top_eigenvalues.tolist(),
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return _run_fit(args)
        overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        cfg = load_config(args.command, args.config, overrides)
        rows = run(cfg)
        if cfg.out:
            with open(cfg.out, "w", newline="") as fh:
                write_csv(rows, fh)
        else:
            write_csv(rows, sys.stdout)
        if cfg.experiment == "check-bounds" and not all_checks_passed(rows):
            print("sirlab: bound check failed", file=sys.stderr)
            return EXIT_BOUND
        return EXIT_OK
    except (ResourceLimit, EnumerationTooLarge, MemoryError) as exc:
        print(f"sirlab: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (SirlabError, ValueError, TypeError, OSError) as exc:
        print(f"sirlab: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
