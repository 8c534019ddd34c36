"""Run every config in scripts/configs and write one CSV per config to results/.

    python scripts/run_all.py [--threads 4] [--only loss_table_m1 eigen_table]
"""
import argparse
import json
import sys
import time
from pathlib import Path

from sirlab.cli import main as sirlab_main

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=HERE.parent / "results")
    ap.add_argument("--only", nargs="*", default=None, help="config stems to run")
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    status = 0
    for cfg in sorted((HERE / "configs").glob("*.json")):
        if args.only and cfg.stem not in args.only:
            continue
        experiment = json.loads(cfg.read_text())["experiment"]
        out = args.out_dir / f"{cfg.stem}.csv"
        t0 = time.perf_counter()
        code = sirlab_main([experiment, "--config", str(cfg), "--threads", str(args.threads), "--out", str(out)])
        print(f"{cfg.stem:24s} exit={code} {time.perf_counter() - t0:7.1f}s -> {out}")
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
