"""Print the result CSVs from run_all.py as compact tables.

    python scripts/summarize.py results/loss_table_m1.csv results/d_lambda_vary_theta.csv
"""
import csv
import sys
from collections import defaultdict


def summarize(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_stat = defaultdict(list)
    for r in rows:
        by_stat[r["statistic"]].append(r)
    print(f"== {path}")
    for stat, group in by_stat.items():
        print(f"  {stat}")
        for r in group:
            cell = " ".join(f"{k}={r[k]}" for k in ("n", "p", "d", "H", "theta") if r[k])
            se = f" +- {float(r['stderr']):.3g}" if float(r["stderr"] or 0) > 0 else ""
            print(f"    {cell:40s} {float(r['value']):.4f}{se}")


if __name__ == "__main__":
    for p in sys.argv[1:]:
        summarize(p)
