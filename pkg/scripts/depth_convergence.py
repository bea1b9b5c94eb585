"""Depth comparison as an error proxy: compare two quench trajectories with each other and with ED.

Takes CSV files written by critical_quench.py for two network depths.

    python scripts/critical_quench.py --depth 2 --out quench_n2.csv
    python scripts/critical_quench.py --depth 3 --out quench_n3.csv
    python scripts/depth_convergence.py quench_n2.csv quench_n3.csv
"""
from __future__ import annotations

import argparse
import csv


def _read(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("shallow", help="trajectory of the shallower network")
    p.add_argument("deep", help="trajectory of the deeper network")
    args = p.parse_args(argv)
    a, b = _read(args.shallow), _read(args.deep)
    if [r["time"] for r in a] != [r["time"] for r in b]:
        raise SystemExit("error: trajectories use different measurement times")
    ok = True
    for name in ("sx", "f_Q"):
        d_ed = max(abs(r[name] - r[f"{name}_ed"]) for r in a)
        d_depth = max(abs(r[name] - s[name]) for r, s in zip(a, b))
        ratio = d_ed / d_depth
        ok &= 1 / 3 <= ratio <= 3
        print(f"{name}: max|shallow - ED| {d_ed:.3e}  max|shallow - deep| {d_depth:.3e}  ratio {ratio:.2f}")
    print("depth difference bounds the ED error within a factor of 3" if ok else "ratio outside [1/3, 3]")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
