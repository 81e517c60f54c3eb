"""Sweep stepsize rules on one zero-residual problem through the CLI and print the summary CSV."""
import argparse
import json
import tempfile
from pathlib import Path

from inewt import cli

PROBLEM = {"family": "zero_residual", "seed": 0, "n": 3, "m": 2, "nonquadratic": True,
           "condition_target": 1.05, "logcosh_weight": 0.05}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="output directory (default: a temporary one)")
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()
    out = Path(args.out or tempfile.mkdtemp(prefix="inewt-sweep-"))
    out.mkdir(parents=True, exist_ok=True)

    sweep = {
        "base": {"problem": PROBLEM, "stepsize": {"rule": "constant"}, "max_cycles": 5000,
                 "x0": [3.0, 3.0, 3.0]},
        "grid": {"gamma": [0.005, 0.01, 0.02, 0.05, 0.1]},
    }
    cfg = out / "sweep.json"
    cfg.write_text(json.dumps(sweep))
    argv = ["sweep", "--config", str(cfg), "--out", str(out)]
    if args.jobs:
        argv += ["--jobs", str(args.jobs)]
    status = cli.main(argv)
    print((out / "summary.csv").read_text())
    raise SystemExit(status)


if __name__ == "__main__":
    main()
