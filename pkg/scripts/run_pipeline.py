#!/usr/bin/env python3
"""Small end-to-end run: render a dataset, train, explain one frame, shift it.

Defaults are sized for a quick demo (~20 s). For a model that actually clears
the convergence bar, use --scenes 2000 --epochs 30 (~5 min).
"""

import argparse
import json
import sys
from pathlib import Path

from visback.cli import main as cli


def run(argv) -> int:
    rc = cli(argv)
    if rc != 0:
        print(f"step failed with exit code {rc}: {' '.join(argv)}", file=sys.stderr)
        sys.exit(rc)
    return rc


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/demo", help="output directory")
    ap.add_argument("--scenes", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", default="toy", help="built-in name or config JSON path")
    args = ap.parse_args()

    root = Path(args.out)
    data = root / "data"
    model = root / "model.pnw"

    run(["gen", "--scenes", str(args.scenes), "--seed", str(args.seed), "--out", str(data)])
    run(["train", "--config", args.config, "--data", str(data), "--out", str(model),
         "--epochs", str(args.epochs), "--seed", str(args.seed)])

    frame = data / "frames" / "000000.ppm"
    run(["explain", "--weights", str(model), "--image", str(frame),
         "--out", str(root / "explain"), "--mask-trace"])
    run(["shift", "--weights", str(model), "--image", str(frame),
         "--out", str(root / "shift")])

    summary = json.loads((root / "shift" / "summary.json").read_text())
    print("\nshift-experiment fits:")
    for mode, fit in summary["series"].items():
        print(f"  {mode:7s} slope {fit['slope']:+.4e}  r2 {fit['r_squared']:.3f}")
    print(f"\nartifacts under {root}/")


if __name__ == "__main__":
    main()
