"""Run every scenario under scenarios/ and print one summary line each."""

import argparse
from pathlib import Path

from yamabelab.cli import main

ROOT = Path(__file__).resolve().parents[1]


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "reports"))
    ap.add_argument("--jobs", type=int, default=3)
    return ap.parse_args()


if __name__ == "__main__":
    args = parse_args()
    cfgs = sorted(str(p) for p in (ROOT / "scenarios").glob("*.cfg"))
    raise SystemExit(main(["--out", args.out, "--jobs", str(args.jobs), "minimize", *cfgs]))
