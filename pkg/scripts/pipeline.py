"""End-to-end run: reference, teacher, dataset, training and the three-way comparison.

Usage: python scripts/pipeline.py [OUT_DIR] [--set KEY=VALUE ...]
"""

import sys
from pathlib import Path

from ddfabc.cli import main


def run(out: Path, extra: list[str]) -> int:
    common = ["--out", str(out), *extra]
    steps = [
        ["reference", *common],
        ["dataset", *common],
        ["train", "--edge", str(out / "edge.ds"), "--corner", str(out / "corner.ds"), *common],
        ["compare", "--reference", str(out / "reference_probe.csv"),
         "--model", str(out / "edge.ddf"), "--corner-model", str(out / "corner.ddf"), *common],
    ]
    for argv in steps:
        print("$ ddfabc", " ".join(argv), flush=True)
        code = main(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    args = sys.argv[1:]
    out = Path(args.pop(0)) if args and not args[0].startswith("-") else Path("runs/pipeline")
    sys.exit(run(out, args))
