#!/usr/bin/env python3
"""Resolution x preprocessing sweep on a synthetic corpus.

Usage: python scripts/run_resolution_sweep.py [workdir] [--per-class N]
       [--phis 300,...,1000] [--modes rgb,gray,macenko]
"""

import argparse
import json
import subprocess
import sys
import tempfile
from pathlib import Path


def sh(*argv):
    print("+", " ".join(str(a) for a in argv), file=sys.stderr)
    out = subprocess.run(
        [sys.executable, "-m", "wsi_pipeline.cli", *map(str, argv)],
        check=True,
        capture_output=True,
        text=True,
    )
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("workdir", nargs="?", default=None)
    ap.add_argument("--per-class", type=int, default=2)
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--phis", default="300,400,500,600,700,800,900,1000")
    ap.add_argument("--modes", default="rgb,gray,macenko")
    args = ap.parse_args()

    work = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="wsi-sweep-"))
    corpus = work / "corpus"
    sh(
        "synth", "--out", corpus, "--per-class", args.per_class, "--seed", args.seed,
        "--slide-px", "704", "--two-blob-prob", "0", "--blob-radius-frac", "0.42", "--json",
    )

    config = work / "run.toml"
    config.write_text(
        f"""
[paths]
slides_dir = "{corpus}/slides"
annotations_dir = "{corpus}/annotations"
metadata_dir = "{corpus}/metadata"
output_dir = "{work}/out"

[patch]
coverage_min = 0.6

[split]
test_fraction_per_class = 0.3
val_rois_per_class = 0

[train]
epochs = 300

[run]
workers = 2
""",
        encoding="utf-8",
    )

    summary = sh(
        "sweep", "--config", config, "--phis", args.phis, "--modes", args.modes, "--json"
    )
    print(f"{summary['rows']} rows -> {summary['csv']}")
    print(Path(summary["csv"]).read_text())


if __name__ == "__main__":
    main()
