#!/usr/bin/env python3
"""End-to-end desk demo: generate an oracle corpus, train a small model on
it, synthesize one of the held-out scores, and print the metric report.

    python3 scripts/run_pipeline.py --workdir /tmp/pipeline --songs 10 --steps 500
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from singsynth.cli import main as cli


def run(argv):
    print("+ singsynth " + " ".join(argv))
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--songs", type=int, default=10)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    work = Path(args.workdir)
    corpus = work / "corpus"
    run_dir = work / "run"
    run(["gen-data", "--songs", str(args.songs), "--seed", str(args.seed),
         "--out", str(corpus)])
    run(["train", "--manifest", str(corpus / "manifest.tsv"),
         "--out", str(run_dir), "--steps", str(args.steps),
         "--seed", str(args.seed)])
    run(["synth", "--score", str(corpus / "scores" / "song_0000.score"),
         "--checkpoint", str(run_dir / "checkpoint.bin"),
         "--out", str(work / "song_0000_synth.feat")])
    run(["eval", "--manifest", str(corpus / "manifest.tsv"),
         "--checkpoint", str(run_dir / "checkpoint.bin"),
         "--split", "holdout", "--out", str(work / "eval")])


if __name__ == "__main__":
    main()
