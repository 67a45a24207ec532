"""Run the evaluation grid on a synthetic corpus and print a summary table.

    python3 scripts/run_experiment.py --out results/ --videos 20 --size 128 --frames 2
"""

import argparse
import math

from custego.evaluation import METRICS, ExperimentConfig, run_experiment
from custego.frame_io import synthetic_corpus
from custego.stc import StcParams


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--videos", type=int, default=20)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--frames", type=int, default=2)
    ap.add_argument("--qps", default="26,32,38")
    ap.add_argument("--payloads", default="0.1,0.3,0.5")
    ap.add_argument("--schemes", default="full,8x8,tew")
    ap.add_argument("--repeats", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    corpus = synthetic_corpus(args.videos, args.frames, args.size, args.size, args.seed)
    cfg = ExperimentConfig(
        qps=tuple(int(q) for q in args.qps.split(",")),
        payloads=tuple(float(p) for p in args.payloads.split(",")),
        schemes=tuple(args.schemes.split(",")),
        seed=args.seed,
        repeats=args.repeats,
        stc=StcParams(7, None, args.seed),
        jobs=args.jobs,
    )
    summary = run_experiment(corpus, cfg, args.out).summary()
    cols = METRICS + ("accuracy",)
    print(f"{'grid point':<24}" + "".join(f"{c:>18}" for c in cols))
    for key, vals in sorted(summary["grid"].items()):
        cells = []
        for c in cols:
            v = vals.get(c, math.nan)
            cells.append(f"{v:>18.4g}" if isinstance(v, float) else f"{v!s:>18}")
        print(f"{key:<24}" + "".join(cells))
    print(f"tables written to {args.out}")


if __name__ == "__main__":
    main()
