"""Correlate pruning-based importance with log corpus size over several seeds.

    python scripts/estimation_sweep.py --seeds 0 1 2 3 4
"""

import argparse
import sys
from dataclasses import replace

from lslolab.experiments import EstimationConfig, estimation_run


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--ratio", type=float, default=None, help="final pruning ratio (default 0.7)")
    args = ap.parse_args(argv)
    cfg = EstimationConfig() if args.ratio is None else replace(EstimationConfig(), ratio=args.ratio)
    sizes = {l.code: l.corpus_size for l in cfg.languages}
    print("languages: " + ", ".join(f"{k}={v}" for k, v in sizes.items()))
    positive = 0
    for seed in args.seeds:
        r = estimation_run(seed, cfg)
        positive += r.r > 0
        means = " ".join(f"{k}={v:+.2f}" for k, v in r.language_means.items())
        print(f"seed {seed}: r={r.r:+.3f} p={r.p_value:.4f} {means} ({r.seconds:.0f}s)", flush=True)
    print(f"r > 0 in {positive}/{len(args.seeds)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
