"""Five-seed desk reproduction: seed-pretrain vs full fine-tune vs LSLo+GPS.

    python scripts/desk_reproduction.py --seeds 0 1 2 3 4 --out runs/desk.json
"""

import argparse
import json
import sys
from dataclasses import replace

from lslolab.experiments import DeskConfig, desk_reproduction


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--rank-policy", default=None, help='e.g. "2;2;32"')
    ap.add_argument("--gps", type=float, default=None, help="final pruning ratio for the high-resource adapters")
    ap.add_argument("--out", default=None, help="write per-seed results as JSON")
    args = ap.parse_args(argv)

    cfg = DeskConfig()
    if args.rank_policy:
        cfg = replace(cfg, rank_policy=args.rank_policy)
    if args.gps is not None:
        cfg = replace(cfg, gps_ratio=args.gps)

    rows = []
    print("seed  pre_H  pre_L  ft_H  ft_L  lslo_H  lslo_L  ft_trace(e1->eT)  secs")
    for seed in args.seeds:
        r = desk_reproduction(seed, cfg)
        rows.append(r.to_dict())
        print(
            f"{seed:>4}  {r.pretrain[0]:5.1f}  {r.pretrain[1]:5.1f}  {r.ft_all[0]:4.1f}  {r.ft_all[1]:4.1f}"
            f"  {r.lslo[0]:6.1f}  {r.lslo[1]:6.1f}  {r.ft_high_trace[0]:5.1f}->{r.ft_high_trace[-1]:5.1f}  {r.seconds:4.0f}",
            flush=True,
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"config": repr(cfg), "runs": rows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
