"""Boundary-only inference of the m = 3 problem, from scratch and from an m = 2 fit."""

import numpy as np
from _common import dump, load, parser

from blpinn import experiments as ex


def main():
    args = parser(__doc__, "pretrain=pretrain_m2.toml", "config=transfer_m3.toml").parse_args()
    rows = ex.transfer_study(load(args.pretrain), load(args.config), args.seeds)
    for r in rows:
        print(f"seed {r['seed']}: vanilla {r['vanilla_rel_l2']:.4f}  transfer {r['transfer_rel_l2']:.4f}")
    print(f"median: vanilla {np.median([r['vanilla_rel_l2'] for r in rows]):.4f}  "
          f"transfer {np.median([r['transfer_rel_l2'] for r in rows]):.4f}")
    dump(rows, args.out)


if __name__ == "__main__":
    main()
