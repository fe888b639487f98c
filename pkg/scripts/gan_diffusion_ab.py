"""Adversarial forward solve with and without artificial diffusion.

Reports the final snapshot error of each run and the epochs needed to reach
``--threshold``.
"""

import numpy as np
from _common import dump, load, parser

from blpinn import experiments as ex


def main():
    p = parser(__doc__, "config=gan_diffusion.toml")
    p.add_argument("--threshold", type=float, default=0.15)
    args = p.parse_args()
    rows = ex.diffusion_ab_study(load(args.config), args.seeds, args.threshold)
    for eps in sorted({r["epsilon"] for r in rows}, reverse=True):
        sub = [r for r in rows if r["epsilon"] == eps]
        print(f"epsilon {eps:g}: epochs {[r['epochs'] for r in sub]} "
              f"(median {np.median([r['epochs'] for r in sub]):.0f}), reached {[r['reached'] for r in sub]}")
    dump(rows, args.out)


if __name__ == "__main__":
    main()
