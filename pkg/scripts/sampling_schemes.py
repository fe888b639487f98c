"""Compare random, fixed-well and early-time observation layouts for identification."""

import numpy as np
from _common import dump, load, parser

from blpinn import experiments as ex


def main():
    args = parser(__doc__, "config=sampling_schemes.toml").parse_args()
    rows = ex.sampling_study(load(args.config), args.seeds)
    for scheme in ex.SAMPLING_SCHEMES:
        sub = [r for r in rows if r["scheme"] == scheme]
        print(f"{scheme:12s} median mse_data {np.median([r['mse_data'] for r in sub]):.3e}  "
              f"median late/early mse_pde {np.median([r['pde_growth'] for r in sub]):.3g}  "
              f"median m {np.median([r['params']['m'] for r in sub]):.3f}")
    dump(rows, args.out)


if __name__ == "__main__":
    main()
