"""Recover (swc, sor, m) from interior observations, one run per seed."""

from _common import dump, load, parser

from blpinn import experiments as ex


def main():
    args = parser(__doc__, "config=identify_random.toml").parse_args()
    cfg = load(args.config)
    rows = []
    for seed in args.seeds:
        row = ex.identify_run(cfg, seed)
        print(f"seed {seed}: params {row['params']} mse_data {row['mse_data']:.3e} rel_l2 {row['rel_l2']:.4f}")
        rows.append(row)
    dump(rows, args.out)


if __name__ == "__main__":
    main()
