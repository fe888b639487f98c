"""Ensemble spread of a generator trained on noisy initial data."""

from _common import dump, load, parser

from blpinn import experiments as ex


def main():
    args = parser(__doc__, "config=uq_noisy_initial.toml").parse_args()
    cfg = load(args.config)
    rows = []
    for seed in args.seeds:
        res = ex.uq_study(cfg, seed)
        peaks = ", ".join(f"t={p['t']:.2f}: {p['argmax_std']:.3f} ({p['distance']:.3f})" for p in res["peaks"])
        print(f"seed {seed}: rel_l2 {res['rel_l2']:.4f} coverage {res['coverage']:.3f} peaks {peaks}")
        rows.append(res)
    dump(rows, args.out)


if __name__ == "__main__":
    main()
