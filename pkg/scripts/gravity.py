"""Adversarial solve of the gravity-segregation problem next to the horizontal one."""

import dataclasses

from _common import dump, load, parser

from blpinn import experiments as ex


def main():
    args = parser(__doc__, "config=gan_gravity.toml", "horizontal=gan_diffusion.toml").parse_args()
    grav, horiz = load(args.config), load(args.horizontal)
    if grav.gan != horiz.gan:
        print("warning: the two configurations use different adversarial budgets")
    prof = ex.true_profile(grav)
    print("gravity shock speeds:", [round(s.speed, 4) for s in prof.shocks()])
    rows = []
    for seed in args.seeds:
        row = {"seed": seed}
        for name, cfg in (("gravity", grav), ("horizontal", horiz)):
            _, rep, err = ex.gan_run(cfg, seed)
            row[name] = {"snapshot_rel_l2": err, **dataclasses.asdict(rep)}
        print(f"seed {seed}: gravity {row['gravity']['snapshot_rel_l2']:.4f}  "
              f"horizontal {row['horizontal']['snapshot_rel_l2']:.4f}")
        rows.append(row)
    dump(rows, args.out)


if __name__ == "__main__":
    main()
