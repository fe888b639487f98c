"""Command-line interface: ``blpinn {gen-data,train,evaluate,uq}``.

Exit codes: 0 on success, 1 on runtime failure, 2 on configuration errors.
Existing output files are never replaced unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import experiments as ex
from . import network, oracle, pigan, training
from .errors import ConfigError

log = logging.getLogger("blpinn")

MODES = ("identify", "infer", "transfer", "gan")


class _Writer:
    """Collects output files and refuses to clobber existing ones."""

    def __init__(self, out: Path, force: bool):
        self.out = out
        self.force = force

    def check(self, *names: str) -> None:
        clash = [n for n in names if (self.out / n).exists()]
        if clash and not self.force:
            raise ConfigError(f"refusing to overwrite {', '.join(clash)} in {self.out} (use --force)")

    def text(self, name: str, content: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(content)
        return path


def _metrics_log(history: list[dict]) -> str:
    lines = []
    for row in history:
        parts = [f"epoch={row['epoch']}"]
        parts += [f"{k}={v!r}" for k, v in row.items() if k != "epoch"]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def cmd_gen_data(cfg: ex.RunConfig, seed: int, w: _Writer) -> None:
    w.check("samples.csv", "oracle.csv")
    seeds = ex.split_seed(seed)
    profile = ex.true_profile(cfg)
    samples = ex.make_samples(cfg, seeds["data"], profile)
    w.text("samples.csv", samples.to_csv())
    w.text("oracle.csv", ex.oracle_csv(*ex.oracle_snapshots(cfg, profile)))
    log.info("wrote %s samples to %s", samples.counts, w.out)


def _load_samples(args, cfg: ex.RunConfig, seeds) -> oracle.SampleSet:
    if args.data:
        path = Path(args.data)
        if not path.is_file():
            raise ConfigError(f"dataset {path} does not exist")
        return oracle.SampleSet.from_csv(path)
    return ex.make_samples(cfg, seeds["data"])


def cmd_train(cfg: ex.RunConfig, seed: int, w: _Writer, args) -> None:
    mode = args.mode
    if mode == "transfer":
        ckpt = args.checkpoint or cfg.transfer.checkpoint
        if not ckpt or not Path(ckpt).is_file():
            raise ConfigError(f"transfer mode needs an existing pretrained checkpoint (got {ckpt!r})")
    names = (["generator.ckpt", "discriminator.ckpt", "posterior.ckpt"] if mode == "gan" else ["model.ckpt"])
    w.check(*names, "metrics.log", "report.json")
    cfg, seeds = ex.with_seed(cfg, seed)
    samples = _load_samples(args, cfg, seeds)
    if mode == "gan":
        res = ex.run_gan(cfg, samples)
        for name, net in zip(names, (res.generator, res.discriminator, res.posterior)):
            w.out.mkdir(parents=True, exist_ok=True)
            network.save_checkpoint(net, w.out / name)
        report = ex.gan_report(cfg, res.generator, res.params, seed=seeds["uq"])
        history = res.history
    else:
        if mode == "identify":
            model, history = ex.run_identify(cfg, samples, seeds["network"])
        elif mode == "infer":
            model, history = ex.run_infer(cfg, samples, seeds["network"])
        else:
            pre = network.load_checkpoint(args.checkpoint or cfg.transfer.checkpoint)
            model, history = ex.run_infer(cfg, samples, seeds["network"], pretrained=pre)
        w.out.mkdir(parents=True, exist_ok=True)
        network.save_checkpoint(model.net, w.out / "model.ckpt")
        report = ex.report_for(cfg, model)
    w.text("metrics.log", _metrics_log(history))
    w.text("report.json", report.to_json())
    log.info("%s finished: mse_data=%.4g rel_l2=%.4g", mode, report.mse_data, report.rel_l2)


def cmd_evaluate(cfg: ex.RunConfig, seed: int, w: _Writer, args) -> None:
    if args.nx is not None:
        if args.nx <= 0:
            raise ConfigError("grid size must be positive")
        cfg = dataclasses.replace(cfg, evaluate=dataclasses.replace(cfg.evaluate, nx=args.nx))
    w.check("snapshots.csv", "report.json")
    net = _checkpoint(args.checkpoint)
    profile = ex.true_profile(cfg)
    t, x, truth = ex.oracle_snapshots(cfg, profile)
    if net.spec.input_dim > 2:
        pred = pigan.mean_prediction(net, x, t, cfg.evaluate.n_z)
        report = ex.gan_report(cfg, net, cfg.physics, profile, seed=ex.split_seed(seed)["uq"])
    else:
        expected = cfg.network.spec(0)
        if net.spec.layer_widths != expected.layer_widths or net.spec.activation != expected.activation:
            raise ConfigError("checkpoint architecture does not match [network] in the config")
        model = training.PinnModel(net, dataclasses.replace(cfg.physics, learnable=frozenset()),
                                   cfg.problem.flux)
        pred = model.predict(x, t)
        report = ex.report_for(cfg, model, profile)
    w.text("snapshots.csv", ex.snapshot_csv(t, x, pred, truth))
    w.text("report.json", report.to_json())


def cmd_uq(cfg: ex.RunConfig, seed: int, w: _Writer, args) -> None:
    n = args.n_members if args.n_members is not None else cfg.uq.n_members
    if n < 2:
        raise ConfigError("n_members must be at least 2")
    w.check("ensemble.csv")
    net = _checkpoint(args.checkpoint)
    if net.spec.input_dim <= 2:
        raise ConfigError("uq needs a generator checkpoint with latent inputs")
    grid = (np.linspace(0.0, 1.0, cfg.uq.nx), oracle.SNAPSHOT_TIMES)
    ens = pigan.uq_ensemble(net, n, grid, ex.split_seed(seed)["uq"])
    w.text("ensemble.csv", ens.to_csv())


def _checkpoint(path: Optional[str]) -> network.DenseNet:
    if not path or not Path(path).is_file():
        raise ConfigError(f"checkpoint {path!r} does not exist")
    return network.load_checkpoint(path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--seed", type=int, nargs="+", default=[0],
                        help="root seed; several seeds run as a sweep into OUT/seed-N")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--jobs", type=int, default=1, help="parallel processes for seed sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="blpinn", description="Physics-informed networks for 1-D Buckley-Leverett transport.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="sample training data and the reference solution")
    tr = sub.add_parser("train", parents=[common], help="train a network")
    tr.add_argument("--mode", choices=MODES, default="identify")
    tr.add_argument("--data", help="SampleSet CSV (default: sample from the config)")
    tr.add_argument("--checkpoint", help="pretrained network for --mode transfer")
    ev = sub.add_parser("evaluate", parents=[common], help="compare a checkpoint with the reference")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--nx", type=int, help="points per snapshot (default from config)")
    uq = sub.add_parser("uq", parents=[common], help="ensemble statistics of a generator")
    uq.add_argument("--checkpoint", required=True)
    uq.add_argument("--n-members", type=int)
    return p


COMMANDS = {
    "gen-data": lambda cfg, seed, w, args: cmd_gen_data(cfg, seed, w),
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "uq": cmd_uq,
}


def _run_one(args, seed: int, out: Path) -> int:
    try:
        cfg = ex.load_config(args.config)
        COMMANDS[args.command](cfg, seed, _Writer(out, args.force), args)
    except ConfigError as exc:
        print(f"blpinn: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        print(f"blpinn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs <= 0:
        print("blpinn: configuration error: --jobs must be positive", file=sys.stderr)
        return 2
    out = Path(args.out)
    seeds = list(dict.fromkeys(args.seed))
    if len(seeds) == 1:
        return _run_one(args, seeds[0], out)
    targets = [(args, s, out / f"seed-{s}") for s in seeds]
    if args.jobs == 1:
        codes = [_run_one(*t) for t in targets]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_run_one, *zip(*targets)))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
