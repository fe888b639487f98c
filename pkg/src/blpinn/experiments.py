"""Run configurations and the end-to-end experiment pipelines.

A :class:`RunConfig` fully describes one reproduction: the physical problem,
how training data are drawn, the network, and the training settings. The
``run_*`` functions are shared by the command-line tool, the scripts and the
acceptance suite.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli
import torch

from . import network, oracle, physics, pigan, training
from .errors import ConfigError

SNAPSHOT_NX = 256
SEED_CONSUMERS = ("data", "network", "training", "gan", "uq")


@dataclass
class ProblemConfig:
    flux: str = "corey"
    s_left: float = 1.0
    s_right: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        physics.flux_function(self.flux)


@dataclass
class InitConfig:
    """Starting values of the learnable parameters (identification)."""

    learnable: tuple[str, ...] = ()
    values: dict[str, float] = field(default_factory=dict)


@dataclass
class DataConfig:
    scheme: str = "random"
    n: int = 1000
    noise_sigma: float = 0.0
    noise_target: str = "all"
    n_collocation: int = 0
    wells: tuple[float, ...] = oracle.DEFAULT_WELLS

    def __post_init__(self):
        if self.scheme not in oracle.SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.n <= 0 or self.n_collocation < 0 or self.noise_sigma < 0:
            raise ConfigError("data counts and noise must be nonnegative (n positive)")


@dataclass
class NetworkConfig:
    widths: tuple[int, ...] = network.DEFAULT_HIDDEN
    activation: str = "tanh"

    def spec(self, seed: int) -> network.NetSpec:
        return network.NetSpec(2, tuple(self.widths) + (1,), self.activation, seed)


@dataclass
class TransferConfig:
    checkpoint: Optional[str] = None
    freeze_first_k: int = 6


@dataclass
class EvalConfig:
    nx: int = SNAPSHOT_NX
    grid: tuple[int, int] = (101, 101)
    n_z: int = 64

    def __post_init__(self):
        if self.nx <= 0 or min(self.grid) <= 0 or self.n_z <= 0:
            raise ConfigError("evaluation grid sizes must be positive")


@dataclass
class UqConfig:
    n_members: int = 1000
    nx: int = SNAPSHOT_NX

    def __post_init__(self):
        if self.n_members < 2:
            raise ConfigError("n_members must be at least 2")


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    physics: physics.PdeParams = field(default_factory=physics.PdeParams)
    init: InitConfig = field(default_factory=InitConfig)
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: training.TrainConfig = field(default_factory=training.TrainConfig)
    gan: pigan.GanConfig = field(default_factory=pigan.GanConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    uq: UqConfig = field(default_factory=UqConfig)


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in raw.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - set(sections)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, f in sections.items():
        if name not in raw:
            continue
        if not isinstance(raw[name], dict):
            raise ConfigError(f"[{name}] must be a table")
        section = dict(raw[name])
        if name == "init":
            learnable = section.pop("learnable", ())
            kwargs[name] = InitConfig(tuple(learnable), {k: float(v) for k, v in section.items()})
            continue
        if name == "physics" and "learnable" in section:
            raise ConfigError("[physics] holds the true parameters; put learnable names in [init]")
        cls = f.default_factory  # every section is a dataclass with a no-arg factory
        kwargs[name] = _build(cls, section, name)
    cfg = RunConfig(**kwargs)
    bad = set(cfg.init.values) - set(cfg.init.learnable)
    if bad:
        raise ConfigError(f"[init] values given for non-learnable parameter(s): {sorted(bad)}")
    physics.PdeParams(learnable=set(cfg.init.learnable))  # validates names
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def split_seed(root: int) -> dict[str, int]:
    """Independent per-consumer seeds derived from one root seed."""
    if root < 0:
        raise ConfigError("seed must be nonnegative")
    states = np.random.SeedSequence(root).generate_state(len(SEED_CONSUMERS))
    return {name: int(s) for name, s in zip(SEED_CONSUMERS, states)}


def with_seed(cfg: RunConfig, root: int) -> tuple[RunConfig, dict[str, int]]:
    seeds = split_seed(root)
    cfg = dataclasses.replace(
        cfg,
        training=dataclasses.replace(cfg.training, seed=seeds["training"]),
        gan=dataclasses.replace(cfg.gan, seed=seeds["gan"]),
    )
    return cfg, seeds


# --- problem setup ----------------------------------------------------------------

def true_profile(cfg: RunConfig) -> oracle.SolutionProfile:
    flux = oracle.make_flux(cfg.problem.flux, cfg.physics)
    return oracle.riemann_solve(flux, cfg.problem.s_left, cfg.problem.s_right)


def make_samples(cfg: RunConfig, seed: int, profile=None) -> oracle.SampleSet:
    profile = profile or true_profile(cfg)
    d = cfg.data
    return oracle.sample_training_data(profile, d.scheme, d.n, d.noise_sigma, seed, wells=d.wells,
                                       n_collocation=d.n_collocation, x0=cfg.problem.x0,
                                       noise_target=d.noise_target)


def start_params(cfg: RunConfig) -> physics.PdeParams:
    return dataclasses.replace(cfg.physics.updated(**cfg.init.values), learnable=frozenset(cfg.init.learnable))


def oracle_snapshots(cfg: RunConfig, profile=None, nx: Optional[int] = None):
    """(t, x, S) arrays on the snapshot grid."""
    profile = profile or true_profile(cfg)
    nx = nx or cfg.evaluate.nx
    if nx <= 0:
        raise ConfigError("grid size must be positive")
    xs = np.linspace(0.0, 1.0, nx)
    X, T = np.meshgrid(xs, np.array(oracle.SNAPSHOT_TIMES))
    return T.ravel(), X.ravel(), oracle.evaluate_profile(profile, X.ravel(), T.ravel(), cfg.problem.x0)


def snapshot_csv(t, x, pred, truth) -> str:
    lines = ["t,x,s_pred,s_true"]
    lines += [f"{float(a)!r},{float(b)!r},{float(c)!r},{float(d)!r}" for a, b, c, d in zip(t, x, pred, truth)]
    return "\n".join(lines) + "\n"


def oracle_csv(t, x, s) -> str:
    lines = ["t,x,s"] + [f"{float(a)!r},{float(b)!r},{float(c)!r}" for a, b, c in zip(t, x, s)]
    return "\n".join(lines) + "\n"


# --- deterministic PINN runs -------------------------------------------------------

def run_identify(cfg: RunConfig, samples: oracle.SampleSet, net_seed: int, callback=None):
    net = network.init_xavier(cfg.network.spec(net_seed))
    model = training.PinnModel(net, start_params(cfg), cfg.problem.flux)
    tcfg = dataclasses.replace(cfg.training, mode="identify")
    history = training.train(model, samples, tcfg, callback)
    return model, history


def run_infer(cfg: RunConfig, samples: oracle.SampleSet, net_seed: int,
              pretrained: Optional[network.DenseNet] = None, callback=None):
    """Forward solve from initial/boundary data, optionally warm-started and frozen."""
    tcfg = dataclasses.replace(cfg.training, mode="infer")
    params = dataclasses.replace(cfg.physics, learnable=frozenset())
    if pretrained is not None:
        return training.transfer_train(pretrained, samples, cfg.transfer.freeze_first_k, tcfg, params,
                                       cfg.problem.flux, cfg.network.spec(net_seed), callback)
    net = network.init_xavier(cfg.network.spec(net_seed))
    model = training.PinnModel(net, params, cfg.problem.flux)
    return model, training.train(model, samples, dataclasses.replace(tcfg, freeze_first_k=0), callback)


def report_for(cfg: RunConfig, model: training.PinnModel, profile=None) -> training.ErrorReport:
    return training.error_report(model, profile or true_profile(cfg), tuple(cfg.evaluate.grid),
                                 true_params=cfg.physics, x0=cfg.problem.x0)


def snapshot_error(predict, cfg: RunConfig, profile=None) -> float:
    """Relative L2 error of ``predict(x, t)`` over the five snapshot times."""
    t, x, truth = oracle_snapshots(cfg, profile)
    return training.relative_l2(np.clip(predict(x, t), 0.0, 1.0), truth)


# --- adversarial runs -------------------------------------------------------------

def run_gan(cfg: RunConfig, samples: oracle.SampleSet, callback=None) -> pigan.GanResult:
    pde = dataclasses.replace(cfg.physics, learnable=frozenset(cfg.init.learnable))
    pde = pde.updated(**cfg.init.values)
    return pigan.train_gan(samples, pde, cfg.gan, cfg.problem.flux, callback)


def gan_report(cfg: RunConfig, gen: network.DenseNet, params: physics.PdeParams,
               profile=None, seed: int = 0) -> training.ErrorReport:
    """Error metrics of the mean-over-z generator on the evaluation grid."""
    profile = profile or true_profile(cfg)
    x, t = training.eval_grid(*cfg.evaluate.grid)
    truth = oracle.evaluate_profile(profile, x, t, cfg.problem.x0)
    pred = np.clip(pigan.mean_prediction(gen, x, t, cfg.evaluate.n_z), 0.0, 1.0)
    layers = gen.torch_layers()
    z = torch.as_tensor(np.random.default_rng(seed).standard_normal((len(x), gen.spec.input_dim - 2)))
    xt = torch.as_tensor(x).reshape(-1, 1).requires_grad_(True)
    tt = torch.as_tensor(t).reshape(-1, 1).requires_grad_(True)
    r = physics.residual(lambda a, b: pigan.generate_batch(layers, a, b, z), params, cfg.problem.flux, xt, tt)
    learn = sorted(params.learnable)
    return training.ErrorReport(
        mse_data=float(np.mean((pred - truth) ** 2)),
        mse_pde=float(torch.mean(r.detach() ** 2)),
        param_error={n: abs(getattr(params, n) - getattr(cfg.physics, n)) for n in learn},
        rel_l2=training.relative_l2(pred, truth),
        params={n: getattr(params, n) for n in learn},
    )


def gan_snapshot_error(cfg: RunConfig, gen: network.DenseNet, profile=None) -> float:
    return snapshot_error(lambda x, t: pigan.mean_prediction(gen, x, t, cfg.evaluate.n_z), cfg, profile)


def epochs_to_threshold(cfg: RunConfig, samples: oracle.SampleSet, threshold: float,
                        check_every: int = 250, profile=None) -> tuple[int, float, bool]:
    """Train a GAN until the snapshot error first drops below ``threshold``.

    Returns (epochs used, last measured error, reached). An unreached run
    reports the full budget.
    """
    profile = profile or true_profile(cfg)
    found = {"epoch": cfg.gan.epochs, "err": float("nan"), "hit": False}

    def cb(epoch, state):
        if epoch % check_every:
            return False
        err = gan_snapshot_error(cfg, state.gen, profile)
        found["err"] = err
        if err < threshold:
            found.update(epoch=epoch, hit=True)
            return True
        return False

    run_gan(cfg, samples, cb)
    return found["epoch"], found["err"], found["hit"]


# --- multi-run studies --------------------------------------------------------------

SAMPLING_SCHEMES = ("random", "fixed_wells", "early_time")


def _seeded_samples(cfg: RunConfig, seed: int, profile=None):
    cfg, seeds = with_seed(cfg, seed)
    return cfg, seeds, make_samples(cfg, seeds["data"], profile)


def pde_growth(cfg: RunConfig, model: training.PinnModel, profile=None) -> float:
    """mean R^2 after the early-time window divided by mean R^2 inside it."""
    profile = profile or true_profile(cfg)
    cut = oracle.EARLY_TIME_FRACTION
    kw = dict(grid_resolution=tuple(cfg.evaluate.grid), true_params=cfg.physics, x0=cfg.problem.x0)
    late = training.error_report(model, profile, region=lambda x, t: t > cut, **kw).mse_pde
    early = training.error_report(model, profile, region=lambda x, t: t <= cut, **kw).mse_pde
    return late / max(early, 1e-300)


def identify_run(cfg: RunConfig, seed: int, profile=None, callback=None) -> dict:
    """One identification run; returns the error report plus the residual growth."""
    profile = profile or true_profile(cfg)
    cfg, seeds, samples = _seeded_samples(cfg, seed, profile)
    model, _ = run_identify(cfg, samples, seeds["network"], callback)
    rep = report_for(cfg, model, profile)
    return {"scheme": cfg.data.scheme, "seed": seed, **dataclasses.asdict(rep),
            "pde_growth": pde_growth(cfg, model, profile)}


def sampling_study(cfg: RunConfig, seeds, schemes=SAMPLING_SCHEMES) -> list[dict]:
    profile = true_profile(cfg)
    rows = []
    for scheme in schemes:
        c = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, scheme=scheme))
        rows += [identify_run(c, s, profile) for s in seeds]
    return rows


def pretrain(cfg: RunConfig, seed: int) -> network.DenseNet:
    """Fit a network to labeled data of ``cfg`` (identification loss, fixed parameters)."""
    cfg, seeds, samples = _seeded_samples(cfg, seed)
    model, _ = run_identify(cfg, samples, seeds["network"])
    return model.net


def transfer_study(pre_cfg: RunConfig, cfg: RunConfig, seeds) -> list[dict]:
    """Paired vanilla and transfer inference runs under one training budget."""
    profile = true_profile(cfg)
    rows = []
    for seed in seeds:
        net = pretrain(pre_cfg, seed)
        c, s, samples = _seeded_samples(cfg, seed, profile)
        vanilla, _ = run_infer(c, samples, s["network"])
        warm, _ = run_infer(c, samples, s["network"], pretrained=net)
        rows.append({"seed": seed,
                     "vanilla_rel_l2": report_for(c, vanilla, profile).rel_l2,
                     "transfer_rel_l2": report_for(c, warm, profile).rel_l2})
    return rows


def gan_run(cfg: RunConfig, seed: int, profile=None, callback=None):
    """Train one GAN; returns (result, report on the evaluation grid, snapshot error)."""
    profile = profile or true_profile(cfg)
    cfg, seeds, samples = _seeded_samples(cfg, seed, profile)
    res = run_gan(cfg, samples, callback)
    rep = gan_report(cfg, res.generator, res.params, profile, seeds["uq"])
    return res, rep, gan_snapshot_error(cfg, res.generator, profile)


def diffusion_ab_study(cfg: RunConfig, seeds, threshold: float, check_every: int = 250) -> list[dict]:
    """Epochs to reach ``threshold`` with the configured diffusion and with none."""
    rows = []
    for eps in (cfg.physics.epsilon, 0.0):
        c = dataclasses.replace(cfg, physics=dataclasses.replace(cfg.physics, epsilon=eps))
        profile = true_profile(c)
        for seed in seeds:
            c2, _, samples = _seeded_samples(c, seed, profile)
            epoch, err, hit = epochs_to_threshold(c2, samples, threshold, check_every, profile)
            rows.append({"epsilon": eps, "seed": seed, "epochs": epoch, "error": err, "reached": hit})
    return rows


def uq_study(cfg: RunConfig, seed: int, band: float = 0.1) -> dict:
    """Train on noisy data and compare the ensemble spread with the noise-free reference.

    Per snapshot time, reports where the spread peaks against the shock
    location (times whose shock has left the domain are skipped) and the
    share of points farther than ``band`` from the shock whose reference
    value lies inside mean +/- 2 std.
    """
    profile = true_profile(cfg)
    res, rep, err = gan_run(cfg, seed, profile)
    xs = np.linspace(0.0, 1.0, cfg.uq.nx)
    ts = np.asarray(oracle.SNAPSHOT_TIMES, dtype=np.float64)
    ens = pigan.uq_ensemble(res.generator, cfg.uq.n_members, (xs, ts), split_seed(seed)["uq"])
    peaks, covered, counted = [], 0, 0
    for i, t in enumerate(ts):
        shocks = [p for p in oracle.shock_position(profile, float(t), cfg.problem.x0) if 0.0 <= p <= 1.0]
        truth = oracle.evaluate_profile(profile, xs, np.full_like(xs, t), cfg.problem.x0)
        far = np.ones_like(xs, dtype=bool)
        for p in shocks:
            far &= np.abs(xs - p) > band
        inside = (ens.lo2sd[i] <= truth) & (truth <= ens.hi2sd[i])
        covered += int(np.sum(inside & far))
        counted += int(np.sum(far))
        if shocks:
            peak = float(xs[np.argmax(ens.std[i])])
            peaks.append({"t": float(t), "argmax_std": peak,
                          "distance": min(abs(peak - p) for p in shocks)})
    return {"seed": seed, "rel_l2": err, "peaks": peaks, "coverage": covered / max(counted, 1),
            "mean_std": float(ens.std.mean())}
