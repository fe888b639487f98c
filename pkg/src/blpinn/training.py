"""Deterministic PINN training: identification, inference and transfer.

Training runs on torch in float64. A :class:`PinnModel` couples a
:class:`~blpinn.network.DenseNet` (whose numpy arrays are updated in place)
with the PDE parameters, some of which may be learnable.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import network, oracle, physics
from .errors import ConfigError, TrainingDiverged
from .oracle import SampleSet

torch.set_default_dtype(torch.float64)

log = logging.getLogger(__name__)

MODES = ("identify", "infer")


@dataclass
class TrainConfig:
    mode: str = "identify"
    epochs: int = 10_000
    learning_rate: float = 1e-3
    omega: float = 1.0
    batch: Optional[int] = None  # None trains full batch
    seed: int = 0
    freeze_first_k: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # geometric decay of the step size down to this value at the last epoch
    lr_final: Optional[float] = None
    log_every: int = 100
    # identification only: also penalize the residual on samples.collocation
    use_collocation: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.omega < 0:
            raise ConfigError("omega must be nonnegative")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.batch is not None and self.batch <= 0:
            raise ConfigError("batch must be positive")
        if self.freeze_first_k < 0:
            raise ConfigError("freeze_first_k must be nonnegative")
        if self.lr_final is not None and not 0 < self.lr_final <= max(self.learning_rate, 0):
            raise ConfigError("lr_final must lie in (0, learning_rate]")


def _col(a) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a, dtype=np.float64)).reshape(-1, 1)


class PinnModel:
    """Saturation network plus (possibly learnable) PDE parameters."""

    def __init__(self, net: network.DenseNet, params: physics.PdeParams = physics.PdeParams(),
                 flux: physics.FluxSpec = "corey"):
        self.net = net
        self.params = params
        self.flux = flux
        self.layers = net.torch_layers()
        self.raw = {
            name: torch.tensor(physics.to_unconstrained(name, getattr(params, name)), requires_grad=True)
            for name in sorted(params.learnable)
        }

    def live_params(self):
        return self.params.live(**{n: physics.from_unconstrained(n, r) for n, r in self.raw.items()})

    def current_params(self) -> physics.PdeParams:
        with torch.no_grad():
            vals = {n: float(physics.from_unconstrained(n, r)) for n, r in self.raw.items()}
        return self.params.updated(**vals)

    def trainable(self) -> list[torch.Tensor]:
        out = [p for layer in self.layers for p in layer if p.requires_grad]
        return out + list(self.raw.values())

    def saturation(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return network.torch_forward(self.layers, torch.cat([x, t], dim=1), self.net.spec.activation)

    def residual(self, x, t, with_saturation: bool = False):
        x = _col(x).clone().requires_grad_(True)
        t = _col(t).clone().requires_grad_(True)
        return physics.residual(self.saturation, self.live_params(), self.flux, x, t,
                                with_saturation=with_saturation)

    def predict(self, x, t) -> np.ndarray:
        with torch.no_grad():
            return self.saturation(_col(x), _col(t)).numpy().ravel()

    def state(self) -> np.ndarray:
        raw = [float(r.detach()) for r in self.raw.values()]
        return np.concatenate([network.flatten_params(self.net), raw])

    def restore(self, state: np.ndarray) -> None:
        n = self.net.spec.n_params()
        network.assign_params(self.net, state[:n])
        with torch.no_grad():
            for r, v in zip(self.raw.values(), state[n:]):
                r.fill_(float(v))


def loss_identify(model: PinnModel, samples: SampleSet, omega: float = 1.0,
                  rows: Optional[np.ndarray] = None, colloc_rows: Optional[np.ndarray] = None,
                  use_collocation: bool = False) -> dict[str, torch.Tensor]:
    """Data misfit plus ``omega`` times the residual, both at the data points."""
    data = samples.data if rows is None else samples.data[rows]
    if len(data) == 0:
        raise ConfigError("identification needs labeled data")
    r, s = model.residual(data[:, 0], data[:, 1], with_saturation=True)
    l_data = torch.mean((s - _col(data[:, 2])) ** 2)
    l_pde = torch.mean(r ** 2)
    if use_collocation and len(samples.collocation):
        col = samples.collocation if colloc_rows is None else samples.collocation[colloc_rows]
        r_c = model.residual(col[:, 0], col[:, 1])
        l_pde = (l_pde * len(data) + torch.sum(r_c ** 2)) / (len(data) + len(col))
    return {"total": l_data + omega * l_pde, "data": l_data, "pde": l_pde}


def loss_infer(model: PinnModel, samples: SampleSet,
               colloc_rows: Optional[np.ndarray] = None) -> dict[str, torch.Tensor]:
    """Initial-line, boundary and collocation-residual mean squares."""
    if len(samples.initial) == 0 or len(samples.boundary) == 0:
        raise ConfigError("inference needs initial and boundary data")
    if len(samples.collocation) == 0:
        raise ConfigError("inference needs collocation points")
    init = samples.initial
    s0 = model.saturation(_col(init[:, 0]), torch.zeros(len(init), 1))
    l_init = torch.mean((s0 - _col(init[:, 1])) ** 2)
    bnd = samples.boundary
    l_bnd = torch.zeros(())
    for side in np.unique(bnd[:, 1]):
        rows = bnd[bnd[:, 1] == side]
        sb = model.saturation(_col(rows[:, 1]), _col(rows[:, 0]))
        l_bnd = l_bnd + torch.mean((sb - _col(rows[:, 2])) ** 2)
    col = samples.collocation if colloc_rows is None else samples.collocation[colloc_rows]
    r = model.residual(col[:, 0], col[:, 1])
    l_pde = torch.mean(r ** 2)
    return {"total": l_init + l_bnd + l_pde, "initial": l_init, "boundary": l_bnd, "pde": l_pde}


def check_collocation_balance(samples: SampleSet) -> bool:
    c = samples.counts
    ok = c["Nr"] >= 10 * (c["N0"] + c["Nb"])
    if not ok:
        warnings.warn(f"only {c['Nr']} collocation points for {c['N0'] + c['Nb']} "
                      "initial/boundary points; inference usually needs many more", stacklevel=2)
    return ok


def train(model: PinnModel, samples: SampleSet, cfg: TrainConfig,
          callback: Optional[Callable[[int, PinnModel], bool]] = None) -> list[dict]:
    """Adam on the mode's loss; returns the logged history.

    ``callback(epoch, model)`` runs after every update; returning True stops
    training early.
    """
    if cfg.freeze_first_k:
        frozen = network.set_frozen(model.net, cfg.freeze_first_k).frozen
        if frozen != model.net.frozen:
            model.net.frozen = frozen
            model.layers = model.net.torch_layers()
    if cfg.mode == "infer":
        check_collocation_balance(samples)
    params = model.trainable()
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    sched = None
    if cfg.lr_final is not None:
        gamma = (cfg.lr_final / cfg.learning_rate) ** (1.0 / cfg.epochs)
        sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    last_finite = model.state()

    for epoch in range(1, cfg.epochs + 1):
        rows = colloc = None
        if cfg.batch is not None:
            if len(samples.data) > cfg.batch:
                rows = rng.choice(len(samples.data), cfg.batch, replace=False)
            if len(samples.collocation) > cfg.batch:
                colloc = rng.choice(len(samples.collocation), cfg.batch, replace=False)
        if cfg.mode == "identify":
            terms = loss_identify(model, samples, cfg.omega, rows, colloc, cfg.use_collocation)
        else:
            terms = loss_infer(model, samples, colloc)
        total = terms["total"]
        if not torch.isfinite(total):
            model.restore(last_finite)
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", epoch, last_finite)
        opt.zero_grad()
        total.backward()
        opt.step()
        if sched is not None:
            sched.step()
        last_finite = model.state()
        if epoch % cfg.log_every == 0 or epoch == 1 or epoch == cfg.epochs:
            history.append(_log_row(epoch, terms, model))
        if callback is not None and callback(epoch, model):
            if history[-1]["epoch"] != epoch:
                history.append(_log_row(epoch, terms, model))
            break
    return history


def _log_row(epoch, terms, model) -> dict:
    row = {"epoch": epoch}
    row.update({k: float(v.detach()) for k, v in terms.items()})
    cur = model.current_params()
    row.update({f"param_{n}": getattr(cur, n) for n in sorted(model.raw)})
    return row


def running_min(history: list[dict], key: str = "total") -> list[float]:
    return list(np.minimum.accumulate([h[key] for h in history]))


@dataclass
class ErrorReport:
    mse_data: float
    mse_pde: float
    param_error: dict[str, float] = field(default_factory=dict)
    rel_l2: float = 0.0
    params: dict[str, float] = field(default_factory=dict)

    @property
    def total_param_error(self) -> float:
        return float(sum(self.param_error.values()))

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self) | {"total_param_error": self.total_param_error},
                          indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def eval_grid(nx: int = 101, nt: int = 101):
    if nx <= 0 or nt <= 0:
        raise ConfigError("grid resolution must be positive")
    xs, ts = np.linspace(0.0, 1.0, nx), np.linspace(0.0, 1.0, nt)
    X, T = np.meshgrid(xs, ts)
    return X.ravel(), T.ravel()


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.linalg.norm(pred - truth) / max(np.linalg.norm(truth), 1e-300))


def error_report(model: PinnModel, profile: oracle.SolutionProfile, grid_resolution=(101, 101),
                 true_params: Optional[physics.PdeParams] = None, x0: float = 0.0,
                 region: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None) -> ErrorReport:
    """Data, residual and parameter errors on a uniform (x, t) grid.

    Predictions are clipped to [0, 1] before comparison. ``region`` optionally
    restricts the averages to a boolean mask of the grid.
    """
    x, t = eval_grid(*grid_resolution)
    if region is not None:
        keep = region(x, t)
        x, t = x[keep], t[keep]
    truth = oracle.evaluate_profile(profile, x, t, x0)
    r, s = model.residual(x, t, with_saturation=True)
    pred = np.clip(s.detach().numpy().ravel(), 0.0, 1.0)
    cur = model.current_params()
    true_params = true_params or model.params
    return ErrorReport(
        mse_data=float(np.mean((pred - truth) ** 2)),
        mse_pde=float(torch.mean(r.detach() ** 2)),
        param_error={n: abs(getattr(cur, n) - getattr(true_params, n)) for n in sorted(model.raw)},
        rel_l2=relative_l2(pred, truth),
        params={n: getattr(cur, n) for n in sorted(model.raw)},
    )


def transfer_train(checkpoint, samples: SampleSet, freeze_first_k: int, cfg: TrainConfig,
                   params: physics.PdeParams = physics.PdeParams(), flux: physics.FluxSpec = "corey",
                   expected_spec: Optional[network.NetSpec] = None,
                   callback=None) -> tuple[PinnModel, list[dict]]:
    """Load a pretrained network, freeze its first layers and train on ``samples``."""
    net = checkpoint if isinstance(checkpoint, network.DenseNet) else network.load_checkpoint(checkpoint)
    if expected_spec is not None and (
            net.spec.input_dim != expected_spec.input_dim
            or net.spec.layer_widths != expected_spec.layer_widths
            or net.spec.activation != expected_spec.activation):
        raise ConfigError("checkpoint architecture does not match the configured network")
    net = network.set_frozen(net, freeze_first_k)
    model = PinnModel(net, params, flux)
    cfg = TrainConfig(**{**asdict(cfg), "freeze_first_k": freeze_first_k})
    history = train(model, samples, cfg, callback)
    return model, history
