"""Physics-informed adversarial training with a latent-variable generator.

Three networks are trained together:

* generator ``p_theta(x, t, z) -> S`` with z ~ N(0, I);
* discriminator ``D_psi(x, t, S) -> logit``;
* posterior ``q_phi(x, t, S) -> z`` (mean of a unit-variance Gaussian).

Label convention: real samples carry label 0
and generated samples label 1, so ``sigmoid(D)`` estimates the probability
that a sample is generated and ``exp(D)`` estimates the density ratio
p_theta / q_data. ``swap_labels`` flips this.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import network, oracle, physics
from .errors import ConfigError, TrainingDiverged
from .oracle import SampleSet

log = logging.getLogger(__name__)

POSTERIOR_FORMS = ("gaussian", "logits")
SATURATION_LOGIT = 30.0
SATURATION_PATIENCE = 100


@dataclass
class GanConfig:
    latent_dim: int = 1
    w_pde: float = 1.0  # beta: weight of the physics term
    lambda_entropy: float = 0.5
    w_data: float = 0.0  # weight of the labeled misfit inside the physics term
    epochs: int = 15_000
    early_stop_epochs: int = 15_000
    d_steps: int = 1
    g_steps: int = 1
    lr_generator: float = 1e-3
    lr_discriminator: float = 1e-3
    lr_posterior: float = 1e-3
    # all three step sizes decay geometrically to this fraction by the last epoch
    lr_final_factor: Optional[float] = None
    seed: int = 0
    collocation_batch: Optional[int] = None  # None uses every collocation point each epoch
    resample_collocation: bool = False
    posterior_form: str = "gaussian"
    swap_labels: bool = False
    log_every: int = 100
    generator_widths: tuple[int, ...] = (20,) * 8
    discriminator_widths: tuple[int, ...] = (20,) * 4
    posterior_widths: tuple[int, ...] = (20,) * 4

    def __post_init__(self):
        if self.w_pde < 0 or self.w_data < 0:
            raise ConfigError("loss weights must be nonnegative")
        if not 0.0 <= self.lambda_entropy <= 1.0:
            raise ConfigError("lambda_entropy must lie in [0, 1]")
        if self.epochs <= 0 or self.early_stop_epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.latent_dim <= 0:
            raise ConfigError("latent_dim must be positive")
        if self.d_steps <= 0 or self.g_steps <= 0:
            raise ConfigError("d_steps and g_steps must be positive")
        if self.lr_final_factor is not None and not 0.0 < self.lr_final_factor <= 1.0:
            raise ConfigError("lr_final_factor must lie in (0, 1]")
        if self.posterior_form not in POSTERIOR_FORMS:
            raise ConfigError(f"posterior_form must be one of {POSTERIOR_FORMS}")
        for name in ("generator_widths", "discriminator_widths", "posterior_widths"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))

    @property
    def beta(self) -> float:
        return self.w_pde

    def specs(self) -> tuple[network.NetSpec, network.NetSpec, network.NetSpec]:
        s = self.seed
        return (
            network.NetSpec(2 + self.latent_dim, self.generator_widths + (1,), "tanh", s),
            network.NetSpec(3, self.discriminator_widths + (1,), "tanh", s + 1),
            network.NetSpec(3, self.posterior_widths + (self.latent_dim,), "tanh", s + 2),
        )


def generate(gen: network.DenseNet, x, t, z):
    """Generator output at one point on a tape (``x``, ``t``, ``z`` tape vars)."""
    z = list(z)
    if len(z) != gen.spec.input_dim - 2:
        raise ValueError(f"expected latent of size {gen.spec.input_dim - 2}, got {len(z)}")
    return network.forward(gen, [x, t] + z)[0]


def generate_batch(layers, x: torch.Tensor, t: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    return network.torch_forward(layers, torch.cat([x, t, z], dim=1))


def discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor,
                       swap_labels: bool = False) -> torch.Tensor:
    """Mean sigmoid cross-entropy, real labeled 0 and fake labeled 1.

    softplus(d) is the cross-entropy of logit d against label 0 and
    softplus(-d) against label 1; torch's softplus is overflow-safe.
    """
    if swap_labels:
        return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    return F.softplus(real_logits).mean() + F.softplus(-fake_logits).mean()


def posterior_nll(z: torch.Tensor, z_mean: torch.Tensor) -> torch.Tensor:
    """Per-sample -log N(z; z_mean, I)."""
    d = z.shape[1]
    return 0.5 * torch.sum((z - z_mean) ** 2, dim=1) + 0.5 * d * math.log(2 * math.pi)


def generator_loss(d_fake_logits: torch.Tensor, posterior, residuals: torch.Tensor,
                   cfg: GanConfig, data_misfit: Optional[torch.Tensor] = None):
    """(total, entropy_term, posterior_term, pde_term); total is their sum.

    ``posterior`` is the per-sample posterior negative log-likelihood for the
    Gaussian form, or the raw posterior logits for the ``logits`` form. The
    posterior term is already multiplied by (1 - lambda). ``data_misfit``
    holds squared errors on labeled points and enters the physics term with
    weight ``cfg.w_data``.
    """
    sign = -1.0 if cfg.swap_labels else 1.0
    entropy = sign * d_fake_logits.mean()
    weight = 1.0 - cfg.lambda_entropy
    if cfg.posterior_form == "gaussian":
        post = weight * posterior.mean()
    else:
        post = -weight * F.softplus(-posterior).mean()
    phys = torch.mean(residuals ** 2)
    if data_misfit is not None and cfg.w_data > 0:
        phys = phys + cfg.w_data * data_misfit.mean()
    pde = cfg.w_pde * phys
    return entropy + post + pde, entropy, post, pde


def density_ratio(logit):
    """sigma(D) / (1 - sigma(D)) for a density-ratio classifier.

    The quotient simplifies to exp(D), which avoids cancellation in 1 - sigma.
    """
    return np.exp(np.asarray(logit, dtype=np.float64))


@dataclass
class GanResult:
    generator: network.DenseNet
    discriminator: network.DenseNet
    posterior: network.DenseNet
    params: physics.PdeParams
    history: list[dict] = field(default_factory=list)
    stopped_at: int = 0


def train_gan(samples: SampleSet, pde: physics.PdeParams, cfg: GanConfig,
              flux: physics.FluxSpec = "corey",
              callback: Optional[Callable[[int, "GanState"], bool]] = None) -> GanResult:
    """Alternate discriminator and generator/posterior updates.

    Real samples are every labeled point in ``samples``; fake samples are the
    generator's saturation at the same (x, t). The physics term uses the
    generator's residual at the collocation points. ``callback(epoch, state)``
    runs after every iteration and may return True to stop.
    """
    real = samples.labeled()
    if len(real) == 0:
        raise ConfigError("adversarial training needs labeled data")
    if len(samples.collocation) == 0:
        raise ConfigError("adversarial training needs collocation points")
    gen_spec, disc_spec, post_spec = cfg.specs()
    state = GanState(network.init_xavier(gen_spec), network.init_xavier(disc_spec),
                     network.init_xavier(post_spec), pde, flux)
    torch_gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    opt_d = torch.optim.Adam(state.disc_params(), lr=cfg.lr_discriminator)
    opt_g = torch.optim.Adam([
        {"params": state.gen_params(), "lr": cfg.lr_generator},
        {"params": state.post_params(), "lr": cfg.lr_posterior},
    ])
    n_epochs = min(cfg.epochs, cfg.early_stop_epochs)
    scheds = []
    if cfg.lr_final_factor is not None:
        gamma = cfg.lr_final_factor ** (1.0 / n_epochs)
        scheds = [torch.optim.lr_scheduler.ExponentialLR(o, gamma) for o in (opt_d, opt_g)]

    xr = torch.as_tensor(real[:, 0:1].copy())
    tr = torch.as_tensor(real[:, 1:2].copy())
    sr = torch.as_tensor(real[:, 2:3].copy())
    colloc = samples.collocation
    n_real, k = len(real), cfg.latent_dim

    def latent(n):
        return torch.randn(n, k, generator=torch_gen)

    def collocation_batch():
        nonlocal colloc
        if cfg.resample_collocation:
            colloc = rng.uniform(0.0, 1.0, samples.collocation.shape)
        if cfg.collocation_batch is not None and cfg.collocation_batch < len(colloc):
            return colloc[rng.choice(len(colloc), cfg.collocation_batch, replace=False)]
        return colloc

    history: list[dict] = []
    saturated = 0
    last_finite = state.snapshot()
    epoch = 0
    for epoch in range(1, n_epochs + 1):
        for _ in range(cfg.d_steps):
            with torch.no_grad():
                s_fake = state.generate(xr, tr, latent(n_real))
            d_real = state.discriminate(xr, tr, sr)
            d_fake = state.discriminate(xr, tr, s_fake)
            loss_d = discriminator_loss(d_real, d_fake, cfg.swap_labels)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

        for _ in range(cfg.g_steps):
            z = latent(n_real)
            s_fake = state.generate(xr, tr, z)
            d_fake = state.discriminate(xr, tr, s_fake)
            z_hat = state.infer_latent(xr, tr, s_fake)
            post = posterior_nll(z, z_hat) if cfg.posterior_form == "gaussian" else z_hat
            col = collocation_batch()
            zc = latent(len(col))
            r = state.residual(col[:, 0], col[:, 1], zc)
            misfit = (s_fake - sr) ** 2 if cfg.w_data > 0 else None
            total, entropy, post_term, pde_term = generator_loss(d_fake, post, r, cfg, misfit)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

        if not (torch.isfinite(loss_d) and torch.isfinite(total)):
            state.restore(last_finite)
            raise TrainingDiverged(f"non-finite adversarial loss at epoch {epoch}", epoch, last_finite)
        last_finite = state.snapshot()
        for sched in scheds:
            sched.step()

        mean_abs = float(d_fake.detach().abs().mean())
        saturated = saturated + 1 if mean_abs > SATURATION_LOGIT else 0
        if saturated == SATURATION_PATIENCE:
            warnings.warn(f"discriminator saturated (mean |logit| > {SATURATION_LOGIT}) "
                          f"for {SATURATION_PATIENCE} iterations at epoch {epoch}", stacklevel=2)

        row = None
        if epoch % cfg.log_every == 0 or epoch == 1 or epoch == n_epochs:
            row = {"epoch": epoch, "loss_d": loss_d.item(), "loss_g": total.item(),
                   "entropy": entropy.item(), "posterior": post_term.item(), "pde": pde_term.item()}
            history.append(row)
        if callback is not None and callback(epoch, state):
            if row is None:
                history.append({"epoch": epoch, "loss_d": loss_d.item(), "loss_g": total.item(),
                                "entropy": entropy.item(), "posterior": post_term.item(),
                                "pde": pde_term.item()})
            break
    return GanResult(state.gen, state.disc, state.post, state.current_params(), history, epoch)


class GanState:
    """Live torch views of the three networks during training."""

    def __init__(self, gen, disc, post, pde: physics.PdeParams, flux):
        self.gen, self.disc, self.post = gen, disc, post
        self.pde = pde
        self.flux = flux
        self.gen_layers = gen.torch_layers()
        self.disc_layers = disc.torch_layers()
        self.post_layers = post.torch_layers()
        self.raw = {n: torch.tensor(physics.to_unconstrained(n, getattr(pde, n)), requires_grad=True)
                    for n in sorted(pde.learnable)}

    def gen_params(self):
        return [p for layer in self.gen_layers for p in layer if p.requires_grad] + list(self.raw.values())

    def disc_params(self):
        return [p for layer in self.disc_layers for p in layer if p.requires_grad]

    def post_params(self):
        return [p for layer in self.post_layers for p in layer if p.requires_grad]

    def live_params(self):
        return self.pde.live(**{n: physics.from_unconstrained(n, r) for n, r in self.raw.items()})

    def current_params(self) -> physics.PdeParams:
        with torch.no_grad():
            return self.pde.updated(**{n: float(physics.from_unconstrained(n, r))
                                       for n, r in self.raw.items()})

    def generate(self, x, t, z):
        return generate_batch(self.gen_layers, x, t, z)

    def discriminate(self, x, t, s):
        return network.torch_forward(self.disc_layers, torch.cat([x, t, s], dim=1))

    def infer_latent(self, x, t, s):
        return network.torch_forward(self.post_layers, torch.cat([x, t, s], dim=1))

    def residual(self, x, t, z):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64)).reshape(-1, 1).clone().requires_grad_(True)
        t = torch.as_tensor(np.asarray(t, dtype=np.float64)).reshape(-1, 1).clone().requires_grad_(True)
        return physics.residual(lambda a, b: self.generate(a, b, z), self.live_params(), self.flux, x, t)

    def mean_prediction(self, x, t, n_z: int = 64, seed: int = 12345) -> np.ndarray:
        return mean_prediction(self.gen, x, t, n_z, seed)

    def snapshot(self) -> list[np.ndarray]:
        return [network.flatten_params(n) for n in (self.gen, self.disc, self.post)] + [
            np.array([float(r.detach()) for r in self.raw.values()])]

    def restore(self, snap) -> None:
        for net, vec in zip((self.gen, self.disc, self.post), snap[:3]):
            network.assign_params(net, vec)
        with torch.no_grad():
            for r, v in zip(self.raw.values(), snap[3]):
                r.fill_(float(v))


def _latent_draws(n: int, latent_dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, latent_dim))


def evaluate_members(gen: network.DenseNet, x: np.ndarray, t: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Generator output for every latent draw: shape (len(zs), len(x))."""
    x = np.asarray(x, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    k = gen.spec.input_dim - 2
    if k <= 0:
        raise ConfigError("network has no latent inputs")
    layers = [(torch.from_numpy(w), torch.from_numpy(b)) for w, b in zip(gen.weights, gen.biases)]
    xt = torch.as_tensor(np.column_stack([x, t]))
    out = np.empty((len(zs), len(x)))
    with torch.no_grad():
        for i, z in enumerate(zs):
            zz = torch.as_tensor(np.asarray(z, dtype=np.float64)).reshape(1, k).expand(len(x), k)
            out[i] = network.torch_forward(layers, torch.cat([xt, zz], dim=1)).numpy().ravel()
    return out


def mean_prediction(gen: network.DenseNet, x, t, n_z: int = 64, seed: int = 12345) -> np.ndarray:
    zs = _latent_draws(n_z, gen.spec.input_dim - 2, seed)
    return evaluate_members(gen, x, t, zs).mean(axis=0)


@dataclass
class UqEnsemble:
    x: np.ndarray
    t: np.ndarray
    members: np.ndarray  # (n_members, n_t, n_x)
    mean: np.ndarray
    std: np.ndarray

    @property
    def lo2sd(self) -> np.ndarray:
        return self.mean - 2.0 * self.std

    @property
    def hi2sd(self) -> np.ndarray:
        return self.mean + 2.0 * self.std

    def to_csv(self, path=None) -> str:
        lines = ["t,x,mean,std,lo2sd,hi2sd"]
        lo, hi = self.lo2sd, self.hi2sd
        for i, t in enumerate(self.t):
            for j, x in enumerate(self.x):
                vals = (t, x, self.mean[i, j], self.std[i, j], lo[i, j], hi[i, j])
                lines.append(",".join(repr(float(v)) for v in vals))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def members_csv(self, path=None) -> str:
        lines = ["member,t,x,s"]
        for m in range(len(self.members)):
            for i, t in enumerate(self.t):
                for j, x in enumerate(self.x):
                    lines.append(f"{m},{float(t)!r},{float(x)!r},{float(self.members[m, i, j])!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def uq_ensemble(gen: network.DenseNet, n_members: int = 1000, grid=None, seed: int = 0) -> UqEnsemble:
    """Sample ``n_members`` latent draws and summarize the generated fields.

    ``grid`` is ``(xs, ts)``; the default is 256 points in x at the five
    snapshot times.
    """
    if n_members < 2:
        raise ConfigError("an ensemble needs at least two members")
    xs, ts = grid if grid is not None else (np.linspace(0.0, 1.0, 256), np.array(oracle.SNAPSHOT_TIMES))
    xs, ts = np.asarray(xs, dtype=np.float64), np.asarray(ts, dtype=np.float64)
    X, T = np.meshgrid(xs, ts)
    zs = _latent_draws(n_members, gen.spec.input_dim - 2, seed)
    members = evaluate_members(gen, X.ravel(), T.ravel(), zs).reshape(n_members, len(ts), len(xs))
    # shifting by one member keeps the std exactly 0 for z-independent generators
    spread = (members - members[0]).std(axis=0)
    return UqEnsemble(xs, ts, members, members.mean(axis=0), spread)
