"""Fractional-flow curves and the Buckley-Leverett residual.

The functions here are written once and evaluated on several kinds of
values: Python floats, numpy arrays, :class:`~blpinn.autodiff.TapeVar`
and torch tensors. The small ``_sq``/``_clip``/``_grad`` helpers dispatch on
the value type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from types import SimpleNamespace
from typing import Callable, Union

import numpy as np
import torch
from scipy.special import expit

from . import autodiff as ad
from . import network
from .errors import ConfigError

# upper bound for learnable residual saturations
RESIDUAL_SAT_MAX = 0.45
DENOM_FLOOR = 1e-30

_TRANSFORMS = {
    "swc": "bounded",
    "sor": "bounded",
    "kro0": "unit",
    "m": "positive",
    "m0": "positive",
    "epsilon": "positive",
    "n_o": "above_one",
    "n_w": "above_one",
    "ng_sin_theta": "identity",
}


@dataclass(frozen=True)
class PdeParams:
    swc: float = 0.0
    sor: float = 0.0
    m: float = 2.0
    ng_sin_theta: float = 0.0
    kro0: float = 1.0
    n_o: float = 2.0
    n_w: float = 2.0
    m0: float = 2.0
    epsilon: float = 0.0
    learnable: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "learnable", frozenset(self.learnable))
        unknown = self.learnable - set(_TRANSFORMS)
        if unknown:
            raise ConfigError(f"unknown learnable parameter(s): {sorted(unknown)}")
        if not (0.0 <= self.swc < 1.0 and 0.0 <= self.sor < 1.0):
            raise ConfigError("swc and sor must lie in [0, 1)")
        if self.swc + self.sor >= 1.0:
            raise ConfigError("swc + sor must be below 1")
        if self.m <= 0 or self.m0 <= 0:
            raise ConfigError("mobility ratios must be positive")
        if not 0.0 < self.kro0 <= 1.0:
            raise ConfigError("kro0 must lie in (0, 1]")
        if self.n_o < 1 or self.n_w < 1:
            raise ConfigError("Corey exponents must be >= 1")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "learnable"}

    def live(self, **overrides) -> SimpleNamespace:
        """Attribute bag with some fields replaced by tape variables or tensors."""
        vals = self.values()
        vals.update(overrides)
        return SimpleNamespace(**vals)

    def updated(self, **vals) -> PdeParams:
        return replace(self, **{k: float(v) for k, v in vals.items()})


def to_unconstrained(name: str, value: float) -> float:
    kind = _TRANSFORMS[name]
    if kind == "bounded":
        u = min(max(value / RESIDUAL_SAT_MAX, 1e-9), 1 - 1e-9)
        return math.log(u / (1 - u))
    if kind == "unit":
        u = min(max(value, 1e-9), 1 - 1e-9)
        return math.log(u / (1 - u))
    if kind == "positive":
        return math.log(max(value, 1e-12))
    if kind == "above_one":
        return math.log(max(value - 1.0, 1e-12))
    return float(value)


def from_unconstrained(name: str, raw):
    kind = _TRANSFORMS[name]
    if kind == "bounded":
        return RESIDUAL_SAT_MAX * _sigmoid(raw)
    if kind == "unit":
        return _sigmoid(raw)
    if kind == "positive":
        return _exp(raw)
    if kind == "above_one":
        return 1.0 + _exp(raw)
    return raw


def _sigmoid(v):
    if isinstance(v, ad.TapeVar):
        return ad.sigmoid(v)
    if isinstance(v, torch.Tensor):
        return torch.sigmoid(v)
    return expit(v)


def _exp(v):
    if isinstance(v, ad.TapeVar):
        return ad.exp(v)
    if isinstance(v, torch.Tensor):
        return torch.exp(v)
    return np.exp(v)


def _sq(v):
    if isinstance(v, ad.TapeVar):
        return ad.square(v)
    return v * v


def _clip(v, lo, hi):
    if isinstance(v, ad.TapeVar):
        if v.value < lo:
            return v.tape.const(lo)
        if v.value > hi:
            return v.tape.const(hi)
        return v
    if isinstance(v, torch.Tensor):
        return torch.clamp(v, lo, hi)
    return np.clip(v, lo, hi)


def _floor(v, lo):
    if isinstance(v, ad.TapeVar):
        return v if v.value >= lo else v.tape.const(lo)
    if isinstance(v, torch.Tensor):
        return torch.clamp_min(v, lo)
    return np.maximum(v, lo)


def _grad(out, wrt):
    """d out / d w for each w in ``wrt``, kept differentiable."""
    if isinstance(out, ad.TapeVar):
        return ad.gradient_as_vars(out, wrt)
    if not out.requires_grad:
        return [torch.zeros_like(w) for w in wrt]
    gs = torch.autograd.grad(out.sum(), wrt, create_graph=True, allow_unused=True)
    return [torch.zeros_like(w) if g is None else g for g, w in zip(gs, wrt)]


def frac_flow_corey(s, p):
    """Corey-type water fractional flow with quadratic relative permeabilities."""
    water = _sq(s - p.swc)
    oil = _sq(1.0 - s - p.sor)
    return water / _floor(water + oil / p.m, DENOM_FLOOR)


def frac_flow_gravity(s, p):
    """Fractional flow including a gravity term ``ng_sin_theta``.

    Normalized saturation is clipped to [0, 1], which realizes the limits
    f -> 0 below connate water and f -> 1 above residual oil.
    """
    sn = _clip((s - p.swc) / (1.0 - p.sor - p.swc), 0.0, 1.0)
    oil = (1.0 - sn) ** p.n_o
    water = p.m0 * sn ** p.n_w
    # algebraically equal to (1 - G kro0 oil) / (1 + oil / water), without the
    # 0/0 at sn = 0
    return (1.0 - p.ng_sin_theta * p.kro0 * oil) * water / (water + oil)


FLUXES: dict[str, Callable] = {
    "corey": frac_flow_corey,
    "gravity": frac_flow_gravity,
}

FluxSpec = Union[str, Callable]


def flux_function(flux: FluxSpec) -> Callable:
    if callable(flux):
        return flux
    try:
        return FLUXES[flux]
    except KeyError:
        raise ConfigError(f"unknown flux {flux!r}; expected one of {sorted(FLUXES)}") from None


def _is_zero(v) -> bool:
    return isinstance(v, (int, float)) and v == 0


def residual(s_net, p, flux: FluxSpec, x, t, with_saturation: bool = False):
    """S_t + f'(S) S_x - epsilon S_xx at (x, t).

    ``s_net`` is either a :class:`~blpinn.network.DenseNet` (evaluated on the
    tape of ``x``) or any callable ``(x, t) -> S``. f'(S) is obtained by
    differentiating the flux expression with respect to the saturation node,
    so learnable flux parameters stay on the graph. With ``with_saturation``
    the pair ``(R, S)`` is returned.
    """
    fn = flux_function(flux)
    if isinstance(s_net, network.DenseNet):
        net = s_net
        s = network.forward(net, [x, t])[0]
    else:
        s = s_net(x, t)
    s_t, s_x = _grad(s, [t, x])
    (f_s,) = _grad(fn(s, p), [s])
    r = s_t + f_s * s_x
    if not _is_zero(p.epsilon):
        (s_xx,) = _grad(s_x, [x])
        r = r - p.epsilon * s_xx
    return (r, s) if with_saturation else r
