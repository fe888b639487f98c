"""Reference solutions for the 1-D Buckley-Leverett problem.

Two independent ground truths are provided:

* :func:`riemann_solve` builds the self-similar entropy solution of a
  Riemann problem from the concave/convex envelope of the flux (the Welge
  tangent construction generalized to arbitrary flux shapes);
* :func:`fv_solve` is a first-order Godunov finite-volume scheme.

:func:`sample_training_data` draws the observation sets used for training.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import physics
from .autodiff import DomainError
from .errors import ConfigError

SNAPSHOT_TIMES = (0.05, 0.15, 0.4, 0.6, 0.9)
DEFAULT_WELLS = (0.1, 0.3, 0.5, 0.7, 0.9)
EARLY_TIME_FRACTION = 1.0 / 3.0
SCHEMES = ("random", "fixed_wells", "early_time", "boundary_only")


@dataclass(frozen=True)
class Flux:
    """Vectorized flux ``f`` and its derivative ``df`` on numpy arrays."""

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    name: str = "flux"

    def __call__(self, s):
        return self.f(s)


def make_flux(kind, params: physics.PdeParams | None = None) -> Flux:
    """Wrap a physics flux; the derivative comes from torch autograd."""
    params = params or physics.PdeParams()
    fn = physics.flux_function(kind)

    def f(s):
        return np.asarray(fn(np.asarray(s, dtype=np.float64), params), dtype=np.float64)

    def df(s):
        s = np.asarray(s, dtype=np.float64)
        ts = torch.tensor(s, requires_grad=True)
        (g,) = torch.autograd.grad(fn(ts, params).sum(), ts)
        return g.numpy().reshape(s.shape)

    return Flux(f, df, kind if isinstance(kind, str) else getattr(kind, "__name__", "flux"))


def linear_flux(speed: float = 1.0) -> Flux:
    return Flux(lambda s: speed * np.asarray(s, dtype=np.float64),
                lambda s: np.full(np.shape(s), speed, dtype=np.float64), "linear")


@dataclass(frozen=True)
class Segment:
    """One wave of a Riemann fan, traversed from its left to its right state."""

    kind: str  # "shock", "rarefaction" or "constant"
    s_from: float
    s_to: float
    xi_from: float
    xi_to: float

    @property
    def speed(self) -> float:
        return self.xi_from


@dataclass
class SolutionProfile:
    segments: list[Segment]
    s_left: float
    s_right: float
    flux: Flux = field(repr=False)

    def shocks(self) -> list[Segment]:
        return [s for s in self.segments if s.kind == "shock"]

    def __call__(self, x, t, x0: float = 0.0):
        return evaluate_profile(self, x, t, x0)


def _lower_hull(s: np.ndarray, g: np.ndarray, tol: float) -> list[int]:
    hull: list[int] = []
    for k in range(len(s)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (s[j] - s[i]) * (g[k] - g[i]) - (g[j] - g[i]) * (s[k] - s[i])
            if cross <= tol:
                hull.pop()
            else:
                break
        hull.append(k)
    return hull


def _bisect(fun, a: float, b: float, tol: float) -> float:
    fa = fun(a)
    if fa == 0:
        return a
    for _ in range(200):
        if b - a <= tol:
            break
        mid = 0.5 * (a + b)
        fm = fun(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def _refine_tangent(flux: Flux, anchor: float, guess: float, h: float, lo: float, hi: float,
                    tol: float) -> float:
    """Point near ``guess`` where the chord from ``anchor`` touches the flux."""

    def gap(s):
        s = float(s)
        return float(flux.df(np.array([s]))[0] * (s - anchor) - (flux.f(np.array([s]))[0] - flux.f(np.array([anchor]))[0]))

    width = h
    for _ in range(12):
        a, b = max(lo, guess - width), min(hi, guess + width)
        # keep the bracket on one side of the anchor
        if anchor < guess:
            a = max(a, anchor + 1e-15)
        else:
            b = min(b, anchor - 1e-15)
        ga, gb = gap(a), gap(b)
        if ga == 0:
            return a
        if gb == 0:
            return b
        if (ga > 0) != (gb > 0):
            return _bisect(gap, a, b, tol)
        width *= 2
    return guess


def riemann_solve(flux: Flux, s_left: float, s_right: float, n_grid: int = 4096,
                  tol: float = 1e-12) -> SolutionProfile:
    """Entropy solution of S_t + f(S)_x = 0 with S = s_left for x < 0, s_right for x > 0.

    For s_left > s_right the solution follows the upper concave envelope of
    ``f`` on [s_right, s_left]; otherwise the lower convex envelope on
    [s_left, s_right]. Where the envelope coincides with ``f`` the wave is a
    rarefaction with xi = f'(S); where it is a chord the wave is a shock with
    Rankine-Hugoniot speed.
    """
    s_left, s_right = float(s_left), float(s_right)
    if s_left == s_right:
        return SolutionProfile([Segment("constant", s_left, s_left, -np.inf, np.inf)],
                               s_left, s_right, flux)
    upper = s_left > s_right
    lo, hi = min(s_left, s_right), max(s_left, s_right)
    s = np.linspace(lo, hi, n_grid)
    fv = flux.f(s)
    if not np.all(np.isfinite(fv)):
        raise DomainError("flux is not finite on the Riemann interval", -1)
    g = -fv if upper else fv
    h = s[1] - s[0]
    tol_hull = 1e-12 * h * h * (1.0 + np.ptp(g))
    hull = _lower_hull(s, g, tol_hull)

    # pieces in ascending saturation: ("raref", a, b) or ("chord", a, b)
    pieces: list[list] = []
    for i, j in zip(hull[:-1], hull[1:]):
        kind = "raref" if j == i + 1 else "chord"
        if pieces and pieces[-1][0] == kind == "raref":
            pieces[-1][2] = j
        else:
            pieces.append([kind, i, j])
    bounds = [[s[a], s[b]] for _, a, b in pieces]
    kinds = [k for k, _, _ in pieces]

    # move chord endpoints that sit next to a rarefaction onto the exact tangency
    for _ in range(8):
        moved = 0.0
        for k, kind in enumerate(kinds):
            if kind != "chord":
                continue
            a, b = bounds[k]
            if k > 0 and kinds[k - 1] == "raref":
                new_a = _refine_tangent(flux, b, a, 2 * h, bounds[k - 1][0], b, tol)
                moved = max(moved, abs(new_a - a))
                bounds[k][0] = bounds[k - 1][1] = new_a
                a = new_a
            if k + 1 < len(kinds) and kinds[k + 1] == "raref":
                new_b = _refine_tangent(flux, a, b, 2 * h, a, bounds[k + 1][1], tol)
                moved = max(moved, abs(new_b - b))
                bounds[k][1] = bounds[k + 1][0] = new_b
        if moved <= tol:
            break

    waves = list(zip(kinds, bounds))
    if upper:
        waves = [(k, (b, a)) for k, (a, b) in reversed(waves)]
    segments = []
    for kind, (a, b) in waves:
        if kind == "chord":
            fa, fb = flux.f(np.array([a, b]))
            speed = float((fa - fb) / (a - b))
            segments.append(Segment("shock", float(a), float(b), speed, speed))
        else:
            da, db = flux.df(np.array([a, b]))
            segments.append(Segment("rarefaction", float(a), float(b), float(da), float(db)))
    return SolutionProfile(segments, s_left, s_right, flux)


def _invert_speed(flux: Flux, xi: np.ndarray, a: float, b: float) -> np.ndarray:
    """Solve f'(S) = xi for S between a and b, where f' is monotone."""
    lo = np.full(xi.shape, min(a, b))
    hi = np.full(xi.shape, max(a, b))
    increasing = flux.df(np.array([hi[0]]))[0] >= flux.df(np.array([lo[0]]))[0]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = flux.df(mid) > xi
        go_low = above if increasing else ~above
        hi = np.where(go_low, mid, hi)
        lo = np.where(go_low, lo, mid)
        if np.all(hi - lo < 1e-15):
            break
    return 0.5 * (lo + hi)


def evaluate_profile(profile: SolutionProfile, x, t, x0: float = 0.0):
    """S at (x, t) for a Riemann discontinuity initially located at ``x0``.

    At t = 0 this is s_left for x < x0 and s_right otherwise. Points exactly
    on a shock take the right state.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    x, t = np.broadcast_arrays(x, t)
    scalar = x.ndim == 0
    x, t = np.atleast_1d(x).astype(np.float64), np.atleast_1d(t).astype(np.float64)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.where(t > 0, (x - x0) / np.where(t > 0, t, 1.0),
                      np.where(x < x0, -np.inf, np.inf))
    out = np.full(x.shape, profile.s_left)
    for seg in profile.segments:
        if seg.kind == "constant":
            continue
        if seg.kind == "shock":
            out[xi >= seg.speed] = seg.s_to
            continue
        inside = (xi >= seg.xi_from) & (xi <= seg.xi_to)
        if np.any(inside):
            out[inside] = _invert_speed(profile.flux, xi[inside], seg.s_from, seg.s_to)
        out[xi > seg.xi_to] = seg.s_to
    return float(out[0]) if scalar else out.reshape(x.shape)


@dataclass
class GridSolution:
    nx: int
    dx: float
    dt: float
    x: np.ndarray
    snapshots: dict[float, np.ndarray]
    steps: int = 0
    max_mass_defect: float = 0.0

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "s"])
        for t in sorted(self.snapshots):
            for xi, si in zip(self.x, self.snapshots[t]):
                w.writerow([repr(float(t)), repr(float(xi)), repr(float(si))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _critical_points(flux: Flux, lo: float, hi: float, n: int = 4097) -> list[float]:
    if hi <= lo:
        return []
    s = np.linspace(lo, hi, n)
    d = flux.df(s)
    out = []
    for k in np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[0]:
        out.append(_bisect(lambda v: float(flux.df(np.array([v]))[0]), s[k], s[k + 1], 1e-14))
    return out


def godunov_flux(flux: Flux, lo: float, hi: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Exact Riemann (Godunov) interface flux for states within [lo, hi].

    F(a, b) = min over [a, b] of f when a <= b, max over [b, a] otherwise.
    A flux without interior extrema reduces to upwinding.
    """
    crit = _critical_points(flux, lo, hi)
    if not crit:
        sample = flux.df(np.linspace(lo, hi, 33))
        if np.all(sample >= 0):
            return lambda a, b: flux.f(a)
        if np.all(sample <= 0):
            return lambda a, b: flux.f(b)
    crit_f = flux.f(np.array(crit)) if crit else np.array([])

    def numflux(a, b):
        fa, fb = flux.f(a), flux.f(b)
        fmin = np.minimum(fa, fb)
        fmax = np.maximum(fa, fb)
        left, right = np.minimum(a, b), np.maximum(a, b)
        for c, fc in zip(crit, crit_f):
            inside = (left < c) & (c < right)
            fmin = np.where(inside, np.minimum(fmin, fc), fmin)
            fmax = np.where(inside, np.maximum(fmax, fc), fmax)
        return np.where(a <= b, fmin, fmax)

    return numflux


def fv_solve(flux: Flux, s_init, inlet: float, nx: int, cfl: float, t_end: float,
             snapshot_times: Sequence[float] = SNAPSHOT_TIMES,
             domain: tuple[float, float] = (0.0, 1.0)) -> GridSolution:
    """First-order Godunov scheme with a Dirichlet inlet at the left end.

    The right end is transmissive (zero-gradient ghost cell).
    """
    if not 0.0 < cfl <= 1.0:
        raise ConfigError(f"cfl must lie in (0, 1], got {cfl}")
    if nx <= 0:
        raise ConfigError("nx must be positive")
    x_lo, x_hi = domain
    dx = (x_hi - x_lo) / nx
    x = x_lo + (np.arange(nx) + 0.5) * dx
    u = np.broadcast_to(np.asarray(s_init, dtype=np.float64), (nx,)).copy()
    lo = float(min(u.min(), inlet))
    hi = float(max(u.max(), inlet))
    numflux = godunov_flux(flux, lo, hi)
    speed = float(np.max(np.abs(flux.df(np.linspace(lo, hi, 4097))))) if hi > lo else 0.0
    dt = cfl * dx / speed if speed > 0 else t_end
    times = sorted(float(t) for t in snapshot_times if t <= t_end + 1e-15)
    snaps: dict[float, np.ndarray] = {}
    t = 0.0
    steps = 0
    defect = 0.0
    for target in times:
        while target - t > 1e-14:
            step = min(dt, target - t)
            ext = np.concatenate(([inlet], u, [u[-1]]))
            F = numflux(ext[:-1], ext[1:])
            new = u - step / dx * (F[1:] - F[:-1])
            defect = max(defect, abs(dx * (new.sum() - u.sum()) - step * (F[0] - F[-1])))
            u = new
            t += step
            steps += 1
        snaps[target] = u.copy()
    return GridSolution(nx, dx, dt, x, snaps, steps, defect)


@dataclass
class SampleSet:
    """Observations and collocation points for one training problem.

    data: (N, 3) rows of x, t, s. initial: (N0, 2) rows of x, s at t = 0.
    boundary: (Nb, 3) rows of t, x_side, s where x_side is the boundary
    coordinate. collocation: (Nr, 2) rows of x, t.
    """

    data: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    initial: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    boundary: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    collocation: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def counts(self) -> dict[str, int]:
        return {"N": len(self.data), "N0": len(self.initial),
                "Nb": len(self.boundary), "Nr": len(self.collocation)}

    def labeled(self) -> np.ndarray:
        """All labeled points as (x, t, s) rows: data, initial, boundary."""
        init = np.column_stack([self.initial[:, 0], np.zeros(len(self.initial)), self.initial[:, 1]])
        bnd = self.boundary[:, [1, 0, 2]]
        return np.concatenate([self.data, init, bnd]).reshape(-1, 3)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "t", "s", "kind"])
        for x, t, s in self.data:
            w.writerow([repr(float(x)), repr(float(t)), repr(float(s)), "data"])
        for x, s in self.initial:
            w.writerow([repr(float(x)), "0.0", repr(float(s)), "initial"])
        for t, x, s in self.boundary:
            w.writerow([repr(float(x)), repr(float(t)), repr(float(s)), "boundary"])
        for x, t in self.collocation:
            w.writerow([repr(float(x)), repr(float(t)), "", "collocation"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> SampleSet:
        rows: dict[str, list] = {"data": [], "initial": [], "boundary": [], "collocation": []}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["x", "t", "s", "kind"]:
                raise ConfigError(f"{path}: expected header x,t,s,kind")
            for r in reader:
                kind = r["kind"]
                x, t = float(r["x"]), float(r["t"])
                if kind == "data":
                    rows[kind].append((x, t, float(r["s"])))
                elif kind == "initial":
                    rows[kind].append((x, float(r["s"])))
                elif kind == "boundary":
                    rows[kind].append((t, x, float(r["s"])))
                elif kind == "collocation":
                    rows[kind].append((x, t))
                else:
                    raise ConfigError(f"{path}: unknown row kind {kind!r}")
        widths = {"data": 3, "initial": 2, "boundary": 3, "collocation": 2}
        return cls(**{k: np.array(v, dtype=np.float64).reshape(-1, widths[k]) for k, v in rows.items()})


def sample_training_data(profile: SolutionProfile, scheme: str, n: int, noise_sigma: float = 0.0,
                         seed: int = 0, *, wells: Sequence[float] = DEFAULT_WELLS,
                         n_collocation: int = 0, x0: float = 0.0,
                         noise_target: str = "all") -> SampleSet:
    """Draw a training set from ``profile`` on the unit square.

    ``random``, ``fixed_wells`` and ``early_time`` produce ``n`` interior
    observations; ``boundary_only`` splits ``n`` between the t = 0 line and
    the two boundaries. ``n_collocation`` unlabeled points are added for any
    scheme. Gaussian noise goes on every label, or only on the initial line
    when ``noise_target == "initial"``.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if n <= 0:
        raise ConfigError("n must be positive")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be nonnegative")
    if noise_target not in ("all", "initial"):
        raise ConfigError(f"unknown noise_target {noise_target!r}")
    rng = np.random.default_rng(seed)
    out = SampleSet()

    def noisy(values, target):
        if noise_sigma > 0 and (noise_target == "all" or target == "initial"):
            return values + rng.normal(0.0, noise_sigma, size=values.shape)
        return values

    if scheme == "boundary_only":
        n0 = n // 2
        nb = max((n - n0) // 2, 1)
        xs = rng.uniform(0.0, 1.0, n0)
        out.initial = np.column_stack([xs, noisy(evaluate_profile(profile, xs, np.zeros(n0), x0), "initial")])
        tb = rng.uniform(0.0, 1.0, nb)
        rows = []
        for side in (0.0, 1.0):
            s_side = noisy(evaluate_profile(profile, np.full(nb, side), tb, x0), "boundary")
            rows.append(np.column_stack([tb, np.full(nb, side), s_side]))
        out.boundary = np.concatenate(rows)
    else:
        if scheme == "random":
            xs, ts = rng.uniform(0.0, 1.0, n), rng.uniform(0.0, 1.0, n)
        elif scheme == "early_time":
            xs, ts = rng.uniform(0.0, 1.0, n), rng.uniform(0.0, EARLY_TIME_FRACTION, n)
        else:
            if len(wells) == 0:
                raise ConfigError("fixed_wells needs at least one well location")
            xs = np.asarray(wells, dtype=np.float64)[np.arange(n) % len(wells)]
            ts = rng.uniform(0.0, 1.0, n)
        out.data = np.column_stack([xs, ts, noisy(evaluate_profile(profile, xs, ts, x0), "data")])
    if n_collocation > 0:
        out.collocation = rng.uniform(0.0, 1.0, (n_collocation, 2))
    return out


def shock_position(profile: SolutionProfile, t: float, x0: float = 0.0) -> list[float]:
    return [x0 + seg.speed * t for seg in profile.shocks()]
