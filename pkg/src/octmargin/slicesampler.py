"""Coordinate-wise slice sampling on the unit hypercube.

Univariate slice sampling (step-out then shrinkage) applied one coordinate at
a time, with the domain truncated to [0,1] per coordinate.  The state holds
one or more independent chains; chains advance in lock-step on the same
coordinate so the density can be evaluated for all of them in one batched
call, which is what makes network-density targets affordable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SliceShrinkError

# density callable contract: points (k, d) in [0,1]^d -> log-density (k,)
LogDensity = Callable[[np.ndarray], np.ndarray]


@dataclass
class SliceSamplerState:
    """Persistent chains of the coordinate-wise sampler.

    ``burn_in`` and ``thin`` are in coordinate-update units (one update =
    one univariate move applied to every chain).  ``sweeps_to_updates``
    converts the sweep-based schedule to these units.
    """

    x: np.ndarray  # (chains, d), always inside [0,1]^d
    rng: np.random.Generator
    width: float = 0.25
    burn_in: int = 0
    thin: int = 1
    max_shrink: int = 32
    logf: np.ndarray = None  # cached log-density at x, (chains,)
    coord: int = 0  # next coordinate to update
    burned: bool = False

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if np.any(self.x < 0.0) or np.any(self.x > 1.0):
            raise ValueError("chain points must lie in [0,1]^d")
        if self.width <= 0:
            raise ValueError("step-out width must be positive")
        if self.thin < 1:
            raise ValueError("thinning interval must be >= 1")


def sweeps_to_updates(dim: int, sweeps: float) -> int:
    """A sweep is one update of every coordinate."""
    return max(1, int(round(sweeps * dim)))


def init_state(
    logdensity: LogDensity,
    dim: int,
    rng: np.random.Generator,
    chains: int = 1,
    width: float = 0.25,
    burn_in: int = 0,
    thin: int = 1,
    max_shrink: int = 32,
    init_tries: int = 16,
) -> SliceSamplerState:
    """Start chains at uniform-random points where the density is positive.

    Raises ValueError when no starting point with finite log-density is
    found (e.g. a network whose output is identically zero).
    """
    x = rng.random((chains, dim))
    logf = np.asarray(logdensity(x), dtype=float)
    for _ in range(init_tries):
        bad = ~np.isfinite(logf)
        if not bad.any():
            break
        x[bad] = rng.random((int(bad.sum()), dim))
        logf[bad] = logdensity(x[bad])
    if not np.all(np.isfinite(logf)):
        raise ValueError("target density is zero at every tried start point")
    return SliceSamplerState(
        x=x, rng=rng, width=width, burn_in=burn_in, thin=thin, max_shrink=max_shrink, logf=logf
    )


def _update_coordinate(logdensity: LogDensity, state: SliceSamplerState, i: int):
    """One slice-sampling move of coordinate i, applied to every chain."""
    x = state.x
    rng = state.rng
    k = x.shape[0]
    x0 = x[:, i].copy()
    # vertical level: log y = log f(x) + log(1-U), U in [0,1)
    thresh = state.logf + np.log1p(-rng.random(k))

    def eval_at(vals, rows):
        pts = x[rows].copy()
        pts[:, i] = vals
        return np.asarray(logdensity(pts), dtype=float)

    # step out, truncated to [0,1]
    u = rng.random(k)
    left = x0 - state.width * u
    right = left + state.width
    for bound, sign in ((left, -1.0), (right, 1.0)):
        inside = (bound > 0.0) if sign < 0 else (bound < 1.0)
        active = np.flatnonzero(inside)
        while active.size:
            f = eval_at(bound[active], active)
            grow = f > thresh[active]
            bound[active[grow]] += sign * state.width
            active = active[grow]
            inside = (bound[active] > 0.0) if sign < 0 else (bound[active] < 1.0)
            active = active[inside]
    np.clip(left, 0.0, None, out=left)
    np.clip(right, None, 1.0, out=right)

    # shrinkage toward the current point
    active = np.arange(k)
    for _ in range(state.max_shrink):
        if not active.size:
            break
        prop = left[active] + (right[active] - left[active]) * rng.random(active.size)
        f = eval_at(prop, active)
        accept = f >= thresh[active]
        acc = active[accept]
        x[acc, i] = prop[accept]
        state.logf[acc] = f[accept]
        rej = ~accept
        lo = rej & (prop < x0[active])
        hi = rej & ~lo
        left[active[lo]] = prop[lo]
        right[active[hi]] = prop[hi]
        active = active[rej]
    if active.size:
        raise SliceShrinkError(i, f"no acceptable point after {state.max_shrink} contractions")


def advance(logdensity: LogDensity, state: SliceSamplerState, n_updates: int):
    """Run n_updates coordinate moves (cycling through coordinates) on all chains."""
    d = state.x.shape[1]
    for _ in range(n_updates):
        _update_coordinate(logdensity, state, state.coord)
        state.coord = (state.coord + 1) % d


def draw(logdensity: LogDensity, state: SliceSamplerState, n: int) -> np.ndarray:
    """Draw n points from the chains, (n, d).

    n must be a multiple of the chain count; each round of ``thin``
    coordinate updates yields one point per chain.  Burn-in runs once per
    state lifetime, so persistent states amortize it across calls.
    """
    k = state.x.shape[0]
    if n % k != 0:
        raise ValueError(f"sample count {n} is not a multiple of chain count {k}")
    # The target may have changed since the last call (chains persist while
    # the network trains), so the cached heights must be recomputed.
    state.logf = logdensity(state.x)
    if not state.burned:
        advance(logdensity, state, state.burn_in)
        state.burned = True
    out = np.empty((n, state.x.shape[1]))
    for r in range(n // k):
        advance(logdensity, state, state.thin)
        out[r * k : (r + 1) * k] = state.x
    return out
