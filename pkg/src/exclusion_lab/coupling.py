"""Couplings through a shared event stream.

A :class:`NestedFamily` is a stack of configurations ``c_1 <= ... <= c_K``
driven by the same clocks; class ``j`` particles sit where ``c_j`` is
occupied and ``c_{j-1}`` is not. Also here: the truncations ``T_m``/``V_m``,
the merge operator, particle-hole reflection and the four-class re-split.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ._rng import BURN_STREAM, BURN_TIME, derive_seed, keyed_uniform, to_seed
from .engine import (
    Configuration,
    EventStream,
    RunInfo,
    Window,
    _fresh_front,
    evolve_levels,
    site_uniforms,
)
from .kernel import JumpKernel, StepProfileParams


class NestingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NestedFamily:
    window: Window
    levels: np.ndarray
    front: Tuple[int, int] = None

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.uint8)
        if lv.ndim != 2 or lv.shape[1] != self.window.size:
            raise ValueError(f"levels must have shape (K, {self.window.size}), got {lv.shape}")
        if lv.flags.writeable:
            lv = lv.copy()
            lv.flags.writeable = False
        object.__setattr__(self, "levels", lv)
        if self.front is None:
            object.__setattr__(self, "front", _fresh_front(self.window))

    @classmethod
    def from_configs(cls, configs: Sequence[Configuration]) -> "NestedFamily":
        window = configs[0].window
        if any(c.window != window for c in configs):
            raise ValueError("all levels must share one window")
        lo = max(c.front[0] for c in configs)
        hi = min(c.front[1] for c in configs)
        return cls(window, np.stack([c.occupancy for c in configs]), (lo, hi))

    @property
    def depth(self) -> int:
        return self.levels.shape[0]

    def level(self, j: int) -> Configuration:
        """Configuration ``c_{j+1}`` (zero-based index into the stack)."""
        return Configuration(self.window, self.levels[j], self.front)

    def class_occupancy(self, j: int) -> np.ndarray:
        """0/1 array of class ``j`` particles, ``j`` counted from 1."""
        upper = self.levels[j - 1].astype(np.int8)
        lower = self.levels[j - 2].astype(np.int8) if j > 1 else 0
        return (upper - lower).astype(np.uint8)

    def is_nested(self) -> bool:
        return bool(np.all(self.levels[:-1] <= self.levels[1:]))

    def __eq__(self, other):
        if not isinstance(other, NestedFamily):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.levels, other.levels)


@dataclass(frozen=True, eq=False)
class ClassView:
    """Per-site class label; 0 marks an empty site."""

    window: Window
    labels: np.ndarray

    def counts(self) -> np.ndarray:
        """``counts[j]`` = number of sites with label j."""
        return np.bincount(self.labels, minlength=int(self.labels.max(initial=0)) + 1)

    def dump_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("site,class\n")
            for x, lab in zip(self.window.sites, self.labels):
                fh.write(f"{int(x)},{int(lab)}\n")


def _require_nested(family: NestedFamily) -> None:
    if not family.is_nested():
        raise NestingError("levels are not coordinatewise nested")


def evolve_nested(family: NestedFamily, stream: EventStream, t: float, *,
                  info: Optional[list] = None) -> NestedFamily:
    """Evolve every level with the same events; nesting is checked per event."""
    _require_nested(family)
    if family.window != stream.window:
        raise ValueError("family and stream cover different windows")
    levels = family.levels.copy()
    run = evolve_levels(levels, family.front, stream, t, group=family.depth)
    if run.nest_violations:
        raise NestingError(f"{run.nest_violations} nesting violations during evolution")
    if info is not None:
        info.append(run)
    return NestedFamily(family.window, levels, run.front)


def class_view(family: NestedFamily) -> ClassView:
    _require_nested(family)
    occupied = family.levels.any(axis=0)
    first = np.argmax(family.levels == 1, axis=0) + 1
    labels = np.where(occupied, first, 0).astype(np.int64)
    return ClassView(family.window, labels)


def truncate_left(config: Configuration, m: int) -> Configuration:
    """``T_m``: keep sites <= m."""
    keep = config.window.sites <= m
    return config.with_occupancy(config.occupancy * keep)


def truncate_right(config: Configuration, m: int) -> Configuration:
    """``V_m``: keep sites > m."""
    keep = config.window.sites > m
    return config.with_occupancy(config.occupancy * keep)


def merge_T(sigma: Configuration, theta: Configuration) -> Configuration:
    """``sigma + T_0(theta - sigma)``: theta on sites <= 0, sigma on sites > 0."""
    if sigma.window != theta.window:
        raise ValueError("configurations cover different windows")
    if not sigma <= theta:
        raise NestingError("merge_T needs sigma <= theta coordinatewise")
    occ = np.where(sigma.window.sites <= 0, theta.occupancy, sigma.occupancy)
    front = (max(sigma.front[0], theta.front[0]), min(sigma.front[1], theta.front[1]))
    return Configuration(sigma.window, occ, front)


def reflect_holes(config: Configuration) -> Configuration:
    """Reflected hole configuration ``x -> 1 - eta(-x)``."""
    w = config.window
    if not w.symmetric:
        raise ValueError("reflect_holes needs a window symmetric about 0")
    L, R = config.front
    return Configuration(w, 1 - config.occupancy[::-1], (-R, -L))


def reflect_stream(stream: EventStream) -> EventStream:
    """Stream delivering ``(t, -(x+z), z)`` for every original ``(t, x, z)``."""
    if not stream.window.symmetric:
        raise ValueError("reflect_stream needs a window symmetric about 0")
    new = stream.copy()
    new.reflected = not stream.reflected
    return new


def reclass_at(family: NestedFamily, m: int, u: float) -> NestedFamily:
    """Re-split a four-class family at time ``m/u``.

    Input levels are ``(sigma, sigma+xi, sigma+xi+gamma, sigma+xi+gamma+zeta)``
    with ``gamma`` empty, as it is along the process started from
    ``gamma = 0``. The new classes are ``xi' = T_m(xi + zeta)``,
    ``gamma' = V_m(xi)``, ``zeta' = V_m(zeta)``; sigma and the top level are
    untouched. ``u`` only fixes the time at which this is meant to be applied.
    """
    if family.depth != 4:
        raise ValueError(f"reclass_at needs a four-level family, got {family.depth}")
    if not u > 0:
        raise ValueError("u must be positive")
    _require_nested(family)
    lv = family.levels.astype(np.int8)
    if not np.array_equal(lv[1], lv[2]):
        raise ValueError("reclass_at expects an empty third class")
    sigma = lv[0]
    xi = lv[1] - lv[0]
    zeta = lv[3] - lv[2]
    left = family.window.sites <= m
    xi_new = (xi + zeta) * left
    gamma_new = xi * ~left
    zeta_new = zeta * ~left
    new = np.stack([
        sigma,
        sigma + xi_new,
        sigma + xi_new + gamma_new,
        sigma + xi_new + gamma_new + zeta_new,
    ]).astype(np.uint8)
    return NestedFamily(family.window, new, family.front)


def default_t_burn(kernel: JumpKernel, window: Window) -> float:
    return 10.0 * window.size / min(1.0, abs(kernel.drift) + 1.0)


def coupled_product(params: StepProfileParams, window: Window, seed: int) -> NestedFamily:
    """``(sigma, theta)`` from shared uniforms: ``sigma = U < rho``, ``theta = U < lambda``."""
    u = site_uniforms(window, seed)
    return NestedFamily(window, np.stack([u < params.rho, u < params.lam]).astype(np.uint8))


def burn_in_coupled(params: StepProfileParams, kernel: JumpKernel, window: Window,
                    t_burn: Optional[float] = None, seed: int = 0) -> NestedFamily:
    """Approximate sample of the invariant law of the coupled pair.

    Starts from the shared-uniform product coupling and evolves it on the
    window closed into a ring, up to a time drawn uniformly from
    ``[t_burn, 2 t_burn]``. The ring keeps both Bernoulli marginals exactly
    invariant. When the product coupling is already invariant (``rho`` in
    {0, lambda} or ``lambda == 1``) it is returned without evolution.
    """
    if t_burn is None:
        t_burn = default_t_burn(kernel, window)
    if t_burn < 0:
        raise ValueError("t_burn must be >= 0")
    pair = coupled_product(params, window, seed)
    if params.rho in (0.0, params.lam) or params.lam == 1.0 or t_burn == 0:
        return pair
    t_obs = t_burn * (1.0 + keyed_uniform(to_seed(seed), BURN_TIME, 0, 0))
    stream = EventStream(derive_seed(seed, 0, BURN_STREAM), kernel, window)
    levels = pair.levels.copy()
    evolve_levels(levels, pair.front, stream, t_obs, periodic=True, group=2)
    return NestedFamily(window, levels)
