"""Measurements on trajectories: densities, fluxes, the subadditive array."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .coupling import NestedFamily, burn_in_coupled, reclass_at
from .engine import (
    Configuration,
    Event,
    EventStream,
    Window,
    count_interval,
    default_buffer,
    evolve_levels,
    evolve_to,
)
from .kernel import JumpKernel, StepProfileParams, integrated_profile


class BufferInadequate(RuntimeError):
    """The boundary may have influenced an observed quantity."""


class FluxCounter:
    """Net number of particle moves across ``boundary`` (left to right positive).

    A move from ``x`` to ``y`` counts +1 when ``x <= r < y`` and -1 when
    ``y <= r < x``; blocked or suppressed jumps count nothing.
    """

    def __init__(self, boundary: float, count: int = 0):
        self.boundary = boundary
        self.count = count

    @property
    def bond(self) -> int:
        return math.floor(self.boundary)

    def native_spec(self):
        return ("flux", self.bond)

    def native_add(self, value: int) -> None:
        self.count += value

    def __call__(self, event: Event, before: Configuration) -> None:
        flux_observe(self, event, before)

    def __repr__(self):
        return f"FluxCounter(boundary={self.boundary}, count={self.count})"


class CrossingCounter:
    """Clock marks whose jump segment spans ``boundary``, applied or not."""

    def __init__(self, boundary: float, count: int = 0):
        self.boundary = boundary
        self.count = count

    def native_spec(self):
        return ("cross", math.floor(self.boundary))

    def native_add(self, value: int) -> None:
        self.count += value

    def __call__(self, event: Event, before: Configuration) -> None:
        r = math.floor(self.boundary)
        a, b = sorted((event.site, event.target))
        if a <= r < b:
            self.count += 1


class MoveCrossingCounter:
    """Applied moves (either direction) whose jump spans ``boundary``."""

    def __init__(self, boundary: float, count: int = 0):
        self.boundary = boundary
        self.count = count

    def __call__(self, event: Event, before: Configuration) -> None:
        probe = FluxCounter(self.boundary)
        flux_observe(probe, event, before)
        self.count += abs(probe.count)


def flux_observe(counter: FluxCounter, event: Event, config_before: Configuration) -> FluxCounter:
    w = config_before.window
    x, y = event.site, event.target
    if x in w and y in w and x != y and config_before[x] == 1 and config_before[y] == 0:
        r = counter.bond
        if x <= r < y:
            counter.count += 1
        elif y <= r < x:
            counter.count -= 1
    return counter


@dataclass
class Trajectory:
    initial: Configuration
    final: Configuration
    t: float
    fluxes: Dict[float, int] = field(default_factory=dict)
    suppressed: int = 0
    events: int = 0


def run_trajectory(config: Configuration, stream: EventStream, t: float,
                   boundaries: Sequence[float] = ()) -> Trajectory:
    levels = config.occupancy.copy().reshape(1, -1)
    info = evolve_levels(levels, config.front, stream, t,
                         flux_bonds=[math.floor(r) for r in boundaries])
    final = Configuration(config.window, levels[0], info.front)
    fluxes = {r: int(info.flux[0, k]) for k, r in enumerate(boundaries)}
    return Trajectory(config, final, t, fluxes, info.suppressed, info.events)


def flux_identity_check(trajectory: Trajectory, r: float) -> bool:
    """``J_t^r == sum_{x > r} (eta_t(x) - eta_0(x))`` on a closed window."""
    w = trajectory.initial.window
    right = w.sites > r
    delta = (trajectory.final.occupancy.astype(np.int64)
             - trajectory.initial.occupancy.astype(np.int64))
    return trajectory.fluxes[r] == int(delta[right].sum())


def empirical_density(config_t: Configuration, u: float, v: float, t: float) -> float:
    a, b = u * t, v * t
    if not config_t.is_exact_on(a, b):
        raise BufferInadequate(
            f"interval [{a}, {b}] leaves the boundary-safe range {config_t.safe_range}"
        )
    return count_interval(config_t, a, b) / t


def lln_error(config_t: Configuration, u: float, v: float, t: float,
              kernel: JumpKernel, params: StepProfileParams) -> float:
    return empirical_density(config_t, u, v, t) - integrated_profile(u, v, kernel, params)


# ---------------------------------------------------------------------------
# subadditive array


@dataclass
class SubadditiveRecord:
    u: float
    n_max: int
    entries: Dict[Tuple[int, int], int]
    crossings_first_step: int = 0
    seed: Optional[int] = None
    nest_violations: int = 0

    def X(self, m: int, n: int) -> int:
        return self.entries[(m, n)]

    def matrix(self) -> np.ndarray:
        """Upper-triangular array, -1 below the diagonal."""
        out = -np.ones((self.n_max + 1, self.n_max + 1), dtype=np.int64)
        for (m, n), val in self.entries.items():
            out[m, n] = val
        return out

    def subadditivity_violations(self) -> List[Tuple[int, int]]:
        """All ``(m, n)`` with ``X_{0,n} > X_{0,m} + X_{m,n}``."""
        bad = []
        for n in range(self.n_max + 1):
            for m in range(n + 1):
                if self.X(0, n) > self.X(0, m) + self.X(m, n):
                    bad.append((m, n))
        return bad


def subadditive_window(kernel: JumpKernel, u: float, n_max: int,
                       buffer: Optional[int] = None) -> Window:
    """``[-B, n_max + 2B]``: on the right the boundary taint and the
    second-class support approach each other, so that side gets two buffers."""
    if buffer is None:
        buffer = default_buffer(kernel, n_max / u)
    return Window(-buffer, n_max + 2 * buffer)


def four_class_start(pair: NestedFamily) -> NestedFamily:
    """Levels ``(sigma, sigma+xi, sigma+xi, theta)`` with ``xi = T_0(theta - sigma)``."""
    sigma, theta = pair.levels[0], pair.levels[1]
    mid = np.where(pair.window.sites <= 0, theta, sigma)
    return NestedFamily(pair.window, np.stack([sigma, mid, mid, theta]), pair.front)


def subadditive_array(params: StepProfileParams, kernel: JumpKernel, u: float, n_max: int,
                      seed: int, initial: Optional[NestedFamily] = None, *,
                      window: Optional[Window] = None, t_burn: Optional[float] = None,
                      buffer: Optional[int] = None) -> SubadditiveRecord:
    """One trajectory of ``X_{m,n}`` for ``0 <= m <= n <= n_max``.

    The four-class process is started from ``initial`` (a coupled pair, by
    default from :func:`burn_in_coupled`). At each time ``m/u`` a re-split
    copy is spawned from the original process and then evolves with the same
    clocks; ``X_{m,n}`` counts its second-class particles right of ``n`` at
    time ``n/u``.
    """
    if not u > 0:
        raise ValueError("u must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if initial is None:
        if window is None:
            window = subadditive_window(kernel, u, n_max, buffer)
        initial = burn_in_coupled(params, kernel, window, t_burn, seed)
    window = initial.window
    if initial.depth != 2:
        raise ValueError("initial must be a coupled pair (sigma, theta)")
    base = four_class_start(initial)
    n_fam = n_max
    levels = np.zeros((4 * n_fam, window.size), dtype=np.uint8)
    levels[0:4] = base.levels
    # rightmost site that may hold a second-class particle of each family
    never = window.lo - 10 * window.size
    support = np.full(n_fam, never, dtype=np.int64)
    support[0] = 0
    front = base.front
    stream = EventStream(seed, kernel, window)
    sites = window.sites
    entries: Dict[Tuple[int, int], int] = {(0, 0): 0}
    crossings = 0
    violations = 0
    for n in range(1, n_max + 1):
        info = evolve_levels(levels, front, stream, n / u, rfronts=support, group=4,
                             cross_bonds=[0] if n == 1 else [])
        front = info.front
        support = info.rfronts
        violations += info.nest_violations
        if n == 1:
            crossings = int(info.crossings[0])
        right = sites > n
        for m in range(n):
            if not (front[0] <= n and support[m] < front[1]):
                raise BufferInadequate(
                    f"X[{m},{n}] not boundary-safe: taint fronts {front}, "
                    f"second-class support up to {support[m]}"
                )
            xi = levels[4 * m + 1, right].astype(np.int64) - levels[4 * m, right]
            entries[(m, n)] = int(xi.sum())
        entries[(n, n)] = 0
        if n < n_max:
            fam0 = NestedFamily(window, levels[0:4], front)
            levels[4 * n:4 * n + 4] = reclass_at(fam0, n, u).levels
            support[n] = n
    return SubadditiveRecord(u, n_max, entries, crossings, seed, violations)


class XEstimate(NamedTuple):
    value: float
    slope: float


def estimate_X_infinity(record: SubadditiveRecord) -> XEstimate:
    """``X_{0,n_max}/n_max`` and the least-squares slope of ``X_{0,n}/n``
    against ``n`` over the last half of the record (near 0 when settled)."""
    if record.n_max < 2:
        raise ValueError("need n_max >= 2")
    n = np.arange(1, record.n_max + 1)
    ratio = np.array([record.X(0, k) / k for k in n], dtype=float)
    half = n >= max(1, record.n_max // 2)
    slope = float(np.polyfit(n[half], ratio[half], 1)[0]) if half.sum() >= 2 else 0.0
    return XEstimate(float(ratio[-1]), slope)


def density_from_X(u: float, v: float, params: StepProfileParams,
                   x_u: float, x_v: float) -> float:
    """``rho (v - u) + X(u) - X(v)`` with ``X(w) = w * lim X_{0,n}/n`` at rate w."""
    return params.rho * (v - u) + u * x_u - v * x_v


# ---------------------------------------------------------------------------
# product-marginal test


@dataclass
class MarginalReport:
    passed: bool
    density: float
    n_samples: int
    per_site_mean: np.ndarray
    pooled_mean: float
    mean_z: float
    pair_cov: float
    cov_z: float
    max_site_z: float

    def summary(self) -> str:
        return (f"{'pass' if self.passed else 'FAIL'}: mean {self.pooled_mean:.5f} "
                f"(z={self.mean_z:+.2f}), adjacent cov {self.pair_cov:+.5f} "
                f"(z={self.cov_z:+.2f}), max |site z| {self.max_site_z:.2f}")


def bernoulli_marginal_test(configs: Sequence[Configuration], region: Tuple[float, float],
                            density: float, n_sigma: float = 3.0) -> MarginalReport:
    """Check independent samples against the Bernoulli product law on ``region``.

    Passes iff the pooled occupation mean lies within ``n_sigma`` binomial
    standard errors of ``density`` and the pooled adjacent-pair covariance
    ``mean((eta(x)-d)(eta(x+1)-d))`` lies within ``n_sigma`` of its null
    spread ``d(1-d)/sqrt(#pairs)``.
    """
    a, b = math.ceil(region[0]), math.floor(region[1])
    rows = []
    for c in configs:
        if not c.is_exact_on(a, b):
            raise BufferInadequate(f"region [{a}, {b}] outside safe range {c.safe_range}")
        rows.append(c.occupancy[a - c.window.lo:b - c.window.lo + 1])
    data = np.array(rows, dtype=float)
    r, s = data.shape
    per_site = data.mean(axis=0)
    pooled = float(data.mean())
    d = density
    var = d * (1 - d)
    centred = data - d
    pair = centred[:, :-1] * centred[:, 1:]
    pair_cov = float(pair.mean()) if pair.size else 0.0
    if var == 0:
        ok = bool(np.all(data == d))
        return MarginalReport(ok, d, r, per_site, pooled, 0.0 if ok else math.inf,
                              pair_cov, 0.0, 0.0 if ok else math.inf)
    mean_z = (pooled - d) / math.sqrt(var / data.size)
    cov_z = pair_cov / (var / math.sqrt(pair.size)) if pair.size else 0.0
    site_z = np.abs(per_site - d) / math.sqrt(var / r)
    passed = abs(mean_z) <= n_sigma and abs(cov_z) <= n_sigma
    return MarginalReport(bool(passed), d, r, per_site, pooled, float(mean_z), pair_cov,
                          float(cov_z), float(site_z.max()))
