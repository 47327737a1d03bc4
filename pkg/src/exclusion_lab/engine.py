"""Graphical construction of the exclusion process on a finite window.

Each site carries its own rate-1 Poisson clock; at a ring the particle (if
any) attempts a jump by a displacement drawn from the kernel and succeeds iff
the target is inside the window and empty. All randomness is keyed by
``(seed, site, event index)``, so results do not depend on the window size
as long as the boundary never influences the region being observed.

Boundary influence is tracked exactly rather than bounded a priori: every
configuration carries a pair of "taint fronts" ``(L, R)``. Sites ``<= L`` or
``>= R`` may differ from the infinite-lattice process driven by the same
clocks; every site strictly between them is guaranteed identical.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import _core
from ._rng import INITIAL, to_seed, uniforms_for_sites
from .kernel import JumpKernel, StepProfileParams


@dataclass(frozen=True)
class Window:
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"window needs lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)

    @property
    def symmetric(self) -> bool:
        return self.lo == -self.hi

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi

    def index(self, x: int) -> int:
        if x not in self:
            raise IndexError(f"site {x} outside window [{self.lo}, {self.hi}]")
        return x - self.lo


def default_buffer(kernel: JumpKernel, t: float) -> int:
    return int(math.ceil((kernel.first_moment + 3.0) * t))


def experiment_window(kernel: JumpKernel, intervals: Sequence[Tuple[float, float]], t: float,
                      buffer: Optional[int] = None) -> Window:
    """Window ``[min(u)*t - B, max(v)*t + B]`` covering every observation interval."""
    if buffer is None:
        buffer = default_buffer(kernel, t)
    lo = math.floor(min(u for u, _ in intervals) * t) - buffer
    hi = math.ceil(max(v for _, v in intervals) * t) + buffer
    return Window(int(lo), int(hi))


def _fresh_front(window: Window) -> Tuple[int, int]:
    return window.lo - 1, window.hi + 1


@dataclass(frozen=True, eq=False)
class Configuration:
    """Occupancy of every site of ``window`` (one uint8 per site)."""

    window: Window
    occupancy: np.ndarray
    front: Tuple[int, int] = None

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.uint8)
        if occ.ndim != 1 or occ.size != self.window.size:
            raise ValueError(
                f"occupancy has shape {occ.shape}, window needs ({self.window.size},)"
            )
        if occ.size and occ.max(initial=0) > 1:
            raise ValueError("occupancy values must be 0 or 1")
        if occ.flags.writeable:
            occ = occ.copy()
            occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)
        if self.front is None:
            object.__setattr__(self, "front", _fresh_front(self.window))

    @classmethod
    def from_sites(cls, window: Window, occupied: Iterable[int]) -> "Configuration":
        occ = np.zeros(window.size, dtype=np.uint8)
        for x in occupied:
            occ[window.index(x)] = 1
        return cls(window, occ)

    @classmethod
    def empty(cls, window: Window) -> "Configuration":
        return cls(window, np.zeros(window.size, dtype=np.uint8))

    @classmethod
    def full(cls, window: Window) -> "Configuration":
        return cls(window, np.ones(window.size, dtype=np.uint8))

    def __getitem__(self, x: int) -> int:
        return int(self.occupancy[self.window.index(x)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self):
        return hash((self.window, self.occupancy.tobytes()))

    def __le__(self, other: "Configuration") -> bool:
        return self.window == other.window and bool(np.all(self.occupancy <= other.occupancy))

    @property
    def particles(self) -> int:
        return int(self.occupancy.sum())

    @property
    def occupied_sites(self) -> np.ndarray:
        return self.window.sites[self.occupancy == 1]

    @property
    def safe_range(self) -> Tuple[int, int]:
        """Inclusive range of sites guaranteed unaffected by the boundary."""
        return self.front[0] + 1, self.front[1] - 1

    def is_exact_on(self, a: float, b: float) -> bool:
        lo, hi = self.safe_range
        return lo <= math.ceil(a) and math.floor(b) <= hi

    def packed(self) -> bytes:
        return np.packbits(self.occupancy).tobytes()

    def with_occupancy(self, occ: np.ndarray) -> "Configuration":
        return Configuration(self.window, occ, self.front)


class Event(NamedTuple):
    time: float
    site: int
    displacement: int

    @property
    def target(self) -> int:
        return self.site + self.displacement


class EventStream:
    """Keyed Poisson clocks for every site of a window.

    The k-th event of site x is a pure function of ``(seed, x, k)``;
    only events with time > ``start`` are delivered.
    """

    def __init__(self, seed: int, kernel: JumpKernel, window: Window, start: float = 0.0,
                 reflected: bool = False):
        if start < 0:
            raise ValueError("stream start must be >= 0")
        if reflected and not window.symmetric:
            raise ValueError("reflected streams need a window symmetric about 0")
        self.seed = int(seed)
        self.kernel = kernel
        self.window = window
        self.start = float(start)
        self.reflected = reflected
        self.now = float(start)
        self._seed64 = to_seed(seed)
        self._disps = kernel.displacements
        self._cum = kernel.cumulative
        self._times, self._counts, self._heap, self._keys = _core.init_clocks(
            self._seed64, np.int64(window.lo), window.size, self.start
        )

    @property
    def mode(self) -> int:
        return _core.REFLECTED if self.reflected else _core.CLOSED

    def copy(self) -> "EventStream":
        new = object.__new__(EventStream)
        new.__dict__.update(self.__dict__)
        new._times = self._times.copy()
        new._counts = self._counts.copy()
        new._heap = self._heap.copy()
        return new

    def _transform(self, t, x, z) -> Event:
        if self.reflected:
            return Event(float(t), int(-(x + z)), int(z))
        return Event(float(t), int(x), int(z))

    def peek(self) -> Event:
        t, x, z = _core.peek(np.int64(self.window.lo), self._times, self._counts, self._heap,
                             self._keys, self._disps, self._cum)
        return self._transform(t, x, z)

    def next_event(self) -> Event:
        t, x, z = _core.pop(np.int64(self.window.lo), self._times, self._counts, self._heap,
                            self._keys, self._disps, self._cum)
        self.now = max(self.now, float(t))
        return self._transform(t, x, z)

    def __iter__(self):
        while True:
            yield self.next_event()

    def __repr__(self):
        return (f"EventStream(seed={self.seed}, kernel={self.kernel.literal()!r}, "
                f"window=[{self.window.lo}, {self.window.hi}], now={self.now}, "
                f"reflected={self.reflected})")


def next_event(stream: EventStream, window: Optional[Window] = None) -> Event:
    if window is not None and window != stream.window:
        raise ValueError("stream was initialized over a different window")
    return stream.next_event()


def shift_stream(stream: EventStream, s: float) -> EventStream:
    """Fresh view of the same clocks delivering only events with time > s."""
    if s < 0:
        raise ValueError("shift must be >= 0")
    return EventStream(stream.seed, stream.kernel, stream.window, start=s,
                       reflected=stream.reflected)


def sample_initial_step(window: Window, params: StepProfileParams, seed: int) -> Configuration:
    """Product measure with density lambda on sites <= 0 and rho on sites > 0.

    Uses the keyed uniform ``U_x`` of each site; ``U_x`` lives in [0, 1) so the
    strict comparison makes densities 0 and 1 exact.
    """
    u = site_uniforms(window, seed)
    dens = np.where(window.sites <= 0, params.lam, params.rho)
    return Configuration(window, (u < dens).astype(np.uint8))


def site_uniforms(window: Window, seed: int) -> np.ndarray:
    return uniforms_for_sites(to_seed(seed), INITIAL, np.int64(window.lo), window.size)


def apply_event(config: Configuration, event: Event) -> Configuration:
    w = config.window
    target = event.site + event.displacement
    if event.site not in w or target not in w or event.displacement == 0:
        return config
    i, j = event.site - w.lo, target - w.lo
    occ = config.occupancy
    if occ[i] == 1 and occ[j] == 0:
        occ = occ.copy()
        occ[i], occ[j] = 0, 1
        return config.with_occupancy(occ)
    return config


def count_interval(config: Configuration, a: float, b: float) -> int:
    w = config.window
    first, last = math.ceil(a), math.floor(b)
    if first < w.lo or last > w.hi:
        raise ValueError(f"interval [{a}, {b}] not inside window [{w.lo}, {w.hi}]")
    if last < first:
        return 0
    return int(config.occupancy[first - w.lo:last - w.lo + 1].sum())


# ---------------------------------------------------------------------------
# evolution


@dataclass
class RunInfo:
    """Counters accumulated by one call into the compiled loop."""

    flux: np.ndarray
    crossings: np.ndarray
    rfronts: np.ndarray
    front: Tuple[int, int]
    events: int = 0
    moves: int = 0
    suppressed: int = 0
    nest_violations: int = 0


def _as_i64(values) -> np.ndarray:
    return np.asarray(list(values), dtype=np.int64).reshape(-1)


def evolve_levels(levels: np.ndarray, front: Tuple[int, int], stream: EventStream, t: float, *,
                  flux_bonds=(), cross_bonds=(), rfronts=(), group: int = 1,
                  periodic: bool = False, max_events: int = -1) -> RunInfo:
    """Advance a ``(K, N)`` level array in place to time ``t``."""
    if t < stream.now:
        raise ValueError(f"cannot evolve to t={t}: stream already at {stream.now}")
    w = stream.window
    if levels.shape[1] != w.size:
        raise ValueError("levels and stream cover different windows")
    lo_f, hi_f = front
    if t > stream.now and not periodic:
        reach = stream.kernel.reach
        lo_f = max(lo_f, w.lo - 1 + reach)
        hi_f = min(hi_f, w.hi + 1 - reach)
    flux_r = _as_i64(flux_bonds)
    flux = np.zeros((levels.shape[0], flux_r.size), dtype=np.int64)
    cross_r = _as_i64(cross_bonds)
    cross = np.zeros(cross_r.size, dtype=np.int64)
    rf = np.concatenate([np.array([lo_f], dtype=np.int64), _as_i64(rfronts)])
    lf = np.array([hi_f], dtype=np.int64)
    stats = np.zeros(_core.N_STATS, dtype=np.int64)
    mode = _core.PERIODIC if periodic else stream.mode
    done = _core.advance(levels, np.int64(w.lo), stream._times, stream._counts, stream._heap,
                         stream._keys, stream._disps, stream._cum, float(stream.now), float(t),
                         np.int64(max_events), mode, group, flux_r, flux, cross_r, cross,
                         rf, lf, stats)
    # a capped call may stop before t; the caller then owns stream.now
    if max_events < 0 or done < max_events:
        stream.now = float(t)
    return RunInfo(flux=flux, crossings=cross, rfronts=rf[1:], front=(int(rf[0]), int(lf[0])),
                   events=int(stats[_core.N_EVENTS]), moves=int(stats[_core.N_MOVES]),
                   suppressed=int(stats[_core.N_SUPPRESSED]),
                   nest_violations=int(stats[_core.N_NEST_VIOLATIONS]))


Observer = Callable[[Event, Configuration], None]


def _native(observers) -> bool:
    return all(hasattr(o, "native_spec") for o in observers)


def evolve_to(config: Configuration, stream: EventStream, t: float,
              observers: Sequence[Observer] = ()) -> Configuration:
    """Apply every event with time <= t, in global (time, site) order.

    Observers are called as ``observer(event, config_before)`` once per event
    delivered by the stream, before it is applied. Counters that expose
    ``native_spec`` are handled inside the compiled loop.
    """
    if config.window != stream.window:
        raise ValueError("configuration and stream cover different windows")
    if t < stream.now:
        raise ValueError(f"cannot evolve to t={t}: stream already at {stream.now}")
    levels = config.occupancy.copy().reshape(1, -1)
    if not observers or _native(observers):
        specs = [o.native_spec() for o in observers]
        flux_obs = [(o, s[1]) for o, s in zip(observers, specs) if s[0] == "flux"]
        cross_obs = [(o, s[1]) for o, s in zip(observers, specs) if s[0] == "cross"]
        info = evolve_levels(levels, config.front, stream, t,
                             flux_bonds=[b for _, b in flux_obs],
                             cross_bonds=[b for _, b in cross_obs])
        for k, (o, _) in enumerate(flux_obs):
            o.native_add(int(info.flux[0, k]))
        for k, (o, _) in enumerate(cross_obs):
            o.native_add(int(info.crossings[k]))
        return Configuration(config.window, levels[0], info.front)
    front = config.front
    while True:
        ev = stream.peek()
        if ev.time > t:
            break
        before = Configuration(config.window, levels[0], front)
        for obs in observers:
            obs(ev, before)
        front = evolve_levels(levels, front, stream, t, max_events=1).front
        stream.now = ev.time
    stream.now = float(t)
    return Configuration(config.window, levels[0], front)


def record_event_log(config: Configuration, stream: EventStream, t: float):
    """Evolve to ``t`` and return ``(final, rows)`` with one row per event."""
    rows: List[Tuple[float, int, int, int]] = []

    def log(ev: Event, before: Configuration):
        after = apply_event(before, ev)
        rows.append((ev.time, ev.site, ev.displacement, int(after is not before)))

    final = evolve_to(config, stream, t, observers=[log])
    return final, rows


def dump_event_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "site", "displacement", "applied"])
        for time, site, z, applied in rows:
            writer.writerow([repr(float(time)), site, z, applied])


def dump_snapshot(config: Configuration, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site", "occupied"])
        for x, occ in zip(config.window.sites, config.occupancy):
            writer.writerow([int(x), int(occ)])


def load_snapshot(path, window: Optional[Window] = None) -> Configuration:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["site"]), int(r["occupied"])) for r in csv.DictReader(fh)]
    sites = [s for s, _ in rows]
    if window is None:
        window = Window(min(sites), max(sites))
    occ = np.zeros(window.size, dtype=np.uint8)
    for s, o in rows:
        occ[window.index(s)] = o
    return Configuration(window, occ)
