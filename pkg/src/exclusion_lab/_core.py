"""Compiled event loop shared by every evolution routine.

State layout: ``levels`` is a ``(K, N)`` uint8 array (one row per coupled
configuration), site ``lo + i`` lives in column ``i``. The clock of every
window site is a rate-1 Poisson process; ``times[i]`` is the time of its
pending event and ``counts[i]`` that event's index in the site substream.
``heap`` is a binary min-heap of column indices ordered by ``(time, site)``.
"""
import math

import numpy as np
from numba import njit

from ._rng import CLOCK, JUMP, site_key, uniform_from_key

CLOSED = 0
PERIODIC = 1
REFLECTED = 2

# stats slots
N_EVENTS = 0
N_MOVES = 1
N_SUPPRESSED = 2
N_NEST_VIOLATIONS = 3
N_STATS = 4


@njit(cache=True)
def _exp_gap(key, k):
    return -math.log1p(-uniform_from_key(key, k))


@njit(cache=True)
def _draw_jump(key, k, disps, cum):
    u = uniform_from_key(key, k)
    for j in range(cum.size - 1):
        if u < cum[j]:
            return disps[j]
    return disps[cum.size - 1]


@njit(cache=True)
def init_clocks(seed, lo, n, start):
    """First pending event strictly after ``start`` for every site."""
    times = np.empty(n, dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    keys = np.empty((2, n), dtype=np.uint64)
    for i in range(n):
        x = np.int64(lo + i)
        keys[0, i] = site_key(seed, CLOCK, x)
        keys[1, i] = site_key(seed, JUMP, x)
        k = np.int64(0)
        t = _exp_gap(keys[0, i], k)
        while t <= start:
            k += 1
            t += _exp_gap(keys[0, i], k)
        times[i] = t
        counts[i] = k
    heap = np.argsort(times, kind="mergesort").astype(np.int64)
    return times, counts, heap, keys


@njit(cache=True)
def _less(times, a, b):
    ta = times[a]
    tb = times[b]
    return ta < tb or (ta == tb and a < b)


@njit(cache=True)
def _sift_down(heap, times):
    n = heap.size
    pos = 0
    item = heap[0]
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and _less(times, heap[child + 1], heap[child]):
            child += 1
        if _less(times, heap[child], item):
            heap[pos] = heap[child]
            pos = child
        else:
            break
    heap[pos] = item


@njit(cache=True)
def peek(lo, times, counts, heap, keys, disps, cum):
    i = heap[0]
    x = np.int64(lo + i)
    return times[i], x, _draw_jump(keys[1, i], counts[i], disps, cum)


@njit(cache=True)
def pop(lo, times, counts, heap, keys, disps, cum):
    i = heap[0]
    x = np.int64(lo + i)
    k = counts[i]
    t = times[i]
    z = _draw_jump(keys[1, i], k, disps, cum)
    counts[i] = k + 1
    times[i] = t + _exp_gap(keys[0, i], k + 1)
    _sift_down(heap, times)
    return t, x, z


SLAB = 2.0


@njit(cache=True)
def _collect_slab(times, counts, keys, t_hi, ev_t, ev_i, ev_k):
    n = 0
    for i in range(times.size):
        t = times[i]
        while t <= t_hi:
            if n == ev_t.size:
                return -1
            ev_t[n] = t
            ev_i[n] = i
            ev_k[n] = counts[i]
            counts[i] += 1
            t += _exp_gap(keys[0, i], counts[i])
            n += 1
        times[i] = t
    return n


@njit(cache=True)
def _order_slab(n, t_lo, t_hi, ev_t, ev_i, order, start):
    """Counting sort of slab events into buckets, then insertion sort per bucket."""
    start[: n + 1] = 0
    width = t_hi - t_lo
    for e in range(n):
        b = int((ev_t[e] - t_lo) / width * n)
        if b >= n:
            b = n - 1
        elif b < 0:
            b = 0
        start[b + 1] += 1
    for b in range(n):
        start[b + 1] += start[b]
    fill = start[:n].copy()
    for e in range(n):
        b = int((ev_t[e] - t_lo) / width * n)
        if b >= n:
            b = n - 1
        elif b < 0:
            b = 0
        order[fill[b]] = e
        fill[b] += 1
    for b in range(n):
        for p in range(start[b] + 1, start[b + 1]):
            e = order[p]
            q = p - 1
            while q >= start[b]:
                o = order[q]
                if ev_t[o] > ev_t[e] or (ev_t[o] == ev_t[e] and ev_i[o] > ev_i[e]):
                    order[q + 1] = o
                    q -= 1
                else:
                    break
            order[q + 1] = e


@njit(cache=True)
def advance(levels, lo, times, counts, heap, keys, disps, cum, t_now, t_end, max_events,
            mode, group, flux_r, flux, cross_r, cross, rfronts, lfronts, stats):
    """Apply pending events with time <= t_end (at most ``max_events`` if >= 0).

    ``flux[k, b]`` accumulates signed moves of level ``k`` across the bond
    ``flux_r[b] | flux_r[b] + 1``; ``cross[c]`` counts clock marks whose jump
    segment spans bond ``cross_r[c]``. Right-moving fronts cover every site
    <= front, left-moving fronts every site >= front; a mark touching the
    covered side extends the front to both endpoints.

    Capped calls pop the heap one event at a time. Uncapped calls process
    time slabs: every event of a slab is collected, put in (time, site) order
    and applied, which reproduces the heap order exactly; the heap is rebuilt
    afterwards. Returns the number of events.
    """
    K = levels.shape[0]
    N = levels.shape[1]
    use_heap = max_events >= 0
    cap = 1 if use_heap else int(N * SLAB * 2) + 64
    ev_t = np.empty(cap, dtype=np.float64)
    ev_i = np.empty(cap, dtype=np.int64)
    ev_k = np.empty(cap, dtype=np.int64)
    order = np.empty(cap, dtype=np.int64)
    start = np.empty(cap + 1, dtype=np.int64)
    t_lo = t_now
    n = 0
    p = 0
    done = 0
    while True:
        if use_heap:
            if done == max_events:
                break
            i = heap[0]
            t = times[i]
            if t > t_end:
                break
            k = counts[i]
            counts[i] = k + 1
            times[i] = t + _exp_gap(keys[0, i], k + 1)
            _sift_down(heap, times)
        else:
            if p == n:
                if t_lo >= t_end:
                    break
                width = SLAB
                while True:
                    t_hi = min(t_lo + width, t_end)
                    saved_t = times.copy()
                    saved_k = counts.copy()
                    n = _collect_slab(times, counts, keys, t_hi, ev_t, ev_i, ev_k)
                    if n >= 0:
                        break
                    times[:] = saved_t
                    counts[:] = saved_k
                    width *= 0.5
                if n > 0:
                    _order_slab(n, t_lo, t_hi, ev_t, ev_i, order, start)
                t_lo = t_hi
                p = 0
                continue
            e = order[p]
            p += 1
            i = ev_i[e]
            k = ev_k[e]
        x = np.int64(lo + i)
        z = _draw_jump(keys[1, i], k, disps, cum)
        done += 1
        if mode == REFLECTED:
            s = -(x + z)
            g = -x
        else:
            s = x
            g = x + z
        if mode == PERIODIC:
            si = i
            gi = (i + z) % N
            inside = True
        else:
            si = s - lo
            gi = g - lo
            inside = si >= 0 and si < N and gi >= 0 and gi < N
        if not inside:
            stats[N_SUPPRESSED] += 1
        elif si != gi:
            for lev in range(K):
                if levels[lev, si] == 1 and levels[lev, gi] == 0:
                    levels[lev, si] = 0
                    levels[lev, gi] = 1
                    stats[N_MOVES] += 1
                    for b in range(flux_r.size):
                        r = flux_r[b]
                        if s <= r and r < g:
                            flux[lev, b] += 1
                        elif g <= r and r < s:
                            flux[lev, b] -= 1
            if group > 1:
                for lev in range(K - 1):
                    if (lev + 1) % group != 0:
                        if levels[lev, si] > levels[lev + 1, si] or levels[lev, gi] > levels[lev + 1, gi]:
                            stats[N_NEST_VIOLATIONS] += 1
        a = min(s, g)
        b = max(s, g)
        for c in range(cross_r.size):
            if a <= cross_r[c] and cross_r[c] < b:
                cross[c] += 1
        for f in range(rfronts.size):
            if a <= rfronts[f] and b > rfronts[f]:
                rfronts[f] = b
        for f in range(lfronts.size):
            if b >= lfronts[f] and a < lfronts[f]:
                lfronts[f] = a
    if not use_heap:
        heap[:] = np.argsort(times, kind="mergesort")
    stats[N_EVENTS] += done
    return done
