"""Jump kernels and the closed-form hydrodynamic density profile.

Everything in this module is deterministic: the displacement law of the
walk, its drift and first moment, and the entropic Burgers profile ``f``
together with its exact integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

PROB_TOL = 1e-12


@dataclass(frozen=True)
class JumpKernel:
    """Finite-support displacement law ``p(0, z)``.

    ``support`` is a tuple of ``(displacement, probability)`` pairs sorted by
    displacement. Build instances with :func:`validate_kernel` or
    :func:`parse_kernel`; the constructor does not re-check invariants.
    """

    support: Tuple[Tuple[int, float], ...]
    drift: float
    first_moment: float

    @property
    def displacements(self) -> np.ndarray:
        return np.array([z for z, _ in self.support], dtype=np.int64)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.support], dtype=np.float64)

    @property
    def cumulative(self) -> np.ndarray:
        cum = np.cumsum(self.probabilities)
        cum[-1] = 1.0
        return cum

    @property
    def reach(self) -> int:
        """Largest jump length in the support."""
        return int(max(abs(z) for z, _ in self.support))

    def literal(self) -> str:
        return ",".join(f"{z}:{p!r}" for z, p in self.support)


@dataclass(frozen=True)
class StepProfileParams:
    """Left density ``lam`` (sites <= 0) and right density ``rho`` (sites > 0)."""

    lam: float
    rho: float

    def __post_init__(self):
        for name, val in (("lambda", self.lam), ("rho", self.rho)):
            if not (0.0 <= val <= 1.0) or math.isnan(val):
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if self.rho > self.lam:
            raise ValueError(
                f"requires rho ≤ lambda (got rho={self.rho}, lambda={self.lam})"
            )


def validate_kernel(raw_entries: Iterable[Tuple[int, float]]) -> JumpKernel:
    merged: dict[int, float] = {}
    for z, p in raw_entries:
        if int(z) != z:
            raise ValueError(f"displacement must be an integer, got {z!r}")
        p = float(p)
        if not p > 0.0 or math.isinf(p):
            raise ValueError(f"probabilities must be positive, got {p} for z={z}")
        merged[int(z)] = merged.get(int(z), 0.0) + p
    if not merged:
        raise ValueError("kernel support is empty")
    total = math.fsum(merged.values())
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"kernel probabilities sum to {total!r}, expected 1")
    if all(z == 0 for z in merged):
        raise ValueError("kernel needs at least one nonzero displacement")
    support = tuple(sorted(merged.items()))
    drift = math.fsum(z * p for z, p in support)
    first_moment = math.fsum(abs(z) * p for z, p in support)
    return JumpKernel(support=support, drift=drift, first_moment=first_moment)


def parse_kernel(literal: str) -> JumpKernel:
    """Parse ``"1:0.667,-1:0.333"`` style literals.

    Probabilities may be written as fractions (``1:2/3``).
    """
    entries = []
    for chunk in literal.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            z_text, p_text = chunk.split(":")
            z = int(z_text.strip())
            p_text = p_text.strip()
            if "/" in p_text:
                num, den = p_text.split("/")
                p = float(num) / float(den)
            else:
                p = float(p_text)
        except ValueError as exc:
            raise ValueError(f"malformed kernel entry {chunk!r}") from exc
        entries.append((z, p))
    return validate_kernel(entries)


def characteristic_speeds(kernel: JumpKernel, params: StepProfileParams) -> Tuple[float, float]:
    a = kernel.drift
    if a > 0:
        return a * (1 - 2 * params.lam), a * (1 - 2 * params.rho)
    shock = a * (1 - params.lam - params.rho)
    return shock, shock


def burgers_profile(u: float, kernel: JumpKernel, params: StepProfileParams) -> float:
    """Entropic density at macroscopic position ``u`` (time 1)."""
    a = kernel.drift
    lam, rho = params.lam, params.rho
    if a > 0:
        left, right = characteristic_speeds(kernel, params)
        if u < left:
            return lam
        if u <= right:
            return 0.5 * (1 - u / a)
        return rho
    shock = a * (1 - lam - rho)
    return lam if u < shock else rho


def _fan_antiderivative(s: float, a: float) -> float:
    return 0.5 * s - s * s / (4 * a)


def integrated_profile(u: float, v: float, kernel: JumpKernel, params: StepProfileParams) -> float:
    """Exact value of the integral of the profile over ``[u, v]``."""
    if not u < v:
        raise ValueError(f"integrated_profile needs u < v, got u={u}, v={v}")
    lam, rho = params.lam, params.rho
    left, right = characteristic_speeds(kernel, params)
    total = 0.0
    # left plateau
    hi = min(v, left)
    if hi > u:
        total += lam * (hi - u)
    # rarefaction fan (empty when left == right)
    if right > left:
        a = kernel.drift
        p, q = max(u, left), min(v, right)
        if q > p:
            total += _fan_antiderivative(q, a) - _fan_antiderivative(p, a)
    # right plateau
    lo = max(u, right)
    if v > lo:
        total += rho * (v - lo)
    return total


def profile_grid(us: Sequence[float], kernel: JumpKernel, params: StepProfileParams) -> np.ndarray:
    return np.array([burgers_profile(float(u), kernel, params) for u in us])
