"""Experiment descriptions, replication and CSV output."""
from __future__ import annotations

import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from ._rng import derive_seed
from .engine import (
    EventStream,
    default_buffer,
    evolve_to,
    experiment_window,
    sample_initial_step,
)
from .kernel import JumpKernel, StepProfileParams, integrated_profile, parse_kernel
from .observables import (
    BufferInadequate,
    bernoulli_marginal_test,
    density_from_X,
    empirical_density,
    estimate_X_infinity,
    subadditive_array,
    subadditive_window,
)

KINDS = ("lln", "stationary", "shock", "rarefaction", "subadditive", "invariants")
LLN_KINDS = ("lln", "stationary", "shock", "rarefaction", "subadditive")
COLUMNS = ("seed", "kind", "u", "v", "t", "empirical", "predicted", "error", "runtime_ms")
WORKERS_ENV = "EXCLUSION_LAB_WORKERS"


class SpecError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ExperimentSpec:
    kernel: str
    lam: float
    rho: float
    t_final: float
    intervals: Tuple[Tuple[float, float], ...] = ()
    kind: str = "lln"
    replicas: int = 20
    seed: int = 0
    buffer_override: Optional[int] = None
    t_burn: Optional[float] = None
    n_max: Optional[int] = None
    timing: bool = False

    def __post_init__(self):
        validate_spec(self)

    @property
    def jump_kernel(self) -> JumpKernel:
        return parse_kernel(self.kernel)

    @property
    def params(self) -> StepProfileParams:
        return StepProfileParams(self.lam, self.rho)

    @property
    def buffer(self) -> int:
        if self.buffer_override is not None:
            return self.buffer_override
        return default_buffer(self.jump_kernel, self.t_final)


def validate_spec(spec: ExperimentSpec) -> None:
    if spec.kind not in KINDS:
        raise SpecError(f"unknown kind {spec.kind!r}; expected one of {', '.join(KINDS)}")
    try:
        kernel = parse_kernel(spec.kernel)
    except ValueError as exc:
        raise SpecError(f"bad kernel: {exc}") from None
    try:
        StepProfileParams(spec.lam, spec.rho)
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    if not spec.t_final > 0:
        raise SpecError("t_final must be > 0")
    if spec.replicas < 1:
        raise SpecError("replicas must be >= 1")
    if spec.buffer_override is not None and spec.buffer_override < 0:
        raise SpecError("buffer must be >= 0")
    if spec.t_burn is not None and spec.t_burn < 0:
        raise SpecError("t_burn must be >= 0")
    if spec.kind in LLN_KINDS and not spec.intervals:
        raise SpecError(f"kind {spec.kind} needs at least one interval")
    for u, v in spec.intervals:
        if not u < v:
            raise SpecError(f"interval ({u}, {v}) needs u < v")
    if spec.kind == "stationary" and spec.lam != spec.rho:
        raise SpecError("kind stationary requires lambda == rho")
    if spec.kind == "rarefaction" and not kernel.drift > 0:
        raise SpecError("kind rarefaction requires positive drift")
    if spec.kind == "shock" and kernel.drift > 0:
        raise SpecError("kind shock requires drift <= 0")
    if spec.kind == "subadditive" and any(u <= 0 for u, _ in spec.intervals):
        raise SpecError("kind subadditive needs 0 < u < v for every interval")
    if spec.n_max is not None and spec.n_max < 2:
        raise SpecError("n_max must be >= 2")


_KEYS = {
    "kind": "kind", "kernel": "kernel", "lambda": "lam", "rho": "rho",
    "t_final": "t_final", "time": "t_final", "interval": "interval", "intervals": "intervals",
    "replicas": "replicas", "seed": "seed", "buffer": "buffer_override",
    "t_burn": "t_burn", "n_max": "n_max",
}
_REQUIRED = ("kernel", "lam", "rho", "t_final")


def _parse_interval(text: str, line: int) -> Tuple[float, float]:
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise SpecError(f"interval needs two numbers, got {text!r}", line)
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise SpecError(f"interval needs two numbers, got {text!r}", line) from None


def parse_spec(text: str, **overrides) -> ExperimentSpec:
    """Parse a ``key = value`` document (``#`` starts a comment).

    ``interval = U V`` may repeat; ``intervals = U V; U V`` gives several at
    once. Keyword ``overrides`` (already-typed field values) win over the
    document.
    """
    fields: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    intervals: List[Tuple[float, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise SpecError(f"unknown key {key!r}", lineno)
        name = _KEYS[key]
        if name == "interval":
            intervals.append(_parse_interval(value, lineno))
            continue
        if name == "intervals":
            intervals.extend(_parse_interval(p, lineno) for p in value.split(";") if p.strip())
            continue
        if name in fields:
            raise SpecError(f"duplicate key {key!r}", lineno)
        try:
            if name in ("lam", "rho", "t_final", "t_burn"):
                fields[name] = float(value)
            elif name in ("replicas", "seed", "buffer_override", "n_max"):
                fields[name] = int(value, 0)
            elif name == "kernel":
                parse_kernel(value)
                fields[name] = value
            else:
                fields[name] = value
        except ValueError as exc:
            raise SpecError(f"bad value for {key}: {exc}", lineno) from None
        lines[name] = lineno
    if intervals:
        fields["intervals"] = tuple(intervals)
    fields.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in _REQUIRED if k not in fields]
    if missing:
        names = {v: k for k, v in _KEYS.items()}
        raise SpecError(f"missing required key(s): {', '.join(names.get(m, m) for m in missing)}")
    try:
        return ExperimentSpec(**fields)
    except SpecError as exc:
        # attach the line of the offending key when we can tell which one it was
        msg = str(exc)
        for name, lineno in lines.items():
            label = {"lam": "lambda"}.get(name, name)
            if label in msg and exc.line is None:
                raise SpecError(msg, lineno) from None
        raise


def split_documents(text: str) -> List[str]:
    """Split a sweep file on lines consisting of ``---``."""
    docs, cur = [], []
    for line in text.splitlines():
        if line.strip() == "---":
            docs.append("\n".join(cur))
            cur = []
        else:
            cur.append(line)
    docs.append("\n".join(cur))
    return [d for d in docs if d.split("#")[0].strip() or any(
        l.split("#", 1)[0].strip() for l in d.splitlines())]


# ---------------------------------------------------------------------------
# results


@dataclass
class ResultTable:
    rows: List[tuple] = field(default_factory=list)
    metadata: Dict[str, str] = field(default_factory=dict)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r[0], r[2], r[3], r[1]))

    def column(self, name: str) -> list:
        k = COLUMNS.index(name)
        return [r[k] for r in self.rows]

    def rows_of(self, kind: str) -> List[tuple]:
        return [r for r in self.rows if r[1] == kind]

    @property
    def failed_rows(self) -> List[tuple]:
        return [r for r in self.rows if r[1].endswith(":inadequate") or
                (r[1].startswith("invariants:") and r[7] != 0)]


def spec_metadata(spec: ExperimentSpec) -> Dict[str, str]:
    k = spec.jump_kernel
    meta = {
        "kind": spec.kind,
        "kernel": k.literal(),
        "alpha": repr(k.drift),
        "M": repr(k.first_moment),
        "lambda": repr(spec.lam),
        "rho": repr(spec.rho),
        "t_final": repr(spec.t_final),
        "intervals": "; ".join(f"{u!r} {v!r}" for u, v in spec.intervals),
        "replicas": str(spec.replicas),
        "seed": str(spec.seed),
        "buffer": str(spec.buffer),
        "t_burn": "default" if spec.t_burn is None else repr(spec.t_burn),
        "code_version": __version__,
    }
    if spec.kind == "subadditive":
        meta["n_max"] = "u*t_final" if spec.n_max is None else str(spec.n_max)
    return meta


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_csv(table: ResultTable, path) -> None:
    text = table_to_csv(table)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def table_to_csv(table: ResultTable) -> str:
    out = io.StringIO()
    for key, val in table.metadata.items():
        out.write(f"# {key} = {val}\n")
    out.write(",".join(COLUMNS) + "\n")
    for row in table.rows:
        out.write(",".join(_fmt(x) for x in row) + "\n")
    return out.getvalue()


def read_csv(path) -> ResultTable:
    meta: Dict[str, str] = {}
    rows: List[tuple] = []
    with open(path, encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
            elif header is None:
                header = line.split(",")
                if tuple(header) != COLUMNS:
                    raise ValueError(f"unexpected header {header}")
            elif line:
                f = line.split(",")
                rows.append((int(f[0]), f[1], float(f[2]), float(f[3]), float(f[4]),
                             float(f[5]), float(f[6]), float(f[7]), int(f[8])))
    return ResultTable(rows, meta)


def recheck_predicted(table: ResultTable) -> bool:
    """Recompute ``predicted`` from the metadata; True iff every lln-type row matches."""
    kernel = parse_kernel(table.metadata["kernel"])
    params = StepProfileParams(float(table.metadata["lambda"]), float(table.metadata["rho"]))
    for row in table.rows:
        kind = row[1].split(":")[0]
        if kind in LLN_KINDS:
            if integrated_profile(row[2], row[3], kernel, params) != row[6]:
                return False
    return True


# ---------------------------------------------------------------------------
# running


def replica_seeds(spec: ExperimentSpec) -> List[int]:
    return [derive_seed(spec.seed, i) for i in range(spec.replicas)]


def _elapsed_ms(t0: float, spec: ExperimentSpec) -> int:
    return int(round((time.perf_counter() - t0) * 1000)) if spec.timing else 0


def _run_lln_replica(spec: ExperimentSpec, seed: int):
    t0 = time.perf_counter()
    kernel, params, t = spec.jump_kernel, spec.params, spec.t_final
    window = experiment_window(kernel, spec.intervals, t, spec.buffer)
    final = evolve_to(sample_initial_step(window, params, seed), EventStream(seed, kernel, window), t)
    rows = []
    for u, v in spec.intervals:
        predicted = integrated_profile(u, v, kernel, params)
        try:
            emp = empirical_density(final, u, v, t)
            rows.append((seed, spec.kind, u, v, t, emp, predicted, emp - predicted))
        except BufferInadequate:
            rows.append((seed, f"{spec.kind}:inadequate", u, v, t, math.nan, predicted, math.nan))
    extra = None
    if spec.kind == "stationary":
        a = min(u for u, _ in spec.intervals) * t
        b = max(v for _, v in spec.intervals) * t
        a, b = max(a, final.safe_range[0]), min(b, final.safe_range[1])
        extra = (math.ceil(a), math.floor(b), final)
    ms = _elapsed_ms(t0, spec)
    return [r + (ms,) for r in rows], extra


def _run_subadditive_replica(spec: ExperimentSpec, seed: int):
    t0 = time.perf_counter()
    kernel, params, t = spec.jump_kernel, spec.params, spec.t_final
    cache: Dict[float, Optional[float]] = {}

    def x_at(w: float) -> Optional[float]:
        if w not in cache:
            n_max = spec.n_max if spec.n_max is not None else max(2, int(round(w * t)))
            buffer = spec.buffer_override
            try:
                rec = subadditive_array(params, kernel, w, n_max, seed, t_burn=spec.t_burn,
                                        window=subadditive_window(kernel, w, n_max, buffer))
                cache[w] = estimate_X_infinity(rec).value
            except BufferInadequate:
                cache[w] = None
        return cache[w]

    rows = []
    for u, v in spec.intervals:
        predicted = integrated_profile(u, v, kernel, params)
        xu, xv = x_at(u), x_at(v)
        if xu is None or xv is None:
            rows.append((seed, "subadditive:inadequate", u, v, t, math.nan, predicted, math.nan))
        else:
            g = density_from_X(u, v, params, xu, xv)
            rows.append((seed, "subadditive", u, v, t, g, predicted, g - predicted))
    ms = _elapsed_ms(t0, spec)
    return [r + (ms,) for r in rows], None


def _run_invariants(spec: ExperimentSpec) -> List[tuple]:
    from .checks import run_suite

    t0 = time.perf_counter()
    results = run_suite(spec.jump_kernel, spec.params, seed=spec.seed, n_seeds=spec.replicas,
                        n_sub_seeds=spec.replicas, t_burn=spec.t_burn)
    ms = _elapsed_ms(t0, spec)
    rows = []
    for res in results:
        name = "invariants:" + res.name.replace(" ", "_")
        rows.append((spec.seed, name, 0.0, 0.0, 0.0, float(res.passed), float(res.runs),
                     float(res.runs - res.passed), ms))
    return rows


def _replica_job(args):
    spec, seed = args
    if spec.kind == "subadditive":
        return _run_subadditive_replica(spec, seed)
    return _run_lln_replica(spec, seed)


def worker_budget() -> int:
    env = os.environ.get(WORKERS_ENV)
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return cpus


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> ResultTable:
    table = ResultTable(metadata=spec_metadata(spec))
    if spec.kind == "invariants":
        table.rows.extend(_run_invariants(spec))
        table.sort()
        return table
    seeds = replica_seeds(spec)
    jobs = [(spec, s) for s in seeds]
    workers = min(workers or worker_budget(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_replica_job, jobs))
    else:
        outputs = [_replica_job(j) for j in jobs]
    extras = []
    for rows, extra in outputs:
        table.rows.extend(rows)
        if extra is not None:
            extras.append(extra)
    if extras:
        a = max(e[0] for e in extras)
        b = min(e[1] for e in extras)
        report = bernoulli_marginal_test([e[2] for e in extras], (a, b), spec.rho)
        table.metadata["marginal_test"] = (
            f"{'pass' if report.passed else 'fail'} region=[{a}, {b}] "
            f"mean_z={report.mean_z:.4f} cov_z={report.cov_z:.4f}"
        )
    table.sort()
    return table


def summarize(table: ResultTable) -> Dict[Tuple[float, float], Tuple[float, float, int]]:
    """Mean empirical value and mean error per interval, over valid rows."""
    out: Dict[Tuple[float, float], List[tuple]] = {}
    for row in table.rows:
        if ":" in row[1]:
            continue
        out.setdefault((row[2], row[3]), []).append(row)
    return {k: (float(np.mean([r[5] for r in rs])), float(np.mean([r[7] for r in rs])), len(rs))
            for k, rs in sorted(out.items())}
