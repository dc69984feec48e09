"""Area/delay costing of prefix graphs.

Two evaluation modes share one interface.  The analytical mode charges
unit area per non-input node and per-node delay 1.0 + 0.5 * fanout,
giving a single cost point.  The external mode hands a generated netlist
to a user-configured subprocess once per graph, collects achieved
(area, delay) pairs at several delay targets, interpolates a monotone
tradeoff curve through the non-dominated samples, and reads the cost of
a graph as the point on that curve minimizing the scalarized objective
for a weight vector.  External results are cached on disk keyed by the
graph digest.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .graphs import PrefixGraph

ANALYTICAL = "analytical"
EXTERNAL = "external"

# Scaling constants that put raw synthesis area/delay numbers on comparable
# footing for scalarization; analytical costs are conventionally unscaled.
DEFAULT_EXTERNAL_SCALING = (0.001, 10.0)
UNIT_SCALING = (1.0, 1.0)


class EvaluationError(RuntimeError):
    """External evaluator failure; carries the raw subprocess output."""

    def __init__(self, message: str, output: str = ""):
        super().__init__(message)
        self.output = output


@dataclass(frozen=True)
class CostPoint:
    area: float
    delay: float

    def scalarized(self, w) -> float:
        wa, wd = _weight_pair(w)
        return wa * self.area + wd * self.delay

    def as_array(self) -> np.ndarray:
        return np.array([self.area, self.delay], dtype=float)


@dataclass(frozen=True)
class ScalarWeight:
    """Convex combination coefficients for the (area, delay) objectives."""

    w_area: float
    w_delay: float

    def __post_init__(self):
        if self.w_area < 0 or self.w_delay < 0:
            raise ValueError("weights must be nonnegative")
        if abs(self.w_area + self.w_delay - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1; use ScalarWeight.normalized")

    @classmethod
    def normalized(cls, w_area: float, w_delay: float) -> "ScalarWeight":
        total = w_area + w_delay
        if w_area < 0 or w_delay < 0 or total <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        return cls(w_area / total, w_delay / total)

    def as_array(self) -> np.ndarray:
        return np.array([self.w_area, self.w_delay], dtype=float)


def _weight_pair(w) -> tuple[float, float]:
    """Accept a ScalarWeight or any positive-scale (w_area, w_delay) pair."""
    if isinstance(w, ScalarWeight):
        return w.w_area, w.w_delay
    wa, wd = float(w[0]), float(w[1])
    if wa < 0 or wd < 0 or wa + wd <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    return wa, wd


# -- analytical model --------------------------------------------------------


def arrival_times(g: PrefixGraph) -> dict:
    """Per-node arrival: inputs at 0, else max parent arrival + 1 + 0.5 * fanout.

    The fanout penalty is charged to the driving node itself (the
    alternative, charging consumers, would be a one-line change here).
    """
    g.require_legal()
    fan = g.fanouts
    arr = {}
    for m in range(g.n):
        row = g.rows[m]
        arr[(m, m)] = 0.0
        for l in reversed(row[:-1]):
            up, lp = g.parents[(m, l)]
            arr[(m, l)] = max(arr[up], arr[lp]) + 1.0 + 0.5 * fan[(m, l)]
    return arr


def analytical_cost(g: PrefixGraph, scaling=UNIT_SCALING) -> CostPoint:
    """Unit-area-per-node, fanout-loaded-delay cost model."""
    g.require_legal()
    arr = arrival_times(g)
    delay = max(arr[(i, 0)] for i in range(1, g.n))
    return CostPoint(scaling[0] * g.size, scaling[1] * delay)


# -- tradeoff curves ---------------------------------------------------------


def remove_dominated(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Keep the lower-left staircase of (delay, area) pairs.

    A sample is dropped when another sample has no worse delay and no
    worse area (synthesis noise above the tradeoff frontier).  Exact
    duplicates collapse to one point.  The result has strictly increasing
    delay and strictly decreasing area.
    """
    kept: list[tuple[float, float]] = []
    for d, a in sorted(set(points)):
        if not kept or a < kept[-1][1]:  # delay ascending: must improve area to survive
            kept.append((d, a))
    return kept


class CostCurve:
    """Interpolated area-delay tradeoff built from evaluator samples.

    `samples` holds (delay_target, raw_area, raw_delay) triples sorted by
    target.  The interpolant is a shape-preserving piecewise-cubic through
    the non-dominated achieved (delay, area) pairs, constant outside the
    sampled delay range.
    """

    def __init__(self, samples):
        samples = [(float(t), float(a), float(d)) for t, a, d in samples]
        if not samples:
            raise ValueError("a cost curve needs at least one sample")
        self.samples = sorted(samples)
        self.knots = remove_dominated([(d, a) for _, a, d in self.samples])
        self._delays = np.array([d for d, _ in self.knots])
        self._areas = np.array([a for _, a in self.knots])
        if len(self.knots) >= 2:
            self._interp = PchipInterpolator(self._delays, self._areas)
        else:
            self._interp = None

    @property
    def delay_range(self) -> tuple[float, float]:
        return float(self._delays[0]), float(self._delays[-1])

    def area_at(self, delay):
        """Raw area achievable at a raw delay; constant beyond the knot range."""
        if self._interp is None:
            return np.full_like(np.asarray(delay, dtype=float), self._areas[0])
        d = np.clip(np.asarray(delay, dtype=float), self._delays[0], self._delays[-1])
        return self._interp(d)

    def to_record(self) -> list[list[float]]:
        return [list(s) for s in self.samples]

    @classmethod
    def from_record(cls, rec) -> "CostCurve":
        return cls([tuple(s) for s in rec])

    def __eq__(self, other):
        return isinstance(other, CostCurve) and self.samples == other.samples

    def __repr__(self):
        return f"CostCurve({self.samples!r})"


def interpolate(points: list[tuple[float, float]]):
    """Monotone interpolant through (delay, area) pairs, dominated pairs removed.

    Returns a callable of delay.  With one surviving pair the interpolant
    is constant.
    """
    if not points:
        raise ValueError("cannot interpolate an empty sample set")
    curve = CostCurve([(d, a, d) for d, a in points])
    return curve.area_at


def w_optimal(curve: CostCurve, w, scaling=UNIT_SCALING) -> CostPoint:
    """Point on the curve minimizing w_area*c_area*area + w_delay*c_delay*delay.

    Located by a 2048-point grid scan plus one local grid refinement; ties
    resolve to the lowest delay.  The argmin is invariant under positive
    rescaling of w.
    """
    wa, wd = _weight_pair(w)
    ca, cd = scaling
    lo, hi = curve.delay_range
    if lo == hi:
        return CostPoint(ca * float(curve.area_at(lo)), cd * lo)

    def objective(ds):
        return wa * ca * curve.area_at(ds) + wd * cd * ds

    grid = np.linspace(lo, hi, 2048)
    i = int(np.argmin(objective(grid)))
    lo2 = grid[max(i - 1, 0)]
    hi2 = grid[min(i + 1, len(grid) - 1)]
    fine = np.linspace(lo2, hi2, 1025)
    j = int(np.argmin(objective(fine)))
    d = float(fine[j])
    return CostPoint(ca * float(curve.area_at(d)), cd * d)


# -- external evaluator protocol ---------------------------------------------


@dataclass
class EvalConfig:
    """Evaluation settings shared by every consumer of graph costs.

    In external mode `command` is run as
    ``<command> --netlist <path> --targets <t1,t2,...>`` and must print one
    ``<target> <achieved_area> <achieved_delay>`` line per target.
    """

    mode: str = ANALYTICAL
    delay_targets: tuple[float, ...] = ()
    scaling: tuple[float, float] | None = None
    command: str | None = None
    cache_path: str | None = None
    worker_count: int = 1
    timeout: float = 120.0
    netlist_mode: str = "simple"

    def __post_init__(self):
        if self.mode not in (ANALYTICAL, EXTERNAL):
            raise ValueError(f"unknown evaluation mode {self.mode!r}")
        if self.scaling is None:
            self.scaling = UNIT_SCALING if self.mode == ANALYTICAL else DEFAULT_EXTERNAL_SCALING
        self.scaling = (float(self.scaling[0]), float(self.scaling[1]))
        self.delay_targets = tuple(float(t) for t in self.delay_targets)
        if self.mode == EXTERNAL:
            if not self.command:
                raise ValueError("external mode requires an evaluator command")
            if not self.delay_targets:
                raise ValueError("external mode requires at least one delay target")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "delay_targets": list(self.delay_targets),
            "scaling": list(self.scaling),
            "command": self.command,
            "cache_path": self.cache_path,
            "worker_count": self.worker_count,
            "timeout": self.timeout,
            "netlist_mode": self.netlist_mode,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown evaluation config keys: {sorted(extra)}")
        doc = dict(doc)
        for tuple_key in ("delay_targets", "scaling"):
            if doc.get(tuple_key) is not None:
                doc[tuple_key] = tuple(doc[tuple_key])
        return cls(**doc)


class CurveCache:
    """Append-only on-disk cache of evaluator curves, keyed by graph digest.

    Each line is a JSON record ``{"key", "targets", "samples"}``.  A corrupt
    trailing record (interrupted write) is tolerated on load; corruption
    anywhere else is an error.  Reads are lock-free; writes serialize.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._mem: dict[tuple[str, tuple[float, ...]], CostCurve] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            lines = self.path.read_text().splitlines()
            for i, line in enumerate(lines):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    curve = CostCurve.from_record(rec["samples"])
                    targets = tuple(float(t) for t in rec["targets"])
                    self._mem[(rec["key"], targets)] = curve
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    if i == len(lines) - 1:
                        break  # truncated final write; drop it
                    raise ValueError(f"corrupt cache record at line {i + 1}: {exc}") from exc

    def __len__(self):
        return len(self._mem)

    def get(self, key: str, targets) -> CostCurve | None:
        return self._mem.get((key, tuple(float(t) for t in targets)))

    def put(self, key: str, targets, curve: CostCurve) -> None:
        targets = tuple(float(t) for t in targets)
        with self._lock:
            self._mem[(key, targets)] = curve
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(
                        json.dumps(
                            {"key": key, "targets": list(targets), "samples": curve.to_record()}
                        )
                        + "\n"
                    )
                    fh.flush()


def _invoke_evaluator(g: PrefixGraph, cfg: EvalConfig) -> CostCurve:
    from . import netlists  # deferred: netlists imports graphs only

    netlist = netlists.emit(g, mode=cfg.netlist_mode)
    targets = cfg.delay_targets
    with tempfile.TemporaryDirectory(prefix="prefixopt-eval-") as tmp:
        path = Path(tmp) / f"{g.key[:16]}.net"
        path.write_text(netlist.text())
        cmd = shlex.split(cfg.command) + [
            "--netlist",
            str(path),
            "--targets",
            ",".join(repr(t) for t in targets),
        ]
        try:
            proc = subprocess.run(
                cmd, capture_output=True, text=True, timeout=cfg.timeout
            )
        except subprocess.TimeoutExpired as exc:
            raise EvaluationError(
                f"evaluator timed out after {cfg.timeout}s", output=str(exc.stdout or "")
            ) from exc
    raw = proc.stdout
    if proc.returncode != 0:
        raise EvaluationError(
            f"evaluator exited with status {proc.returncode}", output=raw + proc.stderr
        )
    lines = [ln for ln in raw.splitlines() if ln.strip()]
    if len(lines) != len(targets):
        raise EvaluationError(
            f"evaluator returned {len(lines)} result lines for {len(targets)} targets",
            output=raw,
        )
    samples = []
    for target, line in zip(targets, lines):
        parts = line.split()
        try:
            echoed, area, delay = (float(p) for p in parts)
        except (ValueError, TypeError) as exc:
            raise EvaluationError(f"malformed evaluator line {line!r}", output=raw) from exc
        if not math.isclose(echoed, target, rel_tol=1e-9, abs_tol=1e-12):
            raise EvaluationError(
                f"evaluator echoed target {echoed} for requested {target}", output=raw
            )
        if not (math.isfinite(area) and math.isfinite(delay)) or area <= 0 or delay <= 0:
            raise EvaluationError(f"non-positive metrics in line {line!r}", output=raw)
        samples.append((target, area, delay))
    return CostCurve(samples)


def external_cost(g: PrefixGraph, cfg: EvalConfig, cache: CurveCache | None = None) -> CostCurve:
    """Evaluate one graph through the subprocess protocol, with caching."""
    if cfg.mode != EXTERNAL:
        raise ValueError("external_cost requires an external-mode config")
    g.require_legal()
    if cache is not None:
        hit = cache.get(g.key, cfg.delay_targets)
        if hit is not None:
            return hit
    curve = _invoke_evaluator(g, cfg)
    if cache is not None:
        cache.put(g.key, cfg.delay_targets, curve)
    return curve


@dataclass
class BatchResult:
    curves: dict[str, CostCurve] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    requested: int = 0
    unique: int = 0
    cache_hits: int = 0
    external_calls: int = 0

    @property
    def hit_ratio(self) -> float:
        return self.cache_hits / self.unique if self.unique else 0.0


def evaluate_batch(
    graphs, cfg: EvalConfig, cache: CurveCache | None = None
) -> BatchResult:
    """Cost a batch of graphs: deduplicate, serve cache hits, dispatch misses.

    Misses run on up to `cfg.worker_count` concurrent evaluator
    subprocesses.  Per-graph failures are isolated into `errors`; the
    curve map stays partial.
    """
    result = BatchResult()
    todo: dict[str, PrefixGraph] = {}
    for g in graphs:
        result.requested += 1
        if g.key not in todo:
            todo[g.key] = g
    result.unique = len(todo)

    if cfg.mode == ANALYTICAL:
        for key, g in todo.items():
            cost = analytical_cost(g)
            result.curves[key] = CostCurve([(cost.delay, cost.area, cost.delay)])
        return result

    misses: list[PrefixGraph] = []
    for key, g in todo.items():
        hit = cache.get(key, cfg.delay_targets) if cache is not None else None
        if hit is not None:
            result.curves[key] = hit
            result.cache_hits += 1
        else:
            misses.append(g)

    def work(g: PrefixGraph):
        return g.key, _invoke_evaluator(g, cfg)

    if misses:
        with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
            futures = [pool.submit(work, g) for g in misses]
            for g, fut in zip(misses, futures):
                try:
                    key, curve = fut.result()
                except EvaluationError as exc:
                    result.errors[g.key] = str(exc)
                    continue
                result.external_calls += 1
                result.curves[key] = curve
                if cache is not None:
                    cache.put(key, cfg.delay_targets, curve)
    return result


# -- unified costing ---------------------------------------------------------


def cost_point(
    g: PrefixGraph, w, cfg: EvalConfig, cache: CurveCache | None = None
) -> CostPoint:
    """Scaled cost of a graph under the configured mode.

    Analytical mode ignores the weight (single-point cost); external mode
    returns the w-optimal point on the graph's tradeoff curve.
    """
    if cfg.mode == ANALYTICAL:
        return analytical_cost(g, cfg.scaling)
    return w_optimal(external_cost(g, cfg, cache), w, cfg.scaling)


def reward(
    prev: PrefixGraph,
    nxt: PrefixGraph,
    w,
    cfg: EvalConfig,
    cache: CurveCache | None = None,
) -> np.ndarray:
    """Componentwise cost decrease (area, delay) from prev to next."""
    a = cost_point(prev, w, cfg, cache)
    b = cost_point(nxt, w, cfg, cache)
    return np.array([a.area - b.area, a.delay - b.delay], dtype=float)
