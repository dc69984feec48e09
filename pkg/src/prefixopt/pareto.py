"""Pareto fronts over design records and dominance comparison of approaches.

A design record ties one graph (by digest plus serialized form) to the
cost points measured for it, one per delay target in external mode or a
single analytical point.  Fronts are exact non-dominated subsets of all
points from all records; equal points merge and keep every contributing
design id.  Records and fronts round-trip through a small archive
directory for external plotting.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import CostPoint
from .graphs import PrefixGraph


@dataclass(frozen=True)
class DesignRecord:
    design_id: str
    source: str  # dqn | sa | exhaustive | regular:<name>
    points: tuple[CostPoint, ...]
    graph: dict
    w: tuple[float, float] | None = None
    mode: str = "analytical"
    scaling: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        g = PrefixGraph.from_dict(self.graph)  # every record must deserialize legal
        if g.key != self.design_id:
            raise ValueError("design_id does not match the serialized graph")

    @classmethod
    def for_graph(cls, g: PrefixGraph, source: str, points, w=None,
                  mode: str = "analytical", scaling=(1.0, 1.0)) -> "DesignRecord":
        pts = tuple(p if isinstance(p, CostPoint) else CostPoint(*p) for p in points)
        return cls(g.key, source, pts, g.to_dict(), None if w is None else tuple(w),
                   mode, tuple(scaling))

    def to_dict(self) -> dict:
        return {
            "design_id": self.design_id,
            "source": self.source,
            "points": [[p.area, p.delay] for p in self.points],
            "graph": self.graph,
            "w": None if self.w is None else list(self.w),
            "mode": self.mode,
            "scaling": list(self.scaling),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignRecord":
        return cls(
            design_id=doc["design_id"],
            source=doc["source"],
            points=tuple(CostPoint(a, d) for a, d in doc["points"]),
            graph=doc["graph"],
            w=None if doc.get("w") is None else tuple(doc["w"]),
            mode=doc.get("mode", "analytical"),
            scaling=tuple(doc.get("scaling", (1.0, 1.0))),
        )


@dataclass(frozen=True)
class FrontPoint:
    area: float
    delay: float
    ids: tuple[str, ...]


@dataclass(frozen=True)
class ParetoFront:
    """Non-dominated (area, delay) antichain, delay ascending / area descending."""

    points: tuple[FrontPoint, ...]
    mode: str = "analytical"
    scaling: tuple[float, float] = (1.0, 1.0)

    def __len__(self):
        return len(self.points)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "scaling": list(self.scaling),
            "points": [
                {"area": p.area, "delay": p.delay, "ids": list(p.ids)} for p in self.points
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParetoFront":
        return cls(
            tuple(FrontPoint(p["area"], p["delay"], tuple(p["ids"])) for p in doc["points"]),
            doc.get("mode", "analytical"),
            tuple(doc.get("scaling", (1.0, 1.0))),
        )


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """Weak dominance with at least one strict improvement."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def front(records) -> ParetoFront:
    """Exact non-dominated subset over every cost point of every record."""
    records = list(records)
    mode = records[0].mode if records else "analytical"
    scaling = records[0].scaling if records else (1.0, 1.0)
    for r in records:
        if r.mode != mode or tuple(r.scaling) != tuple(scaling):
            raise ValueError("records mix evaluation modes or scalings")
    merged: dict[tuple[float, float], set[str]] = {}
    for rec in records:
        for p in rec.points:
            merged.setdefault((p.area, p.delay), set()).add(rec.design_id)
    kept: list[FrontPoint] = []
    best_delay = float("inf")
    for (area, delay), ids in sorted(merged.items()):
        if delay < best_delay:  # area ascending scan: survive only with new best delay
            kept.append(FrontPoint(area, delay, tuple(sorted(ids))))
            best_delay = delay
    kept.sort(key=lambda p: p.delay)
    return ParetoFront(tuple(kept), mode, tuple(scaling))


@dataclass
class Comparison:
    """Dominance report of front A against front B."""

    summary: str  # "A dominates B" | "B dominates A" | "mutual" | "mixed"
    b_dominated: list[bool]
    a_dominated: list[bool]
    max_area_gap_pct: float | None  # positive: A cheaper than B at matched delay
    gap_at_delay: float | None
    details: list[dict] = field(default_factory=list)


def _interp_area(points: list[FrontPoint], delay: float) -> float | None:
    """Linear interpolation of area along a front, constant past the last knot."""
    if not points or delay < points[0].delay:
        return None
    if delay >= points[-1].delay:
        return points[-1].area
    for left, right in zip(points, points[1:]):
        if left.delay <= delay <= right.delay:
            if right.delay == left.delay:
                return min(left.area, right.area)
            t = (delay - left.delay) / (right.delay - left.delay)
            return left.area + t * (right.area - left.area)
    return None


def _weakly_covered(point: FrontPoint, other: ParetoFront) -> bool:
    return any(
        q.area <= point.area and q.delay <= point.delay for q in other.points
    )


def compare(front_a: ParetoFront, front_b: ParetoFront) -> Comparison:
    """Whether A's front weakly dominates B's, with the peak area gap.

    The gap at one of B's delays interpolates A's front linearly and is
    positive when A achieves lower area there.  Fronts must share mode and
    scaling to be comparable.
    """
    if front_a.mode != front_b.mode or tuple(front_a.scaling) != tuple(front_b.scaling):
        raise ValueError("fronts are not in comparable units")
    b_dominated = [_weakly_covered(p, front_a) for p in front_b.points]
    a_dominated = [_weakly_covered(p, front_b) for p in front_a.points]
    if all(b_dominated) and all(a_dominated):
        summary = "mutual"
    elif all(b_dominated):
        summary = "A dominates B"
    elif all(a_dominated):
        summary = "B dominates A"
    else:
        summary = "mixed"

    apts = list(front_a.points)
    best_gap, best_delay, details = None, None, []
    for p in front_b.points:
        a_area = _interp_area(apts, p.delay)
        if a_area is None or p.area == 0:
            continue
        gap = 100.0 * (p.area - a_area) / p.area
        details.append({"delay": p.delay, "b_area": p.area, "a_area": a_area, "gap_pct": gap})
        if best_gap is None or gap > best_gap:
            best_gap, best_delay = gap, p.delay
    return Comparison(summary, b_dominated, a_dominated, best_gap, best_delay, details)


# -- archives -----------------------------------------------------------------


def write_archive(directory: str | Path, records, front_obj: ParetoFront | None = None) -> dict:
    """Write records.jsonl plus front.json / front.csv; returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = list(records)
    rec_path = directory / "records.jsonl"
    with open(rec_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    if front_obj is None:
        front_obj = front(records)
    front_path = directory / "front.json"
    front_path.write_text(json.dumps(front_obj.to_dict(), indent=2) + "\n")
    csv_path = directory / "front.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["area", "delay", "ids"])
        for p in front_obj.points:
            writer.writerow([p.area, p.delay, ";".join(p.ids)])
    return {"records": str(rec_path), "front": str(front_path), "csv": str(csv_path)}


def read_records(directory: str | Path) -> list[DesignRecord]:
    path = Path(directory) / "records.jsonl"
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            out.append(DesignRecord.from_dict(json.loads(line)))
    return out


def read_front(directory: str | Path) -> ParetoFront:
    return ParetoFront.from_dict(json.loads((Path(directory) / "front.json").read_text()))
