"""Prefix graphs on an (msb, lsb) grid.

A width-n prefix graph computes every combination z[i:0] of n inputs under
an associative operator.  Nodes are grid positions (msb, lsb) with
lsb <= msb.  Node (i, i) is the i-th input, nodes (i, 0) for i >= 1 are
the outputs, and (0, 0) is both.  Every non-input node (m, l) combines an
upper parent (m, k) -- the present node in row m with the smallest lsb
k > l -- and a lower parent (k - 1, l), which must also be present for the
graph to be legal.

Parents, levels, fanouts and the deletable node set are all derived from
the node set alone, so a graph is fully described by its width and node
set.  Graph values are immutable and hashable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

Node = tuple[int, int]

MIN_WIDTH = 2
MAX_WIDTH = 64


class WidthError(ValueError):
    """Requested width outside the supported [2, 64] range."""


class IllegalGraphError(ValueError):
    """An operation that requires a legal prefix graph received an illegal one."""


def check_width(n: int) -> int:
    if not isinstance(n, int) or isinstance(n, bool):
        raise WidthError(f"width must be an integer, got {n!r}")
    if not MIN_WIDTH <= n <= MAX_WIDTH:
        raise WidthError(f"width must be in [{MIN_WIDTH}, {MAX_WIDTH}], got {n}")
    return n


def mandatory_nodes(n: int) -> set[Node]:
    """Input nodes (i, i) plus output nodes (i, 0), present in every legal graph."""
    nodes = {(i, i) for i in range(n)}
    nodes.update((i, 0) for i in range(1, n))
    return nodes


def interior_positions(n: int) -> list[Node]:
    """Grid positions that are neither inputs nor outputs, sorted by (msb, lsb).

    These are the only positions a construction step may target; there are
    (n-1)(n-2)/2 of them.
    """
    return [(m, l) for m in range(2, n) for l in range(1, m)]


@dataclass(frozen=True)
class Legality:
    """Verdict of a legality check; `node` and `reason` describe the first violation."""

    ok: bool
    node: Node | None = None
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class NodeAttrs:
    level: int
    fanout: int


@dataclass(frozen=True)
class PrefixGraph:
    """Immutable width-n prefix graph identified by its node set.

    The constructor enforces structural bounds only (coordinates on or
    below the diagonal, inside the grid).  Prefix legality is a separate
    verdict so that broken node sets can be inspected; operations that
    need legality call :meth:`require_legal`.
    """

    n: int
    nodes: frozenset[Node]

    def __post_init__(self):
        check_width(self.n)
        if not isinstance(self.nodes, frozenset):
            object.__setattr__(self, "nodes", frozenset(self.nodes))
        for m, l in self.nodes:
            if not (0 <= l <= m < self.n):
                raise ValueError(f"node ({m}, {l}) outside the width-{self.n} grid")

    @classmethod
    def from_interior(cls, n: int, interior=()) -> "PrefixGraph":
        """Build a graph from its interior nodes; inputs and outputs are implied."""
        nodes = mandatory_nodes(n)
        for m, l in interior:
            if l == 0 or l == m:
                raise ValueError(f"({m}, {l}) is an input/output position, not interior")
            nodes.add((int(m), int(l)))
        return cls(n, frozenset(nodes))

    # -- derived structure ------------------------------------------------

    @cached_property
    def rows(self) -> tuple[tuple[int, ...], ...]:
        """Per-msb tuple of present lsb values, ascending."""
        buckets: list[list[int]] = [[] for _ in range(self.n)]
        for m, l in self.nodes:
            buckets[m].append(l)
        return tuple(tuple(sorted(b)) for b in buckets)

    def is_input(self, node: Node) -> bool:
        return node[0] == node[1]

    def interior(self) -> list[Node]:
        """Interior (non-input, non-output) nodes sorted by (msb, lsb)."""
        return sorted((m, l) for m, l in self.nodes if 0 < l < m)

    @cached_property
    def parents(self) -> dict[Node, tuple[Node, Node]]:
        """(upper, lower) parent coordinates for every non-input node.

        The lower parent coordinate is reported even when absent from the
        node set; legality checking tests its presence.  Requires every
        input node to be present.
        """
        out: dict[Node, tuple[Node, Node]] = {}
        for m in range(self.n):
            row = self.rows[m]
            if not row or row[-1] != m:
                raise IllegalGraphError(f"input node ({m}, {m}) missing")
            above = m
            for l in reversed(row[:-1]):
                out[(m, l)] = ((m, above), (above - 1, l))
                above = l
        return out

    @cached_property
    def legality(self) -> Legality:
        nodes = self.nodes
        for i in range(self.n):
            if (i, i) not in nodes:
                return Legality(False, (i, i), f"missing input node ({i}, {i})")
        for i in range(1, self.n):
            if (i, 0) not in nodes:
                return Legality(False, (i, 0), f"missing output node ({i}, 0)")
        for m in range(1, self.n):
            row = self.rows[m]
            above = m
            for l in reversed(row[:-1]):
                lp = (above - 1, l)
                if lp not in nodes:
                    return Legality(
                        False, (m, l), f"node ({m}, {l}) is missing lower parent {lp}"
                    )
                above = l
        return Legality(True)

    def require_legal(self) -> "PrefixGraph":
        v = self.legality
        if not v.ok:
            raise IllegalGraphError(v.reason)
        return self

    @cached_property
    def minlist(self) -> frozenset[Node]:
        """Nodes that are not the lower parent of any node.

        Only these may be deleted: removing a lower parent would be undone
        by re-legalization.
        """
        self.require_legal()
        lowers = {lp for _, lp in self.parents.values()}
        return frozenset(self.nodes - lowers)

    @cached_property
    def levels(self) -> dict[Node, int]:
        """Topological depth from the inputs: inputs 0, else 1 + max over parents."""
        self.require_legal()
        lv: dict[Node, int] = {}
        for m in range(self.n):
            row = self.rows[m]
            lv[(m, m)] = 0
            for l in reversed(row[:-1]):
                up, lp = self.parents[(m, l)]
                lv[(m, l)] = 1 + max(lv[up], lv[lp])
        return lv

    @cached_property
    def fanouts(self) -> dict[Node, int]:
        """Child counts: how many nodes consume each node as upper or lower parent."""
        self.require_legal()
        fan = dict.fromkeys(self.nodes, 0)
        for up, lp in self.parents.values():
            fan[up] += 1
            fan[lp] += 1
        return fan

    def attrs(self) -> dict[Node, NodeAttrs]:
        self.require_legal()
        lv, fan = self.levels, self.fanouts
        return {v: NodeAttrs(lv[v], fan[v]) for v in self.nodes}

    @cached_property
    def depth(self) -> int:
        return max(self.levels.values())

    @property
    def size(self) -> int:
        """Non-input node count (the analytical area)."""
        return len(self.nodes) - self.n

    # -- identity and serialization ---------------------------------------

    @cached_property
    def key(self) -> str:
        """Stable content digest; equal iff width and node set are equal."""
        body = f"{self.n}:" + ";".join(f"{m},{l}" for m, l in self.interior())
        return hashlib.sha256(body.encode("ascii")).hexdigest()

    def to_dict(self) -> dict:
        return {"n": self.n, "nodes": [[m, l] for m, l in self.interior()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "PrefixGraph":
        """Parse and re-validate a serialized graph; illegal content is rejected."""
        try:
            n = doc["n"]
            raw = doc["nodes"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed graph document: {exc}") from exc
        interior = []
        for item in raw:
            m, l = item
            interior.append((int(m), int(l)))
        return cls.from_interior(n, interior).require_legal()

    @classmethod
    def from_json(cls, text: str) -> "PrefixGraph":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        return f"PrefixGraph(n={self.n}, interior={self.interior()!r})"


def validate(g: PrefixGraph) -> Legality:
    """Legality verdict for a graph; never raises."""
    return g.legality


# -- regular structures ----------------------------------------------------


def ripple_carry(n: int) -> PrefixGraph:
    """Serial chain: the unique minimum-size graph (n-1 non-input nodes)."""
    check_width(n)
    return PrefixGraph.from_interior(n, ()).require_legal()


def sklansky(n: int) -> PrefixGraph:
    """Recursive doubling; minimum depth (log2 n levels for power-of-two n)."""
    check_width(n)
    interior = []
    for m in range(2, n):
        l, d, rest = m, 1, m
        while rest:
            if rest & 1:
                l -= d
                if l > 0:
                    interior.append((m, l))
            rest >>= 1
            d <<= 1
    return PrefixGraph.from_interior(n, interior).require_legal()


def kogge_stone(n: int) -> PrefixGraph:
    """Minimum depth with fanout bounded by 2, at maximum node and wire cost."""
    check_width(n)
    interior = []
    for m in range(2, n):
        l, d = m, 1
        while l - d > 0:
            l -= d
            d <<= 1
            interior.append((m, l))
    return PrefixGraph.from_interior(n, interior).require_legal()


def brent_kung(n: int) -> PrefixGraph:
    """Fanout-bounded tree of roughly twice the minimum depth and 2n node cost."""
    check_width(n)
    interior = []
    span = 2
    while span < n:
        for m in range(span - 1, n, span):
            l = m - span + 1
            if l > 0:
                interior.append((m, l))
        span <<= 1
    return PrefixGraph.from_interior(n, interior).require_legal()


REGULAR_STRUCTURES = {
    "ripple": ripple_carry,
    "sklansky": sklansky,
    "kogge_stone": kogge_stone,
    "brent_kung": brent_kung,
}
