"""Construction MDP over legal prefix graphs.

States are legal graphs; actions add or delete one interior node.  After
every action a legalization pass repairs the graph by regenerating it
from its deletable (minlist) nodes and inserting any missing lower
parents, so each step maps a legal graph to a legal graph.  Redundant
actions (adding a present node, deleting a non-deletable one) are masked
off.  Episodes have a fixed horizon; the design space has no terminal
states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .graphs import (
    IllegalGraphError,
    Node,
    PrefixGraph,
    check_width,
    interior_positions,
    mandatory_nodes,
    ripple_carry,
    sklansky,
)

ADD = "add"
DELETE = "delete"
KINDS = (ADD, DELETE)


class RedundantActionError(ValueError):
    """Action is masked off: it would be undone by legalization."""


class PolicyError(RuntimeError):
    """A policy returned an action its mask forbids (policy bug)."""


@dataclass(frozen=True, order=True)
class Action:
    """Add or delete the interior node at (msb, lsb)."""

    kind: str
    msb: int
    lsb: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")

    @property
    def position(self) -> Node:
        return (self.msb, self.lsb)


@dataclass(frozen=True)
class Transition:
    state: PrefixGraph
    action: Action
    reward: np.ndarray | None  # (area delta, delay delta) or None until evaluated
    next_state: PrefixGraph


def action_space_size(n: int) -> int:
    """Number of targetable positions, (n-1)(n-2)/2."""
    check_width(n)
    return (n - 1) * (n - 2) // 2


def _check_position(n: int, msb: int, lsb: int) -> None:
    if not (1 <= lsb <= n - 2 and lsb + 1 <= msb <= n - 1):
        raise ValueError(f"({msb}, {lsb}) is not an interior position of width {n}")


def mask(g: PrefixGraph) -> np.ndarray:
    """Boolean (n, n, 2) legality grid: [..., 0] add legal, [..., 1] delete legal.

    Adding is legal at absent interior positions, deleting at interior
    nodes in the minlist.  Input/output positions are never legal.
    """
    g.require_legal()
    return _mask_cached(g)


@lru_cache(maxsize=65536)
def _mask_cached(g: PrefixGraph) -> np.ndarray:
    m = np.zeros((g.n, g.n, 2), dtype=bool)
    minlist = g.minlist
    for pos in interior_positions(g.n):
        if pos not in g.nodes:
            m[pos[0], pos[1], 0] = True
        elif pos in minlist:
            m[pos[0], pos[1], 1] = True
    m.flags.writeable = False
    return m


def legal_actions(g: PrefixGraph) -> list[Action]:
    """All mask-legal actions sorted by (kind, msb, lsb)."""
    grid = mask(g)
    out = [Action(ADD, m, l) for m, l in zip(*np.nonzero(grid[:, :, 0]))]
    out += [Action(DELETE, m, l) for m, l in zip(*np.nonzero(grid[:, :, 1]))]
    return [Action(a.kind, int(a.msb), int(a.lsb)) for a in out]


def allows(grid: np.ndarray, action: Action) -> bool:
    return bool(grid[action.msb, action.lsb, 0 if action.kind == ADD else 1])


def legalize(n: int, generating: Iterable[Node]) -> set[Node]:
    """Regenerate a full node set from a generating set.

    Starts from the generating nodes plus all inputs/outputs, then scans
    rows from msb n-1 down to 0 and columns from msb-1 down to 0, adding
    the lower parent of every present node.  Additions always land in
    strictly lower rows, so a single top-down pass closes the set.
    """
    nodes = set(generating)
    nodes.update(mandatory_nodes(n))
    for m in range(n - 1, -1, -1):
        above = m
        for l in range(m - 1, -1, -1):
            if (m, l) in nodes:
                nodes.add((above - 1, l))
                above = l
    return nodes


def step(g: PrefixGraph, action: Action) -> PrefixGraph:
    """Apply an add/delete action and legalize.

    Add inserts the position into the minlist, then prunes from the
    minlist the lower parents of the row's minlist nodes (their parent
    assignments may have shifted onto the new node).  Delete removes the
    position from the minlist.  Either way the next graph is regenerated
    from the updated minlist, so side nodes may appear or vanish.
    """
    g.require_legal()
    _check_position(g.n, action.msb, action.lsb)
    pos = action.position
    generating = set(g.minlist)

    if action.kind == ADD:
        if pos in g.nodes:
            raise RedundantActionError(f"redundant action: node {pos} already present")
        generating.add(pos)
        msb = action.msb
        row = sorted(set(g.rows[msb]) | {action.lsb})
        above = {row[i]: row[i + 1] for i in range(len(row) - 1)}
        for l in range(msb - 1, -1, -1):
            if (msb, l) in generating:
                generating.discard((above[l] - 1, l))
    else:
        if pos not in g.minlist:
            raise RedundantActionError(
                f"redundant action: node {pos} is absent or not deletable"
            )
        generating.discard(pos)

    return PrefixGraph(g.n, frozenset(legalize(g.n, generating))).require_legal()


# -- state encoding ----------------------------------------------------------


def encode(g: PrefixGraph) -> np.ndarray:
    """(n, n, 4) feature grid with channels in [0, 1].

    Channels: node present, node in minlist, level / n, fanout / n (both
    clamped to 1).  Absent positions are all-zero.
    """
    g.require_legal()
    return _encode_cached(g)


@lru_cache(maxsize=65536)
def _encode_cached(g: PrefixGraph) -> np.ndarray:
    n = g.n
    t = np.zeros((n, n, 4), dtype=np.float64)
    levels, fanouts, minlist = g.levels, g.fanouts, g.minlist
    for node in g.nodes:
        m, l = node
        t[m, l, 0] = 1.0
        if node in minlist:
            t[m, l, 1] = 1.0
        t[m, l, 2] = min(levels[node] / n, 1.0)
        t[m, l, 3] = min(fanouts[node] / n, 1.0)
    t.flags.writeable = False
    return t


# -- episodes ----------------------------------------------------------------

Policy = Callable[[PrefixGraph, np.ndarray, np.random.Generator], Action]
RewardFn = Callable[[PrefixGraph, PrefixGraph], np.ndarray]


def reset(n: int, rng: np.random.Generator) -> PrefixGraph:
    """Ripple-carry or Sklansky start, chosen uniformly at random."""
    check_width(n)
    return ripple_carry(n) if rng.integers(2) == 0 else sklansky(n)


def random_policy(g: PrefixGraph, grid: np.ndarray, rng: np.random.Generator) -> Action:
    actions = legal_actions(g)
    if not actions:
        raise PolicyError(f"no legal actions at width {g.n}")
    return actions[rng.integers(len(actions))]


def run_episode(
    policy: Policy,
    n: int,
    max_steps: int,
    rng: np.random.Generator,
    reward_fn: RewardFn | None = None,
    start: PrefixGraph | None = None,
    log: "TransitionLog | None" = None,
) -> list[Transition]:
    """Roll out a fixed-horizon episode.

    The policy is queried with the current graph and its action mask and
    must return a mask-legal action.  When `reward_fn` is None rewards are
    left unfilled for deferred evaluation.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    g = start.require_legal() if start is not None else reset(n, rng)
    transitions = []
    for _ in range(max_steps):
        grid = mask(g)
        action = policy(g, grid, rng)
        if not allows(grid, action):
            raise PolicyError(f"policy returned masked action {action}")
        nxt = step(g, action)
        reward = None if reward_fn is None else np.asarray(reward_fn(g, nxt), dtype=float)
        tr = Transition(g, action, reward, nxt)
        transitions.append(tr)
        if log is not None:
            log.append(tr)
        g = nxt
    return transitions


class TransitionLog:
    """Append-only transition record file, one JSON transition per line.

    States are referenced by canonical key; a sidecar `<path>.designs.jsonl`
    file maps each key to its serialized graph (written once per new key)
    so logs can be replayed offline.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.designs_path = Path(str(path) + ".designs.jsonl")
        self._known: set[str] = set()
        if self.designs_path.exists():
            for line in self.designs_path.read_text().splitlines():
                if line.strip():
                    self._known.add(json.loads(line)["key"])
        self._fh = open(self.path, "a")
        self._dh = open(self.designs_path, "a")

    def _register(self, g: PrefixGraph) -> str:
        if g.key not in self._known:
            self._dh.write(json.dumps({"key": g.key, "graph": g.to_dict()}) + "\n")
            self._dh.flush()
            self._known.add(g.key)
        return g.key

    def append(self, tr: Transition) -> None:
        rec = {
            "state": self._register(tr.state),
            "action": [tr.action.kind, tr.action.msb, tr.action.lsb],
            "reward": None if tr.reward is None else [float(x) for x in tr.reward],
            "next_state": self._register(tr.next_state),
        }
        self._fh.write(json.dumps(rec) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
        self._dh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_transitions(path: str | Path) -> list[Transition]:
    """Rebuild transitions (with real graphs) from a log and its designs sidecar."""
    path = Path(path)
    designs = {}
    for line in Path(str(path) + ".designs.jsonl").read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            designs[rec["key"]] = PrefixGraph.from_dict(rec["graph"])
    out = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind, m, l = rec["action"]
        reward = None if rec["reward"] is None else np.asarray(rec["reward"], dtype=float)
        out.append(
            Transition(designs[rec["state"]], Action(kind, m, l), reward, designs[rec["next_state"]])
        )
    return out
