"""Design-space optimizers: scalarized double-DQN, simulated annealing,
and an exhaustive enumerator for small widths.

The DQN learner follows the double estimator: the bootstrap action is the
scalarized argmax under the online network while its value is read from
the lagging target network, componentwise over the (area, delay)
objectives.  Acting and learning are decoupled as round-robin logical
actor loops feeding one replay stream, which keeps runs bitwise
reproducible for a fixed seed.  Simulated annealing proposes uniformly
random legal actions over the same neighborhood the agent uses.  The
enumerator iterates every interior node subset, keeps the legal ones, and
is the ground-truth Pareto oracle for n <= 8.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import environment as env
from .environment import Action, Transition
from .evaluation import (
    ANALYTICAL,
    CostPoint,
    CurveCache,
    EvalConfig,
    _weight_pair,
    cost_point,
)
from .graphs import PrefixGraph, check_width, interior_positions, mandatory_nodes, ripple_carry, sklansky
from .value_functions import NetworkSpec, NeuralQ, TabularQ, greedy_index, select_action, _index_to_action


class CostMemo:
    """In-memory cost cache with hit accounting (any evaluation mode)."""

    def __init__(self, w, cfg: EvalConfig, cache: CurveCache | None = None):
        self.w = w
        self.cfg = cfg
        self.cache = cache
        self.mem: dict[str, CostPoint] = {}
        self.hits = 0
        self.requests = 0

    def cost(self, g: PrefixGraph) -> CostPoint:
        self.requests += 1
        point = self.mem.get(g.key)
        if point is not None:
            self.hits += 1
            return point
        point = cost_point(g, self.w, self.cfg, self.cache)
        self.mem[g.key] = point
        return point

    def scalar(self, g: PrefixGraph) -> float:
        return self.cost(g).scalarized(self.w)

    @property
    def hit_ratio(self) -> float:
        return self.hits / self.requests if self.requests else 0.0


class ReplayBuffer:
    """FIFO ring holding the most recent `capacity` transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def add(self, tr: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def __len__(self):
        return len(self._items)

    def items(self) -> list[Transition]:
        return list(self._items)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform with replacement."""
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def dqn_target(batch, qfn, gamma: float, w) -> np.ndarray:
    """Per-sample (B, 2) double-DQN bootstrap targets.

    y = r + gamma * Q_target(s', a*) with a* the scalarized argmax under
    the online network.  States with no legal next action fall back to
    y = r.
    """
    targets = np.zeros((len(batch), 2))
    next_states = [tr.next_state for tr in batch]
    q_local = qfn.q_values_batch(next_states)
    q_target = qfn.q_values_batch(next_states, target=True)
    for i, tr in enumerate(batch):
        if tr.reward is None:
            raise ValueError("transition reward has not been filled in")
        y = np.asarray(tr.reward, dtype=float).copy()
        try:
            idx = greedy_index(q_local[i], w)
        except ValueError:
            idx = None  # no legal action (only possible at n = 2)
        if idx is not None:
            a = _index_to_action(idx, tr.next_state.n)
            ch = 0 if a.kind == env.ADD else 2
            y += gamma * q_target[i, a.msb, a.lsb, ch : ch + 2]
        targets[i] = y
    return targets


@dataclass
class TrainConfig:
    """Scalarized double-DQN settings; defaults mirror the reference setup."""

    n: int
    total_steps: int
    w: tuple[float, float] = (0.5, 0.5)
    gamma: float = 0.75
    learning_rate: float = 4e-5
    replay_capacity: int = 400_000
    batch_size: int = 32
    target_sync: int = 60
    epsilon_start: float = 1.0
    epsilon_end: float = 0.0
    anneal_steps: int | None = None  # default: first half of total_steps
    warmup: int = 1_000
    actors: int = 4
    episode_horizon: int | None = None  # default: (n-1)(n-2) steps
    value_kind: str = "tabular"
    blocks: int = 4
    channels: int = 32
    dtype: str = "float32"
    tabular_lr: float = 0.5
    eval_every: int = 1_000
    seed: int = 0

    def __post_init__(self):
        check_width(self.n)
        if self.value_kind not in ("tabular", "neural"):
            raise ValueError("value_kind must be 'tabular' or 'neural'")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.anneal_steps is None:
            self.anneal_steps = max(1, self.total_steps // 2)
        if self.episode_horizon is None:
            self.episode_horizon = max(1, (self.n - 1) * (self.n - 2))

    def epsilon(self, step: int) -> float:
        """Linear anneal from epsilon_start to epsilon_end over anneal_steps."""
        if step >= self.anneal_steps:
            return self.epsilon_end
        frac = step / self.anneal_steps
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if doc.get("w") is not None:
            doc["w"] = tuple(doc["w"])
        return cls(**doc)


@dataclass
class TrainResult:
    config: TrainConfig
    qfn: object
    metrics: list[dict]
    best_graph: PrefixGraph
    best_cost: CostPoint
    best_scalar: float
    memo: CostMemo


def make_value_function(cfg: TrainConfig):
    if cfg.value_kind == "tabular":
        return TabularQ(cfg.n, learning_rate=cfg.tabular_lr)
    spec = NetworkSpec(cfg.n, cfg.blocks, cfg.channels, cfg.dtype)
    return NeuralQ(spec, seed=cfg.seed, learning_rate=cfg.learning_rate)


def greedy_rollout(qfn, n: int, horizon: int, memo: CostMemo):
    """Deterministic epsilon=0 rollout from each start structure.

    Returns the lowest-scalarized-cost design seen, including the starts:
    the horizon is fixed and there is no stay action, so the policy keeps
    moving even once it reaches an optimum.
    """
    best_g, best_s = None, np.inf
    for start in (ripple_carry(n), sklansky(n)):
        g = start
        s = memo.scalar(g)
        if s < best_s:
            best_g, best_s = g, s
        for _ in range(horizon):
            actions = env.legal_actions(g)
            if not actions:
                break
            a = select_action(qfn.q_values(g), env.mask(g), memo.w, 0.0, _NULL_RNG)
            g = env.step(g, a)
            s = memo.scalar(g)
            if s < best_s:
                best_g, best_s = g, s
    return best_g, best_s


_NULL_RNG = np.random.default_rng(0)  # epsilon=0 selection never draws from it


def dqn_train(
    cfg: TrainConfig,
    eval_cfg: EvalConfig | None = None,
    cache: CurveCache | None = None,
    metrics_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> TrainResult:
    """Act / store / sample / update loop of the scalarized double-DQN."""
    eval_cfg = eval_cfg or EvalConfig(mode=ANALYTICAL)
    rng = np.random.default_rng(cfg.seed)
    memo = CostMemo(cfg.w, eval_cfg, cache)
    buffer = ReplayBuffer(cfg.replay_capacity)
    qfn = make_value_function(cfg)

    states = [env.reset(cfg.n, rng) for _ in range(cfg.actors)]
    ages = [0] * cfg.actors
    grad_steps = 0
    loss_accum = np.zeros(2)
    loss_count = 0
    metrics: list[dict] = []
    sink = open(metrics_path, "w") if metrics_path is not None else None

    try:
        for step_i in range(cfg.total_steps):
            slot = step_i % cfg.actors
            if ages[slot] >= cfg.episode_horizon:
                states[slot] = env.reset(cfg.n, rng)
                ages[slot] = 0
            g = states[slot]
            eps = cfg.epsilon(step_i)
            action = select_action(qfn.q_values(g), env.mask(g), cfg.w, eps, rng)
            nxt = env.step(g, action)
            r = memo.cost(g).as_array() - memo.cost(nxt).as_array()
            buffer.add(Transition(g, action, r, nxt))
            states[slot] = nxt
            ages[slot] += 1

            if len(buffer) >= cfg.warmup:
                batch = buffer.sample(cfg.batch_size, rng)
                targets = dqn_target(batch, qfn, cfg.gamma, cfg.w)
                la, ld = qfn.update([(tr.state, tr.action) for tr in batch], targets)
                loss_accum += (la, ld)
                loss_count += 1
                grad_steps += 1
                if grad_steps % cfg.target_sync == 0:
                    qfn.sync_target()

            if (step_i + 1) % cfg.eval_every == 0 or step_i + 1 == cfg.total_steps:
                _, greedy_cost = greedy_rollout(qfn, cfg.n, cfg.episode_horizon, memo)
                mean_loss = loss_accum / max(loss_count, 1)
                record = {
                    "step": step_i + 1,
                    "loss_area": float(mean_loss[0]),
                    "loss_delay": float(mean_loss[1]),
                    "epsilon": float(eps),
                    "greedy_cost": float(greedy_cost),
                    "cache_hit_ratio": round(memo.hit_ratio, 6),
                }
                metrics.append(record)
                if sink is not None:
                    sink.write(json.dumps(record) + "\n")
                    sink.flush()
                loss_accum[:] = 0
                loss_count = 0
                if checkpoint_dir is not None and hasattr(qfn, "save"):
                    Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                    qfn.save(Path(checkpoint_dir) / f"params_{step_i + 1}.npz", step=step_i + 1)
    finally:
        if sink is not None:
            sink.close()

    best_g, best_s = greedy_rollout(qfn, cfg.n, cfg.episode_horizon, memo)
    return TrainResult(cfg, qfn, metrics, best_g, memo.cost(best_g), best_s, memo)


# -- simulated annealing ---------------------------------------------------------


@dataclass
class SAConfig:
    n: int
    total_steps: int
    w: tuple[float, float] = (0.5, 0.5)
    initial_temperature: float = 2.0
    cooling: float = 0.95
    steps_per_temperature: int = 50
    seed: int = 0

    def __post_init__(self):
        check_width(self.n)
        if not 0.0 < self.cooling < 1.0:
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.initial_temperature <= 0:
            raise ValueError("initial temperature must be positive")
        if self.steps_per_temperature < 1 or self.total_steps < 1:
            raise ValueError("step counts must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "SAConfig":
        doc = dict(doc)
        if doc.get("w") is not None:
            doc["w"] = tuple(doc["w"])
        return cls(**doc)


@dataclass
class SAResult:
    config: SAConfig
    best_graph: PrefixGraph
    best_cost: CostPoint
    best_scalar: float
    accepted: int
    trajectory: list[dict]
    memo: CostMemo


def anneal(
    cfg: SAConfig,
    eval_cfg: EvalConfig | None = None,
    cache: CurveCache | None = None,
    log_every: int = 0,
) -> SAResult:
    """Metropolis search over the environment's own action neighborhood.

    Worsening moves are accepted with probability exp(-delta / T); the
    temperature cools geometrically every `steps_per_temperature` steps.
    The best design ever visited is tracked independently of acceptance.
    """
    eval_cfg = eval_cfg or EvalConfig(mode=ANALYTICAL)
    rng = np.random.default_rng(cfg.seed)
    memo = CostMemo(cfg.w, eval_cfg, cache)
    current = env.reset(cfg.n, rng)
    cur_s = memo.scalar(current)
    best_g, best_s = current, cur_s
    temperature = cfg.initial_temperature
    accepted = 0
    trajectory: list[dict] = []

    for step_i in range(cfg.total_steps):
        actions = env.legal_actions(current)
        if not actions:
            break
        action = actions[rng.integers(len(actions))]
        candidate = env.step(current, action)
        cand_s = memo.scalar(candidate)
        delta = cand_s - cur_s
        if delta <= 0 or rng.random() < np.exp(-delta / temperature):
            current, cur_s = candidate, cand_s
            accepted += 1
            if cur_s < best_s:
                best_g, best_s = current, cur_s
        if (step_i + 1) % cfg.steps_per_temperature == 0:
            temperature *= cfg.cooling
        if log_every and (step_i + 1) % log_every == 0:
            trajectory.append(
                {
                    "step": step_i + 1,
                    "temperature": temperature,
                    "current": cur_s,
                    "best": best_s,
                    "accepted": accepted,
                }
            )
    return SAResult(cfg, best_g, memo.cost(best_g), best_s, accepted, trajectory, memo)


# -- exhaustive enumeration --------------------------------------------------------


ENUMERATION_WIDTH_LIMIT = 8


@dataclass
class Enumeration:
    """All legal graphs of one width with analytical costs and the exact front.

    Graphs are stored as bitmasks over `positions` (the interior grid
    positions in (msb, lsb) order) to keep large widths in memory; `front`
    holds (area, delay, representative bitmask, multiplicity) sorted by
    delay.
    """

    n: int
    positions: list
    legal: list  # (bitmask, area, delay)
    front: list  # (area, delay, bitmask, multiplicity)

    @property
    def legal_count(self) -> int:
        return len(self.legal)

    @property
    def legal_masks(self) -> set[int]:
        return {m for m, _, _ in self.legal}

    def bitmask_of(self, g: PrefixGraph) -> int:
        idx = {pos: i for i, pos in enumerate(self.positions)}
        m = 0
        for node in g.interior():
            m |= 1 << idx[node]
        return m

    def graph_for(self, bitmask: int) -> PrefixGraph:
        interior = [pos for i, pos in enumerate(self.positions) if bitmask >> i & 1]
        return PrefixGraph.from_interior(self.n, interior).require_legal()

    def __contains__(self, g: PrefixGraph) -> bool:
        return g.n == self.n and self.bitmask_of(g) in self.legal_masks

    def min_area_point(self):
        return min(self.front, key=lambda p: (p[0], p[1]))

    def min_delay_point(self):
        return min(self.front, key=lambda p: (p[1], p[0]))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "legal_count": self.legal_count,
            "front": [[a, d, m, c] for a, d, m, c in self.front],
        }


def _rows_cost(n: int, rows: list[int]) -> tuple[int, float]:
    """Area and fanout-loaded delay straight from per-row bitmasks."""
    ups = [[0] * n for _ in range(n)]
    fan = [[0] * (n + 1) for _ in range(n)]
    area = 0
    for m in range(n):
        row = rows[m]
        above = m
        for l in range(m - 1, -1, -1):
            if row >> l & 1:
                area += 1
                ups[m][l] = above
                fan[m][above] += 1
                fan[above - 1][l] += 1
                above = l
    arr = [[0.0] * (n + 1) for _ in range(n)]
    delay = 0.0
    for m in range(n):
        row = rows[m]
        above = m
        for l in range(m - 1, -1, -1):
            if row >> l & 1:
                t = max(arr[m][above], arr[above - 1][l]) + 1.0 + 0.5 * fan[m][l]
                arr[m][l] = t
                above = l
                if l == 0 and t > delay:
                    delay = t
    return area, delay


def enumerate_designs(n: int, force: bool = False) -> Enumeration:
    """Iterate all interior node subsets, keep the legal ones, cost them.

    Guarded at n <= 8 (2^21 candidate subsets); pass force=True to
    override the guard at your own peril.
    """
    check_width(n)
    if n > ENUMERATION_WIDTH_LIMIT and not force:
        raise ValueError(
            f"enumeration above n={ENUMERATION_WIDTH_LIMIT} is guarded; pass force=True"
        )
    positions = interior_positions(n)
    base = [0] * n
    for m, l in mandatory_nodes(n):
        base[m] |= 1 << l
    pos_by_row: list[tuple[int, int, int]] = [
        (i, m, l) for i, (m, l) in enumerate(positions)
    ]

    legal: list[tuple[int, float, float]] = []
    for subset in range(1 << len(positions)):
        rows = base.copy()
        for i, m, l in pos_by_row:
            if subset >> i & 1:
                rows[m] |= 1 << l
        # legality: every present (m, l) needs its lower parent present
        ok = True
        for m in range(n - 1, 1, -1):
            row = rows[m]
            above = m
            for l in range(m - 1, 0, -1):
                if row >> l & 1:
                    if not rows[above - 1] >> l & 1:
                        ok = False
                        break
                    above = l
            if not ok:
                break
            # output (m, 0): lower parent is (above-1, 0), always present
        if not ok:
            continue
        area, delay = _rows_cost(n, rows)
        legal.append((subset, float(area), delay))

    by_cost: dict[tuple[float, float], tuple[int, int]] = {}
    for bm, area, delay in legal:
        prev = by_cost.get((area, delay))
        by_cost[(area, delay)] = (prev[0], prev[1] + 1) if prev else (bm, 1)
    front = []
    best_delay = np.inf
    for (area, delay), (bm, count) in sorted(by_cost.items()):
        if delay < best_delay:
            front.append((area, delay, bm, count))
            best_delay = delay
    front.sort(key=lambda p: p[1])
    return Enumeration(n, positions, legal, front)
