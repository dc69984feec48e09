"""Two-objective Q-value approximators over the (n, n) action grid.

Every approximator maps a graph to an (n, n, 4) grid holding
(Q_area, Q_delay) for the add action and for the delete action at each
position, with mask-illegal entries forced to -inf so they are never
selected.  Two implementations share this interface: a convolutional
residual network written directly in numpy with hand-derived reverse-mode
gradients, and a table over visited (state, action) pairs for small
widths.  The training loop runs unmodified against either one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .environment import ADD, Action, DELETE, encode, mask
from .graphs import PrefixGraph

CHECKPOINT_MAGIC = "prefixopt-qnet-v1"


@dataclass(frozen=True)
class NetworkSpec:
    """Residual body of `blocks` blocks at `channels` width over an n-grid."""

    n: int
    blocks: int = 4
    channels: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        if self.blocks < 1 or self.channels < 1:
            raise ValueError("blocks and channels must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def _layer_shapes(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("stem.W", (spec.channels, 4, 3, 3)),
        ("stem.b", (spec.channels,)),
    ]
    for i in range(spec.blocks):
        for j in (1, 2):
            shapes.append((f"block{i}.W{j}", (spec.channels, spec.channels, 3, 3)))
            shapes.append((f"block{i}.b{j}", (spec.channels,)))
    shapes.append(("head.W", (4, spec.channels)))
    shapes.append(("head.b", (4,)))
    return shapes


def parameter_count(spec: NetworkSpec) -> int:
    return sum(int(np.prod(s)) for _, s in _layer_shapes(spec))


class Parameters:
    """All trainable weights as one flat vector plus a name -> slice map."""

    def __init__(self, spec: NetworkSpec, flat: np.ndarray | None = None):
        self.spec = spec
        self.slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in _layer_shapes(spec):
            size = int(np.prod(shape))
            self.slices[name] = (slice(offset, offset + size), shape)
            offset += size
        if flat is None:
            flat = np.zeros(offset, dtype=spec.np_dtype)
        flat = np.asarray(flat, dtype=spec.np_dtype)
        if flat.shape != (offset,):
            raise ValueError(f"expected {offset} parameters, got {flat.shape}")
        self.flat = flat

    def __len__(self):
        return self.flat.size

    def view(self, name: str) -> np.ndarray:
        sl, shape = self.slices[name]
        return self.flat[sl].reshape(shape)

    def copy(self) -> "Parameters":
        return Parameters(self.spec, self.flat.copy())

    @classmethod
    def initialized(cls, spec: NetworkSpec, seed: int) -> "Parameters":
        """He fan-in scaled normal weights, zero biases, deterministic in seed."""
        rng = np.random.default_rng(seed)
        params = cls(spec)
        for name, (sl, shape) in params.slices.items():
            if name.endswith(".b"):
                continue
            fan_in = int(np.prod(shape[1:]))
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            params.flat[sl] = w.astype(spec.np_dtype).ravel()
        return params

    def save(self, path: str | Path, seed: int = 0, step: int = 0) -> None:
        header = {
            "magic": CHECKPOINT_MAGIC,
            "spec": {
                "n": self.spec.n,
                "blocks": self.spec.blocks,
                "channels": self.spec.channels,
                "dtype": self.spec.dtype,
            },
            "seed": seed,
            "step": step,
        }
        np.savez(path, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
                 flat=self.flat)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Parameters", dict]:
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("magic") != CHECKPOINT_MAGIC:
                raise ValueError(f"not a parameter checkpoint: {path}")
            spec = NetworkSpec(**header["spec"])
            params = cls(spec, data["flat"])
        return params, header


# -- convolution kernels -------------------------------------------------------


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C*9, H*W) patches of the zero-padded 3x3 windows."""
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((B, C, 9, H, W), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, k] = xp[:, :, di : di + H, dj : dj + W]
            k += 1
    return cols.reshape(B, C * 9, H * W)


def _col2im3(dcols: np.ndarray, B: int, C: int, H: int, W: int) -> np.ndarray:
    """Adjoint of _im2col3: scatter (B, C*9, H*W) patch grads back to (B, C, H, W)."""
    dc = dcols.reshape(B, C, 9, H, W)
    dxp = np.zeros((B, C, H + 2, W + 2), dtype=dcols.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di : di + H, dj : dj + W] += dc[:, :, k]
            k += 1
    return dxp[:, :, 1:-1, 1:-1]


def _conv3_forward(x, W, b):
    B, C, H, Wd = x.shape
    cols = _im2col3(x)
    Wf = W.reshape(W.shape[0], -1)
    y = np.matmul(Wf, cols).reshape(B, W.shape[0], H, Wd) + b[None, :, None, None]
    return y, cols


def _conv3_backward(dy, cols, W, x_shape):
    B, C, H, Wd = x_shape
    Cout = W.shape[0]
    dyf = dy.reshape(B, Cout, H * Wd)
    dW = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(W.shape)
    db = dyf.sum(axis=(0, 2))
    dcols = np.matmul(W.reshape(Cout, -1).T, dyf)
    dx = _col2im3(dcols, B, C, H, Wd)
    return dx, dW, db


# -- forward / backward ---------------------------------------------------------


def _body_forward(params: Parameters, x: np.ndarray):
    """x is (B, 4, n, n); returns head output (B, 4, n, n) and the tape."""
    tape = {"x": x}
    y, cols = _conv3_forward(x, params.view("stem.W"), params.view("stem.b"))
    tape["stem.cols"] = cols
    tape["stem.pre"] = y
    h = np.maximum(y, 0)
    for i in range(params.spec.blocks):
        skip = h
        y1, cols1 = _conv3_forward(h, params.view(f"block{i}.W1"), params.view(f"block{i}.b1"))
        h1 = np.maximum(y1, 0)
        y2, cols2 = _conv3_forward(h1, params.view(f"block{i}.W2"), params.view(f"block{i}.b2"))
        out = np.maximum(skip + y2, 0)
        tape[f"block{i}"] = (skip, cols1, y1, h1, cols2, out)
        h = out
    tape["body"] = h
    B, C, H, W = h.shape
    q = np.matmul(params.view("head.W"), h.reshape(B, C, H * W)).reshape(B, 4, H, W)
    q = q + params.view("head.b")[None, :, None, None]
    return q, tape


def _body_backward(params: Parameters, tape: dict, dq: np.ndarray) -> np.ndarray:
    grads = Parameters(params.spec)
    h = tape["body"]
    B, C, H, W = h.shape
    dqf = dq.reshape(B, 4, H * W)
    grads.view("head.W")[:] = np.tensordot(dqf, h.reshape(B, C, H * W), axes=([0, 2], [0, 2]))
    grads.view("head.b")[:] = dq.sum(axis=(0, 2, 3))
    dh = np.tensordot(params.view("head.W"), dqf, axes=([0], [1])).transpose(1, 0, 2)
    dh = np.ascontiguousarray(dh).reshape(B, C, H, W)
    for i in reversed(range(params.spec.blocks)):
        skip, cols1, y1, h1, cols2, out = tape[f"block{i}"]
        dsum = dh * (out > 0)
        dx2, dW2, db2 = _conv3_backward(dsum, cols2, params.view(f"block{i}.W2"), h1.shape)
        grads.view(f"block{i}.W2")[:] = dW2
        grads.view(f"block{i}.b2")[:] = db2
        dh1 = dx2 * (y1 > 0)
        dx1, dW1, db1 = _conv3_backward(dh1, cols1, params.view(f"block{i}.W1"), skip.shape)
        grads.view(f"block{i}.W1")[:] = dW1
        grads.view(f"block{i}.b1")[:] = db1
        dh = dsum + dx1
    dstem = dh * (tape["stem.pre"] > 0)
    _, dWs, dbs = _conv3_backward(dstem, tape["stem.cols"], params.view("stem.W"), tape["x"].shape)
    grads.view("stem.W")[:] = dWs
    grads.view("stem.b")[:] = dbs
    return grads.flat


def _to_batch(tensor: np.ndarray, dtype) -> np.ndarray:
    t = np.asarray(tensor, dtype=dtype)
    if t.ndim == 3:
        t = t[None]
    return np.ascontiguousarray(t.transpose(0, 3, 1, 2))


def apply_mask(q: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Set Q entries of masked actions to -inf; channels 0-1 add, 2-3 delete."""
    out = q.copy()
    single = out.ndim == 3
    if single:
        out = out[None]
    g = grid[None] if grid.ndim == 3 else grid
    add_ok = g[..., 0]
    del_ok = g[..., 1]
    out[..., 0] = np.where(add_ok, out[..., 0], -np.inf)
    out[..., 1] = np.where(add_ok, out[..., 1], -np.inf)
    out[..., 2] = np.where(del_ok, out[..., 2], -np.inf)
    out[..., 3] = np.where(del_ok, out[..., 3], -np.inf)
    return out[0] if single else out


def forward(params: Parameters, tensor: np.ndarray, grid: np.ndarray | None = None) -> np.ndarray:
    """Masked Q grid for one (n, n, 4) state tensor or a batch of them.

    Output channels: (Q_area add, Q_delay add, Q_area delete, Q_delay delete).
    """
    single = np.asarray(tensor).ndim == 3
    x = _to_batch(tensor, params.spec.np_dtype)
    if x.shape[2] != params.spec.n or x.shape[1] != 4:
        raise ValueError(f"expected (*, {params.spec.n}, {params.spec.n}, 4) input")
    q, _ = _body_forward(params, x)
    q = np.ascontiguousarray(q.transpose(0, 2, 3, 1)).astype(np.float64)
    if grid is not None:
        q = apply_mask(q, grid if not single else grid[None])
    return q[0] if single else q


def backward(
    params: Parameters, tensor: np.ndarray, out_grad: np.ndarray
) -> np.ndarray:
    """Exact parameter gradient of forward for a given output gradient.

    `out_grad` must be zero at masked entries (masking passes no gradient).
    """
    x = _to_batch(tensor, params.spec.np_dtype)
    dq = np.asarray(out_grad, dtype=params.spec.np_dtype)
    if dq.ndim == 3:
        dq = dq[None]
    if dq.shape != (x.shape[0], params.spec.n, params.spec.n, 4):
        raise ValueError("output gradient shape does not match the input batch")
    _, tape = _body_forward(params, x)
    return _body_backward(params, tape, np.ascontiguousarray(dq.transpose(0, 3, 1, 2)))


class Adam:
    """Adam with the usual bias correction; state is part of the value function."""

    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, flat: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        g = grad.astype(np.float64)
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mh = self.m / (1 - self.beta1**self.t)
        vh = self.v / (1 - self.beta2**self.t)
        flat -= (self.lr * mh / (np.sqrt(vh) + self.eps)).astype(flat.dtype)


# -- action selection -----------------------------------------------------------


def scalarize(q: np.ndarray, w) -> np.ndarray:
    """(n, n, 4) masked Q grid -> (2, n, n) scalarized values, kind-major."""
    from .evaluation import _weight_pair

    wa, wd = _weight_pair(w)
    add = wa * q[..., 0] + wd * q[..., 1]
    delete = wa * q[..., 2] + wd * q[..., 3]
    return np.stack([add, delete])


def greedy_index(q: np.ndarray, w) -> int:
    """Flat argmax over (kind, msb, lsb) of the scalarized grid; first max wins.

    Flattening kind-major makes first-occurrence ties resolve in
    (kind, msb, lsb) lexicographic order with add before delete.
    """
    flat = scalarize(q, w).ravel()
    idx = int(np.argmax(flat))
    if flat[idx] == -np.inf:
        raise ValueError("no legal action available")
    return idx


def _index_to_action(idx: int, n: int) -> Action:
    kind, rem = divmod(idx, n * n)
    msb, lsb = divmod(rem, n)
    return Action(ADD if kind == 0 else DELETE, msb, lsb)


def select_action(
    q: np.ndarray, grid: np.ndarray, w, epsilon: float, rng: np.random.Generator
) -> Action:
    """Epsilon-greedy over mask-legal actions.

    With probability epsilon a uniformly random legal action; otherwise the
    scalarized argmax with (kind, msb, lsb) tie-breaking.  Never returns a
    masked action.
    """
    n = grid.shape[0]
    if epsilon > 0 and rng.random() < epsilon:
        legal = np.flatnonzero(
            np.stack([grid[..., 0], grid[..., 1]]).ravel()
        )
        if legal.size == 0:
            raise ValueError("no legal action available")
        return _index_to_action(int(legal[rng.integers(legal.size)]), n)
    return _index_to_action(greedy_index(apply_mask(q, grid), w), n)


# -- value function implementations ---------------------------------------------


class NeuralQ:
    """Residual network Q function with a lagging target copy."""

    kind = "neural"

    def __init__(self, spec: NetworkSpec, seed: int = 0, learning_rate: float = 4e-5):
        self.spec = spec
        self.seed = seed
        self.params = Parameters.initialized(spec, seed)
        self.target_params = self.params.copy()
        self.adam = Adam(len(self.params), learning_rate)

    def q_values(self, g: PrefixGraph, target: bool = False) -> np.ndarray:
        p = self.target_params if target else self.params
        return forward(p, encode(g), mask(g))

    def q_values_batch(self, graphs, target: bool = False) -> np.ndarray:
        p = self.target_params if target else self.params
        tensors = np.stack([encode(g) for g in graphs])
        grids = np.stack([mask(g) for g in graphs])
        return forward(p, tensors, grids)

    def update(self, batch, targets: np.ndarray) -> tuple[float, float]:
        """One gradient step on the summed per-objective squared error.

        `batch` is a sequence of (graph, action) pairs; `targets` is
        (B, 2).  Returns the pre-update mean squared error per objective.
        """
        graphs = [g for g, _ in batch]
        x = np.stack([encode(g) for g in graphs])
        q, tape = _body_forward(self.params, _to_batch(x, self.spec.np_dtype))
        q = q.transpose(0, 2, 3, 1)
        B = len(batch)
        targets = np.asarray(targets, dtype=np.float64)
        dq = np.zeros_like(q)
        err = np.zeros((B, 2))
        for i, (g, action) in enumerate(batch):
            ch = 0 if action.kind == ADD else 2
            pred = q[i, action.msb, action.lsb, ch : ch + 2].astype(np.float64)
            e = pred - targets[i]
            err[i] = e
            dq[i, action.msb, action.lsb, ch : ch + 2] = (2.0 * e / B).astype(dq.dtype)
        grad = _body_backward(self.params, tape, np.ascontiguousarray(dq.transpose(0, 3, 1, 2)))
        self.adam.update(self.params.flat, grad)
        sq = err**2
        return float(sq[:, 0].mean()), float(sq[:, 1].mean())

    def sync_target(self) -> None:
        self.target_params = self.params.copy()

    def save(self, path, step: int = 0) -> None:
        self.params.save(path, seed=self.seed, step=step)


class TabularQ:
    """Exact per-(state, action) value table; zero for unvisited pairs."""

    kind = "tabular"

    def __init__(self, n: int, learning_rate: float = 0.5):
        self.n = n
        self.learning_rate = learning_rate
        self.table: dict[tuple[PrefixGraph, Action], np.ndarray] = {}
        self.target_table: dict[tuple[PrefixGraph, Action], np.ndarray] = {}

    def value(self, g: PrefixGraph, action: Action, target: bool = False) -> np.ndarray:
        table = self.target_table if target else self.table
        v = table.get((g, action))
        return np.zeros(2) if v is None else v.copy()

    def q_values(self, g: PrefixGraph, target: bool = False) -> np.ndarray:
        table = self.target_table if target else self.table
        q = np.zeros((self.n, self.n, 4))
        for a in _legal_from_grid(mask(g)):
            v = table.get((g, a))
            if v is not None:
                ch = 0 if a.kind == ADD else 2
                q[a.msb, a.lsb, ch : ch + 2] = v
        return apply_mask(q, mask(g))

    def q_values_batch(self, graphs, target: bool = False) -> np.ndarray:
        return np.stack([self.q_values(g, target) for g in graphs])

    def update(self, batch, targets: np.ndarray) -> tuple[float, float]:
        targets = np.asarray(targets, dtype=float)
        err = np.zeros((len(batch), 2))
        for i, (g, action) in enumerate(batch):
            old = self.table.get((g, action))
            old = np.zeros(2) if old is None else old
            err[i] = old - targets[i]
            self.table[(g, action)] = old + self.learning_rate * (targets[i] - old)
        sq = err**2
        return float(sq[:, 0].mean()), float(sq[:, 1].mean())

    def sync_target(self) -> None:
        self.target_table = {k: v.copy() for k, v in self.table.items()}


def _legal_from_grid(grid: np.ndarray):
    adds = zip(*np.nonzero(grid[..., 0]))
    dels = zip(*np.nonzero(grid[..., 1]))
    return [Action(ADD, int(m), int(l)) for m, l in adds] + [
        Action(DELETE, int(m), int(l)) for m, l in dels
    ]
