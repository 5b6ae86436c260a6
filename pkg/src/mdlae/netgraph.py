"""Feedforward networks over an explicit directed acyclic unit graph.

Unit 0 is the bias unit (activity identically 1). Every other unit is either an
input unit, whose activity is supplied, or computes ``a_i = s(V_i)`` with
``V_i = sum_j a_j w_ji`` over its incoming edges.

Evaluation is level-synchronous: a unit's level is one more than the deepest of
its sources, so all units of a level can be computed with one matrix product.
All arrays carry a leading batch axis internally; 1-D inputs give 1-D records.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("identity", "sigmoid", "tanh")
_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}


class NetworkError(ValueError):
    """Raised for malformed graphs and rejected inputs."""


def activate(v: np.ndarray, codes: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float, copy=True)
    sig = codes == 1
    if sig.any():
        out[..., sig] = expit(v[..., sig])
    th = codes == 2
    if th.any():
        out[..., th] = np.tanh(v[..., th])
    return out


def slope(v: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """First derivative s'(V) per unit."""
    out = np.ones_like(v, dtype=float)
    sig = codes == 1
    if sig.any():
        s = expit(v[..., sig])
        out[..., sig] = s * (1.0 - s)
    th = codes == 2
    if th.any():
        t = np.tanh(v[..., th])
        out[..., th] = 1.0 - t * t
    return out


def curvature(v: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Second derivative s''(V) per unit."""
    out = np.zeros_like(v, dtype=float)
    sig = codes == 1
    if sig.any():
        s = expit(v[..., sig])
        out[..., sig] = s * (1.0 - s) * (1.0 - 2.0 * s)
    th = codes == 2
    if th.any():
        t = np.tanh(v[..., th])
        out[..., th] = -2.0 * t * (1.0 - t * t)
    return out


@dataclass(frozen=True)
class Level:
    units: np.ndarray  # target units of this level
    start: int  # edge slice into the canonical edge order
    stop: int
    src: np.ndarray  # per-edge source unit
    dst: np.ndarray  # per-edge target unit
    dst_pos: np.ndarray  # per-edge index into ``units``
    srcs: np.ndarray  # distinct sources feeding this level
    src_pos: np.ndarray  # per-edge index into ``srcs``


class Graph:
    """Immutable structure of a network: units, edges, levels.

    Edges are kept in canonical order (topological position of the target,
    then source index); weight vectors and gradient maps use that order.
    """

    def __init__(
        self,
        activations: Sequence[str],
        edges: Sequence[tuple[int, int]],
        inputs: Sequence[int],
        outputs: Sequence[int],
    ):
        n = len(activations)
        if n < 1:
            raise NetworkError("a network needs at least the bias unit")
        for a in activations:
            if a not in _CODE:
                raise NetworkError(f"unknown activation {a!r}")
        self.activations = tuple(activations)
        self.codes = np.array([_CODE[a] for a in activations], dtype=np.int8)
        self.inputs = np.array(inputs, dtype=np.intp)
        self.outputs = np.array(outputs, dtype=np.intp)
        self.n_units = n

        ins, outs = set(self.inputs.tolist()), set(self.outputs.tolist())
        if len(ins) != len(self.inputs) or len(outs) != len(self.outputs):
            raise NetworkError("duplicate input or output unit")
        if 0 in ins or 0 in outs:
            raise NetworkError("unit 0 is the bias unit")
        if ins & outs:
            raise NetworkError("input and output units must be disjoint")
        if any(not 0 < u < n for u in ins | outs):
            raise NetworkError("unit index out of range")

        pairs = [(int(s), int(d)) for s, d in edges]
        if len(set(pairs)) != len(pairs):
            raise NetworkError("duplicate edge")
        incoming: list[list[int]] = [[] for _ in range(n)]
        for s, d in pairs:
            if not (0 <= s < n and 0 <= d < n) or s == d:
                raise NetworkError(f"bad edge {s} -> {d}")
            if d == 0:
                raise NetworkError("the bias unit has no incoming edges")
            if d in ins:
                raise NetworkError(f"input unit {d} has an incoming edge")
            if s in outs:
                raise NetworkError(f"output unit {s} feeds other units")
            incoming[d].append(s)

        depth = self._depths(incoming, ins)
        for u in range(1, n):
            if u not in ins and not incoming[u]:
                raise NetworkError(f"unit {u} is unreachable from the inputs")
        self.depth = depth
        self.topo = np.array(sorted(range(n), key=lambda u: (depth[u], u)), dtype=np.intp)
        pos = np.empty(n, dtype=np.intp)
        pos[self.topo] = np.arange(n)
        self.topo_pos = pos

        order = sorted(pairs, key=lambda e: (pos[e[1]], e[0]))
        self.edges = np.array(order, dtype=np.intp).reshape(-1, 2)
        self.n_edges = len(order)
        self.levels = self._levels()

    @staticmethod
    def _depths(incoming, ins):
        n = len(incoming)
        depth = [-1] * n
        state = [0] * n  # 0 new, 1 on stack, 2 done
        for root in range(n):
            if state[root]:
                continue
            stack = [(root, iter(incoming[root]))]
            state[root] = 1
            while stack:
                u, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    stack.pop()
                    srcs = incoming[u]
                    depth[u] = 0 if (u == 0 or u in ins or not srcs) else 1 + max(depth[s] for s in srcs)
                    state[u] = 2
                elif state[nxt] == 1:
                    raise NetworkError("the edge relation contains a cycle")
                elif state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, iter(incoming[nxt])))
        return depth

    def _levels(self) -> list[Level]:
        levels = []
        dst_depth = np.array([self.depth[d] for d in self.edges[:, 1]], dtype=np.intp)
        for lv in range(1, max(self.depth) + 1):
            idx = np.flatnonzero(dst_depth == lv)
            if not len(idx):
                continue
            start, stop = int(idx[0]), int(idx[-1]) + 1
            src = self.edges[start:stop, 0]
            dst = self.edges[start:stop, 1]
            units, dst_pos = np.unique(dst, return_inverse=True)
            srcs, src_pos = np.unique(src, return_inverse=True)
            levels.append(Level(units, start, stop, src, dst, dst_pos, srcs, src_pos))
        return levels

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(s), int(d)): k for k, (s, d) in enumerate(self.edges)}


@dataclass(frozen=True, eq=False)
class Network:
    """A graph plus one weight per edge, in the graph's canonical edge order."""

    graph: Graph
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.graph.n_edges,):
            raise NetworkError(f"expected {self.graph.n_edges} weights, got shape {w.shape}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def build(cls, activations, edges, inputs, outputs) -> "Network":
        """Build from ``edges`` given as ``(src, dst, weight)`` triples in any order."""
        graph = Graph(activations, [(s, d) for s, d, _ in edges], inputs, outputs)
        lookup = {(int(s), int(d)): float(w) for s, d, w in edges}
        w = np.array([lookup[(int(s), int(d))] for s, d in graph.edges], dtype=np.float64)
        return cls(graph, w)

    def with_weights(self, weights) -> "Network":
        return Network(self.graph, np.array(weights, dtype=np.float64))

    @property
    def n_in(self) -> int:
        return len(self.graph.inputs)

    @property
    def n_out(self) -> int:
        return len(self.graph.outputs)

    @cached_property
    def is_affine(self) -> bool:
        """True when every computing unit is an identity unit."""
        g = self.graph
        computing = np.setdiff1d(np.arange(1, g.n_units), g.inputs)
        return bool(np.all(g.codes[computing] == 0))

    def weight(self, src: int, dst: int) -> float:
        return float(self.weights[self.graph.edge_index()[(src, dst)]])


@dataclass(frozen=True)
class ActivationRecord:
    """Pre-activations ``V`` and activities ``a`` for every unit."""

    V: np.ndarray
    a: np.ndarray

    @property
    def batched(self) -> bool:
        return self.a.ndim == 2

    def outputs(self, net: Network) -> np.ndarray:
        return self.a[..., net.graph.outputs]


def _as_batch(x, width: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise NetworkError(f"{what} has shape {np.shape(x)}, expected trailing dimension {width}")
    return arr, single


def _level_matrix(level: Level, weights: np.ndarray) -> np.ndarray:
    m = np.zeros((len(level.srcs), len(level.units)))
    m[level.src_pos, level.dst_pos] = weights[level.start:level.stop]
    return m


def forward(net: Network, x) -> ActivationRecord:
    g = net.graph
    X, single = _as_batch(x, net.n_in, "input")
    V = np.zeros((X.shape[0], g.n_units))
    A = np.zeros_like(V)
    A[:, 0] = 1.0
    A[:, g.inputs] = X
    for lv in g.levels:
        v = A[:, lv.srcs] @ _level_matrix(lv, net.weights)
        V[:, lv.units] = v
        A[:, lv.units] = activate(v, g.codes[lv.units])
    if single:
        return ActivationRecord(V[0], A[0])
    return ActivationRecord(V, A)


def outputs(net: Network, x) -> np.ndarray:
    return forward(net, x).outputs(net)


def backprop(net: Network, record: ActivationRecord, output_loss_grad, return_inputs: bool = False):
    """Reverse-mode gradient of a loss given its gradient w.r.t. output activities.

    Weight gradients are summed over the batch. With ``return_inputs`` the
    per-sample gradient w.r.t. input activities is returned as well.
    """
    g = net.graph
    G, single = _as_batch(output_loss_grad, net.n_out, "output gradient")
    V, A = np.atleast_2d(record.V), np.atleast_2d(record.a)
    if G.shape[0] != A.shape[0]:
        raise NetworkError("output gradient batch does not match the record")
    dA = np.zeros_like(A)
    dA[:, g.outputs] = G
    gw = np.zeros(g.n_edges)
    for lv in reversed(g.levels):
        dV = dA[:, lv.units] * slope(V[:, lv.units], g.codes[lv.units])
        gw[lv.start:lv.stop] = np.einsum("be,be->e", A[:, lv.src], dV[:, lv.dst_pos])
        dA[:, lv.srcs] += dV @ _level_matrix(lv, net.weights).T
    if not return_inputs:
        return gw
    gin = dA[:, g.inputs]
    return gw, (gin[0] if single else gin)


def input_jacobian(net: Network, y0) -> np.ndarray:
    """d(outputs)/d(inputs) at ``y0``, one reverse pass per output unit."""
    y0 = np.asarray(y0, dtype=np.float64)
    k = net.n_out
    rec = forward(net, np.tile(y0, (k, 1)))
    _, jac = backprop(net, rec, np.eye(k), return_inputs=True)
    return jac


def finite_diff_grad(net: Network, x, scalar_loss: Callable[[np.ndarray], float], step: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of d loss(outputs(net, x)) / d w for every edge."""
    if step <= 0:
        raise ValueError("step must be positive")
    w = net.weights
    grad = np.empty_like(w)
    for k in range(len(w)):
        wp, wm = w.copy(), w.copy()
        wp[k] += step
        wm[k] -= step
        lp = scalar_loss(outputs(net.with_weights(wp), x))
        lm = scalar_loss(outputs(net.with_weights(wm), x))
        grad[k] = (lp - lm) / (2 * step)
    return grad


def layered(
    sizes: Sequence[int],
    hidden: str = "sigmoid",
    output: str = "identity",
    rng: np.random.Generator | None = None,
    scale: float | None = None,
) -> Network:
    """Fully connected layered network with bias edges into every computing unit.

    Weights are drawn N(0, scale^2), scale defaulting to 1/sqrt(fan_in).
    Zero weights when ``rng`` is None.
    """
    if len(sizes) < 2 or min(sizes) < 1:
        raise NetworkError(f"bad layer sizes {sizes}")
    layers, nxt = [], 1
    for s in sizes:
        layers.append(list(range(nxt, nxt + s)))
        nxt += s
    acts = ["identity"] * nxt
    for layer in layers[1:-1]:
        for u in layer:
            acts[u] = hidden
    for u in layers[-1]:
        acts[u] = output
    edges = []
    for prev, cur in zip(layers[:-1], layers[1:]):
        sd = scale if scale is not None else 1.0 / np.sqrt(len(prev))
        for d in cur:
            for s in [0, *prev]:
                w = 0.0 if rng is None else float(rng.normal(0.0, sd))
                edges.append((s, d, w))
    return Network.build(acts, edges, layers[0], layers[-1])


def with_output_bias(net: Network, values) -> Network:
    """Set the bias edge weight of every output unit (in output order)."""
    values = np.broadcast_to(np.asarray(values, dtype=float), (net.n_out,))
    idx = net.graph.edge_index()
    w = net.weights.copy()
    for u, v in zip(net.graph.outputs.tolist(), values):
        if (0, u) not in idx:
            raise NetworkError(f"output unit {u} has no bias edge")
        w[idx[(0, u)]] = v
    return net.with_weights(w)


def dumps(net: Network) -> str:
    g = net.graph
    lines = [f"unit {u} {a}" for u, a in enumerate(g.activations)]
    lines.append("inputs " + " ".join(map(str, g.inputs.tolist())))
    lines.append("outputs " + " ".join(map(str, g.outputs.tolist())))
    lines += [f"edge {s} {d} {float(w)!r}" for (s, d), w in zip(g.edges.tolist(), net.weights)]
    return "\n".join(lines) + "\n"


def loads(text: str) -> Network:
    acts: dict[int, str] = {}
    edges, inputs, outs = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "unit":
                acts[int(rest[0])] = rest[1]
            elif head == "edge":
                edges.append((int(rest[0]), int(rest[1]), float(rest[2])))
            elif head == "inputs":
                inputs = [int(t) for t in rest]
            elif head == "outputs":
                outs = [int(t) for t in rest]
            else:
                raise NetworkError(f"unknown record {head!r}")
        except (IndexError, ValueError) as exc:
            raise NetworkError(f"line {lineno}: {raw!r}: {exc}") from None
    if sorted(acts) != list(range(len(acts))):
        raise NetworkError("unit ids must be 0..n-1")
    return Network.build([acts[u] for u in range(len(acts))], edges, inputs, outs)
