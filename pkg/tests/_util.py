"""Shared builders and reference implementations for the tests."""

from __future__ import annotations

import math

import numpy as np

from mdlae import netgraph as ng
from mdlae.codelength import Decoder
from mdlae.outvar import OutputModel

ACTS = ("identity", "sigmoid", "tanh")


def random_dag(rng, n_in=2, n_hidden=4, n_out=2, p_edge=0.6, acts=ACTS, scale=1.0) -> ng.Network:
    """Random DAG over bias, inputs, hidden and output units (in that id order)."""
    inputs = list(range(1, 1 + n_in))
    hidden = list(range(1 + n_in, 1 + n_in + n_hidden))
    outputs = list(range(1 + n_in + n_hidden, 1 + n_in + n_hidden + n_out))
    n = 1 + n_in + n_hidden + n_out
    activations = ["identity"] * n
    for u in hidden + outputs:
        activations[u] = acts[rng.integers(len(acts))]
    edges = []
    for d in hidden + outputs:
        cands = [0] + inputs + [h for h in hidden if h < d]
        chosen = [s for s in cands if rng.random() < p_edge]
        if not chosen:
            chosen = [cands[rng.integers(len(cands))]]
        edges += [(s, d, float(rng.normal(0, scale))) for s in chosen]
    return ng.Network.build(activations, edges, inputs, outputs)


def random_decoder(rng, sizes, hidden="sigmoid", output="identity", sigma=None) -> Decoder:
    net = ng.layered(sizes, hidden=hidden, output=output, rng=rng)
    if sigma is None:
        sigma = rng.uniform(0.5, 1.5, sizes[-1])
    return Decoder(net, OutputModel(np.broadcast_to(sigma, (sizes[-1],)).copy()))


def linear_decoder(W, b=None, sigma=1.0) -> Decoder:
    """Decoder x_hat = W y + b with identity units."""
    W = np.atleast_2d(W)
    dx, dy = W.shape
    b = np.zeros(dx) if b is None else np.asarray(b, dtype=float)
    acts = ["identity"] * (1 + dy + dx)
    edges = []
    for k in range(dx):
        out = 1 + dy + k
        edges.append((0, out, float(b[k])))
        edges += [(1 + i, out, float(W[k, i])) for i in range(dy)]
    net = ng.Network.build(acts, edges, list(range(1, 1 + dy)), list(range(1 + dy, 1 + dy + dx)))
    return Decoder(net, OutputModel(np.broadcast_to(np.asarray(sigma, dtype=float), (dx,)).copy()))


def straight_line_eval(net: ng.Network, x) -> dict[int, float]:
    """Unit-by-unit evaluation with plain floats, independent of the level machinery."""
    g = net.graph
    act = {0: 1.0}
    for u, v in zip(g.inputs.tolist(), np.asarray(x, dtype=float).tolist()):
        act[u] = v
    incoming: dict[int, list[tuple[int, float]]] = {}
    for (s, d), w in zip(g.edges.tolist(), net.weights.tolist()):
        incoming.setdefault(d, []).append((s, w))
    pending = set(incoming)
    while pending:
        for u in sorted(pending):
            if all(s in act for s, _ in incoming[u]):
                v = sum(w * act[s] for s, w in incoming[u])
                name = g.activations[u]
                act[u] = v if name == "identity" else math.tanh(v) if name == "tanh" else 1.0 / (1.0 + math.exp(-v))
                pending.remove(u)
                break
        else:
            raise RuntimeError("cycle")
    return act


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1e-300, np.max(np.abs(b)), np.max(np.abs(a))))


def random_spd(rng, d, cond=10.0):
    Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    ev = np.exp(rng.uniform(0, np.log(cond), d)) * rng.uniform(0.2, 2.0)
    return (Q * ev) @ Q.T
