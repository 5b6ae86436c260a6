"""Weight gradients of functions of backpropagated quantities.

A quantity ``B`` is propagated backwards as ``B_i = sum_{i->j} phi_j(w_ij, V_j) B_j``
from fixed output values, and ``S = sum_{i in inputs} psi_i(B_i)``. The
gradient of S w.r.t. every weight comes from three passes: B backwards, C
forwards, D backwards. The layer-wise diagonal Gauss-Newton curvature and
``log det`` of the resulting feature Hessian are the main instance.

Edge families are closures ``phi(w, v, dst) -> (value, d/dw, d/dv)`` where ``w``
holds the weights of a block of edges, ``v`` the pre-activations of their target
units (batch x edges) and ``dst`` the target unit ids. Input families are
``psi(b, units) -> (value, derivative)``.

Families of the product form ``phi = alpha(w) beta(V)`` can be wrapped in
:class:`SeparablePhi`; the passes then run as dense level products like plain
backpropagation instead of per-edge scatters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import netgraph as ng
from .codelength import Decoder
from .priors import GaussianPrior

Phi = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]
Psi = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

MAX_PATHS = 1_000_000


@dataclass(frozen=True)
class SeparablePhi:
    """phi(w, V) = alpha(w) * beta(V) with ``weight(w) -> (alpha, alpha')`` and
    ``unit(v, units) -> (beta, beta')`` evaluated once per unit."""

    weight: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    unit: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

    def __call__(self, w, v, dst):
        a, da = self.weight(w)
        b, db = self.unit(v, dst)
        return a * b, da * b, a * db


def _scatter(idx: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    """out[b, k] = sum of vals[b, e] over edges e with idx[e] == k."""
    bsz = vals.shape[0]
    flat = (idx[None, :] + n * np.arange(bsz)[:, None]).ravel()
    return np.bincount(flat, weights=vals.ravel(), minlength=n * bsz).reshape(bsz, n)


def _phi_blocks(net: ng.Network, V: np.ndarray, phi: Phi):
    blocks = []
    for lv in net.graph.levels:
        w = net.weights[lv.start:lv.stop]
        val, dw, dv = (np.broadcast_to(t, (V.shape[0], len(w))) for t in phi(w, V[:, lv.dst], lv.dst))
        blocks.append((val, dw, dv))
    return blocks


def _backward_b(net: ng.Network, blocks, b_out, bsz: int) -> np.ndarray:
    g = net.graph
    B = np.zeros((bsz, g.n_units))
    B[:, g.outputs] = b_out
    for lv, (val, _, _) in zip(reversed(g.levels), reversed(blocks)):
        B[:, lv.srcs] += _scatter(lv.src_pos, val * B[:, lv.dst], len(lv.srcs))
    return B


def backward_quantity(net: ng.Network, record: ng.ActivationRecord, phi: Phi, b_out) -> np.ndarray:
    """B for every unit (batch x units, or a vector for single-sample records)."""
    V = np.atleast_2d(record.V)
    if isinstance(phi, SeparablePhi):
        B = _backward_b_separable(net, _separable_parts(net, V, phi), np.asarray(b_out, dtype=float), V.shape[0])
    else:
        B = _backward_b(net, _phi_blocks(net, V, phi), np.asarray(b_out, dtype=float), V.shape[0])
    return B if record.batched else B[0]


@dataclass(frozen=True)
class ThreePassResult:
    S: float
    grad: np.ndarray  # dS/dw, canonical edge order, summed over the batch
    input_grad: np.ndarray  # dS/da on input units, per sample
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


def _check_finite(name: str, arr: np.ndarray):
    bad = ~np.isfinite(arr)
    if bad.any():
        unit = int(np.argwhere(bad)[0][-1])
        raise FloatingPointError(f"non-finite {name} at unit {unit}")


def _separable_parts(net: ng.Network, V: np.ndarray, phi: SeparablePhi):
    """Per level: alpha and alpha' per edge, alpha as a (srcs x units) matrix,
    plain weights as a matrix, beta and beta' per target unit."""
    parts = []
    for lv in net.graph.levels:
        w = net.weights[lv.start:lv.stop]
        al, dal = phi.weight(w)
        al, dal = np.broadcast_to(al, w.shape), np.broadcast_to(dal, w.shape)
        m_al = np.zeros((len(lv.srcs), len(lv.units)))
        m_al[lv.src_pos, lv.dst_pos] = al
        m_w = np.zeros_like(m_al)
        m_w[lv.src_pos, lv.dst_pos] = w
        be, dbe = (np.broadcast_to(t, (V.shape[0], len(lv.units))) for t in phi.unit(V[:, lv.units], lv.units))
        parts.append((dal, m_al, m_w, be, dbe))
    return parts


def _backward_b_separable(net: ng.Network, parts, b_out, bsz: int) -> np.ndarray:
    g = net.graph
    B = np.zeros((bsz, g.n_units))
    B[:, g.outputs] = b_out
    for lv, (_, m_al, _, be, _) in zip(reversed(g.levels), reversed(parts)):
        B[:, lv.srcs] += (be * B[:, lv.units]) @ m_al.T
    return B


def _three_pass_separable(net, record, phi: SeparablePhi, psi: Psi, b_out) -> ThreePassResult:
    g = net.graph
    V, A = np.atleast_2d(record.V), np.atleast_2d(record.a)
    bsz = V.shape[0]
    parts = _separable_parts(net, V, phi)

    B = _backward_b_separable(net, parts, np.asarray(b_out, dtype=float), bsz)
    _check_finite("B", B)
    s_val, s_der = psi(B[:, g.inputs], g.inputs)

    C = np.zeros_like(B)
    C[:, g.inputs] = s_der
    inflow = []  # sum_i C_i alpha(w_ij), per level and target unit
    for lv, (_, m_al, _, be, _) in zip(g.levels, parts):
        z = C[:, lv.srcs] @ m_al
        inflow.append(z)
        C[:, lv.units] = z * be
    _check_finite("C", C)

    D = np.zeros_like(B)
    down = np.zeros_like(B)
    for lv, z, (_, _, m_w, _, dbe) in zip(reversed(g.levels), reversed(inflow), reversed(parts)):
        u = lv.units
        D[:, u] = z * dbe * B[:, u] + ng.slope(V[:, u], g.codes[u]) * down[:, u]
        down[:, lv.srcs] += D[:, u] @ m_w.T
    _check_finite("D", D)

    grad = np.empty(g.n_edges)
    for lv, (dal, _, _, be, _) in zip(g.levels, parts):
        u = lv.units
        cb = (be * B[:, u])[:, lv.dst_pos]
        grad[lv.start:lv.stop] = dal * np.einsum("be,be->e", C[:, lv.src], cb) + np.einsum(
            "be,be->e", A[:, lv.src], D[:, lv.dst]
        )

    input_grad = down[:, g.inputs]
    if not record.batched:
        return ThreePassResult(float(np.sum(s_val)), grad, input_grad[0], B[0], C[0], D[0])
    return ThreePassResult(float(np.sum(s_val)), grad, input_grad, B, C, D)


def three_pass_grad(net: ng.Network, record: ng.ActivationRecord, phi: Phi, psi: Psi, b_out) -> ThreePassResult:
    if isinstance(phi, SeparablePhi):
        return _three_pass_separable(net, record, phi, psi, b_out)
    g = net.graph
    V, A = np.atleast_2d(record.V), np.atleast_2d(record.a)
    bsz = V.shape[0]
    blocks = _phi_blocks(net, V, phi)

    B = _backward_b(net, blocks, np.asarray(b_out, dtype=float), bsz)
    _check_finite("B", B)
    s_val, s_der = psi(B[:, g.inputs], g.inputs)

    C = np.zeros_like(B)
    C[:, g.inputs] = s_der
    for lv, (val, _, _) in zip(g.levels, blocks):
        C[:, lv.units] = _scatter(lv.dst_pos, C[:, lv.src] * val, len(lv.units))
    _check_finite("C", C)

    D = np.zeros_like(B)
    down = np.zeros_like(B)  # sum_j w_ij D_j, accumulated from consumers
    for lv, (_, _, dv) in zip(reversed(g.levels), reversed(blocks)):
        u = lv.units
        first = _scatter(lv.dst_pos, C[:, lv.src] * dv, len(u)) * B[:, u]
        D[:, u] = first + ng.slope(V[:, u], g.codes[u]) * down[:, u]
        w = net.weights[lv.start:lv.stop]
        down[:, lv.srcs] += _scatter(lv.src_pos, w * D[:, lv.dst], len(lv.srcs))
    _check_finite("D", D)

    grad = np.empty(g.n_edges)
    for lv, (_, dw, _) in zip(g.levels, blocks):
        grad[lv.start:lv.stop] = np.sum(C[:, lv.src] * B[:, lv.dst] * dw + A[:, lv.src] * D[:, lv.dst], axis=0)

    input_grad = down[:, g.inputs]
    if not record.batched:
        return ThreePassResult(float(np.sum(s_val)), grad, input_grad[0], B[0], C[0], D[0])
    return ThreePassResult(float(np.sum(s_val)), grad, input_grad, B, C, D)


def squared_slope_phi(net: ng.Network) -> Phi:
    """phi(w, V) = w^2 s'(V)^2: backpropagation with squared weights."""
    codes = net.graph.codes

    def weight(w):
        return w * w, 2 * w

    def unit(v, units):
        c = codes[units]
        sp = ng.slope(v, c)
        return sp * sp, 2 * sp * ng.curvature(v, c)

    return SeparablePhi(weight, unit)


def log_floor_psi(inv_var: np.ndarray) -> Psi:
    """psi_i(h) = log(1/lambda_i + h) on the input units, in input order."""
    inv_var = np.asarray(inv_var, dtype=float)

    def psi(b, units):
        t = inv_var + b
        return np.log(t), 1.0 / t

    return psi


def layerwise_curvature(dec: Decoder, record: ng.ActivationRecord) -> np.ndarray:
    """h_i on the decoder's input units, starting from 1/sigma_k^2 on the outputs."""
    B = backward_quantity(dec.net, record, squared_slope_phi(dec.net), 1.0 / dec.output.sigma ** 2)
    return B[..., dec.net.graph.inputs]


def logdet_curvature_grad(dec: Decoder, prior: GaussianPrior, y0, x=None) -> ThreePassResult:
    """log det of diag(1/lambda + h) at features ``y0`` and its exact weight gradient.

    ``x`` is accepted for signature symmetry; the curvature does not depend on it.
    """
    rec = ng.forward(dec.net, y0)
    return three_pass_grad(
        dec.net, rec, squared_slope_phi(dec.net), log_floor_psi(1.0 / prior.var), 1.0 / dec.output.sigma ** 2
    )


# -- explicit path sums ---------------------------------------------------


@dataclass(frozen=True)
class TransferRateTable:
    tau: np.ndarray  # tau[l, m]: sum over paths l -> m of the product of edge factors
    n_paths: int


def transfer_rates_oracle(net: ng.Network, phi: Phi, record: ng.ActivationRecord, max_paths: int = MAX_PATHS):
    """Enumerate every path of a small single-sample network explicitly."""
    g = net.graph
    if record.batched:
        raise ValueError("path enumeration works on single-sample records")
    factor = {}
    for (s, d), w in zip(g.edges.tolist(), net.weights):
        val, _, _ = phi(np.array([w]), np.array([[record.V[d]]]), np.array([d]))
        factor[(s, d)] = float(np.ravel(val)[0])
    children = {u: [] for u in range(g.n_units)}
    for s, d in g.edges.tolist():
        children[s].append(d)

    tau = np.zeros((g.n_units, g.n_units))
    count = 0
    for start in range(g.n_units):
        stack = [(start, 1.0)]
        while stack:
            u, prod = stack.pop()
            tau[start, u] += prod
            count += 1
            if count > max_paths:
                raise RuntimeError(f"more than {max_paths} paths; network too large for enumeration")
            for c in children[u]:
                stack.append((c, prod * factor[(u, c)]))
    return TransferRateTable(tau, count)


def pre_activation_sensitivity(net: ng.Network, record: ng.ActivationRecord) -> np.ndarray:
    """dV_m / dV_n for all pairs by explicit path sums of s'(V) w products."""
    g = net.graph
    n = g.n_units
    sp = ng.slope(record.V, g.codes)
    children = {u: [] for u in range(n)}
    for (s, d), w in zip(g.edges.tolist(), net.weights):
        children[s].append((d, w))
    sens = np.zeros((n, n))
    computing = set(range(1, n)) - set(g.inputs.tolist())
    for start in computing:
        stack = [(start, 1.0)]
        while stack:
            u, prod = stack.pop()
            sens[start, u] += prod
            for c, w in children[u]:
                stack.append((c, prod * sp[u] * w))
    return sens

