"""Pure-numpy tape kernels (fallback backend).

Both backends implement the same forward/backward functions with identical
scalar semantics and accumulation order, so a tape records and differentiates
bit-identically whichever backend is active. Scatter-accumulation uses
``np.add.at`` (unbuffered, so repeated indices accumulate correctly).

Error codes returned by the fallible forwards: 0 ok, 1 division produced a
non-finite value, 2 sqrt of a negative argument.
"""

import numpy as np

from .kinds import (OP_ABS, OP_ADD, OP_DIV, OP_EXP, OP_MAX, OP_MIN, OP_MUL,
                    OP_NEG, OP_RELU, OP_SQRT, OP_SQUARE, OP_SUB)

NAME = "python"


def ew1_fwd(op, values, out0, n, a_idx):
    va = values[a_idx]
    if op == OP_ABS:
        values[out0:out0 + n] = np.abs(va)
    elif op == OP_RELU:
        values[out0:out0 + n] = np.maximum(va, 0.0)
    elif op == OP_EXP:
        values[out0:out0 + n] = np.exp(va)
    elif op == OP_SQUARE:
        values[out0:out0 + n] = va * va
    elif op == OP_SQRT:
        if np.any(va < 0.0):
            return 2
        values[out0:out0 + n] = np.sqrt(va)
    elif op == OP_NEG:
        values[out0:out0 + n] = -va
    return 0


def ew1_bwd(op, values, adj, out0, n, a_idx):
    g = adj[out0:out0 + n]
    if op == OP_ABS:
        np.add.at(adj, a_idx, g * np.sign(values[a_idx]))
    elif op == OP_RELU:
        np.add.at(adj, a_idx, g * (values[a_idx] > 0.0))
    elif op == OP_EXP:
        np.add.at(adj, a_idx, g * values[out0:out0 + n])
    elif op == OP_SQUARE:
        np.add.at(adj, a_idx, g * 2.0 * values[a_idx])
    elif op == OP_SQRT:
        np.add.at(adj, a_idx, g * 0.5 / values[out0:out0 + n])
    elif op == OP_NEG:
        np.add.at(adj, a_idx, -g)


def ew2_fwd(op, values, out0, n, a_idx, b_idx):
    va = values[a_idx]
    vb = values[b_idx]
    if op == OP_ADD:
        values[out0:out0 + n] = va + vb
    elif op == OP_SUB:
        values[out0:out0 + n] = va - vb
    elif op == OP_MUL:
        values[out0:out0 + n] = va * vb
    elif op == OP_DIV:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = va / vb
        if not np.all(np.isfinite(out)):
            return 1
        values[out0:out0 + n] = out
    elif op == OP_MIN:
        values[out0:out0 + n] = np.where(vb < va, vb, va)
    elif op == OP_MAX:
        values[out0:out0 + n] = np.where(vb > va, vb, va)
    return 0


def _scatter2(adj, a_idx, b_idx, da, db):
    # One scatter with (a_i, b_i) pairs adjacent: accumulation order is
    # a_0, b_0, a_1, b_1, ... exactly like the compiled per-element loop.
    idx = np.stack([a_idx, b_idx], axis=-1).ravel()
    np.add.at(adj, idx, np.stack([da, db], axis=-1).ravel())


def ew2_bwd(op, values, adj, out0, n, a_idx, b_idx):
    g = adj[out0:out0 + n]
    if op == OP_ADD:
        _scatter2(adj, a_idx, b_idx, g, g)
    elif op == OP_SUB:
        _scatter2(adj, a_idx, b_idx, g, -g)
    elif op == OP_MUL:
        _scatter2(adj, a_idx, b_idx, g * values[b_idx], g * values[a_idx])
    elif op == OP_DIV:
        vb = values[b_idx]
        _scatter2(adj, a_idx, b_idx,
                  g / vb, -(g * values[out0:out0 + n]) / vb)
    elif op == OP_MIN:
        mask = values[a_idx] <= values[b_idx]
        np.add.at(adj, np.where(mask, a_idx, b_idx), g)
    elif op == OP_MAX:
        mask = values[a_idx] >= values[b_idx]
        np.add.at(adj, np.where(mask, a_idx, b_idx), g)


def axpb_fwd(values, out0, n, a_idx, c, d):
    values[out0:out0 + n] = c * values[a_idx] + d


def axpb_bwd(adj, out0, n, a_idx, c):
    np.add.at(adj, a_idx, adj[out0:out0 + n] * c)


def lincomb_fwd(values, out0, n, K, a_idx, coeffs):
    cols = a_idx.reshape(n, K)
    acc = coeffs[0] * values[cols[:, 0]]
    for k in range(1, K):
        acc += coeffs[k] * values[cols[:, k]]
    values[out0:out0 + n] = acc


def lincomb_bwd(adj, out0, n, K, a_idx, coeffs):
    g = adj[out0:out0 + n]
    np.add.at(adj, a_idx, (g[:, None] * coeffs).ravel())


def dotg_fwd(values, out0, n, K, a_idx, b_idx):
    ca = a_idx.reshape(n, K)
    cb = b_idx.reshape(n, K)
    acc = values[ca[:, 0]] * values[cb[:, 0]]
    for k in range(1, K):
        acc += values[ca[:, k]] * values[cb[:, k]]
    values[out0:out0 + n] = acc


def dotg_bwd(values, adj, out0, n, K, a_idx, b_idx):
    g = adj[out0:out0 + n].repeat(K).reshape(n, K)
    _scatter2(adj, a_idx.reshape(n, K), b_idx.reshape(n, K),
              g * values[b_idx].reshape(n, K),
              g * values[a_idx].reshape(n, K))


def sumg_fwd(values, out0, n, K, a_idx):
    cols = a_idx.reshape(n, K)
    acc = values[cols[:, 0]].copy()
    for k in range(1, K):
        acc += values[cols[:, k]]
    values[out0:out0 + n] = acc


def sumg_bwd(adj, out0, n, K, a_idx):
    np.add.at(adj, a_idx, np.repeat(adj[out0:out0 + n], K))


def maxg_fwd(values, out0, n, K, a_idx):
    vmat = values[a_idx].reshape(n, K)
    acc = vmat[:, 0].copy()
    for k in range(1, K):
        vk = vmat[:, k]
        np.copyto(acc, vk, where=vk > acc)
    values[out0:out0 + n] = acc


def maxg_bwd(values, adj, out0, n, K, a_idx):
    g = adj[out0:out0 + n]
    cols = a_idx.reshape(n, K)
    vmat = values[a_idx].reshape(n, K)
    winners = cols[np.arange(n), np.argmax(vmat, axis=1)]
    np.add.at(adj, winners, g)


def gather_fwd(values, out0, n, a_idx):
    values[out0:out0 + n] = values[a_idx]
