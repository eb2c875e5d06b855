# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tape kernels.

Mirrors kernels_py exactly: same scalar formulas written in the same
evaluation order, so values and adjoints are bit-identical across backends.
"""

from libc.math cimport fabs, isfinite, sqrt as c_sqrt

import numpy as np

cimport numpy as cnp

ctypedef cnp.int64_t idx_t

NAME = "cython"

cdef int C_ABS = 0, C_RELU = 1, C_EXP = 2, C_SQUARE = 3, C_SQRT = 4, C_NEG = 5
cdef int C_ADD = 0, C_SUB = 1, C_MUL = 2, C_DIV = 3, C_MIN = 4, C_MAX = 5


def ew1_fwd(int op, double[::1] values, Py_ssize_t out0, Py_ssize_t n,
            idx_t[::1] a_idx):
    cdef Py_ssize_t i
    cdef double va
    if op == C_SQRT:
        for i in range(n):
            va = values[a_idx[i]]
            if va < 0.0:
                return 2
            values[out0 + i] = c_sqrt(va)
        return 0
    if op == C_EXP:
        # numpy's exp, not libc's: keeps both backends bit-identical
        arr = np.asarray(values)
        arr[out0:out0 + n] = np.exp(arr[np.asarray(a_idx)])
        return 0
    for i in range(n):
        va = values[a_idx[i]]
        if op == C_ABS:
            values[out0 + i] = fabs(va)
        elif op == C_RELU:
            values[out0 + i] = va if va > 0.0 else 0.0
        elif op == C_SQUARE:
            values[out0 + i] = va * va
        else:
            values[out0 + i] = -va
    return 0


def ew1_bwd(int op, double[::1] values, double[::1] adj, Py_ssize_t out0,
            Py_ssize_t n, idx_t[::1] a_idx):
    cdef Py_ssize_t i
    cdef double g, va
    for i in range(n):
        g = adj[out0 + i]
        va = values[a_idx[i]]
        if op == C_ABS:
            adj[a_idx[i]] += g * ((va > 0.0) - (va < 0.0))
        elif op == C_RELU:
            adj[a_idx[i]] += g * (va > 0.0)
        elif op == C_EXP:
            adj[a_idx[i]] += g * values[out0 + i]
        elif op == C_SQUARE:
            adj[a_idx[i]] += g * 2.0 * va
        elif op == C_SQRT:
            adj[a_idx[i]] += g * 0.5 / values[out0 + i]
        else:
            adj[a_idx[i]] += -g


def ew2_fwd(int op, double[::1] values, Py_ssize_t out0, Py_ssize_t n,
            idx_t[::1] a_idx, idx_t[::1] b_idx):
    cdef Py_ssize_t i
    cdef double va, vb, out
    if op == C_DIV:
        for i in range(n):
            out = values[a_idx[i]] / values[b_idx[i]]
            if not isfinite(out):
                return 1
            values[out0 + i] = out
        return 0
    for i in range(n):
        va = values[a_idx[i]]
        vb = values[b_idx[i]]
        if op == C_ADD:
            values[out0 + i] = va + vb
        elif op == C_SUB:
            values[out0 + i] = va - vb
        elif op == C_MUL:
            values[out0 + i] = va * vb
        elif op == C_MIN:
            values[out0 + i] = vb if vb < va else va
        else:
            values[out0 + i] = vb if vb > va else va
    return 0


def ew2_bwd(int op, double[::1] values, double[::1] adj, Py_ssize_t out0,
            Py_ssize_t n, idx_t[::1] a_idx, idx_t[::1] b_idx):
    cdef Py_ssize_t i
    cdef double g, va, vb
    for i in range(n):
        g = adj[out0 + i]
        va = values[a_idx[i]]
        vb = values[b_idx[i]]
        if op == C_ADD:
            adj[a_idx[i]] += g
            adj[b_idx[i]] += g
        elif op == C_SUB:
            adj[a_idx[i]] += g
            adj[b_idx[i]] += -g
        elif op == C_MUL:
            adj[a_idx[i]] += g * vb
            adj[b_idx[i]] += g * va
        elif op == C_DIV:
            adj[a_idx[i]] += g / vb
            adj[b_idx[i]] += -(g * values[out0 + i]) / vb
        elif op == C_MIN:
            if va <= vb:
                adj[a_idx[i]] += g
            else:
                adj[b_idx[i]] += g
        else:
            if va >= vb:
                adj[a_idx[i]] += g
            else:
                adj[b_idx[i]] += g


def axpb_fwd(double[::1] values, Py_ssize_t out0, Py_ssize_t n,
             idx_t[::1] a_idx, double c, double d):
    cdef Py_ssize_t i
    for i in range(n):
        values[out0 + i] = c * values[a_idx[i]] + d


def axpb_bwd(double[::1] adj, Py_ssize_t out0, Py_ssize_t n,
             idx_t[::1] a_idx, double c):
    cdef Py_ssize_t i
    for i in range(n):
        adj[a_idx[i]] += adj[out0 + i] * c


def lincomb_fwd(double[::1] values, Py_ssize_t out0, Py_ssize_t n,
                Py_ssize_t K, idx_t[::1] a_idx, double[::1] coeffs):
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(n):
        acc = coeffs[0] * values[a_idx[i * K]]
        for k in range(1, K):
            acc += coeffs[k] * values[a_idx[i * K + k]]
        values[out0 + i] = acc


def lincomb_bwd(double[::1] adj, Py_ssize_t out0, Py_ssize_t n,
                Py_ssize_t K, idx_t[::1] a_idx, double[::1] coeffs):
    cdef Py_ssize_t i, k
    cdef double g
    for i in range(n):
        g = adj[out0 + i]
        for k in range(K):
            adj[a_idx[i * K + k]] += g * coeffs[k]


def dotg_fwd(double[::1] values, Py_ssize_t out0, Py_ssize_t n,
             Py_ssize_t K, idx_t[::1] a_idx, idx_t[::1] b_idx):
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(n):
        acc = values[a_idx[i * K]] * values[b_idx[i * K]]
        for k in range(1, K):
            acc += values[a_idx[i * K + k]] * values[b_idx[i * K + k]]
        values[out0 + i] = acc


def dotg_bwd(double[::1] values, double[::1] adj, Py_ssize_t out0,
             Py_ssize_t n, Py_ssize_t K, idx_t[::1] a_idx, idx_t[::1] b_idx):
    cdef Py_ssize_t i, k
    cdef double g
    for i in range(n):
        g = adj[out0 + i]
        for k in range(K):
            adj[a_idx[i * K + k]] += g * values[b_idx[i * K + k]]
            adj[b_idx[i * K + k]] += g * values[a_idx[i * K + k]]


def sumg_fwd(double[::1] values, Py_ssize_t out0, Py_ssize_t n,
             Py_ssize_t K, idx_t[::1] a_idx):
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(n):
        acc = values[a_idx[i * K]]
        for k in range(1, K):
            acc += values[a_idx[i * K + k]]
        values[out0 + i] = acc


def sumg_bwd(double[::1] adj, Py_ssize_t out0, Py_ssize_t n,
             Py_ssize_t K, idx_t[::1] a_idx):
    cdef Py_ssize_t i, k
    cdef double g
    for i in range(n):
        g = adj[out0 + i]
        for k in range(K):
            adj[a_idx[i * K + k]] += g


def maxg_fwd(double[::1] values, Py_ssize_t out0, Py_ssize_t n,
             Py_ssize_t K, idx_t[::1] a_idx):
    cdef Py_ssize_t i, k
    cdef double acc, vk
    for i in range(n):
        acc = values[a_idx[i * K]]
        for k in range(1, K):
            vk = values[a_idx[i * K + k]]
            if vk > acc:
                acc = vk
        values[out0 + i] = acc


def maxg_bwd(double[::1] values, double[::1] adj, Py_ssize_t out0,
             Py_ssize_t n, Py_ssize_t K, idx_t[::1] a_idx):
    cdef Py_ssize_t i, k, best
    cdef double vmax, vk
    for i in range(n):
        best = 0
        vmax = values[a_idx[i * K]]
        for k in range(1, K):
            vk = values[a_idx[i * K + k]]
            if vk > vmax:
                vmax = vk
                best = k
        adj[a_idx[i * K + best]] += adj[out0 + i]


def gather_fwd(double[::1] values, Py_ssize_t out0, Py_ssize_t n,
               idx_t[::1] a_idx):
    cdef Py_ssize_t i
    for i in range(n):
        values[out0 + i] = values[a_idx[i]]
