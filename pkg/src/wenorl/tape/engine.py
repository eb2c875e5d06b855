"""Append-only scalar tape and its reverse sweep.

Every node is one float64 produced by exactly one scalar operation (or a
leaf). Nodes created by one recording call form a *segment*; the reverse pass
walks segments once in reverse creation order and accumulates adjoints with
"+=", so a leaf feeding several consumers receives the sum of their
contributions. Dense matrix products (``affine``) run through numpy in both
backends so that dot-product summation order is independent of the backend.
"""

from __future__ import annotations

import numpy as np

from .kinds import (EW1_NAMES, EW2_NAMES, OP_NEG, SEG_AFFINE, SEG_AXPB,
                    SEG_DETACH, SEG_DOTG, SEG_EW1, SEG_EW2, SEG_LINCOMB,
                    SEG_MAXG, SEG_SUMG)


class TapeError(ValueError):
    """Misuse of the tape API (bad handles, non-finite leaves, ...)."""


class TapeDomainError(ArithmeticError):
    """A recorded op left its domain (division by zero, sqrt of negative)."""


_DOMAIN_MESSAGES = {1: "division produced a non-finite value",
                    2: "sqrt of a negative argument"}


class GradientMap:
    """Gradient of one scalar root w.r.t. every registered trainable leaf.

    Holds exactly one entry per trainable leaf; leaves the root does not
    depend on carry gradient 0.
    """

    def __init__(self, blocks, adj):
        self._blocks = [(base, n, adj[base:base + n].copy())
                        for base, n in blocks]

    def __len__(self):
        return sum(n for _, n, _ in self._blocks)

    def __contains__(self, handle):
        return any(base <= handle < base + n for base, n, _ in self._blocks)

    def __getitem__(self, handle):
        for base, n, g in self._blocks:
            if base <= handle < base + n:
                return float(g[handle - base])
        raise KeyError(f"node {handle} is not a trainable leaf")

    def block(self, base):
        """Gradient array for the trainable block registered at ``base``."""
        for b, _, g in self._blocks:
            if b == base:
                return g
        raise KeyError(f"no trainable block starts at node {base}")

    def vector(self):
        """All gradients concatenated in registration order."""
        return np.concatenate([g for _, _, g in self._blocks]) \
            if self._blocks else np.empty(0)


class Tape:
    """Records scalar ops eagerly and differentiates a scalar root."""

    def __init__(self, capacity: int = 256, backend: str | None = None):
        from . import select_kernels
        self.k = select_kernels(backend)
        self.values = np.empty(max(capacity, 1))
        self.n = 0
        self.segments: list = []
        self._blocks: list = []   # (base, n) of trainable leaves
        self._adj = None

    def __len__(self):
        return self.n

    # ------------------------------------------------------------- storage

    def _alloc(self, m: int) -> int:
        need = self.n + m
        if need > self.values.size:
            buf = np.empty(max(need, self.values.size * 2))
            buf[:self.n] = self.values[:self.n]
            self.values = buf
        base = self.n
        self.n = need
        return base

    def reserve(self, capacity: int) -> None:
        """Pre-size value storage for at least ``capacity`` nodes."""
        if capacity > self.values.size:
            buf = np.empty(int(capacity))
            buf[:self.n] = self.values[:self.n]
            self.values = buf

    def _idx(self, a) -> np.ndarray:
        idx = np.ascontiguousarray(a, dtype=np.int64).ravel()
        if idx.size:
            lo = idx.min()
            hi = idx.max()
            if lo < 0 or hi >= self.n:
                raise TapeError(f"operand index out of range: [{lo}, {hi}] "
                                f"on a tape of {self.n} nodes")
        return idx

    def mark(self):
        """Checkpoint (node count, segment count) for a later reset()."""
        return self.n, len(self.segments)

    def reset(self, mark) -> None:
        """Truncate the tape back to a mark; later handles become invalid."""
        n, nseg = mark
        self.n = n
        del self.segments[nseg:]
        self._blocks = [(b, m) for b, m in self._blocks if b + m <= n]
        self._adj = None

    # -------------------------------------------------------------- leaves

    def leaf(self, value: float, trainable: bool = False) -> int:
        v = float(value)
        if not np.isfinite(v):
            raise TapeError(f"leaf value must be finite, got {value!r}")
        base = self._alloc(1)
        self.values[base] = v
        if trainable:
            self._blocks.append((base, 1))
        return base

    def leaves(self, array, trainable: bool = False) -> int:
        arr = np.asarray(array, dtype=np.float64).ravel()
        if not np.all(np.isfinite(arr)):
            raise TapeError("leaf values must be finite")
        base = self._alloc(arr.size)
        self.values[base:base + arr.size] = arr
        if trainable:
            self._blocks.append((base, arr.size))
        return base

    # ------------------------------------------------------- vector record

    def ew1(self, op: int, a_idx) -> int:
        a = self._idx(a_idx)
        out0 = self._alloc(a.size)
        err = self.k.ew1_fwd(op, self.values, out0, a.size, a)
        if err:
            raise TapeDomainError(_DOMAIN_MESSAGES[err])
        self.segments.append((SEG_EW1, op, out0, a.size, a))
        return out0

    def ew2(self, op: int, a_idx, b_idx) -> int:
        a = self._idx(a_idx)
        b = self._idx(b_idx)
        if a.size != b.size:
            raise TapeError("operand index arrays differ in length")
        out0 = self._alloc(a.size)
        err = self.k.ew2_fwd(op, self.values, out0, a.size, a, b)
        if err:
            raise TapeDomainError(_DOMAIN_MESSAGES[err])
        self.segments.append((SEG_EW2, op, out0, a.size, a, b))
        return out0

    def axpb(self, a_idx, c: float, d: float = 0.0) -> int:
        a = self._idx(a_idx)
        out0 = self._alloc(a.size)
        self.k.axpb_fwd(self.values, out0, a.size, a, float(c), float(d))
        self.segments.append((SEG_AXPB, out0, a.size, a, float(c), float(d)))
        return out0

    def lincomb(self, a_idx, coeffs) -> int:
        co = np.ascontiguousarray(coeffs, dtype=np.float64)
        a = self._idx(a_idx)
        K = co.size
        if a.size % K:
            raise TapeError("lincomb index array length must be n*K")
        n = a.size // K
        out0 = self._alloc(n)
        self.k.lincomb_fwd(self.values, out0, n, K, a, co)
        self.segments.append((SEG_LINCOMB, out0, n, K, a, co))
        return out0

    def affine(self, w0: int, b0: int, x0: int, B: int, R: int, K: int) -> int:
        """Rows ``out[i,:] = W @ x_i (+ bias)`` with W at w0 (R x K row-major),
        x rows contiguous at x0, bias at b0 (or b0 < 0 for none)."""
        if w0 + R * K > self.n or x0 + B * K > self.n or \
                (b0 >= 0 and b0 + R > self.n):
            raise TapeError("affine operand block out of range")
        out0 = self._alloc(B * R)
        v = self.values
        W = v[w0:w0 + R * K].reshape(R, K)
        X = v[x0:x0 + B * K].reshape(B, K)
        out = X @ W.T
        if b0 >= 0:
            out += v[b0:b0 + R]
        v[out0:out0 + B * R] = out.ravel()
        self.segments.append((SEG_AFFINE, out0, B, R, K, w0, b0, x0))
        return out0

    def dotg(self, a_idx, b_idx, K: int) -> int:
        a = self._idx(a_idx)
        b = self._idx(b_idx)
        if a.size != b.size or a.size % K:
            raise TapeError("dotg index arrays must both have length n*K")
        n = a.size // K
        out0 = self._alloc(n)
        self.k.dotg_fwd(self.values, out0, n, K, a, b)
        self.segments.append((SEG_DOTG, out0, n, K, a, b))
        return out0

    def sum_groups(self, a_idx, K: int) -> int:
        a = self._idx(a_idx)
        if a.size % K:
            raise TapeError("sum_groups index array length must be n*K")
        n = a.size // K
        out0 = self._alloc(n)
        self.k.sumg_fwd(self.values, out0, n, K, a)
        self.segments.append((SEG_SUMG, out0, n, K, a))
        return out0

    def max_groups(self, a_idx, K: int) -> int:
        a = self._idx(a_idx)
        if a.size % K:
            raise TapeError("max_groups index array length must be n*K")
        n = a.size // K
        out0 = self._alloc(n)
        self.k.maxg_fwd(self.values, out0, n, K, a)
        self.segments.append((SEG_MAXG, out0, n, K, a))
        return out0

    def detach(self, a_idx) -> int:
        """Identity forward; the reverse pass does not cross it."""
        a = self._idx(a_idx)
        out0 = self._alloc(a.size)
        self.k.gather_fwd(self.values, out0, a.size, a)
        self.segments.append((SEG_DETACH, out0, a.size, a))
        return out0

    # ------------------------------------------------------- scalar record

    def apply(self, kind: str, *operands: int, c: float | None = None) -> int:
        """Record one scalar op by name and return the new node handle."""
        if kind in EW1_NAMES:
            (a,) = operands
            return self.ew1(EW1_NAMES[kind], [a])
        if kind in EW2_NAMES:
            a, b = operands
            return self.ew2(EW2_NAMES[kind], [a], [b])
        if kind == "scale":
            if c is None:
                raise TapeError("scale needs the constant c")
            (a,) = operands
            return self.axpb([a], c)
        if kind == "sum":
            if not operands:
                raise TapeError("sum needs at least one operand")
            return self.sum_groups(list(operands), K=len(operands))
        raise TapeError(f"unknown op kind {kind!r}")

    # ------------------------------------------------------------ reverse

    def backward(self, root: int) -> GradientMap:
        """One reverse sweep from ``root``; returns the trainable gradients."""
        if not 0 <= root < self.n:
            raise TapeError(f"root {root} is not on the tape")
        adj = np.zeros(self.n)
        adj[root] = 1.0
        v = self.values
        k = self.k
        for seg in reversed(self.segments):
            kind = seg[0]
            if kind == SEG_EW1:
                _, op, out0, n, a = seg
                k.ew1_bwd(op, v, adj, out0, n, a)
            elif kind == SEG_EW2:
                _, op, out0, n, a, b = seg
                k.ew2_bwd(op, v, adj, out0, n, a, b)
            elif kind == SEG_AXPB:
                _, out0, n, a, c, _ = seg
                k.axpb_bwd(adj, out0, n, a, c)
            elif kind == SEG_LINCOMB:
                _, out0, n, K, a, co = seg
                k.lincomb_bwd(adj, out0, n, K, a, co)
            elif kind == SEG_AFFINE:
                _, out0, B, R, K, w0, b0, x0 = seg
                G = adj[out0:out0 + B * R].reshape(B, R)
                W = v[w0:w0 + R * K].reshape(R, K)
                X = v[x0:x0 + B * K].reshape(B, K)
                adj[x0:x0 + B * K].reshape(B, K)[...] += G @ W
                adj[w0:w0 + R * K].reshape(R, K)[...] += G.T @ X
                if b0 >= 0:
                    adj[b0:b0 + R] += G.sum(axis=0)
            elif kind == SEG_DOTG:
                _, out0, n, K, a, b = seg
                k.dotg_bwd(v, adj, out0, n, K, a, b)
            elif kind == SEG_SUMG:
                _, out0, n, K, a = seg
                k.sumg_bwd(adj, out0, n, K, a)
            elif kind == SEG_MAXG:
                _, out0, n, K, a = seg
                k.maxg_bwd(v, adj, out0, n, K, a)
            # SEG_DETACH: no gradient crosses
        self._adj = adj
        return GradientMap(self._blocks, adj)

    # --------------------------------------------------------------- reads

    def value(self, handle: int) -> float:
        if not 0 <= handle < self.n:
            raise TapeError(f"node {handle} is not on the tape")
        return float(self.values[handle])

    def read(self, base: int, n: int) -> np.ndarray:
        if base < 0 or base + n > self.n:
            raise TapeError("read range is not on the tape")
        return self.values[base:base + n].copy()

    def adjoint(self, handle: int) -> float:
        if self._adj is None:
            raise TapeError("no backward pass has run on this tape")
        return float(self._adj[handle])
