"""The shared interface policy: a 10-128-128-6 MLP with two softmax heads.

One parameter vector serves every interface (and every component row for the
Euler system); gradients from all of them accumulate into the same leaves.
The numpy ``forward`` here and the tape recording in ``record_forward`` use
the same BLAS calls and softmax evaluation order, so they agree bit for bit.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tape import Tape
from .tape.kinds import OP_DIV, OP_EXP, OP_RELU, OP_SUB

N_IN = 10          # five plus-stencil and five minus-stencil values
N_HIDDEN = 128
N_OUT = 6          # two softmax triples: plus weights, minus weights
LAYER_DIMS = ((N_IN, N_HIDDEN), (N_HIDDEN, N_HIDDEN), (N_HIDDEN, N_OUT))

_sizes = []
for _in, _out in LAYER_DIMS:
    _sizes.append(_in * _out)
    _sizes.append(_out)
_bounds = np.cumsum([0] + _sizes)
N_PARAMS = int(_bounds[-1])

_MAGIC = b"WENORLP\x00"
_VERSION = 1


def param_count() -> int:
    return N_PARAMS


def views(theta: np.ndarray):
    """(W1, b1, W2, b2, W3, b3) views into the flat parameter vector."""
    if theta.shape != (N_PARAMS,):
        raise ValueError(f"expected a flat ({N_PARAMS},) parameter vector, "
                         f"got {theta.shape}")
    parts = [theta[_bounds[i]:_bounds[i + 1]] for i in range(6)]
    out = []
    for li, (n_in, n_out) in enumerate(LAYER_DIMS):
        out.append(parts[2 * li].reshape(n_out, n_in))
        out.append(parts[2 * li + 1])
    return tuple(out)


BLOCK_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def block_of(coord: int) -> str:
    """Which parameter block (W1, b1, ... b3) a flat coordinate lives in."""
    if not 0 <= coord < N_PARAMS:
        raise ValueError(f"coordinate {coord} outside 0..{N_PARAMS - 1}")
    return BLOCK_NAMES[int(np.searchsorted(_bounds, coord, "right")) - 1]


def init_params(seed: int) -> np.ndarray:
    """Xavier-uniform hidden layers, zeroed output layer.

    The zero head makes the initial policy emit exactly (1/3, 1/3, 1/3) on
    both stencils, a neutral convex combination.
    """
    rng = np.random.default_rng(seed)
    theta = np.zeros(N_PARAMS)
    w1, b1, w2, b2, w3, b3 = views(theta)
    for w in (w1, w2):
        n_out, n_in = w.shape
        bound = np.sqrt(6.0 / (n_in + n_out))
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return theta


def forward(theta: np.ndarray, obs: np.ndarray):
    """Sub-stencil weights for observation rows.

    obs (..., 10) -> (w_plus (..., 3), w_minus (..., 3)).
    """
    w1, b1, w2, b2, w3, b3 = views(theta)
    obs = np.asarray(obs, dtype=np.float64)
    h1 = obs @ w1.T + b1
    h1 = np.maximum(h1, 0.0)
    h2 = h1 @ w2.T + b2
    h2 = np.maximum(h2, 0.0)
    z = h2 @ w3.T + b3
    trip = z.reshape(z.shape[:-1] + (2, 3))
    m = np.max(trip, axis=-1, keepdims=True)
    e = np.exp(trip - m)
    s = e[..., 0] + e[..., 1] + e[..., 2]
    w = e / s[..., None]
    return w[..., 0, :], w[..., 1, :]


def record_forward(tape: Tape, theta_base: int, obs_base: int, B: int) -> int:
    """Record the MLP on the tape for B observation rows at obs_base.

    Returns the base of the (B, 6) weight block: row layout
    [plus_0 plus_1 plus_2 minus_0 minus_1 minus_2].
    """
    off = [theta_base + int(b) for b in _bounds[:-1]]
    w1, b1, w2, b2, w3, b3 = off
    h1 = tape.affine(w1, b1, obs_base, B, N_HIDDEN, N_IN)
    a1 = tape.ew1(OP_RELU, np.arange(h1, h1 + B * N_HIDDEN))
    h2 = tape.affine(w2, b2, a1, B, N_HIDDEN, N_HIDDEN)
    a2 = tape.ew1(OP_RELU, np.arange(h2, h2 + B * N_HIDDEN))
    z = tape.affine(w3, b3, a2, B, N_OUT, N_HIDDEN)
    zi = np.arange(z, z + B * N_OUT)
    m = tape.max_groups(zi, 3)                       # 2B head maxima
    shifted = tape.ew2(OP_SUB, zi, np.repeat(np.arange(m, m + 2 * B), 3))
    e = tape.ew1(OP_EXP, np.arange(shifted, shifted + B * N_OUT))
    s = tape.sum_groups(np.arange(e, e + B * N_OUT), 3)
    w = tape.ew2(OP_DIV, np.arange(e, e + B * N_OUT),
                 np.repeat(np.arange(s, s + 2 * B), 3))
    return w


def save_params(theta: np.ndarray, path) -> None:
    """Versioned binary checkpoint: header then little-endian float64."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if theta.shape != (N_PARAMS,):
        raise ValueError(f"expected ({N_PARAMS},) parameters, got {theta.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII", _MAGIC, _VERSION, len(LAYER_DIMS)))
        for n_in, n_out in LAYER_DIMS:
            fh.write(struct.pack("<II", n_in, n_out))
        fh.write(theta.astype("<f8").tobytes())


def _marker_target(path, blob):
    """The checkpoint a ``best`` marker file points at, if ``blob`` is one."""
    try:
        text = blob.decode("ascii")
    except UnicodeDecodeError:
        return None
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep and key.strip() == "checkpoint":
            target = os.path.join(os.path.dirname(os.fspath(path)),
                                  value.strip())
            if os.path.isfile(target):
                return target
    return None


def load_params(path, *, _follow_marker: bool = True) -> np.ndarray:
    """Read a checkpoint; a ``best`` marker file resolves to its target."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if _follow_marker and not blob.startswith(_MAGIC):
        target = _marker_target(path, blob)
        if target is not None:
            return load_params(target, _follow_marker=False)
    head = struct.calcsize("<8sII")
    if len(blob) < head:
        raise ValueError(f"checkpoint {path} is truncated")
    magic, version, n_layers = struct.unpack_from("<8sII", blob)
    if magic != _MAGIC:
        raise ValueError(f"{path} is not a policy checkpoint")
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if n_layers != len(LAYER_DIMS):
        raise ValueError(f"unexpected layer count {n_layers}")
    dims = []
    ofs = head
    for _ in range(n_layers):
        if ofs + 8 > len(blob):
            raise ValueError(f"checkpoint {path} is truncated")
        dims.append(struct.unpack_from("<II", blob, ofs))
        ofs += 8
    if tuple(dims) != LAYER_DIMS:
        raise ValueError(f"layer dimensions {dims} do not match this policy")
    payload = blob[ofs:]
    if len(payload) != N_PARAMS * 8:
        raise ValueError(f"checkpoint {path} has {len(payload)} payload bytes,"
                         f" expected {N_PARAMS * 8}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)
