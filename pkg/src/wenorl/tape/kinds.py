"""Segment and elementwise-op codes shared by both kernel backends.

A tape is a flat array of scalar nodes. Each node is produced by exactly one
scalar operation; consecutive nodes produced by the same operation shape are
recorded as one *segment* so the kernels can run vectorized. The reverse pass
walks segments in reverse creation order and accumulates adjoints additively,
which is exactly a batched Wengert list.
"""

# segment kinds
SEG_EW1 = 0      # out[i] = op(v[a[i]])
SEG_EW2 = 1      # out[i] = op(v[a[i]], v[b[i]])
SEG_AXPB = 2     # out[i] = c * v[a[i]] + d
SEG_LINCOMB = 3  # out[i] = sum_k coeff[k] * v[a[i*K+k]]  (left-to-right)
SEG_AFFINE = 4   # out[r + i*R] = sum_k v[w0+r*K+k] * v[x0+i*K+k] (+ v[b0+r])
SEG_DOTG = 5     # out[i] = sum_k v[a[i*K+k]] * v[b[i*K+k]]  (left-to-right)
SEG_SUMG = 6     # out[i] = sum_k v[a[i*K+k]]  (left-to-right)
SEG_MAXG = 7     # out[i] = max_k v[a[i*K+k]]  (ties keep the first)
SEG_DETACH = 8   # out[i] = v[a[i]], no gradient flows back

# unary elementwise ops (SEG_EW1)
OP_ABS = 0       # d/dx |x| = sign(x), sign(0) = 0
OP_RELU = 1      # d/dx relu = 1 if x > 0 else 0
OP_EXP = 2
OP_SQUARE = 3
OP_SQRT = 4      # argument must be nonnegative
OP_NEG = 5

# binary elementwise ops (SEG_EW2)
OP_ADD = 0
OP_SUB = 1
OP_MUL = 2
OP_DIV = 3       # denominator must be nonzero
OP_MIN = 4       # ties route the gradient to the first operand
OP_MAX = 5

EW1_NAMES = {"abs": OP_ABS, "relu": OP_RELU, "exp": OP_EXP,
             "square": OP_SQUARE, "sqrt": OP_SQRT, "neg": OP_NEG}
EW2_NAMES = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL,
             "div": OP_DIV, "min": OP_MIN, "max": OP_MAX}
