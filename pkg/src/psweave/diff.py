"""Reverse-mode automatic differentiation over numpy arrays.

A dynamic tape records every primitive applied to `Var` operands; `gradient`
replays it backwards to accumulate adjoints. Primitives are vectorized, so a
scalar objective over thousands of data points costs a handful of array ops,
not a graph node per scalar.

The generic functions (`exp`, `log`, ...) dispatch on type: applied to plain
numbers or ndarrays they fall through to numpy, applied to `Var` they extend
the tape. Code written against them runs unchanged in both worlds, which is
how model density code doubles as its own gradient definition.

Extension point: `node(value, parents, vjp)` registers a custom primitive
application. The caller computes the forward value itself and supplies a
vector-Jacobian product closure; see `lgamma` below for the pattern. Fused
kernels built this way must ship tests comparing them against a composition
of basic primitives.
"""

import numpy as np
from scipy import special as _sp

__all__ = [
    "Var", "Tape", "gradient", "check_gradient", "node",
    "exp", "log", "log1p", "sqrt", "tanh", "logaddexp", "logsumexp",
    "segment_logsumexp", "vsum", "affine", "scatter_add", "lgamma",
    "log_sigmoid",
]


class Tape:
    """Operation record for one objective evaluation."""

    __slots__ = ("parents", "vjps")

    def __init__(self):
        self.parents = []
        self.vjps = []

    def append(self, parents, vjp):
        self.parents.append(parents)
        self.vjps.append(vjp)
        return len(self.parents) - 1


class Var:
    """A value on a tape. Wraps a float or ndarray, supports numpy-like ops."""

    __slots__ = ("value", "tape", "idx")

    # make `ndarray <op> Var` defer to our reflected operators instead of
    # numpy broadcasting over the Var as an opaque object
    __array_ufunc__ = None

    def __init__(self, value, tape=None, idx=None):
        self.value = np.asarray(value, dtype=float) if np.ndim(value) else float(value)
        if tape is None:
            tape = Tape()
            idx = tape.append((), None)
        self.tape = tape
        self.idx = idx

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            return _binary(self, other, self.value + other.value,
                           lambda g: (_unbroadcast(g, self.value),
                                      _unbroadcast(g, other.value)))
        return _unary(self, self.value + other, lambda g: _unbroadcast(g, self.value))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return _binary(self, other, self.value - other.value,
                           lambda g: (_unbroadcast(g, self.value),
                                      _unbroadcast(-g, other.value)))
        return _unary(self, self.value - other, lambda g: _unbroadcast(g, self.value))

    def __rsub__(self, other):
        return _unary(self, other - self.value, lambda g: _unbroadcast(-g, self.value))

    def __mul__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return _binary(self, other, a * b,
                           lambda g: (_unbroadcast(g * b, a), _unbroadcast(g * a, b)))
        return _unary(self, self.value * other,
                      lambda g: _unbroadcast(g * other, self.value))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            out = a / b
            return _binary(self, other, out,
                           lambda g: (_unbroadcast(g / b, a),
                                      _unbroadcast(-g * out / b, b)))
        return _unary(self, self.value / other,
                      lambda g: _unbroadcast(g / other, self.value))

    def __rtruediv__(self, other):
        a = self.value
        out = other / a
        return _unary(self, out, lambda g: _unbroadcast(-g * out / a, a))

    def __neg__(self):
        return _unary(self, -self.value, lambda g: -g)

    def __pow__(self, p):
        if isinstance(p, Var):
            return exp(p * log(self))
        a = self.value
        return _unary(self, a ** p,
                      lambda g: _unbroadcast(g * p * a ** (p - 1), a))

    def __rpow__(self, base):
        return exp(self * np.log(base))

    def __getitem__(self, key):
        src = self.value

        def vjp(g):
            buf = np.zeros_like(src)
            np.add.at(buf, key, g)
            return buf

        return _unary(self, src[key], vjp)

    @property
    def shape(self):
        return np.shape(self.value)


def _unary(x, value, vjp):
    idx = x.tape.append((x.idx,), vjp)
    return Var.__new__(Var)._init_fast(value, x.tape, idx)


def _binary(a, b, value, vjp):
    if a.tape is not b.tape:
        raise ValueError("operands recorded on different tapes")
    idx = a.tape.append((a.idx, b.idx), vjp)
    return Var.__new__(Var)._init_fast(value, a.tape, idx)


def _init_fast(self, value, tape, idx):
    self.value = value
    self.tape = tape
    self.idx = idx
    return self


Var._init_fast = _init_fast


def node(value, parents, vjp):
    """Custom primitive: `parents` are Vars, `vjp(g)` returns one gradient
    per parent (each shaped like that parent's value, or None)."""
    tape = parents[0].tape
    for p in parents[1:]:
        if p.tape is not tape:
            raise ValueError("operands recorded on different tapes")
    idx = tape.append(tuple(p.idx for p in parents), vjp)
    return Var.__new__(Var)._init_fast(value, tape, idx)


def _unbroadcast(g, target):
    """Sum gradient g down to the shape of `target` after numpy broadcasting."""
    tshape = np.shape(target)
    if np.shape(g) == tshape:
        return g
    if tshape == ():
        return float(np.sum(g))
    g = np.asarray(g)
    while g.ndim > len(tshape):
        g = g.sum(axis=0)
    for ax, n in enumerate(tshape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- generic elementwise functions ------------------------------------------

def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    out = np.exp(x.value)
    return _unary(x, out, lambda g: g * out)


def log(x):
    if not isinstance(x, Var):
        return np.log(x)
    return _unary(x, np.log(x.value), lambda g: g / x.value)


def log1p(x):
    if not isinstance(x, Var):
        return np.log1p(x)
    return _unary(x, np.log1p(x.value), lambda g: g / (1.0 + x.value))


def sqrt(x):
    if not isinstance(x, Var):
        return np.sqrt(x)
    out = np.sqrt(x.value)
    return _unary(x, out, lambda g: g * 0.5 / out)


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(x)
    out = np.tanh(x.value)
    return _unary(x, out, lambda g: g * (1.0 - out * out))


def lgamma(x):
    """Log-gamma; backward pass uses the digamma function."""
    if not isinstance(x, Var):
        return _sp.gammaln(x)
    v = x.value
    return _unary(x, _sp.gammaln(v), lambda g: g * _sp.digamma(v))


def log_sigmoid(x):
    """log(1/(1+exp(-x))), computed without overflow for large |x|."""
    if not isinstance(x, Var):
        return -np.logaddexp(0.0, -x)
    v = x.value
    out = -np.logaddexp(0.0, -v)
    return _unary(x, out, lambda g: g * _sp.expit(-v))


def logaddexp(a, b):
    """Elementwise log(exp(a) + exp(b)), stable."""
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.logaddexp(a, b)
    av = a.value if isinstance(a, Var) else a
    bv = b.value if isinstance(b, Var) else b
    out = np.logaddexp(av, bv)
    wa = np.exp(av - out)
    wb = np.exp(bv - out)
    if isinstance(a, Var) and isinstance(b, Var):
        return _binary(a, b, out, lambda g: (_unbroadcast(g * wa, av),
                                             _unbroadcast(g * wb, bv)))
    if isinstance(a, Var):
        return _unary(a, out, lambda g: _unbroadcast(g * wa, av))
    return _unary(b, out, lambda g: _unbroadcast(g * wb, bv))


# -- reductions --------------------------------------------------------------

def vsum(x):
    """Sum of all elements, as a scalar."""
    if not isinstance(x, Var):
        return float(np.sum(x))
    shape = np.shape(x.value)
    return _unary(x, float(np.sum(x.value)),
                  lambda g: np.full(shape, g) if shape else g)


def logsumexp(x):
    """log(sum(exp(x))) over all elements of a vector, max-shifted."""
    if not isinstance(x, Var):
        m = np.max(x)
        return float(m + np.log(np.sum(np.exp(x - m))))
    v = x.value
    m = np.max(v)
    out = float(m + np.log(np.sum(np.exp(v - m))))
    return _unary(x, out, lambda g: g * np.exp(v - out))


def segment_logsumexp(x, starts):
    """Per-segment log-sum-exp of a vector.

    `starts` marks segment starts (starts[0] == 0); returns one value per
    segment. Fused so each record's branch mixture reduces in one node.
    """
    if not isinstance(x, Var):
        m = np.maximum.reduceat(x, starts)
        return m + np.log(np.add.reduceat(np.exp(x - np.repeat(m, np.diff(np.append(starts, len(x))))), starts))
    v = x.value
    lengths = np.diff(np.append(starts, len(v)))
    m = np.maximum.reduceat(v, starts)
    shifted = np.exp(v - np.repeat(m, lengths))
    sums = np.add.reduceat(shifted, starts)
    out = m + np.log(sums)

    def vjp(g):
        return np.repeat(g, lengths) * np.exp(v - np.repeat(out, lengths))

    return _unary(x, out, vjp)


# -- structural primitives ----------------------------------------------------

def affine(coeffs, coeff_idx, cols, nrows):
    """intercept + sum_j slope_j * col_j, fused into one node.

    coeffs: Var holding the full parameter vector; coeff_idx: indices of
    (intercept, slope_1, ..) within it; cols: regressor columns, each a Var
    vector or a constant ndarray. Gradients flow to `coeffs` and to Var cols.
    """
    coeff_idx = np.asarray(coeff_idx, dtype=np.intp)
    cvals = coeffs.value[coeff_idx]
    out = np.full(nrows, cvals[0])
    col_vals = []
    for j, col in enumerate(cols):
        cv = col.value if isinstance(col, Var) else col
        col_vals.append(cv)
        out = out + cvals[j + 1] * cv

    var_parents = [coeffs] + [c for c in cols if isinstance(c, Var)]

    def vjp(g):
        gc = np.zeros_like(coeffs.value)
        gc[coeff_idx[0]] = np.sum(g)
        for j, cv in enumerate(col_vals):
            gc[coeff_idx[j + 1]] = np.dot(g, cv) if np.ndim(cv) else np.sum(g) * cv
        grads = [gc]
        for j, col in enumerate(cols):
            if isinstance(col, Var):
                grads.append(g * cvals[j + 1])
        return tuple(grads)

    return node(out, tuple(var_parents), vjp)


def scatter_add(base, idx, updates):
    """Copy of `base` with `updates` added at positions `idx`.

    Positions must be unique. Either argument may be a constant.
    """
    bv = base.value if isinstance(base, Var) else base
    uv = updates.value if isinstance(updates, Var) else updates
    out = np.array(bv, dtype=float, copy=True)
    out[idx] += uv
    if isinstance(base, Var) and isinstance(updates, Var):
        return _binary(base, updates, out, lambda g: (g, g[idx]))
    if isinstance(base, Var):
        return _unary(base, out, lambda g: g)
    return _unary(updates, out, lambda g: g[idx])


# -- driver -------------------------------------------------------------------

def gradient(f, x):
    """Evaluate scalar objective f at x (1-d array) and return (value, grad)."""
    x = np.asarray(x, dtype=float)
    xv = Var(x)
    out = f(xv)
    if not isinstance(out, Var):
        return float(out), np.zeros_like(x)
    if np.ndim(out.value) != 0:
        raise ValueError("objective must return a scalar")
    tape = out.tape
    adj = [None] * len(tape.parents)
    adj[out.idx] = 1.0
    for i in range(out.idx, xv.idx, -1):
        g = adj[i]
        if g is None:
            continue
        vjp = tape.vjps[i]
        if vjp is None:
            continue
        parents = tape.parents[i]
        grads = vjp(g)
        if not isinstance(grads, tuple):
            grads = (grads,)
        for p, pg in zip(parents, grads):
            if pg is None:
                continue
            if adj[p] is None:
                adj[p] = pg if np.ndim(pg) == 0 else pg.copy()
            else:
                adj[p] = adj[p] + pg
        adj[i] = None
    g = adj[xv.idx]
    if g is None:
        return float(out.value), np.zeros_like(x)
    return float(out.value), np.asarray(g, dtype=float)


def check_gradient(f, x, h=1e-6):
    """Compare the tape gradient with central finite differences.

    Returns the maximum relative error over components, where the error is
    normalized by max(norm_inf(analytic gradient), 1e-8). Steps are scaled
    per component so large coordinates do not lose precision.
    """
    x = np.asarray(x, dtype=float)
    _, g = gradient(f, x)
    denom = max(float(np.max(np.abs(g))) if g.size else 0.0, 1e-8)
    worst = 0.0
    for i in range(x.size):
        hi = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += hi
        xm[i] -= hi
        fp = f(Var(xp))
        fm = f(Var(xm))
        fp = fp.value if isinstance(fp, Var) else fp
        fm = fm.value if isinstance(fm, Var) else fm
        fd = (float(fp) - float(fm)) / (2.0 * hi)
        worst = max(worst, abs(fd - g[i]) / denom)
    return worst
