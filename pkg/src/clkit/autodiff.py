"""Reverse-mode automatic differentiation for scalar objectives on flat parameter vectors.

Objectives are plain Python callables that take a single 1-D parameter
array and build their result out of the operations in this module
(``matmul``, ``exp``, ``log``, ``sum`` and friends, plus the operators
overloaded on :class:`Tensor`).  Called with a raw numpy array they just
compute; called with a :class:`Tensor` they record a tape, and
:func:`value_and_grad` replays the tape backwards for an exact gradient.

Second derivatives use forward-over-reverse: every primal value can carry
a block of directional tangents (:class:`Dual`), and both the forward and
the backward pass propagate them.  The tangent of the gradient in
direction ``e_i`` is then the i-th column of the Jacobian of the gradient,
i.e. the i-th Hessian column, exact to floating point.  Directions are
processed in blocks so one extra pass yields many columns at once.

All arithmetic is float64.  Evaluation is pure: tapes are rebuilt per
call and never shared, so objectives can be evaluated concurrently.
"""

import numpy as np

__all__ = [
    "EvaluationError",
    "Tensor",
    "value_and_grad",
    "grad",
    "hessian",
    "accumulate_hessian_over_batches",
    "exp",
    "log",
    "log1p",
    "sigmoid",
    "where",
    "absolute",
    "sum",
    "reshape",
    "transpose",
    "slice1d",
    "take_per_row",
    "detach",
]

_builtin_sum = sum


class EvaluationError(RuntimeError):
    """An objective produced a non-finite value, gradient, or Hessian entry."""


# ---------------------------------------------------------------------------
# dual numbers with a trailing block of tangent directions
# ---------------------------------------------------------------------------


class Dual:
    """Primal array plus tangents; ``t.shape == p.shape + (n_directions,)``."""

    __slots__ = ("p", "t")

    def __init__(self, p, t):
        p = np.asarray(p, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if t.shape != p.shape + t.shape[-1:]:
            t = np.broadcast_to(t, p.shape + t.shape[-1:])
        self.p = p
        self.t = t


def _p(x):
    """Primal part of a raw value."""
    return x.p if isinstance(x, Dual) else x


def _t(x):
    """Tangent part of a raw value, or None for constants."""
    return x.t if isinstance(x, Dual) else None


def _join(p, t):
    p = np.asarray(p, dtype=np.float64)
    return p if t is None else Dual(p, t)


def _axes_all(p):
    return tuple(range(np.ndim(p)))


# Raw-value operations.  Each works on ndarray or Dual operands and is used
# by both tape construction and the backward rules, which keeps the
# backward pass itself differentiable in the tangent directions.


def _v_add(a, b):
    pa, pb, ta, tb = _p(a), _p(b), _t(a), _t(b)
    p = pa + pb
    if ta is None and tb is None:
        return np.asarray(p, dtype=np.float64)
    if ta is None:
        t = np.broadcast_to(tb, np.shape(p) + tb.shape[-1:])
    elif tb is None:
        t = np.broadcast_to(ta, np.shape(p) + ta.shape[-1:])
    else:
        t = ta + tb
    return _join(p, t)


def _v_neg(a):
    pa, ta = _p(a), _t(a)
    return _join(-pa, None if ta is None else -ta)


def _v_sub(a, b):
    return _v_add(a, _v_neg(b))


def _v_mul(a, b):
    pa, pb, ta, tb = _p(a), _p(b), _t(a), _t(b)
    p = pa * pb
    if ta is None and tb is None:
        return np.asarray(p, dtype=np.float64)
    t = None
    if ta is not None:
        t = ta * np.asarray(pb, dtype=np.float64)[..., None]
    if tb is not None:
        term = np.asarray(pa, dtype=np.float64)[..., None] * tb
        t = term if t is None else t + term
    return _join(p, np.broadcast_to(t, np.shape(p) + t.shape[-1:]))


def _v_matmul(a, b):
    # restricted to 2-D operands; objectives keep data and weights 2-D
    pa, pb, ta, tb = _p(a), _p(b), _t(a), _t(b)
    p = pa @ pb
    if ta is None and tb is None:
        return np.asarray(p, dtype=np.float64)
    t = None
    if ta is not None:
        t = np.einsum("ijd,jk->ikd", ta, pb)
    if tb is not None:
        term = np.einsum("ij,jkd->ikd", pa, tb)
        t = term if t is None else t + term
    return _join(p, t)


def _v_transpose(a):
    pa, ta = _p(a), _t(a)
    return _join(pa.T, None if ta is None else np.swapaxes(ta, 0, 1))


def _v_reshape(a, shape):
    pa, ta = _p(a), _t(a)
    p = np.reshape(pa, shape)
    if ta is None:
        return p
    return _join(p, np.reshape(np.ascontiguousarray(ta), p.shape + ta.shape[-1:]))


def _v_sum(a, axis=None, keepdims=False):
    pa, ta = _p(a), _t(a)
    if axis is None:
        ax = _axes_all(pa)
    else:
        # tangents carry a trailing direction axis, so axes must be
        # resolved against the primal before they are reused
        ax = axis + np.ndim(pa) if axis < 0 else axis
    p = np.sum(pa, axis=ax, keepdims=keepdims)
    if ta is None:
        return np.asarray(p, dtype=np.float64)
    return _join(p, np.sum(ta, axis=ax, keepdims=keepdims))


def _v_unbroadcast(g, shape):
    """Reduce a cotangent back to the shape of the operand it belongs to."""
    lead = np.ndim(_p(g)) - len(shape)
    for _ in range(lead):
        g = _v_sum(g, axis=0)
    for i, s in enumerate(shape):
        if s == 1 and np.shape(_p(g))[i] != 1:
            g = _v_sum(g, axis=i, keepdims=True)
    return g


def _unary(fn, dfn):
    def op(a):
        pa, ta = _p(a), _t(a)
        p = fn(pa)
        if ta is None:
            return np.asarray(p, dtype=np.float64)
        return _join(p, np.asarray(dfn(pa), dtype=np.float64)[..., None] * ta)

    return op


def _stable_sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_v_exp = _unary(np.exp, np.exp)
_v_log = _unary(np.log, lambda x: 1.0 / x)
_v_log1p = _unary(np.log1p, lambda x: 1.0 / (1.0 + x))
_v_recip = _unary(lambda x: 1.0 / x, lambda x: -1.0 / (x * x))
_v_sigmoid = _unary(_stable_sigmoid, lambda x: _stable_sigmoid(x) * (1.0 - _stable_sigmoid(x)))


def _v_abs(a):
    pa, ta = _p(a), _t(a)
    s = np.sign(pa)
    return _join(np.abs(pa), None if ta is None else s[..., None] * ta)


def _v_where(mask, a, b):
    pa, pb, ta, tb = _p(a), _p(b), _t(a), _t(b)
    p = np.where(mask, pa, pb)
    if ta is None and tb is None:
        return np.asarray(p, dtype=np.float64)
    nd = ta.shape[-1] if ta is not None else tb.shape[-1]
    za = np.zeros(np.shape(p) + (nd,)) if ta is None else np.broadcast_to(ta, np.shape(p) + (nd,))
    zb = np.zeros(np.shape(p) + (nd,)) if tb is None else np.broadcast_to(tb, np.shape(p) + (nd,))
    return _join(p, np.where(np.asarray(mask)[..., None], za, zb))


def _v_slice1d(a, start, stop):
    pa, ta = _p(a), _t(a)
    return _join(pa[start:stop], None if ta is None else ta[start:stop])


def _v_embed1d(g, n, start, stop):
    pg, tg = _p(g), _t(g)
    p = np.zeros(n)
    p[start:stop] = pg
    if tg is None:
        return p
    t = np.zeros((n, tg.shape[-1]))
    t[start:stop] = tg
    return _join(p, t)


def _v_take_per_row(a, cols):
    pa, ta = _p(a), _t(a)
    rows = np.arange(pa.shape[0])
    return _join(pa[rows, cols], None if ta is None else ta[rows, cols, :])


def _v_scatter_per_row(g, shape, cols):
    pg, tg = _p(g), _t(g)
    rows = np.arange(shape[0])
    p = np.zeros(shape)
    p[rows, cols] = pg
    if tg is None:
        return p
    t = np.zeros(shape + (tg.shape[-1],))
    t[rows, cols, :] = tg
    return _join(p, t)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Tensor:
    """A node on the tape; ``value`` is an ndarray or a Dual."""

    __slots__ = ("value", "_parents", "_vjps")

    # make numpy defer to the reflected operators instead of broadcasting
    # over this object
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value, parents=(), vjps=()):
        if not parents:
            value = np.asarray(value, dtype=np.float64) if not isinstance(value, Dual) else value
        self.value = value
        self._parents = parents
        self._vjps = vjps

    @property
    def data(self):
        """Detached primal value."""
        return _p(self.value)

    @property
    def shape(self):
        return np.shape(_p(self.value))

    # operator sugar; every overload routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a traced value is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, k):
        if k != 2:
            raise TypeError("only squaring is supported")
        return mul(self, self)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _raw(x):
    return x.value if isinstance(x, Tensor) else x


def _traced(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def detach(x):
    """Primal ndarray of a value, outside the tape."""
    return _p(_raw(x))


def _node(value, parents, vjps):
    keep_p, keep_v = [], []
    for par, vjp in zip(parents, vjps):
        if isinstance(par, Tensor):
            keep_p.append(par)
            keep_v.append(vjp)
    return Tensor(value, tuple(keep_p), tuple(keep_v))


def add(a, b):
    if not _traced(a, b):
        return _v_add(a, b)
    ra, rb = _raw(a), _raw(b)
    sa, sb = np.shape(_p(ra)), np.shape(_p(rb))
    return _node(
        _v_add(ra, rb),
        (a, b),
        (lambda g: _v_unbroadcast(g, sa), lambda g: _v_unbroadcast(g, sb)),
    )


def neg(a):
    if not _traced(a):
        return _v_neg(a)
    return _node(_v_neg(_raw(a)), (a,), (_v_neg,))


def mul(a, b):
    if not _traced(a, b):
        return _v_mul(a, b)
    ra, rb = _raw(a), _raw(b)
    sa, sb = np.shape(_p(ra)), np.shape(_p(rb))
    return _node(
        _v_mul(ra, rb),
        (a, b),
        (
            lambda g: _v_unbroadcast(_v_mul(g, rb), sa),
            lambda g: _v_unbroadcast(_v_mul(g, ra), sb),
        ),
    )


def matmul(a, b):
    if not _traced(a, b):
        return _v_matmul(a, b)
    ra, rb = _raw(a), _raw(b)
    return _node(
        _v_matmul(ra, rb),
        (a, b),
        (
            lambda g: _v_matmul(g, _v_transpose(rb)),
            lambda g: _v_matmul(_v_transpose(ra), g),
        ),
    )


def transpose(a):
    if not _traced(a):
        return _v_transpose(a)
    return _node(_v_transpose(_raw(a)), (a,), (_v_transpose,))


def reshape(a, shape):
    if not _traced(a):
        return _v_reshape(a, shape)
    ra = _raw(a)
    orig = np.shape(_p(ra))
    return _node(_v_reshape(ra, shape), (a,), (lambda g: _v_reshape(g, orig),))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    if not _traced(a):
        return _v_sum(a, axis=axis, keepdims=keepdims)
    ra = _raw(a)
    orig = np.shape(_p(ra))

    def vjp(g):
        if axis is None:
            return _v_mul(g, np.ones(orig))
        gk = g if keepdims else _expand_axis(g, axis)
        return _v_mul(gk, np.ones(orig))

    return _node(_v_sum(ra, axis=axis, keepdims=keepdims), (a,), (vjp,))


def _expand_axis(g, axis):
    pg, tg = _p(g), _t(g)
    p = np.expand_dims(pg, axis)
    return _join(p, None if tg is None else np.expand_dims(tg, axis))


def exp(a):
    if not _traced(a):
        return _v_exp(a)
    out = _v_exp(_raw(a))
    return _node(out, (a,), (lambda g: _v_mul(g, out),))


def log(a):
    if not _traced(a):
        return _v_log(a)
    ra = _raw(a)
    return _node(_v_log(ra), (a,), (lambda g: _v_mul(g, _v_recip(ra)),))


def log1p(a):
    if not _traced(a):
        return _v_log1p(a)
    ra = _raw(a)
    return _node(_v_log1p(ra), (a,), (lambda g: _v_mul(g, _v_recip(_v_add(ra, 1.0))),))


def sigmoid(a):
    if not _traced(a):
        return _v_sigmoid(a)
    out = _v_sigmoid(_raw(a))
    return _node(out, (a,), (lambda g: _v_mul(g, _v_mul(out, _v_sub(1.0, out))),))


def absolute(a):
    if not _traced(a):
        return _v_abs(a)
    ra = _raw(a)
    s = np.sign(_p(ra))
    return _node(_v_abs(ra), (a,), (lambda g: _v_mul(g, s),))


def where(mask, a, b):
    """Select by a boolean constant mask; gradients flow through both branches."""
    mask = np.asarray(mask, dtype=bool)
    if not _traced(a, b):
        return _v_where(mask, a, b)
    ra, rb = _raw(a), _raw(b)
    sa, sb = np.shape(_p(ra)), np.shape(_p(rb))
    zero = np.zeros(np.shape(mask)) if np.shape(mask) else 0.0
    return _node(
        _v_where(mask, ra, rb),
        (a, b),
        (
            lambda g: _v_unbroadcast(_v_where(mask, g, zero), sa),
            lambda g: _v_unbroadcast(_v_where(mask, zero, g), sb),
        ),
    )


def slice1d(a, start, stop):
    if not _traced(a):
        return _v_slice1d(a, start, stop)
    ra = _raw(a)
    n = np.shape(_p(ra))[0]
    return _node(_v_slice1d(ra, start, stop), (a,), (lambda g: _v_embed1d(g, n, start, stop),))


def take_per_row(a, cols):
    """Pick ``a[i, cols[i]]`` for every row i; used for label lookup."""
    cols = np.asarray(cols, dtype=np.int64)
    if not _traced(a):
        return _v_take_per_row(a, cols)
    ra = _raw(a)
    shape = np.shape(_p(ra))
    return _node(
        _v_take_per_row(ra, cols), (a,), (lambda g: _v_scatter_per_row(g, shape, cols),)
    )


# ---------------------------------------------------------------------------
# backward pass and derivative drivers
# ---------------------------------------------------------------------------


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for par in node._parents:
            if id(par) not in seen:
                stack.append((par, False))
    return order


def _backward(root, leaf, seed=1.0):
    cot = {id(root): seed}
    for node in reversed(_topo_order(root)):
        g = cot.pop(id(node), None)
        if g is None:
            continue
        if node is leaf:
            cot[id(leaf)] = g
            continue
        for par, vjp in zip(node._parents, node._vjps):
            contrib = vjp(g)
            prev = cot.get(id(par))
            cot[id(par)] = contrib if prev is None else _v_add(prev, contrib)
    return cot.get(id(leaf))


def _objective_name(f):
    return getattr(f, "name", None) or getattr(f, "__name__", None) or type(f).__name__


def _eval_with_grad(f, theta_value):
    """Run f on a fresh leaf and return (raw value, raw gradient)."""
    leaf = Tensor(theta_value)
    out = f(leaf)
    if not isinstance(out, Tensor):
        # objective did not depend on theta; gradient is identically zero
        d = np.shape(_p(theta_value))[0]
        return _raw(out), np.zeros(d)
    if np.shape(_p(out.value)) != ():
        raise EvaluationError(
            f"objective '{_objective_name(f)}' must return a scalar, got shape {np.shape(_p(out.value))}"
        )
    g = _backward(out, leaf)
    if g is None:
        d = np.shape(_p(theta_value))[0]
        g = np.zeros(d)
    return out.value, g


def value_and_grad(f, theta):
    """Exact value and reverse-mode gradient of a scalar objective at theta."""
    theta = np.asarray(theta, dtype=np.float64)
    val, g = _eval_with_grad(f, theta)
    val = float(_p(val))
    g = _p(g)
    if not np.isfinite(val):
        raise EvaluationError(f"objective '{_objective_name(f)}' produced a non-finite value")
    if not np.isfinite(g).all():
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise EvaluationError(
            f"objective '{_objective_name(f)}' produced a non-finite gradient entry at index {bad}"
        )
    return val, g


def grad(f, theta):
    return value_and_grad(f, theta)[1]


def hessian(f, theta, block_size=64):
    """Exact Hessian as the Jacobian of the gradient, symmetrized.

    One forward-over-reverse pass per block of coordinate directions; the
    raw result is checked for symmetry up to round-off and then averaged
    with its transpose.
    """
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[0]
    eye = np.eye(d)
    H = np.empty((d, d))
    for start in range(0, d, block_size):
        stop = min(start + block_size, d)
        dual = Dual(theta, eye[:, start:stop])
        _, g = _eval_with_grad(f, dual)
        tg = _t(g)
        if tg is None:
            tg = np.zeros((d, stop - start))
        H[:, start:stop] = tg
    if not np.isfinite(H).all():
        raise EvaluationError(
            f"objective '{_objective_name(f)}' produced non-finite Hessian entries"
        )
    scale = max(1.0, float(np.max(np.abs(H))))
    asym = float(np.max(np.abs(H - H.T)))
    if asym > 1e-8 * scale:
        raise EvaluationError(
            f"Hessian of '{_objective_name(f)}' is asymmetric beyond round-off ({asym:.3e})"
        )
    return 0.5 * (H + H.T)


def accumulate_hessian_over_batches(f_batches, theta, block_size=64):
    """Sum of per-batch Hessians; equals the Hessian of the summed objective."""
    f_batches = list(f_batches)
    if not f_batches:
        raise ValueError("accumulate_hessian_over_batches requires at least one batch objective")
    theta = np.asarray(theta, dtype=np.float64)
    total = np.zeros((theta.shape[0], theta.shape[0]))
    for f in f_batches:
        total += hessian(f, theta, block_size=block_size)
    return total
