"""Float64 array ops with reverse-mode gradients and a finite-difference checker.

Every op accepts plain numpy arrays or `Var` nodes. With plain arrays it just
computes the result (fast path, used for the momentum/key side of training).
With at least one `Var` argument it records the computation so that
`Var.backward()` can fill exact gradients afterwards.

Supported op set: matmul, add, scale, mean_rows, concat, stack_rows, flatten,
relu, l2_normalize, dot, logsumexp, softmax_cross_entropy, sum_all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Row norms below this are treated as collapsed embeddings, not clamped.
EPSILON_NORM = 1e-12


class ShapeMismatchError(ValueError):
    """Operand shapes incompatible for an op. Carries the op name and shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        pretty = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {pretty}")


class DegenerateNormError(ValueError):
    """A row norm fell below EPSILON_NORM during normalization."""


class TapeError(RuntimeError):
    """Misuse of the recorded graph, e.g. backward called twice."""


class Var:
    """A node in the recorded computation graph.

    Wraps a float64 array (treated as immutable). Ops on Vars link nodes into
    a graph; calling backward() on a scalar root fills `.grad` (same shape as
    `.value`) on every node that contributed to it. A graph can be
    differentiated once; rebuild it to differentiate again.
    """

    __slots__ = ("value", "grad", "_parents", "_op", "_done")

    def __init__(self, value, _parents=(), _op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = _parents  # tuple of (Var, vjp callable)
        self._op = _op
        self._done = False

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.size != 1:
            raise TapeError(f"backward requires a scalar root, got shape {self.shape}")
        if self._done:
            raise TapeError("backward already ran on this graph; re-record to differentiate again")
        self._done = True
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in order:
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._parents:
                contrib = vjp(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib

    def __repr__(self):
        return f"Var(op={self._op}, shape={self.shape})"


def _toposort(root):
    """Nodes reachable from root, root first (reverse topological order)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _make(op, out, parents):
    """Return a Var if any parent is tracked, else the plain array."""
    tracked = [(p, vjp) for p, vjp in parents if isinstance(p, Var)]
    if not tracked:
        return out
    return Var(out, _parents=tuple(tracked), _op=op)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def add(a, b):
    """Elementwise sum; also supports (n, m) + (m,) row broadcast for biases."""
    av, bv = _value(a), _value(b)
    if av.shape == bv.shape:
        out = av + bv
        return _make("add", out, ((a, lambda g: g), (b, lambda g: g)))
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        out = av + bv
        return _make("add", out, ((a, lambda g: g), (b, lambda g: g.sum(axis=0))))
    raise ShapeMismatchError("add", av.shape, bv.shape)


def scale(a, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    out = _value(a) * c
    return _make("scale", out, ((a, lambda g: g * c),))


def matmul(a, b):
    """Matrix product for (n,k)@(k,m), (k,)@(k,m) or (n,k)@(k,)."""
    av, bv = _value(a), _value(b)
    if av.ndim == 2 and bv.ndim == 2 and av.shape[1] == bv.shape[0]:
        out = av @ bv
        return _make("matmul", out, ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)))
    if av.ndim == 1 and bv.ndim == 2 and av.shape[0] == bv.shape[0]:
        out = av @ bv
        return _make("matmul", out, ((a, lambda g: bv @ g), (b, lambda g: np.outer(av, g))))
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        out = av @ bv
        return _make("matmul", out, ((a, lambda g: np.outer(g, bv)), (b, lambda g: av.T @ g)))
    raise ShapeMismatchError("matmul", av.shape, bv.shape)


def dot(a, b):
    """Inner product of two equal-length vectors."""
    av, bv = _value(a), _value(b)
    if av.ndim != 1 or bv.ndim != 1 or av.shape != bv.shape:
        raise ShapeMismatchError("dot", av.shape, bv.shape)
    out = np.asarray(av @ bv)
    return _make("dot", out, ((a, lambda g: g * bv), (b, lambda g: g * av)))


def relu(a):
    av = _value(a)
    out = np.maximum(av, 0.0)
    # gradient at exactly 0 is 0
    return _make("relu", out, ((a, lambda g: g * (av > 0.0)),))


def mean_rows(a):
    """Mean across the rows of an (n, m) array -> (m,).

    Columns are summed in sorted order so the result is bit-identical under
    any permutation of the input rows.
    """
    av = _value(a)
    if av.ndim != 2 or av.shape[0] < 1:
        raise ShapeMismatchError("mean_rows", av.shape)
    n = av.shape[0]
    out = np.sort(av, axis=0).sum(axis=0) / n
    return _make("mean_rows", out, ((a, lambda g: np.tile(g / n, (n, 1))),))


def sum_all(a):
    """Sum of all entries -> scalar."""
    av = _value(a)
    out = np.asarray(av.sum())
    return _make("sum_all", out, ((a, lambda g: np.broadcast_to(g, av.shape).copy()),))


def concat(parts):
    """Concatenate vectors (scalars allowed) into one 1-D array."""
    vals = []
    for p in parts:
        v = _value(p)
        if v.ndim > 1:
            raise ShapeMismatchError("concat", v.shape)
        vals.append(np.atleast_1d(v))
    out = np.concatenate(vals) if vals else np.zeros(0)
    parents = []
    offset = 0
    for p, v in zip(parts, vals):
        lo, hi = offset, offset + v.shape[0]
        scalar = _value(p).ndim == 0

        def vjp(g, lo=lo, hi=hi, scalar=scalar):
            piece = g[lo:hi]
            return np.asarray(piece[0]) if scalar else piece

        parents.append((p, vjp))
        offset = hi
    return _make("concat", out, tuple(parents))


def stack_rows(parts):
    """Stack equal-length vectors into an (n, m) array."""
    vals = [_value(p) for p in parts]
    for v in vals:
        if v.ndim != 1 or v.shape != vals[0].shape:
            raise ShapeMismatchError("stack_rows", *[u.shape for u in vals])
    out = np.stack(vals)
    parents = tuple((p, lambda g, i=i: g[i]) for i, p in enumerate(parts))
    return _make("stack_rows", out, parents)


def flatten(a):
    """Row-major flatten of a 2-D array."""
    av = _value(a)
    if av.ndim != 2:
        raise ShapeMismatchError("flatten", av.shape)
    out = av.reshape(-1)
    return _make("flatten", out, ((a, lambda g: g.reshape(av.shape)),))


def l2_normalize(a):
    """Scale each row (or a single vector) to unit Euclidean norm.

    Raises DegenerateNormError when a row norm is below EPSILON_NORM.
    """
    av = _value(a)
    if av.ndim == 1:
        norm = float(np.linalg.norm(av))
        if norm < EPSILON_NORM:
            raise DegenerateNormError(f"l2_normalize: vector norm {norm:.3e} below {EPSILON_NORM:.0e}")
        out = av / norm

        def vjp(g):
            return (g - out * (out @ g)) / norm

        return _make("l2_normalize", out, ((a, vjp),))
    if av.ndim == 2:
        norms = np.linalg.norm(av, axis=1)
        bad = np.flatnonzero(norms < EPSILON_NORM)
        if bad.size:
            raise DegenerateNormError(
                f"l2_normalize: row {bad[0]} norm {norms[bad[0]]:.3e} below {EPSILON_NORM:.0e}"
            )
        out = av / norms[:, None]

        def vjp(g):
            return (g - out * (out * g).sum(axis=1, keepdims=True)) / norms[:, None]

        return _make("l2_normalize", out, ((a, vjp),))
    raise ShapeMismatchError("l2_normalize", av.shape)


def logsumexp(a):
    """Stable log(sum(exp(v))) of a vector -> scalar."""
    av = _value(a)
    if av.ndim != 1 or av.shape[0] < 1:
        raise ShapeMismatchError("logsumexp", av.shape)
    m = av.max()
    expd = np.exp(av - m)
    total = expd.sum()
    out = np.asarray(m + np.log(total))
    soft = expd / total
    return _make("logsumexp", out, ((a, lambda g: g * soft),))


def softmax_cross_entropy(logits, label):
    """Cross-entropy of softmax(logits) against an integer class label."""
    lv = _value(logits)
    if lv.ndim != 1:
        raise ShapeMismatchError("softmax_cross_entropy", lv.shape)
    label = int(label)
    if not 0 <= label < lv.shape[0]:
        raise ValueError(f"softmax_cross_entropy: label {label} out of range for {lv.shape[0]} classes")
    m = lv.max()
    expd = np.exp(lv - m)
    total = expd.sum()
    out = np.asarray(m + np.log(total) - lv[label])
    soft = expd / total

    def vjp(g):
        grad = soft.copy()
        grad[label] -= 1.0
        return g * grad

    return _make("softmax_cross_entropy", out, ((logits, vjp),))


# ---------------------------------------------------------------------------
# forward/backward driver and the finite-difference checker
# ---------------------------------------------------------------------------


def forward_backward(f, inputs):
    """Evaluate a scalar-valued composite of the supported ops and its gradients.

    Returns (value, grads) where grads[i] has the shape of inputs[i]. Inputs
    the function never touches get zero gradients.
    """
    tracked = [Var(np.asarray(x, dtype=np.float64)) for x in inputs]
    out = f(*tracked)
    if not isinstance(out, Var):
        raise TapeError("function did not produce a tracked result; did it touch any input?")
    if out.value.size != 1:
        raise TapeError(f"function must be scalar-valued, got shape {out.shape}")
    value = float(out.value)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite forward value {value}")
    out.backward()
    grads = [v.grad if v.grad is not None else np.zeros_like(v.value) for v in tracked]
    return value, grads


@dataclass
class GradCheckReport:
    per_input_max: list
    max_rel_error: float
    tol: float
    checked: int
    resampled: int

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.0e} " \
               f"coords={self.checked} resampled={self.resampled}"


def _eval_plain(f, arrays):
    out = f(*arrays)
    return float(out.value if isinstance(out, Var) else out)


def _relu_preactivations(f, arrays):
    """ReLU input arrays of one forward pass, in graph construction order."""
    out = f(*[Var(x) for x in arrays])
    if not isinstance(out, Var):
        return []
    pres = []
    for node in _toposort(out):
        if node._op == "relu":
            pres.append(node._parents[0][0].value)
    return pres


def _kink_suspected(f, arrays, i, j, step):
    """True when perturbing coordinate (i, j) by +-step flips a ReLU sign."""
    plus = [x.copy() for x in arrays]
    minus = [x.copy() for x in arrays]
    plus[i].flat[j] += step
    minus[i].flat[j] -= step
    for pre_p, pre_m in zip(_relu_preactivations(f, plus), _relu_preactivations(f, minus)):
        if np.any((pre_p > 0.0) != (pre_m > 0.0)):
            return True
    return False


def grad_check(f, inputs, step, tol, max_coords_per_input=None, rng=None):
    """Compare analytic gradients of f against central finite differences.

    Relative error per coordinate is |analytic - fd| / max(1, |analytic|, |fd|);
    the report carries the per-input and overall maxima. Coordinates whose
    disagreement comes from a ReLU kink within `step` of zero pre-activation
    are not judged there: the coordinate is re-sampled and checked again.
    When max_coords_per_input is set, that many coordinates per input are
    drawn at random instead of sweeping all of them.
    """
    if step <= 0 or tol <= 0:
        raise ValueError("grad_check: step and tol must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    xs = [np.array(x, dtype=np.float64) for x in inputs]
    _, grads = forward_backward(f, xs)

    per_input_max = [0.0] * len(xs)
    checked = 0
    resampled = 0
    for i, x in enumerate(xs):
        size = x.size
        if size == 0:
            continue
        if max_coords_per_input is not None and max_coords_per_input < size:
            coords = rng.choice(size, size=max_coords_per_input, replace=False)
        else:
            coords = range(size)
        for j in coords:
            attempts = 0
            while True:
                plus = x.copy()
                minus = x.copy()
                plus.flat[j] += step
                minus.flat[j] -= step
                f_plus = _eval_plain(f, xs[:i] + [plus] + xs[i + 1:])
                f_minus = _eval_plain(f, xs[:i] + [minus] + xs[i + 1:])
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise FloatingPointError(
                        f"grad_check: non-finite value at input {i} coordinate {j}"
                    )
                fd = (f_plus - f_minus) / (2.0 * step)
                analytic = float(grads[i].flat[j])
                rel = abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))
                if rel < tol or attempts >= 5:
                    per_input_max[i] = max(per_input_max[i], rel)
                    checked += 1
                    break
                if not _kink_suspected(f, xs, i, j, step):
                    per_input_max[i] = max(per_input_max[i], rel)
                    checked += 1
                    break
                # FD straddles a ReLU kink: move this coordinate off it and retry
                x.flat[j] += float(rng.choice([-1.0, 1.0]) * rng.uniform(0.02, 0.1))
                _, grads = forward_backward(f, xs)
                resampled += 1
                attempts += 1
    return GradCheckReport(
        per_input_max=per_input_max,
        max_rel_error=max(per_input_max) if per_input_max else 0.0,
        tol=tol,
        checked=checked,
        resampled=resampled,
    )
