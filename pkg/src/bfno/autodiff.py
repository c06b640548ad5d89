"""Reverse-mode autodiff over a closed set of array primitives.

Forward execution is eager: every primitive computes its numpy value
immediately and appends a node to the tape. ``backward`` walks the node list
in reverse creation order (a valid topological order) and accumulates
vector-Jacobian products into the leaves.

Complex intermediates (spectra) are single ``complex128`` nodes whose
cotangent convention is ``g = dL/dRe + 1j * dL/dIm``; all *leaf* parameters
are real arrays, so finite differences apply to every parameter coordinate.
"""
from __future__ import annotations

import numpy as np

from . import spectral


class Node:
    __slots__ = ("value", "tape", "parents", "vjp", "grad", "is_leaf")

    def __init__(self, value, tape, parents=(), vjp=None, is_leaf=False):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.is_leaf = is_leaf

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar so ODE steppers can treat nodes like arrays
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, c):
        if isinstance(c, Node):
            return mul(self, c)
        return scale(self, float(c))

    __rmul__ = __mul__


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self, recording: bool = True):
        self.recording = recording
        self.nodes: list[Node] = []

    def leaf(self, value) -> Node:
        node = Node(np.asarray(value), self, is_leaf=True)
        if self.recording:
            self.nodes.append(node)
        return node

    def emit(self, value, parents, vjp) -> Node:
        if self.recording:
            node = Node(value, self, tuple(parents), vjp)
            self.nodes.append(node)
        else:
            node = Node(value, self)
        return node

    def release(self):
        """Drop the recorded graph so refcounting can free it immediately.

        Node and tape reference each other; without this the multi-hundred-MB
        graphs of batched solves linger until the cyclic collector runs.
        """
        for node in self.nodes:
            node.parents = ()
            node.vjp = None
            if not node.is_leaf:
                node.grad = None
        self.nodes.clear()

    def backward(self, output: Node, cotangent=None):
        """Accumulate gradients of a scalar output (or explicit cotangent)."""
        if not self.recording:
            raise RuntimeError("cannot run backward on a non-recording tape")
        if cotangent is None:
            if output.value.size != 1:
                raise ValueError("backward needs a scalar output or an explicit cotangent")
            cotangent = np.ones_like(output.value)
        else:
            cotangent = np.asarray(cotangent)
            if cotangent.shape != output.value.shape:
                raise ValueError(
                    f"cotangent shape {cotangent.shape} does not match output {output.value.shape}"
                )
        output.grad = cotangent
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            for parent, g in zip(node.parents, node.vjp(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            if not node.is_leaf:
                node.grad = None  # free interior cotangents as we go


def _same_tape(*nodes) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("inputs live on different tapes")
    return tape


def _check_shapes(op, a, b):
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


# ------------------------------------------------------------ elementwise


def add(a: Node, b: Node) -> Node:
    _check_shapes("add", a, b)
    tape = _same_tape(a, b)
    return tape.emit(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _check_shapes("sub", a, b)
    tape = _same_tape(a, b)
    return tape.emit(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _check_shapes("mul", a, b)
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    return tape.emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Node, c: float) -> Node:
    return a.tape.emit(a.value * c, (a,), lambda g: (g * c,))


def relu(a: Node) -> Node:
    out = np.maximum(a.value, 0.0)
    return a.tape.emit(out, (a,), lambda g: (g * (out > 0.0),))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.tape.emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a: Node) -> Node:
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return a.tape.emit(out, (a,), lambda g: (g * (1.0 - np.exp(-out)),))


_ACT_FORWARD = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "softplus": lambda x: np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))),
    "identity": lambda x: x,
}

_ACT_DERIV_FROM_OUT = {
    # derivative at 0 for relu is taken as 0 (strict > in the mask)
    "relu": lambda y: (y > 0.0).astype(np.float64),
    "tanh": lambda y: 1.0 - y * y,
    "softplus": lambda y: 1.0 - np.exp(-y),
    "identity": lambda y: 1.0,
}

# fault-injection hook: scales activation VJPs so gradient checkers can be
# shown to catch a wrong rule; never set outside tests / gradcheck
_VJP_FAULT_SCALE = 1.0


def set_vjp_fault(scale: float):
    global _VJP_FAULT_SCALE
    _VJP_FAULT_SCALE = float(scale)


def act_add(a: Node, b: Node, kind: str) -> Node:
    """activation(a + b), fused so the pre-activation sum is never retained."""
    _check_shapes("act_add", a, b)
    tape = _same_tape(a, b)
    out = _ACT_FORWARD[kind](a.value + b.value)
    deriv = _ACT_DERIV_FROM_OUT[kind]

    def vjp(g):
        gx = g * deriv(out)
        if _VJP_FAULT_SCALE != 1.0:
            gx = gx * _VJP_FAULT_SCALE
        return gx, gx

    return tape.emit(out, (a, b), vjp)


def activation(a: Node, kind: str) -> Node:
    out = _ACT_FORWARD[kind](a.value)
    deriv = _ACT_DERIV_FROM_OUT[kind]

    def vjp(g):
        gx = g * deriv(out)
        if _VJP_FAULT_SCALE != 1.0:
            gx = gx * _VJP_FAULT_SCALE
        return (gx,)

    return a.tape.emit(out, (a,), vjp)


# ------------------------------------------------------------ linear maps


def channel_map(x: Node, w: Node) -> Node:
    """Pointwise channel mixing: (B, Ci, H, W) x (Co, Ci) -> (B, Co, H, W)."""
    b, ci, h, wd = x.value.shape
    if w.value.shape[1] != ci:
        raise ValueError(f"channel_map: weight expects {w.value.shape[1]} channels, got {ci}")
    tape = _same_tape(x, w)
    xr = x.value.reshape(b, ci, h * wd)
    out = np.matmul(w.value, xr).reshape(b, -1, h, wd)

    def vjp(g):
        gr = g.reshape(b, -1, h * wd)
        gx = np.matmul(w.value.T, gr).reshape(b, ci, h, wd)
        gw = np.matmul(gr, xr.transpose(0, 2, 1)).sum(axis=0)
        return gx, gw

    return tape.emit(out, (x, w), vjp)


def bias_channel(x: Node, bias: Node) -> Node:
    """Add a per-channel bias to (B, C, H, W)."""
    tape = _same_tape(x, bias)
    out = x.value + bias.value[None, :, None, None]
    return tape.emit(out, (x, bias), lambda g: (g, g.sum(axis=(0, 2, 3))))


def affine(x: Node, w: Node, bias: Node) -> Node:
    """Dense layer: (B, D) x (K, D) + (K,) -> (B, K)."""
    tape = _same_tape(x, w, bias)
    out = x.value @ w.value.T + bias.value

    def vjp(g):
        return g @ w.value, g.T @ x.value, g.sum(axis=0)

    return tape.emit(out, (x, w, bias), vjp)


def conv3x3(x: Node, w: Node) -> Node:
    """3x3 convolution with zero padding, stride 1: weights (Co, Ci, 3, 3)."""
    b, ci, h, wd = x.value.shape
    co = w.value.shape[0]
    if w.value.shape[1:] != (ci, 3, 3):
        raise ValueError(f"conv3x3: weight shape {w.value.shape} does not match {ci} input channels")
    tape = _same_tape(x, w)
    xp = np.zeros((b, ci, h + 2, wd + 2))
    xp[:, :, 1:-1, 1:-1] = x.value
    stack = np.empty((b, ci, 9, h, wd))
    for dy in range(3):
        for dx in range(3):
            stack[:, :, dy * 3 + dx] = xp[:, :, dy : dy + h, dx : dx + wd]
    wr = w.value.reshape(co, ci * 9)
    out = np.matmul(wr, stack.reshape(b, ci * 9, h * wd)).reshape(b, co, h, wd)

    def vjp(g):
        gr = g.reshape(b, co, h * wd)
        gw = np.matmul(gr, stack.reshape(b, ci * 9, h * wd).transpose(0, 2, 1)).sum(axis=0)
        gstack = np.matmul(wr.T, gr).reshape(b, ci, 9, h, wd)
        gxp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                gxp[:, :, dy : dy + h, dx : dx + wd] += gstack[:, :, dy * 3 + dx]
        return gxp[:, :, 1:-1, 1:-1], gw.reshape(co, ci, 3, 3)

    return tape.emit(out, (x, w), vjp)


# ------------------------------------------------------------ shape plumbing


def pad_spatial(x: Node, height: int, width: int) -> Node:
    """Zero-pad the trailing two axes up to (height, width)."""
    b, c, h, w = x.value.shape
    if (h, w) == (height, width):
        return x.tape.emit(x.value.copy(), (x,), lambda g: (g,))
    out = np.zeros((b, c, height, width))
    out[:, :, :h, :w] = x.value
    return x.tape.emit(out, (x,), lambda g: (g[:, :, :h, :w],))


def crop_spatial(x: Node, height: int, width: int) -> Node:
    b, c, h, w = x.value.shape
    if (h, w) == (height, width):
        return x.tape.emit(x.value.copy(), (x,), lambda g: (g,))

    def vjp(g):
        gx = np.zeros((b, c, h, w))
        gx[:, :, :height, :width] = g
        return (gx,)

    return x.tape.emit(x.value[:, :, :height, :width].copy(), (x,), vjp)


def concat_time(x: Node, t: float) -> Node:
    """Append one constant channel filled with t."""
    b, c, h, w = x.value.shape
    out = np.concatenate([x.value, np.full((b, 1, h, w), float(t))], axis=1)
    return x.tape.emit(out, (x,), lambda g: (g[:, :c],))


def flatten_spatial(x: Node) -> Node:
    b = x.value.shape[0]
    shape = x.value.shape
    return x.tape.emit(
        x.value.reshape(b, -1), (x,), lambda g: (g.reshape(shape),)
    )


# ------------------------------------------------------------ spectral ops


def rfft2(x: Node) -> Node:
    """Real 2-D forward transform of (B, C, H, W) -> complex (B, C, H, W//2+1)."""
    _, _, h, w = x.value.shape
    out = spectral.rfft_2d(x.value)
    return x.tape.emit(out, (x,), lambda g: (spectral.vjp_rfft_2d(g, h, w),))


def irfft2(s: Node, height: int, width: int) -> Node:
    out = spectral.irfft_2d(s.value, height, width)
    return s.tape.emit(
        out, (s,), lambda g: (spectral.vjp_irfft_2d(g, height, width),)
    )


def combine_branch_kernels(kr: Node, ki: Node, agg: Node) -> Node:
    """Aggregate L spectral kernels into one complex kernel per channel.

    kr, ki: (L, C, H, Wb) real pairs; agg: (C, L) real mixing weights.
    Returns complex (C, H, Wb): out[c] = sum_l agg[c, l] * (kr[l, c] + i ki[l, c]).
    Kernels with a singleton channel axis are shared across all C channels.
    """
    tape = _same_tape(kr, ki, agg)
    av = agg.value
    shared = kr.value.shape[1] == 1 and av.shape[0] != 1
    if av.shape[1] != kr.value.shape[0]:
        raise ValueError(
            f"combine_branch_kernels: {av.shape[1]} mix columns vs {kr.value.shape[0]} kernels"
        )
    if shared:
        re = np.einsum("cl,lhw->chw", av, kr.value[:, 0])
        im = np.einsum("cl,lhw->chw", av, ki.value[:, 0])
    else:
        re = np.einsum("cl,lchw->chw", av, kr.value)
        im = np.einsum("cl,lchw->chw", av, ki.value)

    def vjp(g):
        gr, gi = np.ascontiguousarray(g.real), np.ascontiguousarray(g.imag)
        if shared:
            gkr = np.einsum("cl,chw->lhw", av, gr)[:, None]
            gki = np.einsum("cl,chw->lhw", av, gi)[:, None]
            gagg = np.einsum("chw,lhw->cl", gr, kr.value[:, 0]) + np.einsum(
                "chw,lhw->cl", gi, ki.value[:, 0]
            )
        else:
            gkr = np.einsum("cl,chw->lchw", av, gr)
            gki = np.einsum("cl,chw->lchw", av, gi)
            gagg = np.einsum("chw,lchw->cl", gr, kr.value) + np.einsum(
                "chw,lchw->cl", gi, ki.value
            )
        return gkr, gki, gagg

    return tape.emit(re + 1j * im, (kr, ki, agg), vjp)


def spectral_filter(spec: Node, kernel: Node) -> Node:
    """Per-channel spectral multiply with Hermitian projection of the result.

    spec: complex (B, C, H, Wb); kernel: complex (C, H, Wb). The
    self-conjugate columns of the product are symmetrized so the filtered
    spectrum always describes a real field.
    """
    if spec.value.shape[1:] != kernel.value.shape:
        raise ValueError(
            f"spectral_filter: kernel shape {kernel.value.shape} does not match "
            f"spectrum {spec.value.shape[1:]}"
        )
    tape = _same_tape(spec, kernel)
    sv, kv = spec.value, kernel.value
    out = spectral.hermitianize_special_columns(sv * kv, inplace=True)

    def vjp(g):
        # the projection is self-adjoint and touches only the two
        # self-conjugate columns, so fix those columns rather than copy g
        c0, cn = spectral.hermitian_project_columns(g[..., 0], g[..., -1])
        gs = g * np.conj(kv)
        gs[..., 0] = c0 * np.conj(kv[..., 0])
        gs[..., -1] = cn * np.conj(kv[..., -1])
        gk = g * np.conj(sv)
        gk[..., 0] = c0 * np.conj(sv[..., 0])
        gk[..., -1] = cn * np.conj(sv[..., -1])
        gk = gk.sum(axis=0)
        # anti-Hermitian kernel directions in those columns are inert; keep
        # their gradient exactly zero instead of roundoff
        gk[..., 0], gk[..., -1] = spectral.hermitian_project_columns(
            gk[..., 0], gk[..., -1]
        )
        return gs, gk

    return tape.emit(out, (spec, kernel), vjp)


def complex_mul(a: Node, b: Node) -> Node:
    """Plain elementwise complex multiply (same shapes)."""
    _check_shapes("complex_mul", a, b)
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    return tape.emit(av * bv, (a, b), lambda g: (g * np.conj(bv), g * np.conj(av)))


def make_complex(re: Node, im: Node) -> Node:
    _check_shapes("make_complex", re, im)
    tape = _same_tape(re, im)
    return tape.emit(
        re.value + 1j * im.value, (re, im), lambda g: (g.real.copy(), g.imag.copy())
    )


def spectrum_mask(s: Node, mask: np.ndarray) -> Node:
    """Multiply a spectrum by a constant 0/1 mask (mode truncation)."""
    return s.tape.emit(s.value * mask, (s,), lambda g: (g * mask,))


# ------------------------------------------------------------ reductions


def sum_all(x: Node) -> Node:
    shape = x.value.shape
    return x.tape.emit(
        np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape) * np.ones(1),)
    )


def weighted_sum(x: Node, weights: np.ndarray) -> Node:
    """sum(x * weights) with constant weights; works for real and complex x.

    For complex x the result is sum(Re(x) * Re(w)) + sum(Im(x) * Im(w)), a
    real scalar, which is the standard scalarization for gradient checks.
    """
    w = np.asarray(weights)
    xv = x.value
    if np.iscomplexobj(xv):
        val = np.sum(xv.real * w.real + xv.imag * w.imag)
        return x.tape.emit(np.asarray(val), (x,), lambda g: (float(g) * (w.real + 1j * w.imag),))
    val = np.sum(xv * w)
    return x.tape.emit(np.asarray(val), (x,), lambda g: (float(g) * w,))


def cross_entropy_mean(logits: Node, labels: np.ndarray) -> Node:
    """Mean softmax cross-entropy; labels are integer class indices."""
    z = logits.value
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != z.shape[0]:
        raise ValueError("labels must be a vector matching the batch size")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ValueError("label out of range")
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    b = z.shape[0]
    loss = -logp[np.arange(b), labels].mean()
    softmax = np.exp(logp)

    def vjp(g):
        grad = softmax.copy()
        grad[np.arange(b), labels] -= 1.0
        return (float(g) * grad / b,)

    return logits.tape.emit(np.asarray(loss), (logits,), vjp)


# ------------------------------------------------------------ harnesses

_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "tanh": tanh,
    "softplus": softplus,
    "channel_map": channel_map,
    "affine": affine,
    "sum": sum_all,
}


def record(op: str, *inputs) -> Node:
    """Name-based primitive dispatch; inputs must already live on one tape."""
    if op not in _OPS:
        raise ValueError(f"unknown primitive {op!r}")
    return _OPS[op](*inputs)


def backward(tape: Tape, output: Node, cotangent=None) -> dict:
    """Run the reverse pass and return leaf gradients keyed by node id."""
    tape.backward(output, cotangent)
    return {id(n): n.grad for n in tape.nodes if n.is_leaf and n.grad is not None}


def finite_diff_errors(f, theta: np.ndarray, eps: float = 1e-6,
                       relative_to: str = "coordinate") -> np.ndarray:
    """Relative errors of the tape gradient vs central differences.

    ``f(theta, need_grad)`` returns ``(value, grad-or-None)``; the gradient is
    only requested once, at the center point.

    ``relative_to="coordinate"`` divides each deviation by that coordinate's
    own |g| (+1e-12). That is the sharpest check but is only well posed when
    every probed coordinate carries gradient well above the finite-difference
    noise floor (about |f|*1e-10 at eps=1e-6). Full models generically have
    near-inert coordinates from phase cancellation, so whole-parameter-vector
    checks use ``relative_to="magnitude"``: deviations relative to the
    largest gradient coordinate.
    """
    theta = np.asarray(theta, dtype=np.float64)
    _, grad = f(theta, True)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ValueError("gradient shape does not match parameter vector")
    if relative_to == "coordinate":
        denom = np.abs(grad) + 1e-12
    elif relative_to == "magnitude":
        denom = np.full_like(grad, np.abs(grad).max() + 1e-12)
    else:
        raise ValueError(f"unknown relative_to {relative_to!r}")
    errs = np.empty(theta.size)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = eps
        fp, _ = f(theta + bump, False)
        fm, _ = f(theta - bump, False)
        fd = (fp - fm) / (2.0 * eps)
        errs[i] = abs(fd - grad[i]) / denom[i]
    return errs


def finite_diff_check(f, theta: np.ndarray, eps: float = 1e-6,
                      relative_to: str = "coordinate") -> float:
    """Max relative error between tape gradient and central differences."""
    return float(finite_diff_errors(f, theta, eps, relative_to).max())
