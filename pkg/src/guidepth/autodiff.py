"""Reverse-mode automatic differentiation over 4-d float64 arrays.

Everything in the package flows through a single array type: a Tensor
wrapping a (batch, channels, height, width) float64 ndarray. Operations
that should be differentiated are recorded on an explicit Tape in the
order they execute. A backward pass walks that order once, in reverse,
accumulating cotangents by summation, so ordinary topological concerns
never arise: creation order is already a topological order.

Tensors are constants until registered on a tape via ``Tape.leaf``.
Operations infer the active tape from their inputs; if no input is on a
tape the result is a plain constant and nothing is recorded, which keeps
numeric-only evaluation (finite differencing, inference) cheap. Mixing
tensors from two live tapes in one operation is an error rather than a
guess.

Gradients land on ``Tensor.grad`` after ``Tape.backward``; they are plain
ndarrays and are overwritten, never accumulated, across separate backward
calls.
"""

import numpy as np

from .errors import DimensionError, UsageError


class Tensor:
    """A 4-d float64 array with an optional slot in a recording tape.

    data     the (B, C, H, W) array, always float64, always rank 4
    grad     ndarray of the same shape after a backward pass, else None
    node_id  position on the owning tape, None for constants
    tape     the owning Tape, None for constants
    """

    __slots__ = ("data", "grad", "node_id", "tape")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise DimensionError(
                f"tensors are (batch, channels, height, width); got rank {arr.ndim}"
            )
        if min(arr.shape) < 1:
            raise DimensionError(f"every tensor dimension must be >= 1; got {arr.shape}")
        self.data = arr
        self.grad = None
        self.node_id = None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        where = "constant" if self.tape is None else f"node {self.node_id}"
        return f"Tensor(shape={self.shape}, {where})"


def as_tensor(value):
    """Wrap arrays/The already-wrapped pass through untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def from_grid(array):
    """Lift an (H, W) array to a (1, 1, H, W) tensor."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-d grid, got rank {arr.ndim}")
    return Tensor(arr[None, None])


class _Node:
    __slots__ = ("parent_ids", "backward")

    def __init__(self, parent_ids, backward):
        self.parent_ids = parent_ids
        self.backward = backward


class Tape:
    """Ordered record of operations for one forward pass.

    The tape owns node ids. Leaves (inputs, parameters) are registered
    explicitly; interior nodes are appended by the ops as they run. A
    tensor can be re-registered on a fresh tape for the next pass, which
    is how persistent parameters participate in many training steps.
    """

    def __init__(self):
        self._nodes = []
        self._tensors = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, tensor):
        """Register a tensor as a differentiable input on this tape."""
        tensor = as_tensor(tensor)
        if tensor.tape is self:
            return tensor
        tensor.tape = self
        tensor.node_id = len(self._nodes)
        tensor.grad = None
        self._nodes.append(_Node((), None))
        self._tensors.append(tensor)
        return tensor

    def _record(self, out_data, parents, backward):
        out = Tensor(out_data)
        out.tape = self
        out.node_id = len(self._nodes)
        ids = tuple(p.node_id if p.tape is self else None for p in parents)
        self._nodes.append(_Node(ids, backward))
        self._tensors.append(out)
        return out

    def backward(self, output, cotangent=None):
        """Run one reverse sweep from ``output``; fill ``grad`` slots.

        A scalar output needs no cotangent; any other shape requires one
        of matching shape.
        """
        if output.tape is not self:
            raise UsageError("backward target is not recorded on this tape")
        if cotangent is None:
            if output.data.size != 1:
                raise UsageError(
                    "non-scalar backward target needs an explicit cotangent"
                )
            seed = np.ones_like(output.data)
        else:
            seed = np.asarray(cotangent, dtype=np.float64)
            if seed.shape != output.data.shape:
                raise DimensionError(
                    f"cotangent shape {seed.shape} != output shape {output.data.shape}"
                )
        grads = [None] * len(self._nodes)
        grads[output.node_id] = seed
        for nid in range(output.node_id, -1, -1):
            g = grads[nid]
            node = self._nodes[nid]
            if g is None or node.backward is None:
                continue
            for pid, contrib in zip(node.parent_ids, node.backward(g)):
                if pid is None or contrib is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = contrib.copy()
                else:
                    grads[pid] += contrib
        for nid, tensor in enumerate(self._tensors):
            tensor.grad = grads[nid]

    def ancestors(self, node_id):
        """Set of node ids reachable backwards from ``node_id`` (inclusive)."""
        if not 0 <= node_id < len(self._nodes):
            raise UsageError(f"node {node_id} is not on this tape")
        seen = {node_id}
        stack = [node_id]
        while stack:
            nid = stack.pop()
            for pid in self._nodes[nid].parent_ids:
                if pid is not None and pid not in seen:
                    seen.add(pid)
                    stack.append(pid)
        return seen


def active_tape(*tensors):
    """The unique live tape among the inputs, or None if all constants."""
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise UsageError("inputs recorded on different tapes cannot be combined")
    return tape


def _emit(tape, out_data, parents, backward_builder):
    """Record when a tape is live; otherwise return a constant."""
    if tape is None:
        return Tensor(out_data)
    return tape._record(out_data, parents, backward_builder())


def _reduce_to(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    axes = tuple(ax for ax in range(4) if shape[ax] == 1 and grad.shape[ax] > 1)
    return grad.sum(axis=axes, keepdims=True)


def add(x, y):
    """Elementwise sum; shapes must match exactly."""
    if x.shape != y.shape:
        raise DimensionError(f"add needs matching shapes, got {x.shape} and {y.shape}")
    tape = active_tape(x, y)
    return _emit(tape, x.data + y.data, (x, y), lambda: lambda g: (g, g))


def sub(x, y):
    if x.shape != y.shape:
        raise DimensionError(f"sub needs matching shapes, got {x.shape} and {y.shape}")
    tape = active_tape(x, y)
    return _emit(tape, x.data - y.data, (x, y), lambda: lambda g: (g, -g))


def mul(x, y):
    """Elementwise product with numpy broadcasting across size-1 axes."""
    try:
        out = x.data * y.data
    except ValueError as exc:
        raise DimensionError(f"mul cannot broadcast {x.shape} with {y.shape}") from exc
    if out.ndim != 4:
        raise DimensionError("mul result must stay rank 4")
    tape = active_tape(x, y)
    xd, yd, xs, ys = x.data, y.data, x.shape, y.shape

    def build():
        def backward(g):
            return _reduce_to(g * yd, xs), _reduce_to(g * xd, ys)

        return backward

    return _emit(tape, out, (x, y), build)


def scale(x, c):
    """Multiply by a python scalar."""
    c = float(c)
    return _emit(active_tape(x), x.data * c, (x,), lambda: lambda g: (g * c,))


def add_scalar(x, c):
    c = float(c)
    return _emit(active_tape(x), x.data + c, (x,), lambda: lambda g: (g,))


def relu(x):
    """max(0, x); the subgradient at 0 is taken as 0."""
    mask = x.data > 0.0

    def build():
        return lambda g: (g * mask,)

    return _emit(active_tape(x), np.where(mask, x.data, 0.0), (x,), build)


def square(x):
    xd = x.data
    return _emit(active_tape(x), xd * xd, (x,), lambda: lambda g: (2.0 * g * xd,))


def sum_all(x):
    """Reduce everything to a (1, 1, 1, 1) scalar tensor."""
    shape = x.shape

    def build():
        return lambda g: (np.full(shape, g.reshape(())),)

    return _emit(active_tape(x), x.data.sum().reshape(1, 1, 1, 1), (x,), build)


def channel_sum(x):
    """Sum over the channel axis, keeping a singleton channel."""
    c = x.shape[1]

    def build():
        return lambda g: (np.repeat(g, c, axis=1),)

    return _emit(active_tape(x), x.data.sum(axis=1, keepdims=True), (x,), build)


def channel_slice(x, start, stop):
    """Take channels [start, stop) as a new tensor."""
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(
            f"channel slice [{start}, {stop}) out of range for {x.shape[1]} channels"
        )
    shape = x.shape

    def build():
        def backward(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)

        return backward

    return _emit(active_tape(x), x.data[:, start:stop].copy(), (x,), build)


def concat_channels(tensors):
    """Concatenate along the channel axis."""
    if not tensors:
        raise UsageError("concat_channels needs at least one tensor")
    b, _, h, w = tensors[0].shape
    for t in tensors:
        if (t.shape[0], t.shape[2], t.shape[3]) != (b, h, w):
            raise DimensionError("concat_channels inputs must agree outside the channel axis")
    tape = active_tape(*tensors)
    sizes = [t.shape[1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)

    def build():
        def backward(g):
            pieces = []
            at = 0
            for c in sizes:
                pieces.append(g[:, at : at + c])
                at += c
            return tuple(pieces)

        return backward

    return _emit(tape, out, tuple(tensors), build)


def _shift_slices(delta, size):
    """Source/destination index ranges for a 1-d shift by ``delta``."""
    if delta >= 0:
        src = slice(delta, size)
        dst = slice(0, size - delta)
    else:
        src = slice(0, size + delta)
        dst = slice(-delta, size)
    return src, dst


def shift2d(x, dy, dx):
    """out[y, x] = in[y + dy, x + dx], zero where that falls off the grid."""
    b, c, h, w = x.shape
    out = np.zeros((b, c, h, w))
    if abs(dy) < h and abs(dx) < w:
        sy, ty = _shift_slices(dy, h)
        sx, tx = _shift_slices(dx, w)
        out[:, :, ty, tx] = x.data[:, :, sy, sx]

    def build():
        def backward(g):
            gx = np.zeros((b, c, h, w))
            if abs(dy) < h and abs(dx) < w:
                sy, ty = _shift_slices(dy, h)
                sx, tx = _shift_slices(dx, w)
                gx[:, :, sy, sx] = g[:, :, ty, tx]
            return (gx,)

        return backward

    return _emit(active_tape(x), out, (x,), build)


def stack_shifts(x, offsets):
    """Gather shifted copies of a 1-channel field into K channels.

    Channel k of the result holds x shifted by offsets[k], zeros where
    the shifted index leaves the grid. This is the gather step of every
    local propagation rule.
    """
    if x.shape[1] != 1:
        raise DimensionError(f"stack_shifts expects a single channel, got {x.shape[1]}")
    b, _, h, w = x.shape
    offsets = [(int(dy), int(dx)) for dy, dx in offsets]
    out = np.zeros((b, len(offsets), h, w))
    for k, (dy, dx) in enumerate(offsets):
        if abs(dy) < h and abs(dx) < w:
            sy, ty = _shift_slices(dy, h)
            sx, tx = _shift_slices(dx, w)
            out[:, k, ty, tx] = x.data[:, 0, sy, sx]

    def build():
        def backward(g):
            gx = np.zeros((b, 1, h, w))
            for k, (dy, dx) in enumerate(offsets):
                if abs(dy) < h and abs(dx) < w:
                    sy, ty = _shift_slices(dy, h)
                    sx, tx = _shift_slices(dx, w)
                    gx[:, 0, sy, sx] += g[:, k, ty, tx]
            return (gx,)

        return backward

    return _emit(active_tape(x), out, (x,), build)
