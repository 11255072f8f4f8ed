"""Differentiable layer primitives on top of the tape engine.

Convolutions are implemented as strided cross-correlation via an im2col
expansion (grouped path) or a fused per-tap accumulation (depthwise
path). The transposed convolution is the exact adjoint of conv2d with
the same stride and padding; each op's input gradient reuses the other's
forward kernel, which keeps the pair consistent by construction.

Weights follow the usual conventions: conv2d takes
(out_channels, in_channels/groups, R, R), transposed_conv2d takes
(in_channels, out_channels/groups, R, R). All arithmetic is float64.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor, active_tape, _emit
from .errors import ConfigurationError, DimensionError


@dataclass
class LayerParams:
    """Weights plus geometry for one convolution.

    stride and padding are symmetric (same in both spatial directions).
    bias, when present, is a (1, out_channels, 1, 1) tensor.
    """

    weights: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.weights.data.ndim != 4:
            raise DimensionError("convolution weights must be rank 4")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigurationError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ConfigurationError(f"groups must be >= 1, got {self.groups}")

    def bind(self, tape):
        """Register weights (and bias) as leaves on ``tape``."""
        if tape is not None:
            tape.leaf(self.weights)
            if self.bias is not None:
                tape.leaf(self.bias)
        return self

    def parameters(self):
        out = [self.weights]
        if self.bias is not None:
            out.append(self.bias)
        return out


def _pad_spatial(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_core(x, w, stride, padding, groups):
    """Grouped strided cross-correlation on raw arrays."""
    b, cin, h, wd = x.shape
    cout, cin_g, rh, rw = w.shape
    s, p = stride, padding
    ho = (h + 2 * p - rh) // s + 1
    wo = (wd + 2 * p - rw) // s + 1
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"kernel {rh}x{rw} does not fit input {h}x{wd} with padding {p}"
        )
    xp = _pad_spatial(x, p)
    if groups == cin and cout == cin and cin_g == 1:
        out = np.zeros((b, cin, ho, wo))
        for i in range(rh):
            for j in range(rw):
                out += w[:, 0, i, j][None, :, None, None] * xp[
                    :, :, i : i + s * ho : s, j : j + s * wo : s
                ]
        return out
    cpg = cin // groups
    opg = cout // groups
    out = np.empty((b, cout, ho, wo))
    for g in range(groups):
        xg = xp[:, g * cpg : (g + 1) * cpg]
        cols = np.empty((b, cpg, rh, rw, ho, wo))
        for i in range(rh):
            for j in range(rw):
                cols[:, :, i, j] = xg[:, :, i : i + s * ho : s, j : j + s * wo : s]
        wg = w[g * opg : (g + 1) * opg].reshape(opg, cpg * rh * rw)
        flat = cols.reshape(b, cpg * rh * rw, ho * wo)
        out[:, g * opg : (g + 1) * opg] = (wg @ flat).reshape(b, opg, ho, wo)
    return out


def _tconv_core(x, w, stride, padding, groups):
    """Grouped transposed convolution (scatter form) on raw arrays."""
    b, cin, h, wd = x.shape
    _, cout_g, rh, rw = w.shape
    s, p = stride, padding
    hfull = (h - 1) * s + rh
    wfull = (wd - 1) * s + rw
    ho = hfull - 2 * p
    wo = wfull - 2 * p
    if ho < 1 or wo < 1:
        raise DimensionError("transposed conv output collapsed to nothing")
    cpg = cin // groups
    full = np.zeros((b, cout_g * groups, hfull, wfull))
    if groups == cin and cout_g == 1:
        for i in range(rh):
            for j in range(rw):
                full[:, :, i : i + s * (h - 1) + 1 : s, j : j + s * (wd - 1) + 1 : s] += (
                    w[:, 0, i, j][None, :, None, None] * x
                )
        return full[:, :, p : hfull - p, p : wfull - p]
    for g in range(groups):
        xg = x[:, g * cpg : (g + 1) * cpg]
        wg = w[g * cpg : (g + 1) * cpg]
        og = full[:, g * cout_g : (g + 1) * cout_g]
        for i in range(rh):
            for j in range(rw):
                tap = np.tensordot(xg, wg[:, :, i, j], axes=([1], [0]))
                og[:, :, i : i + s * (h - 1) + 1 : s, j : j + s * (wd - 1) + 1 : s] += (
                    tap.transpose(0, 3, 1, 2)
                )
    return full[:, :, p : hfull - p, p : wfull - p]


def _conv_input_grad(g, w, stride, padding, groups, xshape):
    """dL/dx for conv2d: scatter into the padded frame, strip the pad.

    The scatter covers only rows the forward windows touched; rows of
    the padded frame past the last window (stride not dividing evenly)
    get zero gradient, which is exactly what the forward ignored.
    """
    full = _tconv_core(g, w, stride, 0, groups)
    b, cin, h, wd = xshape
    p = padding
    if full.shape[2] == h + 2 * p and full.shape[3] == wd + 2 * p:
        dxp = full
    else:
        dxp = np.zeros((b, cin, h + 2 * p, wd + 2 * p))
        dxp[:, :, : full.shape[2], : full.shape[3]] = full
    return dxp[:, :, p : p + h, p : p + wd]


def _conv_weight_grad(xp, g, w_shape, stride, groups):
    """dL/dw for conv2d given the padded input and the output gradient."""
    cout, cin_g, rh, rw = w_shape
    s = stride
    b, _, ho, wo = g.shape
    cpg = cin_g
    opg = cout // groups
    dw = np.empty(w_shape)
    if groups == cout and cin_g == 1 and xp.shape[1] == cout:
        for i in range(rh):
            for j in range(rw):
                patch = xp[:, :, i : i + s * ho : s, j : j + s * wo : s]
                dw[:, 0, i, j] = (g * patch).sum(axis=(0, 2, 3))
        return dw
    for gi in range(groups):
        xg = xp[:, gi * cpg : (gi + 1) * cpg]
        gg = g[:, gi * opg : (gi + 1) * opg]
        for i in range(rh):
            for j in range(rw):
                patch = xg[:, :, i : i + s * ho : s, j : j + s * wo : s]
                dw[gi * opg : (gi + 1) * opg, :, i, j] = np.tensordot(
                    gg, patch, axes=([0, 2, 3], [0, 2, 3])
                )
    return dw


def _check_conv_shapes(x, p, transposed=False):
    cin = x.shape[1]
    w = p.weights.data
    if transposed:
        if w.shape[0] != cin:
            raise DimensionError(
                f"transposed conv expects weights ({cin}, out/groups, R, R), got {w.shape}"
            )
        cout = w.shape[1] * p.groups
    else:
        if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise DimensionError(f"conv kernels must be square with odd size, got {w.shape}")
        if w.shape[1] * p.groups != cin:
            raise DimensionError(
                f"weights {w.shape} with groups={p.groups} do not match {cin} input channels"
            )
        cout = w.shape[0]
    if cin % p.groups or cout % p.groups:
        raise DimensionError(
            f"groups={p.groups} must divide in ({cin}) and out ({cout}) channels"
        )
    if p.bias is not None and p.bias.shape != (1, cout, 1, 1):
        raise DimensionError(
            f"bias shape {p.bias.shape} != (1, {cout}, 1, 1)"
        )
    return cout


def conv2d(x, params):
    """Strided 2-d cross-correlation with optional bias."""
    _check_conv_shapes(x, params)
    w, bias = params.weights, params.bias
    s, p, groups = params.stride, params.padding, params.groups
    parents = (x, w) if bias is None else (x, w, bias)
    tape = active_tape(*parents)
    out = _conv_core(x.data, w.data, s, p, groups)
    if bias is not None:
        out += bias.data
    xshape = x.shape
    xp_saved = _pad_spatial(x.data, p)
    w_data = w.data

    def build():
        def backward(g):
            dx = _conv_input_grad(g, w_data, s, p, groups, xshape)
            dw = _conv_weight_grad(xp_saved, g, w_data.shape, s, groups)
            if bias is None:
                return dx, dw
            db = g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            return dx, dw, db

        return backward

    return _emit(tape, out, parents, build)


def transposed_conv2d(x, params):
    """Adjoint of conv2d: upsamples by scattering weighted taps."""
    _check_conv_shapes(x, params, transposed=True)
    w, bias = params.weights, params.bias
    s, p, groups = params.stride, params.padding, params.groups
    parents = (x, w) if bias is None else (x, w, bias)
    tape = active_tape(*parents)
    out = _tconv_core(x.data, w.data, s, p, groups)
    if bias is not None:
        out += bias.data
    x_saved = x.data
    w_data = w.data
    h, wd = x.shape[2], x.shape[3]

    def build():
        def backward(g):
            dx = _conv_core(g, _swap_group_axes(w_data, groups), s, p, groups)
            gp = _pad_spatial(g, p)
            cin, cout_g, rh, rw = w_data.shape
            cpg = cin // groups
            dw = np.empty(w_data.shape)
            for gi in range(groups):
                xg = x_saved[:, gi * cpg : (gi + 1) * cpg]
                gg = gp[:, gi * cout_g : (gi + 1) * cout_g]
                for i in range(rh):
                    for j in range(rw):
                        patch = gg[:, :, i : i + s * (h - 1) + 1 : s, j : j + s * (wd - 1) + 1 : s]
                        dw[gi * cpg : (gi + 1) * cpg, :, i, j] = np.tensordot(
                            xg, patch, axes=([0, 2, 3], [0, 2, 3])
                        )
            if bias is None:
                return dx, dw
            db = g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            return dx, dw, db

        return backward

    return _emit(tape, out, parents, build)


def _swap_group_axes(w, groups):
    """View transposed-conv weights as conv weights for the dx pass.

    For groups == 1 the (cin, cout, R, R) array already reads as conv
    weights mapping cout gradient channels to cin input channels. With
    groups the per-group blocks line up the same way, so the array
    passes through unchanged; the helper exists to make that explicit.
    """
    return w


def depthwise_separable_conv(x, depthwise, pointwise):
    """Depthwise 3x3 (or RxR) conv followed by a pointwise 1x1 conv."""
    cin = x.shape[1]
    if depthwise.groups != cin or depthwise.weights.shape[0] != cin:
        raise ConfigurationError(
            f"depthwise stage needs groups == channels == {cin}, got "
            f"groups={depthwise.groups}, out={depthwise.weights.shape[0]}"
        )
    if pointwise.weights.shape[2:] != (1, 1):
        raise ConfigurationError("pointwise stage must use a 1x1 kernel")
    return conv2d(conv2d(x, depthwise), pointwise)


def global_avg_pool(x):
    """Mean over the spatial extent, keeping (B, C, 1, 1)."""
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / (h * w)

    def build():
        def backward(g):
            return (np.broadcast_to(g * inv, (b, c, h, w)).copy(),)

        return backward

    return _emit(active_tape(x), out, (x,), build)


def channel_softmax(x):
    """Softmax across the channel axis at every (batch, pixel)."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def build():
        def backward(g):
            dot = (g * y).sum(axis=1, keepdims=True)
            return (y * (g - dot),)

        return backward

    return _emit(active_tape(x), y, (x,), build)


def channel_scale(x, filt):
    """Scale each channel of x by a per-(batch, channel) scalar."""
    b, c = x.shape[0], x.shape[1]
    if filt.shape != (b, c, 1, 1):
        raise DimensionError(
            f"channel filter must be ({b}, {c}, 1, 1), got {filt.shape}"
        )
    tape = active_tape(x, filt)
    xd, fd = x.data, filt.data

    def build():
        def backward(g):
            return g * fd, (g * xd).sum(axis=(2, 3), keepdims=True)

        return backward

    return _emit(tape, xd * fd, (x, filt), build)


def channel_mix(x, mixer):
    """Per-sample linear recombination of channels.

    mixer has shape (B, C_out*C_in, 1, 1) and is read row-major as a
    (C_out, C_in) matrix applied at every pixel.
    """
    b, cin, h, w = x.shape
    if mixer.shape[0] != b or mixer.shape[2:] != (1, 1):
        raise DimensionError(f"mixer must be ({b}, C_out*{cin}, 1, 1), got {mixer.shape}")
    if mixer.shape[1] % cin:
        raise DimensionError(
            f"mixer channel count {mixer.shape[1]} is not a multiple of C_in={cin}"
        )
    cout = mixer.shape[1] // cin
    tape = active_tape(x, mixer)
    m = mixer.data.reshape(b, cout, cin)
    xd = x.data
    out = np.einsum("boc,bchw->bohw", m, xd, optimize=True)

    def build():
        def backward(g):
            dx = np.einsum("boc,bohw->bchw", m, g, optimize=True)
            dm = np.einsum("bohw,bchw->boc", g, xd, optimize=True)
            return dx, dm.reshape(b, cout * cin, 1, 1)

        return backward

    return _emit(tape, out, (x, mixer), build)


class BatchNorm:
    """Per-channel batch normalization with running statistics.

    Training mode normalizes by batch statistics (biased variance) and
    updates the running buffers with momentum 0.1; eval mode applies the
    running statistics as a fixed affine map. gamma and beta are the
    learnable tensors.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.gamma = Tensor(np.ones((1, channels, 1, 1)))
        self.beta = Tensor(np.zeros((1, channels, 1, 1)))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum
        self.channels = channels

    def parameters(self):
        return [self.gamma, self.beta]


def batch_norm(x, bn, training=True):
    if x.shape[1] != bn.channels:
        raise DimensionError(f"batch norm built for {bn.channels} channels, input has {x.shape[1]}")
    if x.tape is not None:
        x.tape.leaf(bn.gamma)
        x.tape.leaf(bn.beta)
    tape = active_tape(x, bn.gamma, bn.beta)
    gamma, beta = bn.gamma, bn.beta
    b, c, h, w = x.shape
    n = b * h * w
    if training:
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + bn.eps)
        xhat = (x.data - mean) * inv
        m = bn.momentum
        bn.running_mean = (1 - m) * bn.running_mean + m * mean.reshape(-1)
        bn.running_var = (1 - m) * bn.running_var + m * var.reshape(-1)
        gd = gamma.data

        def build():
            def backward(g):
                dgamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dbeta = g.sum(axis=(0, 2, 3), keepdims=True)
                dxhat = g * gd
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv / n) * (n * dxhat - s1 - xhat * s2)
                return dx, dgamma, dbeta

            return backward

        out = gamma.data * xhat + beta.data
        return _emit(tape, out, (x, gamma, beta), build)
    inv = 1.0 / np.sqrt(bn.running_var.reshape(1, c, 1, 1) + bn.eps)
    xhat = (x.data - bn.running_mean.reshape(1, c, 1, 1)) * inv
    gd = gamma.data

    def build():
        def backward(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dbeta = g.sum(axis=(0, 2, 3), keepdims=True)
            return g * gd * inv, dgamma, dbeta

        return backward

    return _emit(tape, gamma.data * xhat + beta.data, (x, gamma, beta), build)


def primitive_layer(kind, inputs, params=None, training=True):
    """Uniform dispatcher over the non-conv layer primitives."""
    from . import autodiff as ad

    kinds = ("relu", "batch_norm", "concat_channels", "add")
    if kind == "relu":
        return ad.relu(inputs[0])
    if kind == "batch_norm":
        if not isinstance(params, BatchNorm):
            raise ConfigurationError("batch_norm needs BatchNorm state in params")
        return batch_norm(inputs[0], params, training)
    if kind == "concat_channels":
        return ad.concat_channels(inputs)
    if kind == "add":
        if len(inputs) != 2:
            raise DimensionError("add takes exactly two inputs")
        return ad.add(inputs[0], inputs[1])
    raise ConfigurationError(f"unknown layer kind {kind!r}; expected one of {kinds}")


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_conv(rng, in_channels, out_channels, kernel=3, stride=1, padding=None,
              groups=1, bias=True):
    """Glorot-initialized conv2d parameters; padding defaults to kernel//2."""
    if padding is None:
        padding = kernel // 2
    cin_g = in_channels // groups
    if cin_g * groups != in_channels:
        raise ConfigurationError(f"groups={groups} does not divide {in_channels} channels")
    w = glorot_uniform(rng, (out_channels, cin_g, kernel, kernel),
                       cin_g * kernel * kernel, out_channels * kernel * kernel)
    b = Tensor(np.zeros((1, out_channels, 1, 1))) if bias else None
    return LayerParams(Tensor(w), b, stride=stride, padding=padding, groups=groups)


def init_tconv(rng, in_channels, out_channels, kernel=2, stride=2, padding=0, bias=True):
    w = glorot_uniform(rng, (in_channels, out_channels, kernel, kernel),
                       out_channels * kernel * kernel, in_channels * kernel * kernel)
    b = Tensor(np.zeros((1, out_channels, 1, 1))) if bias else None
    return LayerParams(Tensor(w), b, stride=stride, padding=padding, groups=1)


@dataclass
class SeparableParams:
    """Parameter pair for a depthwise-separable convolution."""

    depthwise: LayerParams
    pointwise: LayerParams

    def bind(self, tape):
        self.depthwise.bind(tape)
        self.pointwise.bind(tape)
        return self

    def parameters(self):
        return self.depthwise.parameters() + self.pointwise.parameters()

    def __call__(self, x):
        return depthwise_separable_conv(x, self.depthwise, self.pointwise)


def init_separable(rng, in_channels, out_channels, kernel=3, stride=1, bias=True):
    dw = init_conv(rng, in_channels, in_channels, kernel, stride=stride,
                   groups=in_channels, bias=False)
    pw = init_conv(rng, in_channels, out_channels, 1, bias=bias)
    return SeparableParams(dw, pw)
