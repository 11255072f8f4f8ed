"""Dynamic guidance units: channel-wise scaling plus cross-channel mixing.

The efficient guidance unit (eg_unit) replaces a per-pixel dynamic
convolution with two cheap factors derived from the guidance features: a
pooled per-channel filter that rescales the depth features, and a C x C
mixer that recombines channels. Repetition (rg_module) chains the unit k
times against freshly convolved copies of the original image/semantic
features, and adaptive fusion (af_fuse) blends the k intermediate depth
features with softmax weights predicted from their concatenation.

Two reference implementations of the expensive alternatives, dc_reference
(full dynamic convolution) and cf_reference (channel-wise factorization),
exist only to validate the analytic memory model: they run forward in
plain numpy at tiny shapes and report, through a KernelMeter, exactly how
many kernel-tensor elements they materialize per sample.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, UsageError
from .layers import (
    LayerParams,
    SeparableParams,
    channel_mix,
    channel_scale,
    channel_softmax,
    global_avg_pool,
    init_conv,
    init_separable,
)


class KernelMeter:
    """Counts kernel-tensor elements materialized per sample.

    Each event records one factor of one guidance method. Counts are per
    sample (batch-independent) so they compare directly against the
    analytic memory model. A pooled C-vector that is a pure reduction of
    an already-counted map is not double counted.
    """

    def __init__(self):
        self.events = []

    def add(self, label, elements):
        self.events.append((label, int(elements)))

    def total(self):
        return sum(n for _, n in self.events)


@dataclass
class EgParams:
    """concat_conv: 3C -> C over the concatenated inputs; mixer_conv:
    C -> C*C mapping the pooled filter to a mixer. Both separable."""

    concat_conv: SeparableParams
    mixer_conv: SeparableParams

    def bind(self, tape):
        self.concat_conv.bind(tape)
        self.mixer_conv.bind(tape)
        return self

    def parameters(self):
        return self.concat_conv.parameters() + self.mixer_conv.parameters()


@dataclass
class AfParams:
    """fuse_conv: kC -> C over concatenated steps; weight_conv: C -> k
    logits on the pooled vector."""

    fuse_conv: SeparableParams
    weight_conv: SeparableParams

    def bind(self, tape):
        self.fuse_conv.bind(tape)
        self.weight_conv.bind(tape)
        return self

    def parameters(self):
        return self.fuse_conv.parameters() + self.weight_conv.parameters()


@dataclass
class RgParams:
    steps: list
    image_convs: list
    semantic_convs: list
    af: AfParams

    def bind(self, tape):
        for p in self.steps + self.image_convs + self.semantic_convs:
            p.bind(tape)
        self.af.bind(tape)
        return self

    def parameters(self):
        out = []
        for p in self.steps + self.image_convs + self.semantic_convs:
            out.extend(p.parameters())
        out.extend(self.af.parameters())
        return out


def init_eg_params(rng, channels):
    return EgParams(
        concat_conv=init_separable(rng, 3 * channels, channels),
        mixer_conv=init_separable(rng, channels, channels * channels),
    )


def init_af_params(rng, channels, k):
    return AfParams(
        fuse_conv=init_separable(rng, k * channels, channels),
        weight_conv=init_separable(rng, channels, k),
    )


def init_rg_params(rng, channels, k):
    if k < 1:
        raise ConfigurationError(f"repetition count must be >= 1, got {k}")
    return RgParams(
        steps=[init_eg_params(rng, channels) for _ in range(k)],
        image_convs=[init_separable(rng, channels, channels) for _ in range(k - 1)],
        semantic_convs=[init_separable(rng, channels, channels) for _ in range(k - 1)],
        af=init_af_params(rng, channels, k),
    )


def eg_unit(image_feat, semantic_feat, depth_feat, params, meter=None):
    """One guidance step: pooled channel filter, then cross-channel mix."""
    if not (image_feat.shape == semantic_feat.shape == depth_feat.shape):
        raise DimensionError(
            f"guidance inputs must share a shape, got {image_feat.shape}, "
            f"{semantic_feat.shape}, {depth_feat.shape}"
        )
    b, c, h, w = image_feat.shape
    params.bind(image_feat.tape or semantic_feat.tape or depth_feat.tape)
    cat = ad.concat_channels([image_feat, semantic_feat, depth_feat])
    guide = params.concat_conv(cat)
    if guide.shape[1] != c:
        raise ConfigurationError(
            f"concat_conv must produce {c} channels, produced {guide.shape[1]}"
        )
    filt = global_avg_pool(guide)
    scaled = channel_scale(depth_feat, filt)
    mixer = params.mixer_conv(filt)
    if mixer.shape[1] != c * c:
        raise ConfigurationError(
            f"mixer_conv must produce {c * c} channels, produced {mixer.shape[1]}"
        )
    out = channel_mix(scaled, mixer)
    if meter is not None:
        meter.add("eg.scale_map", c * h * w)
        meter.add("eg.mixer", c * c)
    return out


def rg_module(image_feat, semantic_feat, depth_feat, k, params, meter=None):
    """k chained guidance steps plus their adaptive fusion.

    Steps beyond the first see freshly convolved copies of the original
    image and semantic features (independent parameters per step) while
    the depth input is the previous step's output.
    """
    if k < 1:
        raise ConfigurationError(f"repetition count must be >= 1, got {k}")
    if len(params.steps) != k:
        raise ConfigurationError(
            f"expected {k} step parameter sets, got {len(params.steps)}"
        )
    if len(params.image_convs) != k - 1 or len(params.semantic_convs) != k - 1:
        raise ConfigurationError("rg_module needs k-1 image and semantic convs")
    tape = image_feat.tape or semantic_feat.tape or depth_feat.tape
    for conv in params.image_convs + params.semantic_convs:
        conv.bind(tape)
    steps = [eg_unit(image_feat, semantic_feat, depth_feat, params.steps[0], meter)]
    for r in range(1, k):
        img_r = params.image_convs[r - 1](image_feat)
        sem_r = params.semantic_convs[r - 1](semantic_feat)
        steps.append(eg_unit(img_r, sem_r, steps[-1], params.steps[r], meter))
    fused = af_fuse(steps, params.af)
    return fused, steps


def af_fuse(steps, params, with_alpha=False):
    """Blend step outputs with predicted convex weights.

    With a single step the softmax weight is exactly 1 and the output is
    bitwise equal to that step.
    """
    if not steps:
        raise UsageError("af_fuse needs at least one step tensor")
    k = len(steps)
    shape = steps[0].shape
    for s in steps:
        if s.shape != shape:
            raise DimensionError(f"step shapes differ: {s.shape} vs {shape}")
    params.bind(steps[0].tape)
    cat = ad.concat_channels(steps)
    fused_feat = params.fuse_conv(cat)
    pooled = global_avg_pool(fused_feat)
    logits = params.weight_conv(pooled)
    if logits.shape[1] != k:
        raise ConfigurationError(
            f"weight_conv must produce {k} logits, produced {logits.shape[1]}"
        )
    alpha = channel_softmax(logits)
    out = None
    for r in range(k):
        a_r = ad.channel_slice(alpha, r, r + 1)
        term = ad.mul(steps[r], a_r)
        out = term if out is None else ad.add(out, term)
    if with_alpha:
        return out, alpha
    return out


# ---------------------------------------------------------------------------
# reference baselines (instrumentation only, forward-only numpy)


@dataclass
class DcParams:
    """kernel_conv maps guidance C -> C*C*R*R per-pixel kernel entries."""

    kernel_conv: LayerParams
    R: int


@dataclass
class CfParams:
    """spatial_conv maps C -> C*R*R per-pixel channel kernels;
    mixer_conv maps the pooled guidance to C*C mixer entries."""

    spatial_conv: LayerParams
    mixer_conv: LayerParams
    R: int


def init_dc_params(rng, channels, R=3):
    return DcParams(init_conv(rng, channels, channels * channels * R * R, 3), R)


def init_cf_params(rng, channels, R=3):
    return CfParams(
        init_conv(rng, channels, channels * R * R, 3),
        init_conv(rng, channels, channels * channels, 3),
        R,
    )


def _check_pair(image_feat, depth_feat):
    if image_feat.shape != depth_feat.shape:
        raise DimensionError(
            f"guidance and depth shapes differ: {image_feat.shape} vs {depth_feat.shape}"
        )


def _depth_cols(depth, r):
    """(B, C, R*R, H, W) stack of shifted depth values, zero padded."""
    b, c, h, w = depth.shape
    p = r // 2
    xp = np.pad(depth, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((b, c, r * r, h, w))
    for i in range(r):
        for j in range(r):
            cols[:, :, i * r + j] = xp[:, :, i : i + h, j : j + w]
    return cols


def dc_reference(image_feat, depth_feat, params, meter=None):
    """Full per-pixel dynamic convolution, the expensive upper baseline."""
    _check_pair(image_feat, depth_feat)
    b, c, h, w = depth_feat.shape
    r = params.R
    from .layers import conv2d

    kernel_field = conv2d(Tensor(image_feat.data), params.kernel_conv).data
    if kernel_field.shape[1] != c * c * r * r:
        raise ConfigurationError(
            f"kernel_conv must produce {c * c * r * r} channels, "
            f"produced {kernel_field.shape[1]}"
        )
    kernels = kernel_field.reshape(b, c, c, r * r, h, w)
    if meter is not None:
        meter.add("dc.kernels", c * c * r * r * h * w)
    cols = _depth_cols(depth_feat.data, r)
    out = np.einsum("bocrhw,bcrhw->bohw", kernels, cols, optimize=True)
    return Tensor(out)


def cf_reference(image_feat, depth_feat, params, meter=None):
    """Channel-wise spatial kernels plus one global mixer per sample."""
    _check_pair(image_feat, depth_feat)
    b, c, h, w = depth_feat.shape
    r = params.R
    from .layers import conv2d

    spatial_field = conv2d(Tensor(image_feat.data), params.spatial_conv).data
    if spatial_field.shape[1] != c * r * r:
        raise ConfigurationError(
            f"spatial_conv must produce {c * r * r} channels, "
            f"produced {spatial_field.shape[1]}"
        )
    spatial = spatial_field.reshape(b, c, r * r, h, w)
    if meter is not None:
        meter.add("cf.spatial", c * r * r * h * w)
    cols = _depth_cols(depth_feat.data, r)
    stage1 = (spatial * cols).sum(axis=2)
    pooled = image_feat.data.mean(axis=(2, 3), keepdims=True)
    mixer_field = conv2d(Tensor(pooled), params.mixer_conv).data
    if mixer_field.shape[1] != c * c:
        raise ConfigurationError(
            f"mixer_conv must produce {c * c} channels, produced {mixer_field.shape[1]}"
        )
    mixer = mixer_field.reshape(b, c, c)
    if meter is not None:
        meter.add("cf.mixer", c * c)
    out = np.einsum("boc,bchw->bohw", mixer, stage1, optimize=True)
    return Tensor(out)
