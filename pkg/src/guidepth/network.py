"""Three-branch completion network with repetitive guided fusion.

The image branch is a stack of hourglass units over five scales. The
first unit downsamples with residual blocks; later units use exactly two
convolutions per layer and receive, at every encoder level, the summed
decoder features of all earlier units passed through a BN-ReLU-conv
transform (dense aggregation). The semantic branch is a single hourglass
over a one-hot region encoding. The depth branch interleaves its encoder
with guidance fusion: at each of the first four scales the current depth
features are refined by rg_module against the image and semantic decoder
features of that scale, and the refined features feed the next encoder
level. A plain convolution head turns the finest depth decoder feature
into a one-channel coarse depth, which region-aware propagation then
sharpens using affinities predicted from the depth and semantic decoder
features.

Spatial dims must be divisible by 16 (four halvings). Channel widths
per level are base * 2^(level-1), capped by a maximum; the toy flag
keeps the desk-scale schedule, and switching it off quadruples every
width.
"""

import json
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, relu
from .data import DepthMap
from .errors import (
    CheckpointError,
    ConfigurationError,
    DimensionError,
    UsageError,
)
from .guidance import init_rg_params, rg_module
from .layers import BatchNorm, batch_norm, conv2d, init_conv, init_tconv, transposed_conv2d
from .propagation import (
    NeighborSet,
    RegionMask,
    batch_neighbors,
    neighbors_cspn,
    neighbors_raspn,
    neighbors_spn,
    normalize_affinity,
    propagate,
)
from .rng import substream

SPN_KINDS = ("raspn", "cspn", "spn_L2R", "spn_R2L", "spn_T2B", "spn_B2T", "none")


@dataclass
class HourglassConfig:
    levels: int = 5
    base_channels: int = 8
    max_channels: int = 32
    num_units: int = 3
    repetitions: int = 2
    semantic_planes: int = 8
    spn_kind: str = "raspn"
    spn_iterations: int = 6
    spn_dilation: int = 1
    toy: bool = True

    def __post_init__(self):
        if self.levels != 5:
            raise ConfigurationError(f"the scale hierarchy is fixed at 5 levels, got {self.levels}")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ConfigurationError(
                f"need 1 <= base_channels <= max_channels, got "
                f"{self.base_channels}, {self.max_channels}"
            )
        if self.num_units < 1:
            raise ConfigurationError(f"need at least one hourglass unit, got {self.num_units}")
        if self.repetitions < 1:
            raise ConfigurationError(f"repetition count must be >= 1, got {self.repetitions}")
        if self.semantic_planes < 1:
            raise ConfigurationError("semantic encoding needs at least one plane")
        if self.spn_kind not in SPN_KINDS:
            raise ConfigurationError(
                f"unknown spn kind {self.spn_kind!r}; expected one of {SPN_KINDS}"
            )
        if self.spn_iterations < 0:
            raise ConfigurationError("propagation iterations must be >= 0")
        if self.spn_dilation < 1:
            raise ConfigurationError("propagation dilation must be >= 1")

    def channel_schedule(self):
        factor = 1 if self.toy else 4
        return tuple(
            min(self.base_channels * 2**j, self.max_channels) * factor for j in range(5)
        )

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class BranchState:
    """Per-(unit, level) encoder and decoder features of one branch."""

    encoders: dict
    decoders: dict

    def enc(self, unit, level):
        return self.encoders[(unit, level)]

    def dec(self, unit, level):
        return self.decoders[(unit, level)]


def _bn_state(prefix, bn):
    return [
        (f"{prefix}.gamma", "param", bn.gamma),
        (f"{prefix}.beta", "param", bn.beta),
        (f"{prefix}.mean", "buffer", (bn, "running_mean")),
        (f"{prefix}.var", "buffer", (bn, "running_var")),
    ]


def _conv_state(prefix, params):
    out = [(f"{prefix}.w", "param", params.weights)]
    if params.bias is not None:
        out.append((f"{prefix}.b", "param", params.bias))
    return out


def _sep_state(prefix, sep):
    return _conv_state(f"{prefix}.dw", sep.depthwise) + _conv_state(
        f"{prefix}.pw", sep.pointwise
    )


class ConvBlock:
    """conv -> optional batch norm -> optional relu."""

    def __init__(self, rng, cin, cout, kernel=3, stride=1, bn=True, act=True):
        self.conv = init_conv(rng, cin, cout, kernel, stride=stride, bias=not bn)
        self.bn = BatchNorm(cout) if bn else None
        self.act = act

    def __call__(self, x, training=True):
        self.conv.bind(x.tape)
        out = conv2d(x, self.conv)
        if self.bn is not None:
            out = batch_norm(out, self.bn, training)
        if self.act:
            out = relu(out)
        return out

    def state(self, prefix):
        out = _conv_state(prefix, self.conv)
        if self.bn is not None:
            out += _bn_state(f"{prefix}.bn", self.bn)
        return out


class FullBlock:
    """Residual block: two 3x3 convs with a projected skip when needed."""

    def __init__(self, rng, cin, cout, stride=1):
        self.conv1 = ConvBlock(rng, cin, cout, stride=stride)
        self.conv2 = ConvBlock(rng, cout, cout, act=False)
        if cin == cout and stride == 1:
            self.proj = None
        else:
            self.proj = ConvBlock(rng, cin, cout, kernel=1, stride=stride, act=False)

    def __call__(self, x, training=True):
        out = self.conv2(self.conv1(x, training), training)
        skip = x if self.proj is None else self.proj(x, training)
        return ad.relu(ad.add(out, skip))

    def state(self, prefix):
        out = self.conv1.state(f"{prefix}.c1") + self.conv2.state(f"{prefix}.c2")
        if self.proj is not None:
            out += self.proj.state(f"{prefix}.proj")
        return out


class LightBlock:
    """Exactly two convolutions, each with BN and ReLU."""

    def __init__(self, rng, cin, cout, stride=1):
        self.conv1 = ConvBlock(rng, cin, cout, stride=stride)
        self.conv2 = ConvBlock(rng, cout, cout)

    def __call__(self, x, training=True):
        return self.conv2(self.conv1(x, training), training)

    def state(self, prefix):
        return self.conv1.state(f"{prefix}.c1") + self.conv2.state(f"{prefix}.c2")


class Transform:
    """BN -> ReLU -> 3x3 conv, applied to summed prior decoders."""

    def __init__(self, rng, channels):
        self.bn = BatchNorm(channels)
        self.conv = init_conv(rng, channels, channels, 3, bias=True)

    def __call__(self, x, training=True):
        out = relu(batch_norm(x, self.bn, training))
        self.conv.bind(out.tape)
        return conv2d(out, self.conv)

    def state(self, prefix):
        return _bn_state(f"{prefix}.bn", self.bn) + _conv_state(f"{prefix}.conv", self.conv)


class Deconv:
    """2x2 stride-2 transposed conv -> BN -> ReLU (exact doubling)."""

    def __init__(self, rng, cin, cout):
        self.tconv = init_tconv(rng, cin, cout, kernel=2, stride=2, bias=False)
        self.bn = BatchNorm(cout)

    def __call__(self, x, training=True):
        self.tconv.bind(x.tape)
        out = transposed_conv2d(x, self.tconv)
        return relu(batch_norm(out, self.bn, training))

    def state(self, prefix):
        return _conv_state(f"{prefix}.t", self.tconv) + _bn_state(f"{prefix}.bn", self.bn)


def dense_aggregate(prior_decoders, transform, training=True):
    """BN-ReLU-conv over the sum of all earlier units' decoder features."""
    if not prior_decoders:
        raise UsageError("dense aggregation needs at least one prior decoder feature")
    total = prior_decoders[0]
    for t in prior_decoders[1:]:
        total = ad.add(total, t)
    return transform(total, training)


class HourglassUnit:
    """One encoder/decoder pass over the five scales.

    index 0 builds residual blocks and takes the stem features; later
    units build two-conv blocks, start from the previous unit's finest
    decoder feature, and add dense-aggregated prior decoders at every
    encoder level past the first.
    """

    def __init__(self, rng, cfg, index):
        ch = cfg.channel_schedule()
        block = FullBlock if index == 0 else LightBlock
        self.index = index
        self.enc = {1: block(rng, ch[0], ch[0], stride=1)}
        for j in range(2, 6):
            self.enc[j] = block(rng, ch[j - 2], ch[j - 1], stride=2)
        self.trans = {}
        if index > 0:
            self.trans = {j: Transform(rng, ch[j - 1]) for j in range(2, 6)}
        self.bottleneck = ConvBlock(rng, ch[4], ch[4])
        self.dec = {j: Deconv(rng, ch[j], ch[j - 1]) for j in range(1, 5)}

    def forward(self, x, prior_decoders, training=True):
        if self.index > 0 and len(prior_decoders) != self.index:
            raise UsageError(
                f"unit {self.index + 1} needs decoder features of {self.index} "
                f"prior units, got {len(prior_decoders)}"
            )
        enc = {1: self.enc[1](x, training)}
        for j in range(2, 6):
            cur = self.enc[j](enc[j - 1], training)
            if self.index > 0:
                agg = dense_aggregate(
                    [d[j] for d in prior_decoders], self.trans[j], training
                )
                cur = ad.add(cur, agg)
            enc[j] = cur
        dec = {5: self.bottleneck(enc[5], training)}
        for j in range(4, 0, -1):
            dec[j] = ad.add(self.dec[j](dec[j + 1], training), enc[j])
        return enc, dec

    def state(self, prefix):
        out = []
        for j in range(1, 6):
            out += self.enc[j].state(f"{prefix}.enc{j}")
        for j in sorted(self.trans):
            out += self.trans[j].state(f"{prefix}.ft{j}")
        out += self.bottleneck.state(f"{prefix}.mid")
        for j in range(1, 5):
            out += self.dec[j].state(f"{prefix}.dec{j}")
        return out


def drhn_unit_forward(unit, prior_decoders, x, training=True):
    """Free-function view of HourglassUnit.forward for direct testing."""
    return unit.forward(x, prior_decoders, training)


class ImageBranch:
    def __init__(self, rng, cfg):
        ch = cfg.channel_schedule()
        self.stem = ConvBlock(rng, 3, ch[0])
        self.units = [HourglassUnit(rng, cfg, i) for i in range(cfg.num_units)]

    def forward(self, rgb, training=True):
        x = self.stem(rgb, training)
        encoders, decoders = {}, {}
        prior = []
        for i, unit in enumerate(self.units):
            xin = x if i == 0 else prior[-1][1]
            enc, dec = unit.forward(xin, prior, training)
            prior.append(dec)
            for j in range(1, 6):
                encoders[(i + 1, j)] = enc[j]
                decoders[(i + 1, j)] = dec[j]
        return BranchState(encoders, decoders)

    def state(self, prefix):
        out = self.stem.state(f"{prefix}.stem")
        for i, unit in enumerate(self.units):
            out += unit.state(f"{prefix}.u{i + 1}")
        return out


class SemanticBranch:
    def __init__(self, rng, cfg):
        ch = cfg.channel_schedule()
        self.stem = ConvBlock(rng, cfg.semantic_planes, ch[0])
        self.unit = HourglassUnit(rng, cfg, 0)

    def forward(self, onehot, training=True):
        enc, dec = self.unit.forward(self.stem(onehot, training), [], training)
        return BranchState(
            {(1, j): enc[j] for j in range(1, 6)},
            {(1, j): dec[j] for j in range(1, 6)},
        )

    def state(self, prefix):
        return self.stem.state(f"{prefix}.stem") + self.unit.state(f"{prefix}.u1")


def semantic_branch_forward(branch, onehot, training=True):
    return branch.forward(onehot, training)


@dataclass
class DepthState:
    encoders: dict
    decoders: dict
    fused: dict
    steps: dict


class DepthBranch:
    def __init__(self, rng, cfg):
        ch = cfg.channel_schedule()
        self.stem = ConvBlock(rng, 2, ch[0])
        self.enc = {1: FullBlock(rng, ch[0], ch[0], stride=1)}
        for j in range(2, 6):
            self.enc[j] = FullBlock(rng, ch[j - 2], ch[j - 1], stride=2)
        self.rg = {j: init_rg_params(rng, ch[j - 1], cfg.repetitions) for j in range(1, 5)}
        self.bottleneck = ConvBlock(rng, ch[4], ch[4])
        self.dec = {j: Deconv(rng, ch[j], ch[j - 1]) for j in range(1, 5)}
        self.head = ConvBlock(rng, ch[0], 1, bn=False, act=False)
        self.repetitions = cfg.repetitions

    def forward(self, sparse2, image_dec, semantic_dec, k, training=True, meter=None):
        if k != self.repetitions:
            raise ConfigurationError(
                f"branch built for k={self.repetitions}, asked for k={k}"
            )
        prev = self.stem(sparse2, training)
        enc, fused, steps = {}, {}, {}
        for j in range(1, 5):
            e = self.enc[j](prev, training)
            if e.shape != image_dec[j].shape or e.shape != semantic_dec[j].shape:
                raise DimensionError(
                    f"branch scales disagree at level {j}: depth {e.shape}, "
                    f"image {image_dec[j].shape}, semantic {semantic_dec[j].shape}"
                )
            d_j, d_steps = rg_module(
                image_dec[j], semantic_dec[j], e, k, self.rg[j], meter
            )
            enc[j], fused[j], steps[j] = e, d_j, d_steps
            prev = d_j
        enc[5] = ad.add(self.enc[5](prev, training), image_dec[5])
        dec = {5: self.bottleneck(enc[5], training)}
        for j in range(4, 0, -1):
            dec[j] = ad.add(self.dec[j](dec[j + 1], training), enc[j])
        coarse = self.head(dec[1], training)
        return coarse, DepthState(enc, dec, fused, steps)

    def state(self, prefix):
        out = self.stem.state(f"{prefix}.stem")
        for j in range(1, 6):
            out += self.enc[j].state(f"{prefix}.enc{j}")
        for j in range(1, 5):
            rg = self.rg[j]
            for r, step in enumerate(rg.steps):
                out += _sep_state(f"{prefix}.rg{j}.s{r + 1}.cat", step.concat_conv)
                out += _sep_state(f"{prefix}.rg{j}.s{r + 1}.mix", step.mixer_conv)
            for r, conv in enumerate(rg.image_convs):
                out += _sep_state(f"{prefix}.rg{j}.img{r + 2}", conv)
            for r, conv in enumerate(rg.semantic_convs):
                out += _sep_state(f"{prefix}.rg{j}.sem{r + 2}", conv)
            out += _sep_state(f"{prefix}.rg{j}.af.fuse", rg.af.fuse_conv)
            out += _sep_state(f"{prefix}.rg{j}.af.wgt", rg.af.weight_conv)
        out += self.bottleneck.state(f"{prefix}.mid")
        for j in range(1, 5):
            out += self.dec[j].state(f"{prefix}.dec{j}")
        out += self.head.state(f"{prefix}.head")
        return out


def depth_branch_forward(branch, sparse2, image_dec, semantic_dec, k, training=True):
    return branch.forward(sparse2, image_dec, semantic_dec, k, training)


@dataclass
class ForwardResult:
    coarse: Tensor
    refined: Tensor
    image: BranchState
    semantic: BranchState
    depth: DepthState
    affinity: object
    neighbors: object


def encode_semantic(mask, planes):
    """One-hot planes of the region labels, labels clipped to the top plane."""
    labels = np.clip(mask.labels, 0, planes - 1)
    return (labels[None] == np.arange(planes)[:, None, None]).astype(np.float64)


def encode_sparse(dm):
    """Two planes: measured depth (zero where missing) and the validity mask."""
    return np.stack([np.where(dm.valid, dm.depth, 0.0), dm.valid.astype(np.float64)])


class CompletionNet:
    """The full three-branch model plus the propagation refinement head."""

    def __init__(self, config, seed=0):
        self.config = config
        self.image = ImageBranch(substream(seed, "init", "image"), config)
        self.semantic = SemanticBranch(substream(seed, "init", "semantic"), config)
        self.depth = DepthBranch(substream(seed, "init", "depth"), config)
        self.affinity_head = None
        if config.spn_kind != "none":
            c1 = config.channel_schedule()[0]
            k = 3 if config.spn_kind.startswith("spn_") else 8
            self.affinity_head = ConvBlock(
                substream(seed, "init", "affinity"), 2 * c1, k, bn=False, act=False
            )

    def _neighbor_set(self, h, w, region_masks, batch):
        kind = self.config.spn_kind
        if kind.startswith("spn_"):
            return neighbors_spn(kind[4:], h, w)
        base = neighbors_cspn(h, w)
        if kind == "cspn":
            return base
        if region_masks is None:
            return base
        if len(region_masks) != batch:
            raise DimensionError(
                f"need one region mask per sample: {len(region_masks)} masks, batch {batch}"
            )
        per_sample = [
            neighbors_raspn(base, m, self.config.spn_dilation) for m in region_masks
        ]
        return batch_neighbors(per_sample)

    def forward(self, rgb, semantic_onehot, sparse2, region_masks=None,
                training=True, refine=True, meter=None):
        b, _, h, w = rgb.shape
        if h % 16 or w % 16:
            raise ConfigurationError(
                f"spatial dims must be multiples of 16, got {h}x{w}"
            )
        img_state = self.image.forward(rgb, training)
        sem_state = self.semantic.forward(semantic_onehot, training)
        last = self.config.num_units
        image_dec = {j: img_state.dec(last, j) for j in range(1, 6)}
        semantic_dec = {j: sem_state.dec(1, j) for j in range(1, 6)}
        coarse, depth_state = self.depth.forward(
            sparse2, image_dec, semantic_dec, self.config.repetitions, training, meter
        )
        refined, affinity, neighbors = coarse, None, None
        if refine and self.affinity_head is not None and self.config.spn_iterations > 0:
            guess = ad.concat_channels([depth_state.decoders[1], semantic_dec[1]])
            raw = self.affinity_head(guess, training)
            neighbors = self._neighbor_set(h, w, region_masks, b)
            affinity = normalize_affinity(raw, neighbors)
            refined = propagate(coarse, neighbors, affinity, self.config.spn_iterations)
        return ForwardResult(
            coarse, refined, img_state, sem_state, depth_state, affinity, neighbors
        )

    def state_entries(self):
        out = self.image.state("image")
        out += self.semantic.state("semantic")
        out += self.depth.state("depth")
        if self.affinity_head is not None:
            out += self.affinity_head.state("affinity")
        return out

    def parameters(self):
        return [(n, obj) for n, kind, obj in self.state_entries() if kind == "param"]


def rignetpp_forward(rgb, semantic, sparse, config, model=None, seed=0):
    """Single-sample convenience wrapper running the whole pipeline.

    rgb is a (3, H, W) array in [0, 1], semantic a RegionMask, sparse a
    DepthMap. Returns the refined depth as a DepthMap whose validity
    marks strictly positive outputs.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DimensionError(f"rgb must be (3, H, W), got {rgb.shape}")
    h, w = rgb.shape[1:]
    if semantic.shape != (h, w) or sparse.shape != (h, w):
        raise DimensionError("rgb, semantic, and sparse extents must agree")
    if h % 16 or w % 16:
        raise ConfigurationError(f"spatial dims must be multiples of 16, got {h}x{w}")
    if model is None:
        model = CompletionNet(config, seed)
    onehot = encode_semantic(semantic, config.semantic_planes)
    planes = encode_sparse(sparse)
    result = model.forward(
        Tensor(rgb[None]),
        Tensor(onehot[None]),
        Tensor(planes[None]),
        region_masks=[semantic],
        training=False,
    )
    out = result.refined.data[0, 0]
    return DepthMap(np.where(out > 0, out, 0.0), out > 0)


def save_checkpoint(model, path):
    """Write <path>.bin (flat float64) and <path>.json (manifest)."""
    entries = model.state_entries()
    manifest = {"config": model.config.to_dict(), "tensors": []}
    chunks = []
    for name, kind, obj in entries:
        arr = obj.data if kind == "param" else getattr(obj[0], obj[1])
        manifest["tensors"].append(
            {"name": name, "kind": kind, "shape": list(arr.shape)}
        )
        chunks.append(np.asarray(arr, dtype="<f8").reshape(-1))
    with open(f"{path}.json", "w") as f:
        json.dump(manifest, f, indent=1)
    with open(f"{path}.bin", "wb") as f:
        f.write(np.concatenate(chunks).tobytes())


def load_checkpoint(model, path):
    """Restore parameters and buffers in manifest order, strictly."""
    with open(f"{path}.json") as f:
        manifest = json.load(f)
    entries = model.state_entries()
    listed = manifest["tensors"]
    if len(listed) != len(entries):
        raise CheckpointError(
            f"checkpoint lists {len(listed)} tensors, model has {len(entries)}"
        )
    raw = open(f"{path}.bin", "rb").read()
    if len(raw) % 8:
        raise CheckpointError(
            f"checkpoint payload is {len(raw)} bytes, not a whole number of values"
        )
    blob = np.frombuffer(raw, dtype="<f8")
    at = 0
    for meta, (name, kind, obj) in zip(listed, entries):
        arr = obj.data if kind == "param" else getattr(obj[0], obj[1])
        if meta["name"] != name or tuple(meta["shape"]) != arr.shape:
            raise CheckpointError(
                f"checkpoint mismatch at {meta['name']!r} {meta['shape']}: "
                f"model expects {name!r} {list(arr.shape)}"
            )
        size = arr.size
        if at + size > blob.size:
            raise CheckpointError(f"checkpoint payload truncated at tensor {name!r}")
        values = blob[at : at + size].reshape(arr.shape)
        at += size
        if kind == "param":
            np.copyto(obj.data, values)
        else:
            setattr(obj[0], obj[1], values.astype(np.float64).copy())
    if at != blob.size:
        raise CheckpointError(
            f"checkpoint payload has {blob.size - at} unread values"
        )


def load_model(path):
    """Build a model from a checkpoint's embedded config and load it."""
    with open(f"{path}.json") as f:
        manifest = json.load(f)
    model = CompletionNet(HourglassConfig.from_dict(manifest["config"]), seed=0)
    load_checkpoint(model, path)
    return model
