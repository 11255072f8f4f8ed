"""Reproducible experiment commands: train, eval, memreport, gradcheck.

A run is fully determined by one JSON config plus the seed stored inside
it. The config hash (sha256 of the canonical JSON, first 12 hex chars)
names the run directory, so identical configs land in identical places
and differing configs never collide. Scene generation, sparse sampling,
parameter init, and batch order all draw from independently named
Philox streams derived from the seed, which is what makes the loss
trajectory bit-reproducible.

Evaluation clamps predictions to a 1e-3 floor before computing metrics:
an untrained network can emit nonpositive depths, and the inverse/log
metrics are defined only for positive predictions. The clamp is an
evaluation-side convention, not part of the model.
"""

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import DepthMap, sample_sparse, synth_scene
from .errors import ConfigurationError, EvaluationError, UsageError
from .gradcheck import grad_check
from .guidance import af_fuse, eg_unit, init_af_params, init_eg_params, init_rg_params, rg_module
from .layers import (
    BatchNorm,
    LayerParams,
    batch_norm,
    channel_mix,
    channel_scale,
    channel_softmax,
    conv2d,
    depthwise_separable_conv,
    global_avg_pool,
    init_conv,
    init_separable,
    init_tconv,
    transposed_conv2d,
)
from .memory import memory_report
from .metrics import aggregate_metrics, compute_metrics, masked_mse
from .network import (
    CompletionNet,
    HourglassConfig,
    encode_semantic,
    encode_sparse,
    load_checkpoint,
    save_checkpoint,
)
from .propagation import neighbors_cspn, normalize_affinity, propagate
from .rng import substream

GRADCHECK_SCOPES = ("primitives", "modules", "full")


@dataclass
class DataConfig:
    train_scenes: int = 8
    eval_scenes: int = 4
    height: int = 32
    width: int = 32
    objects: int = 3
    min_separation: float = 0.5
    pattern: str = "uniform:160"

    def __post_init__(self):
        if self.train_scenes < 1 or self.eval_scenes < 0:
            raise ConfigurationError("scene counts must be positive")
        if self.objects < 0:
            raise ConfigurationError("object count must be >= 0")


@dataclass
class OptimizerConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-6
    epochs: int = 15
    batch_size: int = 2
    halve_every: int = 5
    max_steps: int = 0  # 0 means no cap
    grad_clip: float = 0.0  # global grad norm ceiling; 0 disables

    def __post_init__(self):
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.step_size <= 0:
            raise ConfigurationError("step size must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.halve_every < 1:
            raise ConfigurationError("bad schedule values")
        if self.max_steps < 0:
            raise ConfigurationError("max_steps must be >= 0")
        if self.grad_clip < 0:
            raise ConfigurationError("grad_clip must be >= 0")


@dataclass
class OutputConfig:
    root: str = "runs"


def _strict(cls, d):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class ExperimentConfig:
    network: HourglassConfig = field(default_factory=HourglassConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def __post_init__(self):
        if self.data.height % 16 or self.data.width % 16:
            raise ConfigurationError("scene dims must be multiples of 16")

    def to_dict(self):
        return {
            "network": self.network.to_dict(),
            "data": asdict(self.data),
            "optimizer": asdict(self.optimizer),
            "output": asdict(self.output),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"network", "data", "optimizer", "output", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            network=HourglassConfig.from_dict(d.get("network", {})),
            data=_strict(DataConfig, d.get("data", {})),
            optimizer=_strict(OptimizerConfig, d.get("optimizer", {})),
            output=_strict(OutputConfig, d.get("output", {})),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json_file(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    epoch_losses: list
    step_losses: list
    final_metrics: object
    wall_time_s: float

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        from .metrics import MetricsReport

        fm = d.get("final_metrics")
        if isinstance(fm, dict):
            fm = MetricsReport(**fm)
        return cls(
            d["config_hash"], d["seed"], d["epoch_losses"], d["step_losses"],
            fm, d["wall_time_s"],
        )


class Adam:
    """Adam with classic L2 weight decay folded into the gradient.

    grad_clip, when positive, rescales the whole gradient so its global
    L2 norm never exceeds that value; the multiplicative guidance units
    can spike gradients early in training and the clip keeps the first
    Adam steps from launching the weights into an amplifying regime.
    """

    def __init__(self, params, step_size=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0, grad_clip=0.0):
        self.params = list(params)
        self.step_size = step_size
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0

    def step(self, lr=None):
        lr = self.step_size if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = 1.0
        if self.grad_clip:
            sq = sum(
                float((p.grad * p.grad).sum())
                for _, p in self.params
                if p.grad is not None
            )
            norm = np.sqrt(sq)
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad if scale == 1.0 else p.grad * scale
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Sample:
    scene: object
    sparse: DepthMap


def build_dataset(config, split):
    """Deterministic scenes plus their sparse inputs for one split."""
    n = config.data.train_scenes if split == "train" else config.data.eval_scenes
    d = config.data
    seeds = substream(config.seed, f"{split}-scenes").integers(0, 2**31, size=max(n, 1))
    out = []
    for i in range(n):
        scene = synth_scene(int(seeds[i]), d.height, d.width, d.objects, d.min_separation)
        samp_seed = int(substream(config.seed, f"{split}-sample", i).integers(0, 2**31))
        sparse = sample_sparse(scene.depth, d.pattern, samp_seed)
        out.append(Sample(scene, sparse))
    return out


def _batch_arrays(samples, planes):
    rgb = np.stack([s.scene.rgb for s in samples])
    onehot = np.stack([encode_semantic(s.scene.mask, planes) for s in samples])
    sparse2 = np.stack([encode_sparse(s.sparse) for s in samples])
    gt = np.stack([s.scene.depth.depth[None] for s in samples])
    masks = [s.scene.mask for s in samples]
    return rgb, onehot, sparse2, gt, masks


def unbind_model(model):
    """Detach every parameter from whatever tape it was last recorded on."""
    for _, kind, obj in model.state_entries():
        if kind == "param":
            obj.tape = None
            obj.node_id = None
            obj.grad = None


def train_step(model, optimizer, rgb, onehot, sparse2, gt, masks, lr):
    """One forward/backward/update pass; returns the scalar loss."""
    tape = Tape()
    rgb_t = tape.leaf(Tensor(rgb))
    onehot_t = tape.leaf(Tensor(onehot))
    sparse_t = tape.leaf(Tensor(sparse2))
    result = model.forward(rgb_t, onehot_t, sparse_t, masks, training=True)
    loss = masked_mse(result.refined, gt, np.ones_like(gt, dtype=bool))
    tape.backward(loss)
    optimizer.step(lr)
    return loss.item()


def cmd_train(config, quiet=True, log=None):
    """Train per the config; write checkpoint and run record.

    Returns (RunRecord, checkpoint_prefix). The checkpoint prefix names
    the .bin/.json pair under the run directory.
    """
    t0 = time.perf_counter()
    cfg_hash = config.hash()
    run_dir = Path(config.output.root) / cfg_hash
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True)
    )
    dataset = build_dataset(config, "train")
    model = CompletionNet(config.network, seed=config.seed)
    opt = config.optimizer
    adam = Adam(
        model.parameters(),
        step_size=opt.step_size,
        beta1=opt.beta1,
        beta2=opt.beta2,
        weight_decay=opt.weight_decay,
        grad_clip=opt.grad_clip,
    )
    planes = config.network.semantic_planes
    step_losses = []
    epoch_losses = []
    step = 0
    stop = False
    for epoch in range(opt.epochs):
        if stop:
            break
        lr = opt.step_size * 0.5 ** (epoch // opt.halve_every)
        order = substream(config.seed, "order", epoch).permutation(len(dataset))
        epoch_sum, epoch_n = 0.0, 0
        for at in range(0, len(order), opt.batch_size):
            batch = [dataset[i] for i in order[at : at + opt.batch_size]]
            rgb, onehot, sparse2, gt, masks = _batch_arrays(batch, planes)
            loss = train_step(model, adam, rgb, onehot, sparse2, gt, masks, lr)
            if not np.isfinite(loss):
                raise EvaluationError(f"loss became non-finite at step {step}")
            step_losses.append(loss)
            epoch_sum += loss
            epoch_n += 1
            step += 1
            if log is not None and step % 25 == 0:
                log(f"step {step}: loss {loss:.6f}")
            if opt.max_steps and step >= opt.max_steps:
                stop = True
                break
        if epoch_n:
            epoch_losses.append(epoch_sum / epoch_n)
    ckpt = run_dir / "checkpoint"
    save_checkpoint(model, ckpt)
    final = None
    if config.data.eval_scenes:
        rows, final = evaluate_model(model, config, "eval")
    record = RunRecord(
        cfg_hash, config.seed, epoch_losses, step_losses, final,
        time.perf_counter() - t0,
    )
    (run_dir / "record.json").write_text(json.dumps(record.to_dict(), indent=1))
    return record, str(ckpt)


def predict_scene(model, scene, sparse, planes, clamp=1e-3):
    """Eval-mode forward for one scene; returns (refined, coarse) DepthMaps.

    Outputs are clamped to a small positive floor so the inverse and log
    metrics stay defined even for an untrained model.
    """
    unbind_model(model)
    result = model.forward(
        Tensor(scene.rgb[None]),
        Tensor(encode_semantic(scene.mask, planes)[None]),
        Tensor(encode_sparse(sparse)[None]),
        [scene.mask],
        training=False,
    )
    refined = DepthMap.full(np.maximum(result.refined.data[0, 0], clamp))
    coarse = DepthMap.full(np.maximum(result.coarse.data[0, 0], clamp))
    return refined, coarse


def baseline_mean_fill(sparse):
    """Constant prediction: the mean of the observed sparse depths."""
    if not sparse.valid.any():
        raise EvaluationError("sparse input has no measurements to average")
    return DepthMap.full(np.full(sparse.shape, sparse.depth[sparse.valid].mean()))


def evaluate_model(model, config, split="eval"):
    planes = config.network.semantic_planes
    rows = []
    for i, sample in enumerate(build_dataset(config, split)):
        refined, _ = predict_scene(model, sample.scene, sample.sparse, planes)
        rows.append((f"scene{i}", compute_metrics(refined, sample.scene.depth)))
    return rows, aggregate_metrics([r for _, r in rows])


def cmd_eval(checkpoint, config, csv_path=None):
    """Evaluate a checkpoint on the config's held-out scenes.

    Writes per-scene rows plus an 'aggregate' mean row; returns
    (rows, aggregate, csv_path).
    """
    from .depthio import write_metrics_csv

    model = CompletionNet(config.network, seed=config.seed)
    load_checkpoint(model, checkpoint)
    rows, agg = evaluate_model(model, config, "eval")
    if csv_path is None:
        csv_path = Path(config.output.root) / config.hash() / "metrics.csv"
        csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(csv_path, rows + [("aggregate", agg)])
    return rows, agg, str(csv_path)


def cmd_memreport(C=128, H=128, W=608, R=3):
    return memory_report(C, H, W, R)


# ---------------------------------------------------------------------------
# gradient-check suites


def _suite_primitives():
    checks = []
    r = substream(11, "gradcheck")

    def rnd(*shape):
        return Tensor(r.normal(size=shape))

    x = rnd(2, 3, 4, 5)
    y = rnd(2, 3, 4, 5)
    checks.append(("add", lambda t: ad.sum_all(ad.mul(ad.add(t, Tensor(y.data)), Tensor(y.data))), x))
    checks.append(("sub", lambda t: ad.sum_all(ad.mul(ad.sub(t, Tensor(y.data)), Tensor(y.data))), x))
    checks.append(("mul", lambda t: ad.sum_all(ad.mul(ad.mul(t, Tensor(y.data)), t)), x))
    bcast = Tensor(r.normal(size=(2, 3, 1, 1)))
    checks.append(("mul_broadcast", lambda t: ad.sum_all(ad.mul(Tensor(x.data), t)), bcast))
    checks.append(("scale", lambda t: ad.sum_all(ad.scale(t, -1.7)), x))
    checks.append(("relu", lambda t: ad.sum_all(ad.mul(ad.relu(t), Tensor(y.data))), x))
    checks.append(("square", lambda t: ad.sum_all(ad.square(t)), x))
    checks.append(("channel_sum", lambda t: ad.sum_all(ad.square(ad.channel_sum(t))), x))
    checks.append(("channel_slice", lambda t: ad.sum_all(ad.square(ad.channel_slice(t, 1, 3))), x))
    checks.append((
        "concat_channels",
        lambda t: ad.sum_all(ad.square(ad.concat_channels([t, Tensor(y.data)]))),
        x,
    ))
    checks.append(("shift2d", lambda t: ad.sum_all(ad.square(ad.shift2d(t, 1, -2))), x))
    one = Tensor(r.normal(size=(2, 1, 5, 5)))
    offs = ((0, 1), (-1, 0), (2, 2))
    checks.append(("stack_shifts", lambda t: ad.sum_all(ad.square(ad.stack_shifts(t, offs))), one))

    conv_w = init_conv(r, 3, 4, 3, stride=2)
    cx = rnd(1, 3, 7, 7)
    checks.append((
        "conv2d_x",
        lambda t: ad.sum_all(ad.square(conv2d(t, conv_w))),
        cx,
    ))
    checks.append((
        "conv2d_w",
        lambda t: ad.sum_all(ad.square(conv2d(
            Tensor(cx.data),
            LayerParams(t, conv_w.bias, stride=2, padding=1),
        ))),
        conv_w.weights,
    ))
    grouped = init_conv(r, 4, 6, 3, groups=2)
    gx = rnd(2, 4, 5, 5)
    checks.append(("conv2d_groups", lambda t: ad.sum_all(ad.square(conv2d(t, grouped))), gx))
    dw = init_conv(r, 4, 4, 3, groups=4, bias=False)
    checks.append(("conv2d_depthwise", lambda t: ad.sum_all(ad.square(conv2d(t, dw))), gx))
    tw = init_tconv(r, 4, 3, kernel=2, stride=2)
    checks.append(("transposed_conv2d_x", lambda t: ad.sum_all(ad.square(transposed_conv2d(t, tw))), gx))
    checks.append((
        "transposed_conv2d_w",
        lambda t: ad.sum_all(ad.square(transposed_conv2d(
            Tensor(gx.data), LayerParams(t, None, stride=2, padding=0)
        ))),
        tw.weights,
    ))
    sep = init_separable(r, 3, 5)
    checks.append((
        "separable_conv",
        lambda t: ad.sum_all(ad.square(depthwise_separable_conv(t, sep.depthwise, sep.pointwise))),
        cx,
    ))
    checks.append(("global_avg_pool", lambda t: ad.sum_all(ad.square(global_avg_pool(t))), x))
    checks.append((
        "channel_softmax",
        lambda t: ad.sum_all(ad.mul(channel_softmax(t), Tensor(y.data))),
        x,
    ))
    filt = Tensor(r.normal(size=(2, 3, 1, 1)))
    checks.append(("channel_scale_x", lambda t: ad.sum_all(ad.square(channel_scale(t, Tensor(filt.data)))), x))
    checks.append(("channel_scale_f", lambda t: ad.sum_all(ad.square(channel_scale(Tensor(x.data), t))), filt))
    mixer = Tensor(r.normal(size=(2, 6, 1, 1)))
    checks.append(("channel_mix_x", lambda t: ad.sum_all(ad.square(channel_mix(t, Tensor(mixer.data)))), x))
    checks.append(("channel_mix_m", lambda t: ad.sum_all(ad.square(channel_mix(Tensor(x.data), t))), mixer))

    bn = BatchNorm(3)
    bn.gamma.data[:] = r.normal(size=bn.gamma.shape)
    bn.beta.data[:] = r.normal(size=bn.beta.shape)
    checks.append((
        "batch_norm_train",
        lambda t: ad.sum_all(ad.mul(batch_norm(t, bn, training=True), Tensor(y.data))),
        x,
    ))
    bn_eval = BatchNorm(3)
    bn_eval.running_mean = r.normal(size=3)
    bn_eval.running_var = np.abs(r.normal(size=3)) + 0.5
    checks.append((
        "batch_norm_eval",
        lambda t: ad.sum_all(ad.square(batch_norm(t, bn_eval, training=False))),
        x,
    ))
    nb = neighbors_cspn(4, 4)
    raw = Tensor(r.normal(size=(1, 8, 4, 4)))
    checks.append((
        "normalize_affinity",
        lambda t: ad.sum_all(ad.square(normalize_affinity(t, nb))),
        raw,
    ))
    return checks


def _suite_modules():
    checks = []
    r = substream(12, "gradcheck")
    c = 3
    img = Tensor(r.normal(size=(1, c, 6, 6)))
    sem = Tensor(r.normal(size=(1, c, 6, 6)))
    dep = Tensor(r.normal(size=(1, c, 6, 6)))
    eg = init_eg_params(r, c)
    checks.append((
        "eg_unit_depth",
        lambda t: ad.sum_all(ad.square(eg_unit(Tensor(img.data), Tensor(sem.data), t, eg))),
        dep,
    ))
    checks.append((
        "eg_unit_image",
        lambda t: ad.sum_all(ad.square(eg_unit(t, Tensor(sem.data), Tensor(dep.data), eg))),
        img,
    ))
    rg = init_rg_params(r, c, 3)
    checks.append((
        "rg_module_k3",
        lambda t: ad.sum_all(ad.square(
            rg_module(Tensor(img.data), Tensor(sem.data), t, 3, rg)[0]
        )),
        dep,
    ))
    af = init_af_params(r, c, 2)
    d2 = Tensor(r.normal(size=(1, c, 6, 6)))
    checks.append((
        "af_fuse",
        lambda t: ad.sum_all(ad.square(af_fuse([t, Tensor(d2.data)], af))),
        dep,
    ))
    nb = neighbors_cspn(5, 5)
    x0 = Tensor(r.normal(size=(1, 1, 5, 5)))
    raw = Tensor(r.normal(size=(1, 8, 5, 5)))
    aff_const = normalize_affinity(Tensor(raw.data), nb)
    checks.append((
        "propagate_T3_field",
        lambda t: ad.sum_all(ad.square(propagate(t, nb, Tensor(aff_const.data), 3))),
        x0,
    ))
    checks.append((
        "propagate_T3_affinity",
        lambda t: ad.sum_all(ad.square(
            propagate(Tensor(x0.data), nb, normalize_affinity(t, nb), 3)
        )),
        raw,
    ))
    target = r.normal(size=(1, 1, 5, 5)) + 4.0
    vmask = r.random(size=(1, 1, 5, 5)) > 0.3
    checks.append((
        "masked_mse",
        lambda t: masked_mse(t, target, vmask),
        x0,
    ))
    return checks


def _toy_gradcheck_setup():
    cfg = HourglassConfig(
        base_channels=8, max_channels=32, num_units=2, repetitions=2,
        spn_kind="raspn", spn_iterations=4,
    )
    scene = synth_scene(5, 16, 16, 2)
    sparse = sample_sparse(scene.depth, "uniform:48", 7)
    model = CompletionNet(cfg, seed=3)
    rgb = scene.rgb[None]
    onehot = encode_semantic(scene.mask, cfg.semantic_planes)[None]
    sparse2 = encode_sparse(sparse)[None]
    gt = scene.depth.depth[None, None]
    masks = [scene.mask]
    return model, rgb, onehot, sparse2, gt, masks


def _suite_full():
    model, rgb, onehot, sparse2, gt, masks = _toy_gradcheck_setup()
    valid = np.ones_like(gt, dtype=bool)

    def run(sparse_t):
        result = model.forward(
            Tensor(rgb), Tensor(onehot), sparse_t, masks, training=True
        )
        return masked_mse(result.refined, gt, valid)

    checks = [("full_net_input", run, Tensor(sparse2), 40)]

    stem_conv = model.depth.stem.conv

    def run_stem(w):
        stem_conv.weights = w
        result = model.forward(
            Tensor(rgb), Tensor(onehot), Tensor(sparse2), masks, training=True
        )
        return masked_mse(result.refined, gt, valid)

    checks.append(("full_net_stem_w", run_stem, stem_conv.weights, 24))

    mix_pw = model.depth.rg[2].steps[0].mixer_conv.pointwise

    def run_mixer(w):
        mix_pw.weights = w
        result = model.forward(
            Tensor(rgb), Tensor(onehot), Tensor(sparse2), masks, training=True
        )
        return masked_mse(result.refined, gt, valid)

    checks.append(("full_net_rg_mixer_w", run_mixer, mix_pw.weights, 16))

    aff_conv = model.affinity_head.conv

    def run_aff(w):
        aff_conv.weights = w
        result = model.forward(
            Tensor(rgb), Tensor(onehot), Tensor(sparse2), masks, training=True
        )
        return masked_mse(result.refined, gt, valid)

    checks.append(("full_net_affinity_w", run_aff, aff_conv.weights, 16))
    return model, checks


def cmd_gradcheck(scope):
    """Run one gradient-check suite; returns [(name, GradCheckReport)]."""
    if scope not in GRADCHECK_SCOPES:
        raise UsageError(
            f"unknown gradcheck scope {scope!r}; valid scopes: {', '.join(GRADCHECK_SCOPES)}"
        )
    rows = []
    if scope == "primitives":
        for name, f, x in _suite_primitives():
            rows.append((name, grad_check(f, x, tol=1e-5)))
    elif scope == "modules":
        for name, f, x in _suite_modules():
            rows.append((name, grad_check(f, x, tol=1e-5)))
    else:
        model, checks = _suite_full()
        for name, f, x, coords in checks:
            unbind_model(model)
            original = x
            rows.append((name, grad_check(f, x, tol=1e-4, max_coords=coords, seed=1)))
            # closures that swap a weight tensor leave the model pointing at
            # grad_check's working copy; point it back at the real tensor
            if name == "full_net_stem_w":
                model.depth.stem.conv.weights = original
            elif name == "full_net_rg_mixer_w":
                model.depth.rg[2].steps[0].mixer_conv.pointwise.weights = original
            elif name == "full_net_affinity_w":
                model.affinity_head.conv.weights = original
    return rows
