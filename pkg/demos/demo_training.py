"""
A two-minute training run
=========================

End to end on generated data: build scenes, train the three-branch
network with Adam for a handful of steps, then compare the refined
output against the coarse pre-refinement output and a trivial baseline
on held-out scenes. Takes a minute or two on a laptop CPU.
"""

import tempfile

import numpy as np

from guidepth import (
    CompletionNet,
    DataConfig,
    ExperimentConfig,
    HourglassConfig,
    OptimizerConfig,
    OutputConfig,
    baseline_mean_fill,
    build_dataset,
    cmd_train,
    compute_metrics,
    load_checkpoint,
    predict_scene,
)

config = ExperimentConfig(
    network=HourglassConfig(
        base_channels=8, max_channels=32, num_units=2, repetitions=2,
        spn_kind="raspn", spn_iterations=4,
    ),
    data=DataConfig(
        train_scenes=8, eval_scenes=4, height=32, width=32, objects=3,
        pattern="uniform:160",
    ),
    optimizer=OptimizerConfig(epochs=25, batch_size=2, halve_every=60, max_steps=100),
    output=OutputConfig(root=tempfile.mkdtemp()),
    seed=0,
)
print(f"run directory: {config.output.root}/{config.hash()}")

record, ckpt = cmd_train(config, log=print)
print(f"\nloss {record.step_losses[0]:.3f} -> {record.step_losses[-1]:.3f} "
      f"after {len(record.step_losses)} steps ({record.wall_time_s:.0f}s)")

# score the held-out scenes three ways: refined output, the coarse map
# the propagation started from, and a constant mean-fill baseline
model = CompletionNet(config.network, seed=config.seed)
load_checkpoint(model, ckpt)
print(f"\n{'scene':<8}{'refined':>9}{'coarse':>9}{'meanfill':>10}")
for i, sample in enumerate(build_dataset(config, "eval")):
    refined, coarse = predict_scene(model, sample.scene, sample.sparse,
                                    config.network.semantic_planes)
    gt = sample.scene.depth
    r = compute_metrics(refined, gt).rmse
    c = compute_metrics(coarse, gt).rmse
    b = compute_metrics(baseline_mean_fill(sample.sparse), gt).rmse
    print(f"scene{i:<3}{r:>9.3f}{c:>9.3f}{b:>10.3f}")
print("\n(100 steps is a teaser; the acceptance gate trains 600)")
