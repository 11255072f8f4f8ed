"""
Metrics and the on-disk formats
===============================

Seven standard depth metrics computed over the truth's valid pixels,
plus the three file formats: float PFM for depth rasters, 16-bit PGM
for region labels and quantized depth, CSV for metric tables.
"""

import tempfile
from pathlib import Path

import numpy as np

from guidepth import (
    compute_metrics,
    read_pfm,
    read_region_mask,
    sample_sparse,
    synth_scene,
    write_metrics_csv,
    write_pfm,
    write_region_mask,
)
from guidepth.rng import substream

scene = synth_scene(seed=3, H=32, W=32, object_count=2)
gt = scene.depth

# score a deliberately sloppy prediction: truth times ~N(1, 0.05)
rng = substream(3, "demo-metrics")
from guidepth import DepthMap

pred = DepthMap.full(gt.depth * rng.normal(1.0, 0.05, size=gt.shape).clip(0.5, 2.0))
m = compute_metrics(pred, gt)
print("5% multiplicative noise scores:")
print(f"  MAE {m.mae:.4f}  RMSE {m.rmse:.4f}  REL {m.rel:.4f}")
print(f"  iMAE {m.imae:.4f}  iRMSE {m.irmse:.4f}  RMSElog {m.rmselog:.4f}")
print(f"  delta1/2/3 = {m.delta1:.1f} / {m.delta2:.1f} / {m.delta3:.1f} %")
print()

work = Path(tempfile.mkdtemp())

# PFM holds float32 depth; zeros encode missing pixels, so a sparse map
# round-trips with its validity mask intact
sparse = sample_sparse(gt, "uniform:200", seed=1)
write_pfm(work / "sparse.pfm", sparse)
back = read_pfm(work / "sparse.pfm")
print(f"PFM round trip: {back.valid_count()} valid pixels "
      f"(mask preserved: {np.array_equal(back.valid, sparse.valid)})")

# region labels are small ints, so 16-bit PGM stores them exactly
write_region_mask(work / "regions.pgm", scene.mask)
labels_back = read_region_mask(work / "regions.pgm")
print(f"PGM16 labels exact: {np.array_equal(labels_back.labels, scene.mask.labels)}")

# the metrics CSV is the same table `guidepth eval` writes
write_metrics_csv(work / "metrics.csv", [("noisy", m)])
print()
print((work / "metrics.csv").read_text().strip())
