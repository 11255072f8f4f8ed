"""Synthetic scenes and sparse-depth samplers.

A scene is a shaded rendering of axis-aligned rectangles and ellipses
floating in front of a constant-depth background plane. Every object
sits at its own depth, pairwise separated by at least a configured
minimum, so region boundaries in the mask always coincide with genuine
depth discontinuities. That makes the scenes a fair miniature of the
segmentation-guided setting: the region mask carries real information
about where depth must not be smoothed across.

Samplers thin a fully valid ground-truth map down to the sparse inputs
a depth sensor would provide: uniformly random points, center-weighted
points (a truncated Gaussian around the image center), or a regular
grid such as the one-in-two-rows by one-in-eight-columns pattern of
panoramic captures.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError
from .propagation import RegionMask
from .rng import substream


@dataclass
class DepthMap:
    """Dense depth values plus a validity mask.

    Valid pixels must be strictly positive and finite; the contents of
    invalid pixels are never read by any metric or loss.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.ndim != 2:
            raise DimensionError(f"depth map must be 2-d, got rank {self.depth.ndim}")
        if self.valid.shape != self.depth.shape:
            raise DimensionError(
                f"validity mask {self.valid.shape} != depth {self.depth.shape}"
            )
        vals = self.depth[self.valid]
        if vals.size and (not np.isfinite(vals).all() or (vals <= 0).any()):
            raise ConfigurationError("valid depth pixels must be positive and finite")

    @property
    def shape(self):
        return self.depth.shape

    def valid_count(self):
        return int(self.valid.sum())

    @classmethod
    def full(cls, depth):
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, np.ones(depth.shape, dtype=bool))


@dataclass
class Scene:
    """rgb (3, H, W) in [0, 1], fully valid depth, and the region mask."""

    rgb: np.ndarray
    depth: DepthMap
    mask: RegionMask

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        h, w = self.depth.shape
        if self.rgb.shape != (3, h, w):
            raise DimensionError(f"rgb must be (3, {h}, {w}), got {self.rgb.shape}")
        if self.rgb.min() < 0 or self.rgb.max() > 1:
            raise ConfigurationError("rgb values must lie in [0, 1]")
        if self.mask.shape != (h, w):
            raise DimensionError(f"mask {self.mask.shape} != depth {self.depth.shape}")
        if not self.depth.valid.all():
            raise ConfigurationError("scene ground truth must be fully valid")


def _paint_objects(rng, H, W, object_count, min_separation):
    """One rendering attempt; returns (depth, labels) or None if an
    object ended up fully hidden behind nearer ones."""
    background = 1.5 + min_separation * object_count
    depth = np.full((H, W), background)
    labels = np.zeros((H, W), dtype=np.int64)
    depth_slots = 1.5 + min_separation * rng.permutation(object_count)
    rows = np.arange(H)[:, None]
    cols = np.arange(W)[None, :]
    shapes = []
    for label in range(1, object_count + 1):
        cy = rng.integers(0, H)
        cx = rng.integers(0, W)
        ry = int(rng.integers(2, max(3, H // 6) + 1))
        rx = int(rng.integers(2, max(3, W // 6) + 1))
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        if kind == "rect":
            hit = (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
        else:
            hit = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
        shapes.append((label, float(depth_slots[label - 1]), hit))
    for label, d, hit in sorted(shapes, key=lambda s: -s[1]):
        depth[hit] = d
        labels[hit] = label
    visible = np.bincount(labels.reshape(-1), minlength=object_count + 1)
    if (visible[1:] < 4).any():
        return None
    return depth, labels


def synth_scene(seed, H, W, object_count, min_separation=0.5):
    """Deterministic scene with ``object_count`` objects over a plane.

    Object depths are distinct multiples of min_separation, so every
    region boundary is a depth jump of at least that magnitude. Scenes
    where an object ends up fully occluded are re-rendered from the next
    sub-seed, keeping the label set exactly {0..object_count}.
    """
    if object_count < 0:
        raise ConfigurationError(f"object count must be >= 0, got {object_count}")
    if H % 16 or W % 16:
        raise ConfigurationError(f"scene dims must be multiples of 16, got {H}x{W}")
    if min_separation <= 0:
        raise ConfigurationError("minimum depth separation must be positive")
    for attempt in range(200):
        rng = substream(seed, "scene", attempt)
        painted = _paint_objects(rng, H, W, object_count, min_separation)
        if painted is not None:
            depth, labels = painted
            break
    else:
        raise ConfigurationError(
            f"could not place {object_count} mutually visible objects on {H}x{W}"
        )
    colors = rng.uniform(0.25, 0.95, size=(object_count + 1, 3))
    dmin, dmax = depth.min(), depth.max()
    shade = 1.0 - 0.35 * (depth - dmin) / max(dmax - dmin, 1e-9)
    light = 0.92 + 0.16 * np.linspace(0.0, 1.0, H)[:, None]
    rgb = colors[labels].transpose(2, 0, 1) * (shade * light)[None]
    return Scene(np.clip(rgb, 0.0, 1.0), DepthMap.full(depth), RegionMask(labels))


@dataclass(frozen=True)
class UniformPattern:
    n: int


@dataclass(frozen=True)
class GaussianPattern:
    n: int
    sigma: float


@dataclass(frozen=True)
class GridPattern:
    sy: int
    sx: int


def parse_pattern(text):
    """Parse 'uniform:N', 'gaussian:N:SIGMA', or 'grid:SY:SX'."""
    parts = str(text).split(":")
    try:
        if parts[0] == "uniform" and len(parts) == 2:
            return UniformPattern(int(parts[1]))
        if parts[0] == "gaussian" and len(parts) == 3:
            return GaussianPattern(int(parts[1]), float(parts[2]))
        if parts[0] == "grid" and len(parts) == 3:
            return GridPattern(int(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise ConfigurationError(f"bad pattern argument in {text!r}") from exc
    raise ConfigurationError(
        f"unknown sparsity pattern {text!r}; expected uniform:N, gaussian:N:SIGMA, or grid:SY:SX"
    )


def _gaussian_pixels(rng, H, W, n, sigma):
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    chosen = set()
    rounds = 0
    while len(chosen) < n:
        rounds += 1
        if rounds > 1000:
            raise ConfigurationError(
                f"gaussian sampler stalled: sigma={sigma} cannot reach {n} distinct pixels"
            )
        m = max(4 * (n - len(chosen)), 128)
        ys = np.rint(rng.normal(cy, sigma, size=m)).astype(np.int64)
        xs = np.rint(rng.normal(cx, sigma, size=m)).astype(np.int64)
        ok = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
        for y, x in zip(ys[ok], xs[ok]):
            chosen.add((int(y), int(x)))
            if len(chosen) == n:
                break
    return chosen


def sample_sparse(gt, pattern, seed):
    """Thin a fully valid map down to a sparse pattern of measurements."""
    if not gt.valid.all():
        raise UsageError("sparse sampling expects a fully valid ground truth")
    if isinstance(pattern, str):
        pattern = parse_pattern(pattern)
    H, W = gt.shape
    keep = np.zeros((H, W), dtype=bool)
    if isinstance(pattern, UniformPattern):
        n = pattern.n
        if not 1 <= n <= H * W:
            raise ConfigurationError(f"cannot draw {n} pixels from a {H}x{W} map")
        rng = substream(seed, "sample", "uniform")
        flat = rng.choice(H * W, size=n, replace=False)
        keep.reshape(-1)[flat] = True
    elif isinstance(pattern, GaussianPattern):
        n = pattern.n
        if not 1 <= n <= H * W:
            raise ConfigurationError(f"cannot draw {n} pixels from a {H}x{W} map")
        if pattern.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {pattern.sigma}")
        rng = substream(seed, "sample", "gaussian")
        for y, x in _gaussian_pixels(rng, H, W, n, pattern.sigma):
            keep[y, x] = True
    elif isinstance(pattern, GridPattern):
        if pattern.sy < 1 or pattern.sx < 1:
            raise ConfigurationError(f"grid strides must be >= 1, got {pattern}")
        keep[:: pattern.sy, :: pattern.sx] = True
    else:
        raise ConfigurationError(f"unknown pattern object {pattern!r}")
    return DepthMap(np.where(keep, gt.depth, 0.0), keep)


@dataclass
class DensityStats:
    tile: int
    tile_density: np.ndarray
    hist: np.ndarray
    bin_edges: np.ndarray

    @property
    def mean_density(self):
        return float(self.tile_density.mean())


def density_stats(d, tile, bins=10):
    """Valid-pixel fraction per tile plus a histogram over tiles."""
    H, W = d.shape
    if tile < 1 or H % tile or W % tile:
        raise ConfigurationError(f"tile {tile} must divide {H}x{W}")
    frac = (
        d.valid.reshape(H // tile, tile, W // tile, tile)
        .mean(axis=(1, 3))
        .astype(np.float64)
    )
    hist, edges = np.histogram(frac, bins=bins, range=(0.0, 1.0))
    return DensityStats(tile, frac, hist, edges)
