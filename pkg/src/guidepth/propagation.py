"""Local affinity propagation over depth fields.

One step of the update rule replaces each pixel with an affine blend of
itself and a small neighbor set:

    X'(a,b) = (1 - sum_k w_k(a,b)) X(a,b) + sum_k w_k(a,b) X(a+u_k, b+v_k)

Neighbor rules differ only in which offsets (u, v) participate at each
pixel: the directional three-way rule looks one column (or row) back,
the eight-neighbor rule uses the full ring around the pixel, and the
region-aware rule filters any base rule so neighbors must share the
pixel's region label. Offsets that leave the image are dropped, and a
pixel left with no neighbors is updated to itself.

Every pixel is updated simultaneously from the previous iterate (Jacobi
style), including for the directional rule; the classic row-sequential
recurrence would propagate information across the whole scan line in a
single step, whereas here information moves one column per iteration.

Affinities enter the step as raw per-offset weight maps. They become
stable after normalization: whenever the absolute weights at a pixel sum
past gamma (default 1), they are rescaled to sum to exactly gamma, which
keeps every update a contraction and preserves weight signs. A dense
(HW x HW) matrix oracle mirrors the whole procedure for verification.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, active_tape, _emit
from .errors import ConfigurationError, DimensionError, UsageError

DIRECTIONS = ("L2R", "R2L", "T2B", "B2T")

_DIRECTION_OFFSETS = {
    "L2R": ((-1, -1), (0, -1), (1, -1)),
    "R2L": ((-1, 1), (0, 1), (1, 1)),
    "T2B": ((-1, -1), (-1, 0), (-1, 1)),
    "B2T": ((1, -1), (1, 0), (1, 1)),
}

_CSPN_OFFSETS = tuple(
    (u, v) for u in (-1, 0, 1) for v in (-1, 0, 1) if (u, v) != (0, 0)
)


@dataclass
class RegionMask:
    """Integer region labels, one per pixel."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DimensionError(f"region mask must be 2-d, got rank {arr.ndim}")
        if not np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.int64)
            if not np.array_equal(arr, np.asarray(self.labels)):
                raise ConfigurationError("region labels must be integers")
        if arr.min() < 0:
            raise ConfigurationError("region labels must be >= 0")
        self.labels = arr

    @property
    def shape(self):
        return self.labels.shape

    def region_count(self):
        return int(self.labels.max()) + 1


@dataclass
class NeighborSet:
    """Offsets shared by all pixels plus a per-pixel validity stencil.

    valid[k, a, b] is True when offset k at pixel (a, b) lands inside
    the image (and inside the same region, for the region-aware rule).
    A batched stencil (B, K, H, W) is also accepted, for the case where
    every sample in a batch has its own region mask.
    """

    offsets: tuple
    valid: np.ndarray
    rule: str

    def __post_init__(self):
        k_axis = 0 if self.valid.ndim == 3 else 1
        if self.valid.ndim not in (3, 4) or self.valid.shape[k_axis] != len(self.offsets):
            raise DimensionError(
                f"validity stencil must be (K={len(self.offsets)}, H, W) or "
                f"(B, K, H, W), got {self.valid.shape}"
            )

    @property
    def k(self):
        return len(self.offsets)

    @property
    def grid_shape(self):
        return self.valid.shape[-2:]

    def counts(self):
        """Per-pixel neighbor counts."""
        return self.valid.sum(axis=-3)

    def total_links(self):
        return int(self.valid.sum())


def batch_neighbors(sets):
    """Stack per-sample neighbor sets sharing offsets into one batched set."""
    if not sets:
        raise UsageError("batch_neighbors needs at least one neighbor set")
    first = sets[0]
    for s in sets[1:]:
        if s.offsets != first.offsets or s.valid.shape != first.valid.shape:
            raise DimensionError("neighbor sets in a batch must share offsets and grid")
        if s.valid.ndim != 3:
            raise DimensionError("batch_neighbors stacks per-sample (K, H, W) stencils")
    return NeighborSet(first.offsets, np.stack([s.valid for s in sets]), first.rule)


def _inside_stencil(offsets, h, w):
    valid = np.zeros((len(offsets), h, w), dtype=bool)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    for k, (dy, dx) in enumerate(offsets):
        valid[k] = (
            (rows + dy >= 0) & (rows + dy < h) & (cols + dx >= 0) & (cols + dx < w)
        )
    return valid


def neighbors_spn(direction, H, W):
    """Three-way directional rule: the previous column (or row), three taps."""
    if direction not in DIRECTIONS:
        raise ConfigurationError(
            f"unknown scan direction {direction!r}; expected one of {DIRECTIONS}"
        )
    if H < 2 or W < 2:
        raise ConfigurationError(f"directional rule needs H, W >= 2, got {H}x{W}")
    offsets = _DIRECTION_OFFSETS[direction]
    return NeighborSet(offsets, _inside_stencil(offsets, H, W), f"spn_{direction}")


def neighbors_cspn(H, W):
    """Eight-neighbor ring around each pixel, center excluded."""
    if H < 1 or W < 1:
        raise ConfigurationError(f"grid must be at least 1x1, got {H}x{W}")
    return NeighborSet(_CSPN_OFFSETS, _inside_stencil(_CSPN_OFFSETS, H, W), "cspn")


def neighbors_raspn(base, mask, dilation=1):
    """Filter a base rule so neighbors stay inside the pixel's region.

    dilation scales the base offsets (a static stand-in for learned
    non-local sampling); validity is recomputed from scratch for the
    scaled offsets.
    """
    if dilation < 1:
        raise ConfigurationError(f"dilation must be >= 1, got {dilation}")
    h, w = base.grid_shape
    if mask.shape != (h, w):
        raise DimensionError(f"mask shape {mask.shape} != grid {h}x{w}")
    offsets = tuple((dy * dilation, dx * dilation) for dy, dx in base.offsets)
    inside = _inside_stencil(offsets, h, w)
    labels = mask.labels
    valid = np.zeros_like(inside)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    for k, (dy, dx) in enumerate(offsets):
        ok = inside[k]
        ny = np.clip(rows + dy, 0, h - 1)
        nx = np.clip(cols + dx, 0, w - 1)
        valid[k] = ok & (labels[ny, nx] == labels)
    return NeighborSet(offsets, valid, "raspn")


def normalize_affinity(raw, neighbors, gamma=1.0):
    """Mask invalid taps and clamp each pixel's absolute weight sum.

    Where sum_k |w_k| exceeds gamma the weights are rescaled by
    gamma / sum; elsewhere they pass through. Differentiable in raw.
    """
    if gamma <= 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    b, k, h, w = raw.shape
    if (k, h, w) != (neighbors.k, *neighbors.grid_shape):
        raise DimensionError(
            f"affinity {raw.shape} does not align with {neighbors.k} offsets "
            f"on a {neighbors.grid_shape} grid"
        )
    vmask = neighbors.valid.astype(np.float64)
    if vmask.ndim == 3:
        vmask = vmask[None]
    elif vmask.shape[0] != b:
        raise DimensionError(
            f"batched stencil covers {vmask.shape[0]} samples, affinity has {b}"
        )
    wmasked = raw.data * vmask
    s = np.abs(wmasked).sum(axis=1, keepdims=True)
    over = s > gamma
    fac = np.where(over, gamma / np.where(over, s, 1.0), 1.0)
    out = wmasked * fac

    def build():
        def backward(g):
            # out_k = w_k * fac(s), with dfac/dw_l = -gamma sign(w_l) / s^2
            # wherever the clamp is active.
            inner = (g * wmasked).sum(axis=1, keepdims=True)
            dfac = np.where(over, -gamma / np.where(over, s * s, 1.0), 0.0)
            draw = (g * fac + np.sign(wmasked) * dfac * inner) * vmask
            return (draw,)

        return backward

    return _emit(active_tape(raw), out, (raw,), build)


def spn_step(x, neighbors, affinity):
    """One simultaneous propagation update; differentiable in x and w."""
    b, c, h, w = x.shape
    if c != 1:
        raise DimensionError(f"propagation runs on single-channel fields, got C={c}")
    if (h, w) != neighbors.grid_shape:
        raise DimensionError(
            f"field {h}x{w} does not match neighbor grid {neighbors.grid_shape}"
        )
    if affinity.shape != (b, neighbors.k, h, w):
        raise DimensionError(
            f"affinity must be ({b}, {neighbors.k}, {h}, {w}), got {affinity.shape}"
        )
    stencil = neighbors.valid.astype(np.float64)
    vmask = Tensor(stencil[None] if stencil.ndim == 3 else stencil)
    w_eff = ad.mul(affinity, vmask)
    gathered = ad.stack_shifts(x, neighbors.offsets)
    agg = ad.channel_sum(ad.mul(w_eff, gathered))
    wsum = ad.channel_sum(w_eff)
    return ad.add(ad.sub(x, ad.mul(x, wsum)), agg)


def propagate(x0, neighbors, affinity, T):
    """Apply spn_step T times with one shared affinity field."""
    if T < 0:
        raise ConfigurationError(f"iteration count must be >= 0, got {T}")
    x = x0
    for _ in range(T):
        x = spn_step(x, neighbors, affinity)
    return x


def update_matrix(neighbors, affinity):
    """Dense (HW x HW) matrix of one propagation step for one sample.

    affinity is a raw (K, H, W) array; invalid taps are masked exactly
    as spn_step does. Row p carries 1 - sum(w) on the diagonal and w_k
    at each valid neighbor's column, so every row sums to 1.
    """
    if neighbors.valid.ndim != 3:
        raise UsageError("the dense oracle works on per-sample neighbor sets")
    h, w = neighbors.grid_shape
    k = neighbors.k
    aff = np.asarray(affinity, dtype=np.float64)
    if aff.shape != (k, h, w):
        raise DimensionError(f"expected affinity ({k}, {h}, {w}), got {aff.shape}")
    weff = aff * neighbors.valid
    n = h * w
    mat = np.zeros((n, n))
    diag = 1.0 - weff.sum(axis=0)
    mat[np.arange(n), np.arange(n)] = diag.reshape(-1)
    for ki, (dy, dx) in enumerate(neighbors.offsets):
        for a in range(h):
            for bcol in range(w):
                if not neighbors.valid[ki, a, bcol]:
                    continue
                p = a * w + bcol
                q = (a + dy) * w + (bcol + dx)
                mat[p, q] += weff[ki, a, bcol]
    return mat


def oracle_propagate(x0, neighbors, affinity, T):
    """Reference propagation by explicit dense matrix powers.

    Capped at 16x16 grids; the matrix is (HW)^2 and this exists only to
    cross-check the stencil implementation.
    """
    if T < 0:
        raise ConfigurationError(f"iteration count must be >= 0, got {T}")
    h, w = neighbors.grid_shape
    if h > 16 or w > 16:
        raise UsageError(f"oracle is capped at 16x16 grids, got {h}x{w}")
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (h, w):
        raise DimensionError(f"expected field ({h}, {w}), got {x.shape}")
    mat = update_matrix(neighbors, affinity)
    flat = x.reshape(-1)
    for _ in range(T):
        flat = mat @ flat
    return flat.reshape(h, w)
