"""Plane-sweep matching cost, one depth slice at a time.

For each depth hypothesis the reference view's feature map is compared
against every source view's features warped onto that depth plane.  The
per-pixel, per-channel cost is the population variance over the set
{reference, visible warped sources}; pixels seen by no source fall back
to the reference alone (zero variance) and are identifiable through the
slice's view count.

Slices are produced lazily by :func:`cost_volume_stream` so downstream
consumers never hold the full depth dimension in memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import memtrack
from .errors import SizeMismatchError
from .geometry import Camera, HypothesisSpace, sample_hypotheses, warp_grid

__all__ = [
    "CostSlice",
    "bilinear_sample",
    "build_cost_slice",
    "cost_volume_stream",
]


@dataclass(eq=False)
class CostSlice:
    """Matching cost at one swept depth.

    ``cost`` is ``(height, width, channels)`` variance, ``valid_views``
    the per-pixel count of views that contributed (reference included,
    so the minimum is 1).
    """

    index: int
    depth: float
    cost: np.ndarray
    valid_views: np.ndarray

    def __post_init__(self) -> None:
        memtrack.stream_buffers.register(self)


def bilinear_sample(values: np.ndarray, coords: np.ndarray):
    """Sample ``(height, width, channels)`` values at continuous coords.

    ``coords`` is ``(..., 2)`` as (x, y).  Returns ``(sampled, valid)``
    where queries outside ``[0, width-1] x [0, height-1]`` are zero and
    flagged invalid.
    """
    height, width = values.shape[:2]
    xs = coords[..., 0]
    ys = coords[..., 1]
    valid = (xs >= 0.0) & (xs <= width - 1.0) & (ys >= 0.0) & (ys <= height - 1.0)
    xc = np.clip(np.where(valid, xs, 0.0), 0.0, width - 1.0)
    yc = np.clip(np.where(valid, ys, 0.0), 0.0, height - 1.0)
    x0 = np.minimum(np.floor(xc), width - 2).astype(np.intp) if width > 1 else np.zeros_like(xc, dtype=np.intp)
    y0 = np.minimum(np.floor(yc), height - 2).astype(np.intp) if height > 1 else np.zeros_like(yc, dtype=np.intp)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    top = values[y0, x0] * (1.0 - fx) + values[y0, x1] * fx
    bottom = values[y1, x0] * (1.0 - fx) + values[y1, x1] * fx
    sampled = top * (1.0 - fy) + bottom * fy
    sampled = np.where(valid[..., None], sampled, 0.0)
    return sampled, valid


def build_cost_slice(
    ref_feat: np.ndarray,
    src_feats: Sequence[np.ndarray],
    ref_cam: Camera,
    src_cams: Sequence[Camera],
    depth: float,
    index: int = 0,
) -> CostSlice:
    """Variance cost of one depth hypothesis across all views.

    All feature maps must share the reference's spatial size and channel
    count.  The variance at a pixel runs over the reference value plus
    every source whose warped sample is valid there; the divisor is that
    per-pixel view count (population variance).
    """
    height, width, channels = ref_feat.shape
    for feat in src_feats:
        if feat.shape != ref_feat.shape:
            raise SizeMismatchError(
                f"source features {feat.shape} do not match reference {ref_feat.shape}")
    acc = ref_feat.astype(np.float64).copy()
    count = np.ones((height, width), dtype=np.int64)
    warped: list[tuple[np.ndarray, np.ndarray]] = []
    for feat, cam in zip(src_feats, src_cams):
        coords, in_front = warp_grid(ref_cam, cam, depth, width, height)
        sampled, in_bounds = bilinear_sample(feat, coords)
        ok = in_front & in_bounds
        sampled = np.where(ok[..., None], sampled, 0.0)
        warped.append((sampled, ok))
        acc += sampled
        count += ok
    mean = acc / count[..., None]
    var = np.square(ref_feat - mean)
    for sampled, ok in warped:
        var += np.where(ok[..., None], np.square(sampled - mean), 0.0)
    var /= count[..., None]
    return CostSlice(index=index, depth=float(depth), cost=var, valid_views=count)


def cost_volume_stream(
    ref_feat: np.ndarray,
    src_feats: Sequence[np.ndarray],
    ref_cam: Camera,
    src_cams: Sequence[Camera],
    space: HypothesisSpace,
) -> Iterator[CostSlice]:
    """Yield cost slices for every hypothesis in increasing depth order."""
    for index, depth in enumerate(sample_hypotheses(space)):
        yield build_cost_slice(ref_feat, src_feats, ref_cam, src_cams, depth, index)
