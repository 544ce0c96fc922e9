"""Cross-view filtering of depth maps and fusion into a point cloud.

A depth estimate survives only if other views agree with it.  Agreement
between a reference pixel and one source view is scored by the round
trip reproject -> source depth lookup -> reproject back: the spatial
error ``xi_p`` (pixels) and relative depth error ``xi_d`` combine into
``c = exp(-(xi_p + lam * xi_d))``, a matching score in (0, 1] that is 0
when the round trip is invalid.  Summing ``c`` over all source views
gives a per-pixel consistency total that is thresholded dynamically:
many mediocre agreements or a few excellent ones both pass.  The
classical baseline, counting views whose errors beat fixed thresholds,
is provided for comparison.

Fusion walks the views in order, back-projecting surviving pixels at a
consistency-weighted average depth, and marks matched source pixels as
consumed so overlapping views do not duplicate the same surface sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .depthmap import DepthMap
from .geometry import (
    Camera,
    back_project_grid,
    reproject,
    reproject_chain_map,
    reproject_map,
    reprojection_errors,
    reprojection_errors_map,
)

__all__ = [
    "FusionParams",
    "PointCloud",
    "ViewEstimate",
    "consistency_from_errors",
    "dynamic_consistency_map",
    "dynamic_filter",
    "fixed_threshold_filter",
    "fuse_point_cloud",
    "pairwise_consistency",
    "probability_filter",
]

# A source pixel is folded into a fused point when its matching score
# exceeds this; equivalent to xi_p + lam * xi_d < 3.
MATCH_SCORE_FLOOR = float(np.exp(-3.0))


@dataclass(eq=False)
class ViewEstimate:
    """One view's camera, estimated depth, confidence, and image."""

    camera: Camera
    depth: DepthMap
    confidence: np.ndarray
    image: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.confidence.shape != self.depth.data.shape:
            raise ValueError("confidence shape must match depth map")


@dataclass(frozen=True)
class FusionParams:
    """Thresholds for filtering and fusion.

    ``lam`` weighs relative depth error against pixel error inside the
    matching score; ``tau`` is the dynamic consistency floor; ``phi``
    the minimum estimator confidence; ``tau1``/``tau2``/``min_views``
    parameterize the fixed-threshold baseline.
    """

    lam: float = 200.0
    tau: float = 1.8
    phi: float = 0.4
    tau1: float = 1.0
    tau2: float = 0.01
    min_views: int = 3

    def __post_init__(self) -> None:
        if self.lam < 0 or self.tau < 0 or not (0.0 <= self.phi <= 1.0):
            raise ValueError("lam and tau must be non-negative, phi in [0, 1]")
        if self.tau1 <= 0 or self.tau2 <= 0 or self.min_views < 1:
            raise ValueError("tau1, tau2 must be positive and min_views >= 1")


@dataclass(eq=False)
class PointCloud:
    """Fused 3-d points with optional per-point colors."""

    xyz: np.ndarray
    rgb: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if self.rgb is not None:
            self.rgb = np.asarray(self.rgb, dtype=np.uint8).reshape(-1, 3)
            if len(self.rgb) != len(self.xyz):
                raise ValueError("rgb count must match point count")

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls, with_rgb: bool = False) -> "PointCloud":
        rgb = np.zeros((0, 3), dtype=np.uint8) if with_rgb else None
        return cls(np.zeros((0, 3)), rgb)


def consistency_from_errors(xi_p, xi_d, lam: float = 200.0):
    """Matching score ``exp(-(xi_p + lam * xi_d))`` of a reprojection."""
    return np.exp(-(np.asarray(xi_p, dtype=np.float64) + lam * np.asarray(xi_d, dtype=np.float64)))


def probability_filter(view: ViewEstimate, phi: float = 0.4) -> ViewEstimate:
    """Mask out pixels whose estimator confidence is below ``phi``."""
    kept = view.depth.mask & (view.confidence >= phi)
    return ViewEstimate(
        camera=view.camera,
        depth=DepthMap(view.depth.data, kept),
        confidence=view.confidence,
        image=view.image,
    )


def pairwise_consistency(ref: ViewEstimate, src: ViewEstimate, pixel,
                         lam: float = 200.0) -> float:
    """Matching score of one reference pixel against one source view.

    Returns 0.0 when the reference pixel is invalid or the round trip
    through the source depth map fails.
    """
    x, y = int(round(pixel[0])), int(round(pixel[1]))
    if not ref.depth.mask[y, x]:
        return 0.0
    depth = float(ref.depth.data[y, x])
    result = reproject(ref.camera, src.camera, (pixel[0], pixel[1]), depth, src.depth)
    if result is None:
        return 0.0
    pixel2, depth2 = result
    xi_p, xi_d = reprojection_errors(pixel, pixel2, depth, depth2)
    return float(consistency_from_errors(xi_p, xi_d, lam))


def _consistency_grid(ref: ViewEstimate, srcs: Sequence[ViewEstimate],
                      lam: float):
    """Per-source matching scores and reprojection data for all pixels.

    Returns ``(scores (n_src, H, W), d2 (n_src, H, W))`` where invalid
    round trips score 0 and carry NaN reprojected depth.
    """
    height, width = ref.depth.data.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    depths = ref.depth.data
    scores = np.zeros((len(srcs), height, width), dtype=np.float64)
    d2_all = np.full((len(srcs), height, width), np.nan)
    for j, src in enumerate(srcs):
        p2, d2, valid = reproject_map(
            ref.camera, src.camera, xs, ys, depths, src.depth)
        with np.errstate(invalid="ignore"):
            xi_p, xi_d = reprojection_errors_map(xs, ys, p2, depths, d2)
            c = consistency_from_errors(xi_p, xi_d, lam)
        scores[j] = np.where(valid & ref.depth.mask, np.nan_to_num(c), 0.0)
        d2_all[j] = np.where(valid, d2, np.nan)
    return scores, d2_all


def dynamic_consistency_map(ref: ViewEstimate, srcs: Sequence[ViewEstimate],
                            lam: float = 200.0) -> np.ndarray:
    """Total matching score of each reference pixel over all sources.

    The reference itself never appears in the sum; invalid pixels and
    failed round trips contribute 0.
    """
    scores, _ = _consistency_grid(ref, srcs, lam)
    return scores.sum(axis=0)


def dynamic_filter(ref: ViewEstimate, srcs: Sequence[ViewEstimate],
                   params: FusionParams = FusionParams()) -> ViewEstimate:
    """Keep pixels that pass both the confidence and consistency floors.

    A pixel survives when its confidence is at least ``params.phi`` and
    its summed matching score over the (unmodified) source views is at
    least ``params.tau``.  Sources are used as given; apply
    :func:`probability_filter` to them first if their low-confidence
    pixels should not vouch for anyone.
    """
    filtered = probability_filter(ref, params.phi)
    total = dynamic_consistency_map(filtered, srcs, params.lam)
    kept = filtered.depth.mask & (total >= params.tau)
    return ViewEstimate(
        camera=ref.camera,
        depth=DepthMap(ref.depth.data, kept),
        confidence=ref.confidence,
        image=ref.image,
    )


def fixed_threshold_filter(ref: ViewEstimate, srcs: Sequence[ViewEstimate],
                           params: FusionParams = FusionParams()) -> ViewEstimate:
    """Classical consistency baseline with hard per-view thresholds.

    A source view supports a pixel when its round trip succeeds with
    ``xi_p < tau1`` and ``xi_d < tau2`` (strict); a pixel is kept when
    at least ``min_views`` sources support it.
    """
    height, width = ref.depth.data.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    depths = ref.depth.data
    support = np.zeros((height, width), dtype=np.int64)
    for src in srcs:
        p2, d2, valid = reproject_map(
            ref.camera, src.camera, xs, ys, depths, src.depth)
        with np.errstate(invalid="ignore"):
            xi_p, xi_d = reprojection_errors_map(xs, ys, p2, depths, d2)
            good = valid & (xi_p < params.tau1) & (xi_d < params.tau2)
        support += np.where(ref.depth.mask, good, False)
    kept = ref.depth.mask & (support >= params.min_views)
    return ViewEstimate(
        camera=ref.camera,
        depth=DepthMap(ref.depth.data, kept),
        confidence=ref.confidence,
        image=ref.image,
    )


def fuse_point_cloud(views: Sequence[ViewEstimate], lam: float = 200.0,
                     ) -> PointCloud:
    """Merge filtered views into a single deduplicated point cloud.

    Views are processed in order.  Each still-unconsumed valid pixel of
    the current reference becomes one point at the consistency-weighted
    average of its own depth (weight 1) and the reprojected depths of
    matching sources (weight ``c``, counted only when ``c`` exceeds
    ``exp(-3)``); the matched source pixels are marked consumed so later
    views do not emit them again.  Colors come from the reference image
    when every view provides one.
    """
    if not views:
        return PointCloud.empty()
    consumed = [np.zeros(v.depth.data.shape, dtype=bool) for v in views]
    want_rgb = all(v.image is not None for v in views)
    points: list[np.ndarray] = []
    colors: list[np.ndarray] = []
    for i, ref in enumerate(views):
        active = ref.depth.mask & ~consumed[i]
        if not active.any():
            continue
        ys, xs = np.nonzero(active)
        fx = xs.astype(np.float64)
        fy = ys.astype(np.float64)
        depths = ref.depth.data[ys, xs]
        weight = np.ones(len(xs), dtype=np.float64)
        depth_acc = depths.copy()
        for j, src in enumerate(views):
            if j == i:
                continue
            q, p2, d2, valid = reproject_chain_map(
                ref.camera, src.camera, fx, fy, depths, src.depth)
            with np.errstate(invalid="ignore"):
                xi_p, xi_d = reprojection_errors_map(fx, fy, p2, depths, d2)
                c = np.nan_to_num(consistency_from_errors(xi_p, xi_d, lam))
            matched = valid & (c > MATCH_SCORE_FLOOR)
            weight += np.where(matched, c, 0.0)
            depth_acc += np.where(matched, c * np.nan_to_num(d2), 0.0)
            if matched.any():
                # The matched source pixel is the same nearest pixel the
                # depth lookup used; mark it so view j never re-emits it.
                qx = np.floor(q[matched, 0] + 0.5).astype(np.intp)
                qy = np.floor(q[matched, 1] + 0.5).astype(np.intp)
                consumed[j][qy, qx] = True
        fused_depth = depth_acc / weight
        points.append(back_project_grid(ref.camera, fx, fy, fused_depth))
        if want_rgb:
            img = ref.image
            if img.ndim == 2:
                img = np.stack([img] * 3, axis=2)
            vals = np.clip(np.rint(img[ys, xs] * 255.0), 0, 255).astype(np.uint8)
            colors.append(vals)
    if not points:
        return PointCloud.empty(want_rgb)
    xyz = np.concatenate(points)
    rgb = np.concatenate(colors) if want_rgb else None
    return PointCloud(xyz, rgb)
