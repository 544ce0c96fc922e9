"""Depth maps with validity masks and nearest-pixel lookup."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DepthMap"]


@dataclass(eq=False)
class DepthMap:
    """A per-pixel depth image plus a boolean validity mask.

    Lookup at continuous coordinates uses the nearest pixel.  A query is
    invalid (NaN result) when it falls outside the continuous image
    domain ``[0, width - 1] x [0, height - 1]`` or lands on a masked
    pixel.
    """

    data: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"depth data must be 2-d, got shape {self.data.shape}")
        if self.mask is None:
            self.mask = np.isfinite(self.data)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.data.shape:
                raise ValueError("mask shape must match depth data")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())

    def copy(self) -> "DepthMap":
        return DepthMap(self.data.copy(), self.mask.copy())

    def depth_at(self, x: float, y: float) -> float:
        """Nearest-pixel depth at a continuous coordinate, NaN if invalid."""
        if not (0.0 <= x <= self.width - 1.0 and 0.0 <= y <= self.height - 1.0):
            return float("nan")
        ix = int(np.floor(x + 0.5))
        iy = int(np.floor(y + 0.5))
        if not self.mask[iy, ix]:
            return float("nan")
        return float(self.data[iy, ix])

    def depth_grid(self, xs, ys) -> np.ndarray:
        """Vectorized :meth:`depth_at`; NaN where invalid."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        inside = (
            (xs >= 0.0)
            & (xs <= self.width - 1.0)
            & (ys >= 0.0)
            & (ys <= self.height - 1.0)
        )
        ix = np.floor(np.where(inside, xs, 0.0) + 0.5).astype(np.intp)
        iy = np.floor(np.where(inside, ys, 0.0) + 0.5).astype(np.intp)
        out = np.where(inside & self.mask[iy, ix], self.data[iy, ix], np.nan)
        return out
