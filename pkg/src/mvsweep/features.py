"""Dense per-pixel feature extraction.

Two extractors share one output contract, a ``(height, width, 32)``
feature map at input resolution:

* :func:`drenet_forward`, a learned dilated-convolution network whose
  parallel branches mix receptive-field sizes without downsampling, and
* :func:`photometric_features`, a fixed hand-built descriptor (grayscale,
  mean-removed 3x3 patch, image gradients) that needs no weights and is
  used by the self-contained pipeline.

All convolutions are 3x3, stride 1, zero-padded by their dilation so the
spatial size never changes.  Arrays are ``(height, width, channels)``
float64; kernels are ``(out_ch, in_ch, 3, 3)`` cross-correlation taps.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ChannelMismatchError, WeightGraphMismatchError

__all__ = [
    "ConvLayerWeights",
    "DrenetWeights",
    "conv2d",
    "conv3x3",
    "drenet_forward",
    "group_norm_relu",
    "photometric_features",
    "random_drenet_weights",
]

GN_EPS = 1e-5
GROUP_SIZE = 8  # channels per group-norm group


def conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
            dilation: int = 1) -> np.ndarray:
    """Same-size 3x3 cross-correlation with zero padding of ``dilation``.

    ``out[y, x, o] = bias[o] + sum_{ky,kx,c} kernel[o, c, ky, kx] *
    x[y + (ky-1)*dilation, x + (kx-1)*dilation, c]`` with out-of-image
    taps reading zero.
    """
    height, width, in_ch = x.shape
    out_ch = kernel.shape[0]
    if kernel.shape != (out_ch, in_ch, 3, 3):
        raise ChannelMismatchError(
            f"kernel {kernel.shape} does not accept {in_ch}-channel input")
    d = dilation
    padded = np.pad(x, ((d, d), (d, d), (0, 0)))
    out = np.zeros((height, width, out_ch), dtype=np.float64)
    flat = out.reshape(-1, out_ch)
    for ky in range(3):
        for kx in range(3):
            tap = kernel[:, :, ky, kx]
            window = padded[ky * d:ky * d + height, kx * d:kx * d + width, :]
            flat += window.reshape(-1, in_ch) @ tap.T
    if bias is not None:
        out += bias
    return out


def group_norm_relu(x: np.ndarray, scale: np.ndarray, shift: np.ndarray,
                    groups: int, eps: float = GN_EPS) -> np.ndarray:
    """Group normalization over (H, W, group channels), then ReLU.

    Statistics are computed per group across all pixels of this single
    map; there is no batch dimension and no running average.
    """
    height, width, channels = x.shape
    if channels % groups != 0:
        raise ChannelMismatchError(f"{groups} groups do not divide {channels} channels")
    g = x.reshape(height, width, groups, channels // groups)
    mean = g.mean(axis=(0, 1, 3), keepdims=True)
    var = g.var(axis=(0, 1, 3), keepdims=True)
    normed = ((g - mean) / np.sqrt(var + eps)).reshape(height, width, channels)
    return np.maximum(normed * scale + shift, 0.0)


@dataclass(eq=False)
class ConvLayerWeights:
    """One 3x3 convolution, optionally followed by group norm + ReLU.

    ``gn_scale is None`` marks a bare convolution (used for network
    heads); otherwise the layer applies :func:`group_norm_relu` with
    ``groups`` groups after the convolution.
    """

    kernel: np.ndarray
    bias: np.ndarray
    dilation: int = 1
    gn_scale: np.ndarray | None = None
    gn_shift: np.ndarray | None = None
    groups: int = 1

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    def check(self, name: str, in_ch: int, out_ch: int, dilation: int) -> None:
        if self.kernel.shape != (out_ch, in_ch, 3, 3):
            raise WeightGraphMismatchError(
                f"{name}: kernel {self.kernel.shape}, expected {(out_ch, in_ch, 3, 3)}")
        if self.bias.shape != (out_ch,):
            raise WeightGraphMismatchError(f"{name}: bias {self.bias.shape}")
        if self.dilation != dilation:
            raise WeightGraphMismatchError(
                f"{name}: dilation {self.dilation}, expected {dilation}")
        if self.gn_scale is not None:
            if self.gn_scale.shape != (out_ch,) or self.gn_shift.shape != (out_ch,):
                raise WeightGraphMismatchError(f"{name}: group-norm parameter shapes")
            if out_ch % self.groups != 0:
                raise WeightGraphMismatchError(
                    f"{name}: {self.groups} groups do not divide {out_ch} channels")


def conv2d(x: np.ndarray, layer: ConvLayerWeights) -> np.ndarray:
    """Apply one :class:`ConvLayerWeights` (conv, then optional GN+ReLU)."""
    out = conv3x3(x, layer.kernel, layer.bias, layer.dilation)
    if layer.gn_scale is not None:
        out = group_norm_relu(out, layer.gn_scale, layer.gn_shift, layer.groups)
    return out


# Layer graph: (name, in_ch, out_ch, dilation, input source).  Sources:
# the stem chains, then three branches read the shared 32-channel trunk
# at dilations 1/3/4, and the head fuses their concatenation.
_DRENET_LAYERS = (
    ("stem0", 3, 16, 1),
    ("stem1", 16, 16, 1),
    ("grow", 16, 32, 2),
    ("branch_a", 32, 32, 1),
    ("branch_b0", 32, 32, 3),
    ("branch_b1", 32, 32, 1),
    ("branch_c0", 32, 32, 4),
    ("branch_c1", 32, 32, 1),
    ("fuse", 96, 32, 1),
)


@dataclass(eq=False)
class DrenetWeights:
    """Parameters of the dilated feature network, one field per layer."""

    stem0: ConvLayerWeights
    stem1: ConvLayerWeights
    grow: ConvLayerWeights
    branch_a: ConvLayerWeights
    branch_b0: ConvLayerWeights
    branch_b1: ConvLayerWeights
    branch_c0: ConvLayerWeights
    branch_c1: ConvLayerWeights
    fuse: ConvLayerWeights

    def validate(self) -> None:
        in_ch = self.stem0.in_channels
        for name, expect_in, out_ch, dilation in _DRENET_LAYERS:
            expect = in_ch if name == "stem0" else expect_in
            getattr(self, name).check(name, expect, out_ch, dilation)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, *_ in _DRENET_LAYERS:
            layer: ConvLayerWeights = getattr(self, name)
            out[f"{name}.kernel"] = layer.kernel
            out[f"{name}.bias"] = layer.bias
            out[f"{name}.gn_scale"] = layer.gn_scale
            out[f"{name}.gn_shift"] = layer.gn_shift
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "DrenetWeights":
        layers = {}
        for name, _, out_ch, dilation in _DRENET_LAYERS:
            try:
                layers[name] = ConvLayerWeights(
                    kernel=tensors[f"{name}.kernel"],
                    bias=tensors[f"{name}.bias"],
                    dilation=dilation,
                    gn_scale=tensors[f"{name}.gn_scale"],
                    gn_shift=tensors[f"{name}.gn_shift"],
                    groups=max(out_ch // GROUP_SIZE, 1),
                )
            except KeyError as exc:
                raise WeightGraphMismatchError(f"missing tensor {exc.args[0]}") from exc
        weights = cls(**layers)
        weights.validate()
        return weights


def _random_layer(rng: np.random.Generator, in_ch: int, out_ch: int,
                  dilation: int, gn: bool = True) -> ConvLayerWeights:
    bound = 1.0 / np.sqrt(in_ch * 9)
    # Round through float32 so container round trips are lossless.
    kernel = rng.uniform(-bound, bound, (out_ch, in_ch, 3, 3))
    kernel = kernel.astype(np.float32).astype(np.float64)
    bias = np.zeros(out_ch, dtype=np.float64)
    if not gn:
        return ConvLayerWeights(kernel=kernel, bias=bias, dilation=dilation)
    return ConvLayerWeights(
        kernel=kernel,
        bias=bias,
        dilation=dilation,
        gn_scale=np.ones(out_ch, dtype=np.float64),
        gn_shift=np.zeros(out_ch, dtype=np.float64),
        groups=max(out_ch // GROUP_SIZE, 1),
    )


def random_drenet_weights(seed: int = 0, in_channels: int = 3) -> DrenetWeights:
    """Seeded untrained weights; useful for shape and plumbing tests."""
    rng = np.random.default_rng(seed)
    layers = {}
    for name, in_ch, out_ch, dilation in _DRENET_LAYERS:
        if name == "stem0":
            in_ch = in_channels
        layers[name] = _random_layer(rng, in_ch, out_ch, dilation)
    return DrenetWeights(**layers)


def drenet_forward(image: np.ndarray, weights: DrenetWeights) -> np.ndarray:
    """Run the dilated feature network on one image.

    ``image`` is ``(height, width)`` or ``(height, width, channels)``
    with values in [0, 1]; a single-channel input is replicated to the
    channel count the stem expects.  Output is ``(height, width, 32)``
    at the input resolution.
    """
    weights.validate()
    if image.ndim == 2:
        image = image[:, :, None]
    want = weights.stem0.in_channels
    if image.shape[2] == 1 and want > 1:
        image = np.repeat(image, want, axis=2)
    if image.shape[2] != want:
        raise ChannelMismatchError(
            f"image has {image.shape[2]} channels, stem expects {want}")
    x = np.asarray(image, dtype=np.float64)
    x = conv2d(x, weights.stem0)
    x = conv2d(x, weights.stem1)
    trunk = conv2d(x, weights.grow)
    a = conv2d(trunk, weights.branch_a)
    b = conv2d(conv2d(trunk, weights.branch_b0), weights.branch_b1)
    c = conv2d(conv2d(trunk, weights.branch_c0), weights.branch_c1)
    return conv2d(np.concatenate([a, b, c], axis=2), weights.fuse)


_GRAY = np.array([0.299, 0.587, 0.114])


def photometric_features(image: np.ndarray) -> np.ndarray:
    """Fixed 32-channel descriptor, no learned weights.

    Channel layout: [0] grayscale; [1:10] the 3x3 neighborhood of each
    pixel minus its own mean (row-major offsets, edge-replicated at the
    border, so constant images yield exact zeros); [10] and [11] central
    x/y gradients; the rest zero padding up to the common width.
    """
    if image.ndim == 3:
        if image.shape[2] == 3:
            gray = np.asarray(image, dtype=np.float64) @ _GRAY
        elif image.shape[2] == 1:
            gray = np.asarray(image[:, :, 0], dtype=np.float64)
        else:
            raise ChannelMismatchError(f"expected 1 or 3 channels, got {image.shape[2]}")
    elif image.ndim == 2:
        gray = np.asarray(image, dtype=np.float64)
    else:
        raise ChannelMismatchError(f"expected 2-d or 3-d image, got shape {image.shape}")
    height, width = gray.shape
    out = np.zeros((height, width, 32), dtype=np.float64)
    out[:, :, 0] = gray
    padded = np.pad(gray, 1, mode="edge")
    patch = np.empty((height, width, 9), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            patch[:, :, dy * 3 + dx] = padded[dy:dy + height, dx:dx + width]
    out[:, :, 1:10] = patch - patch.mean(axis=2, keepdims=True)
    out[:, :, 10] = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    out[:, :, 11] = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return out
