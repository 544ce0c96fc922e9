"""Recurrent regularization of streamed cost slices.

A five-cell convolutional LSTM arranged as a U (full, half, quarter,
half, full resolution) consumes cost slices one depth at a time and
emits a single-channel score slice per depth.  Recurrence runs along
the depth axis: each cell keeps hidden/cell state from the previous
slice, so context accumulates across hypotheses while only one slice
is ever materialized.

Downsampling between cells is 2x2 max pooling with ceil semantics (odd
edges are replicated before pooling); upsampling is a stride-2 3x3
transposed convolution realized as zero interleaving plus an ordinary
convolution, cropped top-left to the skip connection's size.  Skip
connections concatenate the upsampled tensor with the same-resolution
downward cell output, upsampled part first.

A weight-free :func:`passthrough_regularizer` (negated mean cost) keeps
the rest of the pipeline usable without any training.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np
from scipy.special import expit

from . import memtrack
from .costvol import CostSlice
from .errors import SizeMismatchError, WeightGraphMismatchError
from .features import conv3x3

__all__ = [
    "HuLstmWeights",
    "LstmCellWeights",
    "LstmState",
    "ScoreSlice",
    "conv_lstm_cell",
    "hu_lstm_step",
    "max_pool2",
    "passthrough_regularizer",
    "random_hulstm_weights",
    "regularize_stream",
]


@dataclass(eq=False)
class ScoreSlice:
    """Regularized matching score at one swept depth, ``(height, width)``."""

    index: int
    score: np.ndarray

    def __post_init__(self) -> None:
        memtrack.stream_buffers.register(self)


@dataclass(eq=False)
class LstmCellWeights:
    """Gate convolutions of one ConvLSTM cell.

    Every gate convolves the channel concatenation ``[x, h]`` of the
    input and the previous hidden state, so each kernel has shape
    ``(hidden_ch, in_ch + hidden_ch, 3, 3)``.
    """

    w_input: np.ndarray
    b_input: np.ndarray
    w_forget: np.ndarray
    b_forget: np.ndarray
    w_output: np.ndarray
    b_output: np.ndarray
    w_candidate: np.ndarray
    b_candidate: np.ndarray

    @property
    def hidden_channels(self) -> int:
        return self.w_input.shape[0]

    @property
    def in_channels(self) -> int:
        return self.w_input.shape[1] - self.w_input.shape[0]

    @cached_property
    def _stacked(self) -> tuple[np.ndarray, np.ndarray]:
        kernel = np.concatenate(
            [self.w_input, self.w_forget, self.w_output, self.w_candidate])
        bias = np.concatenate(
            [self.b_input, self.b_forget, self.b_output, self.b_candidate])
        return kernel, bias

    def check(self, name: str, in_ch: int, hidden_ch: int) -> None:
        expect = (hidden_ch, in_ch + hidden_ch, 3, 3)
        for gate in ("input", "forget", "output", "candidate"):
            w = getattr(self, f"w_{gate}")
            b = getattr(self, f"b_{gate}")
            if w.shape != expect:
                raise WeightGraphMismatchError(
                    f"{name}.{gate}: kernel {w.shape}, expected {expect}")
            if b.shape != (hidden_ch,):
                raise WeightGraphMismatchError(f"{name}.{gate}: bias {b.shape}")


def conv_lstm_cell(x: np.ndarray, state: tuple[np.ndarray, np.ndarray] | None,
                   weights: LstmCellWeights) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """One ConvLSTM update; returns ``(output, (hidden, cell))``.

    Gates: input/forget/output are sigmoids, the candidate is a tanh;
    the new cell state is ``forget * cell + input * candidate`` and the
    output is ``output_gate * tanh(cell')``.  ``state is None`` starts
    from zeros.
    """
    height, width, _ = x.shape
    hidden_ch = weights.hidden_channels
    if state is None:
        h_prev = np.zeros((height, width, hidden_ch), dtype=np.float64)
        c_prev = np.zeros((height, width, hidden_ch), dtype=np.float64)
    else:
        h_prev, c_prev = state
        if h_prev.shape != (height, width, hidden_ch):
            raise SizeMismatchError(
                f"state {h_prev.shape} does not match input {(height, width, hidden_ch)}")
    z = np.concatenate([x, h_prev], axis=2)
    kernel, bias = weights._stacked
    gates = conv3x3(z, kernel, bias)
    gi, gf, go, gc = np.split(gates, 4, axis=2)
    gate_in = expit(gi)
    gate_forget = expit(gf)
    gate_out = expit(go)
    candidate = np.tanh(gc)
    c_new = gate_forget * c_prev + gate_in * candidate
    h_new = gate_out * np.tanh(c_new)
    return h_new, (h_new, c_new)


def max_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling with ceil output size (odd edges replicated)."""
    height, width, channels = x.shape
    oh = -(-height // 2)
    ow = -(-width // 2)
    padded = np.pad(x, ((0, 2 * oh - height), (0, 2 * ow - width), (0, 0)), mode="edge")
    return padded.reshape(oh, 2, ow, 2, channels).max(axis=(1, 3))


def _upsample_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                   out_hw: tuple[int, int]) -> np.ndarray:
    """Stride-2 transposed 3x3 convolution cropped to ``out_hw``."""
    height, width, channels = x.shape
    stuffed = np.zeros((2 * height, 2 * width, channels), dtype=np.float64)
    stuffed[::2, ::2] = x
    out = conv3x3(stuffed, kernel, bias)
    return out[:out_hw[0], :out_hw[1]]


# (cell name, input channels); hidden channels are uniform.  Cells 3 and
# 4 consume [upsampled deeper output, skip from the downward pass].
_HU_CELLS = (
    ("cell_full_down", 32),
    ("cell_half_down", 32),
    ("cell_quarter", 32),
    ("cell_half_up", 64),
    ("cell_full_up", 64),
)
HIDDEN_CH = 32


@dataclass(eq=False)
class HuLstmWeights:
    """Parameters of the U-shaped recurrent regularizer."""

    cells: tuple[LstmCellWeights, ...]
    up_mid_kernel: np.ndarray
    up_mid_bias: np.ndarray
    up_full_kernel: np.ndarray
    up_full_bias: np.ndarray
    head_kernel: np.ndarray
    head_bias: np.ndarray

    def validate(self) -> None:
        if len(self.cells) != len(_HU_CELLS):
            raise WeightGraphMismatchError(f"expected {len(_HU_CELLS)} cells, got {len(self.cells)}")
        in_ch = self.cells[0].in_channels
        for cell, (name, expect_in) in zip(self.cells, _HU_CELLS):
            expect = in_ch if name == "cell_full_down" else expect_in
            cell.check(name, expect, HIDDEN_CH)
        for name, kernel, bias in (
            ("up_mid", self.up_mid_kernel, self.up_mid_bias),
            ("up_full", self.up_full_kernel, self.up_full_bias),
        ):
            if kernel.shape != (HIDDEN_CH, HIDDEN_CH, 3, 3):
                raise WeightGraphMismatchError(f"{name}: kernel {kernel.shape}")
            if bias.shape != (HIDDEN_CH,):
                raise WeightGraphMismatchError(f"{name}: bias {bias.shape}")
        if self.head_kernel.shape != (1, HIDDEN_CH, 3, 3):
            raise WeightGraphMismatchError(f"head: kernel {self.head_kernel.shape}")
        if self.head_bias.shape != (1,):
            raise WeightGraphMismatchError(f"head: bias {self.head_bias.shape}")

    def to_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for cell, (name, _) in zip(self.cells, _HU_CELLS):
            for gate in ("input", "forget", "output", "candidate"):
                out[f"{name}.w_{gate}"] = getattr(cell, f"w_{gate}")
                out[f"{name}.b_{gate}"] = getattr(cell, f"b_{gate}")
        out["up_mid.kernel"] = self.up_mid_kernel
        out["up_mid.bias"] = self.up_mid_bias
        out["up_full.kernel"] = self.up_full_kernel
        out["up_full.bias"] = self.up_full_bias
        out["head.kernel"] = self.head_kernel
        out["head.bias"] = self.head_bias
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "HuLstmWeights":
        try:
            cells = tuple(
                LstmCellWeights(**{
                    f"{kind}_{gate}": tensors[f"{name}.{kind}_{gate}"]
                    for gate in ("input", "forget", "output", "candidate")
                    for kind in ("w", "b")
                })
                for name, _ in _HU_CELLS
            )
            weights = cls(
                cells=cells,
                up_mid_kernel=tensors["up_mid.kernel"],
                up_mid_bias=tensors["up_mid.bias"],
                up_full_kernel=tensors["up_full.kernel"],
                up_full_bias=tensors["up_full.bias"],
                head_kernel=tensors["head.kernel"],
                head_bias=tensors["head.bias"],
            )
        except KeyError as exc:
            raise WeightGraphMismatchError(f"missing tensor {exc.args[0]}") from exc
        weights.validate()
        return weights


@dataclass(eq=False)
class LstmState:
    """Hidden and cell tensors of all five cells at one recurrence step."""

    hidden: tuple[np.ndarray, ...]
    cell: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        memtrack.stream_buffers.register(self)


def _f32_round(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, shape).astype(np.float32).astype(np.float64)


def random_hulstm_weights(seed: int = 0, in_channels: int = 32) -> HuLstmWeights:
    """Seeded untrained weights; useful for shape and plumbing tests."""
    rng = np.random.default_rng(seed)
    cells = []
    for name, in_ch in _HU_CELLS:
        if name == "cell_full_down":
            in_ch = in_channels
        total = in_ch + HIDDEN_CH
        bound = 1.0 / np.sqrt(total * 9)
        cells.append(LstmCellWeights(**{
            f"{kind}_{gate}": (_f32_round(rng, (HIDDEN_CH, total, 3, 3), bound)
                               if kind == "w" else np.zeros(HIDDEN_CH))
            for gate in ("input", "forget", "output", "candidate")
            for kind in ("w", "b")
        }))
    bound = 1.0 / np.sqrt(HIDDEN_CH * 9)
    return HuLstmWeights(
        cells=tuple(cells),
        up_mid_kernel=_f32_round(rng, (HIDDEN_CH, HIDDEN_CH, 3, 3), bound),
        up_mid_bias=np.zeros(HIDDEN_CH),
        up_full_kernel=_f32_round(rng, (HIDDEN_CH, HIDDEN_CH, 3, 3), bound),
        up_full_bias=np.zeros(HIDDEN_CH),
        head_kernel=_f32_round(rng, (1, HIDDEN_CH, 3, 3), bound),
        head_bias=np.zeros(1),
    )


def hu_lstm_step(cost_slice: CostSlice, state: LstmState | None,
                 weights: HuLstmWeights) -> tuple[ScoreSlice, LstmState]:
    """Advance the recurrent U by one depth slice.

    ``state is None`` starts all cells from zeros.  Returns the score
    slice for this depth and the state to carry to the next one.
    """
    x = cost_slice.cost
    prev = [None] * 5 if state is None else [
        (state.hidden[i], state.cell[i]) for i in range(5)]

    h0, s0 = conv_lstm_cell(x, prev[0], weights.cells[0])
    h1, s1 = conv_lstm_cell(max_pool2(h0), prev[1], weights.cells[1])
    h2, s2 = conv_lstm_cell(max_pool2(h1), prev[2], weights.cells[2])
    u2 = _upsample_conv(h2, weights.up_mid_kernel, weights.up_mid_bias, h1.shape[:2])
    h3, s3 = conv_lstm_cell(np.concatenate([u2, h1], axis=2), prev[3], weights.cells[3])
    u3 = _upsample_conv(h3, weights.up_full_kernel, weights.up_full_bias, h0.shape[:2])
    h4, s4 = conv_lstm_cell(np.concatenate([u3, h0], axis=2), prev[4], weights.cells[4])
    score = conv3x3(h4, weights.head_kernel, weights.head_bias)[:, :, 0]

    states = (s0, s1, s2, s3, s4)
    new_state = LstmState(
        hidden=tuple(s[0] for s in states),
        cell=tuple(s[1] for s in states),
    )
    return ScoreSlice(index=cost_slice.index, score=score), new_state


def regularize_stream(slices: Iterable[CostSlice], weights: HuLstmWeights,
                      state: LstmState | None = None) -> Iterator[ScoreSlice]:
    """Map a cost-slice stream to a score-slice stream, threading state."""
    for cost_slice in slices:
        score, state = hu_lstm_step(cost_slice, state, weights)
        yield score


def passthrough_regularizer(slices: Iterable[CostSlice]) -> Iterator[ScoreSlice]:
    """Weight-free fallback: score is the negated channel-mean cost.

    Low variance means high photo-consistency, so negation makes larger
    scores better, matching the learned head's orientation.
    """
    for cost_slice in slices:
        yield ScoreSlice(index=cost_slice.index,
                         score=-cost_slice.cost.mean(axis=2))
