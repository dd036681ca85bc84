"""
Autodiff - Minimal reverse-mode differentiation on a tape

Provides exactly the layers SALF-MOS needs: 1-D convolution (kernel 3,
stride 1, padding 1), 1-D batch normalization, ReLU, pairwise max/avg
pooling, fully connected layers, flatten/concat plumbing and L1 loss.
All math runs in float64.

Ops record themselves on a Tape only when a tape is passed and at least one
input requires gradients; without a tape they are plain numpy functions, which
is how inference runs.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    DegenerateBatch,
    NotOnTape,
    NotScalar,
    OddLength,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Tensor:
    """Float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(
        self,
        values: Union[np.ndarray, Sequence, float],
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.values = np.array(values, dtype=np.float64)
        if 0 in self.values.shape:
            raise ShapeMismatch(f"Tensor dims must be >= 1, got {self.values.shape}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Record:
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


@dataclass
class Tape:
    """
    Ordered record of operations.

    Backward walks the records in exact reverse order of recording and
    accumulates gradients additively, so a tensor consumed twice receives
    the sum of both paths.
    """

    records: List[_Record] = field(default_factory=list)

    def record(
        self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn
    ) -> Tensor:
        self.records.append(_Record(output, tuple(inputs), backward))
        return output

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> Dict[Tensor, np.ndarray]:
        """
        Reverse-mode sweep from a scalar loss.

        Returns:
            Gradient for every leaf tensor with ``requires_grad`` that the
            loss depends on; the same arrays are left in ``tensor.grad``.
        """
        if loss.values.size != 1:
            raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
        if not any(r.output is loss for r in self.records):
            raise NotOnTape("Loss tensor was not recorded on this tape")

        produced = {id(r.output) for r in self.records}
        for r in self.records:
            r.output.grad = None
            for tensor in r.inputs:
                tensor.grad = None
        loss.grad = np.ones_like(loss.values)

        leaves: Dict[int, Tensor] = {}
        for r in reversed(self.records):
            upstream = r.output.grad
            if upstream is None:
                continue
            grads = r.backward(upstream)
            for tensor, g in zip(r.inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
                if id(tensor) not in produced:
                    leaves[id(tensor)] = tensor

        return {t: t.grad for t in leaves.values()}


def _needs_tape(tape: Optional[Tape], *inputs: Tensor) -> bool:
    return tape is not None and any(t.requires_grad for t in inputs)


def _result(values: np.ndarray, tape: Optional[Tape], inputs, backward) -> Tensor:
    if _needs_tape(tape, *inputs):
        out = Tensor(values, requires_grad=True)
        return tape.record(out, inputs, backward)
    return Tensor(values)


# Layers


def conv1d(
    x: Tensor, w: Tensor, b: Tensor, tape: Optional[Tape] = None
) -> Tensor:
    """
    Cross-correlation with kernel 3, stride 1, zero padding 1.

    x: (B, Cin, L), w: (Cout, Cin, 3), b: (Cout,) -> (B, Cout, L)
    """
    if x.values.ndim != 3 or w.values.ndim != 3 or b.values.ndim != 1:
        raise ShapeMismatch(
            f"conv1d expects x[B,C,L], w[O,C,3], b[O]; got {x.shape}, {w.shape}, {b.shape}"
        )
    batch, cin, length = x.shape
    cout, w_cin, k = w.shape
    if k != 3 or w_cin != cin or b.shape[0] != cout:
        raise ShapeMismatch(
            f"conv1d weight {w.shape} / bias {b.shape} incompatible with input {x.shape}"
        )

    padded = np.pad(x.values, ((0, 0), (0, 0), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, 3, axis=2)
    out = np.einsum("bclk,ock->bol", windows, w.values) + b.values[None, :, None]

    def backward(g: np.ndarray):
        gw = np.einsum("bclk,bol->ock", windows, g)
        gb = g.sum(axis=(0, 2))
        gpad = np.zeros_like(padded)
        for tap in range(3):
            gpad[:, :, tap : tap + length] += np.einsum(
                "bol,oc->bcl", g, w.values[:, :, tap]
            )
        return gpad[:, :, 1:-1], gw, gb

    return _result(out, tape, (x, w, b), backward)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps
        )


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    tape: Optional[Tape] = None,
) -> Tensor:
    """
    Per-channel normalization over batch x length.

    Train mode uses the biased batch variance and updates the running
    statistics (momentum 0.1, unbiased variance); eval mode uses the running
    statistics and never mutates them.
    """
    if x.values.ndim != 3:
        raise ShapeMismatch(f"batchnorm1d expects x[B,C,L], got {x.shape}")
    batch, channels, length = x.shape
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeMismatch(
            f"batchnorm1d gamma {gamma.shape} / beta {beta.shape} vs {channels} channels"
        )
    g_ = gamma.values[None, :, None]

    if training:
        count = batch * length
        if count < 2:
            raise DegenerateBatch(
                f"Train-mode batch norm needs >= 2 values per channel, got {count}"
            )
        mean = x.values.mean(axis=(0, 2))
        var = x.values.var(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.values - mean[None, :, None]) * inv_std[None, :, None]

        state.running_mean = (
            1 - state.momentum
        ) * state.running_mean + state.momentum * mean
        state.running_var = (
            1 - state.momentum
        ) * state.running_var + state.momentum * var * count / (count - 1)

        def backward(g: np.ndarray):
            ggamma = (g * xhat).sum(axis=(0, 2))
            gbeta = g.sum(axis=(0, 2))
            gxhat = g * g_
            gx = (
                inv_std[None, :, None]
                / count
                * (
                    count * gxhat
                    - gxhat.sum(axis=(0, 2), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                )
            )
            return gx, ggamma, gbeta

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.values - state.running_mean[None, :, None]) * inv_std[None, :, None]

        def backward(g: np.ndarray):
            return (
                g * g_ * inv_std[None, :, None],
                (g * xhat).sum(axis=(0, 2)),
                g.sum(axis=(0, 2)),
            )

    out = g_ * xhat + beta.values[None, :, None]
    return _result(out, tape, (x, gamma, beta), backward)


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    mask = x.values > 0

    def backward(g: np.ndarray):
        return (g * mask,)

    return _result(np.where(mask, x.values, 0.0), tape, (x,), backward)


def _pairs(x: Tensor, op: str) -> np.ndarray:
    if x.values.ndim != 3:
        raise ShapeMismatch(f"{op} expects x[B,C,L], got {x.shape}")
    batch, channels, length = x.shape
    if length % 2:
        raise OddLength(f"{op} needs an even length, got {length}")
    return x.values.reshape(batch, channels, length // 2, 2)


def maxpool1d_k2s2(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Max over non-overlapping pairs; gradient goes to the first maximum."""
    pairs = _pairs(x, "maxpool1d_k2s2")
    winner = pairs.argmax(axis=-1)
    out = np.take_along_axis(pairs, winner[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        gx = np.zeros_like(pairs)
        np.put_along_axis(gx, winner[..., None], g[..., None], axis=-1)
        return (gx.reshape(x.shape),)

    return _result(out, tape, (x,), backward)


def avgpool1d_k2s2(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mean over non-overlapping pairs."""
    pairs = _pairs(x, "avgpool1d_k2s2")

    def backward(g: np.ndarray):
        return (np.repeat(g * 0.5, 2, axis=-1),)

    return _result(pairs.mean(axis=-1), tape, (x,), backward)


def flatten(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """(B, C, L) -> (B, C*L)."""
    shape = x.shape

    def backward(g: np.ndarray):
        return (g.reshape(shape),)

    return _result(x.values.reshape(shape[0], -1), tape, (x,), backward)


def concat(parts: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    """Stack (B, F_i) tensors along the feature axis."""
    if not parts or any(p.values.ndim != 2 for p in parts):
        raise ShapeMismatch("concat expects one or more [B,F] tensors")
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeMismatch(f"concat batch sizes differ: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g: np.ndarray):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    out = np.concatenate([p.values for p in parts], axis=1)
    return _result(out, tape, tuple(parts), backward)


def linear(x: Tensor, w: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """x @ w.T + b with x: (B, F), w: (out, F), b: (out,)."""
    if x.values.ndim != 2 or w.values.ndim != 2 or b.values.ndim != 1:
        raise ShapeMismatch(
            f"linear expects x[B,F], w[O,F], b[O]; got {x.shape}, {w.shape}, {b.shape}"
        )
    if w.shape[1] != x.shape[1] or b.shape[0] != w.shape[0]:
        raise ShapeMismatch(
            f"linear weight {w.shape} / bias {b.shape} incompatible with input {x.shape}"
        )

    def backward(g: np.ndarray):
        return g @ w.values, g.T @ x.values, g.sum(axis=0)

    return _result(x.values @ w.values.T + b.values, tape, (x, w, b), backward)


def l1_loss(
    pred: Tensor, target: Union[Tensor, np.ndarray], tape: Optional[Tape] = None
) -> Tensor:
    """Mean absolute error; d/dpred = sign(pred - target) / n with sign(0) = 0."""
    target_values = target.values if isinstance(target, Tensor) else np.asarray(
        target, dtype=np.float64
    )
    if pred.shape != target_values.shape:
        raise ShapeMismatch(
            f"l1_loss shapes differ: {pred.shape} vs {target_values.shape}"
        )
    diff = pred.values - target_values
    n = diff.size

    def backward(g: np.ndarray):
        return (np.sign(diff) * (g.reshape(()) / n),)

    return _result(np.array(np.abs(diff).mean()), tape, (pred,), backward)


# Gradient checking


def finite_difference(
    fn: Callable[[], float], array: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences of a scalar function w.r.t. every entry of ``array``."""
    grad = np.zeros_like(array, dtype=np.float64)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + h
        upper = fn()
        array[idx] = original - h
        lower = fn()
        array[idx] = original
        grad[idx] = (upper - lower) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))
