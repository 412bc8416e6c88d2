"""Dense-tensor layer math with hand-coded forward and backward passes.

Everything here operates on plain ``numpy`` arrays of 64-bit floats
("tensors"): row-major, explicit shape, finite values.  There is no
autodiff tape — the network layers used by the model zoo are few and
fixed, so each one ships an analytically derived backward pass that is
validated against the central finite-difference oracle ``grad_check``.

Conventions:

* ``dense_forward``: ``out[j] = sum_i W[j, i] * x[i] + b[j]``.
* ``conv2d_forward``: stride-1, valid-padding cross-correlation.  The
  accumulation over ``(channel, ki, kj)`` runs in ascending row-major
  order so every output element is bit-identical to a scalar
  quadruple-loop evaluation (bias added last).
* ReLU's subgradient at exactly 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, InvariantViolation, ShapeError

Tensor = np.ndarray

GRAD_CHECK_STEP = 1e-5


def as_tensor(values, shape: tuple[int, ...] | None = None) -> Tensor:
    """Return ``values`` as a C-contiguous float64 array, optionally reshaped.

    Raises InvariantViolation if any element is NaN or infinite.
    """
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        if arr.size != int(np.prod(shape)):
            raise ShapeError(
                f"cannot view {arr.size} values as shape {tuple(shape)}"
            )
        arr = arr.reshape(shape)
    _require_finite(arr, "tensor")
    return arr


def _require_finite(arr: Tensor, what: str) -> Tensor:
    if not np.isfinite(arr).all():
        raise InvariantViolation(f"{what} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class LayerGrads:
    """Gradients produced by a layer's backward pass.

    ``input_grad`` mirrors the layer input's shape; ``param_grads``
    mirror the layer's parameters in declaration order.
    """

    input_grad: Tensor
    param_grads: tuple[Tensor, ...]


# ---------------------------------------------------------------------------
# Dense (fully connected)
# ---------------------------------------------------------------------------

def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``W @ x + b`` for a single input vector."""
    if x.ndim != 1 or weights.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"dense_forward expects vector/matrix/vector, got shapes "
            f"{x.shape}, {weights.shape}, {bias.shape}"
        )
    if weights.shape[1] != x.shape[0] or weights.shape[0] != bias.shape[0]:
        raise ShapeError(
            f"dense_forward: weights {weights.shape} do not conform to "
            f"input {x.shape} and bias {bias.shape}"
        )
    out = weights @ x + bias
    return _require_finite(out, "dense_forward output")


def dense_backward(x: Tensor, weights: Tensor, upstream: Tensor) -> LayerGrads:
    """Backward pass of ``dense_forward``.

    input_grad = W^T @ upstream, weight_grad = upstream ⊗ x,
    bias_grad = upstream.
    """
    if upstream.shape != (weights.shape[0],):
        raise ShapeError(
            f"dense_backward: upstream {upstream.shape} does not match "
            f"output shape ({weights.shape[0]},)"
        )
    if weights.shape[1] != x.shape[0]:
        raise ShapeError(
            f"dense_backward: weights {weights.shape} do not conform to "
            f"input {x.shape}"
        )
    input_grad = weights.T @ upstream
    weight_grad = np.outer(upstream, x)
    bias_grad = upstream.copy()
    _require_finite(input_grad, "dense_backward input_grad")
    return LayerGrads(input_grad, (weight_grad, bias_grad))


# ---------------------------------------------------------------------------
# Conv2d (stride 1, valid padding)
# ---------------------------------------------------------------------------

def _conv_shapes(x: Tensor, kernels: Tensor, bias: Tensor | None):
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(
            f"conv2d expects CxHxW input and FxCxkxk kernels, got shapes "
            f"{x.shape}, {kernels.shape}"
        )
    c, h, w = x.shape
    f, kc, kh, kw = kernels.shape
    if kc != c or kh != kw:
        raise ShapeError(
            f"conv2d: kernels {kernels.shape} do not conform to input {x.shape}"
        )
    if kh > h or kh > w:
        raise ShapeError(
            f"conv2d: kernel size {kh} exceeds input plane {h}x{w}"
        )
    if bias is not None and bias.shape != (f,):
        raise ShapeError(
            f"conv2d: bias {bias.shape} does not match filter count {f}"
        )
    return c, h, w, f, kh


def conv2d_forward(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation plus per-filter bias.

    The sum over (c, ki, kj) is accumulated in ascending row-major order
    (vectorized only across output positions), which makes each output
    element bit-identical to the naive quadruple-loop evaluation.
    """
    c, h, w, f, k = _conv_shapes(x, kernels, bias)
    h_out, w_out = h - k + 1, w - k + 1
    out = np.zeros((f, h_out, w_out))
    for ci in range(c):
        plane = x[ci]
        for ki in range(k):
            for kj in range(k):
                out += kernels[:, ci, ki, kj, None, None] * plane[ki:ki + h_out, kj:kj + w_out]
    out += bias[:, None, None]
    return _require_finite(out, "conv2d_forward output")


def conv2d_backward(x: Tensor, kernels: Tensor, upstream: Tensor) -> LayerGrads:
    """Backward pass of ``conv2d_forward`` (input, kernel and bias grads)."""
    c, h, w, f, k = _conv_shapes(x, kernels, None)
    h_out, w_out = h - k + 1, w - k + 1
    if upstream.shape != (f, h_out, w_out):
        raise ShapeError(
            f"conv2d_backward: upstream {upstream.shape} does not match "
            f"output shape {(f, h_out, w_out)}"
        )
    input_grad = np.zeros_like(x)
    kernel_grad = np.empty_like(kernels)
    for ki in range(k):
        for kj in range(k):
            # d out[f, i, j] / d x[c, i+ki, j+kj] = kernels[f, c, ki, kj]
            input_grad[:, ki:ki + h_out, kj:kj + w_out] += np.tensordot(
                kernels[:, :, ki, kj], upstream, axes=(0, 0)
            )
            kernel_grad[:, :, ki, kj] = np.tensordot(
                upstream, x[:, ki:ki + h_out, kj:kj + w_out], axes=([1, 2], [1, 2])
            )
    bias_grad = upstream.sum(axis=(1, 2))
    _require_finite(input_grad, "conv2d_backward input_grad")
    return LayerGrads(input_grad, (kernel_grad, bias_grad))


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu_forward(x: Tensor) -> Tensor:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def relu_backward(x: Tensor, upstream: Tensor) -> Tensor:
    """Pass upstream where x > 0, zero otherwise (subgradient at 0 is 0)."""
    if upstream.shape != x.shape:
        raise ShapeError(
            f"relu_backward: upstream {upstream.shape} does not match input {x.shape}"
        )
    return np.where(x > 0.0, upstream, 0.0)


# ---------------------------------------------------------------------------
# Softmax cross-entropy head
# ---------------------------------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    """Numerically stable softmax over a logit vector."""
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _softmax_ce_index(logits: Tensor, class_index: int):
    """Stable softmax cross-entropy against a class index.

    Returns (loss, logit_grad, probs); shared fast path for the one-hot
    public op and the model-level loss.
    """
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    denom = exp.sum()
    probs = exp / denom
    loss = float(np.log(denom) - shifted[class_index])
    logit_grad = probs.copy()
    logit_grad[class_index] -= 1.0
    _require_finite(probs, "softmax probs")
    if not np.isfinite(loss):
        raise InvariantViolation("cross-entropy loss is not finite")
    return loss, logit_grad, probs


def softmax_cross_entropy(logits: Tensor, target: Tensor):
    """Cross-entropy of softmax(logits) against a one-hot target.

    Returns (loss, logit_grad, probs) where logit_grad = probs - target.
    The target must be exactly one-hot; anything else is a contract
    violation.
    """
    if logits.ndim != 1 or target.shape != logits.shape:
        raise ShapeError(
            f"softmax_cross_entropy: target {target.shape} does not match "
            f"logits {logits.shape}"
        )
    if logits.shape[0] < 2:
        raise ContractError("softmax_cross_entropy needs at least 2 classes")
    ones = target == 1.0
    if ones.sum() != 1 or not ((target == 0.0) | ones).all():
        raise ContractError("target must be one-hot (exactly one 1.0, rest 0.0)")
    class_index = int(np.argmax(ones))
    return _softmax_ce_index(logits, class_index)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[Tensor], float],
    x: Tensor,
    analytic_grad: Tensor,
    step: float = GRAD_CHECK_STEP,
) -> float:
    """Max relative error between ``analytic_grad`` and central differences.

    Per coordinate: numeric = (f(x + h e_i) - f(x - h e_i)) / (2h) with
    h = ``step``; relative error uses a max(1, |analytic|, |numeric|)
    denominator.
    """
    if analytic_grad.shape != x.shape:
        raise ShapeError(
            f"grad_check: analytic grad {analytic_grad.shape} does not "
            f"match input {x.shape}"
        )
    flat = x.reshape(-1)
    analytic = analytic_grad.reshape(-1)
    max_rel = 0.0
    probe = flat.copy()
    for i in range(flat.size):
        orig = probe[i]
        probe[i] = orig + step
        f_plus = f(probe.reshape(x.shape))
        probe[i] = orig - step
        f_minus = f(probe.reshape(x.shape))
        probe[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        denom = max(1.0, abs(analytic[i]), abs(numeric))
        max_rel = max(max_rel, abs(analytic[i] - numeric) / denom)
    return max_rel
