"""Neural primitives with hand-written forward and backward passes.

Arrays follow the ``C x H x W`` image layout; every function here also
accepts a leading batch axis (``N x C x H x W``).  Backward functions take
the forward inputs again and return gradients with the same shapes as
those inputs.  Nothing is mutated in place.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when array shapes are incompatible for an operation."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    _check(x.ndim == 4, f"expected C x H x W or N x C x H x W array, got shape {x.shape}")
    return x, False


@dataclass
class ConvParams:
    """Weights ``outC x inC x k x k``, bias ``outC``, stride and zero padding."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 1

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k_h, k_w = self.weights.shape[2:]
        span_h = h + 2 * self.padding - k_h
        span_w = w + 2 * self.padding - k_w
        _check(span_h >= 0 and span_w >= 0,
               f"padded input {h}x{w} (padding {self.padding}) smaller than kernel {k_h}x{k_w}")
        _check(span_h % self.stride == 0 and span_w % self.stride == 0,
               f"input {h}x{w} with padding {self.padding} not evenly covered by stride {self.stride}")
        return span_h // self.stride + 1, span_w // self.stride + 1


@dataclass
class DenseParams:
    """Affine map ``y = W x + b`` with ``W`` of shape ``out x in``."""

    weights: np.ndarray
    bias: np.ndarray


def _validate_conv(x: np.ndarray, params: ConvParams) -> None:
    w = params.weights
    _check(w.ndim == 4 and params.bias.shape == (w.shape[0],),
           f"malformed conv params: weights {w.shape}, bias {params.bias.shape}")
    _check(x.shape[1] == w.shape[1],
           f"input shape {x.shape[1:]} has {x.shape[1]} channels but weights {w.shape} expect {w.shape[1]}")


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, k_h: int, k_w: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Patch matrix of shape ``(C * kH * kW, N * H' * W')``, rows ordered C -> kH -> kW."""
    n, c = xp.shape[:2]
    cols = np.empty((c, k_h, k_w, n, out_h, out_w), dtype=xp.dtype)
    for i in range(k_h):
        for j in range(k_w):
            patch = xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k_h * k_w, n * out_h * out_w)


def _col2im(cols: np.ndarray, shape: tuple, k_h: int, k_w: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto a padded input."""
    n, c = shape[:2]
    cols = cols.reshape(c, k_h, k_w, n, out_h, out_w)
    xp = np.zeros(shape, dtype=cols.dtype)
    for i in range(k_h):
        for j in range(k_w):
            xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                cols[:, i, j].transpose(1, 0, 2, 3)
    return xp


def conv2d_forward(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """2-D cross-correlation (no kernel flip) plus bias.

    Parameters
    ----------
    x : ndarray
        ``C x H x W`` or ``N x C x H x W`` input.
    params : ConvParams

    Returns
    -------
    ndarray
        ``C' x H' x W'`` (batched if the input was) with
        ``H' = (H + 2 padding - k) / stride + 1``.
    """
    xb, single = _as_batch(x)
    _validate_conv(xb, params)
    out_h, out_w = params.output_size(*xb.shape[2:])
    k_h, k_w = params.weights.shape[2:]
    cols = _im2col(_pad(xb, params.padding), k_h, k_w, params.stride, out_h, out_w)
    out = params.weights.reshape(params.out_channels, -1) @ cols
    out = out.reshape(params.out_channels, xb.shape[0], out_h, out_w).transpose(1, 0, 2, 3)
    out = out + params.bias[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, params: ConvParams, grad_out: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights and bias."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    _validate_conv(xb, params)
    out_h, out_w = params.output_size(*xb.shape[2:])
    expected = (xb.shape[0], params.out_channels, out_h, out_w)
    _check(gb.shape == expected,
           f"grad_out shape {gb.shape} does not match forward output shape {expected}")
    s, p = params.stride, params.padding
    k_h, k_w = params.weights.shape[2:]

    xp = _pad(xb, p)
    cols = _im2col(xp, k_h, k_w, s, out_h, out_w)
    g2 = gb.transpose(1, 0, 2, 3).reshape(params.out_channels, -1)
    grad_w = (g2 @ cols.T).reshape(params.weights.shape)
    grad_b = g2.sum(axis=1)
    w2 = params.weights.reshape(params.out_channels, -1)
    grad_xp = _col2im(w2.T @ g2, xp.shape, k_h, k_w, s, out_h, out_w)
    hp, wp = xp.shape[2:]
    grad_x = np.ascontiguousarray(grad_xp[:, :, p:hp - p, p:wp - p])
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def dense_forward(x: np.ndarray, params: DenseParams) -> np.ndarray:
    """Affine map on a vector (``in``) or a batch of vectors (``N x in``)."""
    _check(x.shape[-1] == params.weights.shape[1],
           f"input shape {x.shape} incompatible with dense weights {params.weights.shape}")
    return x @ params.weights.T + params.bias


def dense_backward(x: np.ndarray, params: DenseParams, grad_out: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _check(grad_out.shape == x.shape[:-1] + (params.weights.shape[0],),
           f"grad_out shape {grad_out.shape} does not match dense output for input {x.shape}")
    grad_x = grad_out @ params.weights
    if x.ndim == 1:
        grad_w = np.outer(grad_out, x)
        grad_b = grad_out.copy()
    else:
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at the kink
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    s = expit(x)
    return grad_out * s * (1.0 - s)


def global_average_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean; ``C x H x W -> C x 1 x 1``."""
    return x.mean(axis=(-2, -1), keepdims=True)


def global_average_pool_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    return np.broadcast_to(grad_out / (h * w), x.shape).copy()


def concat_channels(*tensors: np.ndarray) -> np.ndarray:
    """Stack tensors along the channel axis (third from the end)."""
    ref = tensors[0]
    for t in tensors[1:]:
        _check(t.shape[:-3] == ref.shape[:-3] and t.shape[-2:] == ref.shape[-2:],
               f"cannot concatenate {ref.shape} with {t.shape}: spatial/batch extents differ")
    return np.concatenate(tensors, axis=-3)


def split_channels(x: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels`; also its backward pass."""
    _check(sum(sizes) == x.shape[-3], f"channel sizes {sizes} do not sum to {x.shape[-3]}")
    bounds = np.cumsum(sizes)[:-1]
    return np.split(x, bounds, axis=-3)
