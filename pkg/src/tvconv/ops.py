"""Single-sample numeric ops on Tensors.

These are the forward primitives everything else composes: zero-same-padded
convolutions, ReLU, whole-sample layer normalization, and partition-mean
downsampling. Inputs are [c, h, w] Tensors; the batched internals live in
kernels.py.
"""

from __future__ import annotations

from . import kernels
from .tensor import Tensor


def _check_rank(t: Tensor, rank: int, name: str) -> None:
    if len(t.dims) != rank:
        raise ValueError(f"{name} must have rank {rank}, got dims {t.dims}")


def _check_same_dtype(*pairs) -> None:
    dt = pairs[0].dtype
    for t in pairs[1:]:
        if t.dtype != dt:
            raise ValueError(f"mixed dtypes {dt} and {t.dtype}")


def _check_kernel(k: int, kk: int) -> None:
    if k != kk:
        raise ValueError(f"kernel must be square, got {k}x{kk}")
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")


def depthwise_conv2d(x: Tensor, weight: Tensor) -> Tensor:
    """Per-channel conv of [c,h,w] with [c,k,k], zero-same padding."""
    _check_rank(x, 3, "input")
    _check_rank(weight, 3, "weight")
    _check_same_dtype(x, weight)
    c, k, kk = weight.dims
    _check_kernel(k, kk)
    if c != x.dims[0]:
        raise ValueError(f"channel mismatch: input has {x.dims[0]}, weight has {c}")
    return Tensor(kernels.dwconv(x.data[None], weight.data)[0])


def conv2d(x: Tensor, weight: Tensor) -> Tensor:
    """Dense conv of [c_in,h,w] with [c_out,c_in,k,k], zero-same padding."""
    _check_rank(x, 3, "input")
    _check_rank(weight, 4, "weight")
    _check_same_dtype(x, weight)
    co, ci, k, kk = weight.dims
    _check_kernel(k, kk)
    if ci != x.dims[0]:
        raise ValueError(f"channel mismatch: input has {x.dims[0]}, weight expects {ci}")
    if ci == 1 and co == 1:
        # Degenerate single-channel case shares the depthwise path so the two
        # ops agree bit for bit.
        return Tensor(kernels.dwconv(x.data[None], weight.data[0])[0])
    return Tensor(kernels.conv(x.data[None], weight.data)[0])


def relu(x: Tensor) -> Tensor:
    return Tensor(x.data * (x.data > 0))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over all of (c,h,w), then apply per-channel gamma/beta."""
    _check_rank(x, 3, "input")
    _check_rank(gamma, 1, "gamma")
    _check_rank(beta, 1, "beta")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    c = x.dims[0]
    if gamma.dims[0] != c or beta.dims[0] != c:
        raise ValueError(
            f"affine shape mismatch: input has {c} channels, "
            f"gamma {gamma.dims[0]}, beta {beta.dims[0]}"
        )
    y, _, _ = kernels.layer_norm_fwd(x.data[None], gamma.data, beta.data, eps)
    return Tensor(y[0])


def downsample_mean(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean over near-equal partitions that tile the input exactly."""
    _check_rank(x, 3, "input")
    _, h, w = x.dims
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    if out_h > h or out_w > w:
        raise ValueError(f"cannot downsample {h}x{w} to larger {out_h}x{out_w}")
    return Tensor(kernels.downsample_mean(x.data[None], out_h, out_w)[0])
