"""Dense float32 tensor kernels with explicit forward/backward pairs.

All operations are pure functions of ndarray inputs and never mutate their
arguments.  Shapes follow the NCHW convention.  Kernels preserve the input
dtype, so float64 arrays can be pushed through the same code paths by test
oracles; production callers use float32 throughout.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def tensor(data) -> np.ndarray:
    """Coerce array-like data to a contiguous float32 ndarray."""
    return np.ascontiguousarray(data, dtype=np.float32)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Strided (N, Cin, Ho, Wo, kh, kw) view of the zero-padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: int = 0) -> np.ndarray:
    """2D cross-correlation of x[N,Cin,H,W] with kernel[Cout,Cin,kh,kw] plus bias.

    Output spatial size is (H + 2*padding - kh) // stride + 1 (same for W),
    with zero padding.
    """
    _require(x.ndim == 4, f"conv2d input must be 4D (N,C,H,W), got {x.shape}")
    _require(kernel.ndim == 4, f"conv2d kernel must be 4D (Cout,Cin,kh,kw), got {kernel.shape}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    _require(kcin == cin, f"kernel expects {kcin} input channels, input has {cin}")
    _require(bias.shape == (cout,), f"bias must have shape ({cout},), got {bias.shape}")
    _require(stride >= 1, "stride must be a positive int")
    _require(padding >= 0, "padding must be non-negative")
    _require(kh <= h + 2 * padding and kw <= w + 2 * padding,
             "kernel larger than padded input")
    win = _conv_windows(x, kh, kw, stride, padding)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, Cout)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, grad_output: np.ndarray,
                    stride: int = 1, padding: int = 0):
    """Analytic gradients of conv2d_forward.

    Returns (grad_input, grad_kernel, grad_bias) for upstream grad_output of
    the same shape as the matching forward output.
    """
    _require(x.ndim == 4 and kernel.ndim == 4 and grad_output.ndim == 4,
             "conv2d_backward expects 4D input, kernel and grad_output")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    _require(kcin == cin, f"kernel expects {kcin} input channels, input has {cin}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    _require(grad_output.shape == (n, cout, ho, wo),
             f"grad_output shape {grad_output.shape} does not match "
             f"forward output {(n, cout, ho, wo)}")

    grad_bias = grad_output.sum(axis=(0, 2, 3))

    win = _conv_windows(x, kh, kw, stride, padding)
    grad_kernel = np.tensordot(grad_output, win, axes=([0, 2, 3], [0, 2, 3]))

    if stride == 1 and kh == kw and padding <= kh - 1:
        # One correlation with the spatially flipped, channel-transposed
        # kernel against the re-padded upstream gradient.
        flipped = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gwin = _conv_windows(grad_output, kh, kw, 1, kh - 1 - padding)
        grad_input = np.tensordot(gwin, flipped, axes=([1, 4, 5], [1, 2, 3]))
        grad_input = grad_input.transpose(0, 3, 1, 2)
    else:
        # General path: scatter the upstream gradient through every tap.
        dtype = np.result_type(x, kernel, grad_output)
        gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                t = np.tensordot(grad_output, kernel[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    t.transpose(0, 3, 1, 2)
        grad_input = gxp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(grad_input), np.ascontiguousarray(grad_kernel), grad_bias


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis of logits[N,K,H,W].

    Uses max subtraction so finite logits always give finite probabilities.
    """
    _require(logits.ndim == 4, f"softmax_channels expects 4D logits, got {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def relu_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    return np.maximum(x, np.zeros((), dtype=x.dtype))


def relu_backward(x: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    """Gradient of relu: passes grad where x > 0, zero elsewhere (0 at x == 0)."""
    _require(x.shape == grad_output.shape, "relu_backward shape mismatch")
    return np.where(x > 0, grad_output, np.zeros((), dtype=grad_output.dtype))


def downsample2x(x: np.ndarray) -> np.ndarray:
    """2x2 max-pool of x[N,C,H,W]; H and W must be even."""
    _require(x.ndim == 4, f"downsample2x expects 4D input, got {x.shape}")
    n, c, h, w = x.shape
    _require(h % 2 == 0 and w % 2 == 0, f"spatial dims must be even, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def downsample2x_backward(x: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    """Adjoint of 2x2 max-pool: routes each gradient to the window max.

    Ties within a window are broken toward the first element in row-major
    order, matching the deterministic forward selection.
    """
    n, c, h, w = x.shape
    _require(grad_output.shape == (n, c, h // 2, w // 2),
             f"grad_output shape {grad_output.shape} does not match pooled {(n, c, h // 2, w // 2)}")
    xw = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = xw.argmax(axis=-1)
    g = np.zeros(xw.shape, dtype=np.result_type(x, grad_output))
    np.put_along_axis(g, idx[..., None], grad_output[..., None], axis=-1)
    g = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(g)


def upsample2x(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling of x[N,C,H,W]."""
    _require(x.ndim == 4, f"upsample2x expects 4D input, got {x.shape}")
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def upsample2x_backward(grad_output: np.ndarray) -> np.ndarray:
    """Adjoint of nearest-neighbor upsampling: sums each 2x2 block."""
    _require(grad_output.ndim == 4, "upsample2x_backward expects 4D grad")
    n, c, h, w = grad_output.shape
    _require(h % 2 == 0 and w % 2 == 0, f"grad spatial dims must be even, got {h}x{w}")
    return grad_output.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
