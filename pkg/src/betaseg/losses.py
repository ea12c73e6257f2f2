"""Segmentation losses: cross-entropy, beta-cross-entropy, and a hybrid.

The beta-cross-entropy per-pixel loss with true class y and softmax
probabilities p over K classes is

    L(p, y) = ((b + 1) / b) * (1 - p_y**b) + sum_k p_k**(b + 1)

for a hyperparameter b > 0.  As b -> 0 it converges pointwise to the
cross-entropy plus the constant 1, and for b > 0 its gradient through the
true-class probability shrinks like p_y**b, which down-weights pixels whose
label the model confidently contradicts.  Probabilities are clamped to
[clamp_eps, 1] before any power or log.

Loss values and gradients are accumulated in float64 internally (p**b is
ill-conditioned in float32 for small b); the returned gradient is cast back
to the logits dtype.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


class LossKind(enum.Enum):
    CE = "ce"
    BCE = "bce"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class LossConfig:
    """Loss selection plus the knobs shared by the harness.

    rare_class_set, when given, overrides the frequency threshold for the
    hybrid loss.
    """
    kind: LossKind = LossKind.CE
    beta: float = 1e-4
    clamp_eps: float = 1e-7
    rare_class_threshold: float = 0.005
    rare_class_set: tuple | None = None

    def __post_init__(self):
        if self.kind in (LossKind.BCE, LossKind.HYBRID) and not self.beta > 0:
            raise ConfigError(f"beta must be > 0 for {self.kind.value} loss, got {self.beta}")
        if not 0.0 < self.clamp_eps <= 1e-3:
            raise ConfigError(f"clamp_eps must be in (0, 1e-3], got {self.clamp_eps}")
        if not 0.0 <= self.rare_class_threshold <= 1.0:
            raise ConfigError(f"rare_class_threshold must be in [0, 1], got {self.rare_class_threshold}")


@dataclass(frozen=True)
class LossResult:
    value: float                 # mean per-pixel loss over the batch
    grad_logits: np.ndarray      # same shape and dtype as the logits


def _check_inputs(logits: np.ndarray, labels: np.ndarray) -> None:
    if logits.ndim != 4:
        raise ShapeError(f"logits must be (N,K,H,W), got {logits.shape}")
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {(n, h, w)}")
    if k < 2:
        raise ShapeError(f"need at least 2 classes, got {k}")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64, copy=True)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _gather(p: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """p[n, labels[n,h,w], h, w] as an (N,H,W) array."""
    return np.take_along_axis(p, labels[:, None].astype(np.intp), axis=1)[:, 0]


def _ce_pixelwise(p: np.ndarray, labels: np.ndarray, clamp_eps: float):
    """Per-pixel CE loss and its un-normalized gradient wrt logits."""
    py = np.clip(_gather(p, labels), clamp_eps, 1.0)
    pix_loss = -np.log(py)
    grad = p.copy()
    onehot_idx = labels[:, None].astype(np.intp)
    np.put_along_axis(grad, onehot_idx,
                      np.take_along_axis(grad, onehot_idx, axis=1) - 1.0, axis=1)
    return pix_loss, grad


def _bce_pixelwise(p: np.ndarray, labels: np.ndarray, beta: float, clamp_eps: float):
    """Per-pixel beta-cross-entropy loss and un-normalized gradient wrt logits.

    The gradient treats the clamp as the identity and uses clamped
    probabilities inside the power terms:

        g_j = (b+1) * (p_j * q_j**b - [j == y] * p_j * q_y**(b-1)
                       - p_j * (S - q_y**b))

    with q = clip(p, eps, 1) and S = sum_k q_k**(b+1).  For unclamped pixels
    this is the exact derivative of the loss through the softmax.
    """
    q = np.clip(p, clamp_eps, 1.0)
    qy = _gather(q, labels)
    qy_b = qy ** beta
    q_b = q ** beta
    s = (q * q_b).sum(axis=1)                       # sum_k q_k**(b+1)
    pix_loss = (beta + 1.0) / beta * (1.0 - qy_b) + s

    grad = p * (q_b - (s - qy_b)[:, None])
    py = _gather(p, labels)
    true_extra = py * qy ** (beta - 1.0)
    onehot_idx = labels[:, None].astype(np.intp)
    np.put_along_axis(grad, onehot_idx,
                      np.take_along_axis(grad, onehot_idx, axis=1) - true_extra[:, None],
                      axis=1)
    grad *= beta + 1.0
    return pix_loss, grad


def _finalize(pix_loss: np.ndarray, grad: np.ndarray, out_dtype) -> LossResult:
    pixel_count = pix_loss.size
    return LossResult(value=float(pix_loss.mean()),
                      grad_logits=np.ascontiguousarray((grad / pixel_count).astype(out_dtype)))


def ce_loss(logits: np.ndarray, labels: np.ndarray, clamp_eps: float = 1e-7) -> LossResult:
    """Mean cross-entropy -log p(y|x) over all pixels of the batch.

    grad_logits is the standard softmax-CE gradient (p - onehot(y)) divided
    by the pixel count.
    """
    _check_inputs(logits, labels)
    p = _softmax64(logits)
    pix_loss, grad = _ce_pixelwise(p, labels, clamp_eps)
    return _finalize(pix_loss, grad, logits.dtype)


def bce_loss(logits: np.ndarray, labels: np.ndarray, beta: float,
             clamp_eps: float = 1e-7) -> LossResult:
    """Mean beta-cross-entropy over all pixels of the batch.

    beta must be > 0; use ce_loss for the beta -> 0 limit (which this loss
    approaches up to the additive constant 1).
    """
    if not beta > 0:
        raise ConfigError(f"beta must be > 0, got {beta} (use ce_loss for the limit case)")
    _check_inputs(logits, labels)
    p = _softmax64(logits)
    pix_loss, grad = _bce_pixelwise(p, labels, beta, clamp_eps)
    return _finalize(pix_loss, grad, logits.dtype)


def hybrid_loss(logits: np.ndarray, labels: np.ndarray, config: LossConfig,
                class_frequencies: np.ndarray) -> LossResult:
    """Per-pixel composition: CE where the true class is rare, BCE elsewhere.

    A class is rare when its frequency is below config.rare_class_threshold,
    or when it appears in config.rare_class_set (which overrides the
    threshold).  class_frequencies must cover all K classes and sum to 1.
    """
    if config.kind is not LossKind.HYBRID:
        raise ConfigError(f"hybrid_loss requires kind=HYBRID config, got {config.kind.value}")
    _check_inputs(logits, labels)
    k = logits.shape[1]
    freqs = np.asarray(class_frequencies, dtype=np.float64)
    if freqs.shape != (k,):
        raise ConfigError(f"class_frequencies must have shape ({k},), got {freqs.shape}")
    if abs(freqs.sum() - 1.0) > 1e-6:
        raise ConfigError(f"class_frequencies must sum to 1, got {freqs.sum()}")

    if config.rare_class_set is not None:
        rare = np.zeros(k, dtype=bool)
        for c in config.rare_class_set:
            if not 0 <= c < k:
                raise ConfigError(f"rare class {c} out of range [0, {k})")
            rare[c] = True
    else:
        rare = freqs < config.rare_class_threshold

    p = _softmax64(logits)
    ce_pix, ce_grad = _ce_pixelwise(p, labels, config.clamp_eps)
    bce_pix, bce_grad = _bce_pixelwise(p, labels, config.beta, config.clamp_eps)
    use_ce = rare[labels]                            # (N,H,W) bool
    pix_loss = np.where(use_ce, ce_pix, bce_pix)
    grad = np.where(use_ce[:, None], ce_grad, bce_grad)
    return _finalize(pix_loss, grad, logits.dtype)


def compute_loss(logits: np.ndarray, labels: np.ndarray, config: LossConfig,
                 class_frequencies: np.ndarray | None = None) -> LossResult:
    """Dispatch on config.kind; the harness entry point."""
    if config.kind is LossKind.CE:
        return ce_loss(logits, labels, config.clamp_eps)
    if config.kind is LossKind.BCE:
        return bce_loss(logits, labels, config.beta, config.clamp_eps)
    if class_frequencies is None:
        raise ConfigError("hybrid loss needs class_frequencies")
    return hybrid_loss(logits, labels, config, class_frequencies)
