"""Training objectives for the three stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numcore import (
    Tensor,
    add,
    as_tensor,
    concat,
    l2_normalize,
    log_softmax,
    matmul,
    mul,
    reshape,
    row_softmax,
    scale,
    sub,
    tensor_sum,
    transpose,
)


@dataclass
class LossConfig:
    tau: float = 4.0
    tau_c: float = 0.5
    tau_d: float = 0.5
    alpha: float = 0.6
    beta: float = 0.3
    kl_teacher_first: bool = True

    def __post_init__(self):
        for name in ("tau", "tau_c", "tau_d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        _check_unit("alpha", self.alpha)
        _check_unit("beta", self.beta)


def _check_unit(name, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in the open interval (0, 1), got {value}")


def _rows(x) -> Tensor:
    x = as_tensor(x)
    return reshape(x, (1, -1)) if x.ndim == 1 else x


def _diag_mean(logp: Tensor) -> Tensor:
    n = logp.shape[0]
    return scale(tensor_sum(mul(logp, np.eye(n))), 1.0 / n)


def cross_entropy(logits, y) -> Tensor:
    """Mean of ``-log softmax(logits)[y]`` over the batch."""
    logits = _rows(logits)
    y = np.atleast_1d(np.asarray(y, dtype=int))
    if len(y) != logits.shape[0]:
        raise ShapeError(f"{len(y)} labels for {logits.shape[0]} rows of logits")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(y)), y] = 1.0
    return scale(tensor_sum(mul(log_softmax(logits), onehot)), -1.0 / len(y))


def _kl_rows(target, pred, tau: float) -> Tensor:
    """Batch mean of KL(softmax(target/tau) || softmax(pred/tau)); ``target`` may carry gradient."""
    logp_t = log_softmax(scale(target, 1.0 / tau))
    logp_p = log_softmax(scale(pred, 1.0 / tau))
    p_t = row_softmax(scale(target, 1.0 / tau))
    return scale(tensor_sum(mul(p_t, sub(logp_t, logp_p))), 1.0 / target.shape[0])


def distill_loss(student_sc, student_fc, teacher_sc, teacher_fc, tau: float,
                 teacher_first: bool = True) -> Tensor:
    """Temperature-softened KL between teacher and student pooled embeddings, scaled by tau^2/2."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    pairs = []
    for s, t in ((student_fc, teacher_fc), (student_sc, teacher_sc)):
        s, t = _rows(s), _rows(t)
        if s.shape != t.shape:
            raise ShapeError(f"student {s.shape} vs teacher {t.shape}")
        t = Tensor(t.data)
        pairs.append(_kl_rows(t, s, tau) if teacher_first else _kl_rows(s, t, tau))
    return scale(add(*pairs), tau * tau / 2.0)


def cmbp_contrast(z_sc, z_fc, tau_c: float, eps: float = 0.0) -> Tensor:
    """Symmetric InfoNCE between paired SC and FC embeddings of one batch.

    A zero embedding raises unless ``eps > 0`` floors the row norms (see
    :func:`~m3dbfs.numcore.l2_normalize`).
    """
    a = l2_normalize(_rows(z_sc), eps)
    b = l2_normalize(_rows(z_fc), eps)
    if a.shape != b.shape:
        raise ShapeError(f"SC batch {a.shape} vs FC batch {b.shape}")
    sim = scale(matmul(a, transpose(b)), 1.0 / tau_c)
    s2f = _diag_mean(log_softmax(sim))
    f2s = _diag_mean(log_softmax(transpose(sim)))
    return scale(add(s2f, f2s), -0.5)


def _row_dot(a: Tensor, b: Tensor) -> Tensor:
    return tensor_sum(mul(a, b), axis=1, keepdims=True)


def disentangle_loss(z_sc, z_fc, z_fusion, z_anchor, tau_d: float, eps: float = 0.0) -> Tensor:
    """Contrast each modality embedding against its anchor (positive) and the other two (negatives)."""
    if tau_d <= 0:
        raise ValueError(f"temperature must be positive, got {tau_d}")
    zs = [l2_normalize(_rows(z), eps) for z in (z_sc, z_fc, z_fusion)]
    anchor = l2_normalize(_rows(z_anchor), eps)
    for z in zs:
        if z.shape != anchor.shape:
            raise ShapeError(f"embedding {z.shape} vs anchor {anchor.shape}")
    n = anchor.shape[0]
    first = np.zeros((n, len(zs)))
    first[:, 0] = 1.0
    total = None
    for m, z in enumerate(zs):
        cols = [_row_dot(z, anchor)] + [_row_dot(z, q) for i, q in enumerate(zs) if i != m]
        logits = scale(concat(cols, axis=1), 1.0 / tau_d)
        term = tensor_sum(mul(log_softmax(logits), first))
        total = term if total is None else add(total, term)
    return scale(total, -1.0 / (n * len(zs)))


def stage2_loss(ce, distill, contrast, beta: float) -> Tensor:
    _check_unit("beta", beta)
    return add(ce, scale(add(distill, contrast), beta))


def stage3_loss(ce, moe, disen, alpha: float) -> Tensor:
    _check_unit("alpha", alpha)
    return add(add(ce, scale(moe, alpha)), scale(disen, 1.0 - alpha))
