"""Classification losses over head outputs and the dynamic multi-loss.

All functions accept a single vector (C,) or a batch (N, C). Batch losses are
means over samples; the returned gradients are w.r.t. the raw head outputs and
already carry the 1/N factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

DOMINANT = 0.98
REGULARIZER = 0.02
LOSS_NAMES = ("ce", "hinge", "csd")
PROB_FLOOR = 1e-38


@dataclass(frozen=True)
class LossWeights:
    ce: float
    hinge: float
    csd: float

    def __iter__(self):
        return iter((self.ce, self.hinge, self.csd))

    @property
    def dominant(self) -> str:
        return LOSS_NAMES[int(np.argmax(tuple(self)))]


def loss_weights_for_trial(trial_index: int) -> LossWeights:
    """Period-3 rotation of the dominant loss: CE, then hinge, then CSD."""
    w = [REGULARIZER] * 3
    w[trial_index % 3] = DOMINANT
    return LossWeights(*w)


def one_hot(targets, n_classes: int, dtype=np.float64) -> np.ndarray:
    t = np.atleast_1d(np.asarray(targets))
    y = np.zeros((t.size, n_classes), dtype=dtype)
    y[np.arange(t.size), t] = 1
    return y


def signed_targets(targets, n_classes: int, dtype=np.float64) -> np.ndarray:
    return 2 * one_hot(targets, n_classes, dtype) - 1


def softmax(o):
    o = np.asarray(o)
    z = np.exp(o - o.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _batch(a):
    a = np.asarray(a)
    return (a[None, :], True) if a.ndim == 1 else (a, False)


def cross_entropy(y, p):
    """-sum_j y_j log p_j, averaged over samples; gradient w.r.t. logits is p - y."""
    y2, single = _batch(y)
    p2, _ = _batch(p)
    n = p2.shape[0]
    logp = np.log(np.maximum(p2, PROB_FLOOR))
    loss = float(-(y2 * logp).sum() / n)
    grad = (p2 - y2) / n
    return loss, grad[0] if single else grad


def squared_hinge(y_signed, o):
    """sum_j max(0, 1/2 - y_j o_j)^2 on raw outputs, averaged over samples."""
    y2, single = _batch(y_signed)
    o2, _ = _batch(o)
    n = o2.shape[0]
    viol = np.maximum(0, 0.5 - y2 * o2)
    loss = float((viol**2).sum() / n)
    grad = (-2 * y2 * viol / n).astype(o2.dtype, copy=False)
    return loss, grad[0] if single else grad


def csd(y, p):
    """Cauchy-Schwarz divergence: cross-entropy plus log of the L2 norm of p.

    For one-hot ``y`` this equals -log cos(y, p).
    """
    y2, single = _batch(y)
    p2, _ = _batch(p)
    n = p2.shape[0]
    ce, ce_grad = cross_entropy(y2, p2)
    sq = (p2 * p2).sum(axis=-1, keepdims=True)
    loss = ce + float(0.5 * np.log(sq).sum() / n)
    # d/do_k of 0.5*log(sum p^2) through the softmax is p_k (p_k - S) / S
    grad = ce_grad + p2 * (p2 - sq) / sq / n
    return loss, grad[0] if single else grad


def dml(targets, heads, weights):
    """Weighted sum of CE (head 0), squared hinge (head 1) and CSD (head 2).

    Each head only receives the gradient of its own loss, scaled by its weight.
    Returns ``(loss, [grad0, grad1, grad2])``.
    """
    lam = tuple(float(v) for v in weights)
    if len(lam) != 3 or not all(np.isfinite(v) and v >= 0 for v in lam):
        raise ParameterError(f"loss weights must be three finite non-negative numbers, got {weights}")
    if len(heads) != 3:
        raise ParameterError(f"expected 3 head outputs, got {len(heads)}")
    o_ce, o_hinge, o_csd = (np.atleast_2d(h) for h in heads)
    n_classes = o_ce.shape[-1]
    y = one_hot(targets, n_classes, o_ce.dtype)
    ce_loss, ce_grad = cross_entropy(y, softmax(o_ce))
    h_loss, h_grad = squared_hinge(2 * y - 1, o_hinge)
    c_loss, c_grad = csd(y, softmax(o_csd))
    loss = lam[0] * ce_loss + lam[1] * h_loss + lam[2] * c_loss
    dt = o_ce.dtype.type
    grads = [dt(lam[0]) * ce_grad, dt(lam[1]) * h_grad, dt(lam[2]) * c_grad]
    return loss, grads
