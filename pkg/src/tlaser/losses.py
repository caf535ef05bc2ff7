"""Translation loss and the norm-balanced distance constraint.

For a batch of aligned embeddings ``pa[i] <-> pb[i]``::

    v_norm = mean over all 2N rows of ||p||
    d(x, y) = ||x - y||^2 / (v_norm + eps)
    d_p(i) = d(pa_i, pb_i)
    delta_ab(i, j) = max(0, alpha - (d(pa_i, pb_neg[i, j]) - d_p(i)))
    total = beta * mean_i d_p(i)
          + lambda / N_s * mean_i sum_j (delta_ab(i, j) + delta_ba(i, j))
          + 0.5 * l_mt
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .bpe import PAD


class LossError(ValueError):
    pass


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.25
    lam: float | None = None
    n_neg: int = 20
    epsilon: float = 1e-6
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.lam is None:
            self.lam = self.beta / 2
        if not 0 <= self.beta <= 1:
            raise LossError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0 <= self.lam <= 1:
            raise LossError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.alpha <= 0:
            raise LossError(f"alpha must be positive, got {self.alpha}")
        if self.epsilon <= 0:
            raise LossError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_neg < 0:
            raise LossError(f"n_neg must be non-negative, got {self.n_neg}")
        if not 0 <= self.label_smoothing < 1:
            raise LossError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")

    @property
    def constrained(self) -> bool:
        return self.beta > 0 or self.lam > 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    l_mt: float
    d_p_mean: float
    delta_mean_ab: float
    delta_mean_ba: float
    v_norm: float
    total: float
    beta: float = 0.0
    lam: float = 0.0
    n_neg: int = 0

    def recompose(self) -> float:
        """Rebuild the total from its parts."""
        neg = 0.0
        if self.n_neg:
            neg = self.lam * (self.delta_mean_ab + self.delta_mean_ba)
        return self.beta * self.d_p_mean + neg + 0.5 * self.l_mt

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in ("beta", "lam", "n_neg")}


def label_smoothed_nll(logits: Tensor, targets: np.ndarray, smoothing: float = 0.1,
                       pad_id: int = PAD) -> Tensor:
    """Mean smoothed cross-entropy over non-PAD target positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ag.ShapeError(f"logits {logits.shape} do not match targets {targets.shape}")
    if targets.max(initial=0) >= logits.shape[-1]:
        raise LossError("target id outside the logit range")
    live = targets != pad_id
    n = int(live.sum())
    if n == 0:
        raise LossError("every target position is padding")
    return ag.smoothed_cross_entropy(logits, targets, smoothing, live / n)


def batch_norm_average(embeddings: Tensor) -> Tensor:
    """Mean Euclidean norm of the rows of an ``(N, d)`` matrix."""
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise LossError(f"need a non-empty (N, d) matrix, got {embeddings.shape}")
    return ag.mean(ag.row_norms(embeddings))


def _sq_dist(a: Tensor, b: Tensor) -> Tensor:
    return ag.sum(ag.square(ag.sub(a, b)), axis=-1)


def paired_distance(pa: Tensor, pb: Tensor, v_norm: Tensor | float, eps: float) -> Tensor:
    """``||pa - pb||^2 / (v_norm + eps)`` along the last axis."""
    if pa.shape != pb.shape:
        raise ag.ShapeError(f"paired_distance: {pa.shape} vs {pb.shape}")
    if not isinstance(v_norm, Tensor):
        v_norm = ag.Tensor(np.asarray(v_norm, dtype=pa.dtype))
    return ag.mul(_sq_dist(pa, pb), ag.reciprocal(ag.add(v_norm, eps)))


def margin_delta(d_n: Tensor, d_p: Tensor, alpha: float) -> Tensor:
    """``max(0, alpha - (d_n - d_p))``, subgradient 0 at the kink."""
    return ag.hinge(ag.add(ag.neg(ag.sub(d_n, d_p)), alpha))


def _check_negatives(neg: np.ndarray, N: int, n_neg: int, name: str) -> np.ndarray:
    neg = np.asarray(neg, dtype=np.int64).reshape(N, n_neg)
    if n_neg > N - 1:
        raise LossError(f"n_neg={n_neg} exceeds batch size - 1 ({N - 1})")
    if n_neg and (neg == np.arange(N)[:, None]).any():
        raise LossError(f"{name} contains a self-negative")
    if neg.size and (neg.min() < 0 or neg.max() >= N):
        raise LossError(f"{name} index out of range")
    return neg


def total_loss(l_mt_ab: Tensor, pa_batch: Tensor | None, pb_batch: Tensor | None,
               neg_ab: np.ndarray | None, neg_ba: np.ndarray | None,
               cfg: LossConfig) -> tuple[Tensor, LossBreakdown]:
    """Combine translation loss with the distance constraint.

    With ``beta == lam == 0`` the embeddings may be None and the result is
    exactly ``0.5 * l_mt_ab``.
    """
    half_mt = ag.scale(l_mt_ab, 0.5)
    if not cfg.constrained:
        mt = float(l_mt_ab.data)
        return half_mt, LossBreakdown(mt, 0.0, 0.0, 0.0, 0.0, float(half_mt.data))

    if pa_batch is None or pb_batch is None or pa_batch.shape != pb_batch.shape:
        raise LossError("constrained loss needs aligned (N, d) embedding batches")
    N, d = pa_batch.shape
    n_neg = 0 if neg_ab is None else np.asarray(neg_ab).reshape(N, -1).shape[1]
    if n_neg:
        neg_ab = _check_negatives(neg_ab, N, n_neg, "neg_ab")
        neg_ba = _check_negatives(neg_ba, N, n_neg, "neg_ba")

    both = ag.concat([pa_batch, pb_batch], axis=0)
    v_norm = batch_norm_average(both)
    inv = ag.reciprocal(ag.add(v_norm, cfg.epsilon))
    d_p = ag.mul(_sq_dist(pa_batch, pb_batch), inv)  # (N,)
    d_p_mean = ag.mean(d_p)
    total = ag.add(ag.scale(d_p_mean, cfg.beta), half_mt)

    delta_ab_mean = delta_ba_mean = 0.0
    if n_neg:
        shape = (N, n_neg, d)

        def deltas(anchor: Tensor, pool: Tensor, idx: np.ndarray) -> Tensor:
            a = ag.expand(ag.reshape(anchor, (N, 1, d)), shape)
            d_n = ag.mul(_sq_dist(a, ag.take(pool, idx)), inv)  # (N, n_neg)
            dp = ag.expand(ag.reshape(d_p, (N, 1)), (N, n_neg))
            return margin_delta(d_n, dp, cfg.alpha)

        s_ab = ag.mean(ag.sum(deltas(pa_batch, pb_batch, neg_ab), axis=1))
        s_ba = ag.mean(ag.sum(deltas(pb_batch, pa_batch, neg_ba), axis=1))
        total = ag.add(total, ag.scale(ag.add(s_ab, s_ba), cfg.lam / n_neg))
        delta_ab_mean = float(s_ab.data) / n_neg
        delta_ba_mean = float(s_ba.data) / n_neg

    breakdown = LossBreakdown(
        l_mt=float(l_mt_ab.data), d_p_mean=float(d_p_mean.data), delta_mean_ab=delta_ab_mean,
        delta_mean_ba=delta_ba_mean, v_norm=float(v_norm.data), total=float(total.data),
        beta=cfg.beta, lam=cfg.lam, n_neg=n_neg,
    )
    return total, breakdown
