"""Hypersphere margin losses with selective gradient routing.

Three terms make up the training objective:

* classification: cross-entropy on the classifier logits, computed on a
  gradient-detached latent so only the classifier learns from it;
* center-point: pulls each class's target-domain latent inside a radius-r
  sphere around its center and pushes distinct centers at least d apart
  (each unordered pair appears in both per-class terms at half weight);
* latent: pulls every latent inside the radius-r sphere of its class
  center, with the centers detached so only the encoder learns from it.

The weighted sum is cls + lambda_cen * cen + lambda_latent * latent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .data import SamplerContractError


@dataclass
class LossConfig:
    lambda_cen: float = 100.0
    lambda_latent: float = 1.0
    r: float = 0.1
    d: float = 1.9

    def validate(self, require_margin: bool = True) -> None:
        if self.r < 0:
            raise ValueError(f"loss.r must be >= 0, got {self.r}")
        if not 0 < self.d <= 2:
            raise ValueError(f"loss.d must lie in (0, 2], got {self.d}")
        if require_margin and not self.d > 2 * self.r:
            raise ValueError(f"loss requires d > 2r, got d={self.d}, r={self.r}")


@dataclass
class LossBreakdown:
    cls: float
    cen: float
    latent: float
    total: float


def _distance(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.sqrt(ad.sum_all(ad.square(ad.sub(a, b))))


def _sphere_hinge(dist: ad.Tensor, r: float) -> ad.Tensor:
    return ad.square(ad.max_with_scalar(ad.sub(dist, r), 0.0))


def classification_loss(logits: ad.Tensor, label: int) -> ad.Tensor:
    """Cross-entropy of a logit vector (delegates to the engine op)."""
    return ad.softmax_cross_entropy(logits, label)


def classification_loss_batch(
    params: mdl.ModelParams,
    latents: ad.Tensor,
    labels: Sequence[int],
    weights: np.ndarray | None = None,
) -> ad.Tensor:
    """Mean cross-entropy over latent rows, detached before the classifier
    so the backward pass reaches the classifier parameters only."""
    logits = mdl.class_logits(params, ad.detach(latents))
    return ad.softmax_cross_entropy_mean(logits, labels, weights=weights)


def center_point_loss(
    f_targets: Sequence[mdl.LatentVector], centers: ad.Tensor, cfg: LossConfig
) -> ad.Tensor:
    """Center-point loss summed over one target-domain latent per class.

    Gradients flow both into the centers and, through the latents, into the
    encoder.
    """
    n = centers.values.shape[0]
    by_class: dict[int, mdl.LatentVector] = {}
    for lv in f_targets:
        if lv.class_tag in by_class:
            raise SamplerContractError(f"duplicate target latent for class {lv.class_tag}")
        by_class[lv.class_tag] = lv
    missing = [i for i in range(n) if i not in by_class]
    if missing or len(f_targets) != n:
        raise SamplerContractError(f"need exactly one target latent per class; missing {missing}")

    total: ad.Tensor | None = None
    rows = [ad.row(centers, i) for i in range(n)]
    # each unordered pair shows up half-weighted in both per-class terms;
    # the distance node is shared, which backpropagates identically
    pair_push: dict[tuple[int, int], ad.Tensor] = {}
    for i in range(n):
        for k in range(i + 1, n):
            gap = ad.sub(cfg.d, _distance(rows[k], rows[i]))
            pair_push[(i, k)] = ad.square(ad.max_with_scalar(gap, 0.0))
    for i in range(n):
        term = _sphere_hinge(_distance(by_class[i].f, rows[i]), cfg.r)
        for k in range(n):
            if k == i:
                continue
            push = pair_push[(min(i, k), max(i, k))]
            term = ad.add(term, ad.mul(push, 0.5))
        total = term if total is None else ad.add(total, term)
    return total


def latent_loss(f: ad.Tensor, label: int, centers: ad.Tensor, cfg: LossConfig) -> ad.Tensor:
    """Hinge on the distance from a latent to its class center; the centers
    are detached, so only the encoder learns from this term."""
    n = centers.values.shape[0]
    if not 0 <= int(label) < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    center = ad.row(ad.detach(centers), int(label))
    return _sphere_hinge(_distance(f, center), cfg.r)


def latent_loss_batch(
    latents: ad.Tensor, labels: Sequence[int], centers: ad.Tensor, cfg: LossConfig
) -> ad.Tensor:
    """Mean of latent_loss over latent rows (same routing, one graph pass)."""
    n = centers.values.shape[0]
    idx = np.asarray(labels, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"label out of range for {n} classes")
    anchor = ad.take_rows(ad.detach(centers), idx)
    dists = ad.sqrt(ad.sum_rows(ad.square(ad.sub(latents, anchor))))
    return ad.mean_all(_sphere_hinge(dists, cfg.r))


def total_loss(
    cls: ad.Tensor | None,
    cen: ad.Tensor | None,
    latent: ad.Tensor | None,
    cfg: LossConfig,
) -> tuple[ad.Tensor, LossBreakdown]:
    """Weighted sum of the three terms; omitted terms (None) count as zero.

    Zero-weighted terms are left out of the graph entirely so no gradient,
    not even a zero-valued one, reaches their parameters.
    """
    def check(term: ad.Tensor | None, name: str) -> float:
        if term is None:
            return 0.0
        val = term.item()
        if not np.isfinite(val):
            raise ad.NumericalError(f"{name} loss is not finite: {val}")
        return val

    cls_v = check(cls, "classification")
    cen_v = check(cen, "center point")
    latent_v = check(latent, "latent")

    total = cls if cls is not None else ad.Tensor(0.0)
    if cen is not None and cfg.lambda_cen != 0.0:
        total = ad.add(total, ad.mul(cen, cfg.lambda_cen))
    if latent is not None and cfg.lambda_latent != 0.0:
        total = ad.add(total, ad.mul(latent, cfg.lambda_latent))
    breakdown = LossBreakdown(
        cls=cls_v,
        cen=cen_v,
        latent=latent_v,
        total=cls_v + cfg.lambda_cen * cen_v + cfg.lambda_latent * latent_v,
    )
    return total, breakdown
