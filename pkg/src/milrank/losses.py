"""Objectives: hinge ranking losses over per-bag score statistics, binary
cross-entropy on the bag event probability, and the exact gradient of the
combined objective via reverse accumulation through the cached forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .model import Ablation, BagForward, ModelParams, zero_like_params
from .numkit import GradientSet

BCE_CLAMP = 1e-7

VARIANTS = ("max-max", "min-min", "min-max", "max-min")


@dataclass(frozen=True)
class LossBreakdown:
    mm: float
    bce_pos: float
    bce_neg: float

    @property
    def total(self) -> float:
        return self.mm + self.bce_pos + self.bce_neg


def _stat(scores: np.ndarray, use_max: bool):
    """Selected statistic and its index; ties go to the lowest index."""
    idx = int(np.argmax(scores) if use_max else np.argmin(scores))
    return float(scores[idx]), idx


def _variant_ops(variant: str):
    try:
        pos_max, neg_max = {
            "max-max": (True, True),
            "min-min": (False, False),
            "min-max": (False, True),
            "max-min": (True, False),
        }[variant]
    except KeyError:
        raise ConfigError(f"unknown ranking loss variant {variant!r}") from None
    return pos_max, neg_max


def _ranking_loss(ep, en, eps: float, variant: str) -> float:
    ep = np.asarray(ep, dtype=np.float64)
    en = np.asarray(en, dtype=np.float64)
    if ep.size == 0 or en.size == 0:
        raise DataError("ranking loss needs nonempty score sequences")
    pos_max, neg_max = _variant_ops(variant)
    sp, _ = _stat(ep, pos_max)
    sn, _ = _stat(en, neg_max)
    return max(0.0, eps - sp + sn)


def mm_ranking_loss(ep, en, eps: float) -> float:
    return _ranking_loss(ep, en, eps, "max-max")


def variant_ranking_loss(ep, en, eps: float, variant: str) -> float:
    if variant not in ("min-min", "min-max", "max-min"):
        raise ConfigError(f"unknown ranking loss variant {variant!r}")
    return _ranking_loss(ep, en, eps, variant)


def bce(y: float, label: int) -> float:
    y = min(max(float(y), BCE_CLAMP), 1.0 - BCE_CLAMP)
    if label == 1:
        return -math.log(y)
    if label == 0:
        return -math.log(1.0 - y)
    raise ConfigError(f"binary label must be 0 or 1, got {label!r}")


def total_loss(
    fwd_p: BagForward,
    fwd_n: BagForward,
    eps: float,
    variant: str = "max-max",
    ablate_mm: bool = False,
    ablate_bcm: bool = False,
) -> LossBreakdown:
    if ablate_mm and ablate_bcm:
        raise ConfigError("ablating both the ranking and classification terms leaves no objective")
    mm = 0.0 if ablate_mm else _ranking_loss(fwd_p.norm_scores, fwd_n.norm_scores, eps, variant)
    if ablate_bcm:
        bp = bn = 0.0
    else:
        bp = bce(fwd_p.event_prob, 1)
        bn = bce(fwd_n.event_prob, 0)
    return LossBreakdown(mm=mm, bce_pos=bp, bce_neg=bn)


# ---------------------------------------------------------------------------
# Backward


def _backward_bag(
    fwd: BagForward, params: ModelParams, d_norm: np.ndarray, d_prob: float, grads: GradientSet
) -> None:
    """Accumulate gradients for one bag given dL/d(norm_scores) and
    dL/d(event_prob)."""
    t = params.tensors
    cfg = params.config
    abl = fwd.ablation

    # classifier head: event_prob = softmax(logits)[1]
    p = fwd.cls_probs
    d_logits = d_prob * p[1] * (np.array([0.0, 1.0]) - p)
    grads["wc2"] += np.outer(d_logits, fwd.cls_hidden)
    grads["bc2"] += d_logits
    d_ch = t["wc2"].T @ d_logits
    d_ch *= fwd.cls_hidden > 0
    grads["wc1"] += np.outer(d_ch, fwd.bag_feature)
    grads["bc1"] += d_ch
    d_fb = t["wc1"].T @ d_ch

    # bag feature: fB = sum_i E_i f_i
    d_norm = d_norm + fwd.fused @ d_fb
    d_fused = fwd.norm_scores[:, None] * d_fb[None, :]

    # softmax over raw scores (full Jacobian)
    e = fwd.norm_scores
    d_raw = e * (d_norm - float(d_norm @ e))

    # scorer: raw = wh relu(ws f + bs) + bh
    grads["wh"] += (d_raw @ fwd.score_hidden)[None, :]
    grads["bh"] += d_raw.sum()
    d_sh = np.outer(d_raw, t["wh"].ravel())
    d_sh *= fwd.score_hidden > 0
    grads["ws"] += d_sh.T @ fwd.fused
    grads["bs"] += d_sh.sum(axis=0)
    d_fused = d_fused + d_sh @ t["ws"]

    # fusion: fused = base + concat_j branch_j(cat)
    d_base = d_fused.copy()
    d_cat = np.zeros_like(fwd.cat)
    width = cfg.fused_dim // cfg.k
    for j in range(cfg.k):
        d_z3 = d_fused[:, j * width : (j + 1) * width]
        z1, z2 = fwd.branch_z1[j], fwd.branch_z2[j]
        grads[f"f{j}_w3"] += d_z3.T @ z2
        grads[f"f{j}_b3"] += d_z3.sum(axis=0)
        d_z2 = d_z3 @ t[f"f{j}_w3"]
        d_z2 *= z2 > 0
        grads[f"f{j}_w2"] += d_z2.T @ z1
        grads[f"f{j}_b2"] += d_z2.sum(axis=0)
        d_z1 = d_z2 @ t[f"f{j}_w2"]
        d_z1 *= z1 > 0
        grads[f"f{j}_w1"] += d_z1.T @ fwd.cat
        grads[f"f{j}_b1"] += d_z1.sum(axis=0)
        d_cat += d_z1 @ t[f"f{j}_w1"]

    da = cfg.da
    if abl.no_vision:
        return  # base and both cat halves are the raw audio input
    d_proj = d_base + d_cat[:, :da]
    if abl.no_audio:
        d_proj = d_proj + d_cat[:, da:]
    grads["wv2"] += d_proj.T @ fwd.proj_hidden
    grads["bv2"] += d_proj.sum(axis=0)
    d_h = d_proj @ t["wv2"]
    d_h *= fwd.proj_hidden > 0
    grads["wv1"] += d_h.T @ fwd.vision
    grads["bv1"] += d_h.sum(axis=0)


def _bce_grad(y: float, label: int) -> float:
    # gradient of the clamped BCE; zero inside the clamp region
    if y <= BCE_CLAMP or y >= 1.0 - BCE_CLAMP:
        return 0.0
    return -1.0 / y if label == 1 else 1.0 / (1.0 - y)


def backward(
    fwd_p: BagForward,
    fwd_n: BagForward,
    params: ModelParams,
    eps: float,
    variant: str = "max-max",
    ablate_mm: bool = False,
    ablate_bcm: bool = False,
) -> GradientSet:
    """Exact gradient of ``total_loss`` with respect to every parameter.

    The hinge uses subgradient 0 at the kink; the max/min selections route
    gradient only through the selected instance, while the in-bag softmax
    Jacobian spreads it over every raw score.
    """
    for fwd, side in ((fwd_p, "positive"), (fwd_n, "negative")):
        if fwd.params_version != params.version:
            raise ConfigError(f"{side} forward cache is stale (params changed since forward)")
    if ablate_mm and ablate_bcm:
        raise ConfigError("ablating both the ranking and classification terms leaves no objective")

    grads = zero_like_params(params)

    d_norm_p = np.zeros_like(fwd_p.norm_scores)
    d_norm_n = np.zeros_like(fwd_n.norm_scores)
    if not ablate_mm:
        pos_max, neg_max = _variant_ops(variant)
        sp, ip = _stat(fwd_p.norm_scores, pos_max)
        sn, iq = _stat(fwd_n.norm_scores, neg_max)
        if eps - sp + sn > 0.0:
            d_norm_p[ip] = -1.0
            d_norm_n[iq] = 1.0

    d_prob_p = d_prob_n = 0.0
    if not ablate_bcm:
        d_prob_p = _bce_grad(fwd_p.event_prob, 1)
        d_prob_n = _bce_grad(fwd_n.event_prob, 0)

    _backward_bag(fwd_p, params, d_norm_p, d_prob_p, grads)
    _backward_bag(fwd_n, params, d_norm_n, d_prob_n, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return grads
