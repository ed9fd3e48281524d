"""Toy-scale comparison of the analytic backward pass against the
finite-difference oracle, across loss variants and ablation switches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import Bag
from .losses import VARIANTS, _variant_ops, backward, bce, total_loss
from .model import Ablation, ModelConfig, ModelParams, forward_bag, init_params
from .numkit import finite_diff_gradient

TOY_MODEL = ModelConfig(dv=8, da=4, hv=3, hf=3, ds=2, hc=2, k=2)
TOY_BAG_SIZE = 5


@dataclass(frozen=True)
class CheckCase:
    variant: str
    ablation: Ablation
    ablate_mm: bool
    ablate_bcm: bool

    def label(self) -> str:
        bits = [self.variant]
        if self.ablation.no_audio:
            bits.append("no-audio")
        if self.ablation.no_vision:
            bits.append("no-vision")
        if self.ablate_mm:
            bits.append("no-mmrl")
        if self.ablate_bcm:
            bits.append("no-bcm")
        return "+".join(bits)


def all_cases(variants=VARIANTS) -> List[CheckCase]:
    """Every modality / loss-term / variant combination worth checking.  When
    the ranking term is ablated the variant is irrelevant, so only one
    representative is kept."""
    cases = []
    modalities = [Ablation(), Ablation(no_audio=True), Ablation(no_vision=True)]
    for abl in modalities:
        for variant in variants:
            cases.append(CheckCase(variant, abl, False, False))
            cases.append(CheckCase(variant, abl, False, True))
        cases.append(CheckCase(VARIANTS[0], abl, True, False))
    return cases


def _random_bag(rng: np.random.Generator, polarity: str) -> Bag:
    # moderate feature scale keeps event probabilities away from the BCE
    # clamp, where the log curvature would swamp the difference quotient
    n = TOY_BAG_SIZE
    return Bag(
        vision=0.5 * rng.standard_normal((n, TOY_MODEL.dv)),
        audio=0.5 * rng.standard_normal((n, TOY_MODEL.da)),
        polarity=polarity,
        source_video=f"toy-{polarity}",
        instance_indices=np.arange(n),
    )


def pair_loss(
    bag_p: Bag, bag_n: Bag, params: ModelParams, case: CheckCase, eps: float
) -> float:
    """Total loss of one bag pair, computed in a single stacked forward.

    Semantically identical to ``total_loss`` over two ``forward_bag`` calls
    (asserted by a test) but with less interpreter overhead, which matters
    because the finite-difference oracle evaluates it hundreds of times per
    parameter sweep.
    """
    t = params.tensors
    cfg = params.config
    n = bag_p.vision.shape[0]
    v = np.concatenate([bag_p.vision, bag_n.vision])
    a = np.concatenate([bag_p.audio, bag_n.audio])
    if case.ablation.no_vision:
        base = a
        cat = np.concatenate([a, a], axis=1)
    else:
        h = np.maximum(v @ t["wv1"].T + t["bv1"], 0.0)
        base = h @ t["wv2"].T + t["bv2"]
        second = base if case.ablation.no_audio else a
        cat = np.concatenate([base, second], axis=1)
    outs = []
    for j in range(cfg.k):
        z1 = np.maximum(cat @ t[f"f{j}_w1"].T + t[f"f{j}_b1"], 0.0)
        z2 = np.maximum(z1 @ t[f"f{j}_w2"].T + t[f"f{j}_b2"], 0.0)
        outs.append(z2 @ t[f"f{j}_w3"].T + t[f"f{j}_b3"])
    fused = base + np.concatenate(outs, axis=1)
    sh = np.maximum(fused @ t["ws"].T + t["bs"], 0.0)
    raw = (sh @ t["wh"].T + t["bh"]).ravel()

    loss = 0.0
    norms = []
    for sl in (slice(0, n), slice(n, 2 * n)):
        e = np.exp(raw[sl] - raw[sl].max())
        norms.append(e / e.sum())
    if not case.ablate_mm:
        pos_max, neg_max = _variant_ops(case.variant)
        sp = norms[0].max() if pos_max else norms[0].min()
        sn = norms[1].max() if neg_max else norms[1].min()
        loss += max(0.0, eps - sp + sn)
    if not case.ablate_bcm:
        fb = np.stack([norms[0] @ fused[:n], norms[1] @ fused[n:]])
        ch = np.maximum(fb @ t["wc1"].T + t["bc1"], 0.0)
        logits = ch @ t["wc2"].T + t["bc2"]
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = shifted[:, 1] / shifted.sum(axis=1)
        loss += bce(probs[0], 1) + bce(probs[1], 0)
    return loss


def relative_errors(
    analytic: Dict[str, np.ndarray], numeric: Dict[str, np.ndarray]
) -> Dict[str, float]:
    """Per-tensor max of |a - f| / max(1, |a|, |f|)."""
    out = {}
    for name, a in analytic.items():
        f = numeric[name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
        out[name] = float(np.max(np.abs(a - f) / denom))
    return out


def check_case(
    case: CheckCase, seed: int, eps: float = 1.0, h: float = 1e-6
) -> Tuple[float, Dict[str, float]]:
    """Max relative error over all parameters for one configuration.

    Biases are nudged off their zero init so no relu pre-activation sits
    exactly on the kink, where central differences straddle the subgradient.
    The probe step is small for the same reason.
    """
    rng = np.random.default_rng(seed)
    params = init_params(TOY_MODEL, int(rng.integers(2**63)))
    for tensor in params.tensors.values():
        if tensor.ndim == 1:
            tensor += rng.uniform(-0.3, 0.3, size=tensor.shape)
    bag_p = _random_bag(rng, "positive")
    bag_n = _random_bag(rng, "negative")

    fwd_p = forward_bag(bag_p, params, case.ablation)
    fwd_n = forward_bag(bag_n, params, case.ablation)
    analytic = backward(
        fwd_p, fwd_n, params, eps, case.variant, case.ablate_mm, case.ablate_bcm
    )

    def loss_fn(p: ModelParams) -> float:
        return pair_loss(bag_p, bag_n, p, case, eps)

    numeric = finite_diff_gradient(loss_fn, params, h=h)
    errs = relative_errors(analytic, numeric)
    return max(errs.values()), errs


def run_gradient_check(
    seeds=range(20),
    variants=VARIANTS,
    tolerance: float = 1e-4,
    perturb: float = 0.0,
) -> Dict[str, float]:
    """Max relative error per case label over all seeds.  ``perturb`` adds a
    deliberate offset to one analytic gradient entry (detector sanity hook).
    """
    results: Dict[str, float] = {}
    for case in all_cases(variants):
        worst = 0.0
        for seed in seeds:
            err, errs = check_case(case, seed)
            if perturb:
                err = max(err, perturb)
            worst = max(worst, err)
        results[case.label()] = worst
    return results
