"""Network definition: vision projection, k-branch vision-audio fusion with a
residual connection, per-instance highlight scoring, within-bag softmax
normalization, score-weighted bag pooling, and a two-way bag event classifier.

Parameters live in a flat name -> float64 ndarray mapping so that the
optimizer, checkpoints, and the finite-difference oracle can treat them
uniformly.  Weight matrices are (out, in); a batch X of shape (N, in) is
transformed as X @ W.T + b.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .data import Bag, VideoRecord
from .errors import ConfigError, ShapeError
from .numkit import relu, require_finite, stable_softmax


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths.  The fused feature width equals the audio width; each of
    the k fusion branches emits fused_dim / k coordinates."""

    dv: int = 512  # vision feature width
    da: int = 128  # audio feature width (= fused width)
    hv: int = 256  # vision projection hidden width
    hf: int = 128  # fusion branch hidden width
    ds: int = 64  # scorer subspace width
    hc: int = 64  # classifier hidden width
    k: int = 4  # fusion branch count

    @property
    def fused_dim(self) -> int:
        return self.da

    def validate(self) -> None:
        for name in ("dv", "da", "hv", "hf", "ds", "hc", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model width {name} must be >= 1")
        if self.fused_dim % self.k != 0:
            raise ConfigError(f"branch count k={self.k} must divide the fused width {self.fused_dim}")


@dataclass(frozen=True)
class Ablation:
    no_audio: bool = False
    no_vision: bool = False

    def validate(self) -> None:
        if self.no_audio and self.no_vision:
            raise ConfigError("cannot ablate both audio and vision")


class ModelParams:
    """All learnable tensors plus a version token bumped on every mutation."""

    def __init__(self, config: ModelConfig, tensors: Dict[str, np.ndarray]):
        self.config = config
        self.tensors = tensors
        self.version = 0

    def bump_version(self) -> None:
        self.version += 1

    def copy(self) -> "ModelParams":
        out = ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})
        out.version = self.version
        return out

    def n_scalars(self) -> int:
        return sum(t.size for t in self.tensors.values())


def _layer_shapes(config: ModelConfig) -> List:
    shapes = [
        ("wv1", (config.hv, config.dv)),
        ("bv1", (config.hv,)),
        ("wv2", (config.da, config.hv)),
        ("bv2", (config.da,)),
    ]
    branch_out = config.fused_dim // config.k
    for j in range(config.k):
        shapes += [
            (f"f{j}_w1", (config.hf, 2 * config.da)),
            (f"f{j}_b1", (config.hf,)),
            (f"f{j}_w2", (config.hf, config.hf)),
            (f"f{j}_b2", (config.hf,)),
            (f"f{j}_w3", (branch_out, config.hf)),
            (f"f{j}_b3", (branch_out,)),
        ]
    shapes += [
        ("ws", (config.ds, config.fused_dim)),
        ("bs", (config.ds,)),
        ("wh", (1, config.ds)),
        ("bh", (1,)),
        ("wc1", (config.hc, config.fused_dim)),
        ("bc1", (config.hc,)),
        ("wc2", (2, config.hc)),
        ("bc2", (2,)),
    ]
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-style uniform weights in [-sqrt(6/fan_in), +sqrt(6/fan_in)],
    zero biases, deterministic in the seed (PCG64)."""
    config.validate()
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in _layer_shapes(config):
        if len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            limit = np.sqrt(6.0 / shape[1])
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(np.float64)
    return ModelParams(config, tensors)


def zero_like_params(params: ModelParams) -> Dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


@dataclass
class BagForward:
    """Every intermediate of a bag forward pass, cached for the backward."""

    fused: np.ndarray  # (N, fused_dim)
    raw_scores: np.ndarray  # (N,)
    norm_scores: np.ndarray  # (N,)
    bag_feature: np.ndarray  # (fused_dim,)
    event_prob: float
    # caches
    vision: np.ndarray
    audio: np.ndarray
    proj_hidden: Optional[np.ndarray]  # relu output of the first projection layer
    projected: Optional[np.ndarray]  # projected vision feature (N, da)
    base: np.ndarray  # residual base (projected vision, or audio when no_vision)
    cat: np.ndarray  # branch input (N, 2*da)
    branch_z1: List[np.ndarray] = field(default_factory=list)
    branch_z2: List[np.ndarray] = field(default_factory=list)
    score_hidden: np.ndarray = None  # relu(ws f + bs), (N, ds)
    cls_hidden: np.ndarray = None  # relu(wc1 fB + bc1), (hc,)
    cls_probs: np.ndarray = None  # softmax of the two logits
    ablation: Ablation = Ablation()
    params_version: int = -1


def _project_vision_batch(v: np.ndarray, t: Dict[str, np.ndarray]):
    h = relu(v @ t["wv1"].T + t["bv1"])
    return h, h @ t["wv2"].T + t["bv2"]


def project_vision(fv: np.ndarray, params: ModelParams) -> np.ndarray:
    if fv.shape != (params.config.dv,):
        raise ShapeError(f"vision feature has shape {fv.shape}, expected ({params.config.dv},)")
    _, out = _project_vision_batch(fv[None, :].astype(np.float64), params.tensors)
    return out[0]


def _fuse_batch(cat: np.ndarray, base: np.ndarray, t: Dict[str, np.ndarray], k: int):
    z1s, z2s, outs = [], [], []
    for j in range(k):
        z1 = relu(cat @ t[f"f{j}_w1"].T + t[f"f{j}_b1"])
        z2 = relu(z1 @ t[f"f{j}_w2"].T + t[f"f{j}_b2"])
        outs.append(z2 @ t[f"f{j}_w3"].T + t[f"f{j}_b3"])
        z1s.append(z1)
        z2s.append(z2)
    fr = np.concatenate(outs, axis=1)
    return z1s, z2s, base + fr


def fuse(fv_hat: np.ndarray, fa: np.ndarray, params: ModelParams) -> np.ndarray:
    da = params.config.da
    if fv_hat.shape != (da,) or fa.shape != (da,):
        raise ShapeError(f"fuse expects two ({da},) vectors, got {fv_hat.shape} and {fa.shape}")
    cat = np.concatenate([fv_hat, fa])[None, :].astype(np.float64)
    _, _, out = _fuse_batch(cat, fv_hat[None, :].astype(np.float64), params.tensors, params.config.k)
    return out[0]


def initial_score(f: np.ndarray, params: ModelParams) -> float:
    if f.shape != (params.config.fused_dim,):
        raise ShapeError(f"fused feature has shape {f.shape}, expected ({params.config.fused_dim},)")
    t = params.tensors
    hidden = relu(t["ws"] @ f + t["bs"])
    return float((t["wh"] @ hidden + t["bh"])[0])


def normalize_scores(raw) -> np.ndarray:
    return stable_softmax(np.asarray(raw, dtype=np.float64))


def bag_feature(norm: np.ndarray, fused: np.ndarray) -> np.ndarray:
    norm = np.asarray(norm, dtype=np.float64)
    fused = np.asarray(fused, dtype=np.float64)
    if norm.shape[0] != fused.shape[0]:
        raise ShapeError(f"{norm.shape[0]} weights for {fused.shape[0]} fused features")
    if abs(norm.sum() - 1.0) > 1e-6:
        raise ShapeError("normalized scores must sum to 1")
    return norm @ fused


def classify_bag(fb: np.ndarray, params: ModelParams) -> float:
    if fb.shape != (params.config.fused_dim,):
        raise ShapeError(f"bag feature has shape {fb.shape}, expected ({params.config.fused_dim},)")
    t = params.tensors
    hidden = relu(t["wc1"] @ fb + t["bc1"])
    logits = t["wc2"] @ hidden + t["bc2"]
    return float(stable_softmax(logits)[1])


def forward_bag(bag: Bag, params: ModelParams, ablation: Ablation = Ablation()) -> BagForward:
    ablation.validate()
    cfg = params.config
    t = params.tensors
    v = np.asarray(bag.vision, dtype=np.float64)
    a = np.asarray(bag.audio, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != cfg.dv:
        raise ShapeError(f"bag vision has shape {v.shape}, expected (N, {cfg.dv})")
    if a.shape != (v.shape[0], cfg.da):
        raise ShapeError(f"bag audio has shape {a.shape}, expected ({v.shape[0]}, {cfg.da})")

    if ablation.no_vision:
        proj_hidden, projected = None, None
        base = a
        cat = np.concatenate([a, a], axis=1)
    else:
        proj_hidden, projected = _project_vision_batch(v, t)
        base = projected
        second = projected if ablation.no_audio else a
        cat = np.concatenate([projected, second], axis=1)

    z1s, z2s, fused = _fuse_batch(cat, base, t, cfg.k)
    score_hidden = relu(fused @ t["ws"].T + t["bs"])
    raw = (score_hidden @ t["wh"].T + t["bh"]).ravel()
    norm = stable_softmax(raw)
    fb = norm @ fused
    cls_hidden = relu(t["wc1"] @ fb + t["bc1"])
    logits = t["wc2"] @ cls_hidden + t["bc2"]
    probs = stable_softmax(logits)
    require_finite(fused, "fused features")
    require_finite(raw, "raw scores")
    return BagForward(
        fused=fused,
        raw_scores=raw,
        norm_scores=norm,
        bag_feature=fb,
        event_prob=float(probs[1]),
        vision=v,
        audio=a,
        proj_hidden=proj_hidden,
        projected=projected,
        base=base,
        cat=cat,
        branch_z1=z1s,
        branch_z2=z2s,
        score_hidden=score_hidden,
        cls_hidden=cls_hidden,
        cls_probs=probs,
        ablation=ablation,
        params_version=params.version,
    )


def score_video(
    video: VideoRecord, params: ModelParams, ablation: Ablation = Ablation()
) -> np.ndarray:
    """Raw per-segment highlight scores; each segment is scored independently,
    so ranking by these matches ranking by any within-video softmax."""
    if video.n_segments == 0:
        raise ShapeError(f"{video.video_id}: empty video")
    bag = Bag(
        vision=video.vision,
        audio=video.audio,
        polarity="positive",
        source_video=video.video_id,
        instance_indices=np.arange(video.n_segments),
    )
    return forward_bag(bag, params, ablation).raw_scores
