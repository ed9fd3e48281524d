"""Per-event training loop: paired bag sampling, SGD with momentum and
weight decay, step-decay learning rate, versioned binary checkpoints.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import data as datamod
from .errors import ConfigError, FormatError, NumericError
from .losses import VARIANTS, LossBreakdown, backward, total_loss
from .model import Ablation, ModelConfig, ModelParams, forward_bag, init_params, zero_like_params
from .numkit import GradientSet

MNCK_MAGIC = b"MNCK"
MNCK_VERSION = 1
_DTYPES = {1: "<f4", 2: "<f8"}
_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


@dataclass(frozen=True)
class TrainingConfig:
    lr0: float = 0.005
    lr_decay: float = 0.7
    lr_decay_every: int = 20
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 60
    bag_size: int = 60
    tau: float = 60.0
    eps: float = 1.0
    loss_variant: str = "max-max"
    no_audio: bool = False
    no_vision: bool = False
    no_mmrl: bool = False
    no_bcm: bool = False
    pairs_per_step: int = 1
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def ablation(self) -> Ablation:
        return Ablation(no_audio=self.no_audio, no_vision=self.no_vision)

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")
        if self.bag_size < 1:
            raise ConfigError("bag_size must be >= 1")
        if self.eps < 0:
            raise ConfigError("eps must be nonnegative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.pairs_per_step < 1:
            raise ConfigError("pairs_per_step must be >= 1")
        if self.loss_variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.loss_variant!r}")
        if self.no_mmrl and self.no_bcm:
            raise ConfigError("disabling both loss terms leaves nothing to optimize")
        self.ablation.validate()
        self.model.validate()


@dataclass
class OptimizerState:
    velocity: GradientSet
    step: int = 0
    epoch: int = 0


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainingConfig
    state: OptimizerState
    rng_states: Optional[dict] = None  # bag/negative/shuffle stream states for resume


def lr_at(epoch: int, config: TrainingConfig) -> float:
    if epoch < 0:
        raise ConfigError("epoch must be nonnegative")
    return config.lr0 * config.lr_decay ** (epoch // config.lr_decay_every)


def sgd_step(
    params: ModelParams,
    grads: GradientSet,
    state: OptimizerState,
    lr: float,
    config: TrainingConfig,
) -> None:
    """Classical momentum SGD with coupled weight decay."""
    for name, theta in params.tensors.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name} at step {state.step}")
        g = g + config.weight_decay * theta
        v = state.velocity[name]
        v *= config.momentum
        v += g
        theta -= lr * v
    state.step += 1
    params.bump_version()


def _make_streams(seed: int):
    ss = np.random.SeedSequence(seed)
    init_ss, bag_ss, neg_ss, shuffle_ss = ss.spawn(4)
    return (
        int(init_ss.generate_state(1)[0]),
        np.random.default_rng(bag_ss),
        np.random.default_rng(neg_ss),
        np.random.default_rng(shuffle_ss),
    )


def train_event(
    index: datamod.DatasetIndex,
    interest_event: str,
    config: TrainingConfig,
    out_dir: Optional[Path] = None,
    checkpoint_path: Optional[Path] = None,
    checkpoint_every: Optional[int] = None,
    resume: Optional[Checkpoint] = None,
) -> Tuple[ModelParams, List[dict]]:
    """Train a model for one interest event.

    Each epoch takes one optimizer step per positive video (in shuffled
    order); every step pairs a bag from that positive video with a bag from a
    uniformly chosen negative video.  Fully deterministic in the seed; all
    randomness flows through derived streams so the run can be resumed from a
    checkpoint bit-exactly.
    """
    config.validate()
    positives, negatives = datamod.split_videos(index, interest_event, config.tau)

    init_seed, bag_rng, neg_rng, shuffle_rng = _make_streams(config.seed)
    if resume is not None:
        if resume.config != config:
            raise ConfigError("resume checkpoint was written with a different configuration")
        params = resume.params
        state = resume.state
        if resume.rng_states is not None:
            bag_rng.bit_generator.state = resume.rng_states["bag"]
            neg_rng.bit_generator.state = resume.rng_states["negative"]
            shuffle_rng.bit_generator.state = resume.rng_states["shuffle"]
        start_epoch = state.epoch
    else:
        params = init_params(config.model, init_seed)
        state = OptimizerState(velocity=zero_like_params(params))
        start_epoch = 0

    expect_dims = (config.model.dv, config.model.da)
    cache: Dict[str, datamod.VideoRecord] = {}

    def video(ref: datamod.VideoRef) -> datamod.VideoRecord:
        if ref.video_id not in cache:
            cache[ref.video_id] = datamod.load_video(ref, expect_dims=expect_dims)
        return cache[ref.video_id]

    ablation = config.ablation
    log: List[dict] = []
    log_lines: List[str] = []
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(epoch, config)
        order = shuffle_rng.permutation(len(positives))
        sums = np.zeros(3)
        n_steps = 0
        for pi in order:
            acc = None
            breakdown_sum = np.zeros(3)
            for _ in range(config.pairs_per_step):
                pos = video(positives[pi])
                neg = video(negatives[neg_rng.integers(len(negatives))])
                bag_p = datamod.sample_bag(pos, config.bag_size, bag_rng, "positive")
                bag_n = datamod.sample_bag(neg, config.bag_size, bag_rng, "negative")
                fwd_p = forward_bag(bag_p, params, ablation)
                fwd_n = forward_bag(bag_n, params, ablation)
                lb = total_loss(
                    fwd_p, fwd_n, config.eps, config.loss_variant, config.no_mmrl, config.no_bcm
                )
                if not np.isfinite(lb.total):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, step {state.step}"
                    )
                grads = backward(
                    fwd_p, fwd_n, params, config.eps, config.loss_variant,
                    config.no_mmrl, config.no_bcm,
                )
                if acc is None:
                    acc = grads
                else:
                    for name in acc:
                        acc[name] += grads[name]
                breakdown_sum += (lb.mm, lb.bce_pos, lb.bce_neg)
            if config.pairs_per_step > 1:
                for name in acc:
                    acc[name] /= config.pairs_per_step
            sgd_step(params, acc, state, lr, config)
            sums += breakdown_sum / config.pairs_per_step
            n_steps += 1
        state.epoch = epoch + 1
        mean = sums / max(n_steps, 1)
        entry = {
            "epoch": epoch,
            "lr": lr,
            "mm": float(mean[0]),
            "bce_pos": float(mean[1]),
            "bce_neg": float(mean[2]),
            "total": float(mean.sum()),
        }
        log.append(entry)
        log_lines.append(
            "{epoch}\t{lr:.10g}\t{mm:.10g}\t{bce_pos:.10g}\t{bce_neg:.10g}\t{total:.10g}".format(**entry)
        )
        if checkpoint_path is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, _snapshot(params, config, state, bag_rng, neg_rng, shuffle_rng))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{interest_event}.train.log").write_text(
            "\n".join(log_lines) + "\n", encoding="utf-8"
        )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, _snapshot(params, config, state, bag_rng, neg_rng, shuffle_rng))
    return params, log


def _snapshot(params, config, state, bag_rng, neg_rng, shuffle_rng) -> Checkpoint:
    return Checkpoint(
        params=params,
        config=config,
        state=state,
        rng_states={
            "bag": bag_rng.bit_generator.state,
            "negative": neg_rng.bit_generator.state,
            "shuffle": shuffle_rng.bit_generator.state,
        },
    )


# ---------------------------------------------------------------------------
# Checkpoint serialization (MNCK container)


def _config_to_dict(config: TrainingConfig) -> dict:
    d = asdict(config)
    return d


def _config_from_dict(d: dict) -> TrainingConfig:
    d = dict(d)
    model = ModelConfig(**d.pop("model"))
    return TrainingConfig(model=model, **d)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "config": _config_to_dict(ckpt.config),
        "step": ckpt.state.step,
        "epoch": ckpt.state.epoch,
        "params_version": ckpt.params.version,
        "rng_states": ckpt.rng_states,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors = [(f"p/{k}", v) for k, v in sorted(ckpt.params.tensors.items())]
    tensors += [(f"v/{k}", v) for k, v in sorted(ckpt.state.velocity.items())]
    blob = bytearray()
    blob += MNCK_MAGIC
    blob += struct.pack("<I", MNCK_VERSION)
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name, tensor in tensors:
        nb = name.encode("utf-8")
        code = _DTYPE_CODES[tensor.dtype]
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<BI", code, tensor.ndim)
        blob += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        blob += np.ascontiguousarray(tensor).astype(_DTYPES[code]).tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        chunk = raw[off : off + n]
        off += n
        return chunk

    if take(4) != MNCK_MAGIC:
        raise FormatError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != MNCK_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BI", take(5))
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        dt = np.dtype(_DTYPES[code])
        arr = np.frombuffer(take(count * dt.itemsize), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("=")).copy()
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")

    config = _config_from_dict(meta["config"])
    p_tensors = {k[2:]: v for k, v in tensors.items() if k.startswith("p/")}
    v_tensors = {k[2:]: v for k, v in tensors.items() if k.startswith("v/")}
    expected = {name for name, _ in _model_shapes(config.model)}
    if set(p_tensors) != expected:
        missing = sorted(expected.symmetric_difference(p_tensors))
        raise FormatError(f"{path}: tensor set mismatch: {missing}")
    for name, shape in _model_shapes(config.model):
        if p_tensors[name].shape != shape:
            raise FormatError(
                f"{path}: tensor {name} has shape {p_tensors[name].shape}, expected {shape}"
            )
    params = ModelParams(config.model, p_tensors)
    params.version = meta.get("params_version", 0)
    state = OptimizerState(velocity=v_tensors, step=meta["step"], epoch=meta["epoch"])
    return Checkpoint(params=params, config=config, state=state, rng_states=meta.get("rng_states"))


def _model_shapes(model_config: ModelConfig):
    from .model import _layer_shapes

    return _layer_shapes(model_config)
