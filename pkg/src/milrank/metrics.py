"""Ranking metrics and model evaluation: average precision, AP over the
top-k ranks, per-event aggregation, and highlight extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import VideoRecord
from .errors import DataError, ShapeError
from .model import Ablation, ModelParams, score_video


@dataclass(frozen=True)
class ScoredSegment:
    video_id: str
    segment_index: int
    start_s: float
    end_s: float
    score: float


@dataclass
class EvalReport:
    event: str
    metric: str  # "mAP" | "top5-mAP"
    per_video: List[Tuple[str, float]] = field(default_factory=list)

    @property
    def aggregate(self) -> float:
        if not self.per_video:
            return 0.0
        return float(np.mean([ap for _, ap in self.per_video]))

    def to_text(self) -> str:
        lines = [f"event\t{self.event}\tmetric\t{self.metric}"]
        lines += [f"{vid}\t{ap:.10g}" for vid, ap in self.per_video]
        lines.append(f"aggregate\t{self.aggregate:.10g}")
        return "\n".join(lines) + "\n"


def _ranked_labels(labels: np.ndarray, scores: np.ndarray) -> np.ndarray:
    if labels.shape != scores.shape:
        raise ShapeError(f"{labels.shape[0]} labels for {scores.shape[0]} scores")
    if labels.size == 0:
        raise ShapeError("empty label sequence")
    # sort by descending score; ties by ascending original index
    order = np.lexsort((np.arange(scores.size), -scores))
    return labels[order]


def average_precision(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Mean of precision-at-rank over the positive ranks; 0 when there are no
    positives."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    ranked = _ranked_labels(labels, scores)
    n_pos = int(ranked.sum())
    if n_pos == 0:
        return 0.0
    hits = np.cumsum(ranked)
    prec = hits / np.arange(1, ranked.size + 1)
    # sequential accumulation in rank order keeps the result bit-identical to
    # a direct evaluation of the definition
    return float(sum(prec[ranked == 1]) / n_pos)


def ap_at_k(labels: Sequence[int], scores: Sequence[float], k: int) -> float:
    """AP restricted to the top-k ranks, normalized by min(P, k)."""
    if k < 1:
        raise ShapeError("k must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    ranked = _ranked_labels(labels, scores)
    n_pos = int(ranked.sum())
    if n_pos == 0:
        return 0.0
    top = ranked[:k]
    hits = np.cumsum(top)
    prec = hits / np.arange(1, top.size + 1)
    return float(sum(prec[top == 1]) / min(n_pos, k))


def binarize_importance(importance: Sequence[int]) -> np.ndarray:
    """Mark the top 50% of segments by importance as positives.  Ties break
    toward the earlier segment."""
    imp = np.asarray(importance, dtype=np.float64)
    if imp.size == 0:
        raise ShapeError("empty importance sequence")
    n_pos = max(1, imp.size // 2)
    order = np.lexsort((np.arange(imp.size), -imp))
    labels = np.zeros(imp.size, dtype=np.int64)
    labels[order[:n_pos]] = 1
    return labels


def evaluate_map(
    params: ModelParams,
    videos: Sequence[VideoRecord],
    event: str,
    ablation: Ablation = Ablation(),
) -> EvalReport:
    """Per-video average precision of the segment ranking against binary
    labels, averaged over videos."""
    report = EvalReport(event=event, metric="mAP")
    for video in videos:
        if video.labels is None:
            raise DataError(f"{video.video_id}: no labels")
        labels = np.asarray(video.labels)
        if not np.all((labels == 0) | (labels == 1)):
            raise DataError(f"{video.video_id}: labels must be binary for mAP")
        scores = score_video(video, params, ablation)
        report.per_video.append((video.video_id, average_precision(labels, scores)))
    return report


def evaluate_top5_map(
    params: ModelParams,
    videos: Sequence[VideoRecord],
    event: str,
    ablation: Ablation = Ablation(),
    summaries_per_video: Optional[Sequence[Sequence[Sequence[int]]]] = None,
) -> EvalReport:
    """Top-5 AP per video, averaged over videos.

    Without explicit summaries, each video's importance labels are binarized
    by the top-50% rule.  With ``summaries_per_video`` (one list of binary
    label sequences per video), the per-video AP is the mean over summaries.
    """
    report = EvalReport(event=event, metric="top5-mAP")
    for i, video in enumerate(videos):
        scores = score_video(video, params, ablation)
        if summaries_per_video is not None:
            summaries = summaries_per_video[i]
            if not summaries:
                raise DataError(f"{video.video_id}: no summaries")
            aps = [ap_at_k(np.asarray(s, dtype=np.int64), scores, 5) for s in summaries]
            ap = float(np.mean(aps))
        else:
            if video.labels is None:
                raise DataError(f"{video.video_id}: no importance labels")
            ap = ap_at_k(binarize_importance(video.labels), scores, 5)
        report.per_video.append((video.video_id, ap))
    return report


def scored_segments(video: VideoRecord, params: ModelParams, ablation: Ablation = Ablation()) -> List[ScoredSegment]:
    scores = score_video(video, params, ablation)
    return [
        ScoredSegment(video.video_id, i, float(i), float(i + 1), float(s))
        for i, s in enumerate(scores)
    ]


def extract_highlights(
    segments: Sequence[ScoredSegment],
    mode: str,
    k: Optional[int] = None,
    threshold: Optional[float] = None,
) -> Tuple[List[ScoredSegment], bool]:
    """Select highlight segments; returns (selection, clamped_flag).

    top-k mode returns the k highest-scoring segments in temporal order
    (k clamped to the segment count, setting the flag); threshold mode
    returns every segment with score >= threshold.
    """
    if not segments:
        raise ShapeError("no segments to extract from")
    if mode == "top-k":
        if k is None or k < 1:
            raise ShapeError("top-k extraction needs k >= 1")
        clamped = k > len(segments)
        kk = min(k, len(segments))
        order = sorted(range(len(segments)), key=lambda i: (-segments[i].score, i))[:kk]
        return [segments[i] for i in sorted(order)], clamped
    if mode == "threshold":
        if threshold is None:
            raise ShapeError("threshold extraction needs a threshold")
        return [s for s in segments if s.score >= threshold], False
    raise ShapeError(f"unknown extraction mode {mode!r}")
