"""Window schedules, composed videos and localized label estimation.

Windows are 0-based and half-open: a window starting at ``t1`` of size ``N``
covers segments ``t1 .. t1+N-1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numkit as nk
from .datagen import (FeatureVideo, FormatError, disjoint_partner, label_set,
                      label_vector, read_header, vector_to_set)
from .model import ModelParams, video_probs_batch
from .numkit import DomainError

REFINED_FORMAT = "avel-refined-labels"
REFINED_VERSION = 1


class ScheduleError(DomainError):
    """(T, N, s) does not describe a valid sliding-window schedule."""


@dataclass(frozen=True)
class WindowSchedule:
    T: int
    N: int
    s: int
    starts: tuple[int, ...]
    coverage: tuple[int, ...]

    @property
    def T1(self) -> int:
        return len(self.starts)

    @property
    def aux_valid(self) -> bool:
        # complements of the first and last windows meet iff T - N + 1 > N
        return 2 * self.N < self.T + 1

    def windows(self) -> list[tuple[int, int]]:
        return [(t1, t1 + self.N) for t1 in self.starts]

    def masks(self) -> np.ndarray:
        """``(T1, T)`` boolean, True inside each window."""
        m = np.zeros((self.T1, self.T), dtype=bool)
        for w, t1 in enumerate(self.starts):
            m[w, t1:t1 + self.N] = True
        return m


def make_schedule(T: int, N: int, s: int) -> WindowSchedule:
    if not 1 <= N <= T:
        raise ScheduleError(f"window size N={N} must lie in [1, T={T}]")
    if s < 1:
        raise ScheduleError(f"stride s={s} must be >= 1")
    if (T - N) % s:
        raise ScheduleError(f"stride s={s} does not divide T-N={T - N}; some segments would be missed")
    if s > N and T > N:
        raise ScheduleError(f"stride s={s} exceeds window size N={N}; segments between windows would be missed")
    starts = tuple(range(0, T - N + 1, s))
    cov = np.zeros(T, dtype=int)
    for t1 in starts:
        cov[t1:t1 + N] += 1
    return WindowSchedule(T, N, s, starts, tuple(int(c) for c in cov))


def complement_union(schedule: WindowSchedule) -> set[int]:
    """Segments lying outside at least one window."""
    out = set()
    for t1 in schedule.starts:
        out.update(t for t in range(schedule.T) if not t1 <= t < t1 + schedule.N)
    return out


def valid_schedules(T: int) -> list[WindowSchedule]:
    return [make_schedule(T, N, s) for N in range(1, T + 1)
            for s in range(1, max(T - N, 1) + 1) if (T - N) % s == 0 and (s <= N or T == N)]


# ---------------------------------------------------------------------------
# set algebra

def label_set_identity(L_i: frozenset[int], L_j: frozenset[int], window: tuple[int, int],
                       seg_labels_i: np.ndarray, seg_labels_j: np.ndarray,
                       n_classes: int) -> frozenset[int]:
    """``L_i & (L_i[window] | L_j[outside window])``, which equals ``L_i[window]``
    whenever ``L_i`` and ``L_j`` are disjoint."""
    if L_i & L_j:
        raise DomainError(f"label sets overlap on {sorted(L_i & L_j)}")
    t1, t2 = window
    inside = label_set(seg_labels_i, n_classes, t1, t2)
    outside = label_set(seg_labels_j, n_classes, 0, t1) | label_set(seg_labels_j, n_classes, t2)
    return frozenset(L_i) & (inside | outside)


# ---------------------------------------------------------------------------
# composed videos

def compose_synthetic(video_i: FeatureVideo, video_j: FeatureVideo, t1: int, N: int) -> FeatureVideo:
    """Keep ``video_i`` on ``[t1, t1+N)``, take every other segment from ``video_j``."""
    if (video_i.T != video_j.T or video_i.audio.shape != video_j.audio.shape
            or video_i.visual.shape != video_j.visual.shape or video_i.n_classes != video_j.n_classes):
        raise DomainError(f"cannot compose {video_i.vid} with {video_j.vid}: shapes differ")
    if not (0 <= t1 and N >= 1 and t1 + N <= video_i.T):
        raise DomainError(f"window [{t1}, {t1 + N}) outside [0, {video_i.T})")
    keep = np.zeros(video_i.T, dtype=bool)
    keep[t1:t1 + N] = True
    sel = keep[:, None]
    return FeatureVideo(
        f"{video_i.vid}|{video_j.vid}@{t1}",
        np.where(sel, video_i.audio, video_j.audio),
        np.where(sel, video_i.visual, video_j.visual),
        np.where(keep, video_i.labels, video_j.labels),
        video_i.n_classes,
        provenance=keep,
    )


def compose_features(Fi: np.ndarray, Fj: np.ndarray, schedule: WindowSchedule) -> np.ndarray:
    """Batched composition of raw features: ``(B, T, F) x2 -> (B, T1, T, F)``."""
    m = schedule.masks()[None, :, :, None]
    return np.where(m, Fi[:, None], Fj[:, None])


# ---------------------------------------------------------------------------
# refinement

Predictor = Callable[[list[FeatureVideo]], np.ndarray]


def as_predictor(model: ModelParams | Predictor) -> Predictor:
    """Video-level probability predictor from trained params or any callable."""
    if isinstance(model, ModelParams):
        return lambda videos: video_probs_batch(model, videos)
    return model


def refine_video(model: ModelParams | Predictor, pool: Sequence[FeatureVideo], video: FeatureVideo,
                 schedule: WindowSchedule, tau: float, rng: np.random.Generator,
                 partner: FeatureVideo | None = None) -> np.ndarray:
    """Localized label vectors ``(T1, C+1)`` for every window of ``video``.

    One disjoint partner is drawn for the whole video. Each composed video's
    predicted probabilities are masked by the video-level label and
    thresholded at ``tau``.
    """
    if not 0 < tau < 1:
        raise DomainError(f"tau={tau} must lie in (0, 1)")
    if schedule.T != video.T:
        raise ScheduleError(f"schedule is for T={schedule.T}, video has T={video.T}")
    if partner is None:
        partner = disjoint_partner(pool, video, rng)
    composed = [compose_synthetic(video, partner, t1, schedule.N) for t1 in schedule.starts]
    probs = np.asarray(as_predictor(model)(composed))
    C = video.n_classes
    z = video.video_label * probs
    out = np.zeros((schedule.T1, C + 1))
    for w in range(schedule.T1):
        out[w] = label_vector(np.flatnonzero(z[w, :C] >= tau), C)
    return out


@dataclass(eq=False)
class RefinedLabels:
    tau: float
    schedule: WindowSchedule
    n_classes: int
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    partners: dict[str, str] = field(default_factory=dict)

    def vectors_for(self, vid: str) -> np.ndarray:
        try:
            return self.labels[vid]
        except KeyError:
            raise KeyError(f"no refined labels for video {vid!r}") from None

    def __eq__(self, other):
        if not isinstance(other, RefinedLabels):
            return NotImplemented
        return (self.tau == other.tau and self.schedule == other.schedule
                and self.n_classes == other.n_classes and self.labels.keys() == other.labels.keys()
                and all(np.array_equal(self.labels[k], other.labels[k]) for k in self.labels))


def refine_corpus(model: ModelParams | Predictor, videos: Sequence[FeatureVideo],
                  schedule: WindowSchedule, tau: float, seed: int) -> RefinedLabels:
    """Run ``refine_video`` over ``videos`` with per-video RNG streams."""
    predictor = as_predictor(model)
    C = videos[0].n_classes
    out = RefinedLabels(tau, schedule, C)
    for v in videos:
        rng = nk.derive_rng(seed, "refine", v.vid)
        partner = disjoint_partner(videos, v, rng)
        out.labels[v.vid] = refine_video(predictor, videos, v, schedule, tau, rng, partner=partner)
        out.partners[v.vid] = partner.vid
    return out


def dummy_labels(videos: Sequence[FeatureVideo], schedule: WindowSchedule, tau: float = 0.5) -> RefinedLabels:
    """Every window labelled with its video-level label."""
    C = videos[0].n_classes
    return RefinedLabels(tau, schedule, C,
                         {v.vid: np.tile(v.video_label, (schedule.T1, 1)) for v in videos})


def oracle_window_labels(video: FeatureVideo, schedule: WindowSchedule) -> np.ndarray:
    C = video.n_classes
    return np.stack([label_vector(label_set(video.labels, C, a, b), C) for a, b in schedule.windows()])


def oracle_labels(videos: Sequence[FeatureVideo], schedule: WindowSchedule) -> RefinedLabels:
    C = videos[0].n_classes
    return RefinedLabels(0.5, schedule, C, {v.vid: oracle_window_labels(v, schedule) for v in videos})


def refined_label_quality(refined: RefinedLabels, videos: Sequence[FeatureVideo]) -> dict[str, float]:
    """Agreement of refined window vectors with the true window labels.

    Scored like the segment metrics, with windows in place of segments:
    ``nonave_*`` treats "no event in this window" as the detection target,
    ``event_*`` scores individual event bits. ``exact`` is the fraction of
    windows whose whole vector is right.
    """
    ev_tp = ev_fp = ev_fn = 0
    bg_tp = bg_pred = bg_true = 0
    exact = n = 0
    for v in videos:
        pred = refined.vectors_for(v.vid) > 0.5
        true = oracle_window_labels(v, refined.schedule) > 0.5
        C = true.shape[1] - 1
        ev_tp += int((pred[:, :C] & true[:, :C]).sum())
        ev_fp += int((pred[:, :C] & ~true[:, :C]).sum())
        ev_fn += int((~pred[:, :C] & true[:, :C]).sum())
        bg_tp += int((pred[:, C] & true[:, C]).sum())
        bg_pred += int(pred[:, C].sum())
        bg_true += int(true[:, C].sum())
        exact += int((pred == true).all(axis=1).sum())
        n += len(pred)

    def ratio(a, b):
        return a / b if b else 0.0

    return {"nonave_precision": ratio(bg_tp, bg_pred), "nonave_recall": ratio(bg_tp, bg_true),
            "event_precision": ratio(ev_tp, ev_tp + ev_fp), "event_recall": ratio(ev_tp, ev_tp + ev_fn),
            "exact": ratio(exact, n), "windows": n}


def save_refined(refined: RefinedLabels, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sch = refined.schedule
    header = {"format": REFINED_FORMAT, "version": REFINED_VERSION, "tau": refined.tau,
              "N": sch.N, "s": sch.s, "T": sch.T, "C": refined.n_classes}
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for vid in sorted(refined.labels):
            for t1, vec in zip(sch.starts, refined.labels[vid]):
                rec = {"video": vid, "t1": t1, "Y": [int(x) for x in vec]}
                if vid in refined.partners:
                    rec["partner"] = refined.partners[vid]
                f.write(json.dumps(rec) + "\n")


def load_refined(path) -> RefinedLabels:
    with open(path) as f:
        lines = f.read().splitlines()
    h = read_header(lines, REFINED_FORMAT, REFINED_VERSION)
    try:
        sch = make_schedule(h["T"], h["N"], h["s"])
        C = int(h["C"])
        tau = float(h["tau"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"record 0: bad header ({e})") from None
    rows: dict[str, dict[int, np.ndarray]] = {}
    partners = {}
    for i, line in enumerate(lines[1:], start=1):
        try:
            rec = json.loads(line)
            vec = np.array(rec["Y"], dtype=np.float64)
            t1 = int(rec["t1"])
            vid = rec["video"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"record {i}: {type(e).__name__}: {e}") from None
        if vec.shape != (C + 1,) or t1 not in sch.starts:
            raise FormatError(f"record {i}: bad vector length or window start {t1}")
        rows.setdefault(vid, {})[t1] = vec
        if "partner" in rec:
            partners[vid] = rec["partner"]
    out = RefinedLabels(tau, sch, C, partners=partners)
    for vid, by_t1 in rows.items():
        missing = [t for t in sch.starts if t not in by_t1]
        if missing:
            raise FormatError(f"video {vid}: missing windows starting at {missing}")
        out.labels[vid] = np.stack([by_t1[t] for t in sch.starts])
    return out


__all__ = [
    "ScheduleError", "WindowSchedule", "make_schedule", "complement_union", "valid_schedules",
    "label_set_identity", "compose_synthetic", "compose_features", "refine_video", "refine_corpus",
    "RefinedLabels", "dummy_labels", "oracle_labels", "oracle_window_labels",
    "refined_label_quality", "save_refined", "load_refined", "as_predictor", "vector_to_set",
]
