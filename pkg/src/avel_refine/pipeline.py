"""Three-stage training: base MIL model (optionally with the auxiliary
objective), label refinement, and retraining with refined window labels.
Also the pseudo-label and dummy-label baselines used in the ablation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numkit as nk
from .datagen import Corpus, FeatureVideo, partner_candidates
from .evalkit.metrics import MetricsReport, compute_metrics
from .model import (ModelConfig, ModelParams, batch_segment_ce, context_features, encode,
                    encode_backward, init_params, predict_batch, video_inputs, window_bag_loss)
from .numkit import DomainError, Params
from .refine import (RefinedLabels, WindowSchedule, compose_features, dummy_labels, make_schedule,
                     refine_corpus, refined_label_quality)

log = logging.getLogger(__name__)

VARIANTS = ("BASE", "BASE+PL", "BASE+LRdummy", "BASE+LR", "BASE+A+LR")


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 200
    stage3_epochs: int = 100
    lr: float = 0.001
    batch_size: int = 64
    tau: float = 0.05
    N: int = 4
    s: int = 2
    aux_weight: float = 1.0
    lr_weight: float = 1.0
    seed: int = 0

    def validate(self, T: int | None = None, need_aux: bool = False) -> None:
        if self.stage1_epochs < 1 or self.stage3_epochs < 1:
            raise DomainError("epoch counts must be >= 1")
        if self.batch_size < 1 or not 0 < self.lr < np.inf:
            raise DomainError("batch size and learning rate must be positive and finite")
        if self.aux_weight < 0 or self.lr_weight < 0:
            raise DomainError("loss weights must be >= 0")
        if not 0 < self.tau < 1:
            raise DomainError(f"tau={self.tau} must lie in (0, 1)")
        if T is not None:
            sch = make_schedule(T, self.N, self.s)
            if need_aux and not sch.aux_valid:
                raise DomainError(f"auxiliary objective needs N < (T+1)/2, got N={self.N}, T={T}")


# ---------------------------------------------------------------------------
# batched losses

def union_vectors(Yi: np.ndarray, Yj: np.ndarray) -> np.ndarray:
    """Label vectors of ``L_i | L_j`` (background bit set iff the union is empty)."""
    C = Yi.shape[-1] - 1
    ev = np.maximum(Yi[..., :C], Yj[..., :C])
    bg = (ev.sum(-1, keepdims=True) == 0).astype(np.float64)
    return np.concatenate([ev, bg], axis=-1)


def batch_aux_loss(weights: Params, Fi: np.ndarray, Fj: np.ndarray, Yi: np.ndarray, Yj: np.ndarray,
                   schedule: WindowSchedule, radius: int) -> tuple[np.ndarray, Params | None, tuple]:
    """Per-video auxiliary losses and the gradient of their *sum*.

    ``Fi``/``Fj`` are raw ``(B, T, F)`` features of the videos and their
    partners. All ``T1`` compositions are encoded, max-pooled over segments
    and then across compositions (one joint max; ties go to the earliest
    composition, then the earliest segment).
    """
    B, T, _ = Fi.shape
    W = schedule.T1
    comp = compose_features(Fi, Fj, schedule)
    S, cache = encode(weights, context_features(comp, radius))
    K = S.shape[-1]
    flat = S.reshape(B, W * T, K)
    vals, idx = nk.maxpool_cols(flat)
    p = nk.softmax(vals)
    target = union_vectors(Yi, Yj)
    losses = nk.bce_probs(p, target)
    dvals = nk.softmax_backward(p, nk.bce_probs_grad(p, target))
    dS = nk.maxpool_backward(dvals, idx, W * T).reshape(S.shape)
    return np.atleast_1d(losses), encode_backward(weights, cache, dS), (p, target)


def aux_loss(params: ModelParams, video_i: FeatureVideo, video_j: FeatureVideo,
             schedule: WindowSchedule) -> tuple[float, Params]:
    if video_i.events & video_j.events:
        raise DomainError(f"{video_i.vid} and {video_j.vid} share classes {sorted(video_i.events & video_j.events)}")
    if not schedule.aux_valid:
        raise DomainError(f"schedule N={schedule.N}, T={schedule.T} violates N < (T+1)/2")
    losses, grads, _ = batch_aux_loss(params.weights, video_i.features[None], video_j.features[None],
                                      video_i.video_label[None], video_j.video_label[None],
                                      schedule, params.config.radius)
    return float(losses[0]), grads


def batch_mil_lr_loss(weights: Params, X: np.ndarray, Y: np.ndarray, R: np.ndarray | None,
                      schedule: WindowSchedule | None, lr_weight: float) -> tuple[float, Params, float]:
    """Mean over the batch of ``L_MIL + lr_weight * L_LR``.

    ``R`` holds refined window vectors ``(B, T1, K)``; pass ``None`` for plain MIL.
    """
    S, cache = encode(weights, X)
    B, T, _ = S.shape
    mil, dS = window_bag_loss(S, [0], T, Y[:, None, :])
    total = mil.copy()
    lr_mean = 0.0
    if R is not None:
        lr, dS_lr = window_bag_loss(S, schedule.starts, schedule.N, R)
        total += lr_weight * lr
        dS = dS + lr_weight * dS_lr
        lr_mean = float(lr.mean())
    return float(total.mean()), encode_backward(weights, cache, dS / B), lr_mean


def lr_loss(params: ModelParams, video: FeatureVideo, refined: np.ndarray,
            schedule: WindowSchedule) -> tuple[float, Params]:
    """Label-refinement loss alone for one video: mean window bag loss."""
    S, cache = encode(params.weights, video_inputs([video], params.config))
    loss, dS = window_bag_loss(S, schedule.starts, schedule.N, np.asarray(refined)[None])
    return float(loss[0]), encode_backward(params.weights, cache, dS)


# ---------------------------------------------------------------------------
# training loops

def _check_finite(loss: float, stage: str, epoch: int, batch: int) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(f"{stage}: non-finite loss at epoch {epoch}, batch {batch}")


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[k:k + size] for k in range(0, n, size)]


def train_stage1(videos: Sequence[FeatureVideo], model_config: ModelConfig, config: TrainConfig,
                 with_aux: bool = False, history: list | None = None) -> ModelParams:
    """Weakly supervised base training, optionally adding the auxiliary loss."""
    config.validate(videos[0].T, need_aux=with_aux)
    schedule = make_schedule(videos[0].T, config.N, config.s)
    params = init_params(model_config, nk.derive_seed(config.seed, "stage1-init"))
    opt = nk.OptimizerState.for_params(params.weights, lr=config.lr)
    shuffle_rng = nk.derive_rng(config.seed, "stage1-shuffle")
    aux_rng = nk.derive_rng(config.seed, "stage1-aux")

    X = video_inputs(videos, model_config)
    F = np.stack([v.features for v in videos])
    Y = np.stack([v.video_label for v in videos])
    cands = [partner_candidates(videos, v) for v in videos] if with_aux else None

    for epoch in range(config.stage1_epochs):
        if with_aux:
            # one fresh partner per video per epoch
            partner = np.array([c[int(aux_rng.integers(len(c)))] for c in cands])
        ep_loss = 0.0
        for b, idx in enumerate(_batches(len(videos), config.batch_size, shuffle_rng)):
            loss, grads, _ = batch_mil_lr_loss(params.weights, X[idx], Y[idx], None, None, 0.0)
            if with_aux:
                aux, ag, _ = batch_aux_loss(params.weights, F[idx], F[partner[idx]], Y[idx],
                                            Y[partner[idx]], schedule, model_config.radius)
                B = len(idx)
                loss += config.aux_weight * float(aux.mean())
                grads = {k: grads[k] + config.aux_weight * (ag[k] / B) for k in grads}
            _check_finite(loss, "stage1", epoch, b)
            nk.adam_step(params.weights, grads, opt)
            ep_loss += loss * len(idx)
        if history is not None:
            history.append(ep_loss / len(videos))
    return params


def train_stage3(videos: Sequence[FeatureVideo], refined: RefinedLabels, model_config: ModelConfig,
                 config: TrainConfig, history: list | None = None) -> ModelParams:
    """Retrain from a fresh initialization with ``L_MIL + lr_weight * L_LR``."""
    config.validate()
    schedule = refined.schedule
    if schedule.T != videos[0].T:
        raise DomainError(f"refined labels are for T={schedule.T}, videos have T={videos[0].T}")
    R = np.stack([refined.vectors_for(v.vid) for v in videos])
    params = init_params(model_config, nk.derive_seed(config.seed + 1, "stage3-init"))
    opt = nk.OptimizerState.for_params(params.weights, lr=config.lr)
    rng = nk.derive_rng(config.seed + 1, "stage3-shuffle")
    X = video_inputs(videos, model_config)
    Y = np.stack([v.video_label for v in videos])
    for epoch in range(config.stage3_epochs):
        ep_loss = 0.0
        for b, idx in enumerate(_batches(len(videos), config.batch_size, rng)):
            loss, grads, _ = batch_mil_lr_loss(params.weights, X[idx], Y[idx], R[idx], schedule,
                                               config.lr_weight)
            _check_finite(loss, "stage3", epoch, b)
            nk.adam_step(params.weights, grads, opt)
            ep_loss += loss * len(idx)
        if history is not None:
            history.append(ep_loss / len(videos))
    return params


def train_supervised(videos: Sequence[FeatureVideo], seg_labels: np.ndarray, model_config: ModelConfig,
                     config: TrainConfig, history: list | None = None) -> ModelParams:
    """Fresh model trained with per-segment cross-entropy on the given labels."""
    params = init_params(model_config, nk.derive_seed(config.seed + 1, "stage3-init"))
    opt = nk.OptimizerState.for_params(params.weights, lr=config.lr)
    rng = nk.derive_rng(config.seed + 1, "stage3-shuffle")
    X = video_inputs(videos, model_config)
    seg_labels = np.asarray(seg_labels)
    for epoch in range(config.stage3_epochs):
        ep_loss = 0.0
        for b, idx in enumerate(_batches(len(videos), config.batch_size, rng)):
            loss, grads = batch_segment_ce(params.weights, X[idx], seg_labels[idx])
            _check_finite(loss, "supervised", epoch, b)
            nk.adam_step(params.weights, grads, opt)
            ep_loss += loss * len(idx)
        if history is not None:
            history.append(ep_loss / len(videos))
    return params


def pseudo_label_baseline(videos: Sequence[FeatureVideo], base: ModelParams, config: TrainConfig,
                          history: list | None = None) -> ModelParams:
    """Freeze the base model's segment predictions as labels and retrain on them."""
    pseudo = predict_batch(base, videos)
    return train_supervised(videos, pseudo, base.config, config, history)


# ---------------------------------------------------------------------------
# ablation

@dataclass
class PipelineReport:
    metrics: dict[str, MetricsReport] = field(default_factory=dict)
    losses: dict[str, list[float]] = field(default_factory=dict)
    refined_quality: dict[str, dict[str, float]] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        recs = [{"record": "info", **self.info}]
        for name in self.metrics:
            recs.append({"record": "metrics", "variant": name, **self.metrics[name].to_dict()})
        for name, q in self.refined_quality.items():
            recs.append({"record": "refined_quality", "variant": name, **q})
        for name, curve in self.losses.items():
            recs.append({"record": "loss_curve", "stage": name, "values": curve})
        return recs

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())


def refine_seed(config: TrainConfig) -> int:
    return nk.derive_seed(config.seed, "refine")


def run_lr_variant(train: Sequence[FeatureVideo], base: ModelParams, config: TrainConfig,
                   report: PipelineReport | None = None, name: str = "BASE+LR") -> tuple[ModelParams, RefinedLabels]:
    """Refine with ``base`` then retrain; optionally records into ``report``."""
    schedule = make_schedule(train[0].T, config.N, config.s)
    refined = refine_corpus(base, train, schedule, config.tau, refine_seed(config))
    hist: list[float] = []
    params = train_stage3(train, refined, base.config, config, hist)
    if report is not None:
        report.losses[f"{name}/stage3"] = hist
        report.refined_quality[name] = refined_label_quality(refined, train)
    return params, refined


def evaluate(params: ModelParams, videos: Sequence[FeatureVideo]) -> MetricsReport:
    pred = predict_batch(params, videos)
    truth = np.stack([v.labels for v in videos])
    return compute_metrics(pred, truth, videos[0].n_classes)


def run_ablation(corpus: Corpus, model_config: ModelConfig, config: TrainConfig,
                 variants: Sequence[str] = VARIANTS, eval_split: str = "test") -> PipelineReport:
    config.validate(corpus.spec.T, need_aux="BASE+A+LR" in variants)
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise DomainError(f"unknown variants {sorted(unknown)}")
    train, held = corpus.train, corpus.split(eval_split)
    report = PipelineReport(info={"eval_split": eval_split, "seed": config.seed,
                                  "corpus_seed": corpus.spec.seed, "train_config": asdict(config),
                                  "model_config": asdict(model_config)})
    finals: dict[str, ModelParams] = {}

    need_base = any(v != "BASE+A+LR" for v in variants)
    if need_base:
        hist: list[float] = []
        log.info("stage 1 (MIL only)")
        base = train_stage1(train, model_config, config, with_aux=False, history=hist)
        report.losses["BASE/stage1"] = hist
        finals["BASE"] = base
    if "BASE+PL" in variants:
        log.info("pseudo-label baseline")
        hist = []
        finals["BASE+PL"] = pseudo_label_baseline(train, base, config, hist)
        report.losses["BASE+PL/supervised"] = hist
    if "BASE+LRdummy" in variants:
        log.info("dummy-label retraining")
        sch = make_schedule(corpus.spec.T, config.N, config.s)
        dummy = dummy_labels(train, sch, config.tau)
        hist = []
        finals["BASE+LRdummy"] = train_stage3(train, dummy, model_config, config, hist)
        report.losses["BASE+LRdummy/stage3"] = hist
        report.refined_quality["BASE+LRdummy"] = refined_label_quality(dummy, train)
    if "BASE+LR" in variants:
        log.info("refinement + retraining from the MIL-only base")
        finals["BASE+LR"], _ = run_lr_variant(train, base, config, report, "BASE+LR")
    if "BASE+A+LR" in variants:
        log.info("stage 1 with auxiliary objective, refinement, retraining")
        hist = []
        base_a = train_stage1(train, model_config, config, with_aux=True, history=hist)
        report.losses["BASE+A/stage1"] = hist
        finals["BASE+A+LR"], _ = run_lr_variant(train, base_a, config, report, "BASE+A+LR")

    for name in VARIANTS:
        if name in variants:
            report.metrics[name] = evaluate(finals[name], held)
    return report


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
