"""Base MIL model: segment encoder, score head, max-pool bag prediction.

The encoder sees each segment's concatenated audio+visual features together
with ``radius`` neighbours on each side (zero padded), passes them through a
ReLU hidden layer and projects to ``C + 1`` raw class scores per segment.
A bag (a whole video, or a window of it) is scored by column-wise max over
its segments followed by softmax.

All heavy functions take batched arrays ``(B, T, ...)``; the per-video
wrappers are thin conveniences on top.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkit as nk
from .datagen import FeatureVideo, FormatError, read_header
from .numkit import DomainError, Params

CKPT_FORMAT = "avel-checkpoint"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_audio: int = 16
    d_visual: int = 16
    hidden: int = 32
    n_classes: int = 6
    radius: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1:
            raise DomainError("hidden width must be >= 1")
        if self.radius < 0:
            raise DomainError("context radius must be >= 0")

    @property
    def in_dim(self) -> int:
        return (self.d_audio + self.d_visual) * (2 * self.radius + 1)

    @property
    def n_out(self) -> int:
        return self.n_classes + 1


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    weights: Params

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()})

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.config == other.config and self.weights.keys() == other.weights.keys()
                and all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights))


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    rng = nk.derive_rng(config.seed if seed is None else seed, "init")
    D, H, K = config.in_dim, config.hidden, config.n_out
    w = {
        "W1": rng.standard_normal((D, H)) * np.sqrt(2.0 / D),
        "b1": np.zeros(H),
        "W2": rng.standard_normal((H, K)) * np.sqrt(1.0 / H),
        "b2": np.zeros(K),
    }
    return ModelParams(config, w)


def zero_params(config: ModelConfig) -> ModelParams:
    p = init_params(config)
    return ModelParams(config, {k: np.zeros_like(v) for k, v in p.weights.items()})


# ---------------------------------------------------------------------------
# encoder

def context_features(feats: np.ndarray, radius: int) -> np.ndarray:
    """Stack each segment with its ``radius`` neighbours: ``(..., T, F) -> (..., T, F*(2r+1))``."""
    if radius == 0:
        return feats
    T = feats.shape[-2]
    pad = [(0, 0)] * (feats.ndim - 2) + [(radius, radius), (0, 0)]
    padded = np.pad(feats, pad)
    return np.concatenate([padded[..., k:k + T, :] for k in range(2 * radius + 1)], axis=-1)


def video_inputs(videos: Sequence[FeatureVideo] | FeatureVideo, config: ModelConfig) -> np.ndarray:
    """Encoder inputs for one video ``(T, D)`` or a list of videos ``(B, T, D)``."""
    if isinstance(videos, FeatureVideo):
        return video_inputs([videos], config)[0]
    feats = np.stack([v.features for v in videos])
    if feats.shape[-1] != config.d_audio + config.d_visual:
        raise DomainError(f"feature dim {feats.shape[-1]} does not match model "
                          f"({config.d_audio}+{config.d_visual})")
    return context_features(feats, config.radius)


def encode(weights: Params, X: np.ndarray):
    """Raw segment scores for inputs ``X`` of shape ``(..., T, D)``; returns ``(scores, cache)``."""
    z = X @ weights["W1"] + weights["b1"]
    h = nk.relu(z)
    s = h @ weights["W2"] + weights["b2"]
    return s, (X, z, h)


def encode_backward(weights: Params, cache, dS: np.ndarray) -> Params:
    X, z, h = cache
    D, H, K = X.shape[-1], h.shape[-1], dS.shape[-1]
    Xf, zf, hf, dSf = X.reshape(-1, D), z.reshape(-1, H), h.reshape(-1, H), dS.reshape(-1, K)
    dW2 = hf.T @ dSf
    db2 = dSf.sum(axis=0)
    dz = (dSf @ weights["W2"].T) * (zf > 0)
    dW1 = Xf.T @ dz
    db1 = dz.sum(axis=0)
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def forward_scores(params: ModelParams, video: FeatureVideo) -> np.ndarray:
    """Raw score matrix ``(T, C+1)`` for one video."""
    if video.n_classes != params.config.n_classes:
        raise DomainError(f"video has {video.n_classes} classes, model {params.config.n_classes}")
    s, _ = encode(params.weights, video_inputs(video, params.config))
    return s


# ---------------------------------------------------------------------------
# bag prediction and losses

def video_prediction(scores: np.ndarray, t1: int = 0, t2: int | None = None) -> np.ndarray:
    """Softmax of the column max over rows ``t1 .. t2-1`` (half-open, 0-based)."""
    scores = np.asarray(scores, dtype=np.float64)
    T = scores.shape[-2]
    t2 = T if t2 is None else t2
    if not 0 <= t1 < t2 <= T:
        raise DomainError(f"empty or out-of-range window [{t1}, {t2}) for T={T}")
    vals, _ = nk.maxpool_cols(scores[..., t1:t2, :])
    return nk.softmax(vals)


def window_bag_loss(S: np.ndarray, starts: Sequence[int], size: int,
                    targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean over windows of the bag loss, per video.

    ``S`` is ``(B, T, K)``, ``targets`` is ``(B, len(starts), K)``. Each window
    ``[t1, t1+size)`` is max-pooled, softmaxed and scored with ``bce_probs``.
    Returns per-video losses ``(B,)`` and ``dLoss_b/dS`` of shape ``(B, T, K)``.
    """
    B, T, K = S.shape
    W = len(starts)
    losses = np.zeros(B)
    dS = np.zeros_like(S)
    for w, t1 in enumerate(starts):
        vals, idx = nk.maxpool_cols(S[:, t1:t1 + size])
        p = nk.softmax(vals)
        y = targets[:, w]
        losses += nk.bce_probs(p, y)
        dvals = nk.softmax_backward(p, nk.bce_probs_grad(p, y))
        dS[:, t1:t1 + size] += nk.maxpool_backward(dvals, idx, size)
    return losses / W, dS / W


def batch_mil_loss(weights: Params, X: np.ndarray, Y: np.ndarray) -> tuple[float, Params]:
    """Mean MIL loss over a batch and its gradient."""
    S, cache = encode(weights, X)
    T = S.shape[1]
    losses, dS = window_bag_loss(S, [0], T, Y[:, None, :])
    B = len(losses)
    return float(losses.mean()), encode_backward(weights, cache, dS / B)


def mil_loss(params: ModelParams, video: FeatureVideo) -> tuple[float, Params]:
    X = video_inputs([video], params.config)
    return batch_mil_loss(params.weights, X, video.video_label[None])


def batch_segment_ce(weights: Params, X: np.ndarray, seg_labels: np.ndarray) -> tuple[float, Params]:
    """Mean per-segment softmax cross-entropy (fully supervised)."""
    S, cache = encode(weights, X)
    B, T, K = S.shape
    p = nk.softmax(S)
    onehot = np.eye(K)[seg_labels]
    loss = -np.log(np.clip((p * onehot).sum(-1), 1e-300, None)).mean()
    dS = (p - onehot) / (B * T)
    return float(loss), encode_backward(weights, cache, dS)


def predict_segments(params: ModelParams, video: FeatureVideo) -> np.ndarray:
    """Per-segment argmax of the raw scores (ties go to the lowest class id)."""
    return np.argmax(forward_scores(params, video), axis=1)


def predict_batch(params: ModelParams, videos: Sequence[FeatureVideo]) -> np.ndarray:
    if not videos:
        return np.zeros((0, 0), dtype=np.int64)
    S, _ = encode(params.weights, video_inputs(videos, params.config))
    return np.argmax(S, axis=-1)


def video_probs_batch(params: ModelParams, videos: Sequence[FeatureVideo]) -> np.ndarray:
    S, _ = encode(params.weights, video_inputs(videos, params.config))
    return video_prediction(S)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(params: ModelParams, path, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": CKPT_FORMAT, "version": CKPT_VERSION,
              "config": asdict(params.config), "meta": meta or {}}
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for k in sorted(params.weights):
            w = params.weights[k]
            f.write(json.dumps({"name": k, "shape": list(w.shape), "data": w.ravel().tolist()}) + "\n")


def load_checkpoint(path) -> ModelParams:
    with open(path) as f:
        lines = f.read().splitlines()
    header = read_header(lines, CKPT_FORMAT, CKPT_VERSION)
    try:
        config = ModelConfig(**header["config"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"record 0: bad model config ({e})") from None
    expected = {k: v.shape for k, v in init_params(config).weights.items()}
    weights = {}
    for i, line in enumerate(lines[1:], start=1):
        try:
            rec = json.loads(line)
            w = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"record {i}: {type(e).__name__}: {e}") from None
        if expected.get(rec["name"]) != w.shape:
            raise FormatError(f"record {i}: unexpected tensor {rec['name']!r} with shape {w.shape}")
        weights[rec["name"]] = w
    if weights.keys() != expected.keys():
        raise FormatError(f"missing tensors {sorted(expected.keys() - weights.keys())}")
    return ModelParams(config, weights)
