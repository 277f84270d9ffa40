"""Small deterministic numeric kernel used by the model and the training loops.

Everything here works on float64 numpy arrays. Parameter sets are plain
``dict[str, np.ndarray]`` so that the optimizer, checkpointing and the
gradient checker can all walk them the same way.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PROB_EPS = 1e-7

Params = dict[str, np.ndarray]


class DomainError(ValueError):
    """Raised when an operation receives inputs outside its domain."""


# ---------------------------------------------------------------------------
# randomness

def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(root: int, *parts) -> int:
    """Stable 64-bit sub-seed from a root seed and any str/int labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    return int.from_bytes(h.digest(), "little")


def derive_rng(root: int, *parts) -> np.random.Generator:
    return make_rng(derive_seed(root, *parts))


# ---------------------------------------------------------------------------
# activations, pooling, losses

def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the max for stability."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] == 0:
        raise DomainError("softmax of an empty vector")
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits given probabilities ``p`` and upstream ``dp``."""
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def maxpool_cols(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise max over rows (axis -2) and the first row attaining it.

    Works on ``(T, K)`` or batched ``(..., T, K)`` arrays. Ties go to the
    lowest row index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim < 2 or scores.shape[-2] == 0:
        raise DomainError("maxpool over zero rows")
    idx = np.argmax(scores, axis=-2)
    vals = np.take_along_axis(scores, idx[..., None, :], axis=-2)[..., 0, :]
    return vals, idx


def maxpool_backward(dvals: np.ndarray, idx: np.ndarray, n_rows: int) -> np.ndarray:
    """Route pooled gradients back to the argmax rows only."""
    out = np.zeros(dvals.shape[:-1] + (n_rows, dvals.shape[-1]))
    np.put_along_axis(out, idx[..., None, :], dvals[..., None, :], axis=-2)
    return out


def bce_probs(pred: np.ndarray, target: np.ndarray) -> float | np.ndarray:
    """Mean binary cross-entropy between probabilities and {0,1} targets.

    Reduces over the last axis, so batched inputs give one loss per row.
    Probabilities are clamped to ``[PROB_EPS, 1 - PROB_EPS]``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DomainError(f"length mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean(axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def bce_probs_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d bce_probs / d pred (zero where the clamp is active)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    k = pred.shape[-1]
    inside = (pred > PROB_EPS) & (pred < 1.0 - PROB_EPS)
    p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    g = (-(target / p) + (1.0 - target) / (1.0 - p)) / k
    return np.where(inside, g, 0.0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class OptimizerState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, **kw) -> "OptimizerState":
        st = cls(**kw)
        st.m = {k: np.zeros_like(p) for k, p in params.items()}
        st.v = {k: np.zeros_like(p) for k, p in params.items()}
        return st


def adam_step(params: Params, grads: Params, state: OptimizerState) -> tuple[Params, OptimizerState]:
    """One bias-corrected Adam update. Mutates and returns ``params`` and ``state``."""
    if set(params) != set(grads):
        raise DomainError(f"parameter/gradient keys differ: {sorted(params)} vs {sorted(grads)}")
    for k in params:
        if params[k].shape != grads[k].shape:
            raise DomainError(f"shape mismatch for {k!r}: {params[k].shape} vs {grads[k].shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        elif state.m[k].shape != params[k].shape:
            raise DomainError(f"optimizer state for {k!r} has shape {state.m[k].shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k in sorted(params):
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        params[k] = params[k] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    tolerance: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    loss_fn: Callable[[Params], tuple[float, Params]],
    params: Params,
    tolerance: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` returns ``(loss, grads)``. The error for a coordinate
    is ``|analytic - numeric| / max(1, |numeric|)``; the report keeps the max.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    loss0, analytic = loss_fn(params)
    if not np.isfinite(loss0):
        raise FloatingPointError("loss is not finite at the base point")

    worst_err, worst, n = 0.0, None, 0
    for name in sorted(params):
        p = params[name]
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            lp, _ = loss_fn(params)
            p[idx] = orig - h
            lm, _ = loss_fn(params)
            p[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss perturbing {name}{list(idx)}")
            numeric = (lp - lm) / (2.0 * h)
            err = abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric))
            n += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (name, idx)
    return GradCheckReport(float(worst_err), worst, tolerance, n)
