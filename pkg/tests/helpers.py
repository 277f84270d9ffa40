import numpy as np

from avel_refine.datagen import FeatureVideo
from avel_refine.model import ModelConfig, init_params


def random_video(rng, T=6, C=3, d_a=3, d_v=2, events=None, vid="v"):
    """Video with random features; ``events`` maps class -> (start, stop)."""
    labels = np.full(T, C)
    for c, (a, b) in (events or {}).items():
        labels[a:b] = c
    return FeatureVideo(vid, rng.standard_normal((T, d_a)), rng.standard_normal((T, d_v)), labels, C)


def random_event_video(rng, T, C, d_a=3, d_v=2, vid="v"):
    c = int(rng.integers(C))
    a = int(rng.integers(T - 1))
    b = int(rng.integers(a + 2, T + 1))
    return random_video(rng, T, C, d_a, d_v, {c: (a, b)}, vid)


def random_params(rng, T=6, C=3, hidden=5, d_a=3, d_v=2, radius=1, scale=1.0):
    cfg = ModelConfig(d_audio=d_a, d_visual=d_v, hidden=hidden, n_classes=C, radius=radius,
                      seed=int(rng.integers(2**31)))
    p = init_params(cfg)
    for k in p.weights:
        p.weights[k] = scale * rng.standard_normal(p.weights[k].shape)
    return p
