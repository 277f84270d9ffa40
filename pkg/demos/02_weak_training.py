"""
Training from video-level labels only
=====================================

The base model scores every segment, max-pools over time and is trained
against the multi-hot video label. Segment predictions fall out of the
per-segment argmax; the repeat baselines show why accuracy alone misleads.
"""

from avel_refine.datagen import CorpusSpec, background_fraction, make_corpus
from avel_refine.evalkit import format_table, naive_baselines
from avel_refine.model import ModelConfig
from avel_refine.pipeline import TrainConfig, evaluate, train_stage1

spec = CorpusSpec(n_event=160, n_background=12, seed=1)
corpus = make_corpus(spec)
print("background segment fraction (test):", round(background_fraction(corpus.test), 3))

model_cfg = ModelConfig(d_audio=spec.d_audio, d_visual=spec.d_visual, n_classes=spec.n_classes)
history = []
base = train_stage1(corpus.train, model_cfg, TrainConfig(stage1_epochs=60), history=history)
print("MIL loss: first epoch %.3f, last epoch %.3f" % (history[0], history[-1]))

rows = {"MIL base": evaluate(base, corpus.test)}
rows["AVE-repeat"], rows["GT-repeat"] = naive_baselines(corpus.test, base)
print(format_table(rows, title="test split"))
