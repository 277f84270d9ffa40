"""
Windows, composed videos and localized labels
=============================================

A weak label only says *which* events a video contains. Sliding a window
over the video and asking the base model about a composed video (the window
kept, everything else swapped for a label-disjoint partner) tells us *where*.
"""

import numpy as np

from avel_refine.datagen import CorpusSpec, label_vector, make_corpus
from avel_refine.refine import compose_synthetic, make_schedule, oracle_window_labels, refine_corpus

corpus = make_corpus(CorpusSpec(n_event=40, n_background=6, seed=3))
video = next(v for v in corpus.train if v.events)
C = video.n_classes
print(video.vid, "segment labels:", video.labels, "(background =", C, ")")
print("video-level label:", video.video_label)

# windows of 4 segments every 2 segments
schedule = make_schedule(video.T, N=4, s=2)
print("window starts", schedule.starts, "T1 =", schedule.T1)
print("coverage per segment", schedule.coverage)

# %%
# Compose with a background video and look at what survives in each window.
partner = next(v for v in corpus.train if not v.events)
for t1 in schedule.starts:
    comp = compose_synthetic(video, partner, t1, schedule.N)
    print(f"window [{t1}, {t1 + schedule.N}):", comp.labels, "->", sorted(comp.events))

# %%
# A predictor that knows the answer recovers the true window labels exactly.
# A trained base model stands in for it in practice.
oracle = lambda videos: np.stack([label_vector(v.events, C) for v in videos])
refined = refine_corpus(oracle, corpus.train, schedule, tau=0.05, seed=0)
print(refined.vectors_for(video.vid))
assert np.array_equal(refined.vectors_for(video.vid), oracle_window_labels(video, schedule))
