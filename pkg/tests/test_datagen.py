import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avel_refine import datagen as dg
from avel_refine.datagen import CorpusSpec, FormatError, NoPartnerError, VersionError
from avel_refine.numkit import DomainError, make_rng

from helpers import random_video


def event_runs(labels, C):
    """Start/stop of the event-labelled segments, or None."""
    idx = np.flatnonzero(labels < C)
    if not len(idx):
        return None
    return int(idx[0]), int(idx[-1]) + 1, len(idx)


def test_label_vector_background_rule():
    assert dg.label_vector([], 3).tolist() == [0, 0, 0, 1]
    assert dg.label_vector([0, 2], 3).tolist() == [1, 0, 1, 0]
    with pytest.raises(DomainError):
        dg.label_vector([3], 3)


def test_event_runs_within_bounds_many_classes():
    spec = CorpusSpec(n_event=120, n_background=10, T=10, n_classes=28, d_audio=4, d_visual=4, seed=3)
    corpus = dg.make_corpus(spec)
    for v in corpus.all_videos():
        run = event_runs(v.labels, 28)
        if run is None:
            continue
        a, b, n = run
        assert n == b - a, "event segments must be contiguous"
        assert 2 <= n <= 10
        assert len(v.events) == 1


def test_video_label_matches_segments(small_corpus):
    C = small_corpus.spec.n_classes
    for v in small_corpus.all_videos():
        assert np.array_equal(v.video_label, dg.label_vector(dg.label_set(v.labels, C), C))


def test_splits_disjoint_and_counts(small_corpus):
    ids = [set(v.vid for v in small_corpus.split(s)) for s in ("train", "val", "test")]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert sum(map(len, ids)) == 48


def test_noiseless_nearest_prototype_recovers_labels():
    spec = CorpusSpec(n_event=30, n_background=4, T=10, n_classes=5, d_audio=8, d_visual=8,
                      noise=0.0, mismatch_rate=0.0, seed=5)
    corpus = dg.make_corpus(spec)
    pa, pv = corpus.prototypes["audio"], corpus.prototypes["visual"]
    for v in corpus.all_videos():
        for t in range(v.T):
            a, vis = v.audio[t], v.visual[t]
            if not a.any() and not vis.any():
                assert v.labels[t] == spec.n_classes
                continue
            c = int(np.argmin(((pa - a) ** 2).sum(1) + ((pv - vis) ** 2).sum(1)))
            assert v.labels[t] == c


def test_impossible_spec():
    with pytest.raises(DomainError):
        dg.make_corpus(CorpusSpec(T=5, min_event_len=6))


def test_deterministic():
    spec = CorpusSpec(n_event=10, n_background=2, T=6, n_classes=3, d_audio=3, d_visual=3, seed=9)
    assert dg.make_corpus(spec) == dg.make_corpus(spec)
    assert dg.make_corpus(spec) != dg.make_corpus(replace(spec, seed=10))


def test_gt_repeat_accuracy_equals_foreground_fraction(small_corpus):
    from avel_refine.evalkit import compute_metrics, gt_repeat
    C = small_corpus.spec.n_classes
    videos = [v for v in small_corpus.all_videos() if v.events]
    truth = np.stack([v.labels for v in videos])
    rep = compute_metrics(gt_repeat(videos), truth, C)
    total = truth.size
    bg = int((truth == C).sum())
    assert dg.background_fraction(videos) == bg / total
    assert rep.accuracy == (total - bg) / total
    assert rep.non_ave.recall == 0.0
    # background-only videos are predicted correctly on every segment
    everything = small_corpus.all_videos()
    truth = np.stack([v.labels for v in everything])
    rep = compute_metrics(gt_repeat(everything), truth, C)
    bg_in_events = int(sum((v.labels == C).sum() for v in videos))
    assert rep.accuracy == (truth.size - bg_in_events) / truth.size


def test_round_trip(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    dg.save_corpus(small_corpus, path)
    back = dg.load_corpus(path)
    assert back == small_corpus
    for a, b in zip(back.all_videos(), small_corpus.all_videos()):
        assert a.audio.tobytes() == b.audio.tobytes()


def test_round_trip_three_videos(tmp_path):
    spec = CorpusSpec(n_event=3, n_background=0, T=10, n_classes=28, d_audio=2, d_visual=2,
                      val_frac=0.0, test_frac=0.0, seed=1)
    corpus = dg.make_corpus(spec)
    path = tmp_path / "c.jsonl"
    dg.save_corpus(corpus, path)
    back = dg.load_corpus(path)
    assert back == corpus
    assert back.spec.T == 10 and back.spec.n_classes == 28


def test_truncated_file(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    dg.save_corpus(small_corpus, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(FormatError, match="record"):
        dg.load_corpus(path)
    lines = text.splitlines(keepends=True)
    path.write_text("".join(lines[:-3]))
    with pytest.raises(FormatError):
        dg.load_corpus(path)


def test_version_mismatch(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    dg.save_corpus(small_corpus, path)
    lines = path.read_text().splitlines(keepends=True)
    header = json.loads(lines[0])
    header["version"] = 99
    path.write_text(json.dumps(header) + "\n" + "".join(lines[1:]))
    with pytest.raises(VersionError):
        dg.load_corpus(path)


def test_partner_prefers_background():
    rng = np.random.default_rng(0)
    v = random_video(rng, events={0: (1, 3)}, vid="a")
    pool = [v, random_video(rng, events={1: (0, 2)}, vid="b"), random_video(rng, vid="bg")]
    for seed in range(5):
        assert dg.disjoint_partner(pool, v, make_rng(seed)).vid == "bg"


def test_partner_missing_lists_classes():
    rng = np.random.default_rng(0)
    pool = [random_video(rng, events={2: (0, 3)}, vid=f"v{k}") for k in range(3)]
    with pytest.raises(NoPartnerError, match=r"\[2\]"):
        dg.disjoint_partner(pool, pool[0], make_rng(0))


def test_partner_for_background_video():
    rng = np.random.default_rng(0)
    bg = random_video(rng, vid="bg")
    pool = [bg, random_video(rng, events={1: (0, 2)}, vid="e")]
    assert dg.disjoint_partner(pool, bg, make_rng(0)).vid == "e"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 8), st.integers(2, 5))
def test_generated_videos_satisfy_invariants(seed, T, C):
    spec = CorpusSpec(n_event=6, n_background=2, T=T, n_classes=C, d_audio=2, d_visual=2,
                      min_event_len=2, val_frac=0.0, test_frac=0.0, seed=seed)
    for v in dg.make_corpus(spec).all_videos():
        run = event_runs(v.labels, C)
        if run is not None:
            a, b, n = run
            assert n == b - a >= 2
        assert v.video_label[C] == (run is None)
