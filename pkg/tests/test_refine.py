import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avel_refine import refine as R
from avel_refine.datagen import FormatError, NoPartnerError, label_set, label_vector
from avel_refine.numkit import DomainError, make_rng
from avel_refine.refine import ScheduleError, make_schedule

from helpers import random_video


def oracle_predictor(videos):
    """Exact event set of each (composed) video as a multi-hot vector."""
    return np.stack([label_vector(v.events, v.n_classes) for v in videos])


def test_schedule_examples():
    sch = make_schedule(10, 4, 2)
    assert sch.starts == (0, 2, 4, 6) and sch.T1 == 4
    assert sch.coverage == (1, 1, 2, 2, 2, 2, 2, 2, 1, 1)
    sch = make_schedule(10, 5, 5)
    assert sch.starts == (0, 5) and sch.T1 == 2


def test_schedule_coverage_by_enumeration():
    sch = make_schedule(10, 4, 2)
    counts = [sum(a <= t < b for a, b in sch.windows()) for t in range(10)]
    assert tuple(counts) == sch.coverage


@pytest.mark.parametrize("T,N,s", [(10, 4, 4), (10, 2, 4), (10, 0, 1), (10, 11, 1), (10, 4, 0)])
def test_schedule_errors(T, N, s):
    with pytest.raises(ScheduleError):
        make_schedule(T, N, s)


def test_valid_schedules_cover_everything():
    for T in range(1, 13):
        for sch in R.valid_schedules(T):
            assert min(sch.coverage) >= 1
            assert sch.T1 == (T - sch.N) // sch.s + 1


def test_identity_dog_example():
    C = 3  # 0 = dog, 1 = person, 2 = bus
    seg_i = np.array([0, 0, 3, 1, 1, 3])
    seg_j = np.full(6, 3)
    out = R.label_set_identity(frozenset({0, 1}), frozenset(), (0, 2), seg_i, seg_j, C)
    assert out == {0}


def test_identity_full_window_and_overlap():
    seg_i = np.array([0, 0, 3, 3])
    seg_j = np.array([3, 1, 1, 3])
    assert R.label_set_identity(frozenset({0}), frozenset({1}), (0, 4), seg_i, seg_j, 3) == {0}
    with pytest.raises(DomainError):
        R.label_set_identity(frozenset({0}), frozenset({0}), (0, 4), seg_i, seg_i, 3)


def test_compose_examples():
    rng = np.random.default_rng(0)
    a = random_video(rng, events={0: (1, 3)}, vid="a")
    b = random_video(rng, events={1: (2, 5)}, vid="b")
    whole = R.compose_synthetic(a, b, 0, a.T)
    assert whole == R.compose_synthetic(a, a, 0, a.T).__class__(
        whole.vid, a.audio, a.visual, a.labels, a.n_classes)
    c = R.compose_synthetic(a, b, 2, 3)
    assert c.provenance.sum() == 3 and c.provenance.tolist() == [0, 0, 1, 1, 1, 0]
    assert np.array_equal(c.audio[2:5], a.audio[2:5]) and np.array_equal(c.audio[:2], b.audio[:2])
    # swapping the sources and recomposing restores b's window content
    back = R.compose_synthetic(b, c, 2, 3)
    assert np.array_equal(back.audio, b.audio) and np.array_equal(back.labels, b.labels)


def test_compose_shape_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(DomainError):
        R.compose_synthetic(random_video(rng, T=5), random_video(rng, T=6), 0, 2)


def test_compose_features_matches_per_video():
    rng = np.random.default_rng(1)
    a, b = random_video(rng, vid="a"), random_video(rng, vid="b")
    sch = make_schedule(6, 2, 2)
    comp = R.compose_features(a.features[None], b.features[None], sch)[0]
    for w, t1 in enumerate(sch.starts):
        assert np.array_equal(comp[w], R.compose_synthetic(a, b, t1, 2).features)


@pytest.mark.parametrize("N,s", [(2, 2), (3, 1), (4, 2), (5, 5)])
@pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
def test_oracle_refinement_exact(small_corpus, N, s, tau):
    sch = make_schedule(10, N, s)
    videos = small_corpus.train
    refined = R.refine_corpus(oracle_predictor, videos, sch, tau, seed=0)
    for v in videos:
        assert np.array_equal(refined.vectors_for(v.vid), R.oracle_window_labels(v, sch))
    assert R.refined_label_quality(refined, videos)["exact"] == 1.0


def test_filter_excludes_classes_outside_video_label():
    rng = np.random.default_rng(0)
    v = random_video(rng, events={0: (0, 2)}, vid="v")
    pool = [v, random_video(rng, vid="bg")]
    bus = lambda vids: np.tile([0.3, 0.5, 0.1, 0.1], (len(vids), 1))
    out = R.refine_video(bus, pool, v, make_schedule(6, 2, 2), 0.2, make_rng(0))
    assert out.tolist() == [[1, 0, 0, 0]] * 3
    low = lambda vids: np.tile([0.01, 0.5, 0.4, 0.09], (len(vids), 1))
    out = R.refine_video(low, pool, v, make_schedule(6, 2, 2), 0.05, make_rng(0))
    assert out.tolist() == [[0, 0, 0, 1]] * 3


def test_refine_errors():
    rng = np.random.default_rng(0)
    v = random_video(rng, events={0: (0, 2)}, vid="v")
    with pytest.raises(NoPartnerError):
        R.refine_video(oracle_predictor, [v], v, make_schedule(6, 2, 2), 0.5, make_rng(0))
    with pytest.raises(DomainError):
        R.refine_video(oracle_predictor, [v], v, make_schedule(6, 2, 2), 1.0, make_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_refined_bits_subset_of_video_label(seed):
    rng = np.random.default_rng(seed)
    videos = [random_video(rng, C=3, events={int(rng.integers(3)): (1, 4)}, vid=f"e{k}") for k in range(4)]
    videos.append(random_video(rng, vid="bg"))
    noise = lambda vids: rng.random((len(vids), 4))
    refined = R.refine_corpus(noise, videos, make_schedule(6, 2, 2), float(rng.uniform(0.01, 0.99)), seed)
    for v in videos:
        vec = refined.vectors_for(v.vid)
        assert np.all(vec[:, :3] <= v.video_label[:3])
        assert np.array_equal(vec[:, 3], (vec[:, :3].sum(1) == 0).astype(float))


def test_refine_corpus_deterministic(small_corpus):
    sch = make_schedule(10, 4, 2)
    a = R.refine_corpus(oracle_predictor, small_corpus.train, sch, 0.5, 3)
    b = R.refine_corpus(oracle_predictor, list(reversed(small_corpus.train)), sch, 0.5, 3)
    assert a == b and a.partners == b.partners


def test_coverage_lemma_small():
    for T in range(1, 12):
        for sch in R.valid_schedules(T):
            assert (R.complement_union(sch) == set(range(T))) == sch.aux_valid


def test_refined_round_trip(tmp_path, small_corpus):
    sch = make_schedule(10, 3, 1)
    refined = R.refine_corpus(oracle_predictor, small_corpus.train, sch, 0.05, 1)
    R.save_refined(refined, tmp_path / "r.jsonl")
    back = R.load_refined(tmp_path / "r.jsonl")
    assert back == refined and back.partners == refined.partners


def test_refined_missing_window(tmp_path, small_corpus):
    sch = make_schedule(10, 4, 2)
    refined = R.dummy_labels(small_corpus.train, sch)
    path = tmp_path / "r.jsonl"
    R.save_refined(refined, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3] + lines[4:]) + "\n")
    with pytest.raises(FormatError, match=r"missing windows starting at \[4\]"):
        R.load_refined(path)


def test_vectors_for_names_missing_video():
    sch = make_schedule(6, 2, 2)
    with pytest.raises(KeyError, match="ghost"):
        R.RefinedLabels(0.5, sch, 3).vectors_for("ghost")
