"""Synthetic audio-visual event corpora with known segment labels.

Class ids are 0-based: events are ``0 .. C-1`` and the background class is
``C``. A video's weak label is a ``{0,1}`` vector of length ``C + 1``.

Feature model
-------------
Each event class owns one prototype per modality (random unit vectors times
``proto_scale``). An event segment carries the class prototype in *both*
modalities. A background segment is either plain noise or, with probability
``mismatch_rate``, a *mismatch* segment where only one modality carries a
class prototype (audible but not visible, or the reverse). Isotropic
Gaussian noise with std ``noise`` is added everywhere.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numkit import DomainError

CORPUS_FORMAT = "avel-corpus"
CORPUS_VERSION = 1


class FormatError(ValueError):
    """A data file could not be parsed."""


class VersionError(FormatError):
    """A data file carries an unsupported format version."""


class NoPartnerError(LookupError):
    """No video with a disjoint label set is available."""


def label_set(seg_labels: np.ndarray, n_classes: int, start: int = 0, stop: int | None = None) -> frozenset[int]:
    """Event classes present in ``seg_labels[start:stop]`` (background excluded)."""
    part = np.asarray(seg_labels)[start:stop].tolist()
    return frozenset(c for c in part if c < n_classes)


def label_vector(labels: Iterable[int], n_classes: int) -> np.ndarray:
    """Multi-hot vector for a set of events; the background bit is set iff the set is empty."""
    v = np.zeros(n_classes + 1)
    for c in labels:
        if not 0 <= c < n_classes:
            raise DomainError(f"event class {c} outside [0, {n_classes})")
        v[c] = 1.0
    if not v[:n_classes].any():
        v[n_classes] = 1.0
    return v


def vector_to_set(vec: np.ndarray) -> frozenset[int]:
    n_classes = len(vec) - 1
    return frozenset(int(c) for c in np.flatnonzero(np.asarray(vec)[:n_classes] > 0.5))


@dataclass(eq=False)
class FeatureVideo:
    vid: str
    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray
    n_classes: int
    # set only on composed videos: True where the segment came from the first video
    provenance: np.ndarray | None = None
    video_label: np.ndarray = field(init=False)

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float64)
        self.visual = np.asarray(self.visual, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        T = len(self.labels)
        if self.audio.shape[0] != T or self.visual.shape[0] != T:
            raise DomainError(
                f"video {self.vid}: {T} labels but audio/visual rows "
                f"{self.audio.shape[0]}/{self.visual.shape[0]}")
        if T and (self.labels.min() < 0 or self.labels.max() > self.n_classes):
            raise DomainError(f"video {self.vid}: label outside [0, {self.n_classes}]")
        self.video_label = label_vector(self.events, self.n_classes)

    @property
    def T(self) -> int:
        return len(self.labels)

    @property
    def events(self) -> frozenset[int]:
        return label_set(self.labels, self.n_classes)

    @property
    def features(self) -> np.ndarray:
        """Audio and visual features concatenated per segment, ``(T, d_a + d_v)``."""
        return np.concatenate([self.audio, self.visual], axis=1)

    def __eq__(self, other):
        if not isinstance(other, FeatureVideo):
            return NotImplemented
        return (self.vid == other.vid and self.n_classes == other.n_classes
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.audio, other.audio)
                and np.array_equal(self.visual, other.visual))


@dataclass(frozen=True)
class CorpusSpec:
    n_event: int = 400
    n_background: int = 30
    T: int = 10
    n_classes: int = 6
    d_audio: int = 16
    d_visual: int = 16
    noise: float = 0.6
    proto_scale: float = 2.0
    mismatch_rate: float = 0.2
    min_event_len: int = 2
    val_frac: float = 0.125
    test_frac: float = 0.125
    seed: int = 0

    def validate(self) -> None:
        if self.n_event < 1 or self.n_background < 0:
            raise DomainError("need at least one event video and a non-negative background count")
        if self.n_classes < 2:
            raise DomainError("need at least 2 event classes")
        if self.T < 1 or self.d_audio < 1 or self.d_visual < 1:
            raise DomainError("T, d_audio and d_visual must be positive")
        if not 2 <= self.min_event_len <= self.T:
            raise DomainError(f"min_event_len={self.min_event_len} must lie in [2, T={self.T}]")
        if self.noise < 0 or self.proto_scale <= 0:
            raise DomainError("noise must be >= 0 and proto_scale > 0")
        if not 0 <= self.mismatch_rate <= 1:
            raise DomainError("mismatch_rate must lie in [0, 1]")
        if self.val_frac < 0 or self.test_frac < 0 or self.val_frac + self.test_frac >= 1:
            raise DomainError("split fractions must be non-negative and leave a training split")


@dataclass(eq=False)
class Corpus:
    spec: CorpusSpec
    train: list[FeatureVideo]
    val: list[FeatureVideo]
    test: list[FeatureVideo]
    prototypes: dict[str, np.ndarray] = field(default_factory=dict)

    def split(self, name: str) -> list[FeatureVideo]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def all_videos(self) -> list[FeatureVideo]:
        return self.train + self.val + self.test

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (self.spec == other.spec and self.train == other.train
                and self.val == other.val and self.test == other.test)


def background_fraction(videos: Sequence[FeatureVideo]) -> float:
    total = sum(v.T for v in videos)
    bg = sum(int((v.labels == v.n_classes).sum()) for v in videos)
    return bg / total if total else 0.0


def _split_counts(n: int, val_frac: float, test_frac: float) -> tuple[int, int, int]:
    n_val = int(round(n * val_frac))
    n_test = int(round(n * test_frac))
    return n - n_val - n_test, n_val, n_test


def generate_corpus(spec: CorpusSpec, rng: np.random.Generator) -> Corpus:
    spec.validate()
    C, T = spec.n_classes, spec.T

    def unit_rows(n, d):
        m = rng.standard_normal((n, d))
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    proto_a = spec.proto_scale * unit_rows(C, spec.d_audio)
    proto_v = spec.proto_scale * unit_rows(C, spec.d_visual)

    # every [a, b] with b - a + 1 >= min_event_len
    windows = [(a, b) for a in range(T) for b in range(a + spec.min_event_len - 1, T)]

    def make(vid: str, cls: int | None) -> FeatureVideo:
        audio = spec.noise * rng.standard_normal((T, spec.d_audio))
        visual = spec.noise * rng.standard_normal((T, spec.d_visual))
        labels = np.full(T, C, dtype=np.int64)
        if cls is not None:
            a, b = windows[rng.integers(len(windows))]
            labels[a:b + 1] = cls
            audio[a:b + 1] += proto_a[cls]
            visual[a:b + 1] += proto_v[cls]
        for t in np.flatnonzero(labels == C):
            if rng.random() < spec.mismatch_rate:
                # event videos leak their own class; background videos a random one
                src = cls if cls is not None else int(rng.integers(C))
                if rng.random() < 0.5:
                    audio[t] += proto_a[src]
                else:
                    visual[t] += proto_v[src]
        return FeatureVideo(vid, audio, visual, labels, C)

    splits = {"train": [], "val": [], "test": []}
    for kind, count in (("ev", spec.n_event), ("bg", spec.n_background)):
        n_tr, n_va, n_te = _split_counts(count, spec.val_frac, spec.test_frac)
        for name, n in (("train", n_tr), ("val", n_va), ("test", n_te)):
            for k in range(n):
                cls = int(rng.integers(C)) if kind == "ev" else None
                splits[name].append(make(f"{name}-{kind}-{k:05d}", cls))

    return Corpus(spec, splits["train"], splits["val"], splits["test"],
                  prototypes={"audio": proto_a, "visual": proto_v})


def partner_candidates(pool: Sequence[FeatureVideo], video: FeatureVideo) -> list[int]:
    """Indices into ``pool`` of admissible partners for ``video``.

    Only label-disjoint videos qualify; background-only ones are preferred
    when any exist.
    """
    mine = video.events
    idx = [k for k, v in enumerate(pool) if v.vid != video.vid and not (v.events & mine)]
    bg = [k for k in idx if not pool[k].events]
    return bg if bg else idx


def disjoint_partner(pool: Sequence[FeatureVideo], video: FeatureVideo,
                     rng: np.random.Generator) -> FeatureVideo:
    """Random video from ``pool`` whose event set is disjoint from ``video``'s."""
    # order by id so the draw does not depend on pool order
    cands = sorted(partner_candidates(pool, video), key=lambda k: pool[k].vid)
    if not cands:
        mine = video.events
        blocking = sorted({c for v in pool if v.vid != video.vid for c in v.events & mine})
        raise NoPartnerError(f"no disjoint partner for {video.vid}; blocking classes {blocking}")
    return pool[cands[int(rng.integers(len(cands)))]]


# ---------------------------------------------------------------------------
# serialization: JSON lines, one header record then one record per video.
# Python's float repr is the shortest round-trip decimal, so the round trip
# is bit exact.

def save_corpus(corpus: Corpus, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = corpus.spec
    header = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "spec": asdict(spec),
              "counts": {k: len(corpus.split(k)) for k in ("train", "val", "test")}}
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for split in ("train", "val", "test"):
            for v in corpus.split(split):
                rec = {"id": v.vid, "split": split, "y": v.labels.tolist(),
                       "Y": [int(x) for x in v.video_label],
                       "audio": v.audio.tolist(), "visual": v.visual.tolist()}
                f.write(json.dumps(rec) + "\n")


def read_header(lines: list[str], fmt: str, version: int) -> dict:
    if not lines:
        raise FormatError("empty file: missing header record")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FormatError(f"record 0: malformed header ({e.msg})") from None
    if not isinstance(header, dict) or header.get("format") != fmt:
        raise FormatError(f"record 0: not a {fmt} file")
    if header.get("version") != version:
        raise VersionError(f"{fmt} version {header.get('version')!r} not supported (expected {version})")
    return header


def load_corpus(path) -> Corpus:
    with open(path) as f:
        lines = f.read().splitlines()
    header = read_header(lines, CORPUS_FORMAT, CORPUS_VERSION)
    try:
        spec = CorpusSpec(**header["spec"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"record 0: bad spec ({e})") from None

    splits = {"train": [], "val": [], "test": []}
    for i, line in enumerate(lines[1:], start=1):
        try:
            rec = json.loads(line)
            v = FeatureVideo(rec["id"], np.array(rec["audio"], dtype=np.float64),
                             np.array(rec["visual"], dtype=np.float64),
                             np.array(rec["y"], dtype=np.int64), spec.n_classes)
            if v.audio.shape != (spec.T, spec.d_audio) or v.visual.shape != (spec.T, spec.d_visual):
                raise FormatError(f"record {i}: feature shape does not match header")
            if list(v.video_label.astype(int)) != rec["Y"]:
                raise FormatError(f"record {i}: video label inconsistent with segment labels")
            splits[rec["split"]].append(v)
        except FormatError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"record {i}: {type(e).__name__}: {e}") from None

    counts = header.get("counts", {})
    for k, lst in splits.items():
        if counts.get(k, len(lst)) != len(lst):
            raise FormatError(f"{k} split has {len(lst)} records, header says {counts[k]} (truncated file?)")
    return Corpus(spec, splits["train"], splits["val"], splits["test"])


def make_corpus(spec: CorpusSpec) -> Corpus:
    """Generate the corpus determined by ``spec`` (its seed is the root seed)."""
    from .numkit import derive_rng

    return generate_corpus(spec, derive_rng(spec.seed, "corpus"))


def event_length_histogram(videos: Sequence[FeatureVideo]) -> dict[int, int]:
    hist: dict[int, int] = {}
    for v in videos:
        n = int((v.labels < v.n_classes).sum())
        if n:
            hist[n] = hist.get(n, 0) + 1
    return dict(sorted(hist.items()))
