"""Deterministic pseudo-language corpora with document classes.

Every document is a sequence of *base* token ids drawn from a class-specific
unigram distribution.  Language ``k`` writes base token ``t`` as ``"Lk_wt"``,
so aligned lines are exact translations and surface vocabularies never
overlap between languages.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import ParallelCorpus

SPLITS = ("train", "dev", "test")


@dataclass
class SynthSpec:
    n_languages: int = 4
    base_vocab_size: int = 200
    n_classes: int = 4
    sentences_per_split: dict[str, int] = field(
        default_factory=lambda: {"train": 2000, "dev": 200, "test": 400})
    doc_length: tuple[int, int] = (5, 15)
    class_topic_skew: float = 0.8
    topic_concentration: float = 0.5
    permute_window: int = 0
    seed: int = 0

    def __post_init__(self):
        self.doc_length = tuple(self.doc_length)
        if self.n_languages < 2:
            raise ValueError("need at least two languages")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.base_vocab_size < 10 * self.n_classes:
            raise ValueError("base_vocab_size must be at least 10 * n_classes")
        lo, hi = self.doc_length
        if not 1 <= lo <= hi:
            raise ValueError(f"bad doc_length range {self.doc_length}")
        if not 0 <= self.class_topic_skew <= 1:
            raise ValueError("class_topic_skew must lie in [0, 1]")
        unknown = set(self.sentences_per_split) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown splits {sorted(unknown)}")

    @property
    def languages(self) -> list[str]:
        return [f"L{k}" for k in range(self.n_languages)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["doc_length"] = list(self.doc_length)
        return d


@dataclass
class SynthCorpus:
    spec: SynthSpec
    class_dists: np.ndarray                    # (C, B)
    base: dict[str, list[list[int]]]           # split -> base-token sequences
    labels: dict[str, list[int]]               # split -> class ids
    splits: dict[str, ParallelCorpus]


def surface(lang_index: int, token: int) -> str:
    return f"L{lang_index}_w{token}"


def class_distributions(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Mixture of a uniform floor and a sparse topic over each class's own block."""
    B, C = spec.base_vocab_size, spec.n_classes
    block = B // C
    dists = np.empty((C, B))
    for c in range(C):
        topic = np.zeros(B)
        topic[c * block:(c + 1) * block] = rng.dirichlet(np.full(block, spec.topic_concentration))
        dists[c] = spec.class_topic_skew * topic + (1 - spec.class_topic_skew) / B
    return dists


def _reorder(seq: list[int], lang_index: int, window: int) -> list[int]:
    if window <= 1 or lang_index == 0:
        return seq
    perm = np.random.default_rng([lang_index, window]).permutation(window)
    out = []
    for start in range(0, len(seq), window):
        chunk = seq[start:start + window]
        if len(chunk) == window:
            chunk = [chunk[j] for j in perm]
        out.extend(chunk)
    return out


def render(seq: list[int], lang_index: int, window: int = 0) -> str:
    return " ".join(surface(lang_index, t) for t in _reorder(seq, lang_index, window))


def build(spec: SynthSpec) -> SynthCorpus:
    """Generate every split in memory."""
    rng = np.random.default_rng(spec.seed)
    dists = class_distributions(spec, rng)
    lo, hi = spec.doc_length
    seen: set[tuple[int, ...]] = set()
    base, labels, splits = {}, {}, {}
    for split in SPLITS:
        n = spec.sentences_per_split.get(split, 0)
        seqs, labs = [], []
        while len(seqs) < n:
            c = int(rng.integers(spec.n_classes))
            length = int(rng.integers(lo, hi + 1))
            seq = tuple(int(t) for t in rng.choice(spec.base_vocab_size, size=length, p=dists[c]))
            if seq in seen:
                continue
            seen.add(seq)
            seqs.append(list(seq))
            labs.append(c)
        base[split], labels[split] = seqs, labs
        sentences = {lang: [render(s, k, spec.permute_window) for s in seqs]
                     for k, lang in enumerate(spec.languages)}
        splits[split] = ParallelCorpus(sentences, [f"c{c}" for c in labs])
    return SynthCorpus(spec, dists, base, labels, splits)


def _lines(lines: list[str]) -> bytes:
    return "".join(x + "\n" for x in lines).encode("utf-8")


def generate(spec: SynthSpec, out_dir: str | Path) -> SynthCorpus:
    """Write ``<split>.<lang>.txt``, ``<split>.labels.txt`` and ``spec.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = build(spec)
    for split, pc in corpus.splits.items():
        for lang, lines in pc.sentences.items():
            (out / f"{split}.{lang}.txt").write_bytes(_lines(lines))
        (out / f"{split}.labels.txt").write_bytes(_lines(pc.labels))
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return corpus


def strip_prefix(word: str) -> int:
    """Base token id of a surface word ``"Lk_wt"``."""
    return int(word.split("_w", 1)[1])
