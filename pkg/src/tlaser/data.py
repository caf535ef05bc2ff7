"""Parallel corpora, the pivot curriculum, token-budget batching and negatives."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bpe import Vocabulary, normalize
from .model import decoder_views, frame_source, pad_batch


class DataError(ValueError):
    pass


@dataclass
class ParallelCorpus:
    """Line ``i`` of every language is a mutual translation."""

    sentences: dict[str, list[str]]
    labels: list[str] | None = None

    def __post_init__(self):
        counts = {lang: len(lines) for lang, lines in self.sentences.items()}
        if len(set(counts.values())) > 1:
            raise DataError(f"languages are not aligned; line counts: {counts}")
        if self.labels is not None and counts and len(self.labels) != next(iter(counts.values())):
            raise DataError(f"{len(self.labels)} labels for {next(iter(counts.values()))} lines")

    @property
    def languages(self) -> list[str]:
        return sorted(self.sentences)

    def __len__(self) -> int:
        return len(next(iter(self.sentences.values()))) if self.sentences else 0

    def subset(self, indices: Sequence[int]) -> "ParallelCorpus":
        sents = {lang: [lines[i] for i in indices] for lang, lines in self.sentences.items()}
        labels = None if self.labels is None else [self.labels[i] for i in indices]
        return ParallelCorpus(sents, labels)

    def restrict(self, langs: Iterable[str]) -> "ParallelCorpus":
        return ParallelCorpus({lang: self.sentences[lang] for lang in langs}, self.labels)


@dataclass(frozen=True)
class CurriculumDirection:
    src: str
    tgt: str

    def __post_init__(self):
        if self.src == self.tgt:
            raise DataError(f"direction source and target are both {self.src!r}")

    def __str__(self) -> str:
        return f"{self.src}-{self.tgt}"


@dataclass
class Batch:
    direction: CurriculumDirection
    indices: np.ndarray
    src: np.ndarray          # framed source ids, (N, Ts)
    tgt_src: np.ndarray      # framed target-language ids for embedding, (N, Tt + 2)
    G: np.ndarray            # EOS-fronted decoder input, (N, Tt + 1)
    Y: np.ndarray            # EOS-terminated decoder targets, (N, Tt + 1)
    neg_ab: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), np.int64))
    neg_ba: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), np.int64))

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def n_tokens(self) -> int:
        """Non-pad source tokens plus target tokens."""
        return int((self.src != 0).sum() + (self.Y != 0).sum())


def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_parallel(paths: dict[str, str | Path], labels: str | Path | None = None) -> ParallelCorpus:
    """Read one file per language (plus optional labels) into an aligned corpus."""
    raw = {lang: _read_lines(Path(p)) for lang, p in paths.items()}
    counts = {str(paths[lang]): len(lines) for lang, lines in raw.items()}
    if len(set(counts.values())) > 1:
        raise DataError(f"line-count mismatch across files: {counts}")
    sentences = {}
    for lang, lines in raw.items():
        norm = []
        for i, line in enumerate(lines, start=1):
            s = normalize(line)
            if not s:
                raise DataError(f"{paths[lang]}: line {i} is empty after normalization")
            norm.append(s)
        sentences[lang] = norm
    label_list = None
    if labels is not None:
        label_list = [normalize(x) for x in _read_lines(Path(labels))]
        n = next(iter(counts.values()), 0)
        if len(label_list) != n:
            raise DataError(f"{labels}: {len(label_list)} labels for {n} sentences")
    return ParallelCorpus(sentences, label_list)


_SPLIT_FILE = re.compile(r"^(?P<split>[^.]+)\.(?P<lang>[^.]+)\.txt$")


def load_split(corpus_dir: str | Path, split: str, langs: Iterable[str] | None = None) -> ParallelCorpus:
    """Load ``<split>.<lang>.txt`` files (and ``<split>.labels.txt`` if present)."""
    corpus_dir = Path(corpus_dir)
    found = {}
    for f in sorted(corpus_dir.iterdir()):
        m = _SPLIT_FILE.match(f.name)
        if m and m["split"] == split and m["lang"] != "labels":
            found[m["lang"]] = f
    if langs is not None:
        langs = list(langs)
        missing = [lang for lang in langs if lang not in found]
        if missing:
            raise DataError(f"{corpus_dir}: no {split} file for languages {missing}")
        found = {lang: found[lang] for lang in langs}
    if not found:
        raise DataError(f"{corpus_dir}: no files for split {split!r}")
    labels = corpus_dir / f"{split}.labels.txt"
    return load_parallel(found, labels if labels.exists() else None)


def build_curriculum(languages: Iterable[str], pivots: Sequence[str],
                     bilingual: bool = False) -> list[CurriculumDirection]:
    """Every non-pivot source to each pivot, and each pivot to the other pivot.

    ``bilingual`` with exactly two languages gives ``[a->b, b->a]`` in the
    order of ``pivots`` (or sorted order when pivots are not given).
    """
    languages = sorted(set(languages))
    if len(languages) < 2:
        raise DataError("need at least two languages")
    if bilingual:
        if len(languages) != 2:
            raise DataError(f"bilingual training takes exactly two languages, got {languages}")
        a, b = pivots if pivots else languages
        if {a, b} != set(languages):
            raise DataError(f"pivots {pivots} do not match languages {languages}")
        return [CurriculumDirection(a, b), CurriculumDirection(b, a)]
    if len(pivots) != 2 or pivots[0] == pivots[1]:
        raise DataError(f"need two distinct pivot languages, got {list(pivots)}")
    for p in pivots:
        if p not in languages:
            raise DataError(f"pivot {p!r} is not among languages {languages}")
    out = []
    for src in languages:
        for tgt in pivots:
            if src != tgt:
                out.append(CurriculumDirection(src, tgt))
    return out


def pack_by_length(lengths: Sequence[int], max_tokens: int) -> list[list[int]]:
    """Greedy length-sorted packing under a padded-token budget.

    A batch costs ``rows * max_length``; a sentence that would push the cost
    past ``max_tokens`` starts a new batch.
    """
    lengths = [int(x) for x in lengths]
    for i, n in enumerate(lengths):
        if n > max_tokens:
            raise DataError(f"line {i + 1} has framed length {n} > max_tokens={max_tokens}")
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    batches, current, longest = [], [], 0
    for i in order:
        n = lengths[i]
        if current and (len(current) + 1) * max(longest, n) > max_tokens:
            batches.append(current)
            current, longest = [], 0
        current.append(i)
        longest = max(longest, n)
    if current:
        batches.append(current)
    return batches


def sample_negatives(batch_size: int, n_neg: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Distinct non-self indices per row, drawn independently for each direction."""
    if n_neg > batch_size - 1:
        raise DataError(f"cannot draw {n_neg} negatives from a batch of {batch_size}")

    def draw() -> np.ndarray:
        out = np.empty((batch_size, n_neg), dtype=np.int64)
        for i in range(batch_size):
            k = rng.permutation(batch_size - 1)[:n_neg]
            out[i] = k + (k >= i)
        return out

    return draw(), draw()


class EncodedCorpus:
    """BPE ids for every line of every language, computed once."""

    def __init__(self, corpus: ParallelCorpus, vocab: Vocabulary):
        self.corpus = corpus
        self.vocab = vocab
        self.ids = {lang: [vocab.encode(s) for s in lines] for lang, lines in corpus.sentences.items()}

    def __len__(self) -> int:
        return len(self.corpus)

    def framed_lengths(self, lang: str) -> list[int]:
        return [len(x) + 2 for x in self.ids[lang]]


def make_batches(data: EncodedCorpus, direction: CurriculumDirection, max_tokens: int,
                 epoch_seed: int | Sequence[int], n_neg: int = 0) -> list[Batch]:
    """Pack one direction's epoch into batches and shuffle their order.

    ``n_neg`` negatives per row are drawn in every batch, capped at
    ``rows - 1`` for small batches.
    """
    rng = np.random.default_rng(epoch_seed)
    groups = pack_by_length(data.framed_lengths(direction.src), max_tokens)
    groups = [groups[i] for i in rng.permutation(len(groups))]
    src_ids, tgt_ids = data.ids[direction.src], data.ids[direction.tgt]
    out = []
    for g in groups:
        G, Y = decoder_views([tgt_ids[i] for i in g])
        b = Batch(direction=direction, indices=np.asarray(g, dtype=np.int64),
                  src=pad_batch(frame_source([src_ids[i] for i in g])),
                  tgt_src=pad_batch(frame_source([tgt_ids[i] for i in g])), G=G, Y=Y)
        k = min(n_neg, len(g) - 1)
        if k > 0:
            b.neg_ab, b.neg_ba = sample_negatives(len(g), k, rng)
        out.append(b)
    return out


def interleave(per_direction: Sequence[Sequence[Batch]]) -> list[Batch]:
    """Round-robin over directions, one batch at a time."""
    out = []
    longest = max((len(x) for x in per_direction), default=0)
    for i in range(longest):
        for batches in per_direction:
            if i < len(batches):
                out.append(batches[i])
    return out
