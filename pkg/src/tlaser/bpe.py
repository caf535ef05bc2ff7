"""Joint byte-pair-encoding vocabulary shared by every language.

Words are whitespace-delimited.  The last character of each word carries an
end-of-word marker (``"b"`` becomes the single symbol ``"b</w>"``), so a
merged token such as ``"aa</w>"`` can only occur word-finally.  Merges are
greedy by pair frequency; ties go to the lexicographically smallest pair.
"""

from __future__ import annotations

import collections
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

EOW = "</w>"
PAD, UNK, EOS, STR_TAG = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "</s>", "<str>")
HEADER = "BPEV1"
_LANG_PREFIX = "@lang"

_WS = re.compile(r"\s+")


class VocabularyError(ValueError):
    pass


def normalize(text: str) -> str:
    """Collapse whitespace runs to one space and trim the ends."""
    return _WS.sub(" ", text).strip()


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + EOW,)


@dataclass
class Vocabulary:
    base_symbols: list[str]
    merges: list[tuple[str, str]]
    languages: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = list(RESERVED) + list(self.base_symbols) + [a + b for a, b in self.merges]
        self.index = {}
        for i in range(len(RESERVED), len(self.tokens)):
            # later merges can recreate an earlier string; first id wins
            self.index.setdefault(self.tokens[i], i)
        self.ranks = {pair: r for r, pair in enumerate(self.merges)}
        self._cache: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def lang_id(self, lang: str) -> int:
        try:
            return self.languages[lang]
        except KeyError:
            raise VocabularyError(f"unknown language {lang!r}; known: {sorted(self.languages)}") from None

    def with_languages(self, langs: Iterable[str]) -> "Vocabulary":
        table = {lang: i for i, lang in enumerate(sorted(set(langs)))}
        return Vocabulary(list(self.base_symbols), list(self.merges), table)

    # ---- encoding -------------------------------------------------------

    def _encode_word(self, word: str) -> list[int]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = list(_word_symbols(word))
        while len(symbols) > 1:
            best, best_rank = -1, None
            for i in range(len(symbols) - 1):
                r = self.ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best < 0:
                break
            symbols[best:best + 2] = [symbols[best] + symbols[best + 1]]
        ids = [self.index.get(s, UNK) for s in symbols]
        self._cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for word in normalize(text).split(" "):
            if word:
                out.extend(self._encode_word(word))
        return out

    def decode(self, ids: Iterable[int]) -> str:
        pieces = []
        n = len(self.tokens)
        for i in ids:
            i = int(i)
            if i < 0 or i >= n:
                raise IndexError(f"token id {i} outside vocabulary of size {n}")
            if i < len(RESERVED):
                continue
            pieces.append(self.tokens[i])
        return normalize("".join(pieces).replace(EOW, " "))

    # ---- persistence ----------------------------------------------------

    def dumps(self) -> str:
        lines = [f"{HEADER} {len(self)}", *RESERVED, *self.base_symbols]
        lines += [f"{a} {b}" for a, b in self.merges]
        lines += [f"{_LANG_PREFIX} {name} {i}" for name, i in sorted(self.languages.items(), key=lambda kv: kv[1])]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith(HEADER + " "):
            raise VocabularyError("missing BPEV1 header")
        declared = int(lines[0].split(" ")[1])
        if tuple(lines[1:1 + len(RESERVED)]) != RESERVED:
            raise VocabularyError("reserved-token block is malformed")
        base, merges, langs = [], [], {}
        for line in lines[1 + len(RESERVED):]:
            fields = line.split(" ")
            if len(fields) == 1:
                if merges:
                    raise VocabularyError(f"base symbol {line!r} after merge rules")
                base.append(line)
            elif len(fields) == 2:
                merges.append((fields[0], fields[1]))
            elif len(fields) == 3 and fields[0] == _LANG_PREFIX:
                langs[fields[1]] = int(fields[2])
            else:
                raise VocabularyError(f"unparseable vocabulary line {line!r}")
        vocab = cls(base, merges, langs)
        if len(vocab) != declared:
            raise VocabularyError(f"header declares {declared} tokens but file holds {len(vocab)}")
        return vocab

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_bytes().decode("utf-8"))


def learn_bpe(corpus: Iterable[str], target_vocab: int) -> Vocabulary:
    """Learn merges until the vocabulary reaches ``target_vocab`` tokens.

    Stops early once no adjacent pair occurs more than once.
    """
    word_freq: collections.Counter[str] = collections.Counter()
    for line in corpus:
        word_freq.update(w for w in normalize(line).split(" ") if w)
    if not word_freq:
        raise VocabularyError("cannot learn BPE from an empty corpus")

    words = [list(_word_symbols(w)) for w in sorted(word_freq)]
    freqs = [word_freq[w] for w in sorted(word_freq)]
    base = sorted({s for syms in words for s in syms})
    floor = len(RESERVED) + len(base)
    if target_vocab < floor:
        raise VocabularyError(f"target_vocab {target_vocab} is below reserved + base symbols ({floor})")

    pair_counts: collections.Counter[tuple[str, str]] = collections.Counter()
    where: dict[tuple[str, str], set[int]] = collections.defaultdict(set)
    for wi, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)

    merges: list[tuple[str, str]] = []
    while floor + len(merges) < target_vocab and pair_counts:
        top = max(pair_counts.values())
        if top < 2:
            break
        pair = min(p for p, c in pair_counts.items() if c == top)
        merges.append(pair)
        merged = pair[0] + pair[1]
        for wi in sorted(where.pop(pair, ())):
            syms, f = words[wi], freqs[wi]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= f
                if pair_counts[p] <= 0:
                    del pair_counts[p]
            i, out = 0, []
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == pair[0] and syms[i + 1] == pair[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[wi] = out
            for p in zip(out, out[1:]):
                pair_counts[p] += f
                where[p].add(wi)
        pair_counts.pop(pair, None)
    return Vocabulary(base, merges)
