"""Zero-shot cross-lingual classification, distance diagnostics and 2-d plots."""

from __future__ import annotations

import json
import math
import struct
from decimal import ROUND_HALF_EVEN, Decimal
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .bpe import Vocabulary
from .data import ParallelCorpus
from .model import TLaser, frame_source, pad_batch
from .train import AdamState, adam_step

EMB_MAGIC = b"EMB1"


class EvalError(ValueError):
    pass


class EmbeddingFormatError(EvalError):
    pass


@dataclass
class EmbeddingMatrix:
    data: np.ndarray
    lang: str | None = None
    labels: list[str] | None = None

    def __post_init__(self):
        if self.data.ndim != 2:
            raise EvalError(f"embedding matrix must be 2-d, got {self.data.shape}")
        if self.labels is not None and len(self.labels) != len(self.data):
            raise EvalError(f"{len(self.labels)} labels for {len(self.data)} rows")
        if not np.isfinite(self.data).all():
            raise EvalError("embedding matrix contains non-finite entries")

    def __len__(self) -> int:
        return len(self.data)


# --------------------------------------------------------------------------
# embedding
# --------------------------------------------------------------------------


def embed_documents(model: TLaser, vocab: Vocabulary, docs: Sequence[str], max_doc_tokens: int = 750,
                    batch_size: int = 64, lang: str | None = None,
                    labels: Sequence[str] | None = None) -> EmbeddingMatrix:
    """Sentence embedding ``P`` of each document (dropout off).

    Documents are BPE-encoded, cut to ``max_doc_tokens`` tokens and framed
    with STR_TAG / EOS.
    """
    if len(docs) == 0:
        raise EvalError("no documents to embed")
    ids = []
    for i, d in enumerate(docs):
        enc = vocab.encode(d)
        if not enc:
            raise EvalError(f"document {i} is empty")
        ids.append(enc)
    framed = frame_source(ids, max_doc_tokens)
    rows = []
    for start in range(0, len(framed), batch_size):
        chunk = framed[start:start + batch_size]
        rows.append(model.encode(pad_batch(chunk)).P.data)
    return EmbeddingMatrix(np.concatenate(rows).astype(np.float32), lang,
                           None if labels is None else list(labels))


def write_embeddings(emb: EmbeddingMatrix, path: str | Path) -> None:
    """``EMB1``, u32 rows, u32 dim, float32 payload, optional JSON footer."""
    data = np.ascontiguousarray(emb.data, dtype="<f4")
    rows, dim = data.shape
    blob = EMB_MAGIC + struct.pack("<II", rows, dim) + data.tobytes()
    if emb.lang is not None or emb.labels is not None:
        blob += json.dumps({"language": emb.lang, "labels": emb.labels}, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(blob)


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    blob = Path(path).read_bytes()
    if blob[:4] != EMB_MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise EmbeddingFormatError(f"{path}: truncated header")
    rows, dim = struct.unpack("<II", blob[4:12])
    end = 12 + 4 * rows * dim
    if len(blob) < end:
        raise EmbeddingFormatError(f"{path}: header says {rows}x{dim} but payload holds "
                                   f"{(len(blob) - 12) // 4} floats")
    data = np.frombuffer(blob[12:end], dtype="<f4").reshape(rows, dim).astype(np.float32)
    lang = labels = None
    if len(blob) > end:
        try:
            footer = json.loads(blob[end:].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise EmbeddingFormatError(f"{path}: unreadable footer ({exc})") from None
        lang, labels = footer.get("language"), footer.get("labels")
    return EmbeddingMatrix(data, lang, labels)


# --------------------------------------------------------------------------
# accuracy matrix
# --------------------------------------------------------------------------


@dataclass
class AccuracyMatrix:
    """Row = classifier training language, column = test language."""

    languages: list[str]
    acc: np.ndarray

    def __post_init__(self):
        self.acc = np.asarray(self.acc, dtype=np.float64)
        L = len(self.languages)
        if self.acc.shape != (L, L):
            raise EvalError(f"accuracy matrix shape {self.acc.shape} does not match {L} languages")

    @property
    def _off(self) -> np.ndarray:
        return ~np.eye(len(self.languages), dtype=bool)

    @property
    def cross(self) -> float | None:
        if len(self.languages) < 2:
            return None
        return float(self.acc[self._off].mean())

    @property
    def same(self) -> float:
        return float(np.diag(self.acc).mean())

    @property
    def all(self) -> float:
        return float(self.acc.mean())

    @property
    def x_cross(self) -> dict[str, float | None]:
        if len(self.languages) < 2:
            return {lang: None for lang in self.languages}
        off = self._off
        return {lang: float(self.acc[i][off[i]].mean()) for i, lang in enumerate(self.languages)}

    def rounded(self, ndigits: int = 1) -> dict:
        """Aggregates rounded half-to-even on their shortest decimal repr."""
        q = Decimal(1).scaleb(-ndigits)

        def r(x):
            return None if x is None else float(Decimal(repr(x)).quantize(q, ROUND_HALF_EVEN))

        return {"cross": r(self.cross), "same": r(self.same), "all": r(self.all),
                "x_cross": {k: r(v) for k, v in self.x_cross.items()}}

    def to_dict(self) -> dict:
        return {"languages": self.languages, "accuracy": self.acc.tolist(), "x_cross": self.x_cross,
                "cross": self.cross, "same": self.same, "all": self.all}

    def to_tsv(self) -> str:
        lines = ["train\\test\t" + "\t".join(self.languages) + "\tX_cross"]
        for i, lang in enumerate(self.languages):
            xc = self.x_cross[lang]
            cells = [f"{a:.4f}" for a in self.acc[i]] + ["" if xc is None else f"{xc:.4f}"]
            lines.append(lang + "\t" + "\t".join(cells))
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# classifier
# --------------------------------------------------------------------------


@dataclass
class ClassifierConfig:
    hidden: int = 64
    lr: float = 1e-3
    max_epochs: int = 60
    batch_size: int = 64
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class Classifier:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    classes: list[str]
    best_epoch: int = 0
    dev_accuracy: float = 0.0
    history: list[float] = field(default_factory=list)

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1 + self.b1, 0)
        z = h @ self.w2 + self.b2
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> list[str]:
        return [self.classes[i] for i in self.probabilities(x).argmax(axis=1)]

    def accuracy(self, emb: EmbeddingMatrix) -> float:
        if emb.labels is None:
            raise EvalError("accuracy needs labelled embeddings")
        pred = self.predict(emb.data)
        return float(np.mean([p == y for p, y in zip(pred, emb.labels)]))


def train_classifier(train: EmbeddingMatrix, dev: EmbeddingMatrix,
                     hyper: ClassifierConfig | None = None) -> Classifier:
    """One-hidden-layer ReLU network, Adam, epoch picked by dev accuracy."""
    hyper = hyper or ClassifierConfig()
    if train.labels is None or dev.labels is None:
        raise EvalError("classifier training needs labels")
    if train.lang != dev.lang:
        raise EvalError(f"train ({train.lang}) and dev ({dev.lang}) must share a language")
    if train.data.shape[1] != dev.data.shape[1]:
        raise EvalError("train and dev embeddings differ in width")
    classes = sorted(set(train.labels))
    if len(classes) < 2:
        raise EvalError("training data has a single class")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in train.labels])
    d, C, H = train.data.shape[1], len(classes), hyper.hidden
    rng = np.random.default_rng(hyper.seed)

    with ag.precision(np.float64):
        b = 1 / math.sqrt(d)
        params = {"w1": ag.parameter(rng.uniform(-b, b, (d, H)), "w1"), "b1": ag.parameter(np.zeros(H), "b1"),
                  "w2": ag.parameter(rng.uniform(-1 / math.sqrt(H), 1 / math.sqrt(H), (H, C)), "w2"),
                  "b2": ag.parameter(np.zeros(C), "b2")}
    x_all = train.data.astype(np.float64)
    state, step = AdamState(), 0

    def snapshot(epoch, acc):
        return Classifier(*(params[k].data.copy() for k in ("w1", "b1", "w2", "b2")), classes, epoch, acc)

    best = snapshot(0, -1.0)
    history = []
    for epoch in range(1, hyper.max_epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            with ag.Tape() as tape:
                h = ag.relu(ag.add(ag.matmul(ag.Tensor(x_all[idx]), params["w1"]), params["b1"]))
                z = ag.add(ag.matmul(h, params["w2"]), params["b2"])
                loss = ag.smoothed_cross_entropy(z, y[idx], 0.0, np.full(len(idx), 1.0 / len(idx)))
            grads = ag.backward(loss, tape)
            step += 1
            adam_step(params, {k: grads[p] for k, p in params.items()}, state, step, hyper.lr,
                      (0.9, 0.999), 1e-8, hyper.weight_decay)
        acc = snapshot(epoch, 0.0).accuracy(dev)
        history.append(acc)
        if acc > best.dev_accuracy:
            best = snapshot(epoch, acc)
    best.history = history
    return best


# --------------------------------------------------------------------------
# zero-shot protocol
# --------------------------------------------------------------------------


class DocumentDataset:
    """Per-language ``train`` / ``dev`` / ``test`` documents with labels.

    Every read goes through :meth:`get` and is appended to ``access_log`` so
    the zero-shot discipline can be audited.
    """

    def __init__(self, splits: dict[str, ParallelCorpus]):
        for name in ("train", "dev", "test"):
            if name not in splits:
                raise EvalError(f"dataset is missing the {name!r} split")
            if splits[name].labels is None:
                raise EvalError(f"{name} split has no labels")
        self._splits = splits
        self.access_log: list[tuple[str, str]] = []
        langs = [set(s.languages) for s in splits.values()]
        if any(x != langs[0] for x in langs):
            raise EvalError("splits cover different languages")
        self.languages = sorted(langs[0])

    def get(self, lang: str, split: str) -> tuple[list[str], list[str]]:
        self.access_log.append((lang, split))
        pc = self._splits[split]
        return pc.sentences[lang], pc.labels

    def label_set(self, lang: str, split: str) -> set[str]:
        return set(self._splits[split].labels)


def zero_shot_matrix(model: TLaser, vocab: Vocabulary, dataset: DocumentDataset,
                     hyper: ClassifierConfig | None = None, max_doc_tokens: int = 750,
                     languages: Sequence[str] | None = None) -> AccuracyMatrix:
    """Train on language X (train/dev only), test on every language's test set."""
    langs = list(languages or dataset.languages)
    ref = dataset.label_set(langs[0], "train")
    for lang in langs:
        for split in ("train", "dev", "test"):
            if dataset.label_set(lang, split) - ref:
                raise EvalError(f"label set of {lang}/{split} differs from {langs[0]}/train")

    test_cache: dict[str, EmbeddingMatrix] = {}

    def embed(lang: str, split: str) -> EmbeddingMatrix:
        docs, labels = dataset.get(lang, split)
        return embed_documents(model, vocab, docs, max_doc_tokens, lang=lang, labels=labels)

    acc = np.zeros((len(langs), len(langs)))
    for i, x in enumerate(langs):
        clf = train_classifier(embed(x, "train"), embed(x, "dev"), hyper)
        for j, y in enumerate(langs):
            if y not in test_cache:
                test_cache[y] = embed(y, "test")
            acc[i, j] = clf.accuracy(test_cache[y])
    return AccuracyMatrix(langs, acc)


# --------------------------------------------------------------------------
# distance diagnostics
# --------------------------------------------------------------------------


def retrieval_accuracy(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of rows of ``a`` whose nearest row of ``b`` is the aligned one."""
    d2 = (a * a).sum(1)[:, None] - 2 * a @ b.T + (b * b).sum(1)[None, :]
    return float(np.mean(d2.argmin(axis=1) == np.arange(len(a))))


def paired_distance_stats(embs: dict[str, np.ndarray], eps: float = 1e-6) -> dict:
    """Paired distance and retrieval statistics over every ordered language pair."""
    langs = sorted(embs)
    if len(langs) < 2:
        raise EvalError("need at least two languages")
    stacked = np.concatenate([embs[lang].astype(np.float64) for lang in langs])
    v_norm = float(np.linalg.norm(stacked, axis=1).mean())
    pairs = {}
    for a in langs:
        for b in langs:
            if a == b:
                continue
            ea, eb = embs[a].astype(np.float64), embs[b].astype(np.float64)
            dp = ((ea - eb) ** 2).sum(1) / (v_norm + eps)
            pairs[f"{a}-{b}"] = {"d_p_mean": float(dp.mean()), "d_p_median": float(np.median(dp)),
                                 "retrieval": retrieval_accuracy(ea, eb)}
    return {
        "v_norm": v_norm,
        "d_p_mean": float(np.mean([p["d_p_mean"] for p in pairs.values()])),
        "retrieval": float(np.mean([p["retrieval"] for p in pairs.values()])),
        "pairs": pairs,
    }


def paired_distance_report(model: TLaser, vocab: Vocabulary, corpus: ParallelCorpus,
                           eps: float = 1e-6, max_doc_tokens: int = 750) -> dict:
    embs = {lang: embed_documents(model, vocab, lines, max_doc_tokens).data
            for lang, lines in corpus.sentences.items()}
    return paired_distance_stats(embs, eps)


# --------------------------------------------------------------------------
# PCA plot
# --------------------------------------------------------------------------


@dataclass
class Projection:
    coords: np.ndarray           # (n, k)
    components: np.ndarray       # (k, d)
    explained_variance: np.ndarray
    mean: np.ndarray


def pca(points: np.ndarray, k: int = 2) -> Projection:
    """Principal-component projection with a deterministic sign per axis.

    Each component is flipped so its largest-magnitude loading is positive.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise EvalError("PCA needs at least two points")
    if x.shape[1] < k:
        raise EvalError(f"PCA to {k} dims needs at least {k} input dims")
    mu = x.mean(axis=0)
    xc = x - mu
    if not np.any(np.abs(xc) > 0):
        raise EvalError("all points are identical; variance is degenerate")
    cov = xc.T @ xc / len(x)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    return Projection(xc @ comps.T, comps, np.clip(vals[order], 0, None), mu)


def pca_project(emb_a: EmbeddingMatrix, emb_b: EmbeddingMatrix, k: int = 2) -> Projection:
    """Joint projection of two aligned embedding sets (rows ``a`` first)."""
    if len(emb_a) != len(emb_b):
        raise EvalError(f"paired sets differ in size: {len(emb_a)} vs {len(emb_b)}")
    return pca(np.concatenate([emb_a.data, emb_b.data]), k)


def projection_tsv(proj: Projection, n_pairs: int, labels: tuple[str, str] = ("a", "b")) -> str:
    lines = ["set\tindex\tx\ty"]
    for r, (x, y) in enumerate(proj.coords[:, :2]):
        side = labels[0] if r < n_pairs else labels[1]
        lines.append(f"{side}\t{r % n_pairs}\t{x:.6f}\t{y:.6f}")
    return "\n".join(lines) + "\n"


def projection_svg(proj: Projection, n_pairs: int, size: int = 480, margin: int = 30) -> str:
    """Scatter with '+' for the first set and '-' for the second, numbered by pair."""
    xy = proj.coords[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    inner = size - 2 * margin
    pts = margin + (xy - lo) / span * inner
    pts[:, 1] = size - pts[:, 1]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}" font-family="monospace" font-size="9">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for r, (px, py) in enumerate(pts):
        first = r < n_pairs
        mark, colour = ("+", "#1f4e9c") if first else ("-", "#b0321e")
        out.append(f'<text x="{px:.2f}" y="{py:.2f}" fill="{colour}" text-anchor="middle">'
                   f'{mark}{r % n_pairs}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_projection(proj: Projection, n_pairs: int, svg_path: str | Path,
                     labels: tuple[str, str] = ("a", "b")) -> Path:
    svg_path = Path(svg_path)
    svg_path.write_text(projection_svg(proj, n_pairs))
    tsv = svg_path.with_suffix(".tsv")
    tsv.write_text(projection_tsv(proj, n_pairs, labels))
    return tsv


def asdict_report(matrix: AccuracyMatrix, distances: dict | None = None) -> dict:
    out = matrix.to_dict()
    if distances is not None:
        out["paired_distance"] = distances
    return out

