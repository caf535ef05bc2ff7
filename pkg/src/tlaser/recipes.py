"""Desk-scale recipe: synthetic corpus, small model, T versus cT comparison.

``toy_config`` fixes the hyperparameters used by the acceptance runs and the
demos.  ``compare`` trains the unconstrained model (beta = lambda = 0) and
the constrained one on the same corpus, steps and seeds, then measures
paired distance, translation retrieval and the zero-shot matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bpe import Vocabulary, learn_bpe
from .evaluation import AccuracyMatrix, ClassifierConfig, DocumentDataset, paired_distance_report, zero_shot_matrix
from .losses import LossConfig
from .model import ModelConfig, TLaser, frame_source, pad_batch
from .synth import SynthCorpus, SynthSpec, build
from .train import TrainConfig, TrainResult, train

TOY_VOCAB_SIZE = 1000

UNCONSTRAINED = LossConfig(beta=0.0, lam=0.0, n_neg=0)
CONSTRAINED = LossConfig(alpha=0.5, beta=0.25, lam=0.125, n_neg=5)


def toy_config(loss: LossConfig, seed: int = 0, n_epochs: int = 5, pivots: tuple[str, ...] = ("L0", "L1"),
               bilingual: bool = False) -> TrainConfig:
    # dropout stays off: with two independently masked encoder passes the
    # paired-distance term mostly fights the mask noise at this size
    model = ModelConfig(d_model=64, n_heads=4, d_fc=128, n_enc_layers=2, n_dec_layers=1, d_lang=8,
                        max_positions=64, dropout_p=0.0)
    return TrainConfig(base_lr=3e-3, warmup_steps=200, dropout_p=0.0, max_tokens=512, n_epochs=n_epochs,
                       seed=seed, pivots=pivots, bilingual=bilingual, loss=loss, model=model)


def corpus_vocab(corpus: SynthCorpus, size: int = TOY_VOCAB_SIZE) -> Vocabulary:
    tr = corpus.splits["train"]
    return learn_bpe([s for lang in tr.languages for s in tr.sentences[lang]], size).with_languages(tr.languages)


@dataclass
class RunMetrics:
    label: str
    seed: int
    d_p: float
    retrieval: float
    matrix: AccuracyMatrix
    epoch_losses: list[float]
    seconds: float
    result: TrainResult = field(repr=False)

    @property
    def cross(self) -> float:
        return self.matrix.cross


def run_one(label: str, cfg: TrainConfig, corpus: SynthCorpus, vocab: Vocabulary, out_dir: str | Path,
            classifier: ClassifierConfig | None = None) -> RunMetrics:
    t0 = time.perf_counter()
    res = train(cfg, corpus.splits["train"], vocab, out_dir)
    dist = paired_distance_report(res.model, res.vocab, corpus.splits["test"], cfg.loss.epsilon)
    matrix = zero_shot_matrix(res.model, res.vocab, DocumentDataset(corpus.splits), classifier)
    return RunMetrics(label, cfg.seed, dist["d_p_mean"], dist["retrieval"], matrix, res.epoch_losses,
                      time.perf_counter() - t0, res)


def compare(spec: SynthSpec, seeds: list[int], out_dir: str | Path, n_epochs: int = 5,
            bilingual: bool = False) -> dict[str, list[RunMetrics]]:
    """Train T and cT for every seed; returns ``{"T": [...], "cT": [...]}``."""
    corpus = build(spec)
    vocab = corpus_vocab(corpus)
    langs = spec.languages
    pivots = (langs[0], langs[1])
    out = {"T": [], "cT": []}
    for seed in seeds:
        for label, loss in (("T", UNCONSTRAINED), ("cT", CONSTRAINED)):
            cfg = toy_config(loss, seed, n_epochs, pivots, bilingual)
            out[label].append(run_one(label, cfg, corpus, vocab, Path(out_dir) / f"{label}_seed{seed}"))
    return out


def exact_match_rate(model: TLaser, vocab: Vocabulary, sources: list[str], references: list[str],
                     tgt_lang: str, batch_size: int = 64) -> float:
    """Fraction of greedy translations equal to the reference string."""
    hits = 0
    max_len = model.config.max_positions - 1
    for start in range(0, len(sources), batch_size):
        src = [vocab.encode(s) for s in sources[start:start + batch_size]]
        P = model.encode(pad_batch(frame_source(src))).P
        for ids, ref in zip(model.greedy_decode(P, vocab.lang_id(tgt_lang), max_len),
                            references[start:start + batch_size]):
            hits += vocab.decode(ids) == ref
    return hits / len(sources)


def mean(xs) -> float:
    return float(np.mean(list(xs)))


def summarize(runs: dict[str, list[RunMetrics]]) -> dict[str, dict[str, float]]:
    return {label: {"d_p": mean(r.d_p for r in rs), "retrieval": mean(r.retrieval for r in rs),
                    "cross": mean(r.cross for r in rs), "same": mean(r.matrix.same for r in rs),
                    "seconds": sum(r.seconds for r in rs)}
            for label, rs in runs.items()}


__all__ = ["CONSTRAINED", "UNCONSTRAINED", "RunMetrics", "compare", "corpus_vocab", "exact_match_rate",
           "run_one", "summarize", "toy_config"]
