"""Finite-difference checks of the training objective on a toy model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import GradCheckReport
from .data import Batch, CurriculumDirection, sample_negatives
from .losses import LossConfig
from .model import ModelConfig, TLaser, decoder_views, frame_source, pad_batch
from .train import batch_loss

TOY_MODEL = ModelConfig(d_model=16, n_heads=2, d_fc=32, n_enc_layers=2, n_dec_layers=1,
                        vocab_size=50, n_langs=2, d_lang=4, max_positions=32, dropout_p=0.0)
TOY_LOSS = LossConfig(alpha=0.5, beta=0.25, lam=0.125, n_neg=1)


@dataclass
class SuiteResult:
    reports: dict[str, GradCheckReport]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports.values())

    def summary(self) -> str:
        lines = [f"{name}: {rep.summary()}" for name, rep in self.reports.items()]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} in {self.seconds:.1f}s")
        return "\n".join(lines)


def toy_batch(config: ModelConfig, n_pairs: int, n_neg: int, seed: int) -> Batch:
    """Random aligned pairs of unequal lengths, so padding is exercised."""
    rng = np.random.default_rng(seed)
    hi = min(8, config.max_positions - 2)
    a = [rng.integers(4, config.vocab_size, int(rng.integers(2, hi))).tolist() for _ in range(n_pairs)]
    b = [rng.integers(4, config.vocab_size, int(rng.integers(2, hi))).tolist() for _ in range(n_pairs)]
    G, Y = decoder_views(b)
    batch = Batch(CurriculumDirection("a", "b"), np.arange(n_pairs), pad_batch(frame_source(a)),
                  pad_batch(frame_source(b)), G, Y)
    if n_neg:
        batch.neg_ab, batch.neg_ba = sample_negatives(n_pairs, n_neg, rng)
    return batch


def check_objective(config: ModelConfig = TOY_MODEL, loss: LossConfig = TOY_LOSS, n_pairs: int = 2,
                    seed: int = 0, step: float = 1e-5, rel_tol: float = 1e-3) -> GradCheckReport:
    """Compare backprop against central differences for every parameter entry."""
    with ag.precision(np.float64):
        model = TLaser.init(config, seed=seed, dtype=np.float64)
        batch = toy_batch(config, n_pairs, loss.n_neg, seed + 1)
        tgt = config.n_langs - 1
        return ag.grad_check(lambda: batch_loss(model, batch, loss, tgt)[0], model.params,
                             step=step, rel_tol=rel_tol)


def run_suite(config: ModelConfig = TOY_MODEL, loss: LossConfig = TOY_LOSS, n_pairs: int = 2,
              seed: int = 0, step: float = 1e-5, rel_tol: float = 1e-3) -> SuiteResult:
    t0 = time.perf_counter()
    reports = {"constrained objective": check_objective(config, loss, n_pairs, seed, step, rel_tol)}
    return SuiteResult(reports, time.perf_counter() - t0)
