"""Adam with inverse-sqrt warmup, the training loop, and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import NumericError, Tensor
from .bpe import Vocabulary
from .data import (Batch, CurriculumDirection, EncodedCorpus, ParallelCorpus, build_curriculum,
                   interleave, make_batches)
from .losses import LossBreakdown, LossConfig, label_smoothed_nll, total_loss
from .model import ModelConfig, TLaser, pad_batch

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TLCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    warmup_steps: int = 4000
    weight_decay: float = 0.0001
    dropout_p: float = 0.3
    max_tokens: int = 128_000
    n_epochs: int = 20
    seed: int = 0
    clip_norm: float | None = None
    pivots: tuple[str, ...] = ()
    bilingual: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pivots"] = list(self.pivots)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = LossConfig(**d.get("loss", {}))
        d["model"] = ModelConfig(**d.get("model", {}))
        d["pivots"] = tuple(d.get("pivots", ()))
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# --------------------------------------------------------------------------
# schedule and optimizer
# --------------------------------------------------------------------------


def lr_at(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup from zero, then decay with the inverse square root of the step."""
    if step < 1:
        raise ValueError("step counts from 1")
    if warmup_steps <= 0:
        return base_lr / math.sqrt(step)
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * math.sqrt(warmup_steps / step)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, step: int,
              lr: float, betas: tuple[float, float] = (0.9, 0.98), eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """In-place Adam update with decoupled weight decay.

    Weights are shrunk by ``(1 - lr * weight_decay)`` before the bias-corrected
    Adam step.  Raises :class:`NumericError` (without touching any parameter)
    if a gradient is not finite.
    """
    bad = [name for name, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        raise NumericError(f"non-finite gradient at step {step} in: {', '.join(sorted(bad))}")
    b1, b2 = betas
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        data = p.data * p.data.dtype.type(1.0 - lr * weight_decay) if weight_decay else p.data
        p.data = (data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    k = max_norm / (total + 1e-12)
    return {n: g * g.dtype.type(k) for n, g in grads.items()}


# --------------------------------------------------------------------------
# one step
# --------------------------------------------------------------------------


def batch_loss(model: TLaser, batch: Batch, cfg: LossConfig, tgt_lang: int,
               rng: np.random.Generator | None = None) -> tuple[Tensor, LossBreakdown]:
    """Forward pass and loss for one batch of a single direction."""
    N = batch.size
    if cfg.constrained:
        # embed both sides in one encoder pass
        width = max(batch.src.shape[1], batch.tgt_src.shape[1])
        both = np.concatenate([pad_batch(list(batch.src), width), pad_batch(list(batch.tgt_src), width)])
        P = model.encode(both, rng).P
        pa = ag.getitem(P, slice(0, N))
        pb = ag.getitem(P, slice(N, 2 * N))
        logits = model.decode(batch.G, tgt_lang, pa, rng)
    else:
        logits, pa = model.translate_forward(batch.src, batch.G, tgt_lang, rng)
        pb = None
    l_mt = label_smoothed_nll(logits, batch.Y, cfg.label_smoothing)
    neg_ab = batch.neg_ab if batch.neg_ab.size else None
    neg_ba = batch.neg_ba if batch.neg_ba.size else None
    return total_loss(l_mt, pa, pb, neg_ab, neg_ba, cfg)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: TLaser
    optimizer: AdamState
    config: TrainConfig
    vocab: Vocabulary
    step: int
    epoch: int


def save_checkpoint(path: str | Path, model: TLaser, optimizer: AdamState, config: TrainConfig,
                    vocab: Vocabulary, step: int, epoch: int) -> None:
    """Single little-endian file: magic, version, JSON header, raw arrays, 64-bit digest."""
    arrays: list[tuple[str, np.ndarray]] = [("param/" + k, p.data) for k, p in model.params.items()]
    for k in model.params:
        if k in optimizer.m:
            arrays.append(("adam_m/" + k, optimizer.m[k]))
            arrays.append(("adam_v/" + k, optimizer.v[k]))
    manifest, blobs, offset = [], [], 0
    for name, arr in arrays:
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        manifest.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    cfg = config.to_dict()
    cfg["model"] = model.config.to_dict()
    header = json.dumps({"config": cfg, "step": step, "epoch": epoch, "vocab": vocab.dumps(),
                         "tensors": manifest}, sort_keys=True).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(header)) + header + b"".join(blobs)
    digest = hashlib.blake2b(body, digest_size=8).digest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + digest)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 24 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, hlen = struct.unpack("<IQ", body[4:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[16:16 + hlen].decode("utf-8"))
    payload = body[16 + hlen:]
    tensors = {}
    for t in header["tensors"]:
        raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(t["dtype"])).reshape(t["shape"])
        tensors[t["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    config = TrainConfig.from_dict(header["config"])
    params = {k[6:]: ag.parameter(v, k[6:], dtype=v.dtype) for k, v in tensors.items() if k.startswith("param/")}
    opt = AdamState(
        m={k[7:]: v for k, v in tensors.items() if k.startswith("adam_m/")},
        v={k[7:]: v for k, v in tensors.items() if k.startswith("adam_v/")},
    )
    model = TLaser(config.model, params)
    return Checkpoint(model, opt, config, Vocabulary.loads(header["vocab"]), header["step"], header["epoch"])


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: TLaser
    vocab: Vocabulary
    records: list[dict]
    epoch_losses: list[float]
    checkpoint: Path


TIMING_FIELDS = ("wall_time", "tokens_per_sec")


def _default_pivots(langs: list[str]) -> tuple[str, str]:
    return langs[0], langs[1]


def train(cfg: TrainConfig, corpus: ParallelCorpus, vocab: Vocabulary, out_dir: str | Path,
          resume: str | Path | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on ``corpus`` and write checkpoints plus ``train_log.jsonl`` to ``out_dir``.

    A checkpoint is written before the first step (``epoch0``) and after
    every epoch.  With ``resume`` the run continues from that checkpoint and
    reproduces the uninterrupted trace.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    langs = corpus.languages
    if not vocab.languages:
        vocab = vocab.with_languages(langs)
    pivots = tuple(cfg.pivots) or _default_pivots(langs)
    directions = build_curriculum(langs, pivots, cfg.bilingual)
    mcfg = ModelConfig(**{**cfg.model.to_dict(), "vocab_size": len(vocab),
                          "n_langs": len(vocab.languages), "dropout_p": cfg.dropout_p})
    cfg = replace(cfg, model=mcfg)

    log_path = out / "train_log.jsonl"
    if resume is not None:
        ck = load_checkpoint(resume)
        model, opt, step, start_epoch = ck.model, ck.optimizer, ck.step, ck.epoch
        kept = []
        if log_path.exists():
            kept = [line for line in log_path.read_text().splitlines() if json.loads(line)["step"] <= step]
        log_path.write_text("".join(line + "\n" for line in kept))
    else:
        model = TLaser.init(mcfg, seed=cfg.seed)
        opt, step, start_epoch = AdamState(), 0, 0
        log_path.write_text("")
        save_checkpoint(out / "checkpoint_epoch0.tlck", model, opt, cfg, vocab, step, 0)
    last = out / f"checkpoint_epoch{start_epoch}.tlck"

    data = EncodedCorpus(corpus, vocab)
    records: list[dict] = []
    epoch_losses: list[float] = []
    n_neg = cfg.loss.n_neg if cfg.loss.lam > 0 else 0
    with log_path.open("a") as fh:
        for epoch in range(start_epoch, cfg.n_epochs):
            per_dir = [make_batches(data, d, cfg.max_tokens, [cfg.seed, epoch, k], n_neg)
                       for k, d in enumerate(directions)]
            losses = []
            for batch in interleave(per_dir):
                step += 1
                t0 = time.perf_counter()
                lr = lr_at(step, cfg.base_lr, cfg.warmup_steps)
                rng = np.random.default_rng([cfg.seed, step, 7]) if cfg.dropout_p > 0 else None
                tgt_lang = vocab.lang_id(batch.direction.tgt)
                with ag.Tape() as tape:
                    loss, parts = batch_loss(model, batch, cfg.loss, tgt_lang, rng)
                if not math.isfinite(parts.total):
                    raise NumericError(f"non-finite loss at step {step} ({batch.direction}); "
                                       f"last good checkpoint: {last}")
                grads = ag.backward(loss, tape)
                named = {name: grads[p] for name, p in model.params.items() if p in grads}
                if cfg.clip_norm:
                    named = _clip(named, cfg.clip_norm)
                adam_step(model.params, named, opt, step, lr, (cfg.adam_beta1, cfg.adam_beta2),
                          cfg.adam_eps, cfg.weight_decay)
                elapsed = time.perf_counter() - t0
                tokens = batch.n_tokens
                rec = {"step": step, "epoch": epoch + 1, "direction": str(batch.direction),
                       "loss": parts.total, "breakdown": parts.to_dict(), "lr": lr,
                       "rows": batch.size, "tokens": tokens, "wall_time": elapsed,
                       "tokens_per_sec": tokens / elapsed if elapsed > 0 else float("inf")}
                fh.write(json.dumps(rec) + "\n")
                records.append(rec)
                losses.append(parts.total)
                if on_step is not None:
                    on_step(rec)
            fh.flush()
            epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
            last = out / f"checkpoint_epoch{epoch + 1}.tlck"
            save_checkpoint(last, model, opt, cfg, vocab, step, epoch + 1)
            log.info("epoch %d: mean loss %.4f over %d steps", epoch + 1, epoch_losses[-1], len(losses))
    final = out / "checkpoint_last.tlck"
    final.write_bytes(last.read_bytes())
    return TrainResult(model, vocab, records, epoch_losses, final)


def read_log(path: str | Path, drop_timing: bool = False) -> list[dict]:
    recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
    if drop_timing:
        for r in recs:
            for k in TIMING_FIELDS:
                r.pop(k, None)
    return recs
