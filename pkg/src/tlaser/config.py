"""Run configuration: one JSON document, validated against a strict schema.

Sections mirror the module config types::

    model      -> ModelConfig
    train      -> TrainConfig scalars (seed required)
    loss       -> LossConfig ("lambda" in JSON)
    data       -> pivots, bilingual, languages
    eval       -> ClassifierConfig plus max_doc_tokens (seed required)
    synth      -> SynthSpec (seed required)
    grad_check -> toy objective size and tolerance

Every section is optional; a subcommand asks for the sections it needs.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path
from typing import Any

import jsonschema

from .evaluation import ClassifierConfig
from .losses import LossConfig
from .model import ModelConfig
from .synth import SynthSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_NUM = {"type": "number"}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_BOOL = {"type": "boolean"}


def _default(cls, name):
    f = next(f for f in fields(cls) if f.name == name)
    if f.default is not MISSING:
        return f.default
    return f.default_factory()


def _section(cls, props: dict[str, dict], required=(), rename=None) -> dict:
    rename = rename or {}
    out = {}
    for name, schema in props.items():
        attr = rename.get(name, name)
        s = dict(schema)
        d = _default(cls, attr)
        if d is not None or "null" in str(s.get("type")):
            s["default"] = list(d) if isinstance(d, tuple) else d
        out[name] = s
    return {"type": "object", "additionalProperties": False, "properties": out,
            "required": list(required)}


SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tlaser run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": _section(ModelConfig, {
            "d_model": _POS_INT, "n_heads": _POS_INT, "d_fc": _POS_INT,
            "n_enc_layers": _POS_INT, "n_dec_layers": _POS_INT,
            "vocab_size": _POS_INT, "n_langs": _POS_INT, "d_lang": _POS_INT,
            "max_positions": _POS_INT, "dropout_p": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "lazy_final_layer": _BOOL, "ln_eps": _POS_NUM,
        }),
        "train": _section(TrainConfig, {
            "base_lr": _POS_NUM, "adam_beta1": _PROB, "adam_beta2": _PROB, "adam_eps": _POS_NUM,
            "warmup_steps": _NONNEG_INT, "weight_decay": {"type": "number", "minimum": 0},
            "dropout_p": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "max_tokens": _POS_INT, "n_epochs": _NONNEG_INT, "seed": _NONNEG_INT,
            "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
        }, required=["seed"]),
        "loss": _section(LossConfig, {
            "alpha": _POS_NUM, "beta": _PROB, "lambda": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            "n_neg": _NONNEG_INT, "epsilon": _POS_NUM,
            "label_smoothing": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        }, rename={"lambda": "lam"}),
        "data": {
            "type": "object", "additionalProperties": False, "required": [],
            "properties": {
                "pivots": {"type": "array", "items": {"type": "string"}, "maxItems": 2,
                           "uniqueItems": True, "default": []},
                "bilingual": {"type": "boolean", "default": False},
                "languages": {"type": ["array", "null"], "items": {"type": "string"},
                              "minItems": 2, "uniqueItems": True, "default": None},
            },
        },
        "eval": {
            **_section(ClassifierConfig, {
                "hidden": _POS_INT, "lr": _POS_NUM, "max_epochs": _POS_INT,
                "batch_size": _POS_INT, "weight_decay": {"type": "number", "minimum": 0},
                "seed": _NONNEG_INT,
            }, required=["seed"]),
        },
        "synth": _section(SynthSpec, {
            "n_languages": {"type": "integer", "minimum": 2}, "base_vocab_size": _POS_INT,
            "n_classes": {"type": "integer", "minimum": 2},
            "sentences_per_split": {
                "type": "object", "additionalProperties": False,
                "properties": {k: _NONNEG_INT for k in ("train", "dev", "test")},
            },
            "doc_length": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2},
            "class_topic_skew": _PROB, "topic_concentration": _POS_NUM,
            "permute_window": _NONNEG_INT, "seed": _NONNEG_INT,
        }, required=["seed"]),
        "grad_check": {
            "type": "object", "additionalProperties": False, "required": [],
            "properties": {
                "n_pairs": {"type": "integer", "minimum": 2, "default": 2},
                "rel_tol": {**_POS_NUM, "default": 1e-3},
                "step": {**_POS_NUM, "default": 1e-5},
                "seed": {**_NONNEG_INT, "default": 0},
            },
        },
    },
}
SCHEMA["properties"]["eval"]["properties"]["max_doc_tokens"] = {**_POS_INT, "default": 750}


@dataclass
class DataConfig:
    pivots: tuple[str, ...] = ()
    bilingual: bool = False
    languages: list[str] | None = None


@dataclass
class GradCheckConfig:
    n_pairs: int = 2
    rel_tol: float = 1e-3
    step: float = 1e-5
    seed: int = 0


@dataclass
class RunConfig:
    raw: dict = field(default_factory=dict)

    def has(self, section: str) -> bool:
        return section in self.raw

    def require(self, *sections: str) -> None:
        missing = [s for s in sections if s not in self.raw]
        if missing:
            raise ConfigError(f"config is missing required section(s): {', '.join(missing)}")

    def _get(self, section: str) -> dict:
        return _with_defaults(section, self.raw.get(section, {}))

    def model(self) -> ModelConfig:
        return ModelConfig(**self._get("model"))

    def loss(self) -> LossConfig:
        d = self._get("loss")
        d["lam"] = d.pop("lambda")
        return LossConfig(**d)

    def data(self) -> DataConfig:
        d = self._get("data")
        return DataConfig(tuple(d["pivots"]), d["bilingual"], d["languages"])

    def train(self) -> TrainConfig:
        d = self._get("train")
        data = self.data()
        return TrainConfig(**d, pivots=data.pivots, bilingual=data.bilingual,
                           loss=self.loss(), model=self.model())

    def classifier(self) -> ClassifierConfig:
        d = self._get("eval")
        d.pop("max_doc_tokens")
        return ClassifierConfig(**d)

    @property
    def max_doc_tokens(self) -> int:
        return self._get("eval")["max_doc_tokens"]

    def synth(self) -> SynthSpec:
        d = self._get("synth")
        d["doc_length"] = tuple(d["doc_length"])
        return SynthSpec(**d)

    def grad_check(self) -> GradCheckConfig:
        return GradCheckConfig(**self._get("grad_check"))


def _with_defaults(section: str, given: dict) -> dict:
    props = SCHEMA["properties"][section]["properties"]
    out = {k: json.loads(json.dumps(p["default"])) for k, p in props.items() if "default" in p}
    out.update(json.loads(json.dumps(given)))
    return out


def _describe(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        allowed = ", ".join(sorted(err.schema.get("properties", {})))
        where = "" if path == "<root>" else f" in {path}"
        return f"unknown key(s) {', '.join(map(repr, extra))}{where}; expected one of: {allowed}"
    if err.validator == "required":
        return f"{path}: {err.message}"
    return f"{path}: {err.message} (expected {err.validator} {err.validator_value!r})"


def validate(doc: Any) -> RunConfig:
    """Check ``doc`` against ``SCHEMA`` and the config types' own invariants."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(_describe(e) for e in errors))
    cfg = RunConfig(doc)
    builders = {"model": cfg.model, "loss": cfg.loss, "eval": cfg.classifier,
                "synth": cfg.synth, "grad_check": cfg.grad_check}
    for section, build in builders.items():
        if section in doc:
            try:
                build()
            except ValueError as exc:
                raise ConfigError(f"{section}: {exc}") from None
    return cfg


def load(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        return validate(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
