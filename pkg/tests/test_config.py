import json

import jsonschema
import pytest

from tlaser.config import SCHEMA, ConfigError, load, validate
from tlaser.losses import LossConfig
from tlaser.model import ModelConfig
from tlaser.synth import SynthSpec
from tlaser.train import TrainConfig


def test_schema_is_valid_json_schema():
    jsonschema.Draft202012Validator.check_schema(SCHEMA)


def test_schema_defaults_match_types():
    props = SCHEMA["properties"]
    assert props["train"]["properties"]["base_lr"]["default"] == TrainConfig().base_lr == 0.0005
    assert props["train"]["properties"]["dropout_p"]["default"] == 0.3
    assert props["loss"]["properties"]["alpha"]["default"] == LossConfig().alpha
    assert props["loss"]["properties"]["beta"]["default"] == 0.25
    assert props["model"]["properties"]["d_model"]["default"] == ModelConfig().d_model
    assert props["eval"]["properties"]["max_doc_tokens"]["default"] == 750
    assert props["synth"]["properties"]["doc_length"]["default"] == list(SynthSpec().doc_length)


def test_empty_document_gives_defaults():
    cfg = validate({})
    assert cfg.loss() == LossConfig()
    assert cfg.grad_check().rel_tol == 1e-3


def test_sections_build_config_types():
    cfg = validate({
        "model": {"d_model": 64, "n_heads": 4, "d_lang": 8},
        "train": {"seed": 5, "n_epochs": 2, "base_lr": 0.001},
        "loss": {"beta": 0.0, "lambda": 0.0},
        "data": {"pivots": ["L0", "L1"], "bilingual": True},
        "eval": {"seed": 1, "hidden": 16, "max_doc_tokens": 100},
        "synth": {"seed": 2, "n_languages": 2, "doc_length": [3, 4]},
    })
    t = cfg.train()
    assert (t.seed, t.n_epochs, t.base_lr, t.pivots, t.bilingual) == (5, 2, 0.001, ("L0", "L1"), True)
    assert t.model.d_model == 64 and t.loss.lam == 0.0 and not t.loss.constrained
    assert cfg.classifier().hidden == 16 and cfg.max_doc_tokens == 100
    assert cfg.synth().doc_length == (3, 4) and cfg.synth().languages == ["L0", "L1"]


def test_lambda_defaults_to_half_beta():
    assert validate({"loss": {"beta": 0.5}}).loss().lam == 0.25


@pytest.mark.parametrize("doc,needle", [
    ({"modle": {}}, "unknown key(s) 'modle'"),
    ({"model": {"d_modle": 3}}, "unknown key(s) 'd_modle' in model"),
    ({"model": {"d_model": "x"}}, "model.d_model"),
    ({"loss": {"beta": 2}}, "loss.beta"),
    ({"train": {"n_epochs": 1}}, "'seed' is a required property"),
    ({"synth": {}}, "seed"),
    ({"eval": {}}, "seed"),
    ({"model": {"d_model": 10, "n_heads": 3}}, "model:"),
    ({"synth": {"seed": 0, "base_vocab_size": 20}}, "synth:"),
])
def test_errors_name_key_and_expectation(doc, needle):
    with pytest.raises(ConfigError) as info:
        validate(doc)
    assert needle in str(info.value)


def test_type_error_states_expectation():
    with pytest.raises(ConfigError, match="expected type 'integer'"):
        validate({"model": {"d_model": 1.5}})


def test_load_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON at line 1"):
        load(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.json")
    (tmp_path / "ok.json").write_text(json.dumps({"train": {"seed": 1}}))
    assert load(tmp_path / "ok.json").train().seed == 1


def test_require():
    cfg = validate({"train": {"seed": 0}})
    cfg.require("train")
    with pytest.raises(ConfigError, match="synth"):
        cfg.require("train", "synth")
