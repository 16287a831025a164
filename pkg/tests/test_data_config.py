import json

import pytest

from ctxembed.config import SCHEMA_VERSION, ConfigError, ModelConfig, TrainConfig
from ctxembed.data import DataFormatError, TrainingExample, load_training_jsonl, save_training_jsonl


def write(tmp_path, lines):
    p = tmp_path / "d.jsonl"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_three_lines_in_order_with_duplicates(tmp_path):
    line = json.dumps({"query": "q", "positive": "p", "negatives": [], "task": "nq"})
    other = json.dumps({"query": "q2", "positive": "p2", "negatives": ["n1", "n2"]})
    ex = load_training_jsonl(write(tmp_path, [line, other, line]))
    assert [e.query for e in ex] == ["q", "q2", "q"]
    assert ex[0].hard_negatives == [] and ex[1].hard_negatives == ["n1", "n2"]
    assert ex[1].task == "default"


def test_malformed_line_reports_line_number(tmp_path):
    good = json.dumps({"query": "q", "positive": "p"})
    with pytest.raises(DataFormatError, match=":2:"):
        load_training_jsonl(write(tmp_path, [good, "{not json", good]))
    with pytest.raises(DataFormatError, match=":1:"):
        load_training_jsonl(write(tmp_path, [json.dumps({"query": "q"})]))
    with pytest.raises(DataFormatError):
        load_training_jsonl(write(tmp_path, [json.dumps({"query": "", "positive": "p"})]))


def test_save_load_round_trip(tmp_path):
    ex = [TrainingExample("a", "b", ["c"], "t"), TrainingExample("d", "e")]
    save_training_jsonl(tmp_path / "x.jsonl", ex)
    assert load_training_jsonl(tmp_path / "x.jsonl") == ex


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = ModelConfig(d_model=32, n_heads=4)
    cfg.save(tmp_path / "m.json")
    assert ModelConfig.load(tmp_path / "m.json") == cfg
    assert json.loads((tmp_path / "m.json").read_text())["schema_version"] == SCHEMA_VERSION
    with pytest.raises(ConfigError, match="unknown keys"):
        ModelConfig.from_dict({"d_modle": 3})
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"schema_version": SCHEMA_VERSION + 1})


@pytest.mark.parametrize("bad", [
    {"pooling": "max"}, {"ctx_count": 3}, {"ctx_count": 2}, {"mask": "sparse"},
    {"use_ctx": False, "pooling": "concat_ctx_eos"}, {"d_model": 30, "n_heads": 4}, {"lora_targets": ["ffn"]},
])
def test_model_config_validation(bad):
    with pytest.raises(ConfigError):
        ModelConfig(**bad)


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.tau, cfg.peak_lr, cfg.warmup_steps, cfg.batch_size, cfg.grad_accum) == (0.05, 1e-4, 300, 32, 2)
    assert cfg.max_steps == 2 * cfg.train_steps
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"tau": 0}, {"warmup_steps": 2000}, {"train_steps": 10, "max_steps": 5, "warmup_steps": 1}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_embedding_dim():
    assert ModelConfig(d_model=128, pooling="concat_ctx_eos").embedding_dim == 256
    assert ModelConfig(d_model=128, pooling="bi_eos").embedding_dim == 256
    assert ModelConfig(d_model=128, pooling="mean").embedding_dim == 128
