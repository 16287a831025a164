import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxembed.config import ModelConfig, TrainConfig
from ctxembed.data import TrainingExample
from ctxembed.model import EmbeddingModel
from ctxembed.tensor import Tensor
from ctxembed.tokenizer import Tokenizer
from ctxembed import training as TR

from gradcheck import check
from oracles import similarity_matrix_oracle

F64 = np.float64
TOK = Tokenizer()


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=F64), requires_grad=grad, dtype=F64)


# --------------------------------------------------------------------- info_nce
def test_info_nce_closed_forms():
    q = t([1.0, 0.0])
    assert TR.info_nce(q, q, []).item() == 0.0
    same = [t([1.0, 0.0])] * 3
    assert TR.info_nce(q, q, same).item() == pytest.approx(math.log(4), rel=1e-12)
    loss = TR.info_nce(q, t([1.0, 0.0]), [t([0.0, 1.0])], tau=0.05).item()
    assert loss == pytest.approx(math.log1p(math.exp(-20)), rel=1e-9)


def test_info_nce_dimension_mismatch():
    with pytest.raises(ValueError):
        TR.info_nce(t([1.0, 0.0]), t([1.0, 0.0, 0.0]), [])


def test_info_nce_order_invariant(rng):
    q, p = unit_rows(rng, 2, 5)
    negs = unit_rows(rng, 4, 5)
    a = TR.info_nce(t(q), t(p), [t(n) for n in negs]).item()
    b = TR.info_nce(t(q), t(p), [t(n) for n in negs[::-1]]).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_info_nce_positive_and_decreasing_in_margin():
    losses = []
    for theta in np.linspace(0.0, np.pi, 25):
        q = t([1.0, 0.0])
        neg = t([np.cos(theta), np.sin(theta)])
        value = TR.info_nce(q, q, [neg]).item()
        # exp(-(1 - cos) / tau) drops below f64 epsilon next to 1 once cos < -0.83
        assert value > 0 if np.cos(theta) > -0.8 else value >= 0
        losses.append(value)
    assert all(a >= b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-15


def test_info_nce_gradient(rng):
    q, p = [Tensor(v, requires_grad=True, dtype=F64) for v in unit_rows(rng, 2, 4)]
    n = Tensor(unit_rows(rng, 1, 4)[0], requires_grad=True, dtype=F64)
    assert check(lambda q, p, n: TR.info_nce(q, p, [n]), [q, p, n], rng) < 1e-6


# -------------------------------------------------------------------- batch loss
def test_batch_of_one_is_zero():
    v = t([[0.6, 0.8]])
    assert TR.batch_loss(v, v).item() == 0.0


def test_batch_orthogonal_positives():
    e = t(np.eye(2))
    assert TR.batch_loss(e, e, tau=0.05).item() == pytest.approx(math.log1p(math.exp(-20)), rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 5), st.booleans(), st.integers(0, 2 ** 31))
def test_batch_loss_matches_similarity_matrix(B, n_neg, in_batch, seed):
    rng = np.random.default_rng(seed)
    q, p, negs = unit_rows(rng, B, 8), unit_rows(rng, B, 8), unit_rows(rng, n_neg, 8)
    owner = rng.integers(0, B, size=n_neg)
    got = TR.batch_loss(t(q), t(p), t(negs) if n_neg else None, owner, 0.05, in_batch).item()
    assert got == pytest.approx(similarity_matrix_oracle(q, p, negs, owner, 0.05, in_batch), abs=1e-9)


# ---------------------------------------------------------------------- schedule
def test_lr_schedule_values():
    cfg = TrainConfig(train_steps=500)
    assert cfg.max_steps == 1000
    assert TR.lr_at(0, cfg) == 0.0
    assert TR.lr_at(150, cfg) == pytest.approx(0.5e-4)
    assert TR.lr_at(300, cfg) == pytest.approx(1e-4)
    assert TR.lr_at(1000, cfg) == 0.0 and TR.lr_at(5000, cfg) == 0.0
    long = TrainConfig(train_steps=2000)
    assert long.max_steps == 4000
    assert TR.lr_at(2150, long) == pytest.approx(1e-4 * (4000 - 2150) / (4000 - 300))
    assert TR.lr_at(2150, long) == pytest.approx(0.5e-4)


def test_lr_schedule_is_lipschitz():
    cfg = TrainConfig(train_steps=700, warmup_steps=37)
    bound = cfg.peak_lr / min(cfg.warmup_steps, cfg.max_steps - cfg.warmup_steps)
    values = [TR.lr_at(s, cfg) for s in range(cfg.max_steps + 5)]
    assert max(abs(a - b) for a, b in zip(values, values[1:])) <= bound * (1 + 1e-12)


# -------------------------------------------------------------------- optimizer
def test_adamw_first_step_closed_form():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, dtype=F64)
    p.grad = np.array([0.3, -0.1, 0.0])
    opt = TR.AdamW([p], eps=1e-8, weight_decay=0.1)
    opt.step(0.01)
    g = np.array([0.3, -0.1, 0.0])
    want = np.array([1.0, -2.0, 0.5]) * (1 - 0.01 * 0.1) - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, want, atol=1e-15)


# ---------------------------------------------------------------------- sampler
def test_sampler_homogeneous_and_deterministic():
    a = [TrainingExample(f"qa{i}", f"pa{i}", task="a") for i in range(7)]
    b = [TrainingExample(f"qb{i}", f"pb{i}", task="b") for i in range(30)]
    s1 = TR.BatchSampler({"a": a, "b": b}, 4, seed=3)
    s2 = TR.BatchSampler({"a": a, "b": b}, 4, seed=3)
    sources = []
    for _ in range(1000):
        x, y = s1.sample_batch(), s2.sample_batch()
        assert [e.query for e in x.examples] == [e.query for e in y.examples]
        assert len({e.task for e in x.examples}) == 1 and x.examples[0].task == x.source
        sources.append(x.source)
    share = sources.count("b") / len(sources)
    assert 0.74 < share < 0.88  # 30 / 37 = 0.81


def test_sampler_draws_without_replacement_then_reshuffles():
    data = [TrainingExample(f"q{i}", f"p{i}") for i in range(5)]
    s = TR.BatchSampler([data], 5, seed=0)
    first = s.sample_batch()
    assert sorted(first.indices) == list(range(5))
    big = s.sample_batch(12)
    assert len(big) == 12


def test_sampler_needs_data():
    with pytest.raises(ValueError):
        TR.BatchSampler({"a": []}, 2)


# ------------------------------------------------------------------- train step
def tiny_model(**kw):
    base = dict(vocab_size=TOK.vocab_size, d_model=16, n_layers=1, n_heads=2, d_enc=8, enc_layers=1,
                enc_heads=2, ffn_mult=2, max_positions=64, enc_max_positions=64, lora_rank=2, dtype="f64")
    return EmbeddingModel(ModelConfig(**{**base, **kw}))


def examples(n, negs=0, seed=0):
    rng = np.random.default_rng(seed)
    words = ["red", "blue", "cat", "dog", "sun", "moon", "tree", "car", "road", "sea"]
    out = []
    for i in range(n):
        w = list(rng.choice(words, size=3))
        out.append(TrainingExample(" ".join(w), " ".join(w[::-1]),
                                   [" ".join(rng.choice(words, size=3)) for _ in range(negs)], "t"))
    return out


def snapshot(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def test_grad_accum_matches_monolithic_batch():
    batch = examples(8, negs=1)
    grads = []
    for accum in (1, 4):
        model = tiny_model()
        cfg = TrainConfig(grad_accum=accum, use_in_batch_negatives=False, warmup_steps=1, train_steps=10,
                          instructions={"t": "find it"}, max_hard_negatives=1)
        opt = TR.make_optimizer(model, cfg)
        TR.train_step(model, batch, opt, cfg, TOK, 0)
        grads.append({id_: p.grad.copy() for id_, p in enumerate(opt.params)})
        grads.append(snapshot(model))
    g1, p1, g4, p4 = grads
    assert max(np.abs(g1[k] - g4[k]).max() for k in g1) < 1e-6
    assert max(np.abs(p1[k] - p4[k]).max() for k in p1) < 1e-6


def test_zero_loss_batch_leaves_parameters_unchanged():
    model = tiny_model()
    before = snapshot(model)
    cfg = TrainConfig(grad_accum=1, warmup_steps=1, train_steps=10)
    opt = TR.make_optimizer(model, cfg)
    m = TR.train_step(model, examples(1), opt, cfg, TOK, 0)
    assert m["loss"] == 0.0 and m["grad_norm"] == 0.0
    after = snapshot(model)
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_frozen_encoder_checksum_constant():
    model = tiny_model(encoder_mode="frozen")
    crc = lambda: zlib.crc32(b"".join(p.data.tobytes() for p in model.encoder.parameters()))
    start = crc()
    dec_before = model.decoder.net.tok.data.copy()
    cfg = TrainConfig(grad_accum=1, batch_size=4, warmup_steps=2, train_steps=10, peak_lr=1e-2,
                      instructions={"t": "find it"})
    TR.train(model, {"t": examples(20)}, TOK, cfg, log_every=0)
    assert crc() == start
    assert not np.array_equal(dec_before, model.decoder.net.tok.data)


def test_non_finite_loss_raises_with_batch_ids():
    model = tiny_model()
    model.decoder.net.ln_f.gain.data[:] = np.nan
    cfg = TrainConfig(grad_accum=1, warmup_steps=1, train_steps=10)
    opt = TR.make_optimizer(model, cfg)
    batch = TR.Batch(examples(2), "t", [4, 9])
    with pytest.raises((TR.NumericalError, FloatingPointError)):
        TR.train_step(model, batch, opt, cfg, TOK, 0)


def test_nan_loss_reports_batch_ids(monkeypatch):
    model = tiny_model()
    cfg = TrainConfig(grad_accum=1, warmup_steps=1, train_steps=10)
    opt = TR.make_optimizer(model, cfg)
    monkeypatch.setattr(TR, "micro_batch_loss", lambda *a, **k: Tensor(np.array(np.nan)))
    with pytest.raises(TR.NumericalError, match=r"\[4, 9\]"):
        TR.train_step(model, TR.Batch(examples(2), "t", [4, 9]), opt, cfg, TOK, 7)


def test_training_lowers_loss_and_is_deterministic(tmp_path):
    hist = []
    for run in range(2):
        model = tiny_model()
        cfg = TrainConfig(grad_accum=1, batch_size=8, warmup_steps=5, train_steps=40, peak_lr=3e-3,
                          instructions={"t": "find it"})
        h = TR.train(model, {"t": examples(64)}, TOK, cfg, metrics_path=tmp_path / f"m{run}.jsonl", log_every=0)
        hist.append(h)
    assert (tmp_path / "m0.jsonl").read_bytes() == (tmp_path / "m1.jsonl").read_bytes()
    losses = [m["loss"] for m in hist[0]]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])
    assert hist[0][0]["lr"] == pytest.approx(TR.lr_at(1, cfg))
