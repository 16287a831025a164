import struct

import numpy as np
import pytest

from ctxembed.checkpoint import (FORMAT_VERSION, CheckpointError, IncompatibleCheckpointError, IntegrityError,
                                 load_checkpoint, read_checkpoint, save_checkpoint)
from ctxembed.config import ModelConfig
from ctxembed.model import EmbeddingModel
from ctxembed.tensor import ShapeError
from ctxembed.tokenizer import Tokenizer

CFG = ModelConfig(vocab_size=260, d_model=16, n_layers=1, n_heads=2, d_enc=8, enc_layers=1, enc_heads=2,
                  ffn_mult=2, ctx_count=2, ctx_readout="cross_attention", encoder_mode="lora", lora_rank=2,
                  decoder_lora=True)


@pytest.fixture
def saved(tmp_path):
    model = EmbeddingModel(CFG)
    rng = np.random.default_rng(5)
    for p in model.parameters():
        p.data += rng.normal(size=p.shape).astype(p.data.dtype)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, Tokenizer())
    return model, path


def test_round_trip_bit_exact(saved, tmp_path):
    model, path = saved
    back = load_checkpoint(path)
    a, b = dict(model.named_parameters()), dict(back.named_parameters())
    assert a.keys() == b.keys()
    assert any("lora" in k for k in a) and any("bank" in k for k in a)
    assert all(a[k].data.tobytes() == b[k].data.tobytes() and a[k].dtype == b[k].dtype for k in a)
    assert [p.requires_grad for p in model.parameters()] == [p.requires_grad for p in back.parameters()]
    save_checkpoint(back, tmp_path / "again.ckpt", Tokenizer())
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_header_layout(saved):
    _, path = saved
    raw = path.read_bytes()
    assert raw[:8] == b"CTXCKPT\0"
    assert struct.unpack_from("<I", raw, 8)[0] == FORMAT_VERSION
    meta, arrays = read_checkpoint(path)
    assert meta["format_version"] == FORMAT_VERSION
    assert meta["tokenizer_hash"] == Tokenizer().fingerprint()
    assert ModelConfig.from_dict(meta["model_config"]) == CFG


def test_tampered_byte_fails_checksum(saved):
    _, path = saved
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match="checksum"):
        load_checkpoint(path)


def test_truncated_payload(saved):
    _, path = saved
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_version_mismatch(saved):
    _, path = saved
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 8, FORMAT_VERSION + 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"hello world, not a checkpoint at all")
    with pytest.raises(CheckpointError):
        read_checkpoint(p)


def test_mismatched_dims_name_the_tensor(saved):
    _, path = saved
    with pytest.raises(ShapeError, match=r"decoder\.net\.tok"):
        load_checkpoint(path, CFG.replace(vocab_size=300))
