import numpy as np
import pytest

from jointcls.checkpoint import (
    list_checkpoints,
    load_checkpoint,
    params_digest,
    read_checkpoint,
    save_checkpoint,
    save_rotating,
)
from jointcls.errors import ContractError
from jointcls.training.lora import LoraConfig, apply_lora

from toy import LABELS, TEXTS, make_model


@pytest.mark.parametrize("variant", ["uni", "bi", "fused_bi", "enc_dec"])
def test_round_trip_is_bit_exact(tmp_path, variant):
    m = make_model(variant, scramble=1)
    path = save_checkpoint(tmp_path / "m.npz", m, {"note": "x"})
    back = load_checkpoint(path)
    assert back.config == m.config and back.vocab.itos == m.vocab.itos
    assert params_digest(back.params) == params_digest(m.params)
    assert np.array_equal(back.logits(TEXTS, LABELS).data, m.logits(TEXTS, LABELS).data)
    assert read_checkpoint(path)[0]["extra"] == {"note": "x"}


def test_lora_state_survives(tmp_path):
    m = make_model()
    m.params = apply_lora(m.params, LoraConfig(rank=2, alpha=4))
    back = load_checkpoint(save_checkpoint(tmp_path / "m.npz", m))
    assert back.params.lora == m.params.lora
    assert {k for k, v in back.params.items() if v.requires_grad} == \
        {k for k, v in m.params.items() if v.requires_grad}


def test_digest_detects_change():
    m = make_model()
    d = params_digest(m.params)
    m.params["reweight.W1"].data[0, 0] += 1e-15 if m.params["reweight.W1"].data[0, 0] else 1e-300
    assert params_digest(m.params) != d


def test_rotation_keeps_newest(tmp_path):
    m = make_model()
    for step in range(1, 8):
        save_rotating(tmp_path, step, m, keep=3)
    assert [s for s, _ in list_checkpoints(tmp_path)] == [5, 6, 7]
    assert not list(tmp_path.glob("*.tmp"))


def test_unreadable_checkpoint(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(ContractError):
        load_checkpoint(bad)
    np.savez(tmp_path / "other.npz", meta=np.array('{"format": "else"}'))
    with pytest.raises(ContractError):
        load_checkpoint(tmp_path / "other.npz")
