import numpy as np
import pytest

from skipflow import checkpoint
from skipflow.diagnostics import random_instance
from skipflow.errors import DataValidationError, DimensionError
from skipflow.model import ModelConfig, SkipFlowModel


@pytest.mark.parametrize("variant", ["tensor", "bilinear", "lstm-mean", "lstm-last"])
def test_bitwise_round_trip(tmp_path, variant):
    cfg = ModelConfig(vocab_size=15, max_len=10, embed_dim=4, hidden_dim=5, delta=3, slices=2, dense_dim=6, variant=variant)
    model, ids, lengths, _ = random_instance(cfg, seed=1)
    checkpoint.save(tmp_path / "m.ckpt", model, {"prompt": 9, "vocab": ["a", "b"]})
    back, meta = checkpoint.load(tmp_path / "m.ckpt")
    assert meta == {"prompt": 9, "vocab": ["a", "b"]}
    assert back.config == cfg
    for a, b in zip(model.blocks(), back.blocks()):
        assert a.name == b.name and a.values.tobytes() == b.values.tobytes()
    assert model.forward(ids, lengths)[0].tobytes() == back.forward(ids, lengths)[0].tobytes()


def test_deterministic_bytes():
    cfg = ModelConfig(vocab_size=8, max_len=6)
    a = checkpoint.dumps(SkipFlowModel(cfg, seed=2).state_dict(), cfg.to_dict(), {"x": 1})
    b = checkpoint.dumps(SkipFlowModel(cfg, seed=2).state_dict(), cfg.to_dict(), {"x": 1})
    assert a == b
    assert a.startswith(b"SKIPFLOW-CKPT 1\n")


def test_special_values_survive():
    blocks = {"w": np.array([np.inf, -0.0, 5e-324, np.nan])}
    back, _, _ = checkpoint.loads(checkpoint.dumps(blocks, {}))
    assert back["w"].tobytes() == blocks["w"].tobytes()


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "nope.ckpt")


def test_bad_magic_and_truncation():
    with pytest.raises(DataValidationError):
        checkpoint.loads(b"hello world\n3\n{}\n")
    data = checkpoint.dumps({"w": np.ones(4)}, {})
    with pytest.raises(DataValidationError, match="truncated"):
        checkpoint.loads(data[:-8])


def test_shape_mismatch_rejected():
    model = SkipFlowModel(ModelConfig(vocab_size=8, max_len=6, hidden_dim=4))
    state = model.state_dict()
    state["ntn.u"] = np.zeros(7)
    with pytest.raises(DimensionError, match="ntn.u"):
        model.load_state_dict(state)
