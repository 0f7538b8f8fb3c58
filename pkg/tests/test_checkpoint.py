import json

import numpy as np
import pytest

from rkbinn.baselines import AnalogConfig, DictionarySpec, DirectMLP, SparseModel, init_mlp, make_mlp_sl4
from rkbinn.bilinear import make_binn
from rkbinn.checkpoint import (CheckpointInvariantError, CheckpointVersionError, MalformedCheckpointError,
                               dumps, load_checkpoint, save_checkpoint)
from rkbinn.latent import make_latent_model
from rkbinn.numerics import make_rng


def models():
    rng = make_rng(0, "ckpt")
    norm = (rng.standard_normal(3), rng.uniform(0.5, 2, 3))
    binn = make_binn(3, 4, 0.01, rng, norm=norm, trainable_rk=True)
    for p in binn.params().values():
        p += rng.standard_normal(p.shape) / 3
    xi = np.zeros((10, 3))
    xi[1, 0], xi[2, 0] = -10.0, 10.0
    return {
        "binn4": binn,
        "binn1": make_binn(3, 1, 0.05, rng),
        "mlp": DirectMLP(init_mlp([3, 6, 6, 3], rng), norm),
        "mlp_sl4": make_mlp_sl4(init_mlp([3, 6, 3], rng, "relu"), 0.01),
        "sr": SparseModel(xi, DictionarySpec(), 0.05, 0.01),
        "latent": make_latent_model(5, 3, 4, 0.01, rng, norm=(np.zeros(5), np.ones(5) * 2)),
        "af": AnalogConfig(7, None, 1e-6),
    }


@pytest.mark.parametrize("name", list(models()))
def test_round_trip_is_bit_exact(tmp_path, name):
    model = models()[name]
    p = tmp_path / "m.json"
    save_checkpoint(model, p)
    loaded = load_checkpoint(p)
    assert dumps(loaded) == p.read_text()
    save_checkpoint(loaded, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == p.read_bytes()
    if hasattr(model, "params"):
        for k, v in model.params().items():
            assert np.array_equal(loaded.params()[k], v)
    x = np.random.default_rng(2).standard_normal((4, getattr(model, "dim", 3)))
    if hasattr(model, "predict"):
        assert np.array_equal(loaded.predict(x), model.predict(x))


def test_sparse_checkpoint_embeds_column_order(tmp_path):
    save_checkpoint(models()["sr"], tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["dictionary"]["columns"] == ["1", "x0", "x1", "x2", "x0*x0", "x0*x1", "x0*x2",
                                           "x1*x1", "x1*x2", "x2*x2"]


def test_truncated_file_is_malformed(tmp_path):
    p = tmp_path / "m.json"
    save_checkpoint(models()["binn4"], p)
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(MalformedCheckpointError):
        load_checkpoint(p)


def _edit(tmp_path, mutate):
    p = tmp_path / "m.json"
    save_checkpoint(models()["binn4"], p)
    doc = json.loads(p.read_text())
    mutate(doc)
    p.write_text(json.dumps(doc))
    return p


def test_invalid_block_count(tmp_path):
    p = _edit(tmp_path, lambda d: d.update(n_blocks=3))
    with pytest.raises(CheckpointInvariantError, match="n_blocks"):
        load_checkpoint(p)


def test_version_mismatch(tmp_path):
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(_edit(tmp_path, lambda d: d.update(version=99)))


def test_dimension_inconsistency(tmp_path):
    def shrink(d):
        d["block"]["params"]["W1"] = d["block"]["params"]["W1"][:2]
    with pytest.raises(CheckpointInvariantError, match="W1"):
        load_checkpoint(_edit(tmp_path, shrink))


def test_missing_field(tmp_path):
    with pytest.raises(MalformedCheckpointError):
        load_checkpoint(_edit(tmp_path, lambda d: d.pop("dt")))
