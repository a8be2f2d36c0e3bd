import json

import numpy as np
import pytest
import torch

from sketchssl.checkpoint import (
    BLOB,
    MANIFEST,
    ParameterStore,
    decode_rng_state,
    encode_rng_state,
    load_checkpoint,
    save_checkpoint,
)
from sketchssl.errors import CorruptCheckpoint, VersionMismatch


def sample_store():
    rng = np.random.default_rng(0)
    s = ParameterStore()
    s["a.weight"] = rng.normal(size=(3, 4))
    s["a.bias"] = rng.normal(size=4)
    s["scalar"] = np.float32(2.5).reshape(())
    return s


def test_round_trip_bitwise(tmp_path):
    s = sample_store()
    save_checkpoint(s, tmp_path / "ck", task="vectorization", epoch=3)
    back, manifest = load_checkpoint(tmp_path / "ck")
    assert list(back) == list(s)
    for k in s:
        assert back[k].tobytes() == s[k].tobytes() and back[k].shape == s[k].shape
    assert manifest["task"] == "vectorization" and manifest["epoch"] == 3


def test_blob_layout(tmp_path):
    s = sample_store()
    save_checkpoint(s, tmp_path / "ck")
    raw = (tmp_path / "ck" / BLOB).read_bytes()
    manifest = json.loads((tmp_path / "ck" / MANIFEST).read_text())
    e = manifest["parameters"]["a.bias"]
    assert e["offset"] == 48 and e["length"] == 16
    assert np.array_equal(np.frombuffer(raw[48:64], "<f4"), s["a.bias"])


def test_module_round_trip(tmp_path):
    torch.manual_seed(0)
    m = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.BatchNorm1d(4))
    opt = torch.optim.Adam(m.parameters())
    m(torch.randn(5, 3)).sum().backward()
    opt.step()
    save_checkpoint(ParameterStore.from_module(m, opt), tmp_path / "ck")
    store, _ = load_checkpoint(tmp_path / "ck")
    m2 = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.BatchNorm1d(4))
    opt2 = torch.optim.Adam(m2.parameters())
    store.load_into(m2, opt2)
    for a, b in zip(m.state_dict().values(), m2.state_dict().values()):
        assert torch.equal(a.float(), b.float())
    for p, q in zip(m.parameters(), m2.parameters()):
        assert torch.equal(opt.state[p]["exp_avg_sq"], opt2.state[q]["exp_avg_sq"])


def test_truncated_blob(tmp_path):
    save_checkpoint(sample_store(), tmp_path / "ck")
    blob = tmp_path / "ck" / BLOB
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "ck")


def test_flipped_byte(tmp_path):
    save_checkpoint(sample_store(), tmp_path / "ck")
    blob = tmp_path / "ck" / BLOB
    raw = bytearray(blob.read_bytes())
    raw[5] ^= 0xFF
    blob.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpoint, match="hash"):
        load_checkpoint(tmp_path / "ck")


def test_missing_files(tmp_path):
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "nothing")


def test_version(tmp_path):
    save_checkpoint(sample_store(), tmp_path / "ck")
    path = tmp_path / "ck" / MANIFEST
    m = json.loads(path.read_text())
    m["format_version"] = 99
    path.write_text(json.dumps(m))
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "ck")


def test_no_temp_files_left(tmp_path):
    save_checkpoint(sample_store(), tmp_path / "ck")
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == sorted([BLOB, MANIFEST])


def test_rng_state_round_trip():
    state = torch.get_rng_state()
    assert torch.equal(decode_rng_state(encode_rng_state(state)), state)


def test_fixed_shape():
    s = sample_store()
    with pytest.raises(ValueError):
        s["a.bias"] = np.zeros(5)
