import struct
import zipfile

import pytest
import torch

from afpnet.fpm import ModelConfig
from afpnet.lexer import Vocabulary
from afpnet.model import AFPNet, CheckpointError, load_checkpoint, save_checkpoint


def vocab_of(n):
    return Vocabulary(["<pad>", "<unk>"] + [f"t{i}" for i in range(n - 2)])


def test_round_trip_preserves_everything(tmp_path, small_config):
    model, vocab = AFPNet(small_config, 12, seed=4), vocab_of(12)
    save_checkpoint(tmp_path / "m.afp", model, vocab)
    loaded, v2 = load_checkpoint(tmp_path / "m.afp")
    assert v2 == vocab and loaded.config == small_config
    for (n1, a), (n2, b) in zip(model.canonical_tensors(), loaded.canonical_tensors()):
        assert n1 == n2 and torch.equal(a, b)
    ids = [2, 5, 7, 3, 11, 4]
    assert model.predict(ids)[0].probability == loaded.predict(ids)[0].probability


def test_save_is_byte_stable(tmp_path, tiny_config):
    model = AFPNet(tiny_config, 6, seed=1)
    save_checkpoint(tmp_path / "a.afp", model, vocab_of(6))
    save_checkpoint(tmp_path / "b.afp", model, vocab_of(6))
    assert (tmp_path / "a.afp").read_bytes() == (tmp_path / "b.afp").read_bytes()


def test_canonical_names(tiny_config):
    names = [n for n, _ in AFPNet(tiny_config, 6).canonical_tensors()]
    assert names[0] == "embed.table"
    assert "fpm.l1.j1.weight" in names and "rpam.block0.head1.v" in names
    assert names[-2:] == ["clf.weight", "clf.bias"]
    assert len(names) == len(set(names))


def test_entry_layout(tmp_path, tiny_config):
    model = AFPNet(tiny_config, 6)
    save_checkpoint(tmp_path / "m.afp", model, vocab_of(6))
    with zipfile.ZipFile(tmp_path / "m.afp") as zf:
        data = zf.read("tensors/fpm.l1.j0.weight")
        assert all(i.date_time == (1980, 1, 1, 0, 0, 0) for i in zf.infolist())
    ndim, h, k = struct.unpack_from("<3I", data)
    assert (ndim, h, k) == (2, 3, tiny_config.embed_dim)
    assert len(data) == 12 + 4 * h * k


def _rewrite(src, dst, drop=None, replace=None, add=None):
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for info in zin.infolist():
            if info.filename == drop:
                continue
            data = replace[1] if replace and info.filename == replace[0] else zin.read(info)
            zout.writestr(info, data)
        if add:
            zout.writestr(add[0], add[1])


@pytest.fixture
def saved(tmp_path, tiny_config):
    path = tmp_path / "m.afp"
    save_checkpoint(path, AFPNet(tiny_config, 6), vocab_of(6))
    return path


def test_missing_tensor(saved, tmp_path):
    _rewrite(saved, tmp_path / "x.afp", drop="tensors/clf.bias")
    with pytest.raises(CheckpointError, match="clf.bias"):
        load_checkpoint(tmp_path / "x.afp")


def test_shape_mismatch(saved, tmp_path):
    bad = struct.pack("<3I", 2, 2, 2) + b"\0" * 16
    _rewrite(saved, tmp_path / "x.afp", replace=("tensors/fpm.l1.j0.weight", bad))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "x.afp")


def test_stray_tensor(saved, tmp_path):
    _rewrite(saved, tmp_path / "x.afp", add=("tensors/extra", struct.pack("<2I", 1, 1) + b"\0" * 4))
    with pytest.raises(CheckpointError, match="unexpected"):
        load_checkpoint(tmp_path / "x.afp")


def test_not_an_archive(tmp_path):
    (tmp_path / "x.afp").write_bytes(b"hello")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.afp")


def test_vocab_size_must_match(tmp_path, tiny_config):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "m.afp", AFPNet(tiny_config, 6), vocab_of(7))


def test_config_round_trip():
    cfg = ModelConfig(heights=(3, 5), ffn_hidden=10)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"kernel": 3})
    with pytest.raises(ValueError):
        ModelConfig(top_p=4, heads=4)
