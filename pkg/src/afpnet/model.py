"""Full detector (feature perception -> relationship attention -> sigmoid) and checkpoint I/O.

A checkpoint is a zip archive holding ``config.json``, ``vocab.json`` and one
entry per parameter tensor under ``tensors/<canonical name>``. Each tensor
entry is ``uint32 ndim``, ``ndim x uint32`` dims, then row-major float32
data, all little-endian. Timestamps are pinned so equal parameters give
byte-identical archives.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from afpnet.fpm import FeatureMatrix, FeaturePerception, ModelConfig
from afpnet.lexer import Vocabulary
from afpnet.rpam import Prediction, RelationshipAttention

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


class AFPNet(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int, seed: int = 0):
        super().__init__()
        self.config = config
        self.fpm = FeaturePerception(config, vocab_size)
        self.rpam = RelationshipAttention(config)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        g = torch.Generator().manual_seed(seed)
        self.fpm.reset_parameters(g)
        self.rpam.reset_parameters(g)

    @property
    def vocab_size(self) -> int:
        return self.fpm.table.shape[0]

    def feature_matrices(self, batch: Sequence[Sequence[int]]) -> Tensor:
        # one sequence at a time: batch composition never touches a sample's M
        return torch.stack([self.fpm(ids).values for ids in batch])

    def forward(self, batch: Sequence[Sequence[int]]) -> Tensor:
        return self.rpam(self.feature_matrices(batch))

    def predict(self, ids: Sequence[int]) -> tuple[Prediction, FeatureMatrix]:
        with torch.no_grad():
            fm = self.fpm(ids)
            y = float(torch.sigmoid(self.rpam(fm.values)))
        t = self.config.threshold
        return Prediction(y, int(y >= t), t), fm

    def canonical_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """(name, view) pairs in archive order; views alias the parameters."""
        yield "embed.table", self.fpm.table
        for l, (w, b) in enumerate(zip(self.fpm.weights, self.fpm.biases)):
            for j in range(w.shape[0]):
                yield f"fpm.l{l}.j{j}.weight", w[j]
                yield f"fpm.l{l}.j{j}.bias", b[j]
        for i, block in enumerate(self.rpam.blocks):
            for s in range(block.q.shape[0]):
                yield f"rpam.block{i}.head{s}.q", block.q[s]
                yield f"rpam.block{i}.head{s}.k", block.k[s]
                yield f"rpam.block{i}.head{s}.v", block.v[s]
            for name in ("W", "W1", "b1", "W2", "b2"):
                yield f"rpam.block{i}.{name}", getattr(block, name)
        yield "clf.weight", self.rpam.clf_weight
        yield "clf.bias", self.rpam.clf_bias


def predict_batches(model: AFPNet, id_lists: Sequence[Sequence[int]], batch_size: int = 64,
                    with_features: bool = False):
    """Probabilities (and optionally flattened classifier inputs) in input order."""
    probs, feats = [], []
    with torch.no_grad():
        for start in range(0, len(id_lists), batch_size):
            M = model.feature_matrices(id_lists[start:start + batch_size])
            enc = model.rpam.encode(M)
            logits = (enc @ model.rpam.clf_weight).squeeze(-1) + model.rpam.clf_bias
            probs.append(torch.sigmoid(logits))
            if with_features:
                feats.append(enc)
    p = torch.cat(probs).double().numpy() if probs else np.zeros(0)
    if with_features:
        f = torch.cat(feats).double().numpy() if feats else np.zeros((0, 0))
        return p, f
    return p


def _pack_tensor(t: Tensor) -> bytes:
    arr = t.detach().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
    return struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape) + arr.tobytes(order="C")


def _unpack_tensor(data: bytes, name: str) -> np.ndarray:
    try:
        (ndim,) = struct.unpack_from("<I", data, 0)
        shape = struct.unpack_from(f"<{ndim}I", data, 4)
    except struct.error:
        raise CheckpointError(f"tensor {name!r}: truncated header") from None
    offset = 4 + 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) - offset != 4 * count:
        raise CheckpointError(f"tensor {name!r}: payload size does not match shape {shape}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(shape)


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, model: AFPNet, vocab: Vocabulary):
    if len(vocab) != model.vocab_size:
        raise CheckpointError(f"vocabulary size {len(vocab)} != embedding rows {model.vocab_size}")
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write_entry(zf, "config.json", json.dumps(model.config.to_dict(), sort_keys=True).encode())
        _write_entry(zf, "vocab.json", vocab.to_json().encode("utf-8"))
        for name, t in model.canonical_tensors():
            _write_entry(zf, f"tensors/{name}", _pack_tensor(t))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[AFPNet, Vocabulary]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile:
        raise CheckpointError(f"not a checkpoint archive: {path}") from None
    with zf:
        names = set(zf.namelist())
        for required in ("config.json", "vocab.json"):
            if required not in names:
                raise CheckpointError(f"checkpoint is missing {required}")
        config = ModelConfig.from_dict(json.loads(zf.read("config.json")))
        vocab = Vocabulary.from_json(zf.read("vocab.json").decode("utf-8"))
        model = AFPNet(config, len(vocab))
        expected = set()
        with torch.no_grad():
            for name, view in model.canonical_tensors():
                entry = f"tensors/{name}"
                expected.add(entry)
                if entry not in names:
                    raise CheckpointError(f"checkpoint is missing tensor {name!r}")
                arr = _unpack_tensor(zf.read(entry), name)
                if tuple(arr.shape) != tuple(view.shape):
                    raise CheckpointError(
                        f"tensor {name!r} has shape {tuple(arr.shape)}, config expects {tuple(view.shape)}")
                view.copy_(torch.from_numpy(arr.copy()))
        stray = sorted(n for n in names - expected if n.startswith("tensors/"))
        if stray:
            raise CheckpointError(f"unexpected tensor(s) in checkpoint: {', '.join(stray[:5])}")
    return model, vocab
