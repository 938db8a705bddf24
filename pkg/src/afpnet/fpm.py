"""Feature perception: embedding, multi-height convolution bank and top-P selection.

Each kernel's ReLU feature map is reduced to its P largest valid values
(descending, ties to the earlier window) followed by the mean over every
valid window. The mean keeps a gradient path to all windows, not just the
selected ones. Rows of the resulting matrix are ordered height-major:
``row = l * kernels + j``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from afpnet.lexer import PAD_ID


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 256
    heights: tuple[int, ...] = (2, 3, 5, 7, 11)
    kernels: int = 200  # per height
    top_p: int = 15
    blocks: int = 6
    heads: int = 4
    stride: int = 1
    ffn_hidden: int | None = None  # None -> 4 * (top_p + 1)
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "heights", tuple(int(h) for h in self.heights))
        for name in ("embed_dim", "kernels", "top_p", "heads", "stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        # zero blocks is a degenerate but legal configuration (classifier on M)
        if self.blocks < 0:
            raise ConfigError(f"blocks must be >= 0, got {self.blocks}")
        if not self.heights or min(self.heights) < 1:
            raise ConfigError(f"heights must be positive, got {self.heights}")
        if self.width % self.heads:
            raise ConfigError(f"top_p + 1 = {self.width} is not divisible by heads = {self.heads}")
        if self.ffn_hidden is not None and self.ffn_hidden < 1:
            raise ConfigError(f"ffn_hidden must be >= 1, got {self.ffn_hidden}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")

    @property
    def width(self) -> int:
        return self.top_p + 1

    @property
    def rows(self) -> int:
        return self.kernels * len(self.heights)

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 4 * self.width

    @property
    def max_height(self) -> int:
        return max(self.heights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heights"] = list(self.heights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def embed(ids, table: Tensor) -> Tensor:
    ids = torch.as_tensor(ids, dtype=torch.long)
    bad = (ids < 0) | (ids >= table.shape[0])
    if bad.any():
        pos = int(bad.nonzero()[0, 0])
        raise IndexError(
            f"token id {int(ids[pos])} at position {pos} is outside the vocabulary of size {table.shape[0]}")
    return F.embedding(ids, table)


def convolve(E: Tensor, weight: Tensor, bias, stride: int = 1) -> Tensor:
    """ReLU(W . E[t*stride : t*stride + h] + b) for every window start t.

    ``weight`` is one ``(h, k)`` kernel or a ``(J, h, k)`` bank; the result is
    ``(n_windows,)`` or ``(J, n_windows)`` respectively.
    """
    single = weight.dim() == 2
    w = weight.unsqueeze(0) if single else weight
    b = torch.as_tensor(bias, dtype=E.dtype).reshape(-1).expand(w.shape[0])
    h = w.shape[1]
    if E.shape[0] < h:
        raise ValueError(f"sequence of length {E.shape[0]} is shorter than kernel height {h}")
    out = F.conv1d(E.t().unsqueeze(0), w.transpose(1, 2), b, stride=stride)[0]
    out = torch.relu(out)
    return out[0] if single else out


def select_features(C: Tensor, top_p: int, valid=None) -> tuple[Tensor, Tensor]:
    """Top-P values plus the valid-position mean, per feature map row.

    Returns ``(values, provenance)`` with shapes ``(..., top_p + 1)`` and
    ``(..., top_p)``. Provenance holds window indices, -1 for empty slots.
    """
    if top_p <= 0:
        raise ConfigError(f"top_p must be positive, got {top_p}")
    single = C.dim() == 1
    C2 = C.unsqueeze(0) if single else C
    rows, npos = C2.shape
    if valid is None:
        valid = torch.ones(npos, dtype=torch.bool)
    valid = torch.as_tensor(valid, dtype=torch.bool).expand(rows, npos)
    if torch.isnan(C2).any():
        raise ValueError("feature map contains NaN")

    width = max(npos, top_p)
    extra = width - npos
    masked = torch.where(valid, C2.detach(), torch.tensor(-math.inf, dtype=C2.dtype))
    if extra:
        masked = torch.cat([masked, masked.new_full((rows, extra), -math.inf)], dim=1)
        valid_w = torch.cat([valid, valid.new_zeros(rows, extra)], dim=1)
        source = torch.cat([C2, C2.new_zeros(rows, extra)], dim=1)
    else:
        valid_w, source = valid, C2

    # P-th largest value, then fill the ties at that value in index order
    kth = masked.topk(top_p, dim=1, sorted=False).values.amin(dim=1, keepdim=True)
    above = masked > kth
    at = masked == kth
    need = top_p - above.sum(dim=1, keepdim=True)
    chosen = above | (at & (at.cumsum(dim=1) <= need))
    idx = chosen.nonzero()[:, 1].view(rows, top_p)
    order = masked.gather(1, idx).sort(dim=1, descending=True, stable=True).indices
    idx = idx.gather(1, order)

    ok = valid_w.gather(1, idx)
    top = torch.where(ok, source.gather(1, idx), source.new_zeros(()))
    count = valid.sum(dim=1)
    total = torch.where(valid, C2, C2.new_zeros(())).sum(dim=1)
    mean = torch.where(count > 0, total / count.clamp(min=1), total.new_zeros(()))
    values = torch.cat([top, mean.unsqueeze(1)], dim=1)
    prov = torch.where(ok, idx, torch.full_like(idx, -1))
    if single:
        return values[0], prov[0]
    return values, prov


@dataclass
class FeatureMatrix:
    """``values`` is ``(kernels * L, top_p + 1)``; ``provenance`` holds window
    starts (token index) for the first ``top_p`` columns, -1 when empty."""

    values: Tensor
    provenance: Tensor
    heights: tuple[int, ...]
    kernels: int
    length: int  # real token count, padding excluded

    @property
    def shape(self):
        return tuple(self.values.shape)

    def kernel_of(self, row: int) -> tuple[int, int]:
        return divmod(row, self.kernels)

    def height_of(self, row: int) -> int:
        return self.heights[row // self.kernels]

    def window(self, row: int, col: int) -> tuple[int, int] | None:
        start = int(self.provenance[row, col])
        if start < 0:
            return None
        return start, start + self.height_of(row)


def trim_padding(ids) -> list[int]:
    ids = [int(i) for i in ids]
    n = len(ids)
    while n and ids[n - 1] == PAD_ID:
        n -= 1
    return ids[:n]


def valid_windows(n_windows: int, length: int, height: int, stride: int) -> Tensor:
    starts = torch.arange(n_windows) * stride
    return starts + height <= length


class FeaturePerception(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        if vocab_size < 2:
            raise ConfigError("vocabulary must contain at least PAD and UNK")
        self.config = config
        k, J = config.embed_dim, config.kernels
        self.table = nn.Parameter(torch.empty(vocab_size, k))
        self.weights = nn.ParameterList([nn.Parameter(torch.empty(J, h, k)) for h in config.heights])
        self.biases = nn.ParameterList([nn.Parameter(torch.empty(J)) for _ in config.heights])

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator):
        k = self.config.embed_dim
        self.table.uniform_(-math.sqrt(3.0), math.sqrt(3.0), generator=generator)
        self.table[PAD_ID].zero_()
        for w, b in zip(self.weights, self.biases):
            bound = math.sqrt(6.0 / (w.shape[1] * k))
            w.uniform_(-bound, bound, generator=generator)
            b.zero_()

    def prepare(self, ids) -> tuple[Tensor, int]:
        """Trailing PAD is dropped then re-added up to the tallest kernel, so
        any amount of right padding yields the same computation."""
        real = trim_padding(ids)
        length = len(real)
        padded = real + [PAD_ID] * max(0, self.config.max_height - length)
        return torch.tensor(padded, dtype=torch.long), length

    def from_embeddings(self, E: Tensor, length: int) -> tuple[Tensor, Tensor]:
        cfg = self.config
        values, provs = [], []
        for h, w, b in zip(cfg.heights, self.weights, self.biases):
            C = convolve(E, w, b, cfg.stride)
            mask = valid_windows(C.shape[1], length, h, cfg.stride)
            v, p = select_features(C, cfg.top_p, mask)
            values.append(v)
            provs.append(p * cfg.stride)
        prov = torch.cat(provs)
        return torch.cat(values), torch.where(prov < 0, torch.full_like(prov, -1), prov)

    def forward(self, ids) -> FeatureMatrix:
        padded, length = self.prepare(ids)
        values, prov = self.from_embeddings(embed(padded, self.table), length)
        return FeatureMatrix(values, prov, self.config.heights, self.config.kernels, length)


def fpm_forward(ids: Sequence[int], module: FeaturePerception) -> FeatureMatrix:
    if len(ids) == 0:
        raise ValueError("empty id sequence")
    return module(ids)
