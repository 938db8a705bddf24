"""Relationship perception: stacked multi-head attention + feed-forward, then a sigmoid classifier.

The blocks follow the written composition exactly: concatenated heads mixed
by ``W``, then ``ReLU(x W1 + b1) W2 + b2``. There is no residual path, no
normalization and no positional encoding over the feature rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import torch
from torch import Tensor, nn

from afpnet.fpm import ConfigError, FeatureMatrix, ModelConfig


def softmax_rows(scores: Tensor) -> Tensor:
    shifted = scores - scores.amax(dim=-1, keepdim=True)
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def attention_head(X: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, return_weights: bool = False):
    """Softmax(q k^T / sqrt(d_k)) v with q, k, v = X wq, X wk, X wv.

    ``X`` is ``(rows, width)`` or batched ``(B, rows, width)``.
    """
    if not torch.isfinite(X).all():
        raise ValueError("attention input contains non-finite values")
    q, k, v = X @ wq, X @ wk, X @ wv
    weights = softmax_rows(q @ k.transpose(-1, -2) / math.sqrt(wq.shape[-1]))
    out = weights @ v
    return (out, weights) if return_weights else out


class AttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int, hidden: int):
        super().__init__()
        if width % heads:
            raise ConfigError(f"width {width} is not divisible by heads {heads}")
        d_k = width // heads
        self.q = nn.Parameter(torch.empty(heads, width, d_k))
        self.k = nn.Parameter(torch.empty(heads, width, d_k))
        self.v = nn.Parameter(torch.empty(heads, width, d_k))
        self.W = nn.Parameter(torch.empty(width, width))
        self.W1 = nn.Parameter(torch.empty(width, hidden))
        self.b1 = nn.Parameter(torch.empty(hidden))
        self.W2 = nn.Parameter(torch.empty(hidden, width))
        self.b2 = nn.Parameter(torch.empty(width))

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator):
        width = self.W.shape[0]
        for p in (self.q, self.k, self.v, self.W, self.W2):
            bound = math.sqrt(3.0 / p.shape[-2])
            p.uniform_(-bound, bound, generator=generator)
        bound = math.sqrt(6.0 / width)
        self.W1.uniform_(-bound, bound, generator=generator)
        self.b1.zero_()
        self.b2.zero_()

    def forward(self, X: Tensor) -> Tensor:
        return attention_block(X, self)


def attention_block(X: Tensor, block: AttentionBlock) -> Tensor:
    heads = [attention_head(X, block.q[s], block.k[s], block.v[s]) for s in range(block.q.shape[0])]
    mixed = torch.cat(heads, dim=-1) @ block.W
    return torch.relu(mixed @ block.W1 + block.b1) @ block.W2 + block.b2


@dataclass
class Prediction:
    probability: float
    decision: int
    threshold: float = 0.5
    attribution: Any = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {"probability": self.probability, "decision": self.decision, "threshold": self.threshold}
        if self.attribution is not None:
            d["attribution"] = self.attribution
        return d


class RelationshipAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList(
            AttentionBlock(config.width, config.heads, config.hidden) for _ in range(config.blocks))
        self.clf_weight = nn.Parameter(torch.empty(config.rows * config.width, 1))
        self.clf_bias = nn.Parameter(torch.empty(()))

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator):
        for block in self.blocks:
            block.reset_parameters(generator)
        bound = 1.0 / math.sqrt(self.clf_weight.shape[0])
        self.clf_weight.uniform_(-bound, bound, generator=generator)
        self.clf_bias.zero_()

    def encode(self, M: Tensor) -> Tensor:
        """Run the attention stack and flatten each matrix row-major."""
        cfg = self.config
        if tuple(M.shape[-2:]) != (cfg.rows, cfg.width):
            raise ConfigError(f"feature matrix shape {tuple(M.shape[-2:])} != {(cfg.rows, cfg.width)}")
        for block in self.blocks:
            M = block(M)
        return M.flatten(start_dim=-2)

    def forward(self, M: Tensor) -> Tensor:
        """Logit(s) for ``(rows, width)`` or ``(B, rows, width)`` input."""
        return (self.encode(M) @ self.clf_weight).squeeze(-1) + self.clf_bias


def rpam_forward(M: FeatureMatrix | Tensor, module: RelationshipAttention) -> Prediction:
    values = M.values if isinstance(M, FeatureMatrix) else M
    y = float(torch.sigmoid(module(values)).detach())
    threshold = module.config.threshold
    return Prediction(probability=y, decision=int(y >= threshold), threshold=threshold)
