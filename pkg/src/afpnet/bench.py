"""Closed-form cost model and empirical scaling measurements of the forward pass."""

from __future__ import annotations

import random
import statistics
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import torch
from torch.profiler import ProfilerActivity, profile

from afpnet.fpm import ModelConfig
from afpnet.lexer import UNK_ID
from afpnet.model import AFPNet, load_checkpoint


@dataclass(frozen=True)
class CostModel:
    n: int
    embed_dim: int
    stride: int
    heights: tuple[int, ...]
    kernels: int
    top_p: int
    blocks: int
    heads: int
    flop_fpm: int
    flop_rpam: int
    flop_total: int
    space_fpm: int
    space_rpam: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heights"] = list(self.heights)
        return d


def count_flops(config: ModelConfig, n: int, stride: int | None = None,
                heads: int | None = None) -> CostModel:
    """Evaluate the operation/space count formulas for one input of ``n`` tokens.

    Convolution work per height is ``((n - H) // S + 1) * K * J``, summed over
    heights; one attention pass costs ``(J*L)**2 * (P+1)`` and is repeated
    once per block. Stride and head count are separate inputs because they
    are independent quantities.
    """
    if n < config.max_height:
        raise ValueError(f"n={n} is shorter than the tallest kernel ({config.max_height})")
    S = config.stride if stride is None else stride
    h = config.heads if heads is None else heads
    K, J, L, P, N = config.embed_dim, config.kernels, len(config.heights), config.top_p, config.blocks
    flop_fpm = sum(((n - H) // S + 1) * K * J for H in config.heights)
    flop_rpam = (J * L) ** 2 * (P + 1)
    space_fpm = sum(n * K * J * S * H for H in config.heights)
    space_rpam = h * (P + 1) ** 2 + (P + 1) * J * L
    return CostModel(n, K, S, config.heights, J, P, N, h, flop_fpm, flop_rpam,
                     flop_fpm + N * flop_rpam, space_fpm, space_rpam)


@contextmanager
def _threads(parallel: bool):
    before = torch.get_num_threads()
    if not parallel:
        torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(before)


def random_ids(n: int, vocab_size: int, rng: random.Random) -> list[int]:
    if vocab_size <= 2:
        return [UNK_ID] * n
    return [rng.randrange(2, vocab_size) for _ in range(n)]


def _as_model(checkpoint) -> AFPNet:
    if isinstance(checkpoint, AFPNet):
        return checkpoint
    return load_checkpoint(checkpoint)[0]


def measure_scaling(checkpoint, lengths: Sequence[int], repeats: int = 20, warmup: int = 2,
                    seed: int = 0, parallel: bool = False) -> dict:
    """Median forward wall-clock per length, with min/max and consecutive ratios."""
    lengths = list(lengths)
    if lengths != sorted(lengths):
        raise ValueError("lengths must be ascending")
    if repeats < 10:
        raise ValueError("repeats must be >= 10")
    model = _as_model(checkpoint)
    rng = random.Random(seed)
    rows = []
    with _threads(parallel), torch.no_grad():
        for n in lengths:
            ids = random_ids(n, model.vocab_size, rng)
            for _ in range(warmup):
                model.rpam(model.fpm(ids).values)
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                model.rpam(model.fpm(ids).values)
                times.append(time.perf_counter() - t0)
            rows.append({"n": n, "min": min(times), "median": statistics.median(times),
                         "max": max(times), "repeats": repeats})
    ratios = [b["median"] / a["median"] for a, b in zip(rows, rows[1:])]
    return {"rows": rows, "ratios": ratios, "threads": "parallel" if parallel else 1}


def peak_allocated(fn: Callable[[], object]) -> int:
    """Peak of live CPU tensor allocations (bytes) while ``fn`` runs, from the
    torch profiler's allocation/free event stream."""
    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        fn()
    events = sorted(prof.events(), key=lambda e: e.time_range.start)
    live = peak = 0
    for e in events:
        live += e.self_cpu_memory_usage
        peak = max(peak, live)
    return peak


def measure_memory(checkpoint, lengths: Sequence[int], seed: int = 0) -> list[dict]:
    """Peak transient allocation of the feature-perception forward pass per length."""
    model = _as_model(checkpoint)
    rng = random.Random(seed)
    out = []
    with _threads(False), torch.no_grad():
        for n in lengths:
            ids = random_ids(n, model.vocab_size, rng)
            model.fpm(ids)  # warm-up outside the profiler
            out.append({"n": n, "peak_bytes": peak_allocated(lambda: model.fpm(ids))})
    return out
