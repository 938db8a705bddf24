import json

import pytest
import torch

from afpnet.fpm import ModelConfig
from afpnet.ingest import Corpus, LabeledContract
from afpnet.model import AFPNet

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def tiny_config():
    return ModelConfig(embed_dim=4, heights=(2, 3), kernels=2, top_p=3, blocks=1, heads=2)


@pytest.fixture
def small_config():
    return ModelConfig(embed_dim=8, heights=(2, 3, 5), kernels=4, top_p=7, blocks=2, heads=2)


@pytest.fixture
def make_model():
    def _make(config, vocab_size=40, seed=0, dtype=torch.float32):
        return AFPNet(config, vocab_size, seed=seed).to(dtype)
    return _make


def contract(cid, source, label=0, vuln_type="reentrancy"):
    return LabeledContract(cid, source, vuln_type, label)


def corpus_of(*contracts):
    return Corpus(tuple(contracts))


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path
