"""Labeled contract corpora: manifest loading, normalization, dedup and splits."""

from __future__ import annotations

import json
import os
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

VULN_TYPES = ("reentrancy", "timestamp", "infinite_loop")


class CorpusError(ValueError):
    """Raised for malformed manifests or corpus contract violations."""


@dataclass(frozen=True)
class LabeledContract:
    id: str
    source: str
    vuln_type: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise CorpusError(f"contract {self.id!r}: label must be 0 or 1, got {self.label!r}")
        if self.vuln_type not in VULN_TYPES:
            raise CorpusError(f"contract {self.id!r}: unknown vuln_type {self.vuln_type!r}")
        if not self.source.strip():
            raise CorpusError(f"contract {self.id!r}: empty source")


@dataclass(frozen=True)
class Corpus:
    contracts: tuple[LabeledContract, ...] = ()
    vuln_type: str | None = None
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        contracts = tuple(self.contracts)
        object.__setattr__(self, "contracts", contracts)
        vtype = self.vuln_type
        seen = {}
        for c in contracts:
            if c.id in seen:
                raise CorpusError(f"duplicate contract id {c.id!r}")
            seen[c.id] = c
            if vtype is None:
                vtype = c.vuln_type
            elif c.vuln_type != vtype:
                raise CorpusError(
                    f"contract {c.id!r} has vuln_type {c.vuln_type!r}, corpus is {vtype!r}")
        object.__setattr__(self, "vuln_type", vtype)
        object.__setattr__(self, "_by_id", seen)

    def __len__(self):
        return len(self.contracts)

    def __iter__(self):
        return iter(self.contracts)

    def __getitem__(self, contract_id: str) -> LabeledContract:
        return self._by_id[contract_id]

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.contracts]

    @property
    def labels(self) -> list[int]:
        return [c.label for c in self.contracts]


def load_manifest(manifest_path, vuln_type: str | None = None) -> Corpus:
    """Read a JSONL manifest into a :class:`Corpus`.

    Each row carries ``id``, ``vuln_type``, ``label`` and exactly one of
    ``path`` (relative to the manifest directory) or ``source``. Rows of a
    different ``vuln_type`` are skipped when ``vuln_type`` is given.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise CorpusError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    contracts = []
    seen = set()
    with manifest_path.open(encoding="utf-8") as fh:
        for rowno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"row {rowno}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise CorpusError(f"row {rowno}: expected a JSON object")
            missing = [k for k in ("id", "vuln_type", "label") if k not in row]
            if missing:
                raise CorpusError(f"row {rowno}: missing field(s) {', '.join(missing)}")
            cid = row["id"]
            if not isinstance(cid, str):
                raise CorpusError(f"row {rowno}: id must be a string")
            label = row["label"]
            if isinstance(label, bool) or label not in (0, 1):
                raise CorpusError(f"row {rowno} (id {cid!r}): label must be 0 or 1, got {label!r}")
            if row["vuln_type"] not in VULN_TYPES:
                raise CorpusError(f"row {rowno} (id {cid!r}): unknown vuln_type {row['vuln_type']!r}")
            if cid in seen:
                raise CorpusError(f"row {rowno}: duplicate id {cid!r}")
            seen.add(cid)
            has_path, has_source = "path" in row, "source" in row
            if has_path == has_source:
                raise CorpusError(f"row {rowno} (id {cid!r}): need exactly one of 'path' or 'source'")
            if vuln_type is not None and row["vuln_type"] != vuln_type:
                continue
            if has_path:
                src_path = base / row["path"]
                if not src_path.is_file():
                    raise CorpusError(f"row {rowno} (id {cid!r}): referenced file not found: {row['path']}")
                source = src_path.read_text(encoding="utf-8")
            else:
                source = row["source"]
            if not source.strip():
                raise CorpusError(f"row {rowno} (id {cid!r}): empty source")
            contracts.append(LabeledContract(cid, source, row["vuln_type"], int(label)))
    return Corpus(tuple(contracts), vuln_type)


def write_manifest(corpus: Iterable[LabeledContract], manifest_path, paths: dict | None = None):
    """Write a JSONL manifest. Contracts listed in ``paths`` are stored by file
    reference (relative to the manifest directory); the rest inline."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    paths = paths or {}
    with manifest_path.open("w", encoding="utf-8") as fh:
        for c in corpus:
            row = {"id": c.id, "vuln_type": c.vuln_type, "label": c.label}
            if c.id in paths:
                row["path"] = os.path.relpath(paths[c.id], manifest_path.parent)
            else:
                row["source"] = c.source
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def manifest_paths(manifest_path) -> dict[str, Path]:
    """Map id -> absolute source path for the file-referencing rows of a manifest."""
    manifest_path = Path(manifest_path)
    out = {}
    with manifest_path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                if "path" in row:
                    out[row["id"]] = (manifest_path.parent / row["path"]).resolve()
    return out


# string literals are matched so comment markers inside them survive
_COMMENT_RE = re.compile(
    r'"(?:\\.|[^"\\\n])*"|\'(?:\\.|[^\'\\\n])*\'|//[^\n]*|/\*.*?(?:\*/|\Z)',
    re.DOTALL,
)
_WS_RE = re.compile(r"\s+")


def strip_comments(source: str) -> str:
    return _COMMENT_RE.sub(lambda m: m.group(0) if m.group(0)[0] in "\"'" else " ", source)


def normalize_source(source: str) -> str:
    """Drop comments, collapse whitespace runs to one space, strip the ends.

    An unterminated block comment runs to the end of the input.
    """
    return _WS_RE.sub(" ", strip_comments(source)).strip()


def duplicate_groups(corpus: Corpus) -> list[list[LabeledContract]]:
    """Groups (size >= 2) of contracts sharing a normalized source, in first-occurrence order."""
    groups: dict[str, list[LabeledContract]] = {}
    for c in corpus:
        groups.setdefault(normalize_source(c.source), []).append(c)
    return [g for g in groups.values() if len(g) > 1]


def dedup_corpus(corpus: Corpus) -> Corpus:
    """Collapse contracts with byte-identical normalized sources to their first occurrence."""
    for group in duplicate_groups(corpus):
        if len({c.label for c in group}) > 1:
            ids = ", ".join(c.id for c in group)
            raise CorpusError(f"conflicting labels within duplicate group: {ids}")
    seen = set()
    survivors = []
    for c in corpus:
        key = normalize_source(c.source)
        if key not in seen:
            seen.add(key)
            survivors.append(c)
    return Corpus(tuple(survivors), corpus.vuln_type)


def split_corpus(corpus: Corpus, train_fraction: float = 0.8, seed: int = 0) -> tuple[Corpus, Corpus]:
    if not 0 < train_fraction < 1:
        raise CorpusError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(corpus)
    if n < 2:
        raise CorpusError(f"cannot split a corpus of {n} contract(s)")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    n_train = int(train_fraction * n)
    if n_train == 0 or n_train == n:
        raise CorpusError(f"train_fraction {train_fraction} leaves an empty split for n={n}")
    train = [corpus.contracts[i] for i in order[:n_train]]
    test = [corpus.contracts[i] for i in order[n_train:]]
    return Corpus(tuple(train), corpus.vuln_type), Corpus(tuple(test), corpus.vuln_type)
