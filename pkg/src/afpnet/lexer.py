"""Solidity-ish lexer and vocabulary.

Numeric literals collapse to ``<NUM>`` and string literals to ``<STR>``;
identifiers and keywords are kept verbatim. Every token remembers the
character span it came from so attribution can point back into the source.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
NUM, STR = "<NUM>", "<STR>"

# longest first, so alternation order gives maximal munch
_OPERATORS = sorted(
    """>>>= >>> <<= >>= ** == != <= >= && || ++ -- += -= *= /= %= |= &= ^= << >> => -> :=
    + - * / % = < > ! ~ & | ^ ? : ; , . ( ) [ ] { }""".split(),
    key=len,
    reverse=True,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?(?:\*/|\Z))
  | (?P<str>"(?:\\.|[^"\\\n])*"?|'(?:\\.|[^'\\\n])*'?)
  | (?P<num>0[xX][0-9a-fA-F_]*|(?:\d[\d_]*(?:\.\d[\d_]*)?|\.\d[\d_]*)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<op>"""
    + "|".join(re.escape(op) for op in _OPERATORS)
    + r""")
  | (?P<other>\S)
    """,
    re.VERBOSE | re.DOTALL,
)

PUNCT_CHARS = frozenset("+-*/%=<>!~&|^?:;,.()[]{}")


class LexError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.tokens)

    @property
    def n(self) -> int:
        return len(self.tokens)


def tokenize(source: str) -> TokenSequence:
    tokens, spans = [], []
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        if kind in ("ws", "comment"):
            continue
        text = {"str": STR, "num": NUM}.get(kind, m.group())
        tokens.append(text)
        spans.append(m.span())
    if not tokens:
        raise LexError("empty after normalization")
    return TokenSequence(tuple(tokens), tuple(spans))


def is_punctuation(token: str) -> bool:
    return all(ch in PUNCT_CHARS for ch in token)


class Vocabulary:
    """Immutable token <-> id mapping with PAD=0 and UNK=1."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with the PAD and UNK entries")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._tokens = tuple(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def to_json(self) -> str:
        return json.dumps(self._ids, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        mapping = json.loads(text)
        ordered = sorted(mapping.items(), key=lambda kv: kv[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise ValueError("vocabulary ids must be dense in [0, V)")
        return cls([t for t, _ in ordered])

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_vocab(train_corpus: Iterable, min_freq: int = 2) -> Vocabulary:
    """Ids are assigned by descending training frequency, ties lexicographic.

    ``train_corpus`` yields objects with a ``source`` attribute; pass the
    training split only.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    n_docs = 0
    for contract in train_corpus:
        counts.update(tokenize(contract.source).tokens)
        n_docs += 1
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary([PAD, UNK, *kept])


def encode(seq: TokenSequence | Sequence[str], vocab: Vocabulary) -> list[int]:
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    return [vocab.id_of(t) for t in tokens]
