"""Pseudo-contracts with a planted reentrancy-style ordering motif.

Positives make an external call and only then write the balance; negatives
carry the same two statements in the safe order. The filler around them is
drawn from one shared pool, so only the ordering separates the classes.
"""

from __future__ import annotations

import random

from afpnet.ingest import Corpus, LabeledContract

_NAMES = ["amount", "value", "wad", "credit", "payout", "share", "due", "funds"]
_MAPS = ["allowed", "owners", "limits", "stakes", "rewards", "nonces"]
_ADDRS = ["to", "from", "spender", "owner", "beneficiary", "admin"]
_FUNCS = ["transfer", "approve", "mint", "burn", "notify", "sync", "update", "claim"]
_EVENTS = ["Transfer", "Approval", "Deposit", "Sync", "Log"]


def _filler(rng: random.Random) -> str:
    n, m, a, f = rng.choice(_NAMES), rng.choice(_MAPS), rng.choice(_ADDRS), rng.choice(_FUNCS)
    options = [
        f"uint {n} = {rng.randint(0, 10**6)};",
        f"require({n} > {rng.randint(0, 99)});",
        f"require({a} != address(0));",
        f"{m}[{a}] += {n};",
        f"{m}[{a}][{rng.choice(_ADDRS)}] = {n};",
        f"emit {rng.choice(_EVENTS)}({a}, {n});",
        f"{n} = {n} * {rng.randint(2, 9)} / {rng.randint(10, 99)};",
        f"if ({n} >= {rng.randint(1, 500)}) {{ {n} -= {rng.randint(1, 9)}; }}",
        f"token.{f}({a}, {n});",
        f'require(msg.value > 0, "{rng.choice(_FUNCS)} failed");',
        f"for (uint i = 0; i < {n}; i++) {{ {m}[{a}] += i; }}",
        f"{f}({a});",
    ]
    return rng.choice(options)


def _motif(rng: random.Random, vulnerable: bool) -> str:
    n = rng.choice(_NAMES)
    call = f"msg.sender.call.value({n})();"
    write = f"balances[msg.sender] -= {n};"
    return f"{call} {write}" if vulnerable else f"{write} {call}"


def make_contract(rng: random.Random, vulnerable: bool, min_stmts: int = 4,
                  max_stmts: int = 12) -> tuple[str, tuple[int, int]]:
    """Return (source, motif character span)."""
    before = [_filler(rng) for _ in range(rng.randint(min_stmts, max_stmts))]
    after = [_filler(rng) for _ in range(rng.randint(min_stmts, max_stmts))]
    fname = rng.choice(_FUNCS) + "All"
    head = (
        "pragma solidity ^0.4.24;\n"
        "contract Vault {\n"
        "    mapping(address => uint) balances;\n"
        f"    function {fname}(address to, uint amount) public {{\n"
    )
    body = "".join(f"        {s}\n" for s in before)
    motif = _motif(rng, vulnerable)
    start = len(head) + len(body) + 8
    text = head + body + "        " + motif + "\n" + "".join(f"        {s}\n" for s in after) + "    }\n}\n"
    return text, (start, start + len(motif))


def make_corpus(n_pos: int = 1000, n_neg: int = 1000, seed: int = 0,
                **kw) -> tuple[Corpus, dict[str, tuple[int, int]]]:
    """Corpus of shuffled positives/negatives plus each contract's motif span."""
    rng = random.Random(seed)
    labels = [1] * n_pos + [0] * n_neg
    rng.shuffle(labels)
    contracts, spans = [], {}
    for i, y in enumerate(labels):
        src, span = make_contract(rng, bool(y), **kw)
        cid = f"syn-{i:05d}"
        contracts.append(LabeledContract(cid, src, "reentrancy", y))
        spans[cid] = span
    return Corpus(tuple(contracts), "reentrancy"), spans
