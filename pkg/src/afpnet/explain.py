"""Map selected feature points back to source snippets and render highlight reports."""

from __future__ import annotations

import html
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from afpnet.ingest import LabeledContract
from afpnet.lexer import encode, is_punctuation, tokenize
from afpnet.model import AFPNet, load_checkpoint

DEFAULT_DEPTH = 25


@dataclass(frozen=True)
class Snippet:
    token_start: int
    token_end: int  # exclusive
    tokens: tuple[str, ...]
    char_start: int
    char_end: int  # exclusive
    value: float
    height: int
    kernel: tuple[int, int]  # (height index l, kernel index j)
    row: int
    col: int


@dataclass
class SnippetReport:
    contract_id: str
    source: str
    probability: float
    decision: int
    snippets: list[Snippet]
    frequencies: list[tuple[str, int]] = field(default_factory=list)
    distinct_spans: int = 0

    def to_dict(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "probability": self.probability,
            "decision": self.decision,
            "distinct_spans": self.distinct_spans,
            "snippets": [asdict(s) for s in self.snippets],
            "frequencies": [list(kv) for kv in self.frequencies],
        }


def _resolve(checkpoint) -> tuple[AFPNet, object]:
    if isinstance(checkpoint, (str, Path)):
        return load_checkpoint(checkpoint)
    return checkpoint


def attribute(contract: LabeledContract | str, checkpoint, depth: int = DEFAULT_DEPTH) -> SnippetReport:
    """Rank the source windows behind every selected feature point.

    ``checkpoint`` is a path or a ``(model, vocab)`` pair. Identical spans are
    merged keeping the highest activation; the word-frequency tally covers all
    distinct spans, not only the ``depth`` reported ones, and skips
    punctuation-only tokens.
    """
    model, vocab = _resolve(checkpoint)
    if isinstance(contract, str):
        cid, source = "<input>", contract
    else:
        cid, source = contract.id, contract.source
    seq = tokenize(source)
    pred, fm = model.predict(encode(seq, vocab))

    best: dict[tuple[int, int], Snippet] = {}
    values = fm.values.detach()
    for row in range(values.shape[0]):
        l, j = fm.kernel_of(row)
        for col in range(fm.provenance.shape[1]):
            window = fm.window(row, col)
            if window is None:
                continue
            start, end = window
            value = float(values[row, col])
            prev = best.get(window)
            if prev is not None and prev.value >= value:
                continue
            best[window] = Snippet(
                token_start=start, token_end=end, tokens=seq.tokens[start:end],
                char_start=seq.spans[start][0], char_end=seq.spans[end - 1][1],
                value=value, height=fm.height_of(row), kernel=(l, j), row=row, col=col)

    ranked = sorted(best.values(), key=lambda s: (-s.value, s.token_start, s.token_end))
    counts = Counter(t for s in ranked for t in s.tokens if not is_punctuation(t))
    freqs = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return SnippetReport(cid, source, pred.probability, pred.decision, ranked[:depth], freqs, len(ranked))


def merge_spans(spans) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(a, b) for a, b in merged]


def _highlighted(source: str, regions) -> str:
    parts, pos = [], 0
    for start, end in regions:
        parts.append(html.escape(source[pos:start]))
        parts.append("<mark>" + html.escape(source[start:end]) + "</mark>")
        pos = end
    parts.append(html.escape(source[pos:]))
    return "".join(parts)


def _line_of(source: str, offset: int) -> int:
    return source.count("\n", 0, offset) + 1


def render_report(report: SnippetReport, fmt: str = "markdown") -> str:
    regions = merge_spans((s.char_start, s.char_end) for s in report.snippets)
    listing = _highlighted(report.source, regions)
    src = report.source
    rows = [
        (i, f"{_line_of(src, s.char_start)}-{_line_of(src, s.char_end - 1)}", f"{s.value:.6g}",
         f"h={s.height} j={s.kernel[1]}", " ".join(s.tokens))
        for i, s in enumerate(report.snippets, start=1)
    ]
    title = f"Attribution report: {report.contract_id}"
    summary = f"probability {report.probability:.4f}, decision {report.decision}"
    if fmt == "html":
        snippet_rows = "".join(
            "<tr>" + "".join(f"<td>{html.escape(str(c))}</td>" for c in r) + "</tr>\n" for r in rows)
        freq_rows = "".join(
            f"<tr><td>{html.escape(w)}</td><td>{c}</td></tr>\n" for w, c in report.frequencies)
        return (
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
            f"<title>{html.escape(title)}</title></head><body>\n"
            f"<h1>{html.escape(title)}</h1>\n<p>{summary}</p>\n"
            f"<pre>{listing}</pre>\n"
            "<h2>Snippets</h2>\n<table>\n<tr><th>rank</th><th>lines</th><th>activation</th>"
            f"<th>kernel</th><th>tokens</th></tr>\n{snippet_rows}</table>\n"
            "<h2>Word frequency</h2>\n<table>\n<tr><th>word</th><th>count</th></tr>\n"
            f"{freq_rows}</table>\n</body></html>\n"
        )
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")

    def cell(x):
        return str(x).replace("|", "\\|")

    lines = [f"# {title}", "", summary, "", f"<pre>{listing}</pre>", "", "## Snippets", "",
             "| rank | lines | activation | kernel | tokens |", "|---|---|---|---|---|"]
    lines += ["| " + " | ".join(cell(c) for c in r) + " |" for r in rows]
    lines += ["", "## Word frequency", "", "| word | count |", "|---|---|"]
    lines += [f"| {cell(w)} | {c} |" for w, c in report.frequencies]
    return "\n".join(lines) + "\n"
