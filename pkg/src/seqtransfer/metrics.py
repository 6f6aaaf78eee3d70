"""Edit distance and corpus-pooled character error rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1,
                         cur[j - 1] + 1,
                         prev[j - 1] + (ca != cb))
        prev = cur
    return prev[len(b)]


@dataclass
class EvalRow:
    ref: str
    hyp: str
    edits: int


@dataclass
class EvalReport:
    total_edits: int
    total_ref_chars: int
    cer: float
    rows: list[EvalRow]


def cer(refs: Sequence[str], hyps: Sequence[str]) -> EvalReport:
    """Pooled character error rate: total edits over total reference
    characters across the whole corpus.  Can exceed 1.0 when hypotheses
    are much longer than their references."""
    if len(refs) != len(hyps):
        raise ValueError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    if not refs:
        raise ValueError("empty reference list")
    rows = [EvalRow(r, h, edit_distance(r, h)) for r, h in zip(refs, hyps)]
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ValueError("references contain no characters")
    total_edits = sum(row.edits for row in rows)
    return EvalReport(total_edits, total_ref, total_edits / total_ref, rows)


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("ref\thyp\tedits\n")
        for row in report.rows:
            f.write(f"{row.ref}\t{row.hyp}\t{row.edits}\n")
        f.write(f"# cer\t{report.cer:.6f}\t{report.total_edits}/{report.total_ref_chars}\n")
