"""Per-subword surprisal tables and per-segment regression features.

The surprisal TSV format is the shared currency between the n-gram arm,
external neural scorers, and the regression layer: one row per subword with
a natural-log surprisal, ordered as tokenized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bpe import Alignment
from .errors import ParameterError, ParseError, SchemaError
from .ngram import perplexity

SURPRISAL_HEADER = ("article", "sent", "idx", "subword", "surprisal_nats")
COUNTS_HEADER = ("subword", "count")


@dataclass(frozen=True)
class SurprisalRow:
    article: str
    sent: int
    idx: int
    subword: str
    surprisal: float


@dataclass(frozen=True)
class SurprisalTable:
    """All subword surprisals one LM assigned to one tokenized corpus."""

    lm_id: str
    rows: tuple[SurprisalRow, ...]
    ppl: float = field(init=False)

    def __post_init__(self):
        if not self.rows:
            raise ParameterError("surprisal table has no rows")
        for r in self.rows:
            if not math.isfinite(r.surprisal) or r.surprisal < 0:
                raise ParameterError(
                    f"surprisal must be finite and >= 0, got {r.surprisal!r} "
                    f"for {r.subword!r}")
        object.__setattr__(self, "ppl",
                           perplexity([r.surprisal for r in self.rows]))

    def sentences(self) -> dict[tuple[str, int], list[SurprisalRow]]:
        """Rows grouped by (article, sent), tokenization order preserved."""
        out: dict[tuple[str, int], list[SurprisalRow]] = {}
        for r in self.rows:
            out.setdefault((r.article, r.sent), []).append(r)
        return out


def write_surprisal_table(table: SurprisalTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(SURPRISAL_HEADER) + "\n")
        for r in table.rows:
            fh.write(f"{r.article}\t{r.sent}\t{r.idx}\t{r.subword}\t{r.surprisal!r}\n")


def read_surprisal_table(path: str | Path, lm_id: str | None = None) -> SurprisalTable:
    path = Path(path)
    rows: list[SurprisalRow] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != SURPRISAL_HEADER:
            raise SchemaError(
                f"{path}: expected header {' '.join(SURPRISAL_HEADER)!r}, got"
                f" {' '.join(header)!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise ParseError(f"line {line_no}: expected 5 columns, got {len(parts)}")
            try:
                rows.append(SurprisalRow(
                    article=parts[0], sent=int(parts[1]), idx=int(parts[2]),
                    subword=parts[3], surprisal=float(parts[4])))
            except ValueError:
                raise ParseError(f"line {line_no}: malformed row {line!r}") from None
    if not rows:
        raise ParseError(f"{path}: no surprisal rows")
    return SurprisalTable(lm_id=lm_id or path.stem, rows=tuple(rows))


def validate_surprisal_file(path: str | Path) -> list[str]:
    """Check an emitted surprisal TSV; returns a list of warnings (empty when
    the file is fully well formed). Hard schema violations raise."""
    table = read_surprisal_table(path)
    warnings_found: list[str] = []
    last: dict[tuple[str, int], int] = {}
    seen_sent: set[tuple[str, int]] = set()
    current: tuple[str, int] | None = None
    for r in table.rows:
        key = (r.article, r.sent)
        if key != current:
            if key in seen_sent:
                warnings_found.append(
                    f"rows for article {r.article} sent {r.sent} are not contiguous")
            seen_sent.add(key)
            current = key
            if r.idx != 0:
                warnings_found.append(
                    f"article {r.article} sent {r.sent} starts at idx {r.idx}, expected 0")
        else:
            if r.idx != last[key] + 1:
                warnings_found.append(
                    f"article {r.article} sent {r.sent}: idx {r.idx} does not "
                    f"follow {last[key]}")
        last[key] = r.idx
    return warnings_found


def segment_surprisal(surprisals: Sequence[float] | np.ndarray,
                      alignment: Alignment) -> np.ndarray:
    """Sum subword surprisals over each aligned segment range (the
    chain-rule identity: segment sums over a sentence add up to the
    sentence's total negative log-probability)."""
    values = np.asarray(surprisals, dtype=float)
    if alignment.n_subwords != len(values):
        raise IndexError(
            f"alignment covers {alignment.n_subwords} subwords, table slice has"
            f" {len(values)}")
    out = np.empty(len(alignment.ranges))
    for k, (lo, hi) in enumerate(alignment.ranges):
        if lo < 0 or hi >= len(values):
            raise IndexError(f"alignment range [{lo}, {hi}] out of bounds")
        out[k] = math.fsum(values[lo:hi + 1])
    return out


def spillover_features(seg_surprisals: Sequence[float],
                       prev_count: int = 2) -> dict[str, np.ndarray]:
    """Lagged surprisal covariates over one presentation-order sequence.

    With prev_count=0 (no spillover modeling) the lag columns are omitted
    entirely; with prev_count=2 the first positions hold NaN, to be dropped
    listwise downstream.
    """
    if prev_count not in (0, 2):
        raise ParameterError(f"prev_count must be 0 or 2, got {prev_count}")
    s = np.asarray(seg_surprisals, dtype=float)
    out = {"surprisal": s}
    if prev_count == 2:
        prev1 = np.full_like(s, np.nan)
        prev2 = np.full_like(s, np.nan)
        prev1[1:] = s[:-1]
        prev2[2:] = s[:-2]
        out["surprisal_prev_1"] = prev1
        out["surprisal_prev_2"] = prev2
    return out


def freq_feature(segment_subwords: Sequence[str], unigram_counts: Mapping[str, int],
                 total: int) -> float:
    """Log geometric mean of add-one-smoothed relative subword frequencies.

    Smoothed frequency of w is (count(w) + 1) / (total + |V|), so
    out-of-vocabulary subwords still get a strictly positive frequency.
    """
    if total <= 0:
        raise ParameterError(f"total count must be > 0, got {total}")
    if not segment_subwords:
        raise ParameterError("segment has no subwords")
    denom = total + len(unigram_counts)
    logs = [math.log((unigram_counts.get(w, 0) + 1) / denom) for w in segment_subwords]
    return math.fsum(logs) / len(logs)


def write_counts(counts: Mapping[str, int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(COUNTS_HEADER) + "\n")
        for sub, n in sorted(counts.items()):
            fh.write(f"{sub}\t{n}\n")


def read_counts(path: str | Path) -> dict[str, int]:
    counts: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != COUNTS_HEADER:
            raise SchemaError(f"{path}: expected header 'subword\\tcount'")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                counts[parts[0]] = int(parts[1])
            except (IndexError, ValueError):
                raise ParseError(f"line {line_no}: malformed count row {line!r}") from None
    return counts
