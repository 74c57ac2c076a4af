"""Eye-tracking corpus model, TSV ingestion, and exclusion filters.

A data point is one segment read by one subject, carrying a first-pass gaze
duration plus positional counters and optional linguistic annotations.
"""

from __future__ import annotations

import csv
import math
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

import pandas as pd

from .errors import EmptyCorpusError, ParameterError, ParseError, SchemaError

COLUMNS = (
    "text", "gd", "article", "subj", "screenN", "lineN", "segmentN",
    "sentN", "tokenN", "length", "syn_category", "sem_category",
    "n_dependents",
)
MANDATORY = (
    "text", "gd", "article", "subj", "screenN", "lineN", "segmentN",
    "sentN", "tokenN",
)

SYN_CATEGORIES = ("nominal", "verbal", "modifier", "other")
SEM_CATEGORIES = ("relation", "subject", "action", "product", "nature")


@dataclass(frozen=True)
class Segment:
    """One data point: a text segment read by one subject."""

    article_id: str
    subject_id: str
    text: str
    gaze_duration: float
    screen_n: int
    line_n: int
    segment_n: int
    sent_n: int
    token_n: int
    length: int
    has_punct_or_num: bool
    is_line_first: bool
    is_line_last: bool
    syn_category: str | None = None
    sem_category: str | None = None
    n_dependents: int | None = None


@dataclass(frozen=True)
class Corpus:
    """Immutable ordered collection of segments (reading order per subject)."""

    segments: tuple[Segment, ...]
    language_tag: str = "und"
    metadata: str = ""

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)


@dataclass(frozen=True)
class FilterPolicy:
    """Which exclusion criteria to apply and the SD cutoff for gaze durations."""

    sd_cutoff: float = 3.0
    exclude_zero_gd: bool = True
    exclude_punct_num: bool = True
    exclude_next_punct_num: bool = True
    exclude_line_boundary: bool = True

    def __post_init__(self):
        if not self.sd_cutoff > 0:
            raise ParameterError(f"sd_cutoff must be > 0, got {self.sd_cutoff}")


@dataclass(frozen=True)
class CorpusStats:
    n_articles: int
    n_sentences: int
    n_segments: int
    n_data_points: int
    mean_gd: float
    mean_subwords_per_segment: float | None = None


def contains_punct_or_num(text: str) -> bool:
    """True if any character is Unicode punctuation or a decimal digit."""
    for ch in text:
        cat = unicodedata.category(ch)
        if cat.startswith("P") or cat == "Nd":
            return True
    return False


def _parse_int(value: str, column: str, line_no: int, minimum: int = 1) -> int:
    try:
        out = int(value)
    except ValueError:
        raise ParseError(f"line {line_no}: non-integer {column} {value!r}") from None
    if out < minimum:
        raise ParseError(f"line {line_no}: {column} must be >= {minimum}, got {out}")
    return out


def load_corpus(path: str | Path, schema: Mapping[str, str] | None = None,
                language_tag: str = "und") -> Corpus:
    """Read a UTF-8 tab-separated corpus file with a header row.

    `schema` optionally maps canonical column names (see COLUMNS) to the
    header names used in the file. Annotation columns may be missing or
    empty; mandatory columns must be present for every row.
    """
    path = Path(path)
    name_of = dict((c, c) for c in COLUMNS)
    if schema:
        name_of.update(schema)

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        col_idx = {name: i for i, name in enumerate(header)}
        for canon in MANDATORY:
            if name_of[canon] not in col_idx:
                raise SchemaError(
                    f"{path}: missing mandatory column {name_of[canon]!r}")

        def get(row, canon):
            idx = col_idx.get(name_of[canon])
            if idx is None or idx >= len(row):
                return ""
            return row[idx]

        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and row[0] == ""):
                continue
            text = get(row, "text")
            raw_gd = get(row, "gd")
            try:
                gd = float(raw_gd)
            except ValueError:
                raise ParseError(
                    f"line {line_no}: non-numeric gaze duration {raw_gd!r}") from None
            if not math.isfinite(gd) or gd < 0:
                raise ParseError(f"line {line_no}: gaze duration must be finite and >= 0")
            length_raw = get(row, "length")
            length = _parse_int(length_raw, "length", line_no) if length_raw else len(text)
            syn = get(row, "syn_category") or None
            if syn is not None and syn not in SYN_CATEGORIES:
                raise ParseError(f"line {line_no}: unknown syn_category {syn!r}")
            sem = get(row, "sem_category") or None
            if sem is not None and sem not in SEM_CATEGORIES:
                raise ParseError(f"line {line_no}: unknown sem_category {sem!r}")
            ndep_raw = get(row, "n_dependents")
            ndep = _parse_int(ndep_raw, "n_dependents", line_no, minimum=0) if ndep_raw else None
            rows.append(dict(
                line_no=line_no,
                article_id=get(row, "article"),
                subject_id=get(row, "subj"),
                text=text,
                gaze_duration=gd,
                screen_n=_parse_int(get(row, "screenN"), "screenN", line_no),
                line_n=_parse_int(get(row, "lineN"), "lineN", line_no),
                segment_n=_parse_int(get(row, "segmentN"), "segmentN", line_no),
                sent_n=_parse_int(get(row, "sentN"), "sentN", line_no),
                token_n=_parse_int(get(row, "tokenN"), "tokenN", line_no),
                length=length,
                syn_category=syn,
                sem_category=sem,
                n_dependents=ndep,
            ))

    _check_invariants(rows)
    segments = tuple(_build_segments(rows))
    return Corpus(segments=segments, language_tag=language_tag, metadata=str(path))


def _check_invariants(rows: list[dict]) -> None:
    seen_points: set[tuple] = set()
    last_token: dict[tuple, tuple[int, int]] = {}
    for r in rows:
        key = (r["article_id"], r["subject_id"], r["screen_n"], r["segment_n"])
        if key in seen_points:
            raise ParseError(
                f"line {r['line_no']}: duplicate data point "
                f"(article={key[0]}, subj={key[1]}, screen={key[2]}, segment={key[3]})")
        seen_points.add(key)
        skey = (r["article_id"], r["subject_id"], r["sent_n"])
        prev = last_token.get(skey)
        if prev is not None and r["token_n"] <= prev[0]:
            raise ParseError(
                f"line {r['line_no']}: tokenN {r['token_n']} not increasing "
                f"within sentence (previous {prev[0]} at line {prev[1]})")
        last_token[skey] = (r["token_n"], r["line_no"])


def _build_segments(rows: list[dict]) -> Iterable[Segment]:
    # Line boundary flags come from presentation order within
    # subject x article x screen x line.
    first_in_line: set[int] = set()
    last_in_line: set[int] = set()
    current: tuple | None = None
    prev_i: int | None = None
    for i, r in enumerate(rows):
        key = (r["subject_id"], r["article_id"], r["screen_n"], r["line_n"])
        if key != current:
            first_in_line.add(i)
            if prev_i is not None:
                last_in_line.add(prev_i)
            current = key
        prev_i = i
    if prev_i is not None:
        last_in_line.add(prev_i)

    for i, r in enumerate(rows):
        r.pop("line_no")
        yield Segment(
            has_punct_or_num=contains_punct_or_num(r["text"]),
            is_line_first=i in first_in_line,
            is_line_last=i in last_in_line,
            **r,
        )


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back out in the canonical TSV schema."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(COLUMNS)
        for s in corpus:
            writer.writerow([
                s.text, repr(s.gaze_duration), s.article_id, s.subject_id,
                s.screen_n, s.line_n, s.segment_n, s.sent_n, s.token_n,
                s.length,
                s.syn_category or "", s.sem_category or "",
                "" if s.n_dependents is None else s.n_dependents,
            ])


def sd_reference_stats(corpus: Corpus) -> tuple[float, float]:
    """Pooled mean and population SD of gaze duration over nonzero-GD points.

    Computed once over the whole corpus and meant to be frozen: passing the
    result back into apply_filters makes filtering idempotent.
    """
    gds = [s.gaze_duration for s in corpus if s.gaze_duration > 0]
    if not gds:
        raise EmptyCorpusError("no nonzero gaze durations to compute SD stats from")
    mean = sum(gds) / len(gds)
    var = sum((g - mean) ** 2 for g in gds) / len(gds)
    return mean, math.sqrt(var)


def apply_filters(corpus: Corpus, policy: FilterPolicy,
                  sd_stats: tuple[float, float] | None = None) -> Corpus:
    """Apply the exclusion criteria and return a new corpus.

    Removal order: zero-GD points, SD outliers (pooled stats over the
    surviving nonzero-GD points unless frozen stats are supplied), segments
    containing punctuation/numerals, segments whose same-screen successor
    contains punctuation/numerals, then line-first/line-last segments.
    """
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot filter an empty corpus")

    segs = list(corpus.segments)
    keep = [True] * len(segs)

    if policy.exclude_zero_gd:
        for i, s in enumerate(segs):
            if s.gaze_duration == 0:
                keep[i] = False

    if sd_stats is None:
        mean, sd = sd_reference_stats(corpus)
    else:
        mean, sd = sd_stats
    cut = policy.sd_cutoff * sd
    for i, s in enumerate(segs):
        if keep[i] and abs(s.gaze_duration - mean) > cut:
            keep[i] = False

    if policy.exclude_punct_num:
        for i, s in enumerate(segs):
            if keep[i] and s.has_punct_or_num:
                keep[i] = False

    if policy.exclude_next_punct_num:
        # Successor in the same subject's presentation order, same screen;
        # evaluated on the unfiltered sequence (the original text order).
        for i, s in enumerate(segs):
            if not keep[i] or i + 1 >= len(segs):
                continue
            nxt = segs[i + 1]
            same_run = (nxt.subject_id == s.subject_id
                        and nxt.article_id == s.article_id
                        and nxt.screen_n == s.screen_n)
            if same_run and nxt.has_punct_or_num:
                keep[i] = False

    if policy.exclude_line_boundary:
        for i, s in enumerate(segs):
            if keep[i] and (s.is_line_first or s.is_line_last):
                keep[i] = False

    survivors = tuple(s for i, s in enumerate(segs) if keep[i])
    if not survivors:
        raise EmptyCorpusError("all data points excluded by the filter policy")
    return replace(corpus, segments=survivors)


def corpus_stats(corpus: Corpus, alignments=None) -> CorpusStats:
    """Headline counts and mean gaze duration, optionally with mean subwords
    per segment from one or more segment-to-subword alignments."""
    articles = {s.article_id for s in corpus}
    sentences = {(s.article_id, s.sent_n) for s in corpus}
    unique_segments = {(s.article_id, s.screen_n, s.segment_n) for s in corpus}
    n_points = len(corpus)
    mean_gd = (sum(s.gaze_duration for s in corpus) / n_points) if n_points else 0.0

    mean_sub = None
    if alignments is not None:
        if hasattr(alignments, "values") and not hasattr(alignments, "n_subwords"):
            alignment_list = list(alignments.values())
        elif isinstance(alignments, (list, tuple)):
            alignment_list = list(alignments)
        else:
            alignment_list = [alignments]
        total_sub = sum(a.n_subwords for a in alignment_list)
        total_seg = sum(len(a.ranges) for a in alignment_list)
        mean_sub = total_sub / total_seg if total_seg else 0.0

    return CorpusStats(
        n_articles=len(articles),
        n_sentences=len(sentences),
        n_segments=len(unique_segments),
        n_data_points=n_points,
        mean_gd=mean_gd,
        mean_subwords_per_segment=mean_sub,
    )


def to_frame(corpus: Corpus) -> pd.DataFrame:
    """Data-point table used by the regression layers."""
    return pd.DataFrame({
        "article": [s.article_id for s in corpus],
        "subj": [s.subject_id for s in corpus],
        "text": [s.text for s in corpus],
        "gd": [s.gaze_duration for s in corpus],
        "screenN": [s.screen_n for s in corpus],
        "lineN": [s.line_n for s in corpus],
        "segmentN": [s.segment_n for s in corpus],
        "sentN": [s.sent_n for s in corpus],
        "tokenN": [s.token_n for s in corpus],
        "length": [s.length for s in corpus],
        "syn_category": [s.syn_category for s in corpus],
        "sem_category": [s.sem_category for s in corpus],
        "n_dependents": [float("nan") if s.n_dependents is None else s.n_dependents
                         for s in corpus],
    })
