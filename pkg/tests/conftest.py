from __future__ import annotations

import csv

import pytest

from gazefit.corpus import Corpus, Segment, contains_punct_or_num

CORPUS_HEADER = ["text", "gd", "article", "subj", "screenN", "lineN",
                 "segmentN", "sentN", "tokenN", "length", "syn_category",
                 "sem_category", "n_dependents"]


def make_segment(**kwargs) -> Segment:
    """Segment with innocuous defaults; override what the test cares about."""
    base = dict(
        article_id="a01", subject_id="s01", text="word", gaze_duration=200.0,
        screen_n=1, line_n=1, segment_n=1, sent_n=1, token_n=1,
        is_line_first=False, is_line_last=False)
    base.update(kwargs)
    base.setdefault("length", len(base["text"]))
    base.setdefault("has_punct_or_num", contains_punct_or_num(base["text"]))
    return Segment(**base)


def sequential_corpus(gds, **overrides) -> Corpus:
    """One subject reading a single long line; one segment per gd value."""
    segs = [make_segment(gaze_duration=float(g), segment_n=i + 1, token_n=i + 1,
                         **overrides)
            for i, g in enumerate(gds)]
    return Corpus(segments=tuple(segs))


def write_corpus_tsv(path, rows, header=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header or CORPUS_HEADER)
        writer.writerows(rows)
    return path


@pytest.fixture
def tsv_row():
    def build(text="word", gd=200.0, article="a01", subj="s01", screen=1,
              line=1, segment=1, sent=1, token=1, length=None, syn="",
              sem="", ndep=""):
        return [text, gd, article, subj, screen, line, segment, sent, token,
                len(text) if length is None else length, syn, sem, ndep]
    return build
