"""Byte-pair-encoding subword segmentation and segment alignment.

Words receive a leading boundary marker; merges learned on a training
corpus are replayed greedily in training order at encode time. Characters
below the coverage quantile map to the unknown symbol.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import AlignmentError, ParameterError

BOUNDARY = "▁"  # word-initial marker
UNK = "<unk>"


@dataclass(frozen=True)
class BpeModel:
    vocab: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    character_coverage: float
    vocab_size: int
    unk: str = UNK
    boundary: str = BOUNDARY

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(v for v in self.vocab if len(v) == 1 or v == self.unk)


@dataclass(frozen=True)
class Alignment:
    """Maps each segment index to the inclusive subword range [first, last]."""

    ranges: tuple[tuple[int, int], ...]
    n_subwords: int

    def __getitem__(self, segment_index: int) -> tuple[int, int]:
        return self.ranges[segment_index]

    def __len__(self) -> int:
        return len(self.ranges)


def _words(lines: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for line in lines:
        for word in line.split():
            counts[word] += 1
    return counts


def train_bpe(text: Iterable[str] | str, vocab_size: int,
              character_coverage: float = 1.0) -> BpeModel:
    """Learn merges until the vocabulary reaches `vocab_size`.

    Deterministic: pair-frequency ties break on the lexicographically
    smaller pair. Characters outside the coverage quantile are replaced by
    the unknown symbol before merging.
    """
    if isinstance(text, str):
        text = text.splitlines() or [text]
    if not 0 < character_coverage <= 1:
        raise ParameterError(f"character_coverage must be in (0, 1], got {character_coverage}")
    word_counts = _words(text)
    if not word_counts:
        raise ParameterError("training text contains no words")

    char_counts: Counter = Counter()
    for word, n in word_counts.items():
        for ch in word:
            char_counts[ch] += n
    total_chars = sum(char_counts.values())
    covered: set[str] = set()
    running = 0
    for ch, n in sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if running >= character_coverage * total_chars:
            break
        covered.add(ch)
        running += n

    alphabet = sorted(covered) + [BOUNDARY, UNK]
    if vocab_size < len(alphabet):
        raise ParameterError(
            f"vocab_size {vocab_size} smaller than alphabet of {len(alphabet)} symbols")

    # Symbol sequences per word, boundary-marked, rare chars replaced.
    seqs: dict[tuple[str, ...], int] = {}
    for word, n in word_counts.items():
        symbols = (BOUNDARY,) + tuple(ch if ch in covered else UNK for ch in word)
        seqs[symbols] = seqs.get(symbols, 0) + n

    vocab = list(alphabet)
    merges: list[tuple[str, str]] = []
    while len(vocab) < vocab_size:
        pair_counts: Counter = Counter()
        for symbols, n in seqs.items():
            for a, b in zip(symbols, symbols[1:]):
                if UNK in (a, b):  # the unknown symbol never merges
                    continue
                pair_counts[(a, b)] += n
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        vocab.append(best[0] + best[1])
        # Distinct keys always spell distinct strings, so no count collisions.
        seqs = {_merge_once(sym, best): n for sym, n in seqs.items()}

    return BpeModel(vocab=tuple(vocab), merges=tuple(merges),
                    character_coverage=character_coverage, vocab_size=vocab_size)


def _merge_once(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    """Replace every non-overlapping occurrence of `pair`, left to right."""
    out: list[str] = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(pair[0] + pair[1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def encode(model: BpeModel, text: str) -> list[str]:
    """Segment whitespace-delimited text into subwords.

    Applies the learned merges greedily in training order. Unknown
    characters fall back to the unknown symbol; empty input encodes to an
    empty sequence.
    """
    alphabet = model.alphabet
    subwords: list[str] = []
    for word in text.split():
        symbols = tuple([model.boundary]
                        + [ch if ch in alphabet else model.unk for ch in word])
        for pair in model.merges:
            if len(symbols) < 2:
                break
            symbols = _merge_once(symbols, pair)
        subwords.extend(symbols)
    return subwords


def detokenize(subwords: Sequence[str], boundary: str = BOUNDARY) -> str:
    """Invert encode: boundary markers become spaces, leading space stripped."""
    return "".join(subwords).replace(boundary, " ").lstrip(" ")


def align(subwords: Sequence[str], segments: Sequence[str],
          boundary: str = BOUNDARY) -> Alignment:
    """Map each segment to the minimal contiguous subword range covering it.

    Matching ignores whitespace and boundary markers: the marker-stripped
    subword stream must spell out the space-stripped segment texts in order.
    A subword straddling a segment boundary raises AlignmentError naming
    both indices.
    """
    pieces = [sw.replace(boundary, "").replace(" ", "") for sw in subwords]
    seg_chars = [seg.replace(" ", "") for seg in segments]
    if any(not s for s in seg_chars):
        bad = next(k for k, s in enumerate(seg_chars) if not s)
        raise AlignmentError(f"segment {bad} has no characters", segment_index=bad)
    target = "".join(seg_chars)

    ranges: list[tuple[int, int]] = []
    seg_idx = 0
    start = 0
    pos = 0
    need = len(seg_chars[0])
    for i, piece in enumerate(pieces):
        if seg_idx >= len(segments):
            raise AlignmentError(
                f"{len(subwords) - i} trailing subwords beyond the last segment",
                segment_index=len(segments) - 1, subword_index=i)
        if target[pos:pos + len(piece)] != piece:
            raise AlignmentError(
                f"subword {i} ({subwords[i]!r}) does not match segment text at"
                f" character offset {pos}",
                segment_index=seg_idx, subword_index=i)
        pos += len(piece)
        need -= len(piece)
        if need < 0:
            raise AlignmentError(
                f"subword {i} ({subwords[i]!r}) straddles the boundary after"
                f" segment {seg_idx}",
                segment_index=seg_idx, subword_index=i)
        if need == 0:
            ranges.append((start, i))
            seg_idx += 1
            start = i + 1
            need = len(seg_chars[seg_idx]) if seg_idx < len(segments) else 0
    if seg_idx != len(segments):
        raise AlignmentError(
            f"subword stream exhausted at segment {seg_idx} of {len(segments)}",
            segment_index=seg_idx, subword_index=len(subwords))
    return Alignment(ranges=tuple(ranges), n_subwords=len(subwords))


def encode_segments(model: BpeModel, segments: Sequence[str]) -> tuple[list[str], Alignment]:
    """Encode each segment independently and return the concatenated stream
    with its (always valid) alignment."""
    stream: list[str] = []
    ranges: list[tuple[int, int]] = []
    for seg in segments:
        sub = encode(model, seg)
        if not sub:
            raise AlignmentError(f"segment {len(ranges)} encoded to zero subwords",
                                 segment_index=len(ranges))
        ranges.append((len(stream), len(stream) + len(sub) - 1))
        stream.extend(sub)
    return stream, Alignment(ranges=tuple(ranges), n_subwords=len(stream))


def save_model(model: BpeModel, prefix: str | Path) -> None:
    """Write <prefix>.merges.txt, <prefix>.vocab.txt and <prefix>.meta.json."""
    prefix = str(prefix)
    with open(prefix + ".merges.txt", "w", encoding="utf-8") as fh:
        for a, b in model.merges:
            fh.write(f"{a} {b}\n")
    with open(prefix + ".vocab.txt", "w", encoding="utf-8") as fh:
        for sym in model.vocab:
            fh.write(sym + "\n")
    with open(prefix + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump({"vocab_size": model.vocab_size,
                   "character_coverage": model.character_coverage,
                   "unk": model.unk, "boundary": model.boundary}, fh, indent=1)
        fh.write("\n")


def load_model(prefix: str | Path) -> BpeModel:
    prefix = str(prefix)
    with open(prefix + ".merges.txt", encoding="utf-8") as fh:
        merges = tuple(tuple(line.rstrip("\n").split(" ", 1)) for line in fh if line.strip())
    with open(prefix + ".vocab.txt", encoding="utf-8") as fh:
        vocab = tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
    meta_path = Path(prefix + ".meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return BpeModel(vocab=vocab, merges=merges,
                    character_coverage=meta.get("character_coverage", 1.0),
                    vocab_size=meta.get("vocab_size", len(vocab)),
                    unk=meta.get("unk", UNK), boundary=meta.get("boundary", BOUNDARY))
