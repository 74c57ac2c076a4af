"""Interpolated modified Kneser-Ney n-gram language models.

Estimation follows the count-of-count discount scheme (D1, D2, D3+ per
order, continuation counts below the top order, raw counts for grams that
start the sentence). The public API works in nats; the gram table keeps
ARPA-canonical base-10 logs so that an export/import round trip reproduces
every stored value bit for bit.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParameterError, ParseError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

LN10 = math.log(10.0)
BOS_LOG10 = -99.0  # conventional stand-in for "never predicted"
FALLBACK_DISCOUNT = 0.75


@dataclass(frozen=True)
class NGramModel:
    order: int
    table: dict  # gram tuple -> (log10 prob, log10 backoff or None)
    vocab: frozenset[str]
    discounts: dict | None = None  # order -> (D1, D2, D3+), for provenance

    @property
    def predictable_vocab(self) -> list[str]:
        """Every token the model can be asked to predict (excludes <s>)."""
        return sorted(self.vocab - {BOS})


def _raw_counts(sentences: Iterable[Sequence[str]], order: int) -> list[Counter]:
    counts = [Counter() for _ in range(order + 1)]  # counts[k] holds k-grams
    n_sentences = 0
    for tokens in sentences:
        seq = (BOS,) + tuple(tokens) + (EOS,)
        n_sentences += 1
        for k in range(1, order + 1):
            for i in range(len(seq) - k + 1):
                counts[k][seq[i:i + k]] += 1
    if n_sentences == 0:
        raise ParameterError("training corpus is empty")
    return counts


def _adjusted_counts(raw: list[Counter], order: int) -> list[dict]:
    """Continuation counts below the top order; raw counts at the top and
    for grams starting with <s> (which have no left extension)."""
    adj: list[dict] = [None] * (order + 1)
    adj[order] = dict(raw[order])
    for k in range(order - 1, 0, -1):
        cont: dict = defaultdict(int)
        for gram in raw[k + 1]:
            suffix = gram[1:]
            cont[suffix] += 1  # distinct keys imply distinct left extensions
        out = {}
        for gram, c in raw[k].items():
            out[gram] = c if gram[0] == BOS else cont.get(gram, 0)
        adj[k] = out
    return adj


def _discounts_for(counts: Iterable[int], order_label: int) -> tuple[float, float, float]:
    coc = Counter()
    for c in counts:
        if 1 <= c <= 4:
            coc[c] += 1
    n1, n2, n3, n4 = coc[1], coc[2], coc[3], coc[4]
    if min(n1, n2, n3, n4) == 0:
        warnings.warn(
            f"order {order_label}: too few count-of-counts for discount "
            f"estimation; falling back to a single discount {FALLBACK_DISCOUNT}",
            stacklevel=3)
        return (FALLBACK_DISCOUNT,) * 3
    y = n1 / (n1 + 2.0 * n2)
    d1 = 1.0 - 2.0 * y * n2 / n1
    d2 = 2.0 - 3.0 * y * n3 / n2
    d3 = 3.0 - 4.0 * y * n4 / n3
    if not (0.0 < d1 <= 1.0 and 0.0 < d2 <= 2.0 and 0.0 < d3 <= 3.0):
        warnings.warn(
            f"order {order_label}: estimated discounts out of range; falling "
            f"back to a single discount {FALLBACK_DISCOUNT}",
            stacklevel=3)
        return (FALLBACK_DISCOUNT,) * 3
    return d1, d2, d3


def _discount(c: int, d: tuple[float, float, float]) -> float:
    if c >= 3:
        return d[2]
    if c == 2:
        return d[1]
    if c == 1:
        return d[0]
    return 0.0


def train_kn(sentences: Iterable[Sequence[str]], order: int) -> NGramModel:
    """Estimate an interpolated modified Kneser-Ney model.

    Deterministic given identical input. Orders whose count-of-count
    statistics are unusable fall back to a single 0.75 discount with a
    warning.
    """
    if order < 2:
        raise ParameterError(f"order must be >= 2, got {order}")
    sentences = list(sentences)
    raw = _raw_counts(sentences, order)
    adj = _adjusted_counts(raw, order)

    vocab = {BOS, EOS, UNK}
    for gram in raw[1]:
        vocab.add(gram[0])
    predictable = sorted(vocab - {BOS})
    v_star = len(predictable)

    discounts = {}
    for k in range(1, order + 1):
        entries = [c for g, c in adj[k].items() if not (k == 1 and g[0] == BOS)]
        discounts[k] = _discounts_for(entries, k)

    # Unigram distribution over the predictable vocabulary, interpolated
    # with the uniform distribution so unseen symbols keep positive mass.
    d1 = discounts[1]
    uni_counts = {g[0]: c for g, c in adj[1].items() if g[0] != BOS}
    total1 = sum(uni_counts.values())
    lam1 = sum(_discount(c, d1) for c in uni_counts.values()) / total1
    prob: dict[tuple[str, ...], float] = {}
    for w in predictable:
        c = uni_counts.get(w, 0)
        prob[(w,)] = max(c - _discount(c, d1), 0.0) / total1 + lam1 / v_star

    backoff: dict[tuple[str, ...], float] = {}
    for k in range(2, order + 1):
        dk = discounts[k]
        by_hist: dict[tuple, list] = defaultdict(list)
        for gram, c in adj[k].items():
            by_hist[gram[:-1]].append((gram[-1], c))
        for hist, items in by_hist.items():
            total = sum(c for _, c in items)
            lam = sum(_discount(c, dk) for _, c in items) / total
            backoff[hist] = lam
            for w, c in items:
                lower = prob[hist[1:] + (w,)] if len(hist) > 1 else prob[(w,)]
                prob[hist + (w,)] = max(c - _discount(c, dk), 0.0) / total + lam * lower

    table: dict[tuple[str, ...], tuple[float, float | None]] = {}
    for gram, p in prob.items():
        bow = backoff.get(gram)
        table[gram] = (math.log10(p), None if bow is None else math.log10(bow))
    bos_bow = backoff.get((BOS,))
    table[(BOS,)] = (BOS_LOG10, None if bos_bow is None else math.log10(bos_bow))

    return NGramModel(order=order, table=table, vocab=frozenset(vocab),
                      discounts=discounts)


def logprob(model: NGramModel, context: Sequence[str], word: str) -> float:
    """log p(word | context) in nats, via backoff; finite for all inputs.

    Out-of-vocabulary tokens (in the context or as the predicted word) map
    to the unknown symbol; the context is truncated to the model order.
    """
    vocab = model.vocab
    w = word if word in vocab else UNK
    ctx = tuple(t if t in vocab else UNK for t in context)[max(0, len(context) - (model.order - 1)):]

    acc10 = 0.0
    while True:
        entry = model.table.get(ctx + (w,))
        if entry is not None:
            return (entry[0] + acc10) * LN10
        if not ctx:  # unigrams cover the whole vocabulary
            raise KeyError(f"no unigram entry for {w!r}; corrupt model")
        centry = model.table.get(ctx)
        if centry is not None and centry[1] is not None:
            acc10 += centry[1]
        ctx = ctx[1:]


def sentence_surprisals(model: NGramModel, tokens: Sequence[str],
                        include_eos: bool = False) -> list[float]:
    """Per-token surprisal (nats) with sentence-internal context.

    The begin marker pads the context and is never scored; the end marker is
    scored only when `include_eos` is set. Surprisal tables keep text tokens
    only, so exp(mean) over a table equals its perplexity exactly.
    """
    context: list[str] = [BOS]
    out: list[float] = []
    for tok in tokens:
        out.append(-logprob(model, context, tok))
        context.append(tok)
    if include_eos:
        out.append(-logprob(model, context, EOS))
    return out


def perplexity(surprisals: Sequence[float], n: int | None = None) -> float:
    """exp of the mean surprisal: the inverse geometric mean of the
    underlying next-token probabilities. LM-agnostic."""
    if n is None:
        n = len(surprisals)
    if n <= 0 or len(surprisals) == 0:
        raise ParameterError("perplexity requires at least one surprisal")
    if n != len(surprisals):
        raise ParameterError(f"n={n} does not match sequence length {len(surprisals)}")
    total = math.fsum(surprisals)
    if not math.isfinite(total):
        raise ParameterError("surprisals must be finite")
    return math.exp(total / n)


def write_arpa(model: NGramModel, path: str | Path) -> None:
    """Standard ARPA export (base-10 logs, full float precision)."""
    grams_by_order: dict[int, list] = defaultdict(list)
    for gram in model.table:
        grams_by_order[len(gram)].append(gram)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        for k in range(1, model.order + 1):
            fh.write(f"ngram {k}={len(grams_by_order.get(k, ()))}\n")
        fh.write("\n")
        for k in range(1, model.order + 1):
            fh.write(f"\\{k}-grams:\n")
            for gram in sorted(grams_by_order.get(k, ())):
                p10, bow10 = model.table[gram]
                line = f"{p10!r}\t{' '.join(gram)}"
                if bow10 is not None:
                    line += f"\t{bow10!r}"
                fh.write(line + "\n")
            fh.write("\n")
        fh.write("\\end\\\n")


def read_arpa(path: str | Path) -> NGramModel:
    """Parse an ARPA file produced by write_arpa (or a compatible toolkit)."""
    table: dict[tuple[str, ...], tuple[float, float | None]] = {}
    declared: dict[int, int] = {}
    order = 0
    section = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip("\n")
            if not line.strip() or line == "\\data\\":
                continue
            if line == "\\end\\":
                break
            if line.startswith("ngram "):
                try:
                    k, n = line[len("ngram "):].split("=")
                    declared[int(k)] = int(n)
                except ValueError:
                    raise ParseError(f"line {line_no}: bad ngram declaration {line!r}") from None
                continue
            if line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:-len("-grams:")])
                order = max(order, section)
                continue
            parts = line.split("\t")
            if len(parts) == 1:  # tolerate space-separated files
                parts = line.split()
                if len(parts) < section + 1:
                    raise ParseError(f"line {line_no}: malformed gram line {line!r}")
                parts = [parts[0], " ".join(parts[1:section + 1])] + parts[section + 1:]
            if len(parts) not in (2, 3):
                raise ParseError(f"line {line_no}: malformed gram line {line!r}")
            try:
                p10 = float(parts[0])
                gram = tuple(parts[1].split(" "))
                bow10 = float(parts[2]) if len(parts) == 3 else None
            except ValueError:
                raise ParseError(f"line {line_no}: malformed gram line {line!r}") from None
            if len(gram) != section:
                raise ParseError(f"line {line_no}: {len(gram)}-gram in {section}-gram section")
            table[gram] = (p10, bow10)
    if not table:
        raise ParseError(f"{path}: no n-gram entries found")
    for k, n in declared.items():
        found = sum(1 for g in table if len(g) == k)
        if found != n:
            raise ParseError(f"{path}: declared {n} {k}-grams, found {found}")
    vocab = {g[0] for g in table if len(g) == 1} | {BOS, EOS, UNK}
    return NGramModel(order=order, table=table, vocab=frozenset(vocab))
