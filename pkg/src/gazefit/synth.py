"""Synthetic eye-tracking corpora and LM suites with known ground truth.

The generator mirrors the gaze-duration regression generatively: per-subword
surprisals are drawn positive, gaze durations follow the linear predictor
plus crossed article/subject intercepts and Gaussian (or log-normal)
residuals. Everything is deterministic under the seed, and the emitted
files use the toolkit's corpus and surprisal formats exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bpe import BOUNDARY
from .corpus import Corpus, Segment, write_corpus
from .errors import ParameterError
from .surprisal import (SurprisalRow, SurprisalTable, write_counts,
                        write_surprisal_table)

SYN_CATEGORY_PROBS = (("nominal", 0.45), ("verbal", 0.25),
                      ("modifier", 0.20), ("other", 0.10))
SEM_CATEGORIES = ("relation", "subject", "action", "product", "nature")

_CONSONANTS = "bdfgkmnprst"
_VOWELS = "aeiou"
_SYLLABLES = tuple(c + v for c in _CONSONANTS for v in _VOWELS)


@dataclass(frozen=True)
class SynthSpec:
    n_articles: int = 4
    n_subjects: int = 6
    n_sentences: int = 5              # per article
    segments_per_sentence: int = 8
    beta: tuple[float, float] = (250.0, 8.0)   # intercept, surprisal slope
    sd_article: float = 10.0
    sd_subject: float = 8.0
    sd_resid: float = 30.0
    position_slope: float = 0.0       # GD change per token position
    category_offsets: Mapping[str, float] | None = None
    surprisal_category_offsets: Mapping[str, float] | None = None
    response: str = "gaussian"        # or "lognormal"
    mean_subword_surprisal: float = 6.0
    max_subwords_per_segment: int = 4
    sentences_per_screen: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_articles", "n_subjects", "n_sentences",
                     "segments_per_sentence", "max_subwords_per_segment",
                     "sentences_per_screen"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        for name in ("sd_article", "sd_subject", "sd_resid"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if self.response not in ("gaussian", "lognormal"):
            raise ParameterError(f"unknown response kind {self.response!r}")


@dataclass(frozen=True)
class SynthData:
    corpus: Corpus
    table: SurprisalTable
    truth: dict
    spec: SynthSpec = field(repr=False, default=None)


@dataclass(frozen=True)
class LmConfig:
    lm_id: str
    architecture: str
    data_size: str
    updates: int
    seed: int
    target_ppl: float
    noise_sigma: float

    def meta(self) -> dict:
        return {"lm_id": self.lm_id, "architecture": self.architecture,
                "data_size": self.data_size, "updates": self.updates,
                "seed": self.seed}


def _draw_segments(spec: SynthSpec, rng: np.random.Generator):
    """Article texts: per-segment subword surfaces, surprisals, annotations."""
    cats, cat_p = zip(*SYN_CATEGORY_PROBS)
    segments = []
    rows: list[SurprisalRow] = []
    for a in range(spec.n_articles):
        article = f"a{a + 1:02d}"
        for s in range(spec.n_sentences):
            sent_n = s + 1
            idx = 0
            for t in range(spec.segments_per_sentence):
                n_sub = int(rng.integers(1, spec.max_subwords_per_segment + 1))
                surfaces = ["".join(rng.choice(_SYLLABLES,
                                               size=int(rng.integers(1, 3))))
                            for _ in range(n_sub)]
                surprisals = rng.gamma(2.0, spec.mean_subword_surprisal / 2.0,
                                       size=n_sub)
                syn = str(rng.choice(cats, p=cat_p))
                if spec.surprisal_category_offsets:
                    surprisals = surprisals + (
                        spec.surprisal_category_offsets.get(syn, 0.0) / n_sub)
                surprisals = np.maximum(surprisals, 1e-9)
                subwords = [(BOUNDARY if j == 0 else "") + surf
                            for j, surf in enumerate(surfaces)]
                for sub, val in zip(subwords, surprisals):
                    rows.append(SurprisalRow(article=article, sent=sent_n,
                                             idx=idx, subword=sub,
                                             surprisal=float(val)))
                    idx += 1
                segments.append(dict(
                    article=article, sent_n=sent_n, token_n=t + 1,
                    text="".join(surfaces), surprisal=float(surprisals.sum()),
                    syn_category=syn,
                    sem_category=str(rng.choice(SEM_CATEGORIES)),
                    n_dependents=int(rng.integers(0, 4))))
    return segments, rows


def generate(spec: SynthSpec) -> SynthData:
    """Draw one corpus plus its generating surprisal table.

    Gaussian gaze durations are floored at zero to keep the corpus
    invariants; the number of floored draws is reported in the ground truth.
    """
    rng = np.random.default_rng(spec.seed)
    seg_info, rows = _draw_segments(spec, rng)
    articles = [f"a{a + 1:02d}" for a in range(spec.n_articles)]
    subjects = [f"s{s + 1:02d}" for s in range(spec.n_subjects)]
    u_article = dict(zip(articles, rng.normal(0.0, spec.sd_article,
                                              spec.n_articles)))
    u_subject = dict(zip(subjects, rng.normal(0.0, spec.sd_subject,
                                              spec.n_subjects)))

    by_article: dict[str, list[dict]] = {}
    for seg in seg_info:
        by_article.setdefault(seg["article"], []).append(seg)

    cat_offsets = spec.category_offsets or {}
    beta0, beta1 = spec.beta
    segments: list[Segment] = []
    n_clipped = 0
    for article in articles:
        segs = by_article[article]
        for subject in subjects:
            screen = 0
            seg_serial = 0
            last_sent = None
            for seg in segs:
                if seg["sent_n"] != last_sent:
                    last_sent = seg["sent_n"]
                    if (seg["sent_n"] - 1) % spec.sentences_per_screen == 0:
                        screen += 1
                        seg_serial = 0
                seg_serial += 1
                lp = (beta0 + beta1 * seg["surprisal"]
                      + spec.position_slope * seg["token_n"]
                      + cat_offsets.get(seg["syn_category"], 0.0))
                noise = u_article[article] + u_subject[subject] + rng.normal(0.0, spec.sd_resid)
                if spec.response == "gaussian":
                    gd = lp + noise
                    if gd < 0:
                        gd = 0.0
                        n_clipped += 1
                else:
                    gd = math.exp(lp + noise)
                # One sentence per displayed line, so line boundaries fall on
                # sentence edges.
                segments.append(Segment(
                    article_id=article, subject_id=subject, text=seg["text"],
                    gaze_duration=float(gd), screen_n=screen,
                    line_n=(seg["sent_n"] - 1) % spec.sentences_per_screen + 1,
                    segment_n=seg_serial, sent_n=seg["sent_n"],
                    token_n=seg["token_n"], length=len(seg["text"]),
                    has_punct_or_num=False,
                    is_line_first=seg["token_n"] == 1,
                    is_line_last=seg["token_n"] == spec.segments_per_sentence,
                    syn_category=seg["syn_category"],
                    sem_category=seg["sem_category"],
                    n_dependents=seg["n_dependents"]))

    corpus = Corpus(segments=tuple(segments), language_tag="syn",
                    metadata=f"synthetic seed={spec.seed}")
    table = SurprisalTable(lm_id="truth", rows=tuple(rows))
    truth = {
        "spec": _spec_dict(spec),
        "n_data_points": len(segments),
        "n_unique_segments": len(seg_info),
        "n_subwords": len(rows),
        "n_clipped": n_clipped,
        "article_effects": {a: float(v) for a, v in u_article.items()},
        "subject_effects": {s: float(v) for s, v in u_subject.items()},
        "true_ppl": table.ppl,
    }
    return SynthData(corpus=corpus, table=table, truth=truth, spec=spec)


def _spec_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    d["beta"] = list(spec.beta)
    for key in ("category_offsets", "surprisal_category_offsets"):
        if d[key] is not None:
            d[key] = dict(d[key])
    return d


def make_suite(n_lms: int, shape: str, seed: int = 0,
               ppl_range: tuple[float, float] = (30.0, 30000.0),
               turning_ppl: float = 400.0,
               noise_range: tuple[float, float] = (0.05, 1.5)) -> list[LmConfig]:
    """LM configurations whose surprisal quality varies with target PPL.

    monotone: noise grows with PPL, reproducing the English-style regime.
    u_shaped: noise is minimal at the turning PPL, reproducing the
    Japanese-style regime (quality degrades on both sides).
    """
    if n_lms < 3:
        raise ParameterError(f"need at least 3 LMs, got {n_lms}")
    if shape not in ("monotone", "u_shaped"):
        raise ParameterError(f"unknown suite shape {shape!r}")
    lo, hi = ppl_range
    ppls = np.exp(np.linspace(math.log(lo), math.log(hi), n_lms))
    s_lo, s_hi = noise_range
    if shape == "monotone":
        sigmas = np.linspace(s_lo, s_hi, n_lms)
    else:
        dist = np.abs(np.log(ppls) - math.log(turning_ppl))
        sigmas = s_lo + (s_hi - s_lo) * (dist / dist.max()) ** 2
    archs = ("trans_lg", "trans_sm", "lstm", "ngram")
    sizes = ("lg", "md", "sm")
    updates = (100, 1000, 10000, 100000)
    # Staggered cycles keep the factor columns from being confounded.
    return [
        LmConfig(lm_id=f"lm{i:02d}", architecture=archs[i % len(archs)],
                 data_size=sizes[i % len(sizes)],
                 updates=updates[(i // len(archs) + i) % len(updates)],
                 seed=seed * 1000 + i, target_ppl=float(ppls[i]),
                 noise_sigma=float(sigmas[i]))
        for i in range(n_lms)
    ]


def lm_table(data: SynthData, cfg: LmConfig) -> SurprisalTable:
    """Simulated LM scores: multiplicative log-normal noise on the true
    per-subword surprisals, rescaled so the mean matches the target PPL."""
    rng = np.random.default_rng(cfg.seed)
    true_vals = np.array([r.surprisal for r in data.table.rows])
    noisy = true_vals * np.exp(rng.normal(0.0, cfg.noise_sigma, len(true_vals)))
    noisy *= math.log(cfg.target_ppl) / noisy.mean()
    rows = tuple(SurprisalRow(article=r.article, sent=r.sent, idx=r.idx,
                              subword=r.subword, surprisal=float(v))
                 for r, v in zip(data.table.rows, noisy))
    return SurprisalTable(lm_id=cfg.lm_id, rows=rows)


def lognormal_sigma_for_cv(cv: float, position_slope: float = 0.0,
                           n_positions: int = 1,
                           extra_log_var: float = 0.0) -> float:
    """Residual log-scale SD so a log-normal corpus hits a target CV.

    With gd = exp(a + slope*t + z), t uniform over 1..n_positions and z
    zero-mean normal with total variance v: CV^2 = m2/m1^2 * exp(v) - 1,
    where m1/m2 are the mean of exp(slope*t)/exp(2*slope*t). Solves for the
    residual part of v after subtracting `extra_log_var` (the article plus
    subject intercept variance).
    """
    t = np.arange(1, n_positions + 1, dtype=float)
    m1 = float(np.mean(np.exp(position_slope * t)))
    m2 = float(np.mean(np.exp(2.0 * position_slope * t)))
    needed = math.log((1.0 + cv * cv) * m1 * m1 / m2)
    resid_var = needed - extra_log_var
    if resid_var <= 0:
        raise ParameterError(
            f"target cv {cv} unreachable: position/group variation alone "
            f"exceeds it")
    return math.sqrt(resid_var)


def emit(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    """Write corpus.tsv, surprisal_truth.tsv, counts.tsv and truth.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.tsv",
        "surprisal": out / "surprisal_truth.tsv",
        "counts": out / "counts.tsv",
        "truth": out / "truth.json",
    }
    write_corpus(data.corpus, paths["corpus"])
    write_surprisal_table(data.table, paths["surprisal"])
    from .analysis import table_unigram_counts
    write_counts(table_unigram_counts(data.table), paths["counts"])
    paths["truth"].write_text(json.dumps(data.truth, sort_keys=True, indent=1)
                              + "\n", encoding="utf-8")
    return paths


def emit_suite(data: SynthData, configs: Sequence[LmConfig],
               out_dir: str | Path) -> list[Path]:
    """Write one surprisal TSV plus metadata JSON per simulated LM."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for cfg in configs:
        table = lm_table(data, cfg)
        tsv = out / f"{cfg.lm_id}.tsv"
        write_surprisal_table(table, tsv)
        meta = out / f"{cfg.lm_id}.json"
        meta.write_text(json.dumps(cfg.meta(), sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")
        written.extend([tsv, meta])
    return written
