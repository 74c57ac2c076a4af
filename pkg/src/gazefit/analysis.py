"""Headline analyses: psychometric power, PPL-vs-power correlation,
factor regressions, information-uniformity statistics, and probing of
simulated gaze durations.

Feature construction always runs on the full corpus text (segment
alignment needs complete sentences); exclusion filters select which data
points enter the regressions afterwards.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from . import bpe, mixedlm
from .corpus import Corpus, FilterPolicy, apply_filters, to_frame
from .errors import AlignmentError, GazefitError, ParameterError, ParseError
from .smooth import SmoothCurve, smooth_curve
from .surprisal import SurprisalTable, freq_feature, segment_surprisal

ARCHITECTURES = ("trans_lg", "trans_sm", "lstm", "ngram")
DATA_SIZES = {"lg": 1.0, "md": 0.1, "sm": 0.01}
PLOT_PPL_CEILING = 1e6

FREQ_NOTE = ("freq covariate is the log geometric mean of smoothed subword "
             "frequencies (log scale is a toolkit decision)")


@dataclass(frozen=True)
class AnalysisPolicy:
    """Language-style knobs: english_like -> prev_count=2, japanese_like ->
    prev_count=0 (no spillover terms at all)."""

    prev_count: int = 2
    log_gd: bool = False
    zscore: bool = False
    random_intercepts: tuple[str, ...] = ("article", "subj")

    def full_terms(self) -> tuple[str, ...]:
        terms = ["surprisal"]
        if self.prev_count == 2:
            terms += ["surprisal_prev_1", "surprisal_prev_2"]
        terms += ["freq*length"]
        if self.prev_count == 2:
            terms += ["freq_prev_1*length_prev_1"]
        terms += ["screenN", "lineN", "segmentN"]
        return tuple(terms)

    def base_terms(self) -> tuple[str, ...]:
        drop = {"surprisal", "surprisal_prev_1", "surprisal_prev_2"}
        return tuple(t for t in self.full_terms() if t not in drop)


@dataclass(frozen=True)
class LMRecord:
    lm_id: str
    ppl: float
    delta_loglik: float
    p_value: float
    architecture: str | None = None
    data_size: str | None = None
    updates: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if not self.ppl > 0:
            raise ParameterError(f"ppl must be > 0, got {self.ppl}")


@dataclass(frozen=True)
class PsychometricResult:
    lm_id: str
    ppl: float
    delta_loglik: float
    lrt_stat: float
    df: int
    p_value: float
    n: int
    full: mixedlm.FittedLMM
    base: mixedlm.FittedLMM
    notes: tuple[str, ...]


@dataclass(frozen=True)
class UidReport:
    cv: float
    position_curve: tuple[tuple[float, float, float], ...]
    position_slope: float
    position_slope_p: float
    curve_method: str


@dataclass(frozen=True)
class ProbeEffect:
    factor: str
    value: float        # per-point log-likelihood gain
    total: float
    df: int
    n: int
    coverage: float
    # factor/position confounding diagnostic, reported but never asserted:
    # Pearson r between token position and the factor (levels coded by their
    # mean response for categorical factors)
    factor_position_r: float = float("nan")


def unique_segment_rows(corpus: Corpus) -> pd.DataFrame:
    """One row per distinct text segment, ordered by (article, sent, token).

    Raises if two subjects disagree about a segment's text.
    """
    seen: dict[tuple, dict] = {}
    for s in corpus:
        key = (s.article_id, s.sent_n, s.token_n)
        if key in seen:
            if seen[key]["text"] != s.text:
                raise ParseError(
                    f"segment text mismatch across subjects at article "
                    f"{s.article_id} sent {s.sent_n} token {s.token_n}: "
                    f"{seen[key]['text']!r} vs {s.text!r}")
            continue
        seen[key] = dict(
            article=s.article_id, sentN=s.sent_n, tokenN=s.token_n,
            text=s.text, length=s.length, screenN=s.screen_n,
            segmentN=s.segment_n, syn_category=s.syn_category,
            sem_category=s.sem_category,
            n_dependents=float("nan") if s.n_dependents is None else s.n_dependents)
    rows = [seen[k] for k in sorted(seen)]
    return pd.DataFrame(rows)


def align_table(corpus: Corpus, table: SurprisalTable):
    """Align the table's subwords to the corpus segments, sentence by
    sentence. Returns (per-segment feature dict, per-sentence alignments)."""
    seg_rows = unique_segment_rows(corpus)
    by_sentence = table.sentences()
    feats: dict[tuple, dict] = {}
    alignments: dict[tuple, bpe.Alignment] = {}
    for (article, sent), group in seg_rows.groupby(["article", "sentN"], sort=True):
        key = (article, int(sent))
        if key not in by_sentence:
            raise AlignmentError(
                f"surprisal table has no rows for article {article} sent {sent}")
        rows = by_sentence[key]
        subwords = [r.subword for r in rows]
        values = [r.surprisal for r in rows]
        texts = group.sort_values("tokenN")["text"].tolist()
        tokens = group.sort_values("tokenN")["tokenN"].tolist()
        alignment = bpe.align(subwords, texts)
        sums = segment_surprisal(values, alignment)
        for tok, val, (lo, hi) in zip(tokens, sums, alignment.ranges):
            feats[(article, int(sent), int(tok))] = dict(
                surprisal=float(val), subwords=subwords[lo:hi + 1])
        alignments[key] = alignment
    return feats, alignments


def table_unigram_counts(table: SurprisalTable) -> Counter:
    return Counter(r.subword for r in table.rows)


def build_point_features(corpus: Corpus, table: SurprisalTable,
                         policy: AnalysisPolicy,
                         counts: Mapping[str, int] | None = None):
    """Per-data-point covariate frame over the full corpus.

    Lagged (spillover) features follow each subject's presentation order and
    are NaN at article starts; rows are dropped listwise at design time.
    """
    notes = [FREQ_NOTE]
    feats, alignments = align_table(corpus, table)
    if counts is None:
        counts = table_unigram_counts(table)
        notes.append("unigram frequencies derived from the scored table itself "
                     "(no external count file supplied)")
    total = sum(counts.values())

    seg_surprisal: dict[tuple, float] = {}
    seg_freq: dict[tuple, float] = {}
    for key, f in feats.items():
        seg_surprisal[key] = f["surprisal"]
        seg_freq[key] = freq_feature(f["subwords"], counts, total)

    frame = to_frame(corpus)
    keys = list(zip(frame["article"], frame["sentN"], frame["tokenN"]))
    frame["surprisal"] = [seg_surprisal[k] for k in keys]
    frame["freq"] = [seg_freq[k] for k in keys]
    frame["log_gd"] = np.where(frame["gd"] > 0, np.log(frame["gd"].clip(lower=1e-300)), np.nan)

    if policy.prev_count == 2:
        runs = frame.groupby(["subj", "article"], sort=False)
        frame["surprisal_prev_1"] = runs["surprisal"].shift(1)
        frame["surprisal_prev_2"] = runs["surprisal"].shift(2)
        frame["freq_prev_1"] = runs["freq"].shift(1)
        frame["length_prev_1"] = runs["length"].shift(1).astype(float)

    return frame, tuple(notes), alignments


def _point_keys(corpus: Corpus) -> list[tuple]:
    return [(s.article_id, s.subject_id, s.screen_n, s.segment_n) for s in corpus]


def filtered_point_mask(corpus: Corpus, filter_policy: FilterPolicy) -> list[bool]:
    """Per-row survival mask of the exclusion filters, aligned with the
    corpus (and hence with build_point_features output)."""
    kept = set(_point_keys(apply_filters(corpus, filter_policy)))
    return [k in kept for k in _point_keys(corpus)]


def _nested_designs(frame: pd.DataFrame, full_spec: mixedlm.RegressionSpec,
                    base_spec: mixedlm.RegressionSpec):
    """Build full and base designs on the identical row set (listwise
    deletion is driven by the full model's columns)."""
    probe = mixedlm.build_design(frame, full_spec)
    sub = frame.iloc[list(probe.rows)].reset_index(drop=True)
    full = mixedlm.build_design(sub, full_spec)
    base = mixedlm.build_design(sub, base_spec)
    return full, base


def psychometric_power(corpus: Corpus, table: SurprisalTable,
                       policy: AnalysisPolicy,
                       filter_policy: FilterPolicy | None = None,
                       counts: Mapping[str, int] | None = None) -> PsychometricResult:
    """Fit the gaze-duration regression with and without surprisal terms on
    identical rows; report the per-point log-likelihood gain and its LRT."""
    frame, notes, _ = build_point_features(corpus, table, policy, counts)
    if filter_policy is not None:
        mask = filtered_point_mask(corpus, filter_policy)
        frame = frame.loc[mask].reset_index(drop=True)

    response = "log_gd" if policy.log_gd else "gd"
    full_spec = mixedlm.RegressionSpec(
        response=response, fixed_terms=policy.full_terms(),
        random_intercepts=policy.random_intercepts, zscore=policy.zscore)
    base_spec = mixedlm.RegressionSpec(
        response=response, fixed_terms=policy.base_terms(),
        random_intercepts=policy.random_intercepts, zscore=policy.zscore)
    full_design, base_design = _nested_designs(frame, full_spec, base_spec)
    full_fit = mixedlm.fit_lmm(full_design)
    base_fit = mixedlm.fit_lmm(base_design)
    dl = mixedlm.delta_loglik(full_fit, base_fit)
    return PsychometricResult(
        lm_id=table.lm_id, ppl=table.ppl, delta_loglik=dl.value,
        lrt_stat=dl.lrt_stat, df=dl.df, p_value=dl.p_value, n=full_fit.n,
        full=full_fit, base=base_fit, notes=tuple(notes))


def evaluate_suite(corpus: Corpus, items: Sequence[tuple[dict, SurprisalTable]],
                   policy: AnalysisPolicy,
                   filter_policy: FilterPolicy | None = None,
                   counts: Mapping[str, int] | None = None,
                   threads: int = 1) -> list[LMRecord]:
    """Psychometric power for a list of (metadata, table) pairs.

    The baseline model is identical across LMs that share a tokenization, so
    it is fitted once per distinct baseline design.
    """
    kept_mask = (filtered_point_mask(corpus, filter_policy)
                 if filter_policy is not None else None)

    def prepare(item):
        meta, table = item
        frame, notes, _ = build_point_features(corpus, table, policy, counts)
        if kept_mask is not None:
            frame = frame.loc[kept_mask].reset_index(drop=True)
        return meta, table, frame, notes

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            prepared = list(pool.map(prepare, items))
    else:
        prepared = [prepare(it) for it in items]

    response = "log_gd" if policy.log_gd else "gd"
    full_spec = mixedlm.RegressionSpec(
        response=response, fixed_terms=policy.full_terms(),
        random_intercepts=policy.random_intercepts, zscore=policy.zscore)
    base_spec = mixedlm.RegressionSpec(
        response=response, fixed_terms=policy.base_terms(),
        random_intercepts=policy.random_intercepts, zscore=policy.zscore)

    base_cache: dict[str, mixedlm.FittedLMM] = {}

    def run_one(prep):
        meta, table, frame, notes = prep
        full_design, base_design = _nested_designs(frame, full_spec, base_spec)
        digest = hashlib.sha256(
            base_design.X.tobytes() + base_design.y.tobytes()
            + repr(base_design.rows).encode()).hexdigest()
        base_fit = base_cache.get(digest)
        if base_fit is None:
            base_fit = mixedlm.fit_lmm(base_design)
            base_cache[digest] = base_fit
        full_fit = mixedlm.fit_lmm(full_design)
        dl = mixedlm.delta_loglik(full_fit, base_fit)
        return LMRecord(
            lm_id=str(meta.get("lm_id", table.lm_id)), ppl=table.ppl,
            delta_loglik=dl.value, p_value=dl.p_value,
            architecture=meta.get("architecture"), data_size=meta.get("data_size"),
            updates=meta.get("updates"), seed=meta.get("seed"))

    # Seed the cache sequentially so parallel workers share one baseline fit.
    records: list[LMRecord] = []
    if prepared:
        records.append(run_one(prepared[0]))
    rest = prepared[1:]
    if threads > 1 and rest:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records.extend(pool.map(run_one, rest))
    else:
        records.extend(run_one(p) for p in rest)
    return records


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tie-aware rank correlation: Pearson correlation of average ranks."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) != len(ys):
        raise ParameterError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ParameterError("need at least 2 points for a correlation")
    rx = rankdata(xs, method="average")
    ry = rankdata(ys, method="average")
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ParameterError("correlation undefined for a constant vector")
    return float(np.corrcoef(rx, ry)[0, 1])


def suite_report(records: Sequence[LMRecord], split_ppl: float = 400.0) -> dict:
    """Global and split rank correlations plus scatter data for the
    PPL-vs-power figure. Splits with fewer than 2 records omit their rho."""
    if len(records) < 3:
        raise ParameterError(f"suite report needs >= 3 records, got {len(records)}")
    ppls = [r.ppl for r in records]
    dlls = [r.delta_loglik for r in records]

    def safe_rho(idx):
        if len(idx) < 2:
            return None
        try:
            return spearman([ppls[i] for i in idx], [dlls[i] for i in idx])
        except ParameterError:
            return None

    low = [i for i, p in enumerate(ppls) if p <= split_ppl]
    high = [i for i, p in enumerate(ppls) if p > split_ppl]
    report = {
        "split_ppl": split_ppl,
        "n_records": len(records),
        "rho_all": safe_rho(list(range(len(records)))),
        "rho_ppl_le_split": safe_rho(low),
        "rho_ppl_gt_split": safe_rho(high),
        "records": [asdict(r) for r in records],
        "scatter": [
            {"lm_id": r.lm_id, "ppl": r.ppl, "delta_loglik": r.delta_loglik,
             "excluded_from_plot": r.ppl > PLOT_PPL_CEILING}
            for r in records],
    }
    try:
        report["factor_regression"] = factor_regression(records)
    except GazefitError:
        report["factor_regression"] = None
    return report


def factor_regression(records: Sequence[LMRecord]) -> dict:
    """OLS of psychometric power on architecture dummies plus log data size
    and log update count. Records without usable factor metadata (including
    updates=0) are dropped."""
    usable = [r for r in records
              if r.architecture in ARCHITECTURES and r.data_size in DATA_SIZES
              and r.updates is not None and r.updates >= 1]
    if len(usable) < 4:
        raise ParameterError("too few records with factor metadata")
    frame = pd.DataFrame({
        "delta_loglik": [r.delta_loglik for r in usable],
        "architecture": [r.architecture for r in usable],
        "log_data_size": [math.log(DATA_SIZES[r.data_size]) for r in usable],
        "log_updates": [math.log(r.updates) for r in usable],
    })
    for col in ("architecture",):
        if frame[col].nunique() < 2:
            raise ParameterError(f"factor {col!r} has fewer than 2 levels")
    for col in ("log_data_size", "log_updates"):
        if frame[col].nunique() < 2:
            raise ParameterError(f"factor {col!r} has fewer than 2 levels")
    spec = mixedlm.RegressionSpec(
        response="delta_loglik",
        fixed_terms=("architecture", "log_data_size", "log_updates"),
        random_intercepts=())
    fit = mixedlm.fit_ols(mixedlm.build_design(frame, spec))
    return {"n": fit.n, "coefficients": fit.beta, "p_values": fit.pvalues}


def uid_stats(corpus: Corpus) -> UidReport:
    """Coefficient of variation of gaze duration, the smoothed
    position-in-sentence curve, and the position slope significance."""
    gds = np.array([s.gaze_duration for s in corpus], dtype=float)
    toks = np.array([s.token_n for s in corpus], dtype=float)
    mean = gds.mean()
    cv = float(gds.std(ddof=1) / mean) if mean > 0 and len(gds) > 1 else 0.0

    curve: SmoothCurve = smooth_curve(toks, gds)
    frame = pd.DataFrame({"gd": gds, "tokenN": toks})
    spec = mixedlm.RegressionSpec(response="gd", fixed_terms=("tokenN",),
                                  random_intercepts=())
    fit = mixedlm.fit_ols(mixedlm.build_design(frame, spec))
    return UidReport(
        cv=cv,
        position_curve=tuple(zip(curve.positions, curve.fitted, curve.half_width)),
        position_slope=fit.beta["tokenN"],
        position_slope_p=fit.pvalues["tokenN"],
        curve_method=curve.method)


def make_segment_frame(corpus: Corpus, table: SurprisalTable,
                       counts: Mapping[str, int] | None = None) -> pd.DataFrame:
    """Unique-segment frame with the LM's per-segment surprisal as
    simulated_gd (one value per segment; no subject grouping)."""
    feats, _ = align_table(corpus, table)
    if counts is None:
        counts = table_unigram_counts(table)
    total = sum(counts.values())
    frame = unique_segment_rows(corpus)
    keys = list(zip(frame["article"], frame["sentN"], frame["tokenN"]))
    frame["simulated_gd"] = [feats[k]["surprisal"] for k in keys]
    frame["freq"] = [freq_feature(feats[k]["subwords"], counts, total) for k in keys]
    return frame


PROBE_BASE_TERMS = ("sentN", "tokenN", "freq*length")
DOMINANCE_BASE_TERMS = ("sentN", "segmentN", "freq*length")
MIN_ANNOTATION_COVERAGE = 0.95


def _ols_delta(frame: pd.DataFrame, response: str, factor: str,
               base_terms: tuple[str, ...]) -> tuple[float, float, int, int]:
    full_spec = mixedlm.RegressionSpec(
        response=response, fixed_terms=(factor,) + base_terms, random_intercepts=())
    base_spec = mixedlm.RegressionSpec(
        response=response, fixed_terms=base_terms, random_intercepts=())
    full_design, base_design = _nested_designs(frame, full_spec, base_spec)
    full = mixedlm.fit_ols(full_design)
    base = mixedlm.fit_ols(base_design)
    total = full.loglik - base.loglik
    df = len(full.columns) - len(base.columns)
    return total / full.n, total, df, full.n


def probe_effect(seg_frame: pd.DataFrame, factor: str) -> ProbeEffect:
    """Per-point log-likelihood gain of adding `factor` to the simulated
    gaze-duration regression (plain OLS; one observation per segment)."""
    if factor not in seg_frame.columns:
        raise ParameterError(f"unknown probe factor {factor!r}")
    coverage = float(seg_frame[factor].notna().mean())
    if coverage < MIN_ANNOTATION_COVERAGE:
        raise ParameterError(
            f"factor {factor!r} annotated for {coverage:.1%} of segments; "
            f"need >= {MIN_ANNOTATION_COVERAGE:.0%}")
    sub = seg_frame.loc[seg_frame[factor].notna()].reset_index(drop=True)
    value, total, df, n = _ols_delta(sub, "simulated_gd", factor, PROBE_BASE_TERMS)
    if mixedlm._is_categorical(sub, factor):
        coded = sub.groupby(factor)["simulated_gd"].transform("mean")
    else:
        coded = pd.to_numeric(sub[factor])
    tok = sub["tokenN"].to_numpy(dtype=float)
    if coded.nunique() > 1 and len(set(tok)) > 1:
        r = float(np.corrcoef(tok, coded.to_numpy(dtype=float))[0, 1])
    else:
        r = float("nan")
    return ProbeEffect(factor=factor, value=value, total=total, df=df, n=n,
                       coverage=coverage, factor_position_r=r)


def factor_dominance(point_frame: pd.DataFrame,
                     factors: Sequence[str] = ("syn_category", "sem_category",
                                               "n_dependents")) -> list[dict]:
    """Separate effect of each linguistic annotation on real gaze durations,
    ranked by log-likelihood gain over the annotation-free baseline."""
    out = []
    for factor in factors:
        if factor not in point_frame.columns:
            continue
        mask = point_frame[factor].notna()
        if not mask.any():
            continue
        sub = point_frame.loc[mask].reset_index(drop=True)
        value, total, df, n = _ols_delta(sub, "gd", factor, DOMINANCE_BASE_TERMS)
        out.append({"factor": factor, "delta_per_point": value,
                    "delta_total": total, "df": df, "n": n})
    out.sort(key=lambda d: d["delta_per_point"], reverse=True)
    return out
