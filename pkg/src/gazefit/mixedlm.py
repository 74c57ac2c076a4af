"""Linear mixed-effects regression with crossed random intercepts.

Maximum-likelihood estimation profiles the fixed effects and the residual
variance out by generalized least squares, leaving a low-dimensional search
over log variance ratios (one per grouping factor). The search is a
derivative-free simplex with one seeded perturbed restart, followed by a
short finite-difference Newton polish so the gradient at the reported
optimum is numerically zero.

All log-likelihoods are marginal ML (not REML) in nats, which makes
likelihood differences between models with different fixed effects
meaningful.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats
from scipy.linalg import cho_factor, cho_solve, cholesky, qr, solve_triangular

from .errors import DesignError, FitError, ParameterError

CATEGORICAL_COLUMNS = {"syn_category", "sem_category", "article", "subj"}

REL_TOL = 1e-10        # relative objective improvement defining convergence
GRAD_STEP = 1e-5       # central-difference step for the Newton polish
MAX_POLISH = 12


@dataclass(frozen=True)
class RegressionSpec:
    """Formula-style description of one regression."""

    response: str
    fixed_terms: tuple[str, ...]
    random_intercepts: tuple[str, ...] = ("article", "subj")
    transform: str = "identity"  # or "log"
    zscore: bool = False

    def __post_init__(self):
        if self.transform not in ("identity", "log"):
            raise ParameterError(f"unknown transform {self.transform!r}")
        if len(set(self.fixed_terms)) != len(self.fixed_terms):
            raise DesignError("duplicate fixed-effect terms")
        mains = set()
        for term in self.fixed_terms:
            if "*" in term:
                mains.update(term.split("*"))
            elif ":" not in term:
                mains.add(term)
        for term in self.fixed_terms:
            if ":" in term and "*" not in term:
                for part in term.split(":"):
                    if part not in mains:
                        raise DesignError(
                            f"interaction {term!r} references undeclared main"
                            f" effect {part!r}")


@dataclass(frozen=True)
class Design:
    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    groups: dict[str, np.ndarray]
    group_levels: dict[str, tuple]
    rows: tuple[int, ...]
    spec: RegressionSpec

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class FittedLMM:
    beta: dict[str, float]
    sigma2: float
    variance_components: dict[str, float]
    loglik: float
    n: int
    converged: bool
    iterations: int
    columns: tuple[str, ...]
    random_structure: tuple[str, ...]
    log_ratios: dict[str, float]
    rows_key: int  # hash of the row set, to enforce identical-row comparisons


@dataclass(frozen=True)
class DeltaLogLik:
    value: float       # nats per data point
    lrt_stat: float
    df: int
    p_value: float


@dataclass(frozen=True)
class OlsFit:
    beta: dict[str, float]
    loglik: float
    sigma2: float      # ML estimate (rss / n)
    stderr: dict[str, float]
    tvalues: dict[str, float]
    pvalues: dict[str, float]
    rss: float
    n: int
    columns: tuple[str, ...]


def _is_categorical(frame: pd.DataFrame, col: str) -> bool:
    if col in CATEGORICAL_COLUMNS:
        return True
    return frame[col].dtype == object or isinstance(frame[col].dtype, pd.CategoricalDtype)


def _expand_terms(terms: Sequence[str]) -> list[str]:
    """Flatten a*b products into mains plus the a:b interaction."""
    out: list[str] = []
    for term in terms:
        if "*" in term:
            parts = term.split("*")
            if len(parts) != 2:
                raise DesignError(f"only pairwise products supported: {term!r}")
            for p in parts:
                if p not in out:
                    out.append(p)
            inter = ":".join(parts)
            if inter not in out:
                out.append(inter)
        elif term not in out:
            out.append(term)
    return out


def _source_columns(expanded: Sequence[str]) -> list[str]:
    cols: list[str] = []
    for term in expanded:
        for part in term.split(":"):
            if part not in cols:
                cols.append(part)
    return cols


def build_design(frame: pd.DataFrame, spec: RegressionSpec) -> Design:
    """Assemble fixed-effect and grouping matrices with listwise deletion.

    Rows with a missing value in the response, any term column, or any
    grouping column are dropped; the surviving row set is recorded so nested
    fits can be checked for identical rows.
    """
    expanded = _expand_terms(spec.fixed_terms)
    sources = _source_columns(expanded)
    needed = [spec.response] + sources + list(spec.random_intercepts)
    for col in needed:
        if col not in frame.columns:
            raise DesignError(f"column {col!r} not present in the data")

    mask = np.ones(len(frame), dtype=bool)
    for col in needed:
        vals = frame[col]
        if _is_categorical(frame, col):
            mask &= vals.notna().to_numpy()
        else:
            mask &= np.isfinite(pd.to_numeric(vals, errors="coerce").to_numpy(dtype=float))
    sub = frame.loc[mask]
    if len(sub) == 0:
        raise DesignError("no rows left after listwise deletion")

    y = pd.to_numeric(sub[spec.response]).to_numpy(dtype=float)
    if spec.transform == "log":
        if np.any(y <= 0):
            raise DesignError("log transform requires a strictly positive response")
        y = np.log(y)

    numeric: dict[str, np.ndarray] = {}
    for col in sources:
        if not _is_categorical(frame, col):
            v = pd.to_numeric(sub[col]).to_numpy(dtype=float)
            if spec.zscore:
                sd = v.std()
                if sd > 0:
                    v = (v - v.mean()) / sd
            numeric[col] = v

    columns: list[str] = ["(intercept)"]
    mats: list[np.ndarray] = [np.ones(len(sub))]
    for term in expanded:
        parts = term.split(":")
        if len(parts) == 1:
            col = parts[0]
            if _is_categorical(frame, col):
                levels = sorted(sub[col].astype(str).unique())
                vals = sub[col].astype(str).to_numpy()
                for level in levels[1:]:
                    columns.append(f"{col}[{level}]")
                    mats.append((vals == level).astype(float))
            else:
                columns.append(col)
                mats.append(numeric[col])
        else:
            for p in parts:
                if _is_categorical(frame, p):
                    raise DesignError(f"interaction with categorical column {p!r} "
                                      "is not supported")
            columns.append(term)
            mats.append(numeric[parts[0]] * numeric[parts[1]])
    X = np.column_stack(mats)

    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        _, _, piv = qr(X, mode="economic", pivoting=True)
        bad = sorted(columns[j] for j in piv[rank:])
        raise DesignError(f"rank-deficient fixed-effect design; collinear terms: "
                          f"{', '.join(bad)}")

    groups: dict[str, np.ndarray] = {}
    group_levels: dict[str, tuple] = {}
    for factor in spec.random_intercepts:
        vals = sub[factor].astype(str).to_numpy()
        levels = tuple(sorted(set(vals)))
        lookup = {lv: i for i, lv in enumerate(levels)}
        groups[factor] = np.fromiter((lookup[v] for v in vals), dtype=np.int64,
                                     count=len(vals))
        group_levels[factor] = levels

    return Design(X=X, y=y, columns=tuple(columns), groups=groups,
                  group_levels=group_levels,
                  rows=tuple(int(i) for i in np.nonzero(mask)[0]), spec=spec)


class _Profile:
    """Precomputed cross-products for the profiled ML objective."""

    def __init__(self, design: Design, factors: Sequence[str]):
        X, y = design.X, design.y
        self.n, self.p = X.shape
        self.factors = tuple(factors)
        sizes = [len(design.group_levels[f]) for f in factors]
        self.sizes = sizes
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.q = int(offsets[-1])
        self.col_factor = np.concatenate(
            [np.full(s, i) for i, s in enumerate(sizes)]) if self.q else np.zeros(0, int)

        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        ZtX = np.zeros((self.q, self.p))
        Zty = np.zeros(self.q)
        ZtZ = np.zeros((self.q, self.q))
        codes = [design.groups[f] + offsets[i] for i, f in enumerate(factors)]
        for ci in codes:
            np.add.at(Zty, ci, y)
            for j in range(self.p):
                np.add.at(ZtX[:, j], ci, X[:, j])
            for cj in codes:
                np.add.at(ZtZ, (ci, cj), 1.0)
        self.ZtX, self.Zty, self.ZtZ = ZtX, Zty, ZtZ

    def negloglik(self, theta: np.ndarray, want_params: bool = False):
        """-loglik at the given log variance ratios, with beta and sigma2
        profiled out by GLS."""
        n = self.n
        if self.q:
            ratios = np.exp(np.clip(np.asarray(theta, dtype=float), -45.0, 45.0))
            d = np.sqrt(ratios)[self.col_factor]
            M = d[:, None] * self.ZtZ * d[None, :]
            M[np.diag_indices_from(M)] += 1.0
            L = cholesky(M, lower=True)
            S = solve_triangular(L, d[:, None] * self.ZtX, lower=True)
            t = solve_triangular(L, d * self.Zty, lower=True)
            A = self.XtX - S.T @ S
            b = self.Xty - S.T @ t
            c = self.yty - t @ t
            logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        else:
            A, b, c, logdet = self.XtX, self.Xty, self.yty, 0.0
        try:
            cf = cho_factor(A)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"GLS normal equations not positive definite: {exc}") from exc
        beta = cho_solve(cf, b)
        rss = max(float(c - b @ beta), 1e-300)
        sigma2 = rss / n
        nll = 0.5 * (n * (math.log(2.0 * math.pi * sigma2) + 1.0) + logdet)
        if want_params:
            return nll, beta, sigma2
        return nll


def profiled_loglik(design: Design, log_ratios: Mapping[str, float]) -> float:
    """Profile log-likelihood at fixed log variance ratios (testing hook)."""
    factors = tuple(log_ratios.keys())
    prof = _Profile(design, factors)
    theta = np.array([log_ratios[f] for f in factors], dtype=float)
    return -prof.negloglik(theta)


def _polish(prof: _Profile, theta: np.ndarray, best: float) -> tuple[np.ndarray, float, int, bool]:
    """Finite-difference Newton refinement; keeps only improving steps."""
    k = len(theta)
    iters = 0
    converged = False
    for _ in range(MAX_POLISH):
        iters += 1
        g = np.zeros(k)
        h = np.zeros((k, k))
        f0 = prof.negloglik(theta)
        for i in range(k):
            e = np.zeros(k)
            e[i] = GRAD_STEP
            fp, fm = prof.negloglik(theta + e), prof.negloglik(theta - e)
            g[i] = (fp - fm) / (2 * GRAD_STEP)
            h[i, i] = (fp - 2 * f0 + fm) / GRAD_STEP ** 2
        for i in range(k):
            for j in range(i + 1, k):
                ei, ej = np.zeros(k), np.zeros(k)
                ei[i] = GRAD_STEP
                ej[j] = GRAD_STEP
                hij = (prof.negloglik(theta + ei + ej) - prof.negloglik(theta + ei - ej)
                       - prof.negloglik(theta - ei + ej) + prof.negloglik(theta - ei - ej)
                       ) / (4 * GRAD_STEP ** 2)
                h[i, j] = h[j, i] = hij
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        cand = theta - step
        fc = prof.negloglik(cand)
        if fc < best:
            improvement = best - fc
            theta, best = cand, fc
            if improvement < REL_TOL * max(1.0, abs(best)):
                converged = True
                break
        else:
            converged = abs(float(g @ g)) ** 0.5 < 1e-6
            break
    return theta, best, iters, converged


def fit_lmm(design: Design, seed: int = 0) -> FittedLMM:
    """Maximize the marginal ML log-likelihood over variance ratios.

    Grouping factors with a single level are dropped from the random
    structure with a warning. With no usable factors the fit reduces to the
    OLS Gaussian ML solution.
    """
    if design.n <= design.X.shape[1]:
        raise FitError(f"n={design.n} too small for {design.X.shape[1]} fixed effects")
    factors = []
    for f in design.spec.random_intercepts:
        if len(design.group_levels[f]) < 2:
            warnings.warn(f"random intercept {f!r} has a single level; dropped",
                          stacklevel=2)
        else:
            factors.append(f)

    prof = _Profile(design, factors)
    k = len(factors)
    if k == 0:
        nll, beta, sigma2 = prof.negloglik(np.zeros(0), want_params=True)
        return FittedLMM(
            beta=dict(zip(design.columns, map(float, beta))), sigma2=float(sigma2),
            variance_components={}, loglik=float(-nll), n=design.n, converged=True,
            iterations=0, columns=design.columns, random_structure=(),
            log_ratios={}, rows_key=hash(design.rows))

    start0 = np.zeros(k)
    # Objective values scale with n, so the simplex spread tolerance scales
    # too; the Newton polish afterwards takes care of the last few digits.
    fatol = max(1e-10, 1e-10 * abs(float(prof.negloglik(start0))))

    def run(start: np.ndarray):
        return optimize.minimize(
            prof.negloglik, start, method="Nelder-Mead",
            options=dict(xatol=1e-7, fatol=fatol, maxiter=2000, maxfev=4000))

    res = run(start0)
    rng = np.random.default_rng(seed)
    res2 = run(res.x + rng.normal(0.0, 0.5, size=k))
    best = min((res, res2), key=lambda r: r.fun)
    iterations = int(res.nit + res2.nit)

    theta, fbest, polish_iters, polish_ok = _polish(prof, np.asarray(best.x, float),
                                                    float(best.fun))
    iterations += polish_iters
    converged = bool(best.success or polish_ok)

    nll, beta, sigma2 = prof.negloglik(theta, want_params=True)
    ratios = np.exp(theta)
    components = {f: float(r * sigma2) for f, r in zip(factors, ratios)}
    return FittedLMM(
        beta=dict(zip(design.columns, map(float, beta))),
        sigma2=float(sigma2),
        variance_components=components,
        loglik=float(-nll),
        n=design.n,
        converged=converged,
        iterations=iterations,
        columns=design.columns,
        random_structure=tuple(factors),
        log_ratios={f: float(t) for f, t in zip(factors, theta)},
        rows_key=hash(design.rows))


def delta_loglik(full: FittedLMM, base: FittedLMM) -> DeltaLogLik:
    """Per-point log-likelihood gain of the full model plus the
    likelihood-ratio test against a chi-square with df = dropped terms."""
    if not (full.converged and base.converged):
        raise FitError("delta_loglik requires both fits to have converged")
    if full.n != base.n or full.rows_key != base.rows_key:
        raise FitError(f"model row sets differ (n={full.n} vs {base.n})")
    if full.random_structure != base.random_structure:
        raise FitError("models have different random-effect structures")
    if not set(base.columns) <= set(full.columns):
        raise FitError("base fixed effects are not a subset of the full model's")
    df = len(full.columns) - len(base.columns)
    ll_diff = full.loglik - base.loglik
    lrt = 2.0 * ll_diff
    p = 1.0 if df == 0 else float(stats.chi2.sf(lrt, df))
    return DeltaLogLik(value=ll_diff / full.n, lrt_stat=lrt, df=df, p_value=p)


def fit_ols(design: Design) -> OlsFit:
    """Least squares with the Gaussian ML log-likelihood and per-coefficient
    two-sided t tests. A perfect fit reports infinite log-likelihood."""
    X, y = design.X, design.y
    n, p = X.shape
    cf = cho_factor(X.T @ X)
    beta = cho_solve(cf, X.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    if rss <= 0 or rss < 1e-12 * max(1.0, float(y @ y)):
        rss = max(rss, 0.0)
        sigma2 = rss / n
        loglik = math.inf if sigma2 == 0 else -0.5 * n * (math.log(2 * math.pi * sigma2) + 1)
        se = np.zeros(p)
    else:
        sigma2 = rss / n
        loglik = -0.5 * n * (math.log(2 * math.pi * sigma2) + 1)
        s2_unbiased = rss / (n - p) if n > p else float("nan")
        cov = cho_solve(cf, np.eye(p)) * s2_unbiased
        se = np.sqrt(np.diag(cov))

    tvals, pvals = {}, {}
    for j, name in enumerate(design.columns):
        if se[j] == 0 or not math.isfinite(se[j]):
            tv = 0.0 if abs(beta[j]) < 1e-12 else math.inf
            pv = 1.0 if tv == 0.0 else 0.0
        else:
            tv = float(beta[j] / se[j])
            pv = float(2 * stats.t.sf(abs(tv), n - p))
        tvals[name], pvals[name] = tv, pv

    return OlsFit(
        beta=dict(zip(design.columns, map(float, beta))),
        loglik=float(loglik), sigma2=float(sigma2),
        stderr=dict(zip(design.columns, map(float, se))),
        tvalues=tvals, pvalues=pvals, rss=rss, n=n, columns=design.columns)
