"""Penalized cubic spline smoother with GCV-chosen smoothing.

Used for the position-in-sentence gaze-duration curve. Falls back to
binned means when there are too few distinct positions to support a cubic
basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

MIN_DISTINCT_FOR_SPLINE = 5
LAMBDA_GRID = np.logspace(-5.0, 8.0, 40)
Z_95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class SmoothCurve:
    positions: tuple[float, ...]
    fitted: tuple[float, ...]
    half_width: tuple[float, ...]  # 95% pointwise band half-widths
    method: str                    # "pspline" or "binned"
    gcv_lambda: float | None = None
    edf: float | None = None


def _bspline_basis(x: np.ndarray, xg: np.ndarray, n_knots: int) -> tuple[np.ndarray, np.ndarray]:
    k = 3
    lo, hi = float(x.min()), float(x.max())
    interior = np.linspace(lo, hi, n_knots + 2)[1:-1]
    t = np.concatenate([[lo] * (k + 1), interior, [hi] * (k + 1)])
    return (BSpline.design_matrix(x, t, k, extrapolate=False).toarray(),
            BSpline.design_matrix(xg, t, k, extrapolate=False).toarray())


def _binned(x: np.ndarray, y: np.ndarray) -> SmoothCurve:
    positions = np.unique(x)
    fitted, half = [], []
    for p in positions:
        vals = y[x == p]
        fitted.append(float(vals.mean()))
        if len(vals) > 1:
            half.append(Z_95 * float(vals.std(ddof=1)) / math.sqrt(len(vals)))
        else:
            half.append(0.0)
    return SmoothCurve(positions=tuple(map(float, positions)),
                       fitted=tuple(fitted), half_width=tuple(half),
                       method="binned")


def smooth_curve(x, y, max_knots: int = 20) -> SmoothCurve:
    """Smooth y on x; evaluate at the distinct x values with 95% bands."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    distinct = np.unique(x)
    if len(distinct) < MIN_DISTINCT_FOR_SPLINE:
        return _binned(x, y)

    n_knots = int(min(max_knots, len(distinct) - 2))
    B, Bg = _bspline_basis(x, distinct, n_knots)
    m = B.shape[1]
    D = np.diff(np.eye(m), n=2, axis=0)
    P = D.T @ D
    BtB = B.T @ B
    Bty = B.T @ y
    n = len(y)

    best = None
    for lam in LAMBDA_GRID:
        try:
            Ainv = np.linalg.inv(BtB + lam * P)
        except np.linalg.LinAlgError:
            continue
        coef = Ainv @ Bty
        fitted = B @ coef
        rss = float(np.sum((y - fitted) ** 2))
        edf = float(np.trace(Ainv @ BtB))
        denom = (n - edf) ** 2
        if denom <= 0:
            continue
        gcv = n * rss / denom
        if best is None or gcv < best[0]:
            best = (gcv, lam, Ainv, coef, rss, edf)
    if best is None:
        return _binned(x, y)

    _, lam, Ainv, coef, rss, edf = best
    sigma2 = rss / max(n - edf, 1.0)
    # pointwise variance of the fitted curve: sigma2 * b' Ainv B'B Ainv b
    cov_core = Ainv @ BtB @ Ainv
    var = np.einsum("ij,jk,ik->i", Bg, cov_core, Bg) * sigma2
    half = Z_95 * np.sqrt(np.maximum(var, 0.0))
    fitted_g = Bg @ coef
    return SmoothCurve(positions=tuple(map(float, distinct)),
                       fitted=tuple(map(float, fitted_g)),
                       half_width=tuple(map(float, half)),
                       method="pspline", gcv_lambda=float(lam), edf=edf)
