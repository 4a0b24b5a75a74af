"""Wald statistics for coefficient equality between paired models."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .data import Column, column_labels
from .regress import ModelFit

DEGENERATE_VAR = 1e-12
CHI2_1_CRIT_05 = 3.841458820694124  # 0.95 quantile of chi-square(1)


class WaldError(ValueError):
    pass


class SingularMatrix(WaldError):
    pass


def wald_statistic(beta: float, se_beta: float, zeta: float, se_zeta: float) -> float | None:
    """W = (beta - zeta)^2 / (se_beta^2 + se_zeta^2); None when the variance vanishes."""
    if se_beta < 0 or se_zeta < 0:
        raise WaldError("standard errors must be nonnegative")
    var = se_beta * se_beta + se_zeta * se_zeta
    if var < DEGENERATE_VAR:
        return None
    d = beta - zeta
    return d * d / var


def chi2_sf(w: float, df: int = 1) -> float:
    """Upper tail of the chi-square distribution.

    One degree of freedom uses erfc(sqrt(w/2)); larger df the regularized
    upper incomplete gamma Q(df/2, w/2).
    """
    if w < 0:
        raise WaldError("W must be nonnegative")
    if df < 1:
        raise WaldError("df must be >= 1")
    if df == 1:
        return math.erfc(math.sqrt(w / 2.0))
    return float(special.gammaincc(df / 2.0, w / 2.0))


@dataclass(frozen=True)
class WaldRow:
    column: Column
    label: str
    beta: float
    se_beta: float
    zeta: float
    se_zeta: float
    W: float | None
    p: float | None


@dataclass(frozen=True)
class WaldReport:
    rows: tuple[WaldRow, ...]
    alpha: float
    bonferroni: bool
    sensitive: str = ""

    @property
    def tests(self) -> int:
        return len(self.rows)

    @property
    def effective_alpha(self) -> float:
        return self.alpha / max(self.tests, 1) if self.bonferroni else self.alpha

    @property
    def flagged(self) -> frozenset[Column]:
        a = self.effective_alpha
        return frozenset(r.column for r in self.rows if r.p is not None and r.p < a)

    @property
    def flagged_labels(self) -> list[str]:
        f = self.flagged
        return [r.label for r in self.rows if r.column in f]

    def row(self, label: str) -> WaldRow:
        for r in self.rows:
            if r.label == label or r.column.key == label:
                return r
        raise KeyError(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "beta", "se_beta", "zeta", "se_zeta", "W", "p", "flagged"])
        flagged = self.flagged
        for r in self.rows:
            w.writerow([
                r.label, _num(r.beta), _num(r.se_beta), _num(r.zeta), _num(r.se_zeta),
                "N/A" if r.W is None else _num(r.W), "N/A" if r.p is None else _num(r.p),
                int(r.column in flagged),
            ])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len(r.label) for r in self.rows] + [7])
        head = f"{'feature':<{width}}  {'beta':>9}  {'se':>7}  {'zeta':>9}  {'se':>7}  {'W':>9}  {'p':>7}"
        out = [head, "=" * len(head)]
        flagged = self.flagged
        prev = None
        for r in self.rows:
            if prev is not None and r.column.feature != prev:
                out.append("-" * len(head))
            prev = r.column.feature
            w = "N/A" if r.W is None else f"{r.W:.4f}"
            p = "N/A" if r.p is None else f"{r.p:.4f}"
            mark = " *" if r.column in flagged else ""
            out.append(f"{r.label:<{width}}  {r.beta:>9.4f}  {r.se_beta:>7.4f}  {r.zeta:>9.4f}  "
                       f"{r.se_zeta:>7.4f}  {w:>9}  {p:>7}{mark}")
        crit = f"alpha={self.alpha:g}" + (f", Bonferroni over {self.tests} tests -> {self.effective_alpha:.3g}"
                                          if self.bonferroni else "")
        out.append("")
        out.append(f"{crit}; flagged: {', '.join(self.flagged_labels) or 'none'}")
        return "\n".join(out) + "\n"


def _num(x: float) -> str:
    return repr(float(x))


def check_pair(m: ModelFit, m_prime: ModelFit) -> str | None:
    """Validate that ``m_prime`` is ``m`` plus the columns of exactly one feature.

    Returns that extra feature's label (None when m_prime adds nothing).
    """
    shared = set(m.columns)
    extra = [c for c in m_prime.columns if c not in shared]
    missing = shared - set(m_prime.columns)
    if missing:
        raise WaldError(f"second model lacks column(s) {sorted(c.key for c in missing)}")
    feats = {c.feature for c in extra}
    if len(feats) > 1:
        raise WaldError(f"second model adds more than one feature: {sorted(feats)}")
    return feats.pop() if feats else None


def wald_test(m: ModelFit, m_prime: ModelFit, alpha: float = 0.05, bonferroni: bool = False,
              se_decimals: int | None = None) -> WaldReport:
    """Per-column Wald screen of the coefficients shared by ``m`` and ``m_prime``.

    ``se_decimals`` rounds standard errors before forming W, the way printed
    tables do; None keeps full precision.
    """
    if not 0 < alpha < 1:
        raise WaldError("alpha must lie in (0, 1)")
    if not (m.converged and m_prime.converged):
        raise WaldError("both fits must have converged")
    extra = check_pair(m, m_prime)
    labels = column_labels(m.columns)
    rows = []
    for j, (col, lbl) in enumerate(zip(m.columns, labels)):
        if col.is_intercept:
            continue
        k = m_prime.columns.index(col)
        b, sb = float(m.coef[j]), float(m.se[j])
        z, sz = float(m_prime.coef[k]), float(m_prime.se[k])
        if se_decimals is not None:
            sb, sz = round(sb, se_decimals), round(sz, se_decimals)
        w = wald_statistic(b, sb, z, sz)
        p = None if w is None else chi2_sf(w)
        rows.append(WaldRow(col, lbl, b, sb, z, sz, w, p))
    return WaldReport(tuple(rows), alpha, bonferroni, extra or "")


@dataclass(frozen=True)
class GeneralWaldResult:
    W: float
    df: int
    p: float


def general_wald(H, c, theta, sigma, D=None, cond_limit: float = 1e12) -> GeneralWaldResult:
    """W = (H theta - c)' (H D^1/2 Sigma D^1/2 H')^-1 (H theta - c), chi-square with k df.

    ``D`` is the diagonal degrees-of-freedom scaling (a vector of its
    diagonal or a full matrix); identity when omitted.
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    theta = np.asarray(theta, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    k, m = H.shape
    if c.shape != (k,) or theta.shape != (m,) or sigma.shape != (m, m):
        raise WaldError("dimension mismatch among H, c, theta and Sigma")
    if not np.allclose(sigma, sigma.T, atol=1e-10 * max(1.0, np.abs(sigma).max())):
        raise WaldError("Sigma must be symmetric")
    if D is None:
        d = np.ones(m)
    else:
        D = np.asarray(D, dtype=np.float64)
        if D.ndim == 2:
            if D.shape != (m, m) or np.count_nonzero(D - np.diag(np.diag(D))):
                raise WaldError("D must be an m x m diagonal matrix")
            d = np.diag(D).copy()
        else:
            d = D
        if d.shape != (m,) or np.any(d <= 0):
            raise WaldError("D must have a positive diagonal")
    root = np.sqrt(d)
    inner = H @ (root[:, None] * sigma * root[None, :]) @ H.T
    if not np.all(np.isfinite(inner)) or np.linalg.cond(inner) > cond_limit:
        raise SingularMatrix("inner covariance matrix is singular or ill-conditioned")
    r = H @ theta - c
    w = float(r @ np.linalg.solve(inner, r))
    w = max(w, 0.0)
    return GeneralWaldResult(w, k, chi2_sf(w, k))


def pair_selector(n_x: int, n_s: int, i: int) -> np.ndarray:
    """Single-row H comparing beta_i with zeta_i in theta = (beta, gamma, zeta)."""
    h = np.zeros(2 * n_x + n_s)
    h[i] = 1.0
    h[n_x + n_s + i] = -1.0
    return h[None, :]
