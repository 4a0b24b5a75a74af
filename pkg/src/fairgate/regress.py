"""Least squares and logistic regression with per-coefficient standard errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .data import Column, DesignMatrix, column_labels

LINEAR = "linear"
LOGISTIC = "logistic"

# target coding for least squares: 0/1 as loaded, or mapped to -1/+1
CODING_01 = "01"
CODING_PM1 = "pm1"


class FitError(ArithmeticError):
    """The fit could not be computed (rank deficiency, too few rows, ...)."""


class RankDeficient(FitError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 50
    tolerance: float = 1e-8
    ridge_jitter: float = 1e-10
    threshold: float = 0.5
    pseudo_inverse: bool = False
    target_coding: str = CODING_01

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.target_coding not in (CODING_01, CODING_PM1):
            raise ValueError(f"unknown target coding {self.target_coding!r}")


@dataclass(frozen=True, eq=False)
class ModelFit:
    kind: str
    columns: tuple[Column, ...]
    coef: np.ndarray
    se: np.ndarray
    sigma2: float
    n: int
    p: int
    converged: bool
    iterations: int
    target_coding: str = CODING_01
    threshold: float = 0.5
    message: str = ""

    def __post_init__(self):
        if self.coef.shape != (len(self.columns),) or self.se.shape != self.coef.shape:
            raise ValueError("coefficient and standard-error vectors must match the columns")
        if np.any(self.se < 0):
            raise ValueError("standard errors must be nonnegative")

    @property
    def coefficients(self) -> dict[Column, float]:
        return dict(zip(self.columns, self.coef.tolist()))

    @property
    def std_errors(self) -> dict[Column, float]:
        return dict(zip(self.columns, self.se.tolist()))

    def coefficient(self, col: Column) -> float:
        return float(self.coef[self.columns.index(col)])

    def to_text(self) -> str:
        labels = column_labels(self.columns)
        width = max([len(s) for s in labels] + [7])
        out = [f"{'feature':<{width}}  {'coef':>10}  {'se':>8}"]
        prev = None
        for lbl, c, b, s in zip(labels, self.columns, self.coef, self.se):
            if prev is not None and c.feature != prev:
                out.append("-" * (width + 22))
            prev = c.feature
            out.append(f"{lbl:<{width}}  {b:>10.4f}  {s:>8.4f}")
        return "\n".join(out) + "\n"


def coded_target(y: np.ndarray, coding: str) -> np.ndarray:
    return 2.0 * y - 1.0 if coding == CODING_PM1 else np.asarray(y, dtype=np.float64)


def _check_shape(X: np.ndarray) -> None:
    n, p = X.shape
    if n <= p:
        raise FitError(f"need more rows than columns (N={n}, p={p})")


def fit_ols(design: DesignMatrix, cfg: FitConfig = FitConfig()) -> ModelFit:
    """Ordinary least squares via a QR factorization.

    se_j = sqrt(sigma2 * [(X'X)^-1]_jj) with sigma2 = RSS / (N - p).
    """
    X = design.values
    y = coded_target(design.target, cfg.target_coding)
    _check_shape(X)
    n, p = X.shape
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    rank_tol = diag.max() * max(n, p) * np.finfo(float).eps * 1e3
    if np.any(diag <= rank_tol):
        if not cfg.pseudo_inverse:
            bad = [design.columns[i].key for i in np.flatnonzero(diag <= rank_tol)]
            raise RankDeficient(f"design matrix is rank deficient near column(s) {bad}")
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        xtx_inv = np.linalg.pinv(X.T @ X)
    else:
        coef = sla.solve_triangular(R, Q.T @ y)
        r_inv = sla.solve_triangular(R, np.eye(p))
        xtx_inv = r_inv @ r_inv.T
    resid = y - X @ coef
    sigma2 = float(resid @ resid) / (n - p)
    var = np.clip(np.diag(xtx_inv), 0.0, None) * sigma2
    return ModelFit(LINEAR, design.columns, coef, np.sqrt(var), sigma2, n, p, True, 1,
                    cfg.target_coding, cfg.threshold)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_likelihood(coef: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    z = X @ coef
    # log sigma(z) = -log(1 + e^-z), computed stably
    return float(np.sum(y * z - np.logaddexp(0.0, z)))


def fisher_information(coef: np.ndarray, X: np.ndarray) -> np.ndarray:
    mu = sigmoid(X @ coef)
    w = mu * (1.0 - mu)
    return (X * w[:, None]).T @ X


def _cho_solve(H: np.ndarray, g: np.ndarray, jitter: float) -> tuple[np.ndarray, np.ndarray]:
    """Solve H x = g, returning (x, H^-1); adds diagonal jitter on failure."""
    try:
        c = sla.cho_factor(H)
    except np.linalg.LinAlgError:
        scale = max(float(np.max(np.diag(H))), 1.0)
        try:
            c = sla.cho_factor(H + jitter * scale * np.eye(H.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("weighted normal matrix is singular") from exc
    return sla.cho_solve(c, g), sla.cho_solve(c, np.eye(H.shape[0]))


def fit_logistic(design: DesignMatrix, cfg: FitConfig = FitConfig()) -> ModelFit:
    """Maximum-likelihood logistic regression by IRLS (Newton steps).

    Converged means the score vector's max-norm fell below ``cfg.tolerance``.
    Divergent coefficients (separable data) end the loop early with
    ``converged=False`` and the last iterate retained.
    """
    X = design.values
    y = np.asarray(design.target, dtype=np.float64)
    _check_shape(X)
    n, p = X.shape
    coef = np.zeros(p)
    converged = False
    message = ""
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        mu = sigmoid(X @ coef)
        grad = X.T @ (y - mu)
        if np.max(np.abs(grad)) < cfg.tolerance:
            converged = True
            it -= 1
            break
        w = mu * (1.0 - mu)
        H = (X * w[:, None]).T @ X
        step, _ = _cho_solve(H, grad, cfg.ridge_jitter)
        # guard against overshooting: halve until the likelihood improves
        ll = log_likelihood(coef, X, y)
        t = 1.0
        while log_likelihood(coef + t * step, X, y) < ll - 1e-12 * abs(ll) and t > 1e-6:
            t /= 2
        coef = coef + t * step
        if np.max(np.abs(coef)) > 1e3 or not np.all(np.isfinite(coef)):
            message = "coefficients diverged; data may be separable"
            break
    else:
        grad = X.T @ (y - sigmoid(X @ coef))
        converged = bool(np.max(np.abs(grad)) < cfg.tolerance)
    if converged and np.max(np.abs(y - sigmoid(X @ coef))) < 1e-6:
        # every row fitted perfectly: the likelihood has no finite maximizer
        converged, message = False, "data are completely separable"
    if not converged and not message:
        message = f"no convergence within {cfg.max_iterations} iterations"
    H = fisher_information(coef, X)
    try:
        _, h_inv = _cho_solve(H, np.zeros(p), cfg.ridge_jitter)
        se = np.sqrt(np.clip(np.diag(h_inv), 0.0, None))
    except RankDeficient:
        se = np.full(p, np.inf)
    return ModelFit(LOGISTIC, design.columns, coef, se, 0.0, n, p, converged, it,
                    CODING_01, cfg.threshold, message)


def predict(fit: ModelFit, design: DesignMatrix) -> np.ndarray:
    """0/1 predictions at the fit's threshold."""
    if tuple(design.columns) != tuple(fit.columns):
        raise ValueError("design columns do not match the fitted model")
    z = design.values @ fit.coef
    if fit.kind == LOGISTIC:
        return (sigmoid(z) >= fit.threshold).astype(np.int8)
    cut = 2.0 * fit.threshold - 1.0 if fit.target_coding == CODING_PM1 else fit.threshold
    return (z >= cut).astype(np.int8)


def accuracy(fit: ModelFit, design: DesignMatrix) -> float:
    return float(np.mean(predict(fit, design) == design.target))


def constant_accuracy(design: DesignMatrix, label: int = 0) -> float:
    """Accuracy of always predicting ``label``."""
    return float(np.mean(design.target == label))


def fit(design: DesignMatrix, kind: str, cfg: FitConfig = FitConfig()) -> ModelFit:
    if kind == LINEAR:
        return fit_ols(design, cfg)
    if kind == LOGISTIC:
        return fit_logistic(design, cfg)
    raise ValueError(f"unknown model kind {kind!r}")


def clear_std_errors(kind: str, design: DesignMatrix, coef: np.ndarray,
                     target_coding: str = CODING_01) -> tuple[np.ndarray, float]:
    """Standard errors at externally supplied coefficients (e.g. decrypted ones).

    Linear: sigma2 = RSS/(N-p) at ``coef`` times diag((X'X)^-1).
    Logistic: diag of the inverse Fisher information at ``coef``.
    """
    X = design.values
    n, p = X.shape
    _check_shape(X)
    if kind == LINEAR:
        y = coded_target(design.target, target_coding)
        resid = y - X @ coef
        sigma2 = float(resid @ resid) / (n - p)
        inv = np.linalg.pinv(X.T @ X)
        return np.sqrt(np.clip(np.diag(inv), 0, None) * sigma2), sigma2
    inv = np.linalg.pinv(fisher_information(coef, X))
    return np.sqrt(np.clip(np.diag(inv), 0, None)), 0.0
