"""Learn algorithms run by the ML role over encrypted column blocks.

Data layout: one ciphertext per (column, row block), slots holding the
column values of ``block_rows`` consecutive rows divided by a public
per-column scale s_j; unused slots are zero.  Each model coefficient is
kept as its own ciphertext with the value replicated in every slot.

Gradient descent (full batch, fixed epochs, theta starts at 0):

    linear:   theta_j -= (eta/N) sum_i (z_i - y_i) x_ij
    logistic: theta_j -= (eta/N) sum_i (poly(z_i) - y_i) x_ij

with z = X theta and poly the cubic least-squares sigmoid fit on [-8, 8]
(see scripts/fit_sigmoid_poly.py).  Coefficients are divided by s_j at the
end so they apply to raw-scale data.  ``plain_gd`` is the float64 twin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .. import fhe
from ..fhe import Ciphertext, EvalKey, PublicKey
from ..regress import CODING_01, CODING_PM1, LINEAR, LOGISTIC, FitConfig, fit_logistic, fit_ols
from ..data import Column, DesignMatrix

LINEAR_GD = "linear_gd"
LOGISTIC_GD = "logistic_gd"
OLS = "ols"
IRLS = "irls"
ALGORITHMS = (LINEAR_GD, LOGISTIC_GD, OLS, IRLS)
EXACT = (OLS, IRLS)

SIGMOID_POLY = (0.5, 0.150120413273521, 0.0, -0.00159301740722001)

# multiplicative depth of one epoch measured from a fresh ciphertext
EPOCH_DEPTH = {LINEAR_GD: 2, LOGISTIC_GD: 3}


class LearnError(RuntimeError):
    pass


@dataclass(frozen=True)
class LearnConfig:
    algorithm: str = LINEAR_GD
    epochs: int = 32
    learning_rate: float = 0.1
    batch_slots: int | None = None  # rows per ciphertext block; slot_count when None
    sigmoid_poly: tuple[float, float, float, float] = SIGMOID_POLY
    refresh_every: int | None = None  # multiplications between refreshes; level_count - 2 when None
    # (raised to one epoch's depth on short chains)
    target_coding: str = CODING_01

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown learning algorithm {self.algorithm!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if len(self.sigmoid_poly) != 4:
            raise ValueError("sigmoid_poly needs four coefficients")
        if self.target_coding not in (CODING_01, CODING_PM1):
            raise ValueError(f"unknown target coding {self.target_coding!r}")

    @property
    def model_kind(self) -> str:
        return LOGISTIC if self.algorithm in (LOGISTIC_GD, IRLS) else LINEAR

    def resolved(self, params: fhe.FheParams) -> "LearnConfig":
        """Fill parameter-dependent defaults and check them against ``params``."""
        cfg = self
        if cfg.batch_slots is None:
            cfg = replace(cfg, batch_slots=params.slot_count)
        if cfg.refresh_every is None:
            need = EPOCH_DEPTH.get(cfg.algorithm, 1)
            cfg = replace(cfg, refresh_every=min(max(params.level_count - 2, need), params.level_count - 1))
        if not 1 <= cfg.batch_slots <= params.slot_count:
            raise ValueError(f"batch_slots must lie in [1, {params.slot_count}]")
        if cfg.refresh_every > params.level_count - 1:
            raise ValueError("refresh_every must not exceed level_count - 1")
        if cfg.algorithm in EPOCH_DEPTH:
            need = EPOCH_DEPTH[cfg.algorithm]
            if cfg.refresh_every < need:
                raise ValueError(f"{cfg.algorithm} needs {need} levels per epoch; "
                                 f"refresh_every={cfg.refresh_every}, L={params.level_count}")
        return cfg


# --- plaintext twins -----------------------------------------------------------

def plain_gd(X: np.ndarray, y: np.ndarray, scales: np.ndarray, cfg: LearnConfig) -> np.ndarray:
    """Float64 gradient descent with exactly the encrypted schedule."""
    Xt = X / scales
    n = X.shape[0]
    theta = np.zeros(X.shape[1])
    c0, c1, c2, c3 = cfg.sigmoid_poly
    for _ in range(cfg.epochs):
        z = Xt @ theta
        if cfg.algorithm == LINEAR_GD:
            r = z - y
        elif cfg.algorithm == LOGISTIC_GD:
            r = c0 + c1 * z + c2 * z * z + c3 * z * z * z - y
        else:
            raise LearnError(f"{cfg.algorithm} is not a gradient-descent learner")
        theta = theta - (cfg.learning_rate / n) * (Xt.T @ r)
    return theta / scales


def exact_fit(X: np.ndarray, y: np.ndarray, cfg: LearnConfig) -> np.ndarray:
    """Closed-form / Newton coefficients for the exact learners."""
    cols = tuple(Column(f"c{j}") for j in range(X.shape[1]))
    if cfg.algorithm == OLS:
        # y arrives already coded; the 0/1 coding below leaves it untouched
        return fit_ols(DesignMatrix(X.copy(), cols, np.asarray(y, dtype=np.float64)), FitConfig()).coef
    if cfg.algorithm == IRLS:
        f = fit_logistic(DesignMatrix(X.copy(), cols, np.asarray(y, dtype=np.float64)), FitConfig())
        if not f.converged:
            raise LearnError(f"logistic fit failed: {f.message}")
        return f.coef
    raise LearnError(f"{cfg.algorithm} is not an exact learner")


# --- encrypted ------------------------------------------------------------------

Refresher = Callable[[list[Ciphertext]], list[Ciphertext]]


@dataclass
class EvalContext:
    """What the ML role holds: public keys, randomness and a refresh channel."""

    evk: EvalKey
    pk: PublicKey
    rng: np.random.Generator
    refresh: Refresher
    refreshes: int = 0
    refreshed_cts: int = 0

    def do_refresh(self, cts: list[Ciphertext]) -> list[Ciphertext]:
        self.refreshes += 1
        self.refreshed_cts += len(cts)
        out = self.refresh(cts)
        if len(out) != len(cts):
            raise LearnError("refresh returned the wrong number of ciphertexts")
        return out


def train_encrypted(ctx: EvalContext, blocks: Sequence[Sequence[Ciphertext]], y_blocks: Sequence[Ciphertext],
                    scales: Sequence[float], n_rows: int, cfg: LearnConfig) -> list[Ciphertext]:
    """Run the configured learner; returns one coefficient ciphertext per column.

    ``blocks[j][b]`` is column j, row block b (values already divided by
    ``scales[j]``); ``y_blocks[b]`` the coded target.
    """
    params = ctx.evk.params
    cfg = cfg.resolved(params)
    if cfg.algorithm in EXACT:
        return _train_exact(ctx, blocks, y_blocks, scales, n_rows, cfg)
    p = len(blocks)
    if p == 0:
        raise LearnError("no columns to train on")
    ev = ctx.evk
    slots = params.slot_count
    eta_n = cfg.learning_rate / n_rows
    # x_hat = (eta/N) x_tilde, computed once per model
    xhat = [[fhe.eval_mul_plain(ev, ct, eta_n) for ct in col] for col in blocks]
    theta = [fhe.encrypt(ctx.pk, np.zeros(1), ctx.rng) for _ in range(p)]
    used = 0
    depth = EPOCH_DEPTH[cfg.algorithm]
    c0, c1, c2, c3 = cfg.sigmoid_poly
    if cfg.algorithm == LOGISTIC_GD:
        # sum_i (c0 - y_i) x_hat_ij does not depend on theta
        shift = [fhe.eval_add_plain(ev, fhe.eval_negate(ev, yb), c0) for yb in y_blocks]
        const = [fhe.eval_inner_sum(ev, fhe.eval_sum_products(ev, shift, xj), slots) for xj in xhat]
        x1 = [[fhe.eval_mul_plain(ev, ct, c1) for ct in col] for col in xhat]
        x3 = [[fhe.eval_mul_plain(ev, ct, c3) for ct in col] for col in xhat]
        x2 = [[fhe.eval_mul_plain(ev, ct, c2) for ct in col] for col in xhat] if c2 else None
    for _ in range(cfg.epochs):
        if used + depth > cfg.refresh_every or min(t.level for t in theta) < depth:
            theta = ctx.do_refresh(theta)
            used = 0
        z = [fhe.eval_sum_products(ev, theta, [blocks[j][b] for j in range(p)]) for b in range(len(y_blocks))]
        if cfg.algorithm == LINEAR_GD:
            r = [fhe.eval_sub(ev, zb, yb) for zb, yb in zip(z, y_blocks)]
            grads = [fhe.eval_inner_sum(ev, fhe.eval_sum_products(ev, r, xhat[j]), slots) for j in range(p)]
        else:
            z2 = [fhe.eval_mul(ev, zb, zb) for zb in z]
            grads = []
            for j in range(p):
                u = [fhe.eval_mul(ev, zb, xb) for zb, xb in zip(z, x3[j])]
                lhs, rhs = list(z2) + list(z), list(u) + list(x1[j])
                if x2 is not None:
                    lhs, rhs = lhs + list(z2), rhs + list(x2[j])
                g = fhe.eval_inner_sum(ev, fhe.eval_sum_products(ev, lhs, rhs), slots)
                grads.append(fhe.eval_add(ev, g, const[j]))
        theta = [fhe.eval_sub(ev, t, g) for t, g in zip(theta, grads)]
        used += depth
    return _denormalize(ctx, theta, scales)


def _denormalize(ctx: EvalContext, theta: list[Ciphertext], scales: Sequence[float]) -> list[Ciphertext]:
    if all(s == 1.0 for s in scales):
        return theta
    if min(t.level for t in theta) < 1:
        theta = ctx.do_refresh(theta)
    return [t if s == 1.0 else fhe.eval_mul_plain(ctx.evk, t, 1.0 / s) for t, s in zip(theta, scales)]


def _train_exact(ctx: EvalContext, blocks, y_blocks, scales, n_rows: int, cfg: LearnConfig) -> list[Ciphertext]:
    p = len(blocks)
    nb = len(y_blocks)
    rows = cfg.batch_slots
    scales = np.asarray(scales, dtype=np.float64)

    def learn(*vals):
        cols = [np.concatenate([v[:rows] for v in vals[j * nb : (j + 1) * nb]])[:n_rows] for j in range(p)]
        y = np.concatenate([v[:rows] for v in vals[p * nb :]])[:n_rows]
        X = np.column_stack(cols)
        coef = exact_fit(X, y, cfg) / scales
        return [np.full(1, c) for c in coef]

    flat = [ct for col in blocks for ct in col] + list(y_blocks)
    return fhe.eval_function(ctx.evk, learn, flat)


def block_rows(values: np.ndarray, rows: int) -> list[np.ndarray]:
    """Split a column into zero-padded blocks of ``rows`` entries."""
    n = len(values)
    nb = max(1, -(-n // rows))
    return [values[b * rows : (b + 1) * rows] for b in range(nb)]
