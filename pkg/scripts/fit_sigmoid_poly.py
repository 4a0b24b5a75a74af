"""Least-squares cubic fit of the logistic sigmoid on [-8, 8].

Minimizes the continuous L2 error (Gauss-Legendre quadrature, exact for the
polynomial part) and prints the coefficients (c0, c1, c2, c3) that
fairgate.protocol.learn.SIGMOID_POLY stores.
"""

import numpy as np

LO, HI, DEGREE = -8.0, 8.0, 3


def fit(nodes: int = 400) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = (x + 1) * (HI - LO) / 2 + LO
    w = w * (HI - LO) / 2
    f = 1.0 / (1.0 + np.exp(-x))
    V = np.vander(x, DEGREE + 1, increasing=True)
    G = V.T @ (w[:, None] * V)
    return np.linalg.solve(G, V.T @ (w * f))


if __name__ == "__main__":
    c = fit()
    c[np.abs(c) < 1e-15] = 0.0
    print("SIGMOID_POLY = (" + ", ".join(f"{v:.15g}" for v in c) + ")")
    xs = np.linspace(LO, HI, 2001)
    err = np.polyval(c[::-1], xs) - 1 / (1 + np.exp(-xs))
    print(f"max abs error on [{LO:g}, {HI:g}]: {np.max(np.abs(err)):.4f}")
