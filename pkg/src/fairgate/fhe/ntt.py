"""Residue-number-system polynomial arithmetic over Z_q[X]/(X^N + 1).

Polynomials are stored as int64 arrays of shape ``(k, N)``, one row per
prime of the RNS basis.  All primes must satisfy ``q = 1 mod 2N`` so the
negacyclic NTT exists, and must be below 2**41 so that the float quotient
in :func:`mulmod` is never off by more than one.
"""

from __future__ import annotations

import numpy as np

MAX_MODULUS_BITS = 41

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _prime_factors(n: int) -> list[int]:
    out = []
    f = 2
    while f * f <= n:
        if n % f == 0:
            out.append(f)
            while n % f == 0:
                n //= f
        f += 1 if f == 2 else 2
    if n > 1:
        out.append(n)
    return out


def primitive_root_2n(q: int, n: int) -> int:
    """Smallest-generator-derived primitive 2n-th root of unity mod q."""
    if (q - 1) % (2 * n):
        raise ValueError(f"{q} is not 1 mod {2 * n}")
    factors = _prime_factors(q - 1)
    for g in range(2, q):
        if all(pow(g, (q - 1) // f, q) != 1 for f in factors):
            psi = pow(g, (q - 1) // (2 * n), q)
            assert pow(psi, n, q) == q - 1
            return psi
    raise ValueError(f"no generator for {q}")


def mulmod(a: np.ndarray, b: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``a * b mod q`` for operands already reduced into [0, q).

    The quotient is estimated in float64; the exact remainder is then
    recovered with wrapping int64 arithmetic and one correction each way.
    """
    quot = np.multiply(a, b, dtype=np.float64)
    quot /= q
    r = a * b
    r -= quot.astype(np.int64) * q
    np.add(r, q, out=r, where=r < 0)
    np.subtract(r, q, out=r, where=r >= q)
    return r


def bit_reverse(i: int, bits: int) -> int:
    return int(format(i, f"0{bits}b")[::-1], 2) if bits else 0


class RnsNtt:
    """Negacyclic NTT tables for a fixed list of primes.

    The forward transform leaves evaluations in bit-reversed order:
    output index ``i`` holds ``a(psi ** (2 * brv(i) + 1))``.
    """

    def __init__(self, n: int, moduli: list[int]):
        if n & (n - 1):
            raise ValueError("ring degree must be a power of two")
        for q in moduli:
            if q >= 1 << MAX_MODULUS_BITS:
                raise ValueError(f"modulus {q} exceeds {MAX_MODULUS_BITS} bits")
        self.n = n
        self.logn = n.bit_length() - 1
        self.moduli = list(moduli)
        self.q = np.array(moduli, dtype=np.int64)[:, None]
        brv = [bit_reverse(i, self.logn) for i in range(n)]
        self.zetas = np.empty((len(moduli), n), dtype=np.int64)
        self.n_inv = np.empty((len(moduli), 1), dtype=np.int64)
        self.psi = []
        for r, q in enumerate(moduli):
            psi = primitive_root_2n(q, n)
            self.psi.append(psi)
            powers = [1] * n
            for i in range(1, n):
                powers[i] = powers[i - 1] * psi % q
            self.zetas[r] = [powers[brv[i]] for i in range(n)]
            self.n_inv[r, 0] = pow(n, -1, q)
        self._brv = np.array(brv, dtype=np.int64)

    def rows(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = np.asarray(idx)
        return self.q[idx], self.zetas[idx], self.n_inv[idx]

    def forward(self, a: np.ndarray, idx) -> np.ndarray:
        """Forward NTT of ``a`` (shape ``(len(idx), N)``) over primes ``idx``."""
        q, zetas, _ = self.rows(idx)
        a = a.copy()
        k = a.shape[0]
        q3 = q[:, :, None]
        length = self.n // 2
        while length >= 1:
            m = self.n // (2 * length)
            v = a.reshape(k, m, 2, length)
            z = zetas[:, m : 2 * m, None]
            t = mulmod(v[:, :, 1, :], z, q3)
            lo = v[:, :, 0, :]
            v[:, :, 1, :] = (lo - t) % q3
            v[:, :, 0, :] = (lo + t) % q3
            length //= 2
        return a

    def inverse(self, a: np.ndarray, idx) -> np.ndarray:
        q, zetas, n_inv = self.rows(idx)
        a = a.copy()
        k = a.shape[0]
        q3 = q[:, :, None]
        length = 1
        while length < self.n:
            m = self.n // (2 * length)
            v = a.reshape(k, m, 2, length)
            z = zetas[:, 2 * m - 1 : m - 1 : -1, None]
            lo = v[:, :, 0, :].copy()
            hi = v[:, :, 1, :]
            v[:, :, 0, :] = (lo + hi) % q3
            v[:, :, 1, :] = mulmod((hi - lo) % q3, z, q3)
            length *= 2
        return mulmod(a, n_inv, q)

    def automorphism_index(self, g: int) -> np.ndarray:
        """Permutation ``perm`` with ``ntt(a(X^g))[i] == ntt(a)[perm[i]]``."""
        two_n = 2 * self.n
        exps = 2 * self._brv + 1
        target = (exps * g) % two_n
        # position of each odd exponent in bit-reversed order
        pos = np.empty(two_n, dtype=np.int64)
        pos[exps] = np.arange(self.n)
        return pos[target]


def negacyclic_schoolbook(a, b, q: int) -> list[int]:
    """Reference O(N^2) product in Z_q[X]/(X^N + 1) on Python ints."""
    n = len(a)
    out = [0] * n
    for i, ai in enumerate(a):
        if not ai:
            continue
        for j, bj in enumerate(b):
            k = i + j
            if k < n:
                out[k] += ai * bj
            else:
                out[k - n] -= ai * bj
    return [x % q for x in out]
