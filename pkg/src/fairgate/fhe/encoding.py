"""Canonical-embedding encoder for slot-batched real vectors.

Slot ``j`` of a polynomial ``m`` is ``m(zeta ** (5**j mod 2N))`` with
``zeta = exp(i*pi/N)``; the conjugate slots sit at ``-5**j``.  Real inputs
therefore yield real integer coefficient vectors.
"""

from __future__ import annotations

import numpy as np


class Encoder:
    def __init__(self, n: int):
        self.n = n
        self.slots = n // 2
        two_n = 2 * n
        rot = np.empty(self.slots, dtype=np.int64)
        g = 1
        for j in range(self.slots):
            rot[j] = g
            g = g * 5 % two_n
        self.rot_group = rot
        self.idx = (rot - 1) // 2
        self.conj_idx = (two_n - rot - 1) // 2
        k = np.arange(n)
        self.twist = np.exp(1j * np.pi * k / n)

    def embed_inverse(self, z: np.ndarray) -> np.ndarray:
        """Real coefficient vector whose slot values are ``z``."""
        e = np.zeros(self.n, dtype=np.complex128)
        e[self.idx] = z
        e[self.conj_idx] = np.conj(z)
        coeffs = np.fft.fft(e) / self.n / self.twist
        return coeffs.real

    def embed(self, coeffs: np.ndarray) -> np.ndarray:
        """Slot values of a real coefficient vector."""
        ev = np.fft.ifft(np.asarray(coeffs, dtype=np.float64) * self.twist) * self.n
        return ev[self.idx]

    def encode(self, values: np.ndarray, scale: float) -> np.ndarray:
        """Integer coefficients (int64) of ``round(scale * embed^-1(values))``."""
        c = np.rint(self.embed_inverse(np.asarray(values, dtype=np.float64)) * scale)
        if np.max(np.abs(c), initial=0.0) >= 2.0**62:
            raise OverflowError("encoded coefficients exceed int64 range")
        return c.astype(np.int64)

    def decode(self, coeffs: np.ndarray, scale: float) -> np.ndarray:
        return self.embed(np.asarray(coeffs, dtype=np.float64) / scale).real
