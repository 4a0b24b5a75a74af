"""Toy leveled approximate-arithmetic RLWE scheme (CKKS family).

Ciphertexts live in the NTT domain over the RNS basis q_0..q_l of their
level.  A special prime P sits above the chain: public-key encryption is
done modulo Q_L * P and divided back down, and key switching uses one
digit per chain prime with the P-hybrid trick.  Every ciphertext at level
l nominally carries the scale ``scales[l]``, where scales[L] = 2**scale_bits
and scales[l-1] = scales[l]**2 / q_l; keeping to this table lets
ciphertexts produced along different paths be added without drift.

NOT SECURE: parameters are sized for desk-scale correctness only.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

from .encoding import Encoder
from .ntt import RnsNtt, mulmod
from .params import FheParams
from .types import (
    Ciphertext,
    EvalKey,
    KeyMismatch,
    KeySet,
    LevelExhausted,
    PublicKey,
    ScaleMismatch,
    SecretKey,
)

TAG = "rlwe"
SCALE_RTOL = 1e-6


@lru_cache(maxsize=8)
def context(params: FheParams) -> "RlweContext":
    return RlweContext(params)


class RlweContext:
    def __init__(self, params: FheParams):
        self.params = params
        self.n = params.ring_degree
        self.slots = params.slot_count
        self.L = params.level_count
        self.sp = self.L + 1
        self.primes = list(params.primes)
        self.ntt = RnsNtt(self.n, self.primes)
        self.q = self.ntt.q
        self.encoder = Encoder(self.n)
        self.P = self.primes[self.sp]

        scales = [0.0] * (self.L + 1)
        scales[self.L] = float(2**params.scale_bits)
        for lvl in range(self.L, 0, -1):
            scales[lvl - 1] = scales[lvl] ** 2 / self.primes[lvl]
        self.scales = scales

        # q_l^{-1} mod q_j for rescaling from level l
        self.q_inv = {
            lvl: np.array([pow(self.primes[lvl], -1, self.primes[j]) for j in range(lvl)], dtype=np.int64)[:, None]
            for lvl in range(1, self.L + 1)
        }
        self.p_inv = np.array([pow(self.P, -1, q) for q in self.primes[: self.L + 1]], dtype=np.int64)[:, None]
        self.p_mod = np.array([self.P % q for q in self.primes[: self.L + 1]], dtype=np.int64)

        self._crt = {}
        for lvl in range(self.L + 1):
            mods = self.primes[: lvl + 1]
            big_q = 1
            for m in mods:
                big_q *= m
            hats = [big_q // m for m in mods]
            invs = np.array([pow(h % m, -1, m) for h, m in zip(hats, mods)], dtype=np.int64)[:, None]
            self._crt[lvl] = (big_q, hats, invs)
        self._perm: dict[int, np.ndarray] = {}

    # ---- helpers -----------------------------------------------------------
    @staticmethod
    def rows(level: int) -> list[int]:
        return list(range(level + 1))

    def ext_rows(self, level: int) -> list[int]:
        return list(range(level + 1)) + [self.sp]

    def to_rns(self, coeffs: np.ndarray, rows: list[int]) -> np.ndarray:
        return np.asarray(coeffs, dtype=np.int64)[None, :] % self.q[rows]

    def centered(self, poly: np.ndarray, q: int) -> np.ndarray:
        return np.where(poly > q // 2, poly - q, poly)

    def perm(self, g: int) -> np.ndarray:
        if g not in self._perm:
            self._perm[g] = self.ntt.automorphism_index(g)
        return self._perm[g]

    def sample_uniform(self, rng: np.random.Generator, rows: list[int]) -> np.ndarray:
        return np.stack([rng.integers(0, self.primes[r], self.n, dtype=np.int64) for r in rows])

    def sample_gauss(self, rng: np.random.Generator) -> np.ndarray:
        return np.rint(rng.normal(0.0, self.params.error_stddev, self.n)).astype(np.int64)

    def sample_sparse_ternary(self, rng: np.random.Generator, weight: int) -> np.ndarray:
        s = np.zeros(self.n, dtype=np.int64)
        pos = rng.choice(self.n, size=min(weight, self.n), replace=False)
        s[pos] = rng.choice(np.array([-1, 1], dtype=np.int64), size=pos.size)
        return s

    def sample_zo(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.n)
        return np.where(u < 0.25, -1, np.where(u < 0.5, 1, 0)).astype(np.int64)

    def mul(self, a: np.ndarray, b: np.ndarray, rows: list[int]) -> np.ndarray:
        return mulmod(a, b, self.q[rows])

    def rotation_element(self, step: int) -> int:
        return pow(5, step, 2 * self.n)

    # ---- keys --------------------------------------------------------------
    def keygen(self) -> KeySet:
        rng = np.random.default_rng(self.params.seed)
        all_rows = list(range(self.L + 2))
        s = self.sample_sparse_ternary(rng, self.params.secret_hamming_weight)
        s_ntt = self.ntt.forward(self.to_rns(s, all_rows), all_rows)
        a = self.sample_uniform(rng, all_rows)
        e = self.ntt.forward(self.to_rns(self.sample_gauss(rng), all_rows), all_rows)
        b = (e - self.mul(a, s_ntt, all_rows)) % self.q
        pk_data = np.stack([b, a])
        key_id = hashlib.sha256(self.params.digest + pk_data.tobytes()).digest()[:16]

        s2 = self.mul(s_ntt, s_ntt, all_rows)
        relin = self._switching_key(s2, s_ntt, rng)
        rotations = {}
        step = 1
        while step < self.slots:
            g = self.rotation_element(step)
            rotations[step] = self._switching_key(s_ntt[:, self.perm(g)], s_ntt, rng)
            step *= 2
        params = self.params
        return KeySet(
            pk=PublicKey(params, key_id, pk_data),
            sk=SecretKey(params, key_id, s_ntt),
            evk=EvalKey(params, key_id, relin, rotations),
        )

    def _switching_key(self, s_from: np.ndarray, s_ntt: np.ndarray, rng) -> np.ndarray:
        """Key that switches a component multiplying ``s_from`` over to ``s``."""
        all_rows = list(range(self.L + 2))
        out = np.empty((self.L + 1, 2, self.L + 2, self.n), dtype=np.int64)
        for i in range(self.L + 1):
            a = self.sample_uniform(rng, all_rows)
            e = self.ntt.forward(self.to_rns(self.sample_gauss(rng), all_rows), all_rows)
            b = (e - self.mul(a, s_ntt, all_rows)) % self.q
            b[i] = (b[i] + mulmod(s_from[i], self.p_mod[i], self.q[i])) % self.q[i]
            out[i, 0] = b
            out[i, 1] = a
        return out

    # ---- encryption --------------------------------------------------------
    def encode(self, values: np.ndarray, scale: float, level: int) -> np.ndarray:
        rows = self.rows(level)
        return self.ntt.forward(self.to_rns(self.encoder.encode(values, scale), rows), rows)

    def encode_constant(self, value: float, scale: float, level: int) -> np.ndarray:
        """NTT form of the constant polynomial ``round(value * scale)``."""
        c = int(round(value * scale))
        # a constant polynomial evaluates to itself at every root
        col = np.array([c % q for q in self.primes[: level + 1]], dtype=np.int64)[:, None]
        return np.broadcast_to(col, (level + 1, self.n)).copy()

    def encrypt(self, pk: PublicKey, values: np.ndarray, rng: np.random.Generator) -> Ciphertext:
        ext = list(range(self.L + 2))
        v = self.ntt.forward(self.to_rns(self.sample_zo(rng), ext), ext)
        c = np.empty((2, self.L + 2, self.n), dtype=np.int64)
        for k in range(2):
            e = self.ntt.forward(self.to_rns(self.sample_gauss(rng), ext), ext)
            c[k] = (self.mul(v, pk.data[k], ext) + e) % self.q
        c = self.mod_down(c, self.L)
        scale = self.scales[self.L]
        c[0] = (c[0] + self.encode(values, scale, self.L)) % self.q[: self.L + 1]
        return self._ct(c, self.L, scale, pk.key_id)

    def decrypt(self, sk: SecretKey, ct: Ciphertext) -> np.ndarray:
        if sk.key_id != ct.key_id:
            raise KeyMismatch("ciphertext was not produced under this key")
        lvl = ct.level
        rows = self.rows(lvl)
        c = ct.payload
        s = sk.data[: lvl + 1]
        m = (c[0] + self.mul(c[1], s, rows)) % self.q[rows]
        coeffs = self.ntt.inverse(m, rows)
        return self.encoder.decode(self.crt_center(coeffs, lvl), ct.scale)

    def crt_center(self, residues: np.ndarray, level: int) -> np.ndarray:
        """Centered lift of RNS residues to floats."""
        if level == 0:
            return self.centered(residues[0], self.primes[0]).astype(np.float64)
        big_q, hats, invs = self._crt[level]
        t = mulmod(residues, invs, self.q[: level + 1])
        acc = np.zeros(self.n, dtype=object)
        for i, h in enumerate(hats):
            acc = acc + t[i].astype(object) * h
        acc = acc % big_q
        acc = np.where(acc > big_q // 2, acc - big_q, acc)
        return acc.astype(np.float64)

    # ---- modulus management --------------------------------------------------
    def mod_down(self, c: np.ndarray, level: int) -> np.ndarray:
        """Divide ciphertext components over rows ``0..level, P`` by P."""
        rows = self.rows(level)
        last = self.ntt.inverse(c[:, -1, :], [self.sp] * c.shape[0])
        last = self.centered(last, self.P)
        out = np.empty((c.shape[0], level + 1, self.n), dtype=np.int64)
        q = self.q[rows]
        for k in range(c.shape[0]):
            corr = self.ntt.forward(last[k][None, :] % q, rows)
            out[k] = mulmod((c[k, : level + 1] - corr) % q, self.p_inv[: level + 1], q)
        return out

    def rescale_payload(self, c: np.ndarray, level: int) -> np.ndarray:
        if level < 1:
            raise LevelExhausted("cannot rescale a level-0 ciphertext")
        rows = self.rows(level - 1)
        q = self.q[rows]
        k = c.shape[0]
        last = self.ntt.inverse(c[:, level, :], [level] * k)
        last = self.centered(last, self.primes[level])
        out = np.empty((k, level, self.n), dtype=np.int64)
        for i in range(k):
            corr = self.ntt.forward(last[i][None, :] % q, rows)
            out[i] = mulmod((c[i, :level] - corr) % q, self.q_inv[level], q)
        return out

    def drop_to(self, ct: Ciphertext, level: int) -> Ciphertext:
        if level > ct.level:
            raise ValueError("cannot raise a ciphertext's level without refresh")
        if level == ct.level:
            return ct
        return self._ct(ct.payload[:, : level + 1].copy(), level, ct.scale, ct.key_id)

    def adjust(self, ct: Ciphertext, level: int, scale: float) -> Ciphertext:
        """Bring ``ct`` down to ``level`` carrying exactly ``scale`` (approximately)."""
        if level > ct.level:
            raise ValueError("cannot raise a ciphertext's level without refresh")
        if abs(ct.scale / scale - 1.0) <= 1e-9:
            return self.drop_to(ct, level)
        if level == ct.level:
            raise ScaleMismatch(f"scales {ct.scale} and {scale} differ at level {level}")
        lvl = ct.level
        factor = int(round(scale * self.primes[lvl] / ct.scale))
        rows = self.rows(lvl)
        col = np.array([factor % q for q in self.primes[: lvl + 1]], dtype=np.int64)[:, None]
        c = mulmod(ct.payload, col[None, :, :], self.q[rows][None, :, :])
        c = self.rescale_payload(c, lvl)
        new_scale = ct.scale * factor / self.primes[lvl]
        return self.drop_to(self._ct(c, lvl - 1, new_scale, ct.key_id), level)

    def align(self, a: Ciphertext, b: Ciphertext) -> tuple[Ciphertext, Ciphertext]:
        if a.key_id != b.key_id:
            raise KeyMismatch("operands were encrypted under different keys")
        if a.level > b.level:
            a = self.adjust(a, b.level, b.scale)
        elif b.level > a.level:
            b = self.adjust(b, a.level, a.scale)
        if abs(a.scale / b.scale - 1.0) > SCALE_RTOL:
            raise ScaleMismatch(f"operand scales {a.scale:.6g} and {b.scale:.6g} differ")
        return a, b

    # ---- arithmetic --------------------------------------------------------
    def add(self, a: Ciphertext, b: Ciphertext, sign: int = 1) -> Ciphertext:
        a, b = self.align(a, b)
        q = self.q[self.rows(a.level)]
        c = (a.payload + sign * b.payload) % q
        return self._ct(c, a.level, a.scale, a.key_id)

    def negate(self, a: Ciphertext) -> Ciphertext:
        q = self.q[self.rows(a.level)]
        return self._ct((-a.payload) % q, a.level, a.scale, a.key_id)

    def add_plain(self, a: Ciphertext, values, scalar: bool) -> Ciphertext:
        if scalar:
            pt = self.encode_constant(float(values), a.scale, a.level)
        else:
            pt = self.encode(values, a.scale, a.level)
        c = a.payload.copy()
        c[0] = (c[0] + pt) % self.q[self.rows(a.level)]
        return self._ct(c, a.level, a.scale, a.key_id)

    def tensor(self, a: Ciphertext, b: Ciphertext) -> np.ndarray:
        rows = self.rows(a.level)
        q = self.q[rows]
        a0, a1 = a.payload
        b0, b1 = b.payload
        d0 = self.mul(a0, b0, rows)
        d1 = (self.mul(a0, b1, rows) + self.mul(a1, b0, rows)) % q
        d2 = self.mul(a1, b1, rows)
        return np.stack([d0, d1, d2])

    def sum_products(self, evk: EvalKey, pairs) -> Ciphertext:
        """``sum(a_i * b_i)`` with a single relinearization and rescale."""
        pairs = list(pairs)
        if not pairs:
            raise ValueError("no operands")
        level = min(min(a.level, b.level) for a, b in pairs)
        if level < 1:
            raise LevelExhausted("multiplication needs level >= 1")
        acc = None
        scale = key_id = None
        for a, b in pairs:
            a, b = self.align(a, b)
            if a.level > level:
                a = self.adjust(a, level, self.scales[level])
                b = self.adjust(b, level, self.scales[level])
            d = self.tensor(a, b)
            if acc is None:
                acc, scale, key_id = d, a.scale * b.scale, a.key_id
                continue
            if key_id != a.key_id:
                raise KeyMismatch("operands were encrypted under different keys")
            if abs(a.scale * b.scale / scale - 1.0) > SCALE_RTOL:
                raise ScaleMismatch("products carry different scales")
            acc = (acc + d) % self.q[self.rows(level)]
        if key_id != evk.key_id:
            raise KeyMismatch("evaluation key does not match ciphertext")
        k0, k1 = self.key_switch(acc[2], evk.relin, level)
        q = self.q[self.rows(level)]
        c = np.stack([(acc[0] + k0) % q, (acc[1] + k1) % q])
        c = self.rescale_payload(c, level)
        return self._ct(c, level - 1, scale / self.primes[level], key_id)

    def mul_plain(self, a: Ciphertext, values, scalar: bool) -> Ciphertext:
        if a.level < 1:
            raise LevelExhausted("multiplication needs level >= 1")
        lvl = a.level
        pt_scale = self.scales[lvl - 1] * self.primes[lvl] / a.scale
        if scalar:
            pt = self.encode_constant(float(values), pt_scale, lvl)
        else:
            pt = self.encode(values, pt_scale, lvl)
        rows = self.rows(lvl)
        c = self.mul(a.payload, pt[None, :, :], rows)
        c = self.rescale_payload(c, lvl)
        return self._ct(c, lvl - 1, a.scale * pt_scale / self.primes[lvl], a.key_id)

    def key_switch(self, d: np.ndarray, key: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray]:
        rows = self.rows(level)
        ext = self.ext_rows(level)
        d_coef = self.ntt.inverse(d, rows)
        k = len(ext)
        digits = np.empty(((level + 1) * k, self.n), dtype=np.int64)
        q_ext = self.q[ext]
        for i in range(level + 1):
            di = self.centered(d_coef[i], self.primes[i])
            digits[i * k : (i + 1) * k] = di[None, :] % q_ext
        digits = self.ntt.forward(digits, ext * (level + 1)).reshape(level + 1, k, self.n)
        acc = np.zeros((2, k, self.n), dtype=np.int64)
        for i in range(level + 1):
            kb = key[i][:, ext, :]
            acc += mulmod(digits[i][None, :, :], kb, q_ext[None, :, :])
            acc %= q_ext[None, :, :]
        out = self.mod_down(acc, level)
        return out[0], out[1]

    def rotate(self, evk: EvalKey, a: Ciphertext, steps: int) -> Ciphertext:
        if a.key_id != evk.key_id:
            raise KeyMismatch("evaluation key does not match ciphertext")
        steps %= self.slots
        bit = 1
        while steps:
            if steps & bit:
                a = self._rotate_pow2(evk, a, bit)
                steps ^= bit
            bit <<= 1
        return a

    def _rotate_pow2(self, evk: EvalKey, a: Ciphertext, step: int) -> Ciphertext:
        perm = self.perm(self.rotation_element(step))
        c0 = a.payload[0][:, perm]
        c1 = a.payload[1][:, perm]
        k0, k1 = self.key_switch(c1, evk.rotations[step], a.level)
        q = self.q[self.rows(a.level)]
        return self._ct(np.stack([(c0 + k0) % q, k1]), a.level, a.scale, a.key_id)

    def _ct(self, payload: np.ndarray, level: int, scale: float, key_id: bytes) -> Ciphertext:
        return Ciphertext(TAG, payload, level, scale, key_id, self.params.digest)
