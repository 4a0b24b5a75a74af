"""Reference backend: the "ciphertext" is the plaintext vector itself.

It honours the same level bookkeeping as the RLWE backend so circuits that
run here also fit the encrypted depth budget.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

from .params import FheParams
from .types import Ciphertext, EvalKey, KeyMismatch, KeySet, LevelExhausted, PublicKey, SecretKey

TAG = "cleartext"


@lru_cache(maxsize=8)
def context(params: FheParams) -> "ClearContext":
    return ClearContext(params)


class ClearContext:
    def __init__(self, params: FheParams):
        self.params = params
        self.slots = params.slot_count
        self.L = params.level_count
        self.scale = float(2**params.scale_bits)

    def keygen(self) -> KeySet:
        rng = np.random.default_rng(self.params.seed)
        secret = rng.bytes(32)
        key_id = hashlib.sha256(self.params.digest + secret).digest()[:16]
        return KeySet(
            pk=PublicKey(self.params, key_id, key_id),
            sk=SecretKey(self.params, key_id, secret),
            evk=EvalKey(self.params, key_id, None, {}),
        )

    def encrypt(self, pk: PublicKey, values: np.ndarray, rng=None) -> Ciphertext:
        return self._ct(values.copy(), self.L, pk.key_id)

    def decrypt(self, sk: SecretKey, ct: Ciphertext) -> np.ndarray:
        if sk.key_id != ct.key_id:
            raise KeyMismatch("ciphertext was not produced under this key")
        return np.array(ct.payload, dtype=np.float64)

    def _check(self, a: Ciphertext, b: Ciphertext) -> int:
        if a.key_id != b.key_id:
            raise KeyMismatch("operands were encrypted under different keys")
        return min(a.level, b.level)

    def add(self, a: Ciphertext, b: Ciphertext, sign: int = 1) -> Ciphertext:
        lvl = self._check(a, b)
        return self._ct(a.payload + sign * b.payload, lvl, a.key_id)

    def negate(self, a: Ciphertext) -> Ciphertext:
        return self._ct(-a.payload, a.level, a.key_id)

    def add_plain(self, a: Ciphertext, values, scalar: bool) -> Ciphertext:
        return self._ct(a.payload + values, a.level, a.key_id)

    def sum_products(self, evk: EvalKey, pairs) -> Ciphertext:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("no operands")
        level = min(min(self._check(a, b), a.level) for a, b in pairs)
        if level < 1:
            raise LevelExhausted("multiplication needs level >= 1")
        if pairs[0][0].key_id != evk.key_id:
            raise KeyMismatch("evaluation key does not match ciphertext")
        acc = np.zeros(self.slots)
        for a, b in pairs:
            acc = acc + a.payload * b.payload
        return self._ct(acc, level - 1, pairs[0][0].key_id)

    def mul_plain(self, a: Ciphertext, values, scalar: bool) -> Ciphertext:
        if a.level < 1:
            raise LevelExhausted("multiplication needs level >= 1")
        return self._ct(a.payload * values, a.level - 1, a.key_id)

    def rotate(self, evk: EvalKey, a: Ciphertext, steps: int) -> Ciphertext:
        if a.key_id != evk.key_id:
            raise KeyMismatch("evaluation key does not match ciphertext")
        return self._ct(np.roll(a.payload, -steps), a.level, a.key_id)

    def drop_to(self, ct: Ciphertext, level: int) -> Ciphertext:
        if level > ct.level:
            raise ValueError("cannot raise a ciphertext's level without refresh")
        return self._ct(ct.payload, level, ct.key_id)

    def _ct(self, payload: np.ndarray, level: int, key_id: bytes) -> Ciphertext:
        return Ciphertext(TAG, payload, level, self.scale, key_id, self.params.digest)
