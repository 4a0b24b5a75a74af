"""Four-algorithm FHE interface (KeyGen, Encrypt, Eval, Decrypt).

Two interchangeable backends sit behind the same functions: ``cleartext``
(exact reference, no confidentiality) and ``rlwe`` (toy leveled scheme with
slot-batched approximate real arithmetic).  Neither makes a security claim.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import clear, rlwe
from .params import PRESETS, FheParams, ParamError, preset
from .serialize import (
    SerializationError,
    deserialize_ciphertext,
    deserialize_evk,
    deserialize_pk,
    deserialize_sk,
    serialize_ciphertext,
    serialize_evk,
    serialize_pk,
    serialize_sk,
)
from .types import (
    Ciphertext,
    EvalKey,
    FheError,
    KeyMismatch,
    KeySet,
    LevelExhausted,
    PublicKey,
    RefreshToken,
    ScaleMismatch,
    SecretKey,
    UnsupportedCircuit,
    VectorTooLong,
    as_plain,
)

NOT_SECURE_WARNING = (
    "WARNING: toy FHE parameters. These keys and ciphertexts provide NO security "
    "and must never protect real data."
)

__all__ = [
    "Ciphertext", "EvalKey", "FheError", "FheParams", "KeyMismatch", "KeySet",
    "LevelExhausted", "NOT_SECURE_WARNING", "PRESETS", "ParamError", "PublicKey",
    "RefreshToken", "ScaleMismatch", "SecretKey", "SerializationError",
    "UnsupportedCircuit", "VectorTooLong", "decrypt", "deserialize_ciphertext",
    "deserialize_evk", "deserialize_pk", "deserialize_sk", "encrypt", "eval_add",
    "eval_add_plain", "eval_function", "eval_inner_sum", "eval_mul",
    "eval_mul_plain", "eval_negate", "eval_rotate", "eval_sub", "eval_sum_products",
    "keygen", "precision_bound", "preset", "refresh_apply", "refresh_request", "serialize_ciphertext",
    "serialize_evk", "serialize_pk", "serialize_sk",
]


def precision_bound(params: FheParams) -> float:
    """Declared max abs encrypt/decrypt error for messages with |m_i| <= 1.

    Fresh noise after ModDown is dominated by the rounding term t0 + t1*s
    (coefficient variance ~ (h+1)/12); its canonical embedding grows like
    sqrt(N (h+1)).  The factor 4 covers the max over all slots.
    """
    if params.backend == "cleartext":
        return 0.0
    return 4.0 * math.sqrt(params.ring_degree * (params.secret_hamming_weight + 1)) / 2.0**params.scale_bits


def _ctx(params: FheParams):
    return rlwe.context(params) if params.backend == "rlwe" else clear.context(params)


def _ctx_for(ct: Ciphertext, params: FheParams):
    if ct.params_digest != params.digest:
        raise KeyMismatch("ciphertext belongs to a different parameter set")
    return _ctx(params)


def keygen(params: FheParams) -> KeySet:
    """Generate (pk, sk, evk); deterministic in ``params.seed``."""
    return _ctx(params).keygen()


def encrypt(pk: PublicKey, m, rng: np.random.Generator | None = None) -> Ciphertext:
    params = pk.params
    values = as_plain(m, params.slot_count)
    if rng is None:
        rng = np.random.default_rng()
    return _ctx(params).encrypt(pk, values, rng)


def decrypt(sk: SecretKey, ct: Ciphertext) -> np.ndarray:
    return _ctx_for(ct, sk.params).decrypt(sk, ct)


def eval_add(evk: EvalKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return _ctx_for(a, evk.params).add(a, b)


def eval_sub(evk: EvalKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return _ctx_for(a, evk.params).add(a, b, sign=-1)


def eval_negate(evk: EvalKey, a: Ciphertext) -> Ciphertext:
    return _ctx_for(a, evk.params).negate(a)


def _plain_arg(m, slots: int):
    if np.ndim(m) == 0:
        return float(m), True
    return as_plain(m, slots), False


def eval_add_plain(evk: EvalKey, a: Ciphertext, m) -> Ciphertext:
    value, scalar = _plain_arg(m, evk.params.slot_count)
    return _ctx_for(a, evk.params).add_plain(a, value, scalar)


def eval_mul(evk: EvalKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Slotwise product; relinearizes and rescales, consuming one level."""
    return _ctx_for(a, evk.params).sum_products(evk, [(a, b)])


def eval_sum_products(evk: EvalKey, lhs: Sequence[Ciphertext], rhs: Sequence[Ciphertext]) -> Ciphertext:
    """``sum_i lhs[i] * rhs[i]`` at the cost of one multiplication level."""
    if len(lhs) != len(rhs):
        raise ValueError("operand lists differ in length")
    return _ctx_for(lhs[0], evk.params).sum_products(evk, list(zip(lhs, rhs)))


def eval_mul_plain(evk: EvalKey, a: Ciphertext, m) -> Ciphertext:
    """Multiply by a plaintext vector or scalar, consuming one level."""
    value, scalar = _plain_arg(m, evk.params.slot_count)
    return _ctx_for(a, evk.params).mul_plain(a, value, scalar)


def eval_rotate(evk: EvalKey, a: Ciphertext, steps: int) -> Ciphertext:
    """Cyclic left rotation of the slots by ``steps`` (negative rotates right)."""
    return _ctx_for(a, evk.params).rotate(evk, a, steps)


def eval_inner_sum(evk: EvalKey, a: Ciphertext, width: int) -> Ciphertext:
    """Rotate-and-add so slot 0 holds the sum of the first ``width`` slots.

    With ``width == slot_count`` every slot holds the total.
    """
    slots = evk.params.slot_count
    if width < 1 or width & (width - 1) or width > slots:
        raise ValueError(f"width must be a power of two in [1, {slots}]")
    ctx = _ctx_for(a, evk.params)
    step = 1
    while step < width:
        a = ctx.add(a, ctx.rotate(evk, a, step))
        step *= 2
    return a


def eval_drop_level(evk: EvalKey, a: Ciphertext, level: int) -> Ciphertext:
    return _ctx_for(a, evk.params).drop_to(a, level)


def eval_function(evk: EvalKey, f: Callable[..., Sequence[np.ndarray]], cts: Sequence[Ciphertext]) -> list[Ciphertext]:
    """Evaluate an arbitrary function of slot vectors.

    Only the cleartext backend can do this; it stands in for a circuit the
    RLWE backend has no vocabulary for (e.g. exact matrix inversion).
    """
    params = evk.params
    if params.backend != "cleartext":
        raise UnsupportedCircuit("arbitrary functions are only evaluable on the cleartext backend")
    if not cts:
        raise ValueError("no operands")
    ctx = _ctx_for(cts[0], params)
    for ct in cts:
        if ct.key_id != evk.key_id:
            raise KeyMismatch("evaluation key does not match ciphertext")
    outs = f(*[np.asarray(ct.payload) for ct in cts])
    level = min(ct.level for ct in cts)
    return [ctx._ct(as_plain(o, params.slot_count), level, evk.key_id) for o in outs]


def refresh_request(ct: Ciphertext, request_id: int = 0) -> RefreshToken:
    return RefreshToken(ct, request_id)


def refresh_apply(sk: SecretKey, pk: PublicKey, token: RefreshToken, rng: np.random.Generator | None = None) -> Ciphertext:
    """Decrypt and re-encrypt at the top level; only the secret-key holder can."""
    if sk.key_id != pk.key_id:
        raise KeyMismatch("secret and public key do not belong together")
    values = decrypt(sk, token.ciphertext)
    return encrypt(pk, values, rng)
