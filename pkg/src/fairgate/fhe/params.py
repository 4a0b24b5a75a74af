from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

from .ntt import MAX_MODULUS_BITS, is_prime

BACKENDS = ("cleartext", "rlwe")
MIN_LOG_N, MAX_LOG_N = 10, 14


class ParamError(ValueError):
    pass


def ntt_primes(bits: int, count: int, two_n: int, exclude=(), balanced: bool = False) -> list[int]:
    """Primes ``q = 1 mod two_n`` near ``2**bits``.

    With ``balanced`` the primes alternate just above and just below
    ``2**bits`` so that the running product of scale ratios stays near one.
    Otherwise they are taken descending from ``2**bits``.
    """
    target = 1 << bits
    below = target - (target % two_n) + 1
    if below >= target:
        below -= two_n
    above = below + two_n
    out: list[int] = []
    take_above = balanced
    while len(out) < count:
        if take_above:
            while not is_prime(above) or above in exclude or above in out:
                above += two_n
            out.append(above)
        else:
            while not is_prime(below) or below in exclude or below in out:
                below -= two_n
            out.append(below)
        if balanced:
            take_above = not take_above
    return out


@dataclass(frozen=True)
class FheParams:
    """Parameter set for one FHE instance.

    ``modulus_chain`` lists the bit sizes of q_0 .. q_L.  ``moduli`` may pin
    explicit primes instead (validated for NTT-friendliness).  These
    desk-scale defaults make no security claim.
    """

    ring_degree: int = 4096
    level_count: int = 6
    scale_bits: int = 30
    modulus_chain: tuple[int, ...] = (40, 30, 30, 30, 30, 30, 30)
    special_bits: int = 41
    seed: int = 0
    backend: str = "rlwe"
    secret_hamming_weight: int = 64
    error_stddev: float = 3.2
    moduli: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ParamError(f"unknown backend {self.backend!r}")
        n = self.ring_degree
        if n & (n - 1) or not (1 << MIN_LOG_N) <= n <= (1 << MAX_LOG_N):
            raise ParamError(f"ring_degree must be a power of two in [2^10, 2^14], got {n}")
        if self.level_count < 1:
            raise ParamError("level_count must be >= 1")
        if len(self.modulus_chain) != self.level_count + 1:
            raise ParamError("modulus_chain must have level_count + 1 entries")
        if any(b > MAX_MODULUS_BITS - 1 or b < 20 for b in self.modulus_chain):
            raise ParamError(f"modulus bit sizes must lie in [20, {MAX_MODULUS_BITS - 1}]")
        if self.special_bits > MAX_MODULUS_BITS or self.special_bits < 20:
            raise ParamError("special_bits out of range")
        if self.modulus_chain[0] <= self.scale_bits:
            raise ParamError("q_0 must exceed the scale to leave room for the message")
        if not 0 <= self.seed < 1 << 64:
            raise ParamError("seed must be a 64-bit unsigned integer")
        if self.moduli is not None:
            object.__setattr__(self, "moduli", tuple(int(q) for q in self.moduli))
            if len(self.moduli) != self.level_count + 2:
                raise ParamError("explicit moduli must list q_0..q_L and the special prime")
            for q in self.moduli:
                if not is_prime(q) or (q - 1) % (2 * n):
                    raise ParamError(f"modulus {q} is not an NTT-friendly prime for N={n}")
                if q >= 1 << MAX_MODULUS_BITS:
                    raise ParamError(f"modulus {q} too large")

    @property
    def slot_count(self) -> int:
        return self.ring_degree // 2

    @cached_property
    def primes(self) -> tuple[int, ...]:
        """q_0, ..., q_L followed by the special prime P."""
        if self.moduli is not None:
            return self.moduli
        two_n = 2 * self.ring_degree
        chosen: list[int] = []
        q0 = ntt_primes(self.modulus_chain[0], 1, two_n)[0]
        chosen.append(q0)
        counts = Counter(self.modulus_chain[1:])
        pools = {
            b: iter(ntt_primes(b, cnt, two_n, exclude=chosen, balanced=(b == self.scale_bits)))
            for b, cnt in counts.items()
        }
        for b in self.modulus_chain[1:]:
            chosen.append(next(pools[b]))
        chosen.append(ntt_primes(self.special_bits, 1, two_n, exclude=chosen)[0])
        return tuple(chosen)

    def to_dict(self) -> dict:
        return {
            "ring_degree": self.ring_degree,
            "level_count": self.level_count,
            "scale_bits": self.scale_bits,
            "modulus_chain": list(self.modulus_chain),
            "special_bits": self.special_bits,
            "seed": self.seed,
            "backend": self.backend,
            "secret_hamming_weight": self.secret_hamming_weight,
            "error_stddev": self.error_stddev,
            "moduli": list(self.moduli) if self.moduli is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FheParams":
        d = dict(d)
        d["modulus_chain"] = tuple(d["modulus_chain"])
        if d.get("moduli") is not None:
            d["moduli"] = tuple(d["moduli"])
        return cls(**d)

    @cached_property
    def digest(self) -> bytes:
        """32-byte digest identifying the parameter set (seed excluded)."""
        d = self.to_dict()
        d.pop("seed")
        d["primes"] = list(self.primes) if self.backend == "rlwe" else None
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).digest()


PRESETS: dict[str, FheParams] = {
    "default": FheParams(),
    "n1024": FheParams(ring_degree=1024, level_count=3, modulus_chain=(40, 30, 30, 30)),
    "n2048": FheParams(ring_degree=2048, level_count=4, modulus_chain=(40, 30, 30, 30, 30)),
    "n8192": FheParams(ring_degree=8192),
    "cleartext": FheParams(backend="cleartext"),
}


def preset(name: str) -> FheParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParamError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
