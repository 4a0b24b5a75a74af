from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .params import FheParams


class FheError(Exception):
    """Base class for FHE backend failures."""


class LevelExhausted(FheError):
    pass


class ScaleMismatch(FheError):
    pass


class KeyMismatch(FheError):
    """Ciphertext and key were produced under different key material."""


class VectorTooLong(FheError):
    pass


class UnsupportedCircuit(FheError):
    """The backend cannot evaluate the requested function."""


@dataclass(frozen=True, eq=False)
class Ciphertext:
    backend_tag: str
    payload: Any
    level: int
    scale: float
    key_id: bytes
    params_digest: bytes

    def __post_init__(self):
        if self.level < 0:
            raise LevelExhausted("ciphertext level below zero")


@dataclass(frozen=True, eq=False)
class PublicKey:
    params: FheParams
    key_id: bytes
    data: Any


@dataclass(frozen=True, eq=False)
class SecretKey:
    params: FheParams
    key_id: bytes
    data: Any


@dataclass(frozen=True, eq=False)
class EvalKey:
    """Relinearization key plus rotation keys for power-of-two steps."""

    params: FheParams
    key_id: bytes
    relin: Any
    rotations: dict[int, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class KeySet:
    pk: PublicKey
    sk: SecretKey
    evk: EvalKey

    @property
    def params(self) -> FheParams:
        return self.pk.params


@dataclass(frozen=True, eq=False)
class RefreshToken:
    """A ciphertext submitted to the secret-key holder for re-encryption."""

    ciphertext: Ciphertext
    request_id: int = 0


def as_plain(values, slot_count: int) -> np.ndarray:
    """Validate a message vector and zero-pad it to ``slot_count`` slots."""
    v = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if v.ndim != 1:
        raise ValueError("plain vectors must be one-dimensional")
    if v.size > slot_count:
        raise VectorTooLong(f"{v.size} values exceed {slot_count} slots")
    if not np.all(np.isfinite(v)):
        raise ValueError("plain vectors must be finite")
    out = np.zeros(slot_count)
    out[: v.size] = v
    return out
