"""Versioned, length-prefixed binary encoding for ciphertexts and keys.

Ciphertext layout (all integers little-endian):

    b"FGCT" | u8 version | u8 backend | 32B params digest | 16B key id
    | u32 level | f64 scale | array

Key layout:

    b"FGKY" | u8 version | u8 kind | u32 len + params JSON | 16B key id | body

An array is ``u8 dtype | u8 ndim | u32 dims... | u64 nbytes | raw LE data``.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .params import FheParams
from .types import Ciphertext, EvalKey, FheError, PublicKey, SecretKey

CT_MAGIC = b"FGCT"
KEY_MAGIC = b"FGKY"
VERSION = 1
_BACKENDS = ("cleartext", "rlwe")
_DTYPES = {b"i"[0]: np.dtype("<i8"), b"f"[0]: np.dtype("<f8"), b"b"[0]: np.dtype("u1")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}
_KEY_KINDS = {"pk": 1, "sk": 2, "evk": 3}


class SerializationError(FheError):
    pass


class _Reader:
    def __init__(self, buf: bytes):
        self.f = io.BytesIO(buf)

    def take(self, n: int) -> bytes:
        b = self.f.read(n)
        if len(b) != n:
            raise SerializationError("truncated input")
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self):
        if self.f.read(1):
            raise SerializationError("trailing bytes after object")


def _write_array(out: io.BytesIO, a) -> None:
    if isinstance(a, (bytes, bytearray)):
        a = np.frombuffer(bytes(a), dtype=np.uint8)
    a = np.asarray(a)
    dt = np.dtype("u1")
    if a.dtype.kind == "i":
        dt = np.dtype("<i8")
    elif a.dtype.kind == "f":
        dt = np.dtype("<f8")
    elif a.dtype != np.uint8:
        raise SerializationError(f"unsupported array dtype {a.dtype}")
    data = np.ascontiguousarray(a, dtype=dt).tobytes()
    out.write(struct.pack("<BB", _DTYPE_CODES[dt], a.ndim))
    out.write(struct.pack(f"<{a.ndim}I", *a.shape))
    out.write(struct.pack("<Q", len(data)))
    out.write(data)


def _read_array(r: _Reader) -> np.ndarray:
    code, ndim = r.unpack("<BB")
    if code not in _DTYPES:
        raise SerializationError(f"unknown array dtype code {code}")
    dt = _DTYPES[code]
    shape = r.unpack(f"<{ndim}I")
    (nbytes,) = r.unpack("<Q")
    if nbytes != dt.itemsize * int(np.prod(shape, dtype=np.int64)):
        raise SerializationError("array length does not match its shape")
    return np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    out = io.BytesIO()
    out.write(CT_MAGIC)
    out.write(struct.pack("<BB", VERSION, _BACKENDS.index(ct.backend_tag)))
    out.write(ct.params_digest)
    out.write(ct.key_id)
    out.write(struct.pack("<Id", ct.level, ct.scale))
    _write_array(out, ct.payload)
    return out.getvalue()


def deserialize_ciphertext(buf: bytes) -> Ciphertext:
    r = _Reader(buf)
    if r.take(4) != CT_MAGIC:
        raise SerializationError("not a ciphertext (bad magic)")
    version, backend = r.unpack("<BB")
    if version != VERSION:
        raise SerializationError(f"unsupported ciphertext version {version}")
    if backend >= len(_BACKENDS):
        raise SerializationError(f"unknown backend code {backend}")
    digest = r.take(32)
    key_id = r.take(16)
    level, scale = r.unpack("<Id")
    payload = _read_array(r)
    r.done()
    return Ciphertext(_BACKENDS[backend], payload, level, scale, key_id, digest)


def _key_header(kind: str, params: FheParams, key_id: bytes) -> io.BytesIO:
    out = io.BytesIO()
    out.write(KEY_MAGIC)
    out.write(struct.pack("<BB", VERSION, _KEY_KINDS[kind]))
    pj = json.dumps(params.to_dict(), sort_keys=True).encode()
    out.write(struct.pack("<I", len(pj)))
    out.write(pj)
    out.write(key_id)
    return out


def _read_key_header(buf: bytes, kind: str) -> tuple[_Reader, FheParams, bytes]:
    r = _Reader(buf)
    if r.take(4) != KEY_MAGIC:
        raise SerializationError("not a key (bad magic)")
    version, code = r.unpack("<BB")
    if version != VERSION:
        raise SerializationError(f"unsupported key version {version}")
    if code != _KEY_KINDS[kind]:
        raise SerializationError(f"expected a {kind} key")
    (plen,) = r.unpack("<I")
    try:
        params = FheParams.from_dict(json.loads(r.take(plen)))
    except (ValueError, TypeError, KeyError) as exc:
        raise SerializationError(f"bad parameter block: {exc}") from exc
    return r, params, r.take(16)


def serialize_pk(pk: PublicKey) -> bytes:
    out = _key_header("pk", pk.params, pk.key_id)
    _write_array(out, pk.data)
    return out.getvalue()


def deserialize_pk(buf: bytes) -> PublicKey:
    r, params, key_id = _read_key_header(buf, "pk")
    data = _read_array(r)
    r.done()
    if params.backend == "cleartext":
        data = data.tobytes()
    return PublicKey(params, key_id, data)


def serialize_sk(sk: SecretKey) -> bytes:
    out = _key_header("sk", sk.params, sk.key_id)
    _write_array(out, sk.data)
    return out.getvalue()


def deserialize_sk(buf: bytes) -> SecretKey:
    r, params, key_id = _read_key_header(buf, "sk")
    data = _read_array(r)
    r.done()
    if params.backend == "cleartext":
        data = data.tobytes()
    return SecretKey(params, key_id, data)


def serialize_evk(evk: EvalKey) -> bytes:
    out = _key_header("evk", evk.params, evk.key_id)
    out.write(struct.pack("<B", evk.relin is not None))
    if evk.relin is not None:
        _write_array(out, evk.relin)
    out.write(struct.pack("<I", len(evk.rotations)))
    for step in sorted(evk.rotations):
        out.write(struct.pack("<I", step))
        _write_array(out, evk.rotations[step])
    return out.getvalue()


def deserialize_evk(buf: bytes) -> EvalKey:
    r, params, key_id = _read_key_header(buf, "evk")
    (has_relin,) = r.unpack("<B")
    relin = _read_array(r) if has_relin else None
    (count,) = r.unpack("<I")
    rotations = {}
    for _ in range(count):
        (step,) = r.unpack("<I")
        rotations[step] = _read_array(r)
    r.done()
    return EvalKey(params, key_id, relin, rotations)
