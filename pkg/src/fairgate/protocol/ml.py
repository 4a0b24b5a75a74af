"""The ML role: trains on encrypted columns it cannot read.

It holds the public and evaluation keys only.  Per round it selects the
unprotected columns (plus the intercept) and trains M, then for each
sensitive feature adds that feature's columns and trains M'_i.  Depth runs
out often; each time it asks Comp for a refresh and waits for the answer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import fhe
from ..data import INTERCEPT
from .config import SessionConfig
from .fsm import ML, SessionFsm
from .learn import EvalContext, LearnConfig, train_encrypted
from .messages import Kind, Message
from .transport import Transport


class MlError(RuntimeError):
    pass


class ConfigMismatch(MlError):
    pass


@dataclass
class MlSession:
    cfg: SessionConfig
    transport: Transport
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(1))

    def __post_init__(self):
        self.fsm = SessionFsm(ML)
        self.pk: fhe.PublicKey | None = None
        self.evk: fhe.EvalKey | None = None
        self.learn: LearnConfig | None = None
        self.rounds = 0
        self.refreshes = 0
        self._request_id = 0

    def _send(self, msg: Message) -> None:
        self.fsm.observe("send", msg)
        self.transport.send(msg)

    def _recv(self) -> Message:
        msg = self.transport.recv()
        self.fsm.observe("recv", msg)
        return msg

    # --- setup

    def accept_keys(self) -> None:
        msg = self._recv()
        if msg.meta.get("config_digest") != self.cfg.digest():
            raise ConfigMismatch("session configuration differs from Comp's")
        params = fhe.FheParams.from_dict(msg.meta["params"])
        if params != self.cfg.fhe_params():
            raise ConfigMismatch("FHE parameters differ from the configured ones")
        if len(msg.blobs) != 2:
            raise MlError("EvkTransfer must carry the public and evaluation keys")
        self.pk = fhe.deserialize_pk(msg.blobs[0])
        self.evk = fhe.deserialize_evk(msg.blobs[1])
        if self.pk.key_id != self.evk.key_id:
            raise MlError("public and evaluation keys do not belong together")
        self.learn = self.cfg.learn_config().resolved(params)

    # --- rounds

    def _refresh(self, cts: list[fhe.Ciphertext]) -> list[fhe.Ciphertext]:
        self._request_id += 1
        meta = {"request_id": self._request_id, "count": len(cts)}
        self._send(Message(Kind.REFRESH_REQUEST, self.rounds, meta,
                           tuple(fhe.serialize_ciphertext(c) for c in cts)))
        msg = self._recv()
        if msg.kind != Kind.REFRESH_RESPONSE or msg.meta.get("request_id") != self._request_id:
            raise MlError("refresh was not answered")
        self.refreshes += 1
        return [fhe.deserialize_ciphertext(b) for b in msg.blobs]

    def one_round(self, msg: Message) -> None:
        """Train M and every M'_i for the RoundData in ``msg``."""
        self.rounds = msg.round
        meta = msg.meta
        columns = meta["columns"]
        rows, block = int(meta["rows"]), int(meta["block_rows"])
        if block != self.learn.batch_slots:
            raise MlError("block size differs from the configured batch_slots")
        nb = max(1, -(-rows // block))
        if len(msg.blobs) != (len(columns) + 1) * nb:
            raise MlError("RoundData carries the wrong number of ciphertexts")
        cts = [fhe.deserialize_ciphertext(b) for b in msg.blobs]
        blocks = {c["key"]: cts[j * nb : (j + 1) * nb] for j, c in enumerate(columns)}
        y_blocks = cts[len(columns) * nb :]
        unprotected = set(meta["unprotected"])
        base = [c for c in columns if c["feature"] == INTERCEPT or c["feature"] in unprotected]
        self._send_model(Kind.MODEL_RESULT, {}, base, blocks, y_blocks, rows)
        for p_i in meta["sensitive"]:
            sel = [c for c in columns if c in base or c["feature"] == p_i]
            self._send_model(Kind.LOO_MODEL_RESULT, {"sensitive": p_i}, sel, blocks, y_blocks, rows)

    def _send_model(self, kind: Kind, meta: dict, cols: list[dict], blocks, y_blocks, rows: int) -> None:
        ctx = EvalContext(self.evk, self.pk, self.rng, self._refresh)
        theta = train_encrypted(ctx, [blocks[c["key"]] for c in cols], y_blocks,
                                [float(c["scale"]) for c in cols], rows, self.learn) if cols else []
        body = dict(meta, columns=[c["key"] for c in cols])
        self._send(Message(kind, self.rounds, body, tuple(fhe.serialize_ciphertext(t) for t in theta)))


def run_ml(session: MlSession) -> int:
    """Serve rounds until Comp terminates; returns the number of rounds run."""
    session.accept_keys()
    while True:
        msg = session._recv()
        if msg.kind != Kind.ROUND_DATA:
            raise MlError(f"expected RoundData, got {msg.kind.title}")
        session.one_round(msg)
        nxt = session._recv()
        if nxt.kind == Kind.TERMINATE:
            return session.rounds
        if nxt.kind != Kind.CONTINUE:
            raise MlError(f"expected Continue or Terminate, got {nxt.kind.title}")
