"""The Comp role: holds the data and the secret key, screens each round's models.

One round: encrypt the active columns, send them, answer refresh requests,
decrypt M and one leave-one-out model M'_i per sensitive feature, compute
standard errors in the clear at the decrypted coefficients, and collect the
columns whose coefficients move significantly.  ``run_comp`` repeats rounds,
shrinking the unprotected set, until a round flags nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import fhe
from ..data import (
    RECODERS,
    Column,
    Dataset,
    DesignMatrix,
    FeaturePartition,
    design_for,
)
from ..regress import ModelFit, clear_std_errors, coded_target
from ..wald import WaldReport, wald_test
from .config import SessionConfig
from .fsm import COMP, SessionFsm
from .learn import block_rows
from .messages import Kind, Message
from .transport import Transport


class CompError(RuntimeError):
    pass


class PolicyError(CompError):
    """The policy failed to shrink the unprotected columns."""


# Substitutable screen: (M, M'_i) -> flagged columns of M.
Screen = Callable[[ModelFit, ModelFit], frozenset]


def column_scale(d: Dataset, col: Column) -> float:
    """Public normalizer for encrypted training: the schema bound of numeric columns."""
    if col.is_intercept or col.level is not None:
        return 1.0
    bound = d.schema.feature(col.feature).bound
    return float(bound) if bound else 1.0


@dataclass
class RoundOutcome:
    round: int
    partition: FeaturePartition
    model: ModelFit
    loo: dict[str, ModelFit]
    reports: dict[str, WaldReport]
    flagged: frozenset[Column]
    action: str = ""  # what the policy did after this round

    @property
    def flagged_labels(self) -> list[str]:
        return sorted(c.key for c in self.flagged)


@dataclass
class CompResult:
    model: ModelFit
    rounds: list[RoundOutcome]
    partition: FeaturePartition
    dataset: Dataset
    refreshes: int = 0


@dataclass
class _Channel:
    """Transport plus the role's state machine; every message passes through both."""

    transport: Transport
    fsm: SessionFsm

    def send(self, msg: Message) -> None:
        self.fsm.observe("send", msg)
        self.transport.send(msg)

    def recv(self) -> Message:
        msg = self.transport.recv()
        self.fsm.observe("recv", msg)
        return msg


@dataclass
class CompSession:
    cfg: SessionConfig
    keys: fhe.KeySet
    transport: Transport
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    screen: Screen | None = None
    refreshes: int = 0

    def __post_init__(self):
        self.chan = _Channel(self.transport, SessionFsm(COMP))
        self.params = self.keys.params
        self.learn = self.cfg.learn_config().resolved(self.params)
        self.round = 0

    # --- session setup

    def start(self) -> None:
        meta = {
            "config_digest": self.cfg.digest(),
            "params": self.params.to_dict(),
            "warning": fhe.NOT_SECURE_WARNING,
        }
        blobs = (fhe.serialize_pk(self.keys.pk), fhe.serialize_evk(self.keys.evk))
        self.chan.send(Message(Kind.EVK_TRANSFER, 0, meta, blobs))

    # --- one round

    def one_round(self, d: Dataset, partition: FeaturePartition, labels: tuple[str, ...],
                  intercept: bool) -> RoundOutcome:
        """Run one screening round; ``labels`` orders the features as the schema does."""
        partition.validate(d.schema.labels)
        self.round += 1
        rnd = self.round
        active = [l for l in labels if l in partition.unprotected or l in partition.sensitive]
        dm = design_for(d, active, partition, intercept)
        sensitive = [l for l in labels if l in partition.sensitive]
        unprotected = [l for l in labels if l in partition.unprotected]
        y = coded_target(dm.target, self.learn.target_coding)
        scales = [column_scale(d, c) for c in dm.columns]
        rows = self.learn.batch_slots
        blobs = []
        for j in range(dm.p):
            for blk in block_rows(dm.values[:, j] / scales[j], rows):
                blobs.append(fhe.serialize_ciphertext(fhe.encrypt(self.keys.pk, blk, self.rng)))
        for blk in block_rows(y, rows):
            blobs.append(fhe.serialize_ciphertext(fhe.encrypt(self.keys.pk, blk, self.rng)))
        meta = {
            "sensitive": sensitive,
            "unprotected": unprotected,
            "columns": [{"key": c.key, "feature": c.feature, "level": c.level, "scale": s}
                        for c, s in zip(dm.columns, scales)],
            "rows": dm.n,
            "block_rows": rows,
        }
        self.chan.send(Message(Kind.ROUND_DATA, rnd, meta, tuple(blobs)))

        base = [c for c in dm.columns if c.is_intercept or c.feature in partition.unprotected]
        msg = self._await(Kind.MODEL_RESULT)
        model = self._decode_model(msg, dm, base)
        loo: dict[str, ModelFit] = {}
        reports: dict[str, WaldReport] = {}
        flagged: set[Column] = set()
        for p_i in sensitive:
            msg = self._await(Kind.LOO_MODEL_RESULT)
            if msg.meta.get("sensitive") != p_i:
                raise CompError(f"expected the LOO model for {p_i!r}, got {msg.meta.get('sensitive')!r}")
            cols = [c for c in dm.columns if c in base or c.feature == p_i]
            loo[p_i] = self._decode_model(msg, dm, cols)
            if self.screen is not None:
                hits = frozenset(self.screen(model, loo[p_i]))
            else:
                reports[p_i] = wald_test(model, loo[p_i], self.cfg.alpha, self.cfg.bonferroni, self.cfg.rounding)
                hits = reports[p_i].flagged
            flagged |= {c for c in hits if c in base and not c.is_intercept}
        return RoundOutcome(rnd, partition, model, loo, reports, frozenset(flagged))

    def _await(self, kind: Kind) -> Message:
        """Serve refresh requests until a message of ``kind`` arrives."""
        while True:
            msg = self.chan.recv()
            if msg.kind == Kind.REFRESH_REQUEST:
                self._serve_refresh(msg)
                continue
            if msg.kind != kind:
                raise CompError(f"expected {kind.title}, got {msg.kind.title}")
            return msg

    def _serve_refresh(self, msg: Message) -> None:
        if msg.meta.get("count") != len(msg.blobs):
            raise CompError("refresh request count does not match its ciphertexts")
        out = []
        for blob in msg.blobs:
            ct = fhe.deserialize_ciphertext(blob)
            token = fhe.refresh_request(ct, int(msg.meta.get("request_id", 0)))
            out.append(fhe.serialize_ciphertext(fhe.refresh_apply(self.keys.sk, self.keys.pk, token, self.rng)))
        self.refreshes += 1
        meta = {"request_id": msg.meta.get("request_id", 0), "count": len(out)}
        self.chan.send(Message(Kind.REFRESH_RESPONSE, msg.round, meta, tuple(out)))

    def _decode_model(self, msg: Message, dm: DesignMatrix, cols: list[Column]) -> ModelFit:
        keys = [c.key for c in cols]
        if msg.meta.get("columns") != keys:
            raise CompError(f"model columns {msg.meta.get('columns')} do not match the request {keys}")
        if len(msg.blobs) != len(cols):
            raise CompError("model carries the wrong number of coefficients")
        coef = np.array([fhe.decrypt(self.keys.sk, fhe.deserialize_ciphertext(b))[0] for b in msg.blobs])
        if not np.all(np.isfinite(coef)):
            raise CompError("decrypted coefficients are not finite")
        sub = DesignMatrix(dm.values[:, [dm.index(c) for c in cols]], tuple(cols), dm.target)
        if cols:
            se, sigma2 = clear_std_errors(self.learn.model_kind, sub, coef, self.learn.target_coding)
        else:
            se, sigma2 = np.zeros(0), 0.0
        return ModelFit(self.learn.model_kind, tuple(cols), coef, se, sigma2, dm.n, len(cols),
                        converged=True, iterations=self.learn.epochs, target_coding=self.learn.target_coding,
                        message=f"learned by {self.learn.algorithm}")

    def finish(self, more: bool) -> None:
        self.chan.send(Message(Kind.CONTINUE if more else Kind.TERMINATE, self.round))


# --- policy -------------------------------------------------------------------

@dataclass(frozen=True)
class RecodePolicy:
    """Remove flagged columns, or recode a registered feature the first time it is flagged."""

    recoders: dict = field(default_factory=dict)

    @classmethod
    def from_labels(cls, labels) -> "RecodePolicy":
        return cls({l: RECODERS[l] for l in labels})

    def apply(self, d: Dataset, partition: FeaturePartition, flagged: frozenset[Column],
              done: set[str], intercept: bool) -> tuple[Dataset, FeaturePartition, str]:
        feats = sorted({c.feature for c in flagged})
        before = _active_count(d, partition, intercept)
        todo = [f for f in feats if f in self.recoders and f not in done and f in partition.unprotected]
        if todo:
            d2, p2 = d, partition
            for f in todo:
                d2 = self.recoders[f](d2)
                p2 = p2.forget_columns_of(f)
            if _active_count(d2, p2, intercept) < before:
                done.update(todo)
                return d2, p2, "recode " + ", ".join(todo)
        p2 = partition.remove(flagged, d.schema)
        if _active_count(d, p2, intercept) >= before:
            raise PolicyError("policy step did not shrink the unprotected columns")
        return d, p2, "remove " + ", ".join(sorted(c.key for c in flagged))


def _active_count(d: Dataset, partition: FeaturePartition, intercept: bool) -> int:
    labels = [l for l in d.schema.labels if l in partition.unprotected]
    if not labels:
        return 0
    return sum(1 for c in design_for(d.head(1), labels, partition, False).columns)


def run_comp(d: Dataset, partition: FeaturePartition, session: CompSession, policy: RecodePolicy,
             intercept: bool = True, max_rounds: int | None = None) -> CompResult:
    """Screen rounds until nothing is flagged, then Terminate and return the accepted model."""
    labels = d.schema.labels
    partition.validate(labels)
    session.start()
    limit = max_rounds or (_active_count(d, partition, intercept) + 1)
    rounds: list[RoundOutcome] = []
    done: set[str] = set()
    while True:
        out = session.one_round(d, partition, labels, intercept)
        rounds.append(out)
        if not out.flagged:
            session.finish(more=False)
            return CompResult(out.model, rounds, partition, d, session.refreshes)
        if len(rounds) >= limit:
            raise PolicyError(f"no convergence within {limit} rounds")
        d, partition, out.action = policy.apply(d, partition, out.flagged, done, intercept)
        session.finish(more=True)
