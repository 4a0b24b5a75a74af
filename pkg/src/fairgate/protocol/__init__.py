"""Two-party screening protocol: Comp (data + secret key) and ML (evaluation key)."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .. import fhe
from ..data import PROFILES, Dataset, FeaturePartition, select
from .comp import CompError, CompResult, CompSession, PolicyError, RecodePolicy, RoundOutcome, column_scale, run_comp
from .config import ConfigError, SessionConfig
from .fsm import ProtocolViolation, SessionFsm, replay
from .learn import SIGMOID_POLY, LearnConfig, plain_gd, train_encrypted
from .messages import FrameError, Kind, Message, frame_decode, frame_encode
from .ml import ConfigMismatch, MlError, MlSession, run_ml
from .transport import ConnectionClosed, TcpTransport, Transport, TransportError, channel_pair

__all__ = [
    "CompError", "CompResult", "CompSession", "ConfigError", "ConfigMismatch", "ConnectionClosed",
    "FrameError", "Kind", "LearnConfig", "LocalRun", "Message", "MlError", "MlSession", "PolicyError",
    "ProtocolViolation", "RecodePolicy", "RoundOutcome", "SIGMOID_POLY", "SessionConfig", "SessionFsm",
    "TcpTransport", "Transport", "TransportError", "channel_pair", "column_scale", "frame_decode",
    "frame_encode", "plain_gd", "prepare", "replay", "run_comp", "run_local", "run_ml", "train_encrypted",
]


def prepare(d: Dataset, cfg: SessionConfig) -> tuple[Dataset, FeaturePartition, bool]:
    """Apply the configured profile; returns the dataset, initial partition and intercept flag."""
    prof = PROFILES[cfg.profile]
    sensitive = cfg.sensitive_features
    unprotected = tuple(l for l in prof.unprotected if l not in sensitive)
    d = select(unprotected + tuple(sensitive), d)
    if prof.max_rows is not None:
        d = d.head(prof.max_rows)
    part = FeaturePartition(frozenset(sensitive), frozenset(unprotected))
    part.validate(d.schema.labels)
    return d, part, prof.intercept


@dataclass
class LocalRun:
    result: CompResult
    comp: CompSession
    ml: MlSession
    ml_rounds: int


def run_local(d: Dataset, cfg: SessionConfig, keep_received: bool = False, screen=None,
              timeout: float | None = 600.0, partition: FeaturePartition | None = None,
              intercept: bool = True) -> LocalRun:
    """Both roles in one process over an in-memory channel (ML on a worker thread).

    Without ``partition`` the configured profile picks the features; with one,
    ``d`` is used as given and ``intercept`` decides the intercept column.
    """
    if partition is None:
        d, part, intercept = prepare(d, cfg)
    else:
        part = partition
    keys = fhe.keygen(cfg.fhe_params())
    comp_t, ml_t = channel_pair(keep_received=keep_received, timeout=timeout)
    comp = CompSession(cfg, keys, comp_t, np.random.default_rng(cfg.seed), screen=screen)
    ml = MlSession(cfg, ml_t, np.random.default_rng(cfg.seed + 1))
    box: dict = {}

    def serve():
        try:
            box["rounds"] = run_ml(ml)
        except BaseException as exc:  # surfaced on the main thread
            box["error"] = exc
            ml_t.close()

    worker = threading.Thread(target=serve, name="fairgate-ml", daemon=True)
    worker.start()
    try:
        result = run_comp(d, part, comp, RecodePolicy.from_labels(cfg.recode), intercept)
    except BaseException:
        comp_t.close()
        worker.join(timeout=5)
        if "error" in box:
            raise box["error"]
        raise
    worker.join()
    if "error" in box:
        raise box["error"]
    return LocalRun(result, comp, ml, box["rounds"])
