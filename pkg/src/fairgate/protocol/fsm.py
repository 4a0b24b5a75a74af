"""Message-order state machine shared by both roles.

Each side feeds every message it sends or receives to ``observe``; an
out-of-order kind raises ``ProtocolViolation``.  The same machine replays
a transcript for audits.

    start --EvkTransfer--> idle
    idle --RoundData--> training            (expects |S_P| LOO results)
    training --RefreshRequest--> refreshing --RefreshResponse--> training
    training --ModelResult--> loo
    loo --RefreshRequest--> refreshing_loo --RefreshResponse--> loo
    loo --LooModelResult--> loo             (at most |S_P| times)
    loo --Continue--> idle                  (after all |S_P| results)
    loo --Terminate--> done
"""

from __future__ import annotations

from .messages import Kind, Message

COMP, ML = "comp", "ml"

SENDER = {
    Kind.EVK_TRANSFER: COMP,
    Kind.ROUND_DATA: COMP,
    Kind.REFRESH_RESPONSE: COMP,
    Kind.CONTINUE: COMP,
    Kind.TERMINATE: COMP,
    Kind.MODEL_RESULT: ML,
    Kind.LOO_MODEL_RESULT: ML,
    Kind.REFRESH_REQUEST: ML,
}

_TABLE = {
    ("start", Kind.EVK_TRANSFER): "idle",
    ("idle", Kind.ROUND_DATA): "training",
    ("training", Kind.REFRESH_REQUEST): "refreshing",
    ("refreshing", Kind.REFRESH_RESPONSE): "training",
    ("training", Kind.MODEL_RESULT): "loo",
    ("loo", Kind.REFRESH_REQUEST): "refreshing_loo",
    ("refreshing_loo", Kind.REFRESH_RESPONSE): "loo",
    ("loo", Kind.LOO_MODEL_RESULT): "loo",
    ("loo", Kind.CONTINUE): "idle",
    ("loo", Kind.TERMINATE): "done",
}


class ProtocolViolation(RuntimeError):
    pass


class SessionFsm:
    def __init__(self, role: str):
        if role not in (COMP, ML):
            raise ValueError(f"unknown role {role!r}")
        self.role = role
        self.state = "start"
        self.round = 0
        self.loo_expected = 0
        self.loo_seen = 0

    def observe(self, direction: str, msg: Message) -> None:
        sender = self.role if direction == "send" else (ML if self.role == COMP else COMP)
        if SENDER[msg.kind] != sender:
            raise ProtocolViolation(f"{sender} may not send {msg.kind.title}")
        key = (self.state, msg.kind)
        if key not in _TABLE:
            raise ProtocolViolation(f"{msg.kind.title} not allowed in state {self.state!r}")
        if msg.round < self.round:
            raise ProtocolViolation(f"round went backwards ({self.round} -> {msg.round})")
        if msg.kind == Kind.ROUND_DATA:
            if msg.round <= self.round:
                raise ProtocolViolation("each RoundData must open a new round")
            self.loo_expected = len(msg.meta.get("sensitive", []))
            self.loo_seen = 0
        elif msg.kind != Kind.EVK_TRANSFER and msg.round != self.round:
            raise ProtocolViolation(f"message for round {msg.round} inside round {self.round}")
        if msg.kind == Kind.LOO_MODEL_RESULT:
            if self.loo_seen >= self.loo_expected:
                raise ProtocolViolation("more LOO results than sensitive features")
            self.loo_seen += 1
        if msg.kind in (Kind.CONTINUE, Kind.TERMINATE) and self.loo_seen != self.loo_expected:
            raise ProtocolViolation("round closed before all LOO results arrived")
        self.state = _TABLE[key]
        self.round = msg.round

    @property
    def done(self) -> bool:
        return self.state == "done"


def replay(role: str, records) -> SessionFsm:
    """Check a sequence of ``(direction, Message)`` pairs against the machine."""
    fsm = SessionFsm(role)
    for direction, msg in records:
        fsm.observe(direction, msg)
    return fsm
