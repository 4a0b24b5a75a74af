"""Session configuration shared by the Comp and ML roles.

Plain ``key: value`` lines; ``#`` starts a comment.  Both sides must load
equivalent files: the digest of the canonical form travels in EvkTransfer
and the ML role refuses a mismatch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..data import PROFILES, RECODERS
from ..fhe import FheParams, preset
from ..regress import CODING_01, CODING_PM1, LINEAR, LOGISTIC
from .learn import IRLS, LINEAR_GD, LOGISTIC_GD, OLS, LearnConfig


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
_KIND_OF = {OLS: LINEAR, LINEAR_GD: LINEAR, IRLS: LOGISTIC, LOGISTIC_GD: LOGISTIC}


@dataclass(frozen=True)
class SessionConfig:
    backend: str = "cleartext"
    params: str = "default"
    seed: int = 0
    profile: str = "full"
    model: str = LINEAR
    learner: str = ""  # empty: exact on cleartext, gradient descent on rlwe
    epochs: int = 32
    learning_rate: float = 0.1
    batch_slots: int = 0  # 0: slot_count
    refresh_every: int = 0  # 0: derived from the level count
    alpha: float = 0.05
    bonferroni: bool = False
    se_decimals: int = 3  # negative: no rounding
    target_coding: str = ""  # empty: pm1 for linear, 01 for logistic
    recode: tuple[str, ...] = ("marital-status",)
    sensitive: tuple[str, ...] = ()  # empty: the profile's sensitive features

    def __post_init__(self):
        if self.backend not in ("cleartext", "rlwe"):
            raise ConfigError(f"backend must be cleartext or rlwe, got {self.backend!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.model not in (LINEAR, LOGISTIC):
            raise ConfigError(f"model must be linear or logistic, got {self.model!r}")
        if self.learner and _KIND_OF.get(self.learner) != self.model:
            raise ConfigError(f"learner {self.learner!r} does not fit a {self.model} model")
        if self.target_coding not in ("", CODING_01, CODING_PM1):
            raise ConfigError(f"unknown target coding {self.target_coding!r}")
        if self.model == LOGISTIC and self.target_coding == CODING_PM1:
            raise ConfigError("logistic models need the 01 target coding")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        for r in self.recode:
            if r not in RECODERS:
                raise ConfigError(f"no recoder registered for {r!r}; known: {sorted(RECODERS)}")
        try:
            preset(self.params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # --- derived settings

    @property
    def algorithm(self) -> str:
        if self.learner:
            return self.learner
        if self.backend == "cleartext":
            return OLS if self.model == LINEAR else IRLS
        return LINEAR_GD if self.model == LINEAR else LOGISTIC_GD

    @property
    def coding(self) -> str:
        if self.target_coding:
            return self.target_coding
        return CODING_PM1 if self.model == LINEAR else CODING_01

    @property
    def rounding(self) -> int | None:
        return None if self.se_decimals < 0 else self.se_decimals

    @property
    def sensitive_features(self) -> tuple[str, ...]:
        return self.sensitive or PROFILES[self.profile].sensitive

    def fhe_params(self) -> FheParams:
        return replace(preset(self.params), backend=self.backend, seed=self.seed)

    def learn_config(self) -> LearnConfig:
        return LearnConfig(
            algorithm=self.algorithm,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_slots=self.batch_slots or None,
            refresh_every=self.refresh_every or None,
            target_coding=self.coding,
        )

    # --- text form

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}: {v!r}" if isinstance(v, float) else f"{f.name}: {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "SessionConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition(":")
            key, val = key.strip().replace("-", "_"), val.strip()
            if not sep or key not in kinds:
                raise ConfigError(f"line {n}: unknown or malformed entry {raw.strip()!r}")
            if key in values:
                raise ConfigError(f"line {n}: duplicate key {key!r}")
            values[key] = _convert(kinds[key], val, n)
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "SessionConfig":
        return cls.from_text(Path(path).read_text())


def _convert(kind: str, val: str, n: int):
    try:
        if kind == "int":
            return int(val)
        if kind == "float":
            return float(val)
    except ValueError:
        raise ConfigError(f"line {n}: expected a {kind}, got {val!r}") from None
    if kind == "bool":
        if val.lower() not in _BOOL:
            raise ConfigError(f"line {n}: expected true/false, got {val!r}")
        return _BOOL[val.lower()]
    if kind.startswith("tuple"):
        return tuple(v.strip() for v in val.split(",") if v.strip())
    return val
