"""Command-line entry points.

    fairgate analyze   plaintext leave-one-out screen on a train/test split
    fairgate comp      run the Comp role of a protocol session
    fairgate ml        run the ML role of a protocol session
    fairgate bench     per-operation FHE latencies
    fairgate prepare   load, validate and encode a dataset

Exit codes: 0 success / nothing flagged, 2 features flagged, 64 usage,
65 data error, 70 internal or transport failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data, fhe, regress
from .regress import CODING_01, CODING_PM1, LINEAR, LOGISTIC
from .wald import WaldReport, wald_test

EXIT_OK, EXIT_FLAGGED, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 64, 65, 70
CONFIG_ENV = "FAIRGATE_CONFIG"
DEFAULT_DATA_DIR = Path("data/adult")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- manifest -----------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    out: Path
    timings: dict[str, float] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def phase(self, name: str):
        return _Timer(self, name)

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.outputs.append(str(path))
        return path

    def save(self) -> Path:
        path = self.out / "manifest.json"
        self.outputs.append(str(path))
        body = {
            "command": self.command,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "timings_ms": {k: round(v, 3) for k, v in self.timings.items()},
            "outputs": self.outputs,
        }
        path.write_text(json.dumps(body, indent=2) + "\n")
        return path


class _Timer:
    def __init__(self, m: RunManifest, name: str):
        self.m, self.name = m, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.m.timings[self.name] = self.m.timings.get(self.name, 0.0) + (time.perf_counter() - self.t0) * 1e3


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# --- analyze ------------------------------------------------------------------

@dataclass
class Analysis:
    model: regress.ModelFit
    loo: dict[str, regress.ModelFit]
    reports: dict[str, WaldReport]
    accuracy: float
    loo_accuracy: dict[str, float]
    trivial_accuracy: float

    @property
    def flagged(self) -> list[str]:
        out: list[str] = []
        for r in self.reports.values():
            out += [lbl for lbl in r.flagged_labels if lbl not in out]
        return out


def analyze(train: data.Dataset, test: data.Dataset, model: str, sensitive: list[str],
            alpha: float = 0.05, bonferroni: bool = False, se_decimals: int | None = 3,
            unprotected: tuple[str, ...] = data.ADULT_UNPROTECTED, intercept: bool = False) -> Analysis:
    """Fit M on the unprotected features and M'_i = M + sensitive_i, then screen each pair."""
    for s in sensitive:
        train.schema.feature(s)
    base = [l for l in unprotected if l not in sensitive]
    coding = CODING_PM1 if model == LINEAR else CODING_01
    cfg = regress.FitConfig(target_coding=coding)

    def fit_on(labels):
        dm = data.design_for(train, labels, intercept=intercept)
        f = regress.fit(dm, model, cfg)
        if not f.converged:
            raise regress.FitError(f"{model} fit did not converge: {f.message}")
        acc = regress.accuracy(f, data.design_for(test, labels, intercept=intercept))
        return f, acc

    m, acc = fit_on(base)
    loo, loo_acc, reports = {}, {}, {}
    for s in sensitive:
        labels = [l for l in train.schema.labels if l in base or l == s]
        loo[s], loo_acc[s] = fit_on(labels)
        reports[s] = wald_test(m, loo[s], alpha, bonferroni, se_decimals)
    trivial = regress.constant_accuracy(data.design_for(test, base, intercept=intercept))
    return Analysis(m, loo, reports, acc, loo_acc, trivial)


def _model_csv(fits: dict[str, regress.ModelFit]) -> str:
    import csv
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "column", "coef", "se"])
    for name, f in fits.items():
        for c, b, s in zip(f.columns, f.coef, f.se):
            w.writerow([name, c.key, repr(float(b)), repr(float(s))])
    return buf.getvalue()


def cmd_analyze(a) -> int:
    if not 0 < a.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    schema = data.load_schema(a.schema) if a.schema else data.adult_schema()
    sensitive = a.sensitive or ["age"]
    for s in sensitive:
        if s not in schema.labels:
            raise UsageError(f"unknown sensitive feature {s!r}; known: {', '.join(schema.labels)}")
    out = _outdir(a.out)
    man = RunManifest("analyze", _digest(vars_for_digest(a)), a.seed, out)
    with man.phase("load"):
        train = data.load_csv(a.train, schema, "?")
        test = data.load_csv(a.test, schema, "?")
    with man.phase("fit"):
        res = analyze(train, test, a.model, sensitive, a.alpha, a.bonferroni,
                      None if a.se_decimals < 0 else a.se_decimals)
    fits = {"M": res.model} | {f"M+{s}": f for s, f in res.loo.items()}
    man.write("models.csv", _model_csv(fits))
    for s, rep in res.reports.items():
        man.write(f"wald_{s}.csv", rep.to_csv())
        man.write(f"wald_{s}.txt", rep.to_text())
    lines = [f"model: {a.model}", f"train rows: {train.row_count}  test rows: {test.row_count}",
             f"accuracy M: {res.accuracy:.4f}"]
    lines += [f"accuracy M+{s}: {acc:.4f}" for s, acc in res.loo_accuracy.items()]
    lines += [f"trivial accuracy: {res.trivial_accuracy:.4f}",
              f"flagged: {', '.join(res.flagged) or 'none'}"]
    summary = "\n".join(lines) + "\n"
    man.write("summary.txt", summary)
    man.save()
    for rep in res.reports.values():
        print(rep.to_text())
    print(summary, end="")
    return EXIT_FLAGGED if res.flagged else EXIT_OK


def vars_for_digest(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in ("func", "out") and not callable(v)}


# --- protocol roles ---------------------------------------------------------

def _session_config(a):
    from .protocol import SessionConfig
    path = a.config or os.environ.get(CONFIG_ENV)
    cfg = SessionConfig.load(path) if path else SessionConfig()
    over = {}
    for key in ("backend", "profile", "model", "seed", "alpha"):
        v = getattr(a, key, None)
        if v is not None:
            over[key] = v
    if getattr(a, "bonferroni", False):
        over["bonferroni"] = True
    if getattr(a, "sensitive", None):
        over["sensitive"] = tuple(a.sensitive)
    if over.get("backend") == "rlwe" and "profile" not in over and not path:
        over["profile"] = "subsample"
    return replace(cfg, **over) if over else cfg


def _transport(a, **kw):
    from .protocol.transport import TcpTransport, parse_address
    if bool(a.listen) == bool(a.connect):
        raise UsageError("give exactly one of --listen or --connect")
    if a.listen:
        host, port = parse_address(a.listen)
        return TcpTransport.listen(host, port, accept_timeout=a.timeout,
                                   on_bound=lambda p: print(f"listening on {host}:{p}", flush=True), **kw)
    host, port = parse_address(a.connect)
    return TcpTransport.connect(host, port, retry_for=a.retry, **kw)


def cmd_comp(a) -> int:
    from .protocol import CompSession, RecodePolicy, prepare, run_comp
    cfg = _session_config(a)
    out = _outdir(a.out)
    man = RunManifest("comp", cfg.digest(), cfg.seed, out)
    man.write("session.cfg", cfg.to_text())
    with man.phase("load"):
        d = data.load_adult(Path(a.data))
        d, part, intercept = prepare(d, cfg)
    with man.phase("keygen"):
        keys = fhe.keygen(cfg.fhe_params())
    if cfg.backend == "rlwe":
        print(fhe.NOT_SECURE_WARNING, file=sys.stderr)
    with _transport(a) as t:
        session = CompSession(cfg, keys, t, np.random.default_rng(cfg.seed))
        with man.phase("session"):
            res = run_comp(d, part, session, RecodePolicy.from_labels(cfg.recode), intercept)
        man.write("transcript.ndjson", t.transcript_lines())
    for o in res.rounds:
        for s, rep in o.reports.items():
            man.write(f"round{o.round}_wald_{s}.csv", rep.to_csv())
            man.write(f"round{o.round}_wald_{s}.txt", rep.to_text())
    man.write("model.csv", _model_csv({"accepted": res.model}))
    lines = [f"rounds: {len(res.rounds)}", f"refreshes: {res.refreshes}"]
    for o in res.rounds:
        lines.append(f"round {o.round}: flagged {', '.join(o.flagged_labels) or 'none'}"
                     + (f"; then {o.action}" if o.action else ""))
    summary = "\n".join(lines) + "\n"
    man.write("summary.txt", summary)
    man.save()
    print(res.model.to_text(), end="")
    print(summary, end="")
    return EXIT_OK


def cmd_ml(a) -> int:
    from .protocol import MlSession, run_ml
    cfg = _session_config(a)
    out = _outdir(a.out)
    man = RunManifest("ml", cfg.digest(), cfg.seed, out)
    with _transport(a) as t:
        session = MlSession(cfg, t, np.random.default_rng(cfg.seed + 1))
        with man.phase("session"):
            rounds = run_ml(session)
        man.write("transcript.ndjson", t.transcript_lines())
    man.save()
    print(f"ml: {rounds} round(s), {session.refreshes} refresh(es)")
    return EXIT_OK


# --- bench ----------------------------------------------------------------------

def bench_table(params: fhe.FheParams, reps: int = 3, seed: int = 0) -> list[tuple[str, float]]:
    """Median latency in ms per operation class, plus derived per-epoch estimates."""
    from .protocol.learn import EPOCH_DEPTH, LINEAR_GD
    rng = np.random.default_rng(seed)
    ks = fhe.keygen(replace(params, seed=seed))
    slots = params.slot_count
    x = rng.uniform(-1, 1, slots)
    a, b = fhe.encrypt(ks.pk, x, rng), fhe.encrypt(ks.pk, x[::-1], rng)

    def med(f):
        ts = []
        for _ in range(reps):
            t0 = time.perf_counter()
            f()
            ts.append((time.perf_counter() - t0) * 1e3)
        return float(np.median(ts))

    def chain():
        c = a
        for _ in range(params.level_count):
            c = fhe.eval_mul(ks.evk, c, b)
        return c

    def refresh():
        # the serialization both ways is part of the round trip
        blob = fhe.serialize_ciphertext(fhe.eval_drop_level(ks.evk, a, 0))
        tok = fhe.refresh_request(fhe.deserialize_ciphertext(blob))
        fhe.deserialize_ciphertext(fhe.serialize_ciphertext(fhe.refresh_apply(ks.sk, ks.pk, tok, rng)))

    rows = [
        ("encrypt", med(lambda: fhe.encrypt(ks.pk, x, rng))),
        ("add", med(lambda: fhe.eval_add(ks.evk, a, b))),
        ("mul+rescale", med(lambda: fhe.eval_mul(ks.evk, a, b))),
        ("rotate", med(lambda: fhe.eval_rotate(ks.evk, a, 1))),
        ("refresh round-trip", med(refresh)),
        ("mul chain to exhaustion", med(chain)),
    ]
    t = dict(rows)
    logn = int(np.log2(slots))
    # one linear epoch on p columns: p products for z, p for the gradient, p inner sums
    per_col = 2 * t["mul+rescale"] + logn * (t["rotate"] + t["add"])
    refresh_share = t["refresh round-trip"] * EPOCH_DEPTH[LINEAR_GD] / max(params.level_count - 2, 1)
    rows.append(("projected linear epoch per column", per_col + refresh_share))
    return rows


def cmd_bench(a) -> int:
    try:
        params = fhe.preset(a.params)
    except fhe.ParamError as exc:
        raise UsageError(str(exc)) from None
    if params.backend != "rlwe":
        raise UsageError("benchmarks need an rlwe preset")
    out = _outdir(a.out)
    man = RunManifest("bench", params.digest.hex(), a.seed, out)
    with man.phase("bench"):
        rows = bench_table(params, a.reps, a.seed)
    text = [f"preset {a.params}: N={params.ring_degree}, L={params.level_count}, slots={params.slot_count}",
            f"{'operation':<36}{'ms':>12}"]
    text += [f"{name:<36}{ms:>12.3f}" for name, ms in rows]
    body = "\n".join(text) + "\n"
    man.write(f"bench_{a.params}.txt", body)
    man.save()
    print(body, end="")
    return EXIT_OK


# --- prepare --------------------------------------------------------------------

def cmd_prepare(a) -> int:
    schema = data.load_schema(a.schema) if a.schema else data.adult_schema()
    prof = data.PROFILES[a.profile]
    out = _outdir(a.out)
    man = RunManifest("prepare", _digest(vars_for_digest(a)), a.seed, out)
    src = Path(a.data_dir)
    lines = []
    for name in ("adult.data", "adult.test"):
        with man.phase(f"load {name}"):
            d = data.load_csv(src / name, schema, "?")
        dm = data.design_for(prof.apply(d), prof.features, intercept=prof.intercept)
        path = out / f"{name.replace('.', '_')}_{a.profile}.csv"
        dm.to_csv(path)
        man.outputs.append(str(path))
        lines.append(f"{name}: {d.row_count} complete rows -> {dm.n} x {dm.p} design ({dm.digest()[:16]})")
    man.write("schema.txt", schema.to_text())
    summary = "\n".join(lines) + "\n"
    man.write("summary.txt", summary)
    man.save()
    print(summary, end="")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairgate", description="Regression fairness screening with an encrypted training party.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    an = sub.add_parser("analyze", help="plaintext leave-one-out Wald screen")
    an.add_argument("--train", default=str(DEFAULT_DATA_DIR / "adult.data"))
    an.add_argument("--test", default=str(DEFAULT_DATA_DIR / "adult.test"))
    an.add_argument("--schema", help="schema file (default: bundled Adult schema)")
    an.add_argument("--model", choices=[LINEAR, LOGISTIC], default=LINEAR)
    an.add_argument("--sensitive", action="append", help="sensitive feature (repeatable; default age)")
    an.add_argument("--alpha", type=float, default=0.05)
    an.add_argument("--bonferroni", action="store_true")
    an.add_argument("--se-decimals", type=int, default=3, help="round standard errors first; negative disables")
    an.add_argument("--seed", type=int, default=0)
    an.add_argument("--out", default="out/analyze")
    an.set_defaults(func=cmd_analyze)

    for name, fn, helptext in (("comp", cmd_comp, "run the Comp role"), ("ml", cmd_ml, "run the ML role")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config", help=f"session config (falls back to ${CONFIG_ENV})")
        r.add_argument("--listen", metavar="HOST:PORT")
        r.add_argument("--connect", metavar="HOST:PORT")
        r.add_argument("--backend", choices=["cleartext", "rlwe"])
        r.add_argument("--profile", choices=sorted(data.PROFILES))
        r.add_argument("--model", choices=[LINEAR, LOGISTIC])
        r.add_argument("--sensitive", action="append")
        r.add_argument("--alpha", type=float)
        r.add_argument("--bonferroni", action="store_true")
        r.add_argument("--seed", type=int)
        r.add_argument("--timeout", type=float, default=600.0, help="seconds to wait for the peer")
        r.add_argument("--retry", type=float, default=0.0, help="seconds to keep retrying --connect")
        r.add_argument("--out", default=f"out/{name}")
        if name == "comp":
            r.add_argument("--data", default=str(DEFAULT_DATA_DIR / "adult.data"))
        r.set_defaults(func=fn)

    b = sub.add_parser("bench", help="FHE per-operation latencies")
    b.add_argument("--params", default="default", help=f"preset: {', '.join(sorted(fhe.PRESETS))}")
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="out/bench")
    b.set_defaults(func=cmd_bench)

    pr = sub.add_parser("prepare", help="load, validate and encode the dataset")
    pr.add_argument("--data-dir", default=str(DEFAULT_DATA_DIR))
    pr.add_argument("--schema")
    pr.add_argument("--profile", choices=sorted(data.PROFILES), default="full")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", default="out/prepare")
    pr.set_defaults(func=cmd_prepare)
    return p


def main(argv: list[str] | None = None) -> int:
    from .protocol import ConfigError, ConfigMismatch
    from .protocol.transport import TransportError
    try:
        a = build_parser().parse_args(argv)
        return a.func(a)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ConfigMismatch) as exc:
        print(f"fairgate: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, FileNotFoundError, IsADirectoryError, regress.FitError) as exc:
        print(f"fairgate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TransportError as exc:
        print(f"fairgate: transport error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:
        print(f"fairgate: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
