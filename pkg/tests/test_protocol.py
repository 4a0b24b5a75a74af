import threading
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fairgate import data, fhe
from fairgate.protocol import (
    CompSession,
    ConfigMismatch,
    Kind,
    MlSession,
    PolicyError,
    RecodePolicy,
    SessionConfig,
    TcpTransport,
    TransportError,
    channel_pair,
    replay,
    run_comp,
    run_local,
    run_ml,
)
from fairgate.protocol.fsm import COMP, ML

import synth

CLEAR = SessionConfig(backend="cleartext", params="n1024", recode=(), se_decimals=-1)
RLWE = SessionConfig(backend="rlwe", params="n1024", epochs=1, learning_rate=0.5, recode=(), se_decimals=-1)


def local(d, cfg, **kw):
    return run_local(d, cfg, partition=synth.partition(), intercept=True, **kw)


def ols_wald_oracle(X_m, X_loo, y, shared):
    """Plain lstsq fits of both models; p-values of the shared columns via scipy."""
    out = []
    fits = []
    for X in (X_m, X_loo):
        b, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ b
        s2 = r @ r / (len(y) - X.shape[1])
        fits.append((b, np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))))
    (b, sb), (z, sz) = fits
    for j, k in shared:
        w = (b[j] - z[k]) ** 2 / (sb[j] ** 2 + sz[k] ** 2)
        out.append(stats.chi2.sf(w, 1))
    return np.array(out)


def test_wald_flags_agree_with_independent_refit(rng):
    n = 600
    s = rng.uniform(0, 4, n)
    a = np.clip(s + rng.normal(0, 0.5, n), 0, 4)
    b = rng.uniform(0, 4, n)
    c = rng.integers(0, 3, n)
    y = (s + rng.normal(0, 1, n) > 2).astype(np.int64)
    d = data.Dataset(synth.SCHEMA, {"s": s, "a": a, "b": b, "c": c}, y, n)
    run = local(d, CLEAR)
    first = run.result.rounds[0]
    dm_loo = data.design_for(d, ["a", "b", "c", "s"], None, True)
    cols = first.model.columns
    X_m = dm_loo.values[:, [dm_loo.index(c) for c in cols]]
    yc = 2.0 * y - 1.0
    p = ols_wald_oracle(X_m, dm_loo.values, yc, [(j, dm_loo.index(c)) for j, c in enumerate(cols)])
    want = {c.key for c, pv in zip(cols, p) if pv < 0.05 and not c.is_intercept}
    assert set(first.flagged_labels) == want
    assert "a" in want
    got_p = [r.p for r in first.reports["s"].rows]
    np.testing.assert_allclose(got_p, p[1:], rtol=1e-6)


def test_no_sensitive_features_gives_one_model_and_one_round(rng):
    d = synth.make(rng, 200)
    part = data.FeaturePartition(frozenset(), synth.UNPROTECTED)
    d = data.select(sorted(synth.UNPROTECTED), d)
    run = run_local(d, CLEAR, partition=part, intercept=True)
    assert len(run.result.rounds) == 1 and run.ml_rounds == 1
    kinds = [m.kind for direction, m in run.ml.transport.headers if direction == "send"]
    assert kinds == [Kind.MODEL_RESULT]


def test_rounds_follow_the_screen_and_ml_sees_continue_then_terminate(rng):
    for _ in range(20):
        d = synth.make(rng, 150)
        if synth.expected_rounds(d, 0.2) == 3:
            break
    run = local(d, CLEAR, screen=synth.correlation_screen(d, 0.2))
    assert len(run.result.rounds) == 3 == run.ml_rounds
    got = [m.kind for direction, m in run.ml.transport.headers
           if direction == "recv" and m.kind in (Kind.CONTINUE, Kind.TERMINATE)]
    assert got == [Kind.CONTINUE, Kind.CONTINUE, Kind.TERMINATE]
    assert run.result.rounds[-1].flagged == frozenset()


def test_ml_trains_exactly_the_requested_columns(rng):
    d = synth.make(rng, 150)
    run = local(d, CLEAR)
    out = run.result.rounds[0]
    base = [c.key for c in out.model.columns]
    assert base[0] == data.INTERCEPT and "s" not in base
    loo = [c.key for c in out.loo["s"].columns]
    assert sorted(loo) == sorted(base + ["s"])
    assert [k for k in loo if k != "s"] == base


def test_transcripts_replay_through_both_state_machines(rng):
    d = synth.make(rng, 150)
    run = local(d, replace(RLWE, epochs=4), keep_received=True)
    assert replay(ML, run.ml.transport.headers).done
    assert replay(COMP, run.comp.transport.headers).done
    assert run.comp.refreshes > 0


def test_ml_transcript_holds_no_secret_and_no_plaintext(rng):
    d = synth.make(rng, 256)
    run = local(d, RLWE, keep_received=True)
    seen = bytes(run.ml.transport.received)
    sk = fhe.serialize_sk(run.comp.keys.sk)
    assert sk not in seen
    raw = np.ascontiguousarray(run.comp.keys.sk.data).tobytes()
    assert all(raw[i : i + 32] not in seen for i in range(0, len(raw) - 32, 997))
    for label in ("s", "a", "b"):
        col = np.asarray(d.columns[label], dtype=float)
        for vals in (col, col / 4.0):
            assert not any(w in seen for w in synth.float_windows(vals))
            assert repr(float(vals[7])).encode() not in seen
    assert not any(w in seen for w in synth.float_windows(2.0 * d.target - 1.0))


def test_ml_session_never_holds_a_secret_key(rng):
    run = local(synth.make(rng, 100), RLWE)
    held = [v for v in vars(run.ml).values()]
    assert not any(isinstance(v, fhe.SecretKey) for v in held)
    assert isinstance(run.ml.pk, fhe.PublicKey) and isinstance(run.ml.evk, fhe.EvalKey)


def test_config_mismatch_is_refused():
    keys = fhe.keygen(CLEAR.fhe_params())
    comp_t, ml_t = channel_pair(timeout=5)
    CompSession(CLEAR, keys, comp_t).start()
    ml = MlSession(SessionConfig(backend="cleartext", params="n1024", recode=(), alpha=0.01), ml_t)
    with pytest.raises(ConfigMismatch):
        ml.accept_keys()


def test_dropped_connection_surfaces_on_the_ml_side():
    keys = fhe.keygen(CLEAR.fhe_params())
    comp_t, ml_t = channel_pair(timeout=5)
    CompSession(CLEAR, keys, comp_t).start()
    comp_t.close()
    with pytest.raises(TransportError):
        run_ml(MlSession(CLEAR, ml_t))


def test_ml_failure_surfaces_on_the_comp_side(rng):
    # ML built for another parameter set refuses the keys and hangs up
    d = synth.make(rng, 100)
    keys = fhe.keygen(CLEAR.fhe_params())
    comp_t, ml_t = channel_pair(timeout=10)
    ml = MlSession(SessionConfig(backend="cleartext", params="n2048", recode=()), ml_t)

    def serve():
        try:
            run_ml(ml)
        except ConfigMismatch:
            ml_t.close()

    t = threading.Thread(target=serve, daemon=True)
    t.start()
    with pytest.raises(TransportError):
        run_comp(d, synth.partition(), CompSession(CLEAR, keys, comp_t), RecodePolicy())
    t.join(5)


def test_policy_refuses_a_step_that_removes_nothing(rng):
    d = synth.make(rng, 50)
    part = synth.partition()
    stranger = data.Column("s")  # sensitive, so not removable
    with pytest.raises(PolicyError):
        RecodePolicy().apply(d, part, frozenset({stranger}), set(), True)


def test_session_over_tcp(rng):
    d = synth.make(rng, 120)
    keys = fhe.keygen(CLEAR.fhe_params())
    bound = threading.Event()
    port = []
    box = {}

    def ml_side():
        bound.wait(5)
        with TcpTransport.connect("127.0.0.1", port[0], retry_for=5, timeout=30) as t:
            box["rounds"] = run_ml(MlSession(CLEAR, t))

    th = threading.Thread(target=ml_side, daemon=True)
    th.start()
    with TcpTransport.listen("127.0.0.1", 0, accept_timeout=10,
                             on_bound=lambda p: (port.append(p), bound.set()), timeout=30) as t:
        res = run_comp(d, synth.partition(), CompSession(CLEAR, keys, t, screen=synth.correlation_screen(d, 0.2)),
                       RecodePolicy())
    th.join(10)
    assert box["rounds"] == len(res.rounds) == synth.expected_rounds(d, 0.2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(60, 400), alpha=st.sampled_from([0.05, 0.2, 0.5]))
def test_real_screen_shrinks_columns_every_round(seed, n, alpha):
    d = synth.make(np.random.default_rng(seed), n)
    run = local(d, replace(CLEAR, alpha=alpha))
    rounds = run.result.rounds
    widths = [len(r.model.columns) for r in rounds]
    active = widths[0] - 1  # intercept excluded
    assert len(rounds) <= active + 1
    assert all(b < a for a, b in zip(widths, widths[1:]))
    assert rounds[-1].flagged == frozenset() and all(r.flagged for r in rounds[:-1])
