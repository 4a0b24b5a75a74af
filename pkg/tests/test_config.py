import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgate.protocol import ConfigError, SessionConfig
from fairgate.protocol.learn import IRLS, LINEAR_GD, LOGISTIC_GD, OLS


def test_defaults_pick_exact_learners_on_cleartext_and_gd_on_rlwe():
    assert SessionConfig().algorithm == OLS
    assert SessionConfig(model="logistic").algorithm == IRLS
    assert SessionConfig(backend="rlwe").algorithm == LINEAR_GD
    assert SessionConfig(backend="rlwe", model="logistic").algorithm == LOGISTIC_GD
    assert SessionConfig().coding == "pm1" and SessionConfig(model="logistic").coding == "01"


def test_text_roundtrip_and_digest():
    cfg = SessionConfig(backend="rlwe", params="n2048", alpha=0.01, bonferroni=True, sensitive=("age", "sex"))
    again = SessionConfig.from_text(cfg.to_text())
    assert again == cfg and again.digest() == cfg.digest()
    assert SessionConfig(alpha=0.01).digest() != SessionConfig().digest()


def test_parse_accepts_comments_dashes_and_blank_lines():
    cfg = SessionConfig.from_text("# session\n\nbackend: rlwe   # encrypted\nlearning-rate: 0.25\nse-decimals: -1\n")
    assert cfg.backend == "rlwe" and cfg.learning_rate == 0.25 and cfg.rounding is None


@pytest.mark.parametrize("text", [
    "colour: blue",
    "backend rlwe",
    "alpha: 0.1\nalpha: 0.2",
    "epochs: many",
    "bonferroni: maybe",
    "alpha: 1.5",
    "backend: gpu",
    "params: n3000",
    "recode: workclass",
    "model: logistic\ntarget_coding: pm1",
    "model: logistic\nlearner: ols",
])
def test_bad_entries_are_rejected(text):
    with pytest.raises(ConfigError):
        SessionConfig.from_text(text)


def test_fhe_params_follow_backend_and_seed():
    p = SessionConfig(backend="cleartext", params="n1024", seed=9).fhe_params()
    assert p.backend == "cleartext" and p.seed == 9 and p.ring_degree == 1024


@settings(max_examples=50)
@given(alpha=st.floats(0.001, 0.999), epochs=st.integers(1, 500), lr=st.floats(1e-4, 10),
       decimals=st.integers(-1, 8), bonf=st.booleans(), backend=st.sampled_from(["cleartext", "rlwe"]))
def test_roundtrip_property(alpha, epochs, lr, decimals, bonf, backend):
    cfg = SessionConfig(backend=backend, alpha=alpha, epochs=epochs, learning_rate=lr,
                        se_decimals=decimals, bonferroni=bonf)
    assert SessionConfig.from_text(cfg.to_text()) == cfg
