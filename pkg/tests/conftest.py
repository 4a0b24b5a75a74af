from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from fairgate import data, fhe

ROOT = Path(__file__).resolve().parents[1]
ADULT_DIR = ROOT / "data" / "adult"


@pytest.fixture(scope="session")
def adult_train() -> data.Dataset:
    return data.load_adult(ADULT_DIR / "adult.data")


@pytest.fixture(scope="session")
def adult_test() -> data.Dataset:
    return data.load_adult(ADULT_DIR / "adult.test")


@pytest.fixture(scope="session")
def small_keys() -> fhe.KeySet:
    return fhe.keygen(fhe.preset("n1024"))


@pytest.fixture(scope="session")
def clear_keys() -> fhe.KeySet:
    return fhe.keygen(fhe.FheParams(ring_degree=1024, level_count=3, modulus_chain=(40, 30, 30, 30),
                                    backend="cleartext"))


@pytest.fixture(params=["cleartext", "rlwe"])
def any_keys(request, small_keys, clear_keys) -> fhe.KeySet:
    return clear_keys if request.param == "cleartext" else small_keys


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mid_keys() -> fhe.KeySet:
    return fhe.keygen(fhe.preset("n2048"))


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
