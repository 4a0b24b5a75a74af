import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgate.fhe.ntt import (
    MAX_MODULUS_BITS,
    RnsNtt,
    bit_reverse,
    is_prime,
    mulmod,
    negacyclic_schoolbook,
    primitive_root_2n,
)
from fairgate.fhe.params import ntt_primes

SMALL_PRIMES = [p for p in range(2, 2000) if all(p % d for d in range(2, int(p**0.5) + 1))]


def test_is_prime_matches_trial_division():
    assert [n for n in range(2000) if is_prime(n)] == SMALL_PRIMES


def test_is_prime_large_known_values():
    assert is_prime((1 << 61) - 1)
    assert not is_prime((1 << 61) + 1)
    assert not is_prime(3215031751)  # strong pseudoprime to bases 2, 3, 5, 7


def test_primitive_root_has_order_2n():
    q, n = 12289, 512
    psi = primitive_root_2n(q, n)
    assert pow(psi, 2 * n, q) == 1
    assert pow(psi, n, q) == q - 1


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_mulmod_matches_python_ints(draw):
    q = draw.draw(st.sampled_from([12289, 1073750017, (1 << 40) - 87, 2199023190017]))
    a = draw.draw(st.lists(st.integers(0, q - 1), min_size=1, max_size=16))
    b = draw.draw(st.lists(st.integers(0, q - 1), min_size=len(a), max_size=len(a)))
    got = mulmod(np.array(a, dtype=np.int64), np.array(b, dtype=np.int64), np.int64(q))
    assert got.tolist() == [x * y % q for x, y in zip(a, b)]


def test_mulmod_extremes_at_max_width():
    q = ntt_primes(MAX_MODULUS_BITS, 1, 2048)[0]
    a = np.array([q - 1, q - 2, 1, 0, q // 2], dtype=np.int64)
    b = np.array([q - 1, q - 1, q - 1, q - 1, q // 2 + 1], dtype=np.int64)
    assert mulmod(a, b, np.int64(q)).tolist() == [int(x) * int(y) % q for x, y in zip(a, b)]


def test_bit_reverse():
    assert [bit_reverse(i, 3) for i in range(8)] == [0, 4, 2, 6, 1, 5, 3, 7]


@pytest.mark.parametrize("n", [16, 64])
def test_ntt_product_matches_schoolbook(n, rng):
    moduli = ntt_primes(30, 2, 2 * n) + ntt_primes(40, 1, 2 * n)
    ntt = RnsNtt(n, moduli)
    for _ in range(3):
        a = [int(v) for v in rng.integers(0, 1 << 20, n)]
        b = [int(v) for v in rng.integers(0, 1 << 20, n)]
        A = np.array([[x % q for x in a] for q in moduli], dtype=np.int64)
        B = np.array([[x % q for x in b] for q in moduli], dtype=np.int64)
        idx = list(range(len(moduli)))
        prod = ntt.inverse(mulmod(ntt.forward(A, idx), ntt.forward(B, idx), ntt.q), idx)
        for r, q in enumerate(moduli):
            assert prod[r].tolist() == negacyclic_schoolbook([x % q for x in a], [x % q for x in b], q)


def test_ntt_roundtrip_and_evaluation_order(rng):
    n = 32
    q = ntt_primes(30, 1, 2 * n)[0]
    ntt = RnsNtt(n, [q])
    a = rng.integers(0, q, (1, n))
    fa = ntt.forward(a, [0])
    assert np.array_equal(ntt.inverse(fa, [0]), a)
    psi = ntt.psi[0]
    coeffs = [int(v) for v in a[0]]
    for i in (0, 1, 5, n - 1):
        x = pow(psi, 2 * bit_reverse(i, 5) + 1, q)
        assert int(fa[0, i]) == sum(c * pow(x, k, q) for k, c in enumerate(coeffs)) % q


def test_automorphism_permutes_evaluations(rng):
    n = 32
    q = ntt_primes(30, 1, 2 * n)[0]
    ntt = RnsNtt(n, [q])
    a = rng.integers(0, q, n)
    g = 5
    # a(X^g) computed directly on coefficients, with the sign flips of X^N = -1
    rot = np.zeros(n, dtype=object)
    for k, c in enumerate(a):
        e = k * g % (2 * n)
        if e < n:
            rot[e] = (rot[e] + int(c)) % q
        else:
            rot[e - n] = (rot[e - n] - int(c)) % q
    direct = ntt.forward(np.array([rot], dtype=np.int64), [0])[0]
    perm = ntt.automorphism_index(g)
    assert np.array_equal(ntt.forward(a[None, :], [0])[0][perm], direct)


def test_rejects_oversized_modulus():
    with pytest.raises(ValueError):
        RnsNtt(16, [(1 << MAX_MODULUS_BITS) + 33])
