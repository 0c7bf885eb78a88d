import numpy as np
import pytest

from rqstream import gf256


def carryless_mul(a, b):
    # Shift-and-add multiplication reduced by the field polynomial.
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= 0x11D
    return r


def test_mul_table_matches_shift_and_add():
    rng = np.random.default_rng(3)
    for a, b in rng.integers(0, 256, size=(2000, 2)):
        assert gf256.mul(int(a), int(b)) == carryless_mul(int(a), int(b))


def test_inverse_and_division():
    for a in range(1, 256):
        assert gf256.mul(a, gf256.inv(a)) == 1
        assert gf256.div(gf256.mul(a, 77), 77) == a


def test_zero_has_no_inverse():
    with pytest.raises(ZeroDivisionError):
        gf256.inv(0)


def test_alpha_generates_the_multiplicative_group():
    powers = {gf256.alpha_pow(i) for i in range(255)}
    assert powers == set(range(1, 256))
    assert gf256.alpha_pow(255) == 1


def test_tables_are_read_only():
    with pytest.raises(ValueError):
        gf256.MUL_TABLE[1, 1] = 0


def test_addmul_and_matmul_agree():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 256, (4, 6), dtype=np.uint8)
    b = rng.integers(0, 256, (6, 3), dtype=np.uint8)
    expected = np.zeros((4, 3), dtype=np.uint8)
    for i in range(4):
        for k in range(6):
            gf256.addmul(expected[i], b[k], int(a[i, k]))
    assert np.array_equal(gf256.matmul(a, b), expected)


def test_scale_distributes_over_xor():
    rng = np.random.default_rng(8)
    x, y = rng.integers(0, 256, (2, 32), dtype=np.uint8)
    assert np.array_equal(gf256.scale(x ^ y, 91), gf256.scale(x, 91) ^ gf256.scale(y, 91))
