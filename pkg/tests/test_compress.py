import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdvslite.compress import (
    DEFAULT_ELEMENT_COUNTS,
    DESC_DIM,
    LOCAL_HEADER,
    MODES,
    DecodeError,
    ModeMismatch,
    QuantizerModel,
    TernaryCode,
    TransformPair,
    code_bytes,
    distance_matrix,
    hadamard8,
    inverse_transform,
    max_codes,
    pack_local,
    quantize_ternary,
    ternary_distance,
    ternary_symbols,
    train_thresholds,
    transform_batch,
    transform_descriptor,
    unpack_local,
)

IDENTITY = np.eye(8, dtype=np.int8)


def code(symbols, x=0, y=0, s=0, t=0):
    return TernaryCode(x, y, s, t, np.asarray(symbols, dtype=np.int8))


def random_codes(rng, n, m):
    return [
        code(rng.integers(-1, 2, m), *rng.integers(0, 65536, 2), *rng.integers(0, 256, 2)) for _ in range(n)
    ]


def test_default_pair_structure():
    tp = TransformPair()
    h = hadamard8().astype(int)
    np.testing.assert_array_equal(h @ h.T, 8 * np.eye(8))
    np.testing.assert_array_equal(tp.B, np.roll(tp.A, 1, axis=0))
    # checkerboard: neighbouring cells use different matrices
    assert tp.matrix_for_cell(0) is tp.A and tp.matrix_for_cell(1) is tp.B and tp.matrix_for_cell(4) is tp.B


def test_invalid_pairs_rejected():
    with pytest.raises(ValueError):
        TransformPair(A=np.zeros((8, 8), np.int8))
    with pytest.raises(ValueError):
        TransformPair(A=np.full((8, 8), 2, np.int8))


def test_identity_pair_is_identity(rng):
    v = rng.uniform(0, 1, DESC_DIM)
    np.testing.assert_array_equal(transform_descriptor(v, TransformPair(IDENTITY, IDENTITY, 0)), v)


def test_zero_in_zero_out():
    assert not transform_descriptor(np.zeros(DESC_DIM)).any()


def test_cell_oracle(rng):
    v = rng.uniform(0, 1, DESC_DIM)
    out = transform_descriptor(v)
    h = hadamard8().astype(float)
    np.testing.assert_allclose(out[:8], h @ v[:8] / 8)
    np.testing.assert_allclose(out[8:16], np.roll(h, 1, axis=0) @ v[8:16] / 8)


def test_inverse_recovers_input(rng):
    for _ in range(10):
        v = rng.uniform(0, 0.2, DESC_DIM)
        np.testing.assert_allclose(inverse_transform(transform_descriptor(v)), v, atol=1e-9)


def test_linearity(rng):
    x, y = rng.normal(size=(2, DESC_DIM))
    a, b = 0.7, -2.3
    np.testing.assert_allclose(
        transform_descriptor(a * x + b * y), a * transform_descriptor(x) + b * transform_descriptor(y), atol=1e-9
    )


def test_batch_equals_single(rng):
    X = rng.uniform(0, 1, (7, DESC_DIM))
    np.testing.assert_array_equal(transform_batch(X), np.stack([transform_descriptor(x) for x in X]))


def test_band_rule():
    np.testing.assert_array_equal(ternary_symbols([-0.5, 0.0, 0.5], -0.1, 0.1), [-1, 0, 1])
    # both thresholds belong to the middle band
    np.testing.assert_array_equal(ternary_symbols([-0.1, 0.1], -0.1, 0.1), [0, 0])


def test_quantize_uses_priority_order():
    pr = np.arange(DESC_DIM)[::-1]
    qm = QuantizerModel(np.full(DESC_DIM, -0.1), np.full(DESC_DIM, 0.1), pr)
    v = np.zeros(DESC_DIM)
    v[127], v[126] = 1.0, -1.0
    c = quantize_ternary(v, qm, "512B")
    assert c.symbols.size == DEFAULT_ELEMENT_COUNTS["512B"]
    np.testing.assert_array_equal(c.symbols[:3], [1, -1, 0])
    with pytest.raises(ValueError):
        quantize_ternary(v, qm, "3K")


def test_quantize_monotone(rng):
    qm = QuantizerModel(np.full(DESC_DIM, -0.1), np.full(DESC_DIM, 0.1), np.arange(DESC_DIM))
    base = rng.normal(0, 0.2, DESC_DIM)
    prev = quantize_ternary(base, qm, "16K").symbols
    for step in np.linspace(0.01, 1, 30):
        cur = quantize_ternary(base + step, qm, "16K").symbols
        assert (cur >= prev).all()
        prev = cur


def test_uniform_quantiles():
    rng = np.random.default_rng(21)
    X = rng.uniform(0, 1, (10_000, DESC_DIM))
    qm = train_thresholds(X)
    np.testing.assert_allclose(qm.t0, 1 / 3, atol=0.02)
    np.testing.assert_allclose(qm.t1, 2 / 3, atol=0.02)
    # sorted-array oracle for one element
    col = np.sort(X[:, 5])
    assert qm.t0[5] == pytest.approx(np.quantile(col, 1 / 3))


def test_symmetric_element_gives_symmetric_thresholds():
    X = np.random.default_rng(2).normal(0, 1, (20_000, DESC_DIM))
    qm = train_thresholds(X)
    np.testing.assert_allclose(qm.t0, -qm.t1, atol=0.05)


def test_symbol_marginals_match_design():
    rng = np.random.default_rng(3)
    train = rng.gamma(2.0, 1.0, (5000, DESC_DIM))
    test = rng.gamma(2.0, 1.0, (5000, DESC_DIM))
    qm = train_thresholds(train)
    syms = np.stack([quantize_ternary(v, qm, "16K").symbols for v in test])
    for s in (-1, 0, 1):
        np.testing.assert_allclose((syms == s).mean(axis=0), 1 / 3, atol=0.05)


def test_constant_element_demoted():
    rng = np.random.default_rng(4)
    X = rng.normal(0, 1, (1000, DESC_DIM))
    X[:, 17] = 0.5
    X[:, 40] *= 5.0
    qm = train_thresholds(X)
    assert qm.degenerate == (17,)
    assert qm.priority[-1] == 17 and qm.priority[0] == 40
    assert np.all(qm.t0 < qm.t1)


def test_training_preconditions():
    with pytest.raises(ValueError):
        train_thresholds(np.zeros((999, DESC_DIM)))
    with pytest.raises(ValueError):
        train_thresholds(np.zeros((1000, 64)))


def test_distance_examples():
    m = 103
    a = code(np.ones(m))
    assert ternary_distance(a, a) == 0
    assert ternary_distance(a, code(-np.ones(m))) == 206
    with pytest.raises(ModeMismatch):
        ternary_distance(a, code(np.ones(20)))


def test_triangle_inequality(rng):
    for _ in range(1000):
        a, b, c = random_codes(rng, 3, 32)
        assert ternary_distance(a, c) <= ternary_distance(a, b) + ternary_distance(b, c)


def test_distance_matrix_matches_scalar(rng):
    A = random_codes(rng, 9, 64)
    B = random_codes(rng, 6, 64)
    D = distance_matrix(np.stack([c.symbols for c in A]), np.stack([c.symbols for c in B]))
    assert D.tolist() == [[ternary_distance(a, b) for b in B] for a in A]


def test_empty_stream_round_trip():
    data = pack_local([], "4K")
    assert len(data) == LOCAL_HEADER.size
    assert unpack_local(data) == ("4K", [])


def test_payload_size_arithmetic(rng):
    codes = random_codes(rng, 300, 103)
    data = pack_local(codes, "4K")
    symbol_payload = len(data) - LOCAL_HEADER.size - 300 * 6
    assert symbol_payload == 300 * 26 == 7800


def test_known_bit_pattern():
    data = pack_local([code([1, -1, 0, 1, -1])], "512B")
    # 01 10 00 01 | 10 00 00 00
    assert data[-2:] == bytes([0b01100001, 0b10000000])


def test_drop_tail_when_over_budget(rng):
    codes = random_codes(rng, 50, 103)
    data = pack_local(codes, "1K", max_bytes=1000)
    assert len(data) <= 1000
    _, back = unpack_local(data)
    assert back == codes[: max_codes(103, 1000)]
    assert len(back) == (1000 - 4) // code_bytes(103)


def test_reserved_pattern_is_decode_error(rng):
    data = bytearray(pack_local(random_codes(rng, 5, 16), "512B"))
    data[-1] = 0xFF
    with pytest.raises(DecodeError):
        unpack_local(bytes(data))


@pytest.mark.parametrize(
    "mutate",
    [lambda d: d[:2], lambda d: d[:-1], lambda d: d + b"\0", lambda d: bytes([99]) + d[1:]],
)
def test_malformed_streams(mutate, rng):
    with pytest.raises(DecodeError):
        unpack_local(mutate(pack_local(random_codes(rng, 3, 20), "512B")))


def test_nonzero_padding_rejected():
    data = bytearray(pack_local([code([1, 1, 1, 1, 1])], "512B"))
    data[-1] |= 0b00000001
    with pytest.raises(DecodeError):
        unpack_local(bytes(data))


def test_mixed_lengths_rejected():
    with pytest.raises(ModeMismatch):
        pack_local([code([1, 0]), code([1, 0, 1])], "512B")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 40), st.integers(1, 128), st.sampled_from(MODES), st.integers(0, 2**32 - 1))
def test_round_trip_property(n, m, mode, seed):
    codes = random_codes(np.random.default_rng(seed), n, m)
    data = pack_local(codes, mode, m=m)
    assert unpack_local(data) == (mode, codes)
