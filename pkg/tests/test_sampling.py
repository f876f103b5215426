import math

import numpy as np
import pytest

from qswitch_age import ValidationError
from qswitch_age import _kernels
from qswitch_age.sampling import (
    MarginalVector,
    RngStream,
    sample_categorical,
    sample_without_replacement,
    split_marginals,
)
from conftest import random_marginal_vector


# ---------------------------------------------------------------------------
# the stream itself
# ---------------------------------------------------------------------------

def test_stream_is_deterministic():
    a = [RngStream(123, 4).next_u64() for _ in range(10)]
    b = [RngStream(123, 4).next_u64() for _ in range(10)]
    assert a == b


def test_streams_differ_by_id_and_seed():
    base = [RngStream(123, 0).next_u64() for _ in range(8)]
    assert [RngStream(123, 1).next_u64() for _ in range(8)] != base
    assert [RngStream(124, 0).next_u64() for _ in range(8)] != base


def test_python_and_kernel_streams_match():
    rng = RngStream(987654321, 3)
    expected = [rng.next_u64() for _ in range(1000)]
    state = np.array(RngStream(987654321, 3).state_words(), dtype=np.uint64)
    out = np.empty(1000, dtype=np.uint64)
    _kernels.fill_u64(state, out)
    assert [int(x) for x in out] == expected

    rng = RngStream(11, 0)
    expected_d = [rng.random() for _ in range(1000)]
    state = np.array(RngStream(11, 0).state_words(), dtype=np.uint64)
    out_d = np.empty(1000, dtype=np.float64)
    _kernels.fill_doubles(state, out_d)
    assert list(out_d) == expected_d


def test_doubles_live_in_unit_interval():
    rng = RngStream(5, 0)
    draws = [rng.random() for _ in range(10_000)]
    assert all(0.0 <= d < 1.0 for d in draws)
    assert min(draws) < 0.01 and max(draws) > 0.99


def test_bounded_int_range_and_spread():
    rng = RngStream(7, 0)
    draws = [rng.bounded_int(13) for _ in range(50_000)]
    assert set(draws) == set(range(13))
    counts = np.bincount(draws)
    # each bucket close to uniform within 6 sigma
    sigma = math.sqrt(50_000 * (1 / 13) * (12 / 13))
    assert np.all(np.abs(counts - 50_000 / 13) < 6 * sigma)
    with pytest.raises(ValidationError):
        rng.bounded_int(0)


def test_permutation_is_a_permutation():
    rng = RngStream(9, 0)
    for n in (1, 2, 5, 17):
        assert sorted(rng.permutation(n)) == list(range(n))
    assert RngStream(9, 0).permutation(17) == RngStream(9, 0).permutation(17)


# ---------------------------------------------------------------------------
# categorical sampling
# ---------------------------------------------------------------------------

def test_categorical_degenerate_cases():
    rng = RngStream(1, 0)
    assert all(sample_categorical([1.0], rng) == 0 for _ in range(50))
    assert all(sample_categorical([0.0, 1.0], rng) == 1 for _ in range(50))


def test_categorical_validates_weights():
    rng = RngStream(1, 0)
    with pytest.raises(ValidationError):
        sample_categorical([-0.1, 1.1], rng)
    with pytest.raises(ValidationError):
        sample_categorical([0.0, 0.0], rng)
    with pytest.raises(ValidationError):
        sample_categorical([0.3, 0.3], rng)


def test_categorical_fair_coin_frequency():
    # 1e6 draws against a generous binomial band (10 sigma)
    rng = RngStream(2024, 0)
    hits = sum(sample_categorical([0.5, 0.5], rng) == 0 for _ in range(1_000_000))
    assert 0.495 <= hits / 1_000_000 <= 0.505


# ---------------------------------------------------------------------------
# without-replacement sampling with prescribed marginals
# ---------------------------------------------------------------------------

def test_capped_marginals_always_included():
    m = MarginalVector(items=((7, 1.0), (9, 1.0)), k=2)
    rng = RngStream(3, 0)
    for _ in range(100):
        assert sample_without_replacement(m, rng) == (7, 9)


def test_zero_marginals_never_included():
    m = MarginalVector(items=((1, 0.0), (2, 1.0), (3, 1.0), (4, 0.0)), k=2)
    rng = RngStream(3, 1)
    for _ in range(100):
        assert sample_without_replacement(m, rng) == (2, 3)


def test_output_size_exact_on_every_draw():
    gen = np.random.default_rng(42)
    rng = RngStream(44, 0)
    for _ in range(50):
        n = int(gen.integers(2, 12))
        k = int(gen.integers(1, n))
        m = random_marginal_vector(gen, n, k)
        for _ in range(200):
            got = sample_without_replacement(m, rng)
            assert len(got) == k
            assert len(set(got)) == k


def test_marginal_sum_validation():
    with pytest.raises(ValidationError):
        MarginalVector(items=((0, 0.5), (1, 0.6)), k=1)
    with pytest.raises(ValidationError):
        MarginalVector(items=((0, 1.5), (1, 0.5)), k=2)
    with pytest.raises(ValidationError):
        MarginalVector(items=((0, 0.5), (0, 0.5)), k=1)


def test_split_keeps_remainder_strictly_below_one():
    m = MarginalVector(items=((0, 1.0), (1, 1.0 - 5e-10), (2, 0.3), (3, 0.7 + 5e-10)), k=3)
    forced, rest_ids, rest_probs, k_rest = split_marginals(m)
    assert forced == [0, 1]
    assert rest_ids == [2, 3]
    assert k_rest == 1
    assert all(p < 1.0 for p in rest_probs)
    assert sum(rest_probs) == pytest.approx(1.0, abs=1e-9)


def test_sampler_python_kernel_equivalence():
    gen = np.random.default_rng(7)
    m = random_marginal_vector(gen, 9, 4)
    forced, rest_ids, rest_probs, k_rest = split_marginals(m)

    rng = RngStream(555, 2)
    python_draws = [sample_without_replacement(m, rng) for _ in range(2000)]

    state = np.array(RngStream(555, 2).state_words(), dtype=np.uint64)
    rids = np.array(rest_ids, dtype=np.int64)
    rprobs = np.array(rest_probs, dtype=np.float64)
    perm = np.empty(len(rest_ids), dtype=np.int64)
    out = np.empty(len(rest_ids), dtype=np.int64)
    for draw in python_draws:
        n_sel = _kernels._select_systematic(state, rids, rprobs, k_rest, perm, out)
        kernel_set = tuple(sorted(forced + [int(x) for x in out[:n_sel]]))
        assert kernel_set == draw


def test_empirical_marginals_converge():
    # a capped item plus a 0.3/0.7 pair at k=2
    m = MarginalVector(items=((0, 1.0), (1, 0.3), (2, 0.7)), k=2)
    forced, rest_ids, rest_probs, k_rest = split_marginals(m)
    state = np.array(RngStream(99, 0).state_words(), dtype=np.uint64)
    counts = np.zeros(3, dtype=np.int64)
    n_draws = 1_000_000
    _kernels.sample_counts(
        state, np.array(rest_ids, dtype=np.int64),
        np.array(rest_probs, dtype=np.float64), k_rest, n_draws, counts,
    )
    for rid in forced:
        counts[rid] = n_draws
    freq = counts / n_draws
    assert freq[0] == 1.0
    sigma = math.sqrt(0.3 * 0.7 / n_draws)
    assert abs(freq[1] - 0.3) < 4 * sigma
    assert abs(freq[2] - 0.7) < 4 * sigma


def test_even_pair_frequency_band():
    # two items, one slot: inclusion frequency within a 10-sigma band
    m = MarginalVector(items=((0, 0.5), (1, 0.5)), k=1)
    _, rest_ids, rest_probs, k_rest = split_marginals(m)
    state = np.array(RngStream(31337, 0).state_words(), dtype=np.uint64)
    counts = np.zeros(2, dtype=np.int64)
    _kernels.sample_counts(
        state, np.array(rest_ids, dtype=np.int64),
        np.array(rest_probs, dtype=np.float64), k_rest, 1_000_000, counts,
    )
    assert counts.sum() == 1_000_000  # size exactly one per draw
    assert 0.495 <= counts[0] / 1_000_000 <= 0.505


def test_byte_identical_reselection():
    gen = np.random.default_rng(3)
    m = random_marginal_vector(gen, 8, 3)
    a = [sample_without_replacement(m, RngStream(1, 5)) for _ in range(1)]
    b = [sample_without_replacement(m, RngStream(1, 5)) for _ in range(1)]
    rng1, rng2 = RngStream(17, 2), RngStream(17, 2)
    seq1 = [sample_without_replacement(m, rng1) for _ in range(500)]
    seq2 = [sample_without_replacement(m, rng2) for _ in range(500)]
    assert a == b and seq1 == seq2
