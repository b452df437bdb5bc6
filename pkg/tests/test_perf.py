from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from fttrain.core import BandwidthConfig, GiB, MB, ModelSpec, ParallelismConfig
from fttrain.tce.perf import (PerfModelInputs, cached_save_latency, direct_save_latency,
                              load_latency, max_save_size, node_restore_latency, save_gain)

import oracles


def inputs(P, dp, n, tp=None, pp=1, bw=None, **model):
    tp = tp if tp is not None else 8 * n // (dp * pp)
    return PerfModelInputs(ModelSpec(P, **model), ParallelismConfig(tp, pp, dp, n),
                           bw or BandwidthConfig())


def test_max_save_size_175b():
    inp = inputs(175e9, 8, 16, pp=2)
    assert max_save_size(inp) == 38_281_250_000
    assert oracles.exact_save_size(175e9, 8, 16) == 38_281_250_000
    assert Fraction(14) * 175_000_000_000 / 64 == 38_281_250_000


@given(st.integers(1, 4).map(lambda e: 10 ** (e + 5)), st.sampled_from([1, 2, 4, 8]))
def test_dp2_reduces_to_2p_over_n(P, n):
    assert max_save_size(inputs(P, 2, n)) == pytest.approx(2 * P / n, rel=1e-15)


@st.composite
def configs(draw):
    n = draw(st.sampled_from([1, 2, 4, 8, 16, 32]))
    dp = draw(st.sampled_from([d for d in (1, 2, 4, 8, 16, 32, 64) if d <= 8 * n and (8 * n) % d == 0]))
    P = draw(st.floats(1e6, 1e12))
    return P, dp, n


@given(configs())
def test_general_form_matches_closed_form(cfg):
    P, dp, n = cfg
    closed = Fraction(dp + 6) * Fraction(P) / (4 * n)
    assert Fraction(max_save_size(inputs(P, dp, n))) == pytest.approx(closed, rel=1e-15)
    assert max_save_size(inputs(P, dp, n)) == float(oracles.exact_save_size(P, dp, n))


@given(configs(), st.floats(1.5, 3.0), st.floats(1.5, 20.0))
def test_general_factors_oracle(cfg, w, o):
    P, dp, n = cfg
    got = max_save_size(inputs(P, dp, n, weight_bytes_per_param=w, optimizer_bytes_per_param=o))
    assert got == float(oracles.exact_save_size(P, dp, n, w, o))


def test_save_gain_examples():
    assert save_gain(inputs(1e9, 2, 2, bw=BandwidthConfig(5e9, 5e9, 1e10))) == 1
    g = save_gain(inputs(1e9, 2, 2))
    assert g == pytest.approx(20 * GiB / (71.1 * MB))
    assert 301 < g < 303
    doubled = save_gain(inputs(1e9, 2, 2, bw=BandwidthConfig(40 * GiB)))
    assert doubled == pytest.approx(2 * g)


def test_load_latency_dp_le_8_branch_exact():
    inp = inputs(175e9, 8, 16, pp=2)
    assert load_latency(inp) == max_save_size(inp) / (20 * GiB)
    assert load_latency(inp) == pytest.approx(1.78, abs=0.005)
    assert load_latency(inp) == float(oracles.exact_load_latency(175e9, 8, 16, 20 * GiB, 25e9))


@given(configs())
def test_load_latency_matches_oracle(cfg):
    P, dp, n = cfg
    inp = inputs(P, dp, n)
    assert load_latency(inp) == pytest.approx(
        float(oracles.exact_load_latency(P, dp, n, inp.bandwidths.b_mem, inp.bandwidths.b_rdma)),
        rel=1e-14)


def test_load_latency_branches_are_not_continuous():
    # left branch at DP=8 vs right branch approached from above
    P, n = 1e9, 4
    b = BandwidthConfig()
    left = float(oracles.exact_load_latency(P, 8, n, b.b_mem, b.b_rdma))
    right_limit = 3 * P / (2 * n * b.b_mem)
    assert load_latency(inputs(P, 8, n)) == left
    assert abs(left - right_limit) > 0.1 * left


@given(configs())
def test_monotonicity(cfg):
    P, dp, n = cfg
    base = max_save_size(inputs(P, dp, n))
    if 2 * dp <= 8 * n and (8 * n) % (2 * dp) == 0 and (2 * dp <= 8 or (2 * dp) % 8 == 0):
        assert max_save_size(inputs(P, 2 * dp, n)) > base
    assert max_save_size(inputs(P, dp, 2 * n)) < base


def test_latency_helpers():
    inp = inputs(175e9, 8, 16, pp=2)
    assert cached_save_latency(inp) < 10
    assert direct_save_latency(inp) / cached_save_latency(inp) == pytest.approx(save_gain(inp))
    assert node_restore_latency(inp) == pytest.approx(8 * 38_281_250_000 / 25e9)
