import itertools
import math
from fractions import Fraction

import pytest
from pydantic import ValidationError

import cri
from cri import (
    CriMethod,
    ProtocolConfig,
    conditional_throughput,
    cri_table,
    exact_cri_table,
    expected_cri,
    expected_cri_closed_form,
    expected_cri_exact,
    expected_cri_no_sic,
    expected_cri_recursive,
    expected_cri_series,
)
from errors import InputValidationError, PrecisionLossError

TABLE_KS = (1, 2, 4, 8, 16, 32, 64)


def brute_force_cri(n_max: int) -> list[Fraction]:
    """E[l_n] for K = 1 by enumerating every group choice of the n users."""
    values = [Fraction(1), Fraction(1)]
    for n in range(2, n_max + 1):
        loop = Fraction(0)
        rest = Fraction(0)
        for choice in itertools.product((0, 1), repeat=n):
            i = sum(choice)
            weight = Fraction(1, 2**n)
            if i in (0, n):
                # one empty group: an extra slot for it plus the same n again
                loop += weight
                rest += weight * values[0]
            else:
                rest += weight * (values[i] + values[n - i])
        values.append(rest / (1 - loop))
    return values


# ============== Base cases and hand-unrolled values ==============

@pytest.mark.parametrize("K", [1, 3, 8])
def test_base_case_is_one_slot_for_every_method(K):
    for n in range(K + 1):
        assert expected_cri_recursive(n, K, 0.3).value == 1.0
        assert expected_cri_closed_form(n, K).value == 1.0
        assert expected_cri_exact(n, K) == 1
        assert expected_cri_no_sic(n, K).value == 1.0
        assert expected_cri(n, K).value == 1.0


def test_hand_unrolled_recursion():
    assert expected_cri_recursive(2, 1, 0.5).value == pytest.approx(3.0, rel=1e-15)
    assert expected_cri_recursive(3, 2, 0.5).value == pytest.approx(7.0 / 3.0, rel=1e-15)


def test_exact_small_values():
    assert expected_cri_exact(2, 1) == 3
    assert expected_cri_exact(3, 1) == Fraction(13, 3)
    assert expected_cri_exact(3, 2) == Fraction(7, 3)


def test_closed_form_and_series_small_values():
    assert expected_cri_closed_form(2, 1).value == 3.0
    assert expected_cri_series(2, 1).value == pytest.approx(3.0, rel=1e-12)
    assert expected_cri_series(2, 1).method is CriMethod.SERIES


def test_brute_force_oracle_matches_all_methods():
    oracle = brute_force_cri(6)
    assert oracle[2] == 3 and oracle[3] == Fraction(13, 3)
    for n in range(2, 7):
        assert expected_cri_exact(n, 1) == oracle[n]
        target = float(oracle[n])
        assert expected_cri_recursive(n, 1).value == pytest.approx(target, rel=1e-12)
        assert expected_cri_series(n, 1).value == pytest.approx(target, rel=1e-12)
        assert expected_cri_closed_form(n, 1).value == pytest.approx(target, rel=1e-12)


# ============== Cross-method agreement ==============

@pytest.mark.parametrize("K", [1, 2, 4, 8])
def test_three_methods_agree_up_to_200(K):
    recursive = cri_table(200, K)
    exact = exact_cri_table(200, K)
    for n in range(K + 1, 201):
        series = expected_cri_series(n, K).value
        assert recursive[n] == pytest.approx(exact[n], rel=1e-9)
        assert series == pytest.approx(exact[n], rel=1e-9)


def test_closed_form_agrees_with_recursion_at_100():
    closed = expected_cri_closed_form(100, 1).value
    assert closed == pytest.approx(expected_cri_recursive(100, 1).value, rel=1e-9)


def test_float_closed_form_for_biased_split():
    closed = expected_cri_closed_form(20, 2, 0.3)
    assert closed.method is CriMethod.CLOSED_FORM
    assert closed.value == pytest.approx(expected_cri_recursive(20, 2, 0.3).value, rel=1e-7)


def test_float_closed_form_reports_precision_loss():
    with pytest.raises(PrecisionLossError):
        expected_cri_closed_form(200, 1, 0.3)


def test_error_bounds_are_small():
    value = expected_cri_recursive(2000, 64)
    assert 0.0 <= value.abs_error_bound <= 1e-8 * value.value
    series = expected_cri_series(1000, 8)
    assert 0.0 <= series.abs_error_bound <= 1e-9 * series.value


# ============== Reference magnitudes ==============

def test_series_large_n_single_packet():
    value = expected_cri_series(1000, 1).value
    assert value / 1000 == pytest.approx(1.4427, abs=1e-4)
    assert conditional_throughput(1000, 1, value) == pytest.approx(math.log(2), abs=1e-3)


def test_series_large_n_oscillation_band():
    value = expected_cri_series(1000, 32).value
    mean = 1000 / (32 * math.log(2))
    assert 1 - 0.0607 <= value / mean <= 1 + 0.0607


def test_conditional_throughput():
    assert conditional_throughput(0, 4, 1.0) == 0.0
    assert conditional_throughput(4, 4, 1.0) == 1.0
    assert 0.6505 <= conditional_throughput(1000, 1, expected_cri(1000, 1).value) <= 0.7420
    with pytest.raises(InputValidationError):
        conditional_throughput(5, 1, 0.5)


# ============== Without SIC ==============

def test_no_sic_hand_recursion():
    assert expected_cri_no_sic(2, 1).value == pytest.approx(5.0, rel=1e-15)
    assert expected_cri_no_sic(2, 1, method="series").value == pytest.approx(5.0, rel=1e-12)


@pytest.mark.parametrize("K", [1, 4])
def test_no_sic_methods_agree(K):
    table = cri_table(200, K, sic=False)
    for n in range(K + 1, 201, 7):
        series = expected_cri_no_sic(n, K, method="series")
        assert series.method is CriMethod.NO_SIC_SERIES
        assert table[n] == pytest.approx(series.value, rel=1e-8)


def test_no_sic_throughput_oscillates_around_half_ln2():
    table = cri_table(1000, 1, sic=False)
    for n in range(500, 1001):
        assert 0.34 <= conditional_throughput(n, 1, table[n]) <= 0.355
    assert conditional_throughput(1000, 1, table[1000]) == pytest.approx(math.log(2) / 2, abs=1e-3)


def test_no_sic_series_rejects_biased_split():
    with pytest.raises(InputValidationError):
        expected_cri_no_sic(10, 1, 0.3, method="series")


# ============== Shared table ==============

@pytest.mark.parametrize("sic", [True, False])
def test_pointwise_calls_share_one_growing_table(monkeypatch, sic):
    monkeypatch.setattr(cri, "_TABLES", {})
    single = expected_cri_recursive if sic else expected_cri_no_sic
    values = [single(n, 2, 0.4).value for n in range(400)]
    assert list(cri._TABLES) == [(2, 0.4, sic)]
    assert 400 <= len(cri._TABLES[(2, 0.4, sic)]) < 800
    assert values == list(cri_table(399, 2, 0.4, sic=sic))
    monkeypatch.setattr(cri, "_TABLES", {})
    assert values == list(cri_table(399, 2, 0.4, sic=sic))


def test_table_slices_do_not_expose_the_memo():
    short = cri_table(10, 3)
    assert len(short) == 11
    assert cri_table(500, 3)[:11] == short
    with pytest.raises(ValueError):
        cri._recursive_table(10, 3, 0.5, True)[5] = 0.0


# ============== Properties ==============

@pytest.mark.parametrize("n", [5, 10, 20])
@pytest.mark.parametrize("K", [1, 2, 4])
def test_fair_split_is_optimal(n, K):
    fair = expected_cri_recursive(n, K, 0.5).value
    for tenth in range(1, 10):
        assert expected_cri_recursive(n, K, tenth / 10).value >= fair - 1e-10


@pytest.mark.parametrize("p", [0.3, 0.5])
@pytest.mark.parametrize("K", [1, 2, 4])
def test_sic_dominates_no_sic(p, K):
    with_sic = cri_table(100, K, p)
    without = cri_table(100, K, p, sic=False)
    for n in range(101):
        assert with_sic[n] <= without[n]
        if n > K:
            assert with_sic[n] < without[n]


@pytest.mark.parametrize("K", range(1, 65))
def test_monotone_in_n(K):
    table = cri_table(1000, K)
    for n in range(1000):
        assert table[n + 1] >= table[n] - 1e-12
        assert 0.0 < conditional_throughput(n + 1, K, table[n + 1]) <= 1.0


# ============== Contracts ==============

@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
def test_degenerate_split_rejected(p):
    with pytest.raises(InputValidationError):
        expected_cri_recursive(5, 1, p)


def test_series_needs_n_above_K():
    with pytest.raises(InputValidationError):
        expected_cri_series(2, 2)


def test_dispatcher_routes():
    assert expected_cri(50, 2).method is CriMethod.SERIES
    assert expected_cri(50, 2, p=0.4).method is CriMethod.RECURSIVE
    assert expected_cri(50, 2, method="closed").method is CriMethod.CLOSED_FORM
    assert expected_cri(50, 2, sic=False).method is CriMethod.NO_SIC_SERIES
    with pytest.raises(InputValidationError):
        expected_cri(50, 2, sic=False, method="closed")
    with pytest.raises(InputValidationError):
        expected_cri(50, 2, method="fastest")


def test_protocol_config_defaults_to_fair_split():
    config = ProtocolConfig(K=2, d=3)
    assert config.split_probs == pytest.approx([1 / 3] * 3)
    assert config.fair and config.sic
    assert ProtocolConfig(K=1).p == 0.5


@pytest.mark.parametrize(
    "fields",
    [
        {"K": 0},
        {"K": 1, "d": 1},
        {"K": 1, "split_probs": [0.7, 0.2]},
        {"K": 1, "split_probs": [1.0, 0.0]},
        {"K": 1, "d": 3, "split_probs": [0.5, 0.5]},
    ],
)
def test_protocol_config_rejects_invalid(fields):
    with pytest.raises(ValidationError):
        ProtocolConfig(**fields)
