import logging
import math

import numpy as np
import pytest

import arrivals
from arrivals import (
    Access,
    expected_cri_poisson,
    gated_bounds,
    sensitivity_curve,
    windowed_bounds,
    windowed_bounds_no_sic,
    windowed_f,
    windowed_model,
)
from errors import HorizonError, InputValidationError

TABLE_KS = (1, 2, 4, 8, 16, 32, 64)

# K -> (lambda_S / K, lambda_U / K) under gated access
GATED_REFERENCE = {
    1: (0.6931, 0.6931),
    32: (0.6536, 0.7378),
    64: (0.6216, 0.7833),
}

# K -> lambda_S / K under windowed access, with and without SIC
WINDOWED_REFERENCE = {1: 0.6931, 2: 0.6932, 4: 0.6932, 8: 0.6947, 16: 0.7056, 32: 0.737, 64: 0.7816}
WINDOWED_NO_SIC_REFERENCE = {1: 0.4289, 2: 0.4707, 4: 0.5175, 8: 0.5678, 16: 0.6239, 32: 0.6862, 64: 0.7475}


# ============== Gated access ==============

@pytest.mark.parametrize("K", sorted(GATED_REFERENCE))
def test_gated_reference(K):
    report = gated_bounds(K)
    low, high = GATED_REFERENCE[K]
    assert report.access is Access.GATED
    assert report.lambda_S_norm == pytest.approx(low, abs=5e-4)
    assert report.lambda_U_norm == pytest.approx(high, abs=5e-4)
    assert report.lambda_S_norm == pytest.approx(report.lambda_S / K, rel=1e-12)
    assert 0 < report.lambda_S <= report.lambda_U


def test_gated_rejects_runaway_amplitude(monkeypatch):
    monkeypatch.setattr(arrivals, "oscillation_amplitude", lambda K: 1.0)
    with pytest.raises(HorizonError):
        gated_bounds(3)


# ============== Window bound function ==============

def test_windowed_f_at_zero_load():
    model = windowed_model(1)
    assert windowed_f(model.coeff_upper, model.m, 0.0, model.L_table) == 1.0


def test_windowed_f_without_slope_is_truncated_mixture():
    model = windowed_model(1)
    assert windowed_f(0.0, model.m, 5.0, model.L_table) == pytest.approx(expected_cri_poisson(5.0, 1), rel=1e-12)


def test_windowed_f_matches_mixture_when_tail_is_empty():
    model = windowed_model(1)
    exact = expected_cri_poisson(10.0, 1)
    assert abs(exact - windowed_f(model.coeff_upper, model.m, 10.0, model.L_table)) < 1e-9
    assert abs(exact - windowed_f(model.coeff_lower, model.m, 10.0, model.L_table)) < 1e-9


def test_windowed_f_sandwiches_mixture_at_large_load():
    model = windowed_model(1)
    z = 4.0 * model.m
    exact = expected_cri_poisson(z, 1)
    assert windowed_f(model.coeff_lower, model.m, z, model.L_table) <= exact * (1 + 1e-9)
    assert exact <= windowed_f(model.coeff_upper, model.m, z, model.L_table) * (1 + 1e-9)


@pytest.mark.parametrize("K", [1, 8, 32])
def test_windowed_f_positive(K):
    model = windowed_model(K)
    for z in np.linspace(0.0, 8 * model.m, 97):
        assert windowed_f(model.coeff_lower, model.m, float(z), model.L_table) > 0


def test_windowed_f_contract():
    model = windowed_model(1)
    with pytest.raises(InputValidationError):
        windowed_f(1.0, model.m, -1.0, model.L_table)
    with pytest.raises(InputValidationError):
        windowed_f(1.0, model.m + 5, 1.0, model.L_table)


def test_poisson_mixture_edges(caplog):
    assert expected_cri_poisson(0.0, 4) == 1.0
    with caplog.at_level(logging.WARNING, logger="arrivals"):
        expected_cri_poisson(30.0, 1, i_max=20)
    assert any("Poisson tail" in record.getMessage() for record in caplog.records)


def test_windowed_model_invariants():
    model = windowed_model(4)
    assert all(value == 1.0 for value in model.L_table[:5])
    assert model.coeff_lower <= model.coeff_upper
    assert len(model.L_table) == model.m + 1


# ============== Windowed access ==============

@pytest.mark.parametrize("K", sorted(WINDOWED_REFERENCE))
def test_windowed_reference(K):
    report = windowed_bounds(K)
    assert report.access is Access.WINDOWED
    assert report.lambda_S_norm == pytest.approx(WINDOWED_REFERENCE[K], abs=2e-3)
    assert abs(report.lambda_U_norm - report.lambda_S_norm) <= 5e-4
    assert 0 < report.argmax_z < 8 * report.m_used


@pytest.mark.parametrize("K", sorted(WINDOWED_NO_SIC_REFERENCE))
def test_windowed_no_sic_reference(K):
    report = windowed_bounds_no_sic(K)
    assert not report.sic
    assert report.lambda_S_norm == pytest.approx(WINDOWED_NO_SIC_REFERENCE[K], abs=2e-3)


@pytest.mark.parametrize("K", [1, 32, 64])
def test_windowed_meets_gated_crest(K):
    assert windowed_bounds(K).lambda_S_norm == pytest.approx(gated_bounds(K).lambda_U_norm, abs=2e-3)


@pytest.mark.slow
def test_mpr_payoff_and_shrinking_sic_gain():
    with_sic = [windowed_bounds(K).lambda_S_norm for K in TABLE_KS]
    without = [windowed_bounds_no_sic(K).lambda_S_norm for K in TABLE_KS]
    assert all(b >= a for a, b in zip(with_sic, with_sic[1:]))
    gains = [s - w for s, w in zip(with_sic, without)]
    assert all(b < a for a, b in zip(gains, gains[1:]))


def test_supremum_on_horizon_is_an_error():
    model = windowed_model(32)
    with pytest.raises(HorizonError):
        arrivals._sup_load(model.coeff_upper, model, 5.0, edge_ok=False)


def test_default_window_edge_is_quiet(caplog):
    with caplog.at_level(logging.INFO, logger="arrivals"):
        windowed_bounds(1)
    assert not [r for r in caplog.records if r.name == "arrivals"]


def test_explicit_window_edge_warns(caplog):
    m = windowed_model(1).m
    with caplog.at_level(logging.WARNING, logger="arrivals"):
        windowed_bounds(1, z_max_upper=float(m))
    assert any("window edge" in record.getMessage() for record in caplog.records)


@pytest.mark.parametrize("lam_u,level", [(2.0 - 1e-12, logging.DEBUG), (1.9, logging.INFO)])
def test_clamp_log_level_follows_gap(monkeypatch, caplog, lam_u, level):
    results = iter([(2.0, 10.0), (lam_u, 50.0)])
    monkeypatch.setattr(arrivals, "_sup_load", lambda *args, **kwargs: next(results))
    with caplog.at_level(logging.DEBUG, logger="arrivals"):
        report = windowed_bounds(2)
    assert report.lambda_U == report.lambda_S == 2.0
    (record,) = [r for r in caplog.records if "raising windowed lambda_U" in r.getMessage()]
    assert record.levelno == level


# ============== Sensitivity ==============

def test_sensitivity_vanishes_at_small_load():
    points = sensitivity_curve(1, None, [1e-4, 1e-3])
    assert points[0].F < 1e-3 and points[1].F < 1e-2


@pytest.mark.parametrize("K", [1, 32])
def test_sensitivity_peak_matches_windowed_bound(K):
    m = windowed_model(K).m
    points = sensitivity_curve(K, None, np.arange(0.25, m + 0.125, 0.25))
    assert max(pt.F for pt in points) == pytest.approx(windowed_bounds(K).lambda_S_norm, abs=5e-4)
    assert all(pt.F_no_sic < pt.F for pt in points if pt.z > 2 * K)


def test_sensitivity_period_doubling_K1():
    points = sensitivity_curve(1, None, [12.0, 16.0, 20.0, 24.0, 32.0, 40.0])
    F = {pt.z: pt.F for pt in points}
    for z in (12.0, 16.0, 20.0):
        assert abs(F[z] - F[2 * z]) < 2e-5
        assert F[z] == pytest.approx(math.log(2), abs=1e-3)


def test_sensitivity_grid_contract():
    with pytest.raises(InputValidationError):
        sensitivity_curve(1, None, [1.0, 1.0, 2.0])
    with pytest.raises(InputValidationError):
        sensitivity_curve(1, None, [0.0, 1.0])
