import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipolarsim.analysis import (
    FitError,
    PowerLawFit,
    charged_ratio,
    density_residual,
    dose_to_ppm,
    extract_density,
    fit_exponential,
    fit_power_law,
    fit_two_lorentzians,
    two_lorentzian_model,
)
from dipolarsim.ensemble import DecayCurve

T = np.linspace(0.0, 400.0, 41)


def test_noiseless_exponential_exact():
    fit = fit_exponential(T, np.exp(-T / 100.0))
    assert fit.t2_ns == pytest.approx(100.0, rel=1e-6)
    assert fit.amplitude == pytest.approx(1.0, rel=1e-6)
    assert fit.residual_rms >= 0 and fit.covariance.shape == (2, 2)


@settings(max_examples=30, deadline=None)
@given(st.floats(5.0, 2000.0), st.floats(0.1, 3.0))
def test_exponential_round_trip(t2, amp):
    t = np.linspace(0.0, 3 * t2, 25)
    fit = fit_exponential(t, amp * np.exp(-t / t2))
    assert fit.t2_ns == pytest.approx(t2, rel=1e-6)
    assert fit.amplitude == pytest.approx(amp, rel=1e-6)


def test_noisy_exponential_within_five_percent():
    rng = np.random.default_rng(0)
    t = np.linspace(0.0, 300.0, 61)
    fits = [fit_exponential(t, np.exp(-t / 70.0) + rng.normal(0, 0.02, t.size)).t2_ns for _ in range(100)]
    assert np.mean(fits) == pytest.approx(70.0, rel=0.05)
    assert np.mean(np.abs(np.array(fits) / 70.0 - 1) < 0.05) >= 0.9


def test_fit_accepts_decay_curve():
    c = DecayCurve(T, np.exp(-T / 50.0), np.full(T.size, 0.01), 10)
    assert fit_exponential(c).t2_ns == pytest.approx(50.0, rel=1e-6)
    assert fit_exponential(c, weighted=True).t2_ns == pytest.approx(50.0, rel=1e-6)


def test_floor_model():
    y = 0.7 * np.exp(-T / 60.0) + 0.2
    fit = fit_exponential(T, y, floor=True)
    assert fit.t2_ns == pytest.approx(60.0, rel=1e-6) and fit.offset == pytest.approx(0.2, rel=1e-6)
    assert fit(np.array([0.0]))[0] == pytest.approx(0.9, rel=1e-6)


@pytest.mark.parametrize("t,y", [(T, np.ones_like(T)), (T[:3], np.exp(-T[:3]))])
def test_fit_failures(t, y):
    with pytest.raises(FitError):
        fit_exponential(t, y)


def test_growing_curve_is_not_resolved():
    with pytest.raises(FitError):
        fit_exponential(T, np.exp(T / 100.0))


def test_power_law_exact():
    rho = np.array([50.0, 123.0, 236.0, 500.0])
    fit = fit_power_law(rho, 3e5 / rho)
    assert fit.alpha == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(fit.predict(rho), 3e5 / rho, rtol=1e-10)


def test_power_law_two_points_interpolate():
    fit = fit_power_law([100.0, 400.0], [1000.0, 300.0])
    np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-12)


@pytest.mark.parametrize("rho,t2", [([1.0], [1.0]), ([1.0, -2.0], [1.0, 1.0]), ([1.0, 2.0], [0.0, 1.0])])
def test_power_law_rejects_bad_input(rho, t2):
    with pytest.raises(ValueError):
        fit_power_law(rho, t2)


def _fits():
    return {"xy8": PowerLawFit(np.log(2000.0) + 0.8 * np.log(123.0), 0.8),
            "droid": PowerLawFit(np.log(15000.0) + 1.5 * np.log(123.0), 1.5)}


def test_extract_density_planted():
    fits = _fits()
    meas = {k: float(f.predict(150.0)) for k, f in fits.items()}
    est = extract_density(fits, meas)
    assert est.rho_ppm == pytest.approx(150.0, rel=0.02)
    assert est.band_low_ppm <= est.rho_ppm <= est.band_high_ppm


def test_extract_density_zero_residual_at_123():
    fits = _fits()
    meas = {k: float(f.predict(123.0)) for k, f in fits.items()}
    assert density_residual(123.0, fits, meas) == pytest.approx(0.0, abs=1e-20)
    assert extract_density(fits, meas).rho_ppm == pytest.approx(123.0, rel=1e-6)


def test_band_edges_are_five_percent_above_minimum():
    fits = _fits()
    meas = {"xy8": 1500.0, "droid": 14000.0}
    est = extract_density(fits, meas)
    assert est.min_residual > 0
    for edge in (est.band_low_ppm, est.band_high_ppm):
        assert density_residual(edge, fits, meas) == pytest.approx(1.05 * est.min_residual, rel=1e-8)
    assert est.rho_ppm == pytest.approx(est.residual_curve[np.argmin(est.residual_curve[:, 1]), 0], rel=0.02)


def test_residual_non_negative():
    fits = _fits()
    r = density_residual(np.geomspace(1, 1e5, 300), fits, {"xy8": 900.0, "droid": 4000.0})
    assert np.all(r >= 0)


def test_boundary_flag():
    fits = _fits()
    meas = {k: float(f.predict(5.0)) for k, f in fits.items()}
    assert extract_density(fits, meas, grid=(10.0, 1e4)).boundary


def test_time_unit_invariance_when_consistent():
    # measurements on both lines: the zero-residual argmin does not depend on the time unit
    fits = _fits()
    meas = {k: float(f.predict(200.0)) for k, f in fits.items()}
    us_fits = {k: PowerLawFit(f.prefactor_log - np.log(1e3), f.alpha) for k, f in fits.items()}
    us_meas = {k: v / 1e3 for k, v in meas.items()}
    a = extract_density(fits, meas).rho_ppm
    b = extract_density(us_fits, us_meas).rho_ppm
    assert a == pytest.approx(b, rel=1e-6)


@pytest.mark.parametrize("kw", [dict(grid=(10.0, 50.0)), dict(grid=(0.0, 100.0))])
def test_extract_density_validation(kw):
    fits = _fits()
    with pytest.raises(ValueError):
        extract_density(fits, {"xy8": 100.0, "droid": 100.0}, **kw)
    with pytest.raises(ValueError):
        extract_density(fits, {"xy8": -1.0, "droid": 100.0})


def test_two_lorentzians_synthetic():
    f = np.linspace(3300.0, 3660.0, 721)
    y = two_lorentzian_model(f, 1.0, 0.05, 3460.0, 15.0, 0.05, 3500.0, 15.0)
    fit = fit_two_lorentzians(f, y)
    assert fit.splitting_mhz == pytest.approx(40.0, rel=0.01)
    assert not fit.single_peak


def test_single_lorentzian_flagged():
    f = np.linspace(3300.0, 3660.0, 721)
    y = 1.0 - 0.1 * 20.0**2 / ((f - 3480.0) ** 2 + 20.0**2)
    assert fit_two_lorentzians(f, y).single_peak


def test_lorentzian_input_checks():
    with pytest.raises(FitError):
        fit_two_lorentzians(np.arange(10.0), np.ones(10))
    with pytest.raises(FitError):
        fit_two_lorentzians(np.arange(40.0), np.ones(40))


@pytest.mark.parametrize("dose,ppm", [(0.30, 540.0), (10.0, 18000.0)])
def test_dose_to_ppm(dose, ppm):
    assert dose_to_ppm(dose) == pytest.approx(ppm, rel=0.03)


def test_dose_linearity_and_errors():
    assert dose_to_ppm(2.2) == pytest.approx(2 * dose_to_ppm(1.1), rel=1e-12)
    with pytest.raises(ValueError):
        dose_to_ppm(0.0)


def test_charged_ratio():
    assert charged_ratio(123.0, 540.0) == pytest.approx(0.23, abs=0.005)
    assert charged_ratio(236.0, 18000.0) == pytest.approx(0.013, abs=0.0005)
    assert charged_ratio(5.0, 5.0) == 1.0
    samples = [(123.0, 540.0), (149.0, 2000.0), (236.0, 18000.0)]
    etas = [charged_ratio(a, b) for a, b in samples]
    assert all(x > y for x, y in zip(etas, etas[1:]))
    with pytest.raises(ValueError):
        charged_ratio(0.0, 1.0)
