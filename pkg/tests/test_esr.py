import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipolarsim.analysis import fit_two_lorentzians
from dipolarsim.esr import (
    NUCLEAR_CONFIGS,
    ChargeModel,
    Charges,
    GroundStateParams,
    config_profiles,
    default_grid,
    electric_field,
    ground_state_hamiltonian,
    sample_charges,
    simulate_spectrum,
    splitting_vs_density,
    transition_lines,
    transverse_field,
)

P = GroundStateParams()


def test_charge_density():
    assert ChargeModel(123.0).charge_density_nm3 == pytest.approx(0.02507, abs=1e-5)


def test_model_validation():
    with pytest.raises(ValueError):
        ChargeModel(0.0)
    with pytest.raises(ValueError):
        ChargeModel(100.0, n_nearest=0)
    with pytest.raises(ValueError):
        ChargeModel(100.0, n_sampled=5, n_nearest=10)
    with pytest.raises(ValueError):
        GroundStateParams(100.0, 47.0)


def test_sample_charges_properties():
    m = ChargeModel(123.0, n_sampled=201)
    a, b = sample_charges(m, 3), sample_charges(m, 3)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert abs(a.signs.sum()) <= 1
    assert np.all(np.linalg.norm(a.positions, axis=1) >= m.exclusion_radius_nm)
    assert np.all(np.abs(a.positions) <= m.box_side_nm / 2)


def test_paired_charges_sit_at_pairing_distance():
    m = ChargeModel(123.0, n_sampled=20, pairing_distance_nm=2.0)
    c = sample_charges(m, 0)
    acc, don = c.positions[:10], c.positions[10:]
    np.testing.assert_allclose(np.linalg.norm(don - acc, axis=1), 2.0, rtol=1e-12)


def test_point_charge_field_magnitude():
    m = ChargeModel(100.0, n_nearest=1, n_sampled=1)
    ex, ey = transverse_field(Charges(np.array([[5.0, 0.0, 0.0]]), np.array([1.0])), m)
    assert abs(ex) == pytest.approx(5.76e5, rel=2e-3)
    assert ey == 0.0
    # the field of a positive charge points away from it
    assert ex < 0


def test_permittivity_scales_field():
    c = Charges(np.array([[0.0, 3.0, 0.0]]), np.array([-1.0]))
    e1 = electric_field(c, ChargeModel(100.0, n_nearest=1, n_sampled=1))
    e4 = electric_field(c, ChargeModel(100.0, n_nearest=1, n_sampled=1, relative_permittivity=4.0))
    np.testing.assert_allclose(e1, 4 * e4)


def test_mirror_pair_cancels():
    m = ChargeModel(100.0, n_nearest=2, n_sampled=2)
    ex, _ = transverse_field(Charges(np.array([[3.0, 0, 0], [-3.0, 0, 0]]), np.array([1.0, 1.0])), m)
    assert ex == pytest.approx(0.0, abs=1e-9)


def test_truncation_is_explicit():
    c = Charges(np.array([[2.0, 0, 0], [0, 6.0, 0]]), np.array([1.0, 1.0]))
    one = electric_field(c, ChargeModel(100.0, n_nearest=1, n_sampled=1))
    two = electric_field(c, ChargeModel(100.0, n_nearest=2, n_sampled=2))
    assert one[1] == 0.0 and two[1] != 0.0


def test_field_errors():
    m = ChargeModel(100.0, n_nearest=2, n_sampled=2)
    with pytest.raises(ValueError):
        electric_field(Charges(np.array([[3.0, 0, 0]]), np.array([1.0])), m)
    with pytest.raises(ValueError):
        electric_field(Charges(np.array([[0.5, 0, 0], [3.0, 0, 0]]), np.array([1.0, 1.0])), m)


def test_hamiltonian_zero_strain():
    w = np.linalg.eigvalsh(ground_state_hamiltonian(P, 0.0, 0.0, (0, 0, 0)))
    np.testing.assert_allclose(w, [0.0, 3480.0, 3480.0], atol=1e-10)


def test_splitting_is_twice_pi_perp():
    lines = transition_lines(P, 10.0, 0.0, (1, -1, 0))
    assert lines[1] - lines[0] == pytest.approx(20.0, abs=1e-10)


def test_hyperfine_lines():
    np.testing.assert_allclose(transition_lines(P, 0.0, 0.0, (1, 1, 1)), [3480 - 141, 3480 + 141], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 200.0), st.floats(0.0, 2 * np.pi))
def test_splitting_rotation_invariant(p, phi):
    lines = transition_lines(P, p * np.cos(phi), p * np.sin(phi), (0, 0, 0))
    assert lines[1] - lines[0] == pytest.approx(2 * p, abs=1e-9)


def test_nuclear_configs_equal_weight():
    assert NUCLEAR_CONFIGS.shape == (27, 3)
    assert len({tuple(r) for r in NUCLEAR_CONFIGS}) == 27
    assert NUCLEAR_CONFIGS.sum() == 0


def _small(rho=123.0, dp=40.0, n=40):
    return ChargeModel(rho, d_perp_hz_per_v_cm=dp, n_charge_configs=n)


def test_zero_dperp_spectrum_symmetric():
    grid = default_grid()
    s = simulate_spectrum(_small(dp=0.0), P, grid, seed=0)
    np.testing.assert_allclose(s.intensity, s.intensity[::-1], atol=1e-12)
    assert s.intensity.min() == pytest.approx(0.9)


def test_spectrum_linear_in_configs():
    grid = default_grid(P, 300.0, 2.0)
    m = _small(n=30)
    full = config_profiles(m, P, grid, 5).mean(axis=0)
    a = config_profiles(m, P, grid, 5, indices=range(0, 10)).sum(axis=0)
    b = config_profiles(m, P, grid, 5, indices=range(10, 30)).sum(axis=0)
    np.testing.assert_allclose(full, (a + b) / 30, atol=1e-10)


def test_parallel_profiles_identical():
    grid = default_grid(P, 300.0, 2.0)
    m = _small(n=12)
    np.testing.assert_array_equal(config_profiles(m, P, grid, 1, workers=1), config_profiles(m, P, grid, 1, workers=2))


def test_spectrum_grid_validation():
    with pytest.raises(ValueError):
        simulate_spectrum(_small(n=2), P, np.array([3480.0, 3470.0]))


def test_denser_charges_split_more():
    grid = default_grid()
    d = [fit_two_lorentzians(simulate_spectrum(_small(rho, n=100), P, grid, seed=2)).splitting_mhz
         for rho in (123.0, 236.0)]
    assert d[1] > d[0]


def test_splitting_table_shape_and_zero_column():
    t = splitting_vs_density([123.0, 236.0], [0.0, 40.0], _small(n=40), P, seed=0)
    assert t.delta_mhz.shape == (2, 2)
    assert t.delta_mhz[0, 0] == pytest.approx(t.delta_mhz[1, 0], rel=1e-9)
    assert all(t.is_monotone())
    with pytest.raises(ValueError):
        splitting_vs_density([], [0.0], _small())
