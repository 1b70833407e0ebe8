import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipolarsim.spin_algebra import (
    collective,
    commutator,
    embed,
    global_rotation,
    is_hermitian,
    kron_all,
    product_state,
    rotation,
    spin_half_ops,
    spin_one_ops,
)

LEVI = {("Sx", "Sy"): "Sz", ("Sy", "Sz"): "Sx", ("Sz", "Sx"): "Sy"}


def test_spin_half_sz_is_diag_half():
    np.testing.assert_array_equal(spin_half_ops()["Sz"], np.diag([0.5, -0.5]))


@pytest.mark.parametrize("ops", [spin_half_ops(), spin_one_ops()], ids=["half", "one"])
def test_su2_commutators(ops):
    for (a, b), c in LEVI.items():
        assert np.max(np.abs(commutator(ops[a], ops[b]) - 1j * ops[c])) < 1e-14


def test_ladder_anticommutator_is_identity():
    s = spin_half_ops()
    np.testing.assert_allclose(s["Splus"] @ s["Sminus"] + s["Sminus"] @ s["Splus"], np.eye(2))


def test_splus_raises_sz():
    s = spin_half_ops()
    np.testing.assert_allclose(s["Splus"] @ np.array([0, 1]), [1, 0])
    np.testing.assert_allclose(s["Sx"] + 1j * s["Sy"], s["Splus"])


def test_spin_one_eigenvalues_and_casimir():
    s = spin_one_ops()
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(s["Sz"])), [-1, 0, 1], atol=1e-15)
    cas = s["Sx"] @ s["Sx"] + s["Sy"] @ s["Sy"] + s["Sz"] @ s["Sz"]
    np.testing.assert_allclose(cas, 2 * np.eye(3), atol=1e-14)


def test_restricted_spin_one_sz():
    r = spin_one_ops(restricted=True)
    np.testing.assert_array_equal(r["Sz"], np.diag([0.0, -1.0]))
    assert r["Sx"].shape == (2, 2) and is_hermitian(r["Sx"])


def test_embed_examples():
    s = spin_half_ops()
    np.testing.assert_array_equal(embed(s["Sz"], 0, 2), np.kron(s["Sz"], np.eye(2)))
    assert abs(np.trace(embed(s["Sx"], 1, 3))) == 0
    for k in range(3):
        np.testing.assert_array_equal(embed(np.eye(2), k, 3), np.eye(8))


def test_embed_errors():
    with pytest.raises(ValueError):
        embed(np.eye(3), 0, 2, 2)
    with pytest.raises(ValueError):
        embed(np.eye(2), 3, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.data())
def test_embed_is_multiplicative(n, data):
    site = data.draw(st.integers(0, n - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    b = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    np.testing.assert_allclose(embed(a @ b, site, n), embed(a, site, n) @ embed(b, site, n), atol=1e-13)
    np.testing.assert_allclose(embed(a + 2 * b, site, n), embed(a, site, n) + 2 * embed(b, site, n), atol=1e-13)


def test_kron_all_and_collective():
    s = spin_half_ops()
    np.testing.assert_allclose(kron_all([s["Sz"], s["Sx"]]), np.kron(s["Sz"], s["Sx"]))
    np.testing.assert_allclose(collective(s["Sz"], 2), embed(s["Sz"], 0, 2) + embed(s["Sz"], 1, 2))


def test_rotation_pi_about_x_flips_sz():
    s = spin_half_ops()
    R = rotation(np.pi, 0.0)
    np.testing.assert_allclose(R @ s["Sz"] @ R.conj().T, -s["Sz"], atol=1e-15)


def test_rotation_pi_half_y_takes_z_to_x():
    s = spin_half_ops()
    R = rotation(np.pi / 2, np.pi / 2)
    np.testing.assert_allclose(R @ s["Sz"] @ R.conj().T, s["Sx"], atol=1e-15)


def test_global_rotation_matches_product():
    R = rotation(0.7, 1.3)
    np.testing.assert_allclose(global_rotation(0.7, 1.3, 3), kron_all([R] * 3), atol=1e-14)


def test_product_state_normalized():
    psi = product_state(np.array([1, 1]) / np.sqrt(2), 4)
    assert psi.shape == (16,)
    assert abs(np.linalg.norm(psi) - 1) < 1e-14


def test_is_hermitian():
    assert is_hermitian(spin_half_ops()["Sy"])
    assert not is_hermitian(spin_half_ops()["Splus"])
