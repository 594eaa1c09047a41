import numpy as np
import pytest

from gapstab.lattice import chain_volume
from gapstab.hilbert import SiteSpace
from gapstab.models import build
from gapstab.mps import (
    MpsFamily, NotPrimitiveError, cross_overlap_norm, expectation_bound_check,
    family_from_json, family_to_json, inner_product_bound_check, mps_ltqo_bound,
    mps_ltqo_omega, mps_vector, parent_interaction, preset_family,
    symmetry_broken_family, transfer_spectrum,
)
from gapstab.spectra import diagonalize

FLIP3 = np.array([[0, 0, 1], [0, 1, 0], [1, 0, 0]], dtype=complex)


@pytest.fixture(scope="module")
def aklt():
    return preset_family("aklt")


def test_aklt_transfer_spectrum(aklt):
    evals, lam, c = transfer_spectrum(aklt)
    expect = np.array([1.0, -1 / 3, -1 / 3, -1 / 3])
    assert np.allclose(np.sort(evals.real), np.sort(expect), atol=1e-10)
    assert np.max(np.abs(evals.imag)) < 1e-10
    assert lam == pytest.approx(1 / 3, abs=1e-10)
    assert c >= 1.0
    assert np.allclose(aklt.rho, np.eye(2) / 2)


def test_isometric_form_invariants(aklt):
    one = sum(v.conj().T @ v for v in aklt.kraus)
    assert np.linalg.norm(one - np.eye(2), 2) < 1e-12
    assert np.linalg.norm(aklt.transfer_t(aklt.rho) - aklt.rho, 2) < 1e-12
    assert np.trace(aklt.rho).real == pytest.approx(1.0)


def test_gauge_invariance_of_transfer_spectrum():
    rng = np.random.default_rng(4)
    base = preset_family("aklt")
    for _ in range(3):
        g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        gi = np.linalg.inv(g)
        scrambled = [3.7 * (g @ v @ gi) for v in base.kraus]
        fam = MpsFamily(scrambled)
        assert np.allclose(np.sort(fam.transfer_eigenvalues.real),
                           np.sort(base.transfer_eigenvalues.real), atol=1e-8)
        assert fam.lam == pytest.approx(1 / 3, abs=1e-8)


def test_product_family_trivial_spectrum():
    fam = preset_family("product_up")
    evals, lam, c = transfer_spectrum(fam)
    assert np.allclose(evals, [1.0])
    assert lam == 0.0


def test_reducible_family_raises():
    v0 = np.diag([1.0, 0.0]).astype(complex)
    v1 = np.diag([0.0, 1.0]).astype(complex)
    with pytest.raises((NotPrimitiveError, ValueError)):
        MpsFamily([v0, v1], gauge=False)


def test_mps_vector_product_family():
    fam = preset_family("product_up")
    v = mps_vector(fam, 4)
    expect = np.zeros(16)
    expect[0] = 1.0
    assert np.allclose(v, expect)


def test_mps_vector_linearity_and_kernel(aklt):
    rng = np.random.default_rng(5)
    B = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    C = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    lin = mps_vector(aklt, 5, 2.0 * B - 1j * C)
    assert np.allclose(lin, 2.0 * mps_vector(aklt, 5, B) - 1j * mps_vector(aklt, 5, C))
    # AKLT Gamma images span the exact parent kernel
    vol = chain_volume(6)
    phi, _ = build("aklt", vol)
    sd = diagonalize(phi.local_hamiltonian(vol.sites))
    g = sd.ground_basis
    for e in np.eye(4):
        v = mps_vector(aklt, 6, e.reshape(2, 2))
        res = v - g @ (g.conj().T @ v)
        assert np.linalg.norm(res) < 1e-10 * np.linalg.norm(v)


def test_mps_vector_cap():
    fam = preset_family("aklt")
    with pytest.raises(ValueError):
        mps_vector(fam, 20)


def test_norm_relation(aklt):
    rng = np.random.default_rng(6)
    tr_inv = float(np.trace(np.linalg.inv(aklt.rho)).real)
    for L in (6, 8):
        for _ in range(4):
            B = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            ratio = np.linalg.norm(mps_vector(aklt, L, B)) ** 2 / aklt.rho_norm(B) ** 2
            slack = aklt.c * tr_inv * aklt.lam ** L
            assert 1 - slack <= ratio <= 1 + slack


def test_inner_product_bound_full_basis(aklt):
    basis = aklt.rho_orthonormal_basis()
    assert len(basis) == 4
    for B in basis:
        for C in basis:
            lhs, rhs, margin = inner_product_bound_check(aklt, 8, B, C)
            assert margin >= 0


def test_expectation_bound_center_probe(aklt):
    rng = np.random.default_rng(7)
    basis = aklt.rho_orthonormal_basis()
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    A = 0.5 * (A + A.conj().T)
    for B in basis:
        for C in basis:
            lhs, rhs, margin = expectation_bound_check(aklt, (1, 8), (4, 4), A, B, C)
            assert margin >= 0


def test_expectation_identity_reduces_to_ip(aklt):
    basis = aklt.rho_orthonormal_basis()
    B, C = basis[1], basis[2]
    lhs_e, _, _ = expectation_bound_check(aklt, (1, 6), (3, 3), np.eye(3), B, C)
    lhs_ip, _, _ = inner_product_bound_check(aklt, 6, B, C)
    assert lhs_e == pytest.approx(lhs_ip, abs=1e-12)


def test_expectation_scaling_with_distance(aklt):
    # edge-polarized boundary matrices: the center S^z deviation decays like
    # lambda^(distance to the nearer edge)
    sz1 = np.diag([1.0, 0.0, -1.0]).astype(complex)
    sp = np.array([[0, 1], [0, 0]], dtype=complex)
    vals = []
    for L in (5, 7, 9):
        a = (L + 1) // 2
        lhs, _, _ = expectation_bound_check(aklt, (1, L), (a, a), sz1, sp, sp)
        vals.append(max(lhs, 1e-16))
    slopes = np.diff(np.log(vals))
    assert np.all(slopes < np.log(1 / 2.5))  # lambda = 1/3 per unit distance


def test_mps_ltqo_margins_all_single_site_probes(aklt):
    rng = np.random.default_rng(8)
    probes = []
    for i in range(3):
        for j in range(3):
            e = np.zeros((3, 3), dtype=complex)
            e[i, j] = 1.0
            probes.append(e + e.conj().T if i != j else e)
            if i < j:
                probes.append(-1j * (e - e.conj().T))
    vol = chain_volume(8)
    phi, _ = build("aklt", vol)
    sd = diagonalize(phi.local_hamiltonian(vol.sites))
    for A in probes:
        if np.linalg.norm(A, 2) < 1e-12:
            continue
        lhs, rhs, margin = mps_ltqo_bound(aklt, 8, (4, 4), A,
                                          ground_basis=sd.ground_basis)
        assert margin >= 0
    assert mps_ltqo_omega(aklt, 6) > 0


def test_mps_ltqo_identity_probe_zero(aklt):
    lhs, rhs, margin = mps_ltqo_bound(aklt, 8, (4, 4), np.eye(3))
    assert lhs < 1e-10
    assert margin >= 0


def test_mps_ltqo_injectivity_guard(aklt):
    with pytest.raises(ValueError):
        mps_ltqo_bound(aklt, 1, (1, 1), np.eye(3))


def test_cross_overlap_self_is_one(aklt):
    assert cross_overlap_norm(aklt, aklt) == pytest.approx(1.0, abs=1e-10)


def test_cross_overlap_orthogonal_products():
    up, down = preset_family("ghz_components")
    assert cross_overlap_norm(up, down) == 0.0


def test_cross_overlap_distinct_strictly_below_one():
    fam = preset_family("diluted_ferro")
    fams, kept = symmetry_broken_family(fam, [np.eye(3), FLIP3])
    assert len(fams) == 2
    val = cross_overlap_norm(fams[0], fams[1])
    assert val < 1 - 1e-3


def test_symmetry_unbroken_collapses(aklt):
    fams, kept = symmetry_broken_family(aklt, [np.eye(3), FLIP3])
    assert len(fams) == 1  # AKLT is flip-invariant: N collapses


def test_joint_parent_frustration_free():
    fam = preset_family("diluted_ferro")
    fams, _ = symmetry_broken_family(fam, [np.eye(3), FLIP3])
    vol = chain_volume(5)
    phi = parent_interaction(fams, vol, interaction_range=3)
    sd = diagonalize(phi.local_hamiltonian(vol.sites))
    assert abs(sd.ground_energy) < 1e-10
    assert sd.ground_dim == 8  # two injective families, k^2 each
    assert sd.gap > 0.05


def test_family_json_roundtrip(aklt):
    text = family_to_json(aklt)
    back = family_from_json(text)
    assert back.k == aklt.k and back.d == aklt.d
    assert back.lam == pytest.approx(aklt.lam, abs=1e-10)
