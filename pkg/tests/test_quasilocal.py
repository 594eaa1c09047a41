import numpy as np
import pytest

from gapstab.lattice import chain_volume
from gapstab.hilbert import Operator, SiteSpace, embed, operator_norm, random_hermitian
from gapstab.interaction import FFunction
from gapstab.models import PAULI, build
from gapstab.quasilocal import (
    DecayEnvelope, EigenFrame, FlowAbort, SpectralFlow, WeightPair, heisenberg,
    integral_op_F, integral_op_G, lr_cone_measure, ql_envelope_measure,
    spectral_flow,
)


@pytest.fixture(scope="module")
def ising6():
    vol = chain_volume(6)
    phi, _ = build("ising_zz", vol)
    pert, _ = build("transverse_field", vol)
    return vol, phi, pert


def test_weight_pair_contract():
    wp = WeightPair(0.7)
    om = np.linspace(-40, 40, 1000)
    assert wp.w_hat(0.0) == pytest.approx(1.0)
    assert np.all(wp.w_hat(np.array([0.7, -0.7, 1.1, 5.0])) == 0.0)
    assert np.max(np.abs(wp.w_hat(om) - wp.w_hat(-om))) < 1e-14
    # distributional-derivative identity sampled on 10^3 frequencies
    assert wp.identity_defect(np.linspace(-25, 25, 1000)) < 1e-10
    assert wp.W_hat(np.array([0.0]))[0] == 0.0
    # outside the band: W_hat = 1/(i omega)
    far = np.array([2.0, -3.7])
    assert np.allclose(wp.W_hat(far), 1.0 / (1j * far))
    # nonnegative, L1-normalized time kernel
    t = np.linspace(-400, 400, 200001)
    w = wp.w_time(t)
    assert np.all(w >= 0)
    assert np.trapezoid(w, t) == pytest.approx(1.0, abs=1e-3)


def test_heisenberg_identity_and_energy_conservation(ising6):
    vol, phi, _ = ising6
    H = phi.local_hamiltonian(vol.sites)
    rng = np.random.default_rng(1)
    A = Operator(random_hermitian(64, rng), vol.sites, phi.space)
    assert operator_norm(heisenberg(H, A, 0.0) - A) < 1e-12
    for t in (0.3, 1.7):
        assert operator_norm(heisenberg(H, H, t) - H) < 1e-10
        # unitary invariance of the norm
        assert operator_norm(heisenberg(H, A, t)) == pytest.approx(operator_norm(A))


def test_heisenberg_matches_taylor_series():
    vol = chain_volume(3)
    phi, _ = build("ising_zz", vol)
    pert, _ = build("transverse_field", vol)
    H = phi.local_hamiltonian(vol.sites) + 0.4 * pert.local_hamiltonian(vol.sites)
    rng = np.random.default_rng(3)
    A = Operator(random_hermitian(8, rng), vol.sites, phi.space)
    t = 0.1
    # oracle: Taylor series of ad_H to order 8
    term = A.dense()
    total = term.copy()
    Hm = H.dense()
    for k in range(1, 9):
        term = (1j * t / k) * (Hm @ term - term @ Hm)
        total += term
    assert np.linalg.norm(heisenberg(H, A, t).dense() - total, 2) < 1e-9


def test_integral_op_fixes_commuting_observables(ising6):
    vol, phi, _ = ising6
    H = phi.local_hamiltonian(vol.sites)
    wp = WeightPair(0.5)
    assert operator_norm(integral_op_F(H, H, wp) - H) < 1e-10
    # A commuting with H: zero Bohr frequencies only, w_hat(0) = 1
    z3 = embed(Operator(PAULI["Z"].copy(), ((3,),), phi.space), vol.sites)
    assert operator_norm(integral_op_F(H, z3, wp) - z3) < 1e-12


def test_integral_op_offdiagonal_block_vanishes(ising6):
    # (1-P) F(A) P = 0 whenever gap > gamma
    vol, phi, _ = ising6
    H = phi.local_hamiltonian(vol.sites)
    frame = EigenFrame(H)
    p = frame.projector(2)
    q = np.eye(64) - p
    wp = WeightPair(0.5)
    rng = np.random.default_rng(7)
    for _ in range(4):
        A = Operator(random_hermitian(64, rng), vol.sites, phi.space)
        fa = integral_op_F(H, A, wp, frame).dense()
        assert np.linalg.norm(q @ fa @ p, 2) < 1e-12
        assert np.linalg.norm(frame.projector(2) @ fa - fa @ frame.projector(2), 2) < 1e-12


def test_integral_op_contraction_and_G_bound(ising6):
    vol, phi, _ = ising6
    H = phi.local_hamiltonian(vol.sites)
    wp = WeightPair(0.5)
    rng = np.random.default_rng(11)
    frame = EigenFrame(H)
    wsup = wp.W_sup()
    for _ in range(5):
        A = Operator(random_hermitian(64, rng), vol.sites, phi.space)
        assert operator_norm(integral_op_F(H, A, wp, frame)) <= operator_norm(A) + 1e-10
        ga = integral_op_G(H, A, wp, frame)
        assert operator_norm(ga) <= wsup * np.sqrt(64) * operator_norm(A) + 1e-10


def test_integral_op_against_time_quadrature():
    vol = chain_volume(3)
    phi, _ = build("ising_zz", vol)
    pert, _ = build("transverse_field", vol)
    H = phi.local_hamiltonian(vol.sites) + 0.3 * pert.local_hamiltonian(vol.sites)
    rng = np.random.default_rng(13)
    A = Operator(random_hermitian(8, rng), vol.sites, phi.space)
    gamma = 1.0
    wp = WeightPair(gamma)
    frame = EigenFrame(H)
    # quadrature oracle: integrate tau_t(A) w(t) dt on a wide Simpson grid
    T, n = 600.0, 240001
    ts = np.linspace(-T, T, n)
    w = wp.w_time(ts)
    acc = np.zeros((8, 8), dtype=complex)
    from scipy.integrate import simpson
    evo = np.array([frame.evolve(A.dense(), t) for t in ts])
    acc = simpson(evo * w[:, None, None], x=ts, axis=0)
    exact = integral_op_F(H, A, wp, frame).dense()
    assert np.linalg.norm(acc - exact, 2) < 5e-4


def test_spectral_flow_trivial_and_transport(ising6):
    vol, phi, pert = ising6
    H0 = phi.local_hamiltonian(vol.sites)
    V = pert.local_hamiltonian(vol.sites)
    flow = spectral_flow(H0, V, s_target=0.1, gamma=0.5, s_steps=100)
    assert np.allclose(flow.U[0.0], np.eye(64))
    for s in flow.s_grid:
        assert flow.unitarity_error(s) < 1e-10
        assert flow.projector_transport_error(s) < 1e-6
    # spectrum preserved exactly by the computed unitaries
    s = float(flow.s_grid[-1])
    hs = H0.dense() + s * V.dense()
    transported = flow.alpha(hs, s)
    assert np.allclose(np.sort(np.linalg.eigvalsh(transported)),
                       np.sort(np.linalg.eigvalsh(hs)), atol=1e-8)


def test_spectral_flow_aborts_when_gap_closes():
    vol = chain_volume(6)
    phi, _ = build("ising_zz", vol)
    pert, _ = build("transverse_field", vol)
    H0 = phi.local_hamiltonian(vol.sites)
    V = pert.local_hamiltonian(vol.sites)
    # the L=6 gap crosses 0.5 near s ~ 0.44
    with pytest.raises(FlowAbort) as exc:
        SpectralFlow(H0, V, gamma=0.5, s_grid=np.linspace(0, 0.7, 8), s_steps=56)
    assert 0.3 < exc.value.s <= 0.7


def test_lr_cone_measure_ising_field():
    vol = chain_volume(8)
    phi, _ = build("ising_zz", vol)
    pert, _ = build("transverse_field", vol)
    for key, term in pert.items():
        phi.add(key, 0.3 * term.dense())
    space = phi.space
    F = FFunction("polynomial", zeta=3)
    a = Operator(PAULI["X"].copy(), ((0,),), space)
    b = Operator(PAULI["Z"].copy(), ((7,),), space)
    out = lr_cone_measure(phi, vol, F, a, b, ((0,),), ((7,),), t_grid=[0.0, 0.25, 0.5])
    assert out["rows"][0]["measured"] < 1e-12  # t=0, disjoint supports
    for row in out["rows"]:
        assert row["measured"] <= row["bound"] + 1e-12
    # RHS monotone in |t|
    bounds = [r["bound"] for r in out["rows"]]
    assert bounds == sorted(bounds)
    assert out["velocity_bound"] > 0


def test_lr_cone_rejects_overlapping_supports():
    vol = chain_volume(4)
    phi, _ = build("ising_zz", vol)
    a = Operator(PAULI["X"].copy(), ((1,),), phi.space)
    with pytest.raises(ValueError):
        lr_cone_measure(phi, vol, FFunction("polynomial", zeta=3), a, a,
                        ((1,),), ((1,),), [0.1])


def test_envelope_monotonization_and_csv(tmp_path):
    env = DecayEnvelope({0: 1.0, 1: 0.2, 2: 0.5, 3: 0.01}, label="probe")
    mono = env.monotone()
    assert mono.samples[1] == 0.5  # running max from the right
    assert mono.samples[2] == 0.5
    vals = [mono.samples[k] for k in sorted(mono.samples)]
    assert vals == sorted(vals, reverse=True)
    path = tmp_path / "env.csv"
    mono.to_csv(path)
    assert path.read_text().startswith("r,G\n")


def test_ql_envelope_strictly_local_map(ising6):
    vol, phi, _ = ising6
    space = phi.space
    # identity map: commutators of disjointly supported probes vanish
    env = ql_envelope_measure(lambda a: a, vol, space)
    assert all(v < 1e-10 for v in env.samples.values())


def test_ql_envelope_of_integral_op_decays(ising6):
    vol, phi, _ = ising6
    space = phi.space
    H = phi.local_hamiltonian(vol.sites)
    frame = EigenFrame(H)
    wp = WeightPair(0.5)

    def F_map(a):
        return integral_op_F(H, a, wp, frame)

    env = ql_envelope_measure(F_map, vol, space)
    rs = sorted(env.samples)
    assert rs[0] >= 1
    assert env.samples[rs[-1]] <= env.samples[rs[0]]
    assert env.samples[rs[-1]] < 0.1 * env.samples[rs[0]]
