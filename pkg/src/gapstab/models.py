"""Built-in frustration-free model presets with exact reference data.

Presets: product-state baseline, classical Ising chain (Z2-broken,
commuting), the transverse-field perturbation, the AKLT chain, and the toric
code on small tori.  Every builder returns PSD terms with ground energy
exactly zero on its supported volumes.

The toric-code volume is the edge lattice of an N1 x N2 torus.  Edge
midpoints are stored in doubled integer coordinates on a (2 N1, 2 N2)
periodic l1 torus, so all pairwise distances are even; the volume carries
scale=2 and reports distances in those units (adjacent edges sharing a
vertex are at distance 1).
"""

from __future__ import annotations

import itertools

import numpy as np

from .lattice import MetricVolume, chain_volume, torus_volume
from .hilbert import Operator, SiteSpace
from .interaction import Interaction

__all__ = [
    "PAULI",
    "build",
    "site_space_for",
    "reference_facts",
    "toric_volume",
    "spin1_matrices",
    "preset_names",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def spin1_matrices():
    """Spin-1 S^x, S^y, S^z in the basis |1>, |0>, |-1>."""
    sp_ = np.array([[0, np.sqrt(2), 0], [0, 0, np.sqrt(2)], [0, 0, 0]], dtype=complex)
    sm = sp_.conj().T
    sx = 0.5 * (sp_ + sm)
    sy = -0.5j * (sp_ - sm)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


def pauli_string(space, sites, labels):
    """Tensor product of single-site Paulis as an Operator on `sites`."""
    mat = np.array([[1.0 + 0j]])
    for lab in labels:
        mat = np.kron(mat, PAULI[lab])
    return Operator(mat, tuple(sites), space)


def toric_volume(n1: int, n2: int) -> MetricVolume:
    """Edge lattice of the n1 x n2 torus in doubled coordinates (scale 2)."""
    if n1 < 2 or n2 < 2:
        raise ValueError("toric code needs extents >= 2")
    sites = []
    for i in range(n1):
        for j in range(n2):
            sites.append((2 * i + 1, 2 * j))   # horizontal edge mid (i+1/2, j)
            sites.append((2 * i, 2 * j + 1))   # vertical edge mid (i, j+1/2)
    return MetricVolume(tuple(sites), "periodic_l1", extents=(2 * n1, 2 * n2),
                        nu=2, kappa=5.0, scale=2)


def site_space_for(name, vol):
    if name == "aklt":
        return SiteSpace(vol, 3)
    return SiteSpace(vol, 2)


def _bond_pairs(vol):
    pairs = []
    for x, y in itertools.combinations(vol.sites, 2):
        if vol.distance(x, y) == 1:
            pairs.append((x, y))
    return pairs


def build_product(vol, space):
    """On-site h_x = (1 - Z)/2: unique ground state all-|0>, gap 1, Omega = 0."""
    phi = Interaction(space)
    h = 0.5 * (np.eye(2) - PAULI["Z"])
    for x in vol.sites:
        phi.add((x,), h)
    sym = {"kind": "none"}
    return phi, sym


def build_ising_zz(vol, space):
    """Bond terms (1 - Z Z)/2: commuting, gap 1, two product ground states."""
    phi = Interaction(space)
    h = 0.5 * (np.eye(4) - np.kron(PAULI["Z"], PAULI["Z"]))
    for x, y in _bond_pairs(vol):
        phi.add((x, y), h)
    sym = {"kind": "Z2_spin_flip", "unitary": PAULI["X"]}
    return phi, sym


def build_transverse_field(vol, space, strength=1.0):
    """Perturbation sum_x strength * X_x (Z2-symmetric)."""
    phi = Interaction(space)
    for x in vol.sites:
        phi.add((x,), strength * PAULI["X"])
    sym = {"kind": "Z2_spin_flip", "unitary": PAULI["X"]}
    return phi, sym


def aklt_bond_projector():
    """Projector onto total spin 2 of two spin-1 sites (term norm 1).

    P^(2) = 1/3 + (S.S)/2 + (S.S)^2/6.
    """
    sx, sy, sz = spin1_matrices()
    sdots = np.kron(sx, sx) + np.kron(sy, sy) + np.kron(sz, sz)
    return np.eye(9) / 3.0 + sdots / 2.0 + (sdots @ sdots) / 6.0


def build_aklt(vol, space):
    phi = Interaction(space)
    h = aklt_bond_projector()
    for x, y in _bond_pairs(vol):
        phi.add((x, y), h)
    sym = {"kind": "none"}
    return phi, sym


def toric_star_edges(vol, i, j):
    """Edges incident to vertex (i, j), in doubled coordinates."""
    n1, n2 = vol.extents[0] // 2, vol.extents[1] // 2
    return tuple(sorted([
        ((2 * i + 1) % (2 * n1), (2 * j) % (2 * n2)),
        ((2 * i - 1) % (2 * n1), (2 * j) % (2 * n2)),
        ((2 * i) % (2 * n1), (2 * j + 1) % (2 * n2)),
        ((2 * i) % (2 * n1), (2 * j - 1) % (2 * n2)),
    ]))


def toric_plaquette_edges(vol, i, j):
    """Edges bounding the plaquette with lower-left vertex (i, j)."""
    n1, n2 = vol.extents[0] // 2, vol.extents[1] // 2
    return tuple(sorted([
        ((2 * i + 1) % (2 * n1), (2 * j) % (2 * n2)),
        ((2 * i + 1) % (2 * n1), (2 * j + 2) % (2 * n2)),
        ((2 * i) % (2 * n1), (2 * j + 1) % (2 * n2)),
        ((2 * i + 2) % (2 * n1), (2 * j + 1) % (2 * n2)),
    ]))


def build_toric_code(vol, space):
    """H = sum_s (1 - A_s)/2 + sum_p (1 - B_p)/2 on the torus edge lattice."""
    if vol.metric_kind != "periodic_l1" or vol.scale != 2:
        raise ValueError("toric code requires a torus edge-lattice volume "
                         "(build it with toric_volume)")
    n1, n2 = vol.extents[0] // 2, vol.extents[1] // 2
    phi = Interaction(space)
    stabilizers = []
    for i in range(n1):
        for j in range(n2):
            star = toric_star_edges(vol, i, j)
            a = pauli_string(space, star, "XXXX")
            phi.add(star, 0.5 * (np.eye(16) - a.dense()))
            stabilizers.append(("star", star, "X"))
            plaq = toric_plaquette_edges(vol, i, j)
            b = pauli_string(space, plaq, "ZZZZ")
            phi.add(plaq, 0.5 * (np.eye(16) - b.dense()))
            stabilizers.append(("plaquette", plaq, "Z"))
    sym = {"kind": "stabilizer", "stabilizers": stabilizers}
    return phi, sym


_BUILDERS = {
    "product": build_product,
    "ising_zz": build_ising_zz,
    "transverse_field": build_transverse_field,
    "aklt": build_aklt,
    "toric_code": build_toric_code,
}


def preset_names():
    return sorted(_BUILDERS)


def build(name, vol, **params):
    """Build a preset interaction on the volume; returns (Interaction, symmetry)."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown model {name!r}; presets: {preset_names()}")
    if name == "toric_code" and vol.scale != 2:
        raise ValueError("toric_code needs the edge-lattice torus from toric_volume()")
    if name == "aklt":
        space = SiteSpace(vol, 3)
    else:
        space = SiteSpace(vol, 2)
    return _BUILDERS[name](vol, space, **params)


def reference_facts(name):
    """Known facts per preset, each tagged with its provenance."""
    facts = {
        "product": [
            {"fact": "indistinguishability Omega", "value": "zero", "tag": "PAPER"},
            {"fact": "radius", "value": "diam(Lambda)", "tag": "PAPER"},
            {"fact": "gap", "value": 1.0, "tag": "TRIVIAL"},
        ],
        "ising_zz": [
            {"fact": "gap", "value": 1.0, "tag": "TRIVIAL"},
            {"fact": "ground degeneracy (chain)", "value": 2, "tag": "TRIVIAL"},
            {"fact": "plain radius under sigma^z probes", "value": "bounded or zero",
             "tag": "PAPER"},
        ],
        "aklt": [
            {"fact": "open-chain kernel dimension", "value": 4, "tag": "DERIVED"},
            {"fact": "transfer eigenvalues", "value": [1.0, -1 / 3, -1 / 3, -1 / 3],
             "tag": "DERIVED"},
            {"fact": "transfer lambda", "value": 1 / 3, "tag": "DERIVED"},
            {"fact": "open-chain radius lower bound",
             "value": "min(|x-a|,|b-x|) - c", "tag": "PAPER"},
        ],
        "toric_code": [
            {"fact": "step Omega", "value": {"height": 2, "cutoff": 2}, "tag": "PAPER"},
            {"fact": "radius lower bound", "value": "min(N1,N2) - 2", "tag": "PAPER"},
            {"fact": "torus ground degeneracy", "value": 4, "tag": "DERIVED"},
        ],
    }
    if name not in facts:
        raise KeyError(f"no reference facts for {name!r}")
    return facts[name]


def tfim_free_fermion_spectrum(L, s):
    """Independent oracle: full spectrum of sum (1 - Z Z)/2 + s sum X on the
    open L-site chain via its free-fermion (Jordan-Wigner) reduction.

    Returns the sorted 2^L many-body eigenvalues assembled from the
    single-particle energies of the 2L x 2L Bogoliubov-de Gennes matrix.
    """
    # H = (L-1)/2 - 1/2 sum Z_x Z_{x+1} + s sum X_x.
    # JW with X_x = 1 - 2 n_x, Z_x Z_{x+1} -> (c_x^+ - c_x)(c_{x+1}^+ + c_{x+1}):
    # H = const + sum_x [ -1/2 (c_x^+ c_{x+1} + c_{x+1}^+ c_x
    #                          + c_x^+ c_{x+1}^+ + c_{x+1} c_x) ]
    #     + s sum_x (1 - 2 c_x^+ c_x)
    A = np.zeros((L, L))   # hopping: H += sum A_ij c_i^+ c_j (A symmetric)
    B = np.zeros((L, L))   # pairing: H += 1/2 sum B_ij (c_i^+ c_j^+ - c_i c_j), B antisym
    const = (L - 1) / 2.0 + s * L
    for x in range(L - 1):
        A[x, x + 1] += -0.5
        A[x + 1, x] += -0.5
        B[x, x + 1] += -0.5
        B[x + 1, x] += +0.5
    for x in range(L):
        A[x, x] += -2.0 * s
    # BdG matrix [[A, B], [-B, -A]]; eigenvalues come in +-eps pairs and the
    # L non-negative ones are the quasiparticle energies
    bdg = np.block([[A, B], [-B, -A]])
    w = np.linalg.eigvalsh(bdg)
    eps = np.sort(w)[L:]
    e0 = const + 0.5 * np.trace(A) - 0.5 * np.sum(eps)
    spectrum = [e0]
    for k in range(L):
        spectrum = spectrum + [e + eps[k] for e in spectrum]
    return np.sort(np.array(spectrum))
