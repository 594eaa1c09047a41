"""Translation-invariant matrix product states: transfer operators, the
Gamma map, indistinguishability bounds, and multi-state cross overlaps.

A family is put into isometric form (E(1) = 1, E^t(rho) = rho) by the
fixed-point gauge; lambda is the second-largest transfer eigenvalue modulus
and c is the sharpest constant fitted so that the certified operator-norm
bound ||E^n - E^infty|| <= c lambda^n holds over the fitted range.  Any
valid c certifies the expectation/inner-product bounds, so the fit uses the
sqrt(k)-inflated Hilbert-Schmidt norm, which dominates the op->op norm.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .hilbert import Operator, SiteSpace, embed
from .interaction import Interaction
from .lattice import chain_volume

__all__ = [
    "MpsFamily",
    "NotPrimitiveError",
    "transfer_spectrum",
    "mps_vector",
    "expectation_bound_check",
    "inner_product_bound_check",
    "mps_ltqo_bound",
    "mps_ltqo_omega",
    "cross_overlap_norm",
    "symmetry_broken_family",
    "parent_interaction",
    "preset_family",
]

STATE_VECTOR_CAP = 4_000_000


class NotPrimitiveError(ValueError):
    pass


def _transfer_matrix(kraus):
    """Row-major vec matrix of E(B) = sum_i v_i^* B v_i."""
    k = kraus[0].shape[0]
    m = np.zeros((k * k, k * k), dtype=complex)
    for v in kraus:
        m += np.kron(v.conj().T, v.T)
    return m


class MpsFamily:
    """Kraus family v_1..v_d in isometric form with fixed-point data."""

    def __init__(self, kraus, gauge=True, fit_range=20):
        kraus = [np.asarray(v, dtype=complex) for v in kraus]
        k = kraus[0].shape[0]
        if any(v.shape != (k, k) for v in kraus):
            raise ValueError("Kraus matrices must share a square bond shape")
        if gauge:
            kraus = _gauge_isometric(kraus)
        self.kraus = kraus
        self.k = k
        self.d = len(kraus)
        defect = np.linalg.norm(sum(v.conj().T @ v for v in kraus) - np.eye(k), 2)
        if defect > 1e-10:
            raise ValueError(f"gauge fixing failed: E(1) defect {defect:.2e}")
        self.rho = _fixed_density(kraus)
        evals = np.linalg.eigvals(_transfer_matrix(kraus))
        order = np.argsort(-np.abs(evals))
        evals = evals[order]
        if len(evals) > 1 and abs(abs(evals[1]) - 1.0) < 1e-10:
            raise NotPrimitiveError(
                f"degenerate leading transfer eigenvalue: {evals[:2]}")
        self.transfer_eigenvalues = evals
        self.lam = float(abs(evals[1])) if len(evals) > 1 else 0.0
        self.c = self._fit_c(fit_range)

    def _fit_c(self, n_max):
        m = _transfer_matrix(self.kraus)
        # E_inf(B) = Tr(rho B) * I: vec matrix M[(a,b),(c,d)] = delta_ab rho_dc
        m_inf = np.einsum("ab,dc->abcd", np.eye(self.k), self.rho).reshape(
            self.k ** 2, self.k ** 2)
        best = 1.0
        power = np.eye(self.k ** 2, dtype=complex)
        for n in range(0, n_max + 1):
            diff = power - m_inf
            norm = np.sqrt(self.k) * np.linalg.norm(diff, 2)
            lam_n = self.lam ** n if self.lam > 0 else (1.0 if n == 0 else 0.0)
            # stop once the true difference sinks below matmul rounding noise
            if norm < 1e-12:
                break
            if lam_n > 0:
                best = max(best, norm / lam_n)
            power = power @ m
        return float(best)

    def transfer(self, B):
        return sum(v.conj().T @ B @ v for v in self.kraus)

    def transfer_t(self, B):
        return sum(v @ B @ v.conj().T for v in self.kraus)

    def rho_ip(self, B, C):
        """<B, C>_rho = Tr(rho B^* C)."""
        return complex(np.trace(self.rho @ B.conj().T @ C))

    def rho_norm(self, B):
        return float(np.sqrt(max(self.rho_ip(B, B).real, 0.0)))

    def rho_orthonormal_basis(self):
        """Matrix basis orthonormal in the rho inner product."""
        k = self.k
        raw = []
        for i in range(k):
            for j in range(k):
                e = np.zeros((k, k), dtype=complex)
                e[i, j] = 1.0
                raw.append(e)
        out = []
        for e in raw:
            v = e.copy()
            for b in out:
                v = v - self.rho_ip(b, v) * b
            n = self.rho_norm(v)
            if n > 1e-12:
                out.append(v / n)
        return out

    def transfer_op_A(self, a_mat, interval_len):
        """E_A(B) for A given as a d^len x d^len matrix on `interval_len` sites."""
        words = _kraus_words(self.kraus, interval_len)
        out_fn = lambda B: sum(
            a_mat[i, j] * (words[i].conj().T @ B @ words[j])
            for i in range(len(words)) for j in range(len(words))
            if a_mat[i, j] != 0)
        return out_fn

    def omega(self, a_mat, interval_len):
        """omega(A) = Tr(rho E_A(1)) for A on `interval_len` consecutive sites."""
        ea = self.transfer_op_A(a_mat, interval_len)(np.eye(self.k))
        return complex(np.trace(self.rho @ ea))


def _gauge_isometric(kraus, tol=1e-12, max_iter=2000):
    """Similarity-transform the family so that sum v_i^* v_i = 1.

    Finds the positive fixed point M of B -> sum a_i^* B a_i (leading
    eigen-operator, via the vectorized transfer matrix) and conjugates by
    M^(1/2).
    """
    k = kraus[0].shape[0]
    m = _transfer_matrix(kraus)
    evals, evecs = np.linalg.eig(m)
    idx = int(np.argmax(np.abs(evals)))
    mu = evals[idx]
    if abs(mu) < 1e-14:
        raise ValueError("transfer map is nilpotent; cannot gauge")
    M = evecs[:, idx].reshape(k, k)
    M = 0.5 * (M + M.conj().T)
    # fix the overall sign so M > 0
    w = np.linalg.eigvalsh(M)
    if w.sum() < 0:
        M = -M
        w = -w[::-1]
    if w.min() < -1e-9 * max(abs(w).max(), 1e-300):
        raise ValueError("leading transfer eigen-operator is not definite; "
                         "family is reducible")
    M = M + 1e-14 * np.eye(k)
    x = _sqrtm_psd(M)
    xi = np.linalg.inv(x)
    scale = 1.0 / np.sqrt(abs(mu))
    return [scale * (x @ a @ xi) for a in kraus]


def _sqrtm_psd(M):
    w, u = np.linalg.eigh(M)
    w = np.clip(w, 0.0, None)
    return u @ np.diag(np.sqrt(w)) @ u.conj().T


def _fixed_density(kraus, tol=1e-12):
    k = kraus[0].shape[0]
    mt = np.zeros((k * k, k * k), dtype=complex)
    for v in kraus:
        mt += np.kron(v, v.conj())
    evals, evecs = np.linalg.eig(mt)
    idx = int(np.argmax(np.abs(evals)))
    rho = evecs[:, idx].reshape(k, k)
    rho = 0.5 * (rho + rho.conj().T)
    if np.trace(rho).real < 0:
        rho = -rho
    rho = rho / np.trace(rho).real
    w = np.linalg.eigvalsh(rho)
    if w.min() < -1e-10:
        raise ValueError("fixed point of the transfer map is not a state")
    return rho


def _kraus_words(kraus, length):
    words = [np.eye(kraus[0].shape[0], dtype=complex)]
    for _ in range(length):
        words = [w @ v for w in words for v in kraus]
    return words


def transfer_spectrum(fam: MpsFamily):
    """Full transfer spectrum plus (lambda, fitted c)."""
    return fam.transfer_eigenvalues, fam.lam, fam.c


def mps_vector(fam: MpsFamily, length: int, B=None) -> np.ndarray:
    """Gamma_{[1,length]}(B): exact contraction to a state vector."""
    if B is None:
        B = np.eye(fam.k, dtype=complex)
    if fam.d ** length * fam.k * fam.k > STATE_VECTOR_CAP:
        raise ValueError(f"interval of length {length} exceeds the state-vector cap")
    t = np.asarray(B, dtype=complex)[None, :, :]
    for _ in range(length):
        t = np.einsum("nab,ibc->niac", t, np.stack(fam.kraus)).reshape(
            -1, fam.k, fam.k)
    return np.trace(t, axis1=1, axis2=2)


def inner_product_bound_check(fam: MpsFamily, length: int, B, C):
    """|<Gamma(B), Gamma(C)> - <B,C>_rho| against c Tr(rho^-1) lambda^len ..."""
    vb, vc = mps_vector(fam, length, B), mps_vector(fam, length, C)
    lhs = abs(np.vdot(vb, vc) - fam.rho_ip(B, C))
    tr_inv = float(np.trace(np.linalg.inv(fam.rho)).real)
    rhs = fam.c * tr_inv * fam.lam ** length * fam.rho_norm(B) * fam.rho_norm(C)
    return float(lhs), float(rhs), float(rhs - lhs)


def expectation_bound_check(fam: MpsFamily, interval, subinterval, a_mat, B, C):
    """Expectation bound on [l, r] for A supported on [a, b].

    Computes |<Gamma(B), A Gamma(C)> - omega(A) <B,C>_rho| exactly and the
    bound c (Tr(rho^-1) lambda^(a-l) + lambda^(r-b)) ||A|| ||B||_rho ||C||_rho.
    """
    l, r = interval
    a, b = subinterval
    if not (l <= a <= b <= r):
        raise ValueError("subinterval must sit inside the interval")
    length = r - l + 1
    vb, vc = mps_vector(fam, length, B), mps_vector(fam, length, C)
    d = fam.d
    a_len = b - a + 1
    dim_left, dim_right = d ** (a - l), d ** (r - b)
    vc_t = vc.reshape(dim_left, d ** a_len, dim_right)
    avc = np.einsum("ij,ajb->aib", np.asarray(a_mat, dtype=complex), vc_t).ravel()
    lhs = abs(np.vdot(vb, avc) - fam.omega(a_mat, a_len) * fam.rho_ip(B, C))
    tr_inv = float(np.trace(np.linalg.inv(fam.rho)).real)
    na = np.linalg.norm(a_mat, 2)
    rhs = (fam.c * (tr_inv * fam.lam ** (a - l) + fam.lam ** (r - b))
           * na * fam.rho_norm(B) * fam.rho_norm(C))
    return float(lhs), float(rhs), float(rhs - lhs)


def parent_interaction(families, vol, space=None, interaction_range=2) -> Interaction:
    """Kernel-projector parent Hamiltonian for one or more MPS families.

    Each nearest-`range` block term is the projector onto the orthogonal
    complement of the span of all families' Gamma images on that block.
    """
    families = list(families)
    d = families[0].d
    if space is None:
        space = SiteSpace(vol, d)
    cols = []
    for fam in families:
        for i in range(fam.k):
            for j in range(fam.k):
                e = np.zeros((fam.k, fam.k), dtype=complex)
                e[i, j] = 1.0
                cols.append(mps_vector(fam, interaction_range, e))
    span = np.stack(cols, axis=1)
    q, r = np.linalg.qr(span)
    keep = np.abs(np.diag(r)) > 1e-10
    q = q[:, keep]
    h = np.eye(d ** interaction_range) - q @ q.conj().T
    phi = Interaction(space)
    sites = vol.sites
    for i in range(len(sites) - interaction_range + 1):
        block = tuple(sites[i: i + interaction_range])
        if all(vol.distance(block[t], block[t + 1]) == 1 for t in range(len(block) - 1)):
            phi.add(block, h)
    return phi


def mps_ltqo_bound(fam: MpsFamily, length: int, sub: tuple, a_mat,
                   ground_basis=None, space=None):
    """Thm-style LTQO margin on the interval [1, length], probe on `sub`.

    LHS = ||P A P - omega(A) P|| with P the exact kernel projector of the
    parent Hamiltonian (diagonalized via the spectra module); RHS is the
    closed-form bound.  Requires the injectivity regime
    c Tr(rho^-1) lambda^length < 1.
    """
    tr_inv = float(np.trace(np.linalg.inv(fam.rho)).real)
    if fam.c * tr_inv * fam.lam ** length >= 1.0:
        raise ValueError("outside the certified injectivity regime")
    a, b = sub
    if not (1 <= a <= b <= length):
        raise ValueError("probe interval out of range")
    vol = chain_volume(length)
    if space is None:
        space = SiteSpace(vol, fam.d)
    if ground_basis is None:
        from .spectra import diagonalize
        phi = parent_interaction([fam], vol, space)
        sd = diagonalize(phi.local_hamiltonian(vol.sites))
        ground_basis = sd.ground_basis
    g = ground_basis
    block = tuple((i,) for i in range(a - 1, b))
    a_op = Operator(np.asarray(a_mat, dtype=complex), block, space)
    a_full = embed(a_op, vol.sites).dense()
    om = fam.omega(np.asarray(a_mat, dtype=complex), b - a + 1)
    m = g.conj().T @ a_full @ g
    lhs = float(np.linalg.norm(m - om * np.eye(g.shape[1]), 2))
    cn = fam.c / (1.0 - fam.c * tr_inv * fam.lam ** length)
    na = float(np.linalg.norm(np.asarray(a_mat), 2))
    rhs = cn * (tr_inv * (fam.lam ** length + fam.lam ** (a - 1))
                + fam.lam ** (length - b)) * na
    return lhs, float(rhs), float(rhs - lhs)


def mps_ltqo_omega(fam: MpsFamily, n: int) -> float:
    """Omega(n) = 2 C(n) (2 Tr(rho^-1) + 1) lambda^n for the radius claim."""
    tr_inv = float(np.trace(np.linalg.inv(fam.rho)).real)
    denom = 1.0 - fam.c * tr_inv * fam.lam ** n
    if denom <= 0:
        return float("inf")
    cn = fam.c / denom
    return 2.0 * cn * (2.0 * tr_inv + 1.0) * fam.lam ** n


def cross_overlap_norm(fam_i: MpsFamily, fam_j: MpsFamily) -> float:
    """||F||_{rho_2}: largest singular value of F(B) = sum v_i^* B w_i in the
    rho_2-weighted geometry (rho_2 from fam_j)."""
    if fam_i.d != fam_j.d:
        raise ValueError("families must share the physical dimension")
    rho2 = fam_j.rho
    s = _sqrtm_psd(rho2)
    si = np.linalg.inv(s)
    m = np.zeros((fam_i.k * fam_j.k, fam_i.k * fam_j.k), dtype=complex)
    for v, w in zip(fam_i.kraus, fam_j.kraus):
        m += np.kron(v.conj().T, (si @ w @ s).T)
    return float(np.linalg.norm(m, 2))


def symmetry_broken_family(base: MpsFamily, site_unitaries, distinct_tol=1e-8):
    """Families {omega o sigma_g}: Kraus w_i = sum_j conj(U_ji) v_j per group
    element.  Collapses duplicates (informationally) via cross overlaps.

    Returns (families, kept_indices): families[0] is the base itself.
    """
    fams = []
    kept = []
    for gi, u in enumerate(site_unitaries):
        w = [sum(np.conj(u[j, i]) * base.kraus[j] for j in range(base.d))
             for i in range(base.d)]
        fam = MpsFamily(w, gauge=True)
        distinct = all(cross_overlap_norm(fam, f) < 1 - distinct_tol for f in fams)
        if distinct:
            fams.append(fam)
            kept.append(gi)
    return fams, kept


_PRESETS = {}


def preset_family(name, **params) -> MpsFamily | list:
    """Named Kraus presets: 'aklt', 'diluted_ferro', 'ghz_components',
    'cluster', 'product_up'."""
    sp = np.array([[0, 1], [0, 0]], dtype=complex)
    sm = sp.T.copy()
    sz = np.diag([1.0, -1.0]).astype(complex)
    if name == "aklt":
        return MpsFamily([np.sqrt(2 / 3) * sp, -np.sqrt(1 / 3) * sz,
                          -np.sqrt(2 / 3) * sm])
    if name == "diluted_ferro":
        # spin-1 chain of mostly +1 spins with dilute 0 flips: <S^z> > 0, so
        # the spin flip produces a genuinely distinct partner state
        lam = float(params.get("lam", 0.6))
        mu = float(params.get("mu", 0.5))
        return MpsFamily([
            np.array([[1, 0], [0, lam]], dtype=complex),
            np.array([[0, mu], [mu, 0]], dtype=complex),
            np.zeros((2, 2), dtype=complex),
        ])
    if name == "ghz_components":
        up = MpsFamily([np.array([[1.0]]), np.array([[0.0]])], gauge=False)
        down = MpsFamily([np.array([[0.0]]), np.array([[1.0]])], gauge=False)
        return [up, down]
    if name == "cluster":
        a0 = np.array([[1, 1], [0, 0]], dtype=complex) / np.sqrt(2)
        a1 = np.array([[0, 0], [1, -1]], dtype=complex) / np.sqrt(2)
        return MpsFamily([a0, a1])
    if name == "product_up":
        return MpsFamily([np.array([[1.0]]), np.array([[0.0]])], gauge=False)
    raise KeyError(f"unknown MPS preset {name!r}")


def family_to_json(fam: MpsFamily):
    import json
    return json.dumps({
        "kraus": [[[z.real, z.imag] for z in row] for v in fam.kraus
                  for row in v.tolist()],
        "k": fam.k, "d": fam.d,
    })


def family_from_json(text):
    import json
    obj = json.loads(text)
    k, d = obj["k"], obj["d"]
    flat = obj["kraus"]
    kraus = []
    for i in range(d):
        rows = flat[i * k: (i + 1) * k]
        kraus.append(np.array([[complex(re, im) for re, im in row] for row in rows]))
    return MpsFamily(kraus)
