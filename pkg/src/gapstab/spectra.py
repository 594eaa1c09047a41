"""Eigensolvers, gaps, ground projectors, and the Sigma1/Sigma2 bookkeeping.

Dense full diagonalization below DENSE_CAP, Lanczos lowest-k above.  Kernel
detection uses eigenvalue < KERNEL_RTOL * ||H||, which is safe because the
frustration-free ground energies are exactly zero and numerical error is
additive.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import MetricVolume, ball
from .hilbert import DENSE_CAP, Operator, operator_norm

__all__ = [
    "SpectralData",
    "GapCurve",
    "diagonalize",
    "ground_space",
    "frustration_free_check",
    "gap_curve",
    "level_repulsion_check",
    "perturbation_gap_bound",
    "stab_gap_lower_bound",
]

KERNEL_RTOL = 1e-8
PROJECTOR_TOL = 1e-10

# optional directory for memoized eigendecompositions (set via
# GAPSTAB_CACHE_DIR); purely a speed-up, results are identical either way
CACHE_DIR = None


def _cache_lookup(mat, k):
    import hashlib
    import os
    if CACHE_DIR is None or sp.issparse(mat):
        return None, None
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mat).tobytes())
    h.update(str(k).encode())
    key = h.hexdigest()
    path = os.path.join(CACHE_DIR, f"eig_{key}.npz")
    if os.path.exists(path):
        data = np.load(path)
        return (data["vals"], data["vecs"]), path
    return None, path


def _cache_store(path, vals, vecs):
    if path is not None:
        np.savez(path, vals=vals, vecs=vecs)


@dataclass
class SpectralData:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    ground_dim: int
    ground_energy: float
    gap: float
    full: bool
    norm_scale: float

    @property
    def ground_basis(self):
        return self.vectors[:, : self.ground_dim]

    def ground_projector(self):
        g = self.ground_basis
        return g @ g.conj().T


class ConvergenceError(RuntimeError):
    pass


def _matrix_of(H):
    return H.data if isinstance(H, Operator) else H


def _norm_scale(mat):
    if sp.issparse(mat):
        if mat.nnz == 0:
            return 0.0
        return float(abs(spla.eigsh(mat, k=1, which="LM",
                                    return_eigenvectors=False, tol=1e-6)[0]))
    return float(np.max(np.abs(np.linalg.eigvalsh(mat)))) if mat.size else 0.0


def diagonalize(H, k: int | None = None, cluster_rtol=KERNEL_RTOL) -> SpectralData:
    """Full dense spectrum below DENSE_CAP, else lowest-k Lanczos pairs.

    The ground cluster is the set of eigenvalues within
    cluster_rtol * ||H|| of the minimum; `gap` is the distance from that
    cluster to the rest of the computed spectrum.
    """
    mat = _matrix_of(H)
    dim = mat.shape[0]
    dense = (not sp.issparse(mat)) or dim < DENSE_CAP
    if dense:
        arr = mat.toarray() if sp.issparse(mat) else mat
        cached, cpath = _cache_lookup(arr, "full")
        if cached is not None:
            vals, vecs = cached
        else:
            vals, vecs = np.linalg.eigh(arr)
            _cache_store(cpath, vals, vecs)
        full = True
    else:
        kk = min(k or 64, dim - 2)
        try:
            vals, vecs = spla.eigsh(mat, k=kk, which="SA", maxiter=20000, tol=0)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"Lanczos failed to converge: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        full = False
        resid = np.linalg.norm(mat @ vecs - vecs * vals, axis=0)
        scale = max(_norm_scale(mat), 1e-300)
        if np.any(resid > 1e-9 * scale):
            raise ConvergenceError(
                f"residuals {resid.max():.2e} exceed 1e-9 * ||H|| = {1e-9 * scale:.2e}")
    scale = max(float(np.max(np.abs(vals))) if len(vals) else 0.0, 1e-300)
    tol = cluster_rtol * scale
    ground_energy = float(vals[0])
    q = int(np.sum(vals <= ground_energy + tol))
    if not dense and q > 1:
        # ARPACK Ritz vectors of a degenerate cluster need not be mutually
        # orthogonal; re-orthonormalize within the cluster span
        gq, _ = np.linalg.qr(vecs[:, :q])
        vecs = vecs.copy()
        vecs[:, :q] = gq
    gap = float(vals[q] - vals[q - 1]) if q < len(vals) else float("inf")
    return SpectralData(vals, vecs, q, ground_energy, gap, full, scale)


def ground_space(H, k=None):
    """Orthonormal basis of the (numerical) kernel cluster."""
    sd = diagonalize(H, k=k)
    return sd.ground_basis, sd


@dataclass
class FFReport:
    ok: bool
    min_energy: float
    failures: list = field(default_factory=list)


def frustration_free_check(phi, vol: MetricVolume, max_ball_dim=DENSE_CAP,
                           tol=1e-9) -> FFReport:
    """Verify min spec(H_Lambda) = 0 and the nested ground-projector identity.

    Checks P_B2 P_B1 = P_B1 P_B2 = P_B2 on all nested ball pairs whose larger
    ball stays below `max_ball_dim`; failures list the offending subvolumes.
    """
    for key, term in phi.items():
        vals = np.linalg.eigvalsh(term.dense())
        if vals[0] < -tol:
            return FFReport(False, float(vals[0]), [("term not PSD", key)])
    H = phi.local_hamiltonian(vol.sites)
    sd = diagonalize(H)
    failures = []
    if abs(sd.ground_energy) > tol * max(sd.norm_scale, 1.0):
        failures.append(("ground energy nonzero", vol.sites, sd.ground_energy))
    balls = {}
    for x in vol.sites:
        for n in range(0, vol.diameter() + 1):
            b = ball(vol, x, n)
            if phi.space.dim_of(b) <= max_ball_dim:
                balls[b] = None
    balls[tuple(vol.sites)] = None
    proj = {}
    for b in balls:
        g, _ = ground_space(phi.local_hamiltonian(b))
        proj[b] = g
    for b1, b2 in itertools.product(balls, repeat=2):
        if b1 == b2 or not set(b1).issubset(set(b2)):
            continue
        # embed the small-ball projector into the big ball's space
        from .hilbert import embed
        g1 = proj[b1]
        g2 = proj[b2]
        p1 = Operator(g1 @ g1.conj().T, b1, phi.space)
        p1 = embed(p1, b2).dense()
        p2 = g2 @ g2.conj().T
        if np.linalg.norm(p2 @ p1 - p2) > tol * 10 or np.linalg.norm(p1 @ p2 - p2) > tol * 10:
            failures.append(("nested projector identity fails", b1, b2))
    return FFReport(not failures, float(sd.ground_energy), failures)


@dataclass
class GapCurve:
    s_grid: np.ndarray
    gaps: np.ndarray
    sigma1_diameters: np.ndarray
    ground_energies: np.ndarray
    s_gamma_empirical: dict
    ambiguous_points: list
    spectra: list = field(default=None, repr=False)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("s,gap,diamSigma1,groundEnergy\n")
            for s, g, d, e in zip(self.s_grid, self.gaps, self.sigma1_diameters,
                                  self.ground_energies):
                fh.write(f"{float(s)!r},{float(g)!r},{float(d)!r},{float(e)!r}\n")


def gap_curve(H0, V, s_grid, gamma_list=(), crossing_tol=1e-10,
              keep_spectra=False) -> GapCurve:
    """Track Sigma1(s) (the branch group connected to the s=0 ground cluster)
    through full spectra on the grid.

    Sigma1 is labeled by eigenvalue count continuity: it consists of the
    lowest q eigenvalues where q = dim ker H0.  Near-crossings between the
    q-th and (q+1)-th levels are flagged as ambiguous, not resolved.
    """
    mat0 = _matrix_of(H0)
    matv = _matrix_of(V)
    sd0 = diagonalize(H0)
    if abs(sd0.ground_energy) > 1e-8 * max(sd0.norm_scale, 1.0):
        raise ValueError("gap_curve expects a frustration-free H0 (ground energy 0)")
    q = sd0.ground_dim
    s_grid = np.asarray(list(s_grid), dtype=float)
    gaps, diams, energies, spectra = [], [], [], []
    ambiguous = []
    for s in s_grid:
        vals = np.linalg.eigvalsh((mat0 + s * matv) if not sp.issparse(mat0)
                                  else (mat0 + s * matv).toarray())
        gap = float(vals[q] - vals[q - 1]) if q < len(vals) else float("inf")
        if 0 < gap < crossing_tol:
            ambiguous.append(float(s))
        gaps.append(gap)
        diams.append(float(vals[q - 1] - vals[0]))
        energies.append(float(vals[0]))
        if keep_spectra:
            spectra.append(vals)
    gaps = np.array(gaps)
    s_gamma = {}
    for gamma in gamma_list:
        ok = gaps >= gamma
        idx = np.argmax(~ok) if not ok.all() else len(s_grid)
        s_gamma[float(gamma)] = float(s_grid[idx - 1]) if idx > 0 else None
    return GapCurve(s_grid, gaps, np.array(diams), np.array(energies),
                    s_gamma, ambiguous, spectra if keep_spectra else None)


def level_repulsion_check(H, P, tol=1e-9):
    """Level-repulsion interval: a = max spec(PHP|ran P), b = min spec(QHQ|ran Q).

    If a < b, asserts numerically that spec(H) avoids the open interval
    (a, b).  P may be an Operator, a dense projector matrix, or an
    orthonormal-column basis of the subspace.  Returns (a, b, verdict) with
    verdict in {'gap', 'vacuous', 'violated'}.
    """
    mat = _matrix_of(H)
    mat = mat.toarray() if sp.issparse(mat) else mat
    if isinstance(P, Operator):
        P = P.dense()
    P = np.asarray(P)
    if P.shape[0] == P.shape[1] and np.allclose(P, P.conj().T):
        vals, vecs = np.linalg.eigh(P)
        basis = vecs[:, vals > 0.5]
    else:
        basis = P
    comp = np.linalg.svd(np.eye(mat.shape[0]) - basis @ basis.conj().T)[0][:, : mat.shape[0] - basis.shape[1]]
    a = float(np.max(np.linalg.eigvalsh(basis.conj().T @ mat @ basis))) if basis.shape[1] else -np.inf
    b = float(np.min(np.linalg.eigvalsh(comp.conj().T @ mat @ comp))) if comp.shape[1] else np.inf
    if not a < b:
        return a, b, "vacuous"
    evals = np.linalg.eigvalsh(mat)
    inside = evals[(evals > a + tol) & (evals < b - tol)]
    return a, b, ("gap" if inside.size == 0 else "violated")


def perturbation_gap_bound(C, alpha, alpha_p, alpha_pp, beta, gamma, s,
                           higher_gap_interval=None):
    """Interval enclosures for the perturbed spectrum.

    Sigma1 within [C - s*alpha, C + s*alpha']; Sigma2 within
    [C + (1 - s*beta)*gamma - s*alpha'', inf).  With a higher spectral gap
    (a, b) of H, also returns the shrunken interval that stays free of
    spectrum.  Requires s < 1/beta.
    """
    if beta > 0 and s >= 1.0 / beta:
        raise ValueError(f"perturbation bound needs s < 1/beta = {1.0 / beta}")
    sigma1 = (C - s * alpha, C + s * alpha_p)
    sigma2_lo = C + (1 - s * beta) * gamma - s * alpha_pp
    out = {"sigma1": sigma1, "sigma2_lower": sigma2_lo,
           "gap_lower_bound": sigma2_lo - sigma1[1]}
    if higher_gap_interval is not None:
        a, b = higher_gap_interval
        out["higher_gap"] = ((1 + s * beta) * a + s * alpha,
                             (1 - s * beta) * b - s * alpha)
    return out


def stab_gap_lower_bound(gamma_volume, s, beta, delta, epsilon):
    """gap(H(s)) >= gamma_Lambda - s*(beta*gamma_Lambda + delta + 2*epsilon)."""
    return gamma_volume - s * (beta * gamma_volume + delta + 2 * epsilon)
