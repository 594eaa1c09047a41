"""Indistinguishability radii: plain, symmetry-restricted, and symmetry-broken.

The radius of a frustration-free model at x is the largest r such that for
all 0 <= k < n <= r and observables A on b_x(k),

    || P_{b_x(n)} A P_{b_x(n)} - omega(A) P_{b_x(n)} ||
        <= |b_x(k)| ||A|| Omega(n - k).

Pairs whose balls coincide as site sets are excluded (in particular k = n,
but also k < n once b_x(k) saturates at the volume edge): for a coinciding
pair the condition degenerates to exact scalarness of compressed full-ball
observables, which fails for any model with degenerate local kernels, while
every downstream use of the bound compresses an observable on a strictly
smaller ball.

The sup over unit-norm A is evaluated through the centered compression map
N: A |-> G_n^* A G_n - omega(A) 1 assembled once per (x, k, n) on the
Hermitian matrix-unit basis of the ball algebra (exact, and exhaustive for
ball dimension <= probe_cap); larger balls fall back to seeded random
probes and the radius is then only a certified lower bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import MetricVolume, ball
from .hilbert import DENSE_CAP, Operator, embed, operator_norm
from .spectra import diagonalize

__all__ = [
    "OmegaFunction",
    "GroundData",
    "SiteRadius",
    "RadiusReport",
    "radius",
    "radius_report",
    "g_symmetric_radius",
    "g_broken_radius",
    "projector_norm_gap",
    "fit_omega",
]


class OmegaFunction:
    """Non-increasing, non-negative LTQO decay function."""

    def __init__(self, kind, **params):
        self.kind = kind
        self.params = params
        if kind not in ("zero", "step", "exponential", "tabulated"):
            raise ValueError(f"unknown Omega kind {kind!r}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def step(cls, height, cutoff):
        return cls("step", height=float(height), cutoff=float(cutoff))

    @classmethod
    def exponential(cls, C, lam):
        return cls("exponential", C=float(C), lam=float(lam))

    @classmethod
    def tabulated(cls, values):
        return cls("tabulated", values=dict(values))

    def __call__(self, m):
        if self.kind == "zero":
            return 0.0
        if self.kind == "step":
            return self.params["height"] if m <= self.params["cutoff"] else 0.0
        if self.kind == "exponential":
            return self.params["C"] * math.exp(-self.params["lam"] * m)
        vals = self.params["values"]
        keys = sorted(vals)
        if not keys:
            return 0.0
        if m <= keys[0]:
            return vals[keys[0]]
        for k in keys:
            if k >= m:
                return vals[k]
        return vals[keys[-1]]

    def to_json(self):
        return {"kind": self.kind, **{k: v for k, v in self.params.items()}}


def _group_columns(vecs, region, front, space):
    """Reshape region-space columns to (d_front, d_rest, ncols)."""
    region = tuple(sorted(region))
    front = tuple(sorted(front))
    rest = tuple(s for s in region if s not in set(front))
    dims = [space.dims[s] for s in region]
    q = vecs.shape[1]
    t = vecs.reshape(dims + [q])
    pos = {s: i for i, s in enumerate(region)}
    perm = [pos[s] for s in front] + [pos[s] for s in rest] + [len(region)]
    t = np.transpose(t, perm)
    d_front = int(np.prod([space.dims[s] for s in front])) if front else 1
    d_rest = int(np.prod([space.dims[s] for s in rest])) if rest else 1
    return t.reshape(d_front, d_rest, q)


class GroundData:
    """Kernel bases of the local Hamiltonians of a frustration-free model."""

    def __init__(self, phi, vol: MetricVolume, kernel_k=24):
        self.phi = phi
        self.vol = vol
        self.space = phi.space
        self.kernel_k = kernel_k
        self._kernels = {}

    def region_kernel(self, region) -> np.ndarray:
        region = tuple(sorted(region))
        if region not in self._kernels:
            dim = self.space.dim_of(region)
            H = self.phi.local_hamiltonian(region, sparse=(dim >= DENSE_CAP))
            sd = diagonalize(H, k=self.kernel_k)
            if not sd.full and sd.ground_dim >= len(sd.eigenvalues):
                raise RuntimeError(
                    f"kernel of region {region} not resolved with k={self.kernel_k}")
            self._kernels[region] = np.ascontiguousarray(sd.ground_basis)
        return self._kernels[region]

    def global_ground(self) -> np.ndarray:
        return self.region_kernel(self.vol.sites)

    def reduced_ground_density(self, sites) -> np.ndarray:
        """omega restricted to `sites`: Tr(P A)/Tr(P) = Tr(rho A) for A there."""
        g = self.global_ground()
        gk = _group_columns(g, self.vol.sites, sites, self.space)
        # rho[i, j] = (1/Q) sum_q sum_r gk[i, r, q] conj(gk[j, r, q])
        return np.einsum("irq,jrq->ij", gk, gk.conj()) / g.shape[1]

    def omega(self, op: Operator) -> float:
        rho = self.reduced_ground_density(op.sites)
        return complex(np.einsum("ij,ji->", rho, op.dense()))


def _compression_tensor(ground: GroundData, x, k, n, transforms=None):
    """M[A,B,i,j] = <G_A, E_ij (x) 1 G_B> on region b_x(n), probe ball b_x(k).

    With `transforms` (a list of region-kron unitaries), M is averaged over
    the transformed kernels, which evaluates probes symmetrized by the group.
    """
    vol, space = ground.vol, ground.space
    region = ball(vol, x, n)
    bk = ball(vol, x, k)
    g = ground.region_kernel(region)
    mats = [g] if transforms is None else [u.conj().T @ g for u in transforms]
    m_acc = None
    for gg in mats:
        gk = _group_columns(gg, region, bk, space)
        m = np.einsum("irA,jrB->ABij", gk.conj(), gk, optimize=True)
        m_acc = m if m_acc is None else m_acc + m
    return m_acc / len(mats), region, bk


def _centered_tensor(M, rho_k):
    q = M.shape[0]
    eye = np.eye(q)
    return M - np.einsum("AB,ji->ABij", eye, rho_k)


def _hermitian_units(d):
    """Labels and builders for the unit-norm Hermitian basis of M_d."""
    for i in range(d):
        yield f"E[{i},{i}]", ((i, i, 1.0),)
    for i in range(d):
        for j in range(i + 1, d):
            yield f"X[{i},{j}]", ((i, j, 1.0), (j, i, 1.0))
            yield f"Y[{i},{j}]", ((i, j, -1j), (j, i, 1j))


def _hermitian_unit_checks(N, bound, tol, bk_transforms=None):
    """Check every Hermitian matrix-unit probe against `bound`.

    With bk_transforms (group unitaries on the probe ball) the tensor N is
    assumed symmetrized, so each column is the image of the symmetrized
    probe; the norm of the symmetrized probe then rescales its bound.
    Returns (ok, witness) with the worst normalized violation.
    """
    d = N.shape[2]
    worst = (0.0, None)
    for name, entries in _hermitian_units(d):
        mat = sum(c * N[:, :, i, j] for i, j, c in entries)
        val = float(np.linalg.norm(mat, 2))
        if bk_transforms is not None:
            probe = np.zeros((d, d), dtype=complex)
            for i, j, c in entries:
                probe[i, j] = c
            sym = sum(u @ probe @ u.conj().T for u in bk_transforms) / len(bk_transforms)
            na = float(np.linalg.norm(sym, 2))
            if na < 1e-12:
                continue
            val = val / na
        if val > worst[0]:
            worst = (val, name)
    return worst[0] <= bound + tol, worst


def _sampled_checks(ground, x, k, n, bound, tol, rng, n_probes, transforms=None):
    """Random Pauli-string probes for balls too large to exhaust."""
    from .models import PAULI
    vol, space = ground.vol, ground.space
    region = ball(vol, x, n)
    bk = ball(vol, x, k)
    g = ground.region_kernel(region)
    rho_k = ground.reduced_ground_density(bk)
    labels = ["I", "X", "Y", "Z"]
    worst = (0.0, None)
    for t in range(n_probes):
        labs = [labels[i] for i in rng.integers(0, 4, size=len(bk))]
        if all(l == "I" for l in labs):
            continue
        mat = np.array([[1.0 + 0j]])
        for l in labs:
            mat = np.kron(mat, PAULI[l])
        a = Operator(mat, bk, space)
        if transforms is not None:
            acc = sum(u(a.dense()) for u in transforms) / len(transforms)
            na = np.linalg.norm(acc, 2)
            if na < 1e-12:
                continue
            a = Operator(acc, bk, space)
        else:
            na = 1.0
        a_reg = embed(a, region)
        comp = g.conj().T @ (a_reg.data @ g)
        om = complex(np.einsum("ij,ji->", rho_k, a.dense()))
        val = float(np.linalg.norm(comp - om * np.eye(g.shape[1]), 2)) / na
        if val > worst[0]:
            worst = (val, f"pauli:{''.join(labs)}")
    return worst[0] <= bound + tol, worst


@dataclass
class SiteRadius:
    site: tuple
    radius: int
    certified: bool
    witness: str | None = None
    variant: str = "plain"


@dataclass
class RadiusReport:
    radii: dict
    variant: str
    omega: dict
    certified: bool
    witnesses: dict = field(default_factory=dict)

    def lipschitz_violations(self, vol):
        bad = []
        for x, rx in self.radii.items():
            for y, ry in self.radii.items():
                if abs(rx - ry) > vol.distance(x, y):
                    bad.append((x, y))
        return bad

    def to_json(self):
        return json.dumps({
            "variant": self.variant,
            "omega": self.omega,
            "certified": self.certified,
            "radii": [{"site": list(x), "radius": int(r),
                       "witness": self.witnesses.get(x)}
                      for x, r in sorted(self.radii.items())],
        }, sort_keys=True)


def _trivial_rhs(bk_size, omega_val):
    # ||PAP - omega(A) P|| <= 2 ||A|| always, so the check is vacuous when
    # the right-hand side reaches 2
    return bk_size * omega_val >= 2.0


def radius(phi, vol: MetricVolume, Omega: OmegaFunction, x, ground=None,
           probe_cap=256, n_probes=64, rng=None, tol=1e-9,
           transforms_factory=None, variant="plain") -> SiteRadius:
    """Largest r <= diam such that the LTQO bound holds for all k < n <= r."""
    if ground is None:
        ground = GroundData(phi, vol)
    space = phi.space
    diam = vol.diameter()
    certified = True
    witness = None
    best = 0
    for n in range(1, diam + 1):
        ok_n = True
        bn = ball(vol, x, n)
        for k in range(0, n):
            bk = ball(vol, x, k)
            if bk == bn:
                continue
            om = Omega(n - k)
            if _trivial_rhs(len(bk), om):
                continue
            bound = len(bk) * om
            d_k = space.dim_of(bk)
            exhaustive = d_k <= probe_cap and (
                transforms_factory is None or om == 0.0 or d_k <= 64)
            if exhaustive:
                transforms = None
                if transforms_factory is not None:
                    region = ball(vol, x, n)
                    transforms = transforms_factory(region)
                M, region, bk = _compression_tensor(ground, x, k, n, transforms)
                rho_k = ground.reduced_ground_density(bk)
                if transforms_factory is not None:
                    rho_k = _symmetrize_density(rho_k, bk, space, transforms_factory)
                N = _centered_tensor(M, rho_k)
                if om == 0.0:
                    # linearity: zero on the matrix-unit basis certifies the
                    # full sup over the (symmetrized) ball algebra
                    val = float(np.max(np.abs(N)))
                    ok, worst = val <= tol, (val, "centered-map")
                else:
                    bts = transforms_factory(bk) if transforms_factory else None
                    ok, worst = _hermitian_unit_checks(N, bound, tol, bts)
            else:
                certified = False
                rng = rng if rng is not None else np.random.default_rng(0)
                sym = None
                if transforms_factory is not None:
                    sym = _probe_symmetrizers(bk, space, transforms_factory)
                ok, worst = _sampled_checks(ground, x, k, n, bound, tol, rng,
                                            n_probes, transforms=sym)
            if not ok:
                witness = f"(k={k},n={n}) {worst[1]} lhs={worst[0]:.3e} rhs={bound:.3e}"
                ok_n = False
                break
        if not ok_n:
            break
        best = n
    return SiteRadius(x, best, certified, witness, variant)


def _symmetrize_density(rho_k, bk, space, transforms_factory):
    us = transforms_factory(bk)
    return sum(u.conj().T @ rho_k @ u for u in us) / len(us)


def _probe_symmetrizers(bk, space, transforms_factory):
    us = transforms_factory(bk)
    return [lambda a, u=u: u @ a @ u.conj().T for u in us]


def radius_report(phi, vol, Omega, sites=None, variant="plain", **kw) -> RadiusReport:
    ground = kw.pop("ground", None) or GroundData(phi, vol)
    radii, witnesses = {}, {}
    certified = True
    for x in (sites if sites is not None else vol.sites):
        sr = radius(phi, vol, Omega, x, ground=ground, variant=variant, **kw)
        radii[x] = sr.radius
        if sr.witness:
            witnesses[x] = sr.witness
        certified = certified and sr.certified
    return RadiusReport(radii, variant, Omega.to_json(), certified, witnesses)


def _site_kron(region, space, site_unitary):
    mat = np.array([[1.0 + 0j]])
    for s in sorted(region):
        mat = np.kron(mat, site_unitary)
    return mat


def symmetry_transforms_factory(space, site_unitaries):
    """Region -> list of kron-product unitaries for a site-local group."""
    def factory(region):
        return [_site_kron(region, space, u) for u in site_unitaries]
    return factory


def g_symmetric_radius(phi, vol, site_unitaries, Omega, x, ground=None,
                       check_symmetry=True, **kw) -> SiteRadius:
    """Radius over G-invariant probes, G acting site-locally by `site_unitaries`.

    The list must contain the identity element.  Probes A are replaced by
    their group averages A_G; zero symmetrizations drop out automatically.
    """
    if check_symmetry:
        for key, term in phi.items():
            for su in site_unitaries:
                uu = _site_kron(key, phi.space, su)
                if np.linalg.norm(uu @ term.dense() - term.dense() @ uu, 2) > 1e-9:
                    raise ValueError(f"interaction term on {key} is not G-symmetric")
    factory = symmetry_transforms_factory(phi.space, site_unitaries)
    sr = radius(phi, vol, Omega, x, ground=ground,
                transforms_factory=factory, variant="g_symmetric", **kw)
    return sr


def g_broken_radius(phi, vol, component_kernels, component_states, Omega, x,
                    ground=None, pi1_constant=0.0, tol=1e-9, probe_cap=256,
                    **kw):
    """Symmetry-broken radius per the N-phase orthogonality condition.

    component_kernels: region -> list of orthonormal-column bases (one per
    phase); component_states: list of callables sites -> reduced density
    matrix of the phase state on those sites.  Checks

      || P^i_{b(m)} A P^j_{b(m)} - delta_ij omega_i(A) P^i || <= |b_k| ||A|| Omega(m-k)

    for all phases and all k < m <= r, after verifying the projector-sum
    precondition ||P_b - sum_i P^i_b|| <= pi1_constant * Omega(m) + tol.
    Also reports the cross-projector norms ||P^i P^j||.
    """
    if ground is None:
        ground = GroundData(phi, vol)
    space = phi.space
    ncomp = len(component_states)
    diam = vol.diameter()
    # precondition on every ball used
    for m in range(1, diam + 1):
        region = ball(vol, x, m)
        if space.dim_of(region) > DENSE_CAP:
            continue
        g = ground.region_kernel(region)
        p = g @ g.conj().T
        comps = component_kernels(region)
        psum = sum(c @ c.conj().T for c in comps)
        if np.linalg.norm(p - psum, 2) > pi1_constant * Omega(m) + 1e-7:
            raise ValueError(
                f"component projectors do not sum to P on ball radius {m}")
    cross = {}
    best, witness = 0, None
    for n in range(1, diam + 1):
        region = ball(vol, x, n)
        comps = component_kernels(region)
        for i in range(ncomp):
            for j in range(ncomp):
                val = np.linalg.norm(comps[i].conj().T @ comps[j], 2)
                if i != j:
                    cross[(i, j, n)] = float(val)
        ok_n = True
        for k in range(0, n):
            bk = ball(vol, x, k)
            if bk == region:
                continue
            om = Omega(n - k)
            if _trivial_rhs(len(bk), om):
                continue
            bound = len(bk) * om
            d_k = space.dim_of(bk)
            if d_k > probe_cap:
                raise NotImplementedError(
                    "sampled probes for g_broken radii are not implemented; "
                    "restrict to balls within probe_cap")
            for i in range(ncomp):
                gi = _group_columns(comps[i], region, bk, space)
                for j in range(ncomp):
                    gj = _group_columns(comps[j], region, bk, space)
                    m_ij = np.einsum("irA,jrB->ABij", gi.conj(), gj, optimize=True)
                    if i == j:
                        rho = np.asarray(component_states[i](bk), dtype=complex)
                        n_ij = m_ij - np.einsum(
                            "AB,ji->ABij", np.eye(m_ij.shape[0]), rho)
                    else:
                        n_ij = m_ij
                    if om == 0.0:
                        ok = bool(np.max(np.abs(n_ij)) <= tol)
                        worst = (float(np.max(np.abs(n_ij))), "centered-map")
                    else:
                        ok, worst = _hermitian_unit_checks(n_ij, bound, tol)
                    if not ok:
                        witness = (f"(i={i},j={j},k={k},n={n}) {worst[1]} "
                                   f"lhs={worst[0]:.3e} rhs={bound:.3e}")
                        ok_n = False
                        break
                if not ok_n:
                    break
            if not ok_n:
                break
        if not ok_n:
            break
        best = n
    return SiteRadius(x, best, True, witness, "g_broken"), cross




def projector_norm_gap(phi, vol, x, k, n, a_op: Operator, Omega, ground=None):
    """| ||A P_{b(n)}|| - ||A P_Lambda|| | and its bound ||A|| sqrt(2 |b_k| Omega(n-k))."""
    if ground is None:
        ground = GroundData(phi, vol)
    bk = ball(vol, x, k)
    if not set(a_op.sites).issubset(set(bk)):
        raise ValueError("probe must live on the k-ball")
    region = ball(vol, x, n)
    g_n = ground.region_kernel(region)
    g_full = ground.global_ground()
    a_reg = embed(a_op, region).dense()
    a_full = embed(a_op, vol.sites)
    n1 = float(np.linalg.norm(a_reg @ g_n, 2))
    n2 = float(np.linalg.norm(a_full.dense() @ g_full, 2))
    value = abs(n1 - n2)
    bound = operator_norm(a_op) * math.sqrt(2 * len(bk) * Omega(n - k))
    return value, bound


def fit_omega(phi, vol, sites=None, k_max=1, ground=None):
    """Least-squares exponential fit Omega(m) = C exp(-lam m) of the measured
    worst-case LHS/(|b_k| ||A||) against m = n - k."""
    if ground is None:
        ground = GroundData(phi, vol)
    space = phi.space
    samples = {}
    for x in (sites if sites is not None else vol.sites):
        for n in range(1, vol.diameter() + 1):
            for k in range(0, min(k_max, n - 1) + 1):
                if k >= n:
                    continue
                bk = ball(vol, x, k)
                if bk == ball(vol, x, n) or space.dim_of(bk) > 256:
                    continue
                M, region, bk = _compression_tensor(ground, x, k, n)
                rho_k = ground.reduced_ground_density(bk)
                N = _centered_tensor(M, rho_k)
                _, worst = _hermitian_unit_checks(N, -1.0, 0.0)
                m = n - k
                val = worst[0] / len(bk)
                samples[m] = max(samples.get(m, 0.0), val)
    ms = np.array(sorted(samples))
    vals = np.array([samples[m] for m in ms])
    mask = vals > 1e-14
    if mask.sum() < 2:
        return 0.0, 0.0, samples
    coeffs = np.polyfit(ms[mask], np.log(vals[mask]), 1)
    lam, logc = -coeffs[0], coeffs[1]
    return float(np.exp(logc)), float(lam), samples
