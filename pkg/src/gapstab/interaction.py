"""Interactions, anchored interactions, F-functions and their norms.

An Interaction maps finite site sets to Hermitian local terms; an
AnchoredInteraction maps (anchor site, ball radius) to terms supported in
that ball.  The anchoring procedure distributes each set-indexed term over
the anchors whose radius-r(X) ball contains it, weighted by the multiplicity
m(X), and reconstructs local Hamiltonians exactly.

F-norm suprema are computed exactly by a double loop over site pairs; no
sampling anywhere.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .lattice import MetricVolume, ball
from .hilbert import Operator, SiteSpace, embed, operator_norm

__all__ = [
    "FFunction",
    "Interaction",
    "AnchoredInteraction",
    "f_norm",
    "anchored_f_norm",
    "anchor",
    "unanchor",
    "anchoring_norm_bound_check",
    "lr_velocity_bound",
]


class FFunction:
    """Decay profile F(r) on the lattice.

    kind 'polynomial': F(r) = (1+r)^-zeta.
    kind 'weighted':   F(r) = exp(-a r^theta) (1+r)^-zeta.
    Defaults for the weighted kind are a=1, theta=1, zeta=nu+2; pass nu when
    relying on them.
    """

    def __init__(self, kind="polynomial", zeta=None, a=None, theta=None, nu=1):
        self.kind = kind
        if kind == "polynomial":
            self.zeta = float(zeta if zeta is not None else nu + 2)
            self.a = 0.0
            self.theta = 1.0
        elif kind == "weighted":
            self.zeta = float(zeta if zeta is not None else nu + 2)
            self.a = float(a if a is not None else 1.0)
            self.theta = float(theta if theta is not None else 1.0)
        else:
            raise ValueError(f"unknown F-function kind {kind!r}")

    def __call__(self, r):
        r = float(r)
        if r < 0:
            raise ValueError("F is defined on r >= 0")
        val = (1.0 + r) ** (-self.zeta)
        if self.kind == "weighted":
            val *= math.exp(-self.a * r ** self.theta)
        return val

    def uniform_integral(self, vol: MetricVolume) -> float:
        """||F|| = sup_x sum_y F(d(x,y)) on the finite volume."""
        return max(sum(self(vol.distance(x, y)) for y in vol.sites) for x in vol.sites)

    def convolution_constant(self, vol: MetricVolume) -> float:
        """C_F = sup_{x,y} sum_z F(d(x,z)) F(d(z,y)) / F(d(x,y)) on the volume."""
        best = 0.0
        for x in vol.sites:
            for y in vol.sites:
                s = sum(self(vol.distance(x, z)) * self(vol.distance(z, y))
                        for z in vol.sites)
                best = max(best, s / self(vol.distance(x, y)))
        return best

    def to_json(self):
        return {"kind": self.kind, "zeta": self.zeta, "a": self.a, "theta": self.theta}

    @classmethod
    def from_json(cls, obj, nu=1):
        return cls(kind=obj.get("kind", "polynomial"), zeta=obj.get("zeta"),
                   a=obj.get("a"), theta=obj.get("theta"), nu=nu)


class Interaction:
    """Map from finite site sets to Hermitian terms (stored on their support)."""

    def __init__(self, space: SiteSpace):
        self.space = space
        self.terms = {}

    def add(self, sites, matrix):
        key = tuple(sorted(sites))
        op = Operator(np.asarray(matrix, dtype=complex), key, self.space)
        if not op.hermitian:
            raise ValueError(f"interaction term on {key} is not Hermitian")
        if key in self.terms:
            self.terms[key] = self.terms[key] + op
        else:
            self.terms[key] = op
        return self

    def items(self):
        return sorted(self.terms.items())

    def range(self, vol: MetricVolume):
        diams = [0]
        for key in self.terms:
            if len(key) > 1:
                diams.append(max(vol.distance(x, y)
                                 for x, y in itertools.combinations(key, 2)))
        return max(diams)

    def uniform_bound(self):
        return max((operator_norm(t) for t in self.terms.values()), default=0.0)

    def _zero_on(self, region, sparse) -> Operator:
        import scipy.sparse as sp
        dim = self.space.dim_of(region)
        if sparse or (sparse is None and dim > 4096):
            data = sp.csr_matrix((dim, dim), dtype=complex)
        else:
            data = np.zeros((dim, dim), dtype=complex)
        return Operator(data, region, self.space, hermitian=True)

    def local_hamiltonian(self, region, sparse=None) -> Operator:
        """H_region = sum of terms with support inside `region` (an Operator on region)."""
        region = tuple(sorted(region))
        rset = set(region)
        dim = self.space.dim_of(region)
        use_sparse = sparse if sparse is not None else dim > 4096
        if use_sparse:
            # accumulate one COO buffer instead of repeated csr additions
            import scipy.sparse as sp
            rows, cols, vals = [], [], []
            for key, term in self.items():
                if set(key).issubset(rset):
                    emb = embed(term, region, sparse=True).data.tocoo()
                    rows.append(emb.row)
                    cols.append(emb.col)
                    vals.append(emb.data)
            if not rows:
                return self._zero_on(region, True)
            mat = sp.coo_matrix(
                (np.concatenate(vals),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(dim, dim)).tocsr()
            return Operator(mat, region, self.space, hermitian=True)
        acc = None
        for key, term in self.items():
            if set(key).issubset(rset):
                emb = embed(term, region, sparse=False)
                acc = emb if acc is None else acc + emb
        return acc if acc is not None else self._zero_on(region, False)

    def restricted_hamiltonian(self, region, touching, sparse=None) -> Operator:
        """Sum of terms inside `region` that intersect `touching` (the V_{Lambda^p} sum)."""
        region = tuple(sorted(region))
        rset, tset = set(region), set(touching)
        acc = None
        for key, term in self.items():
            if set(key).issubset(rset) and set(key) & tset:
                emb = embed(term, region, sparse=sparse)
                acc = emb if acc is None else acc + emb
        return acc if acc is not None else self._zero_on(region, sparse)


class AnchoredInteraction:
    """Map (anchor site x, radius n) -> Hermitian term supported in b_x(n)."""

    def __init__(self, space: SiteSpace, vol: MetricVolume):
        self.space = space
        self.vol = vol
        self.terms = {}

    def add(self, x, n, op: Operator):
        bn = set(ball(self.vol, x, n))
        if not set(op.sites).issubset(bn):
            raise ValueError(f"term at ({x},{n}) leaks outside its ball")
        key = (x, n)
        if key in self.terms:
            a, b = self.terms[key], op
            common = tuple(sorted(set(a.sites) | set(b.sites)))
            self.terms[key] = embed(a, common) + embed(b, common)
        else:
            self.terms[key] = op
        return self

    def items(self):
        return sorted(self.terms.items())

    def max_radius(self):
        return max((n for (_, n) in self.terms), default=0)

    def norm_of(self, x, n):
        t = self.terms.get((x, n))
        return operator_norm(t) if t is not None else 0.0

    def hamiltonian(self, region=None, sparse=None) -> Operator:
        region = tuple(sorted(region if region is not None else self.vol.sites))
        acc = None
        for (x, n), term in self.items():
            emb = embed(term, region, sparse=sparse)
            acc = emb if acc is None else acc + emb
        if acc is None:
            acc = Interaction(self.space).local_hamiltonian(region, sparse=sparse)
        return acc

    def grouped_by_anchor(self):
        """h_x = sum_n Phi(x, n) as operators on b_x(max radius at x)."""
        out = {}
        for (x, n), term in self.items():
            if x not in out:
                out[x] = term
            else:
                common = tuple(sorted(set(out[x].sites) | set(term.sites)))
                out[x] = embed(out[x], common) + embed(term, common)
        return out

    def support_property_check(self):
        """Eq.-style support property: a nonzero (x,n) term needs a site pair
        at distance > n-1 inside its ball.  Returns offending keys."""
        bad = []
        for (x, n), term in self.items():
            if operator_norm(term) <= 1e-14:
                continue
            bn = ball(self.vol, x, n)
            if n >= 1 and not any(self.vol.distance(y, z) > n - 1
                                  for y, z in itertools.combinations(bn, 2)):
                bad.append((x, n))
        return bad


def f_norm(phi: Interaction, vol: MetricVolume, F: FFunction, moment: int = 0) -> float:
    """m-th moment F-norm: sup_{x,y} sum_{X containing x,y} |X|^m ||Phi(X)|| / F(d(x,y))."""
    norms = {key: operator_norm(t) for key, t in phi.items()}
    best = 0.0
    for x in vol.sites:
        for y in vol.sites:
            s = sum((len(key) ** moment) * nv for key, nv in norms.items()
                    if x in key and y in key)
            if s:
                best = max(best, s / F(vol.distance(x, y)))
    return best


def anchored_f_norm(phi: AnchoredInteraction, F: FFunction, moment: int = 0) -> float:
    """sup_{x,y} sum_{(z,n): x,y in b_z(n)} |b_z(n)|^m ||Phi(z,n)|| / F(d(x,y))."""
    vol = phi.vol
    entries = []
    for (z, n), t in phi.items():
        nv = operator_norm(t)
        if nv:
            entries.append((set(ball(vol, z, n)), len(ball(vol, z, n)) ** moment * nv))
    best = 0.0
    for x in vol.sites:
        for y in vol.sites:
            s = sum(w for bset, w in entries if x in bset and y in bset)
            if s:
                best = max(best, s / F(vol.distance(x, y)))
    return best


def _radius_and_multiplicity(vol, pert_region, X):
    """r(X) = min over anchors in the region of the covering radius; m(X) anchors attaining it."""
    rad = None
    for x in pert_region:
        r = max(vol.distance(x, y) for y in X)
        if rad is None or r < rad:
            rad = r
    mult = sum(1 for x in pert_region
               if max(vol.distance(x, y) for y in X) <= rad)
    return rad, mult


def anchor(phi: Interaction, vol: MetricVolume, pert_region=None) -> AnchoredInteraction:
    """Anchoring procedure: Phi_{Lambda^p}(x,n) = sum_{X in S_n, X in b_x(n)} Phi(X)/m(X).

    Only terms intersecting the perturbation region are distributed; the
    anchored Hamiltonian reproduces sum_{X : X cap Lambda^p != 0} Phi(X)
    exactly.
    """
    if pert_region is None:
        pert_region = vol.sites
    pset = set(pert_region)
    if not pset.issubset(set(vol.sites)):
        raise ValueError("perturbation region must lie inside the volume")
    out = AnchoredInteraction(phi.space, vol)
    for key, term in phi.items():
        if not set(key) & pset:
            continue
        if not set(key).issubset(set(vol.sites)):
            raise ValueError(f"term support {key} outside the volume")
        rad, mult = _radius_and_multiplicity(vol, pert_region, key)
        piece = term * (1.0 / mult)
        for x in pert_region:
            if max(vol.distance(x, y) for y in key) <= rad:
                out.add(x, rad, piece)
    return out


def unanchor(phi: AnchoredInteraction) -> Interaction:
    """Group anchored terms by their ball: Phi(X) = sum over (x,n) with b_x(n) = X."""
    out = Interaction(phi.space)
    grouped = {}
    for (x, n), term in phi.items():
        key = ball(phi.vol, x, n)
        grouped.setdefault(key, []).append(term)
    for key, terms in sorted(grouped.items()):
        acc = None
        for t in terms:
            t_full = embed(t, key)
            acc = t_full if acc is None else acc + t_full
        out.add(key, acc.dense())
    return out


def anchoring_norm_bound_check(phi: Interaction, vol: MetricVolume, F: FFunction,
                               moment: int = 0, pert_region=None):
    """Both sides of the anchored-norm proposition per site pair.

    LHS(x,y) = sum over anchored terms whose ball contains both x and y of
    |ball|^m ||term||; RHS(x,y) = 2^nu kappa^(m+2) ||Phi||_F *
    sum_{n >= ceil(d/2)} n^((m+2)nu) F(n-1).  The RHS sum is truncated at the
    volume diameter plus a tail allowance, which only makes the reported
    margin conservative.  Returns (worst_margin, per-pair table).
    """
    anchored = anchor(phi, vol, pert_region)
    base = f_norm(phi, vol, F, 0)
    nu, kappa = vol.nu, vol.kappa
    entries = []
    for (z, n), t in anchored.items():
        b = ball(vol, z, n)
        entries.append((set(b), len(b) ** moment * operator_norm(t)))
    n_hi = vol.diameter() + 8
    table = {}
    worst = None
    for x in vol.sites:
        for y in vol.sites:
            lhs = sum(w for bset, w in entries if x in bset and y in bset)
            d = vol.distance(x, y)
            rhs = (2 ** nu) * kappa ** (moment + 2) * base * sum(
                n ** ((moment + 2) * nu) * F(max(0, n - 1))
                for n in range(max(1, math.ceil(d / 2)), n_hi + 1))
            margin = rhs - lhs
            table[(x, y)] = (lhs, rhs, margin)
            if worst is None or margin < worst[2]:
                worst = (x, y, margin)
    return worst[2], table


def lr_velocity_bound(phi: AnchoredInteraction, F: FFunction) -> float:
    """v <= 2 C_F ||Phi_Lambda||_F with C_F computed on the finite volume."""
    return 2.0 * F.convolution_constant(phi.vol) * anchored_f_norm(phi, F, 0)
