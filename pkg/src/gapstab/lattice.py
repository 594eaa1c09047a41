"""Finite metric volumes: sublattices of Z^nu with open or periodic metrics.

All distances are exact integers so that ball membership is never decided by
a floating-point comparison.  A volume knows its sites (integer coordinate
tuples), its metric, and the regularity data (nu, kappa) used by every norm
estimate downstream.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

__all__ = [
    "MetricVolume",
    "SeparatingPartitionFamily",
    "chain_volume",
    "box_volume",
    "torus_volume",
    "ball",
    "regularity_audit",
    "build_separating_partitions",
    "volume_to_json",
    "volume_from_json",
]

_METRICS = ("open_linf", "open_l1", "periodic_l1")


def _check_site(site):
    if not isinstance(site, tuple) or not all(isinstance(c, int) for c in site):
        raise ValueError(f"sites must be tuples of ints, got {site!r}")


@dataclass(frozen=True)
class MetricVolume:
    """A finite set of integer-coordinate sites with an integer metric.

    metric_kind is one of 'open_linf', 'open_l1' (restriction of the ambient
    lattice metric) or 'periodic_l1' (graph metric of the torus with the
    given extents).  ``scale`` divides every raw distance; it must divide all
    pairwise distances exactly (used by the toric-code edge lattice, where
    doubled coordinates make raw l1 distances even).
    """

    sites: tuple
    metric_kind: str = "open_linf"
    extents: tuple | None = None
    nu: int = 1
    kappa: float = 3.0
    scale: int = 1
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.metric_kind not in _METRICS:
            raise ValueError(f"unknown metric_kind {self.metric_kind!r}")
        if self.metric_kind == "periodic_l1" and self.extents is None:
            raise ValueError("periodic metric requires extents")
        for s in self.sites:
            _check_site(s)
        if len(set(self.sites)) != len(self.sites):
            raise ValueError("duplicate sites")
        object.__setattr__(self, "sites", tuple(sorted(self.sites)))
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.sites)})

    def __len__(self):
        return len(self.sites)

    def __contains__(self, site):
        return site in self._index

    def site_index(self, site):
        try:
            return self._index[site]
        except KeyError:
            raise KeyError(f"site {site!r} not in volume") from None

    def distance(self, x, y) -> int:
        if x not in self._index or y not in self._index:
            raise KeyError(f"distance requires volume sites, got {x!r}, {y!r}")
        if self.metric_kind == "open_linf":
            d = max(abs(a - b) for a, b in zip(x, y))
        elif self.metric_kind == "open_l1":
            d = sum(abs(a - b) for a, b in zip(x, y))
        else:
            d = 0
            for a, b, n in zip(x, y, self.extents):
                da = abs(a - b) % n
                d += min(da, n - da)
        if d % self.scale:
            raise ValueError(f"distance {d} not divisible by scale {self.scale}")
        return d // self.scale

    def diameter(self) -> int:
        if len(self.sites) <= 1:
            return 0
        return max(self.distance(x, y) for x, y in itertools.combinations(self.sites, 2))

    def set_distance(self, xs, ys) -> int:
        return min(self.distance(x, y) for x in xs for y in ys)

    def boundary_distance(self, x) -> int:
        """Distance from x to the complement of the volume's bounding box.

        Meaningful for open volumes only; periodic volumes have no boundary
        and return the diameter.
        """
        if self.metric_kind == "periodic_l1":
            return self.diameter()
        lo = [min(s[i] for s in self.sites) for i in range(len(x))]
        hi = [max(s[i] for s in self.sites) for i in range(len(x))]
        return min(min(x[i] - lo[i], hi[i] - x[i]) for i in range(len(x))) + 0


def chain_volume(length: int) -> MetricVolume:
    """Open chain [0, length) with the l-infinity (= l1) metric, nu = 1."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return MetricVolume(tuple((i,) for i in range(length)), "open_linf", nu=1, kappa=3.0)


def box_volume(extents) -> MetricVolume:
    """Open box prod_i [0, extents_i) with the l-infinity metric."""
    nu = len(extents)
    sites = tuple(itertools.product(*[range(n) for n in extents]))
    return MetricVolume(sites, "open_linf", nu=nu, kappa=float(3 ** nu))


def torus_volume(extents) -> MetricVolume:
    """Torus prod_i Z/(extents_i Z) with the periodic graph (l1) metric."""
    nu = len(extents)
    sites = tuple(itertools.product(*[range(n) for n in extents]))
    # l1 balls |b(n)| <= 2 n^nu (nu=1) resp. 2n^2+2n+1 <= 5 n^2 (nu=2); take a
    # safe uniform constant.
    return MetricVolume(sites, "periodic_l1", extents=tuple(extents), nu=nu,
                        kappa=float(5 ** nu))


def ball(vol: MetricVolume, x, n: int):
    """b_x(n) = {y in vol : d(x,y) <= n}, as a sorted tuple of sites."""
    if x not in vol:
        raise KeyError(f"unknown site {x!r}")
    if n < 0:
        return ()
    return tuple(y for y in vol.sites if vol.distance(x, y) <= n)


def regularity_audit(vol: MetricVolume):
    """Smallest kappa with |b_x(n)| <= kappa * n^nu for all x and 1 <= n <= diam.

    Returns (nu, kappa_min, ok) where ok says whether the declared
    vol.kappa validates the bound.
    """
    diam = vol.diameter()
    kappa_min = 0.0
    for x in vol.sites:
        dists = sorted(vol.distance(x, y) for y in vol.sites)
        for n in range(1, max(diam, 1) + 1):
            size = sum(1 for d in dists if d <= n)
            kappa_min = max(kappa_min, size / n ** vol.nu)
    if diam == 0:
        kappa_min = 1.0
    return vol.nu, kappa_min, kappa_min <= vol.kappa


@dataclass(frozen=True)
class SeparatingPartitionFamily:
    """Per-scale partitions T_n of the volume separating the region family.

    partitions[n] is a tuple of disjoint site tuples covering the volume such
    that regions anchored at distinct sites of one class are disjoint.
    """

    partitions: dict
    growth_c: float
    growth_zeta: float
    scale_range: tuple

    def classes(self, n):
        return self.partitions[n]


class SeparationError(ValueError):
    pass


def build_separating_partitions(vol: MetricVolume, region_fn=None, scale_range=None):
    """Congruence-class partitions T_n^x = {z : z_i = x_i mod 2n+1} on the volume.

    region_fn(x, n) defaults to the ball map and must contain b_x(n).  The
    separation invariant is verified exhaustively; the first offending pair is
    reported on failure.  Growth certificate is (3^nu, nu) for the ball map.
    """
    if region_fn is None:
        region_fn = lambda x, n: ball(vol, x, n)
    if scale_range is None:
        scale_range = (1, max(vol.diameter(), 1))
    lo, hi = scale_range
    if lo < 1:
        raise ValueError("partition scales start at 1; n=0 is the trivial singleton partition")
    dim = len(vol.sites[0])
    partitions = {}
    for n in range(lo, hi + 1):
        period = 2 * n + 1
        classes = {}
        for z in vol.sites:
            key = tuple(c % period for c in z)
            classes.setdefault(key, []).append(z)
        parts = tuple(tuple(v) for _, v in sorted(classes.items()))
        for part in parts:
            for x, y in itertools.combinations(part, 2):
                rx, ry = set(region_fn(x, n)), set(region_fn(y, n))
                if not rx.issuperset(ball(vol, x, n)):
                    raise ValueError("region_fn must contain the ball map")
                if rx & ry:
                    raise SeparationError(
                        f"regions overlap at scale {n} for anchors {x}, {y}")
        partitions[n] = parts
    return SeparatingPartitionFamily(
        partitions=partitions,
        growth_c=float(3 ** dim),
        growth_zeta=float(dim),
        scale_range=(lo, hi),
    )


def volume_to_json(vol: MetricVolume) -> str:
    dim = len(vol.sites[0])
    lo = [min(s[i] for s in vol.sites) for i in range(dim)]
    hi = [max(s[i] for s in vol.sites) for i in range(dim)]
    obj = {
        "dim": dim,
        "extents": list(vol.extents) if vol.extents else [h - l + 1 for l, h in zip(lo, hi)],
        "metric": vol.metric_kind,
        "boundary": "periodic" if vol.metric_kind == "periodic_l1" else "open",
        "sites": [list(s) for s in vol.sites],
        "nu": vol.nu,
        "kappa": vol.kappa,
        "scale": vol.scale,
    }
    return json.dumps(obj, sort_keys=True)


def volume_from_json(text: str) -> MetricVolume:
    obj = json.loads(text)
    return MetricVolume(
        sites=tuple(tuple(s) for s in obj["sites"]),
        metric_kind=obj["metric"],
        extents=tuple(obj["extents"]) if obj["boundary"] == "periodic" else None,
        nu=obj["nu"],
        kappa=obj["kappa"],
        scale=obj.get("scale", 1),
    )
