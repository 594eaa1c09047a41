import itertools

import pytest

from gapstab.lattice import (
    MetricVolume, SeparationError, ball, box_volume, build_separating_partitions,
    chain_volume, regularity_audit, torus_volume, volume_from_json, volume_to_json,
)


def brute_ball(vol, x, n):
    # independent oracle: enumerate all pairwise distances directly
    out = []
    for y in vol.sites:
        if vol.metric_kind == "periodic_l1":
            d = sum(min(abs(a - b) % m, (m - abs(a - b)) % m)
                    for a, b, m in zip(x, y, vol.extents))
        elif vol.metric_kind == "open_l1":
            d = sum(abs(a - b) for a, b in zip(x, y))
        else:
            d = max(abs(a - b) for a, b in zip(x, y))
        if d <= n:
            out.append(y)
    return tuple(sorted(out))


def test_ball_on_chain_interior():
    vol = chain_volume(10)
    assert ball(vol, (5,), 2) == tuple((i,) for i in [3, 4, 5, 6, 7])


def test_ball_on_chain_boundary_truncation():
    vol = chain_volume(10)
    assert ball(vol, (0,), 3) == tuple((i,) for i in [0, 1, 2, 3])


def test_ball_unknown_site_raises():
    vol = chain_volume(4)
    with pytest.raises(KeyError):
        ball(vol, (99,), 1)


def test_ball_torus_2x3_graph_metric():
    # oracle: enumerate periodic distances; the radius-1 ball around (0,0)
    # on the 2x3 torus contains the origin plus its distinct neighbors
    vol = torus_volume((2, 3))
    b = ball(vol, (0, 0), 1)
    assert b == brute_ball(vol, (0, 0), 1)
    assert (0, 0) in b
    assert len(b) == 4  # (0,0),(1,0),(0,1),(0,2): +-1 in the extent-2 direction coincide


def test_ball_monotone_in_radius():
    vol = torus_volume((3, 3))
    for x in vol.sites:
        prev = set()
        for n in range(0, vol.diameter() + 1):
            cur = set(ball(vol, x, n))
            assert prev.issubset(cur)
            prev = cur


def test_periodic_metric_shift_invariance():
    vol = torus_volume((3, 4))
    for x, y in itertools.product(vol.sites, repeat=2):
        for a in [(1, 0), (0, 1), (2, 3)]:
            xs = tuple((c + d) % m for c, d, m in zip(x, a, vol.extents))
            ys = tuple((c + d) % m for c, d, m in zip(y, a, vol.extents))
            assert vol.distance(x, y) == vol.distance(xs, ys)


def test_regularity_chain():
    vol = chain_volume(9)
    nu, kappa_min, ok = regularity_audit(vol)
    assert nu == 1
    assert kappa_min <= 3.0  # |b(n)| <= 2n+1 <= 3n for n >= 1
    assert ok


def test_regularity_single_site():
    vol = MetricVolume(((0,),), "open_linf", nu=1, kappa=1.0)
    _, kappa_min, ok = regularity_audit(vol)
    assert kappa_min == 1.0
    assert ok


def test_regularity_square_box():
    vol = box_volume((7, 7))  # [-L,L]^2 up to translation
    nu, kappa_min, ok = regularity_audit(vol)
    assert nu == 2
    assert kappa_min <= 9.0  # (2n+1)^2 <= 9 n^2 for n >= 1
    assert ok


def test_separating_partitions_paper_example():
    # Lambda = [-2,2], n=1: classes z = 0,1,2 mod 3, in-class distance >= 3
    vol = MetricVolume(tuple((i,) for i in range(-2, 3)), "open_linf", nu=1)
    fam = build_separating_partitions(vol, scale_range=(1, 1))
    parts = fam.classes(1)
    assert len(parts) == 3
    assert fam.growth_c == 3.0 and fam.growth_zeta == 1.0
    for part in parts:
        for x, y in itertools.combinations(part, 2):
            assert vol.distance(x, y) >= 3


def test_separating_partitions_scale_diameter_singletons():
    vol = chain_volume(5)
    n = vol.diameter()
    fam = build_separating_partitions(vol, scale_range=(n, n))
    for part in fam.classes(n):
        assert len(part) == 1


def test_separating_partitions_exhaustive_distance_check():
    vol = chain_volume(8)
    fam = build_separating_partitions(vol, scale_range=(2, 2))
    assert len(fam.classes(2)) == 5
    for part in fam.classes(2):
        for x, y in itertools.combinations(part, 2):
            assert vol.distance(x, y) >= 5


def test_partitions_cover_and_disjoint():
    vol = torus_volume((3, 3))
    fam = build_separating_partitions(vol, scale_range=(1, 2))
    for n in (1, 2):
        seen = []
        for part in fam.classes(n):
            seen.extend(part)
        assert sorted(seen) == list(vol.sites)


def test_separation_failure_reports_witness():
    # an oversized region function must trip the exhaustive check
    vol = chain_volume(6)
    region = lambda x, n: ball(vol, x, n + 3)
    with pytest.raises(SeparationError):
        build_separating_partitions(vol, region_fn=region, scale_range=(1, 1))


def test_volume_json_roundtrip():
    for vol in [chain_volume(5), torus_volume((2, 3))]:
        again = volume_from_json(volume_to_json(vol))
        assert again.sites == vol.sites
        assert again.metric_kind == vol.metric_kind
        assert again.diameter() == vol.diameter()
