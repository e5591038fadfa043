import math

import numpy as np
import pytest

from irsvlc.channel import (C_M_PER_NS, ChannelModel, PathContribution, PathKind, PathSet,
                            build_gain_tensor, diffuse_first_order, diffuse_second_order,
                            impulse_response, lambertian_link, lambertian_order, los_gain,
                            mirror_gain)
from irsvlc.geometry import MirrorPose, branch_normal, image_point, specular_point
from irsvlc.scene import ApConfig, Reflectivity, Room, SurfaceElements

from conftest import CENTER

UP = (0.0, 0.0, 1.0)
DOWN = (0.0, 0.0, -1.0)
PD = 20e-6


def ap_at(pos, normal=DOWN, semi=60.0):
    return ApConfig(position=pos, normal=normal, half_power_semiangle_deg=semi)


def elements(centers, normals, areas, refl):
    n = len(areas)
    return SurfaceElements(np.array(centers, float), np.array(normals, float),
                           np.array(areas, float), np.array(refl, float),
                           np.array(["synthetic"] * n, dtype=object))


def hand_link(src, n_src, dst, n_dst, area, m):
    """Lambertian link evaluated term by term with math only."""
    dx = [d - s for s, d in zip(src, dst)]
    d = math.sqrt(sum(c * c for c in dx))
    cos_e = sum(a * b for a, b in zip(n_src, dx)) / d
    cos_r = -sum(a * b for a, b in zip(n_dst, dx)) / d
    if cos_e <= 0 or cos_r <= 0:
        return 0.0, d
    return (m + 1) * area / (2 * math.pi * d * d) * cos_e ** m * cos_r, d


# -- Lambertian order and LoS ----------------------------------------------------

def test_lambertian_order_60():
    assert lambertian_order(60.0) == 1.0


def test_lambertian_order_30():
    assert lambertian_order(30.0) == pytest.approx(-math.log(2) / math.log(math.sqrt(3) / 2), rel=1e-14)
    assert lambertian_order(30.0) == pytest.approx(4.8188, abs=1e-4)


def test_lambertian_order_limit():
    m = [lambertian_order(a) for a in (80.0, 89.0, 89.9, 89.99999)]
    assert all(x > y > 0 for x, y in zip(m, m[1:]))
    assert m[-1] < 0.05


@pytest.mark.parametrize("angle", [0.0, 90.0, -5.0, 120.0])
def test_lambertian_order_domain(angle):
    with pytest.raises(ValueError):
        lambertian_order(angle)


def test_los_nadir():
    g = los_gain(ap_at((2.5, 2.5, 3.0)), (2.5, 2.5, 1.0), UP, PD, 90.0)
    assert g == pytest.approx(2 * PD / (2 * math.pi * 4), rel=1e-12)
    assert g == pytest.approx(1.5915494e-6, rel=1e-7)


def test_los_fov_gate():
    n = branch_normal(0.0, 60.0)
    assert los_gain(ap_at((2.5, 2.5, 3.0)), (2.5, 2.5, 1.0), n, PD, 25.0) == 0.0


def test_los_beside_ap():
    assert los_gain(ap_at((2.5, 2.5, 3.0)), (3.0, 2.5, 3.0), DOWN, PD, 90.0) == 0.0


def test_los_matches_hand_formula(rng):
    for _ in range(200):
        ap = ap_at((*rng.uniform(0, 5, 2), 3.0), semi=rng.uniform(10, 80))
        rx = (*rng.uniform(0, 5, 2), rng.uniform(0, 2.5))
        n = branch_normal(rng.uniform(0, 360), rng.uniform(0, 90))
        want, _ = hand_link(ap.position, ap.normal, rx, n, PD, lambertian_order(ap.half_power_semiangle_deg))
        assert los_gain(ap, rx, n, PD, 90.0) == pytest.approx(want, rel=1e-12, abs=1e-300)


def test_single_link_reciprocity(rng):
    # the m = 1 kernel cos*cos/(pi d^2) is symmetric in its endpoints
    for _ in range(500):
        a, b = rng.uniform(0, 5, 3), rng.uniform(0, 5, 3)
        na, nb = rng.normal(size=3), rng.normal(size=3)
        na, nb = na / np.linalg.norm(na), nb / np.linalg.norm(nb)
        area_a, area_b = rng.uniform(1e-4, 1e-2, 2)
        fwd = lambertian_link(a, na, b, nb, area_b) / area_b
        back = lambertian_link(b, nb, a, na, area_a) / area_a
        assert fwd == pytest.approx(back, rel=1e-12, abs=1e-300)


# -- diffuse -----------------------------------------------------------------------

def test_first_order_single_element():
    ap = ap_at((1.0, 1.0, 3.0))
    rx, n = (2.0, 2.0, 1.0), tuple(branch_normal(225.0, 30.0))
    c, cn, area, rho = (0.0, 1.5, 1.2), (1.0, 0.0, 0.0), 0.0025, 0.8
    el = elements([c], [cn], [area], [rho])
    g1, _ = hand_link(ap.position, DOWN, c, cn, area, 1.0)
    g2, _ = hand_link(c, cn, rx, n, PD, 1.0)
    assert g1 > 0 and g2 > 0
    gain, _ = diffuse_first_order(ap, rx, n, PD, 90.0, el)
    assert gain == pytest.approx(g1 * rho * g2, rel=1e-12)


def test_first_order_single_element_paths():
    ap = ap_at((1.0, 1.0, 3.0))
    rx, n = (2.0, 2.0, 1.0), tuple(branch_normal(225.0, 30.0))
    c, cn = (0.0, 1.5, 1.2), (1.0, 0.0, 0.0)
    el = elements([c], [cn], [0.0025], [0.8])
    gain, paths = diffuse_first_order(ap, rx, n, PD, 90.0, el, with_paths=True)
    _, d1 = hand_link(ap.position, DOWN, c, cn, 1, 1)
    _, d2 = hand_link(c, cn, rx, n, 1, 1)
    assert len(paths) == 1 and paths.total() == pytest.approx(gain, rel=1e-15)
    assert paths.delays_ns[0] == pytest.approx((d1 + d2) / C_M_PER_NS, rel=1e-12)


def test_second_order_two_elements():
    ap = ap_at((1.0, 1.0, 3.0))
    rx, n = (2.0, 2.0, 1.0), tuple(branch_normal(180.0, 10.0))
    c1, n1, a1, r1 = (0.0, 1.5, 1.2), (1.0, 0.0, 0.0), 0.04, 0.8
    c2, n2, a2, r2 = (1.0, 0.0, 1.0), (0.0, 1.0, 0.0), 0.04, 0.7
    el = elements([c1, c2], [n1, n2], [a1, a2], [r1, r2])
    want, legs = 0.0, []
    for (ci, ni, ai, ri), (cj, nj, aj, rj) in [((c1, n1, a1, r1), (c2, n2, a2, r2)),
                                              ((c2, n2, a2, r2), (c1, n1, a1, r1))]:
        h1, _ = hand_link(ap.position, DOWN, ci, ni, ai, 1.0)
        h2, _ = hand_link(ci, ni, cj, nj, aj, 1.0)
        h3, _ = hand_link(cj, nj, rx, n, PD, 1.0)
        want += h1 * ri * h2 * rj * h3
        legs.append(h1 * h2 * h3)
    assert any(legs)
    gain, paths = diffuse_second_order(ap, rx, n, PD, 90.0, el, with_paths=True)
    assert gain == pytest.approx(want, rel=1e-12)
    assert paths.total() == pytest.approx(gain, rel=1e-12)


def test_second_order_coplanar_elements_do_not_couple():
    ap = ap_at((1.0, 1.0, 3.0))
    el = elements([(0.0, 1.0, 1.0), (0.0, 2.0, 1.0)], [(1, 0, 0), (1, 0, 0)], [0.04, 0.04], [0.8, 0.8])
    assert diffuse_second_order(ap, (2.0, 1.5, 1.0), (-1, 0, 0), PD, 90.0, el)[0] == 0.0


def test_zero_reflectivity_kills_diffuse(scenario):
    dark = scenario.model_copy(update={"room": Room(reflectivity=Reflectivity(walls=0, floor=0, ceiling=0))})
    t = build_gain_tensor(dark, [CENTER, (1.0, 4.0, 1.0)])
    assert not t.diff1.any() and not t.diff2.any()
    assert t.los.any()


def test_ceiling_unlit_at_first_order(model):
    # ceiling elements are coplanar with every AP
    ap = model.scenario.aps[0]
    ceiling = model.fine.select(model.fine.surface == "ceiling")
    for b in model.branches:
        g, _ = diffuse_first_order(ap, CENTER, b.normal, PD, b.fov_deg, ceiling)
        assert g == 0.0


def test_centered_user_second_order_dominates(center_tensor):
    # upward branches mostly see the ceiling, which only lights up after one bounce
    assert np.all(center_tensor.diff2[0] > center_tensor.diff1[0])


def test_grid_refinement_converges(scenario):
    ap = scenario.aps[0]
    b = scenario.adr.branches[2]
    from irsvlc.scene import discretize_surfaces
    g = [diffuse_first_order(ap, CENTER, b.normal, PD, b.fov_deg, discretize_surfaces(scenario.room, s))[0]
         for s in (0.20, 0.10, 0.05)]
    assert abs(g[2] - g[1]) < abs(g[1] - g[0])


# -- mirrors -----------------------------------------------------------------------

def floor_mirror(half=1.0):
    return MirrorPose(center=(0.0, 0.0, 0.0), base_normal=(0.0, 1.0, 0.0), roll_deg=90.0,
                      yaw_deg=0.0, half_width=half, half_height=half)


def test_mirror_image_source_equivalence():
    ap = ap_at((-0.5, 0.0, 1.0))
    rx = (0.5, 0.0, 1.0)
    g, t = mirror_gain(ap, floor_mirror(), 1.0, rx, DOWN, PD, 90.0)
    virtual = ap_at((-0.5, 0.0, -1.0), normal=UP)
    assert g == pytest.approx(los_gain(virtual, rx, DOWN, PD, 90.0), rel=1e-12)
    assert t * C_M_PER_NS == pytest.approx(2 * math.hypot(0.5, 1.0), rel=1e-12)


def test_mirror_reflectivity_scales():
    ap = ap_at((-0.5, 0.0, 1.0))
    g1, _ = mirror_gain(ap, floor_mirror(), 1.0, (0.5, 0.0, 1.0), DOWN, PD, 90.0)
    g2, _ = mirror_gain(ap, floor_mirror(), 0.95, (0.5, 0.0, 1.0), DOWN, PD, 90.0)
    assert g2 == pytest.approx(0.95 * g1, rel=1e-14)


def test_mirror_off_surface():
    ap = ap_at((-0.5, 0.0, 1.0))
    g, t = mirror_gain(ap, floor_mirror(half=0.01), 1.0, (3.5, 0.0, 1.0), DOWN, PD, 90.0)
    assert g == 0.0 and math.isnan(t)


def test_mirror_matches_reflected_virtual_source(model, rng):
    # random default-scene users: every mirror path equals rho * link from the mirrored AP
    hits = 0
    for rx in np.column_stack([rng.uniform(0, 5, (150, 2)), np.ones(150)]):
        for ap in model.scenario.aps:
            for mi, mirror in enumerate(model.mirrors):
                if specular_point(ap.position, rx, mirror) is None:
                    continue
                for b in model.branches:
                    g, t = mirror_gain(ap, mirror, 0.95, rx, b.normal, PD, b.fov_deg)
                    if g == 0.0:
                        continue
                    hits += 1
                    n = mirror.normal
                    img = image_point(ap.position, mirror)
                    img_n = np.asarray(ap.normal) - 2 * np.dot(ap.normal, n) * n
                    want = lambertian_link(img, img_n, rx, b.normal, PD, 1.0, b.fov_deg)
                    assert g == pytest.approx(0.95 * want, rel=1e-9)
                    # path-length identity
                    assert abs(t * C_M_PER_NS - np.linalg.norm(np.asarray(ap.position) - image_point(rx, mirror))) < 1e-9
    assert hits > 0


# -- impulse response -------------------------------------------------------------

def test_impulse_single_path():
    ir = impulse_response([PathContribution(3e-7, 7.3, PathKind.LOS)], 0.5)
    assert np.count_nonzero(ir.total) == 1
    assert ir.total[14] == 3e-7 and ir.t_ns[14] == 7.0
    assert ir.by_class["los"][14] == 3e-7


def test_impulse_conservation(rng):
    n = 1000
    paths = PathSet(rng.uniform(0, 1e-6, n), rng.uniform(0, 60, n), rng.integers(0, 4, n))
    ir = impulse_response(paths, 0.5)
    assert ir.total.sum() == pytest.approx(paths.gains.sum(), rel=1e-12)
    assert np.all(ir.total >= 0)
    per_class = sum(ir.by_class[c] for c in ir.by_class)
    np.testing.assert_allclose(per_class, ir.total, rtol=1e-12)


def test_impulse_rejects_bad_bin():
    with pytest.raises(ValueError):
        impulse_response([], 0.0)


def test_csv_header():
    ir = impulse_response([PathContribution(1e-6, 1.0, PathKind.IRS, 3)], 0.5)
    lines = ir.to_csv().splitlines()
    assert lines[0] == "t_ns,total,los,diffuse1,diffuse2,irs"
    assert lines[-1] == "1,1e-06,0,0,0,1e-06"


# -- gain tensor -------------------------------------------------------------------

def test_tensor_shapes_and_range(tensor):
    assert tensor.los.shape == (4, 4, 4) and tensor.irs.shape == (4, 4, 4, 50)
    for a in (tensor.los, tensor.diff1, tensor.diff2, tensor.irs):
        assert np.all(np.isfinite(a)) and np.all(a >= 0) and np.all(a <= 1)


def test_tensor_permutation_symmetry(model, scenario):
    users = scenario.user_positions()
    perm = [2, 0, 3, 1]
    a = model.gain_tensor(users).take_users(perm)
    b = model.gain_tensor(users[perm])
    for x, y in ((a.los, b.los), (a.diff1, b.diff1), (a.diff2, b.diff2), (a.irs, b.irs)):
        np.testing.assert_array_equal(x, y)


def test_tensor_no_mirrors(scenario, tensor):
    bare = scenario.model_copy(update={"mirror_arrays": ()})
    t = build_gain_tensor(bare)
    assert t.irs.shape == (4, 4, 4, 0)
    np.testing.assert_array_equal(t.los, tensor.los)
    # the array footprints turn back into diffuse wall
    assert np.all(t.diff >= tensor.diff - 1e-18)


def test_tensor_los_near_ap1(model):
    t = model.gain_tensor([(1.0, 1.5, 1.0)])
    assert t.los[0, :, 0].max() > 0


def test_paths_total_matches_tensor(model, center_tensor):
    for l in range(4):
        for b in range(4):
            p = model.paths(CENTER, l, b)
            want = (center_tensor.los[0, b, l] + center_tensor.diff[0, b, l]
                    + center_tensor.irs[0, b, l].sum())
            assert p.total() == pytest.approx(want, rel=1e-9)


def test_model_reuse_identical(scenario, model):
    other = ChannelModel(scenario, reuse=model)
    users = scenario.user_positions()
    a, b = other.gain_tensor(users), model.gain_tensor(users)
    np.testing.assert_array_equal(a.diff2, b.diff2)
    np.testing.assert_array_equal(a.irs, b.irs)
