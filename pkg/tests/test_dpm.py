"""Ground-projection mapper vs. the scalar per-pixel oracle, plus the
perspective-paste baseline."""

import numpy as np
import pytest

from advpatch import diffcore as dc
from advpatch import dpm
from advpatch import scenegen as sg
from references import planar_map_reference, point_in_convex_quad


def _intr(fx=100.0, fy=100.0, cx=4.0, cy=3.0):
    return sg.CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)


# ---------------------------------------------------------------------------
# surface coordinates


def test_surface_coords_principal_point():
    intr = _intr()
    depth = np.full((7, 9), 2.5)
    sc = dpm.surface_coords(depth, intr)
    # pixel at the principal point (u=4, v=3)
    assert sc.forward[3, 4] == 2.5
    assert sc.lateral[3, 4] == 0.0
    assert sc.vertical[3, 4] == 0.0


def test_surface_coords_unit_tangent():
    intr = _intr(fx=2.0, cx=0.0)
    depth = np.full((1, 3), 2.0)
    sc = dpm.surface_coords(depth, intr)
    # u - c_x = f_x = 2 at u = 2 -> lateral = depth
    assert np.isclose(sc.lateral[0, 2], 2.0)


def test_surface_coords_ground_vertical():
    scene = sg.render_scene(4)
    sc = dpm.surface_coords(scene.depth, scene.intrinsics)
    road = scene.labels == sg.ROAD
    assert np.max(np.abs(sc.vertical[road] - scene.camera_height)) < 1e-4


def test_surface_coords_rejects_nonpositive():
    with pytest.raises(dpm.DpmError):
        dpm.surface_coords(np.zeros((2, 2)), _intr())


# ---------------------------------------------------------------------------
# planar_map on constructed coordinates


def _manual_sc(forward, lateral, vertical):
    return dpm.SurfaceCoords(forward=np.asarray(forward, dtype=np.float64),
                             lateral=np.asarray(lateral, dtype=np.float64),
                             vertical=np.asarray(vertical, dtype=np.float64))


def test_planar_map_corner_texel():
    res = 8
    theta = dc.Tensor(np.arange(res * res * 3, dtype=np.float64).reshape(res, res, 3))
    eps = 1e-9
    sc = _manual_sc([[2.0 + eps]], [[0.5 + eps]], [[1.0]])
    p = dpm.PlacementParams(offset=(2.0, 0.5), scale=0.4, resolution=res)
    placed = dpm.planar_map(sc, theta, p, camera_height=1.0)
    assert placed.mask[0, 0] == 1.0
    assert np.array_equal(placed.mapped.data[0, 0], theta.data[0, 0])


def test_planar_map_center_texel():
    res = 8
    theta = dc.Tensor(np.random.default_rng(0).uniform(size=(res, res, 3)))
    sc = _manual_sc([[2.2]], [[0.7]], [[1.0]])
    p = dpm.PlacementParams(offset=(2.0, 0.5), scale=0.4, resolution=res)
    placed = dpm.planar_map(sc, theta, p, camera_height=1.0)
    k = min(int(np.floor(0.5 * res + 0.5)), res - 1)
    assert placed.mask[0, 0] == 1.0
    assert np.array_equal(placed.mapped.data[0, 0], theta.data[k, k])


def test_planar_map_mask_strict_bounds():
    res = 4
    theta = dc.Tensor(np.zeros((res, res, 3)))
    p = dpm.PlacementParams(offset=(2.0, 0.0), scale=0.4, resolution=res)
    # exactly on the near bound and exactly on the far bound: excluded
    sc = _manual_sc([[2.0, 2.2, 2.4]], [[0.2, 0.2, 0.2]], [[1.0, 1.0, 1.0]])
    placed = dpm.planar_map(sc, theta, p, camera_height=1.0)
    assert list(placed.mask[0]) == [0.0, 1.0, 0.0]


def test_planar_map_vertical_band():
    res = 4
    theta = dc.Tensor(np.zeros((res, res, 3)))
    p = dpm.PlacementParams(offset=(2.0, 0.0), scale=0.4, resolution=res)
    sc = _manual_sc([[2.2, 2.2]], [[0.2, 0.2]], [[1.0, 0.5]])
    on = dpm.planar_map(sc, theta, p, camera_height=1.0)
    assert list(on.mask[0]) == [1.0, 0.0]  # wall-height pixel rejected
    off = dpm.planar_map(sc, theta, p, vertical_band=None)
    assert list(off.mask[0]) == [1.0, 1.0]


def test_planar_map_empty_mask_is_valid():
    res = 4
    theta = dc.Tensor(np.zeros((res, res, 3)))
    p = dpm.PlacementParams(offset=(100.0, 100.0), scale=0.4, resolution=res)
    scene = sg.render_scene(1)
    sc = dpm.surface_coords(scene.depth, scene.intrinsics)
    placed = dpm.planar_map(sc, theta, p, camera_height=scene.camera_height)
    assert placed.mask.sum() == 0


def test_placement_validation():
    with pytest.raises(dpm.DpmError):
        dpm.PlacementParams(offset=(1.0, 0.0), scale=0.0)
    with pytest.raises(dpm.DpmError):
        dpm.PlacementParams(offset=(1.0, 0.0), scale=0.4, resolution=1)


def test_planar_map_oracle_equivalence():
    # 20 random scene/placement pairs; masks bit-equal, texels within 1e-12
    rng = np.random.default_rng(17)
    cfg = sg.SceneConfig(width=96, height=72)
    for trial in range(20):
        scene = sg.render_scene(100 + trial, cfg)
        res = int(rng.choice([8, 16, 32]))
        theta = rng.uniform(size=(res, res, 3))
        offset = (rng.uniform(1.0, 3.5), rng.uniform(-1.0, 0.6))
        scale = rng.uniform(0.2, 0.8)
        p = dpm.PlacementParams(offset=offset, scale=scale, resolution=res)
        sc = dpm.surface_coords(scene.depth, scene.intrinsics)
        placed = dpm.planar_map(sc, dc.Tensor(theta), p,
                                camera_height=scene.camera_height)
        ref_m, ref_mask = planar_map_reference(
            scene.depth, scene.intrinsics, scene.camera_height,
            theta, offset, scale, res)
        assert np.array_equal(placed.mask, ref_mask)
        assert np.max(np.abs(placed.mapped.data - ref_m)) <= 1e-12


def test_planar_map_tiling():
    scene = sg.render_scene(2)
    sc = dpm.surface_coords(scene.depth, scene.intrinsics)
    res = 16
    theta = dc.Tensor(np.random.default_rng(3).uniform(size=(res, res, 3)))
    p1 = dpm.PlacementParams(offset=(1.8, -0.2), scale=0.4, resolution=res)
    p2 = dpm.PlacementParams(offset=(1.8 + 0.4, -0.2), scale=0.4, resolution=res)
    a = dpm.planar_map(sc, theta, p1, camera_height=scene.camera_height)
    b = dpm.planar_map(sc, theta, p2, camera_height=scene.camera_height)
    # shifting the offset by exactly t_s preserves the modular UV pattern
    assert np.array_equal(a.mapped.data, b.mapped.data)
    assert not np.array_equal(a.mask, b.mask)


def test_mask_forward_extent():
    scene = sg.render_scene(5)
    sc = dpm.surface_coords(scene.depth, scene.intrinsics)
    p = dpm.PlacementParams(offset=(1.8, -0.2), scale=0.4, resolution=16)
    placed = dpm.planar_map(sc, dc.Tensor(np.zeros((16, 16, 3))), p,
                            camera_height=scene.camera_height)
    assert placed.mask.sum() > 0
    fwd = sc.forward[placed.mask > 0]
    # one-pixel ground footprint at ~2.2 m with these intrinsics is ~0.07 m
    rows = np.where(placed.mask.any(axis=1))[0]
    row_step = np.max(np.abs(np.diff(sc.forward[:, 0]))[rows.min():rows.max() + 1])
    assert fwd.min() >= 1.8 and fwd.max() <= 2.2
    assert fwd.min() - 1.8 <= row_step + 1e-9
    assert 2.2 - fwd.max() <= row_step + 1e-9


def test_gradient_locality():
    scene = sg.render_scene(6)
    sc = dpm.surface_coords(scene.depth, scene.intrinsics)
    res = 16
    theta = dc.Tensor(np.random.default_rng(4).uniform(size=(res, res, 3)),
                      requires_grad=True)
    p = dpm.PlacementParams(offset=(1.8, -0.2), scale=0.4, resolution=res)
    with dc.Tape():
        placed = dpm.planar_map(sc, theta, p, camera_height=scene.camera_height)
        out = dpm.composite(scene.rgb.astype(np.float64), placed)
        dc.reduce_sum(dc.mul(out, out)).backward()
    # texels gathered by masked pixels
    u = np.minimum(np.floor(np.mod(sc.forward - 1.8, 0.4) / 0.4 * res + 0.5),
                   res - 1).astype(int)
    v = np.minimum(np.floor(np.mod(sc.lateral + 0.2, 0.4) / 0.4 * res + 0.5),
                   res - 1).astype(int)
    used = np.zeros((res, res), dtype=bool)
    mm = placed.mask > 0
    used[u[mm], v[mm]] = True
    grad_nonzero = np.abs(theta.grad).sum(axis=2) > 0
    assert not np.any(grad_nonzero & ~used)
    assert grad_nonzero.any()


# ---------------------------------------------------------------------------
# composite


def test_composite_zero_and_full_mask():
    rng = np.random.default_rng(7)
    x = rng.uniform(size=(5, 6, 3))
    mapped = dc.Tensor(rng.uniform(size=(5, 6, 3)))
    zero = dpm.PlacedPatch(mapped=mapped, mask=np.zeros((5, 6)))
    assert np.array_equal(dpm.composite(x, zero).data, x)
    ones = dpm.PlacedPatch(mapped=mapped, mask=np.ones((5, 6)))
    assert np.array_equal(dpm.composite(x, ones).data, mapped.data)


def test_composite_outside_mask_untouched():
    rng = np.random.default_rng(8)
    x = rng.uniform(size=(8, 8, 3))
    mapped = dc.Tensor(rng.uniform(size=(8, 8, 3)))
    mask = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
    out = dpm.composite(x, dpm.PlacedPatch(mapped=mapped, mask=mask))
    outside = mask == 0
    assert np.array_equal(out.data[outside], x[outside])
    inside = mask == 1
    assert np.array_equal(out.data[inside], mapped.data[inside])


# ---------------------------------------------------------------------------
# perspective baseline


def test_perspective_identity_paste():
    rng = np.random.default_rng(9)
    r = 16
    theta = dc.Tensor(rng.uniform(size=(r, r, 3)))
    x = dc.Tensor(rng.uniform(size=(48, 64, 3)))
    # half-integer corners align texel centers with pixel centers
    quad = [(9.5, 9.5), (9.5 + r, 9.5), (9.5 + r, 9.5 + r), (9.5, 9.5 + r)]
    out, mask = dpm.perspective_place(x, theta, quad)
    region = out.data[10:10 + r, 10:10 + r]
    assert np.max(np.abs(region - theta.data)) <= 1.0 / 255.0
    assert mask.sum() == r * r


def test_perspective_mask_matches_rasterizer():
    rng = np.random.default_rng(10)
    r = 16
    theta = dc.Tensor(rng.uniform(size=(r, r, 3)))
    x = dc.Tensor(np.zeros((40, 50, 3)))
    # quad with ~0.25x texture area, corners off pixel centers
    quad = np.array([(20.3, 12.2), (28.1, 13.6), (27.2, 20.3), (19.6, 19.1)])
    out, mask = dpm.perspective_place(x, theta, quad)
    count = 0
    for v in range(40):
        for u in range(50):
            if point_in_convex_quad(u, v, quad):
                count += 1
    assert mask.sum() == count


def test_perspective_corner_positions():
    r = 32
    quad = np.array([(12.0, 20.0), (40.0, 18.0), (44.0, 44.0), (10.0, 40.0)])
    hom = dpm._homography_from_quad(r, quad)
    src = np.array([[0, 0, 1], [r, 0, 1], [r, r, 1], [0, r, 1]], dtype=float)
    for s, q in zip(src, quad):
        p = hom @ s
        p = p[:2] / p[2]
        assert np.max(np.abs(p - q)) < 0.5


def test_perspective_degenerate_quad():
    r = 8
    theta = dc.Tensor(np.zeros((r, r, 3)))
    x = dc.Tensor(np.zeros((20, 20, 3)))
    collinear = [(2.0, 2.0), (10.0, 2.0), (18.0, 2.0), (10.0, 2.0)]
    with pytest.raises(dpm.DpmError):
        dpm.perspective_place(x, theta, collinear)


def test_perspective_fd_gradient():
    rng = np.random.default_rng(11)
    r = 6
    theta0 = rng.uniform(0.2, 0.8, size=(r, r, 3))
    x = rng.uniform(size=(16, 18, 3))
    quad = [(3.5, 3.5), (3.5 + r, 4.0), (4.0 + r, 4.0 + r), (3.0, 3.5 + r)]

    def f(th):
        out, _ = dpm.perspective_place(dc.Tensor(x), th, quad)
        return dc.reduce_sum(dc.mul(out, out))

    from advpatch.diffcore import gradcheck
    gradcheck.check_gradients(f, [theta0])
