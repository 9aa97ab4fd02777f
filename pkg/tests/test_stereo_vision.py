import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from oracles import pinhole_depth
from stereotac.evaluation import EvalConfig, central_roi, z_accuracy
from stereotac.experiments import stereo_depth
from stereotac.imaging_io import FloatMap, ImageRGB8, PointCloud3D
from stereotac.sim.membranes import preset
from stereotac.sim.stereo import default_texture, plane_scene, render_stereo_pair, synthetic_board_views
from stereotac.stereo.calibration import (BoardSpec, CalibrationError, calibrate_stereo,
                                          homography, intrinsics_from_homographies)
from stereotac.stereo.camera import (PinholeCamera, StereoRig, ideal_camera, ideal_rig,
                                     rotation_matrix, rotation_vector)
from stereotac.stereo.cloud import (StatisticalOutlierRemoval, depth_from_cloud, remove_outliers,
                                    reproject)
from stereotac.stereo.matching import BlockMatcher, MatcherSettings, block_match
from stereotac.stereo.rectify import rectify_pair, rectify_points, stereo_rectify


def _textured(h=120, w=200):
    tex = default_texture(seed=3).pixels
    return tex[:h, :w].copy()


# -- camera / rig ----------------------------------------------------------

def test_camera_validation_and_roundtrip():
    with pytest.raises(ValueError):
        PinholeCamera(-1, 1, 1, 1, 10, 10)
    with pytest.raises(ValueError, match="principal point"):
        PinholeCamera(1, 1, 20, 1, 10, 10)
    cam = PinholeCamera(500, 510, 320, 240, 640, 480, k1=-0.1, p2=0.001)
    assert PinholeCamera.from_dict(cam.to_dict()) == cam
    with pytest.raises(ValueError, match="behind"):
        cam.project([[0, 0, -1]])


def test_undistort_inverts_distort():
    cam = PinholeCamera(500, 500, 320, 240, 640, 480, k1=-0.2, k2=0.05, p1=0.001, p2=-0.002)
    xn, yn = np.meshgrid(np.linspace(-0.5, 0.5, 9), np.linspace(-0.4, 0.4, 7))
    xd, yd = cam.distort_normalized(xn, yn)
    xu, yu = cam.undistort_normalized(xd, yd, iterations=50)
    assert np.allclose(xu, xn, atol=1e-8) and np.allclose(yu, yn, atol=1e-8)


def test_rig_validation_and_io(tmp_path):
    cam = ideal_camera()
    with pytest.raises(ValueError, match="orthonormal"):
        StereoRig(cam, cam, R=np.ones((3, 3)))
    with pytest.raises(ValueError, match="baseline"):
        StereoRig(cam, cam, T=np.zeros(3))
    rig = ideal_rig()
    assert rig.baseline == pytest.approx(14.0)
    rig.save(tmp_path / "rig.json")
    back = StereoRig.load(tmp_path / "rig.json")
    assert np.allclose(back.Q, rig.Q) and back.left == rig.left


def test_rotation_helpers_roundtrip():
    r = np.array([0.1, -0.2, 0.3])
    assert np.allclose(rotation_vector(rotation_matrix(r)), r)


def test_q_matrix_ideal_rig(rig):
    Q = rig.Q
    X = Q @ np.array([100.0, 50.0, 56.0, 1.0])
    assert X[2] / X[3] == pytest.approx(200.0)


# -- calibration -----------------------------------------------------------

def _true_rig():
    left = PinholeCamera(810, 805, 322, 236, 640, 480, k1=-0.05, k2=0.01)
    right = PinholeCamera(795, 798, 318, 244, 640, 480, k1=-0.04)
    return StereoRig(left, right, rotation_matrix([0.01, -0.02, 0.005]), [-14.0, 0.1, -0.2])


def test_calibration_noiseless_exact():
    rig = _true_rig()
    L, R = synthetic_board_views(rig, 15, 1)
    est = calibrate_stereo(L, R)
    assert abs(est.baseline - rig.baseline) < 0.01
    assert est.rms_error < 1e-3
    assert est.left.fx == pytest.approx(810, rel=1e-4)


def test_calibration_with_corner_noise():
    rig = _true_rig()
    L, R = synthetic_board_views(rig, 20, 2, noise_px=0.2)
    est = calibrate_stereo(L, R)
    assert abs(est.baseline - rig.baseline) / rig.baseline < 0.01
    assert 0.15 < est.rms_error < 0.25


def test_calibration_too_few_views():
    L, R = synthetic_board_views(ideal_rig(), 3, 0)
    with pytest.raises(CalibrationError, match="insufficient pose diversity"):
        calibrate_stereo(L, R)


def test_calibration_parallel_boards_rejected():
    rig = ideal_rig()
    obj = BoardSpec().object_points() - BoardSpec().object_points().mean(axis=0)
    L, R = [], []
    for i in range(12):
        p = obj + np.array([-30 + 5 * i, -10 + 2 * i, 300 + 10 * i])
        L.append(rig.left.project(p))
        R.append(rig.right.project(p @ rig.R.T + rig.T))
    with pytest.raises(CalibrationError, match="insufficient pose diversity"):
        calibrate_stereo(np.array(L), np.array(R))


def test_calibration_shape_check():
    with pytest.raises(ValueError, match="corner arrays"):
        calibrate_stereo(np.zeros((12, 10, 2)), np.zeros((12, 10, 2)))


def test_homography_and_zhang_init():
    K = np.array([[800, 0, 320], [0, 790, 240], [0, 0, 1.0]])
    obj = BoardSpec().object_points()
    Hs = []
    rng = np.random.default_rng(0)
    for _ in range(5):
        R = rotation_matrix(rng.uniform(-0.5, 0.5, 3))
        t = np.array([-60, -40, 400.0])
        pc = obj @ R.T + t
        uv = (pc @ K.T)[:, :2] / pc[:, 2:3]
        H = homography(obj[:, :2], uv)
        proj = np.column_stack([obj[:, :2], np.ones(len(obj))]) @ H.T
        assert np.allclose(proj[:, :2] / proj[:, 2:3], uv, atol=1e-6)
        Hs.append(H)
    assert np.allclose(intrinsics_from_homographies(Hs), K, rtol=1e-6, atol=1e-4)


# -- rectification ---------------------------------------------------------

def test_identity_rig_leaves_images_unchanged(rig):
    img = ImageRGB8(default_texture().pixels[:480, :640].copy())
    a, b = rectify_pair(img, img, rig)
    assert a == img and b == img


def test_yawed_rig_rows_align():
    cam = ideal_camera()
    rig = StereoRig(cam, cam, rotation_matrix(np.radians([0, 2.0, 0])), [-14.0, 0.0, 0.0])
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-40, 40, 50), rng.uniform(-30, 30, 50), rng.uniform(150, 300, 50)])
    pl = rig.left.project(pts)
    pr = rig.right.project(pts @ rig.R.T + rig.T)
    rl = rectify_points(rig, pl, "left")
    rr = rectify_points(rig, pr, "right")
    assert np.max(np.abs(rl[:, 1] - rr[:, 1])) < 0.5
    assert np.all(rl[:, 0] - rr[:, 0] > 0)


def test_distorted_lines_straight_after_rectification():
    cam = PinholeCamera(800, 800, 319.5, 239.5, 640, 480, k1=-0.3)
    rig = StereoRig(cam, cam)
    for y3 in (-50.0, -35.0, 45.0):
        pts = np.column_stack([np.linspace(-70, 70, 40), np.full(40, y3), np.full(40, 200.0)])
        raw = cam.project(pts)
        # raw projection bends; rectified points lie on a line again
        fit_raw = np.polyfit(raw[:, 0], raw[:, 1], 1)
        assert np.max(np.abs(np.polyval(fit_raw, raw[:, 0]) - raw[:, 1])) > 1.0
        rect = rectify_points(rig, raw, "left")
        fit = np.polyfit(rect[:, 0], rect[:, 1], 1)
        assert np.max(np.abs(np.polyval(fit, rect[:, 0]) - rect[:, 1])) < 1.0


def test_rectify_size_mismatch(rig):
    small = ImageRGB8(np.zeros((10, 10, 3), np.uint8))
    with pytest.raises(ValueError, match="calibration size"):
        rectify_pair(small, small, rig)


def test_vertical_rig_rejected():
    cam = ideal_camera()
    rig = StereoRig(cam, cam, np.eye(3), [0.0, -14.0, 0.0])
    with pytest.raises(ValueError, match="vertical"):
        stereo_rectify(rig)


# -- block matching --------------------------------------------------------

def test_pure_shift_gives_constant_disparity():
    tex = _textured(120, 260)
    left = ImageRGB8(tex[:, 0:200].copy())
    right = ImageRGB8(tex[:, 8:208].copy())
    d = block_match(left, right, MatcherSettings(max_disparity=32)).disparity
    vals = d.values[d.valid]
    assert d.valid.sum() > 0.7 * (120 - 10) * (200 - 10 - 32)
    assert np.mean(np.abs(vals - 8.0) <= 0.25) >= 0.95


def test_uniform_gray_all_invalid():
    g = ImageRGB8(np.full((60, 80, 3), 128, np.uint8))
    d = block_match(g, g, MatcherSettings(max_disparity=16)).disparity
    assert not d.valid.any()
    assert d.sentinel is not None


def test_plane_median_disparity_within_two_percent(rig):
    left, right = render_stereo_pair(plane_scene(200.0), preset("transparent"), rig, rng=1)
    d = block_match(left, right, rows=(150, 330)).disparity
    assert np.median(d.values[d.valid]) == pytest.approx(800 * 14 / 200.0, rel=0.02)


def test_window_larger_than_image():
    g = ImageRGB8(np.zeros((5, 5, 3), np.uint8))
    with pytest.raises(ValueError, match="larger than image"):
        block_match(g, g)


def test_matcher_settings_validation():
    with pytest.raises(ValueError):
        MatcherSettings(window=4)
    with pytest.raises(ValueError):
        MatcherSettings(min_disparity=10, max_disparity=5)
    with pytest.raises(ValueError):
        MatcherSettings(uniqueness_ratio=0.9)


def test_block_matcher_estimator():
    tex = _textured(80, 160)
    left = ImageRGB8(tex[:, 0:120].copy())
    right = ImageRGB8(tex[:, 5:125].copy())
    bm = BlockMatcher(max_disparity=16)
    assert clone(bm).get_params()["max_disparity"] == 16
    d = bm.fit().transform((left, right))
    assert np.median(d.disparity.values[d.valid]) == pytest.approx(5.0, abs=0.1)
    with pytest.raises(ValueError, match="sizes differ"):
        bm.transform((left, ImageRGB8(tex[:70, :120].copy())))


# -- reprojection ----------------------------------------------------------

@pytest.mark.parametrize("d,z", [(56.0, 200.0), (112.0, 100.0)])
def test_reproject_exact_depth(rig, d, z):
    disp = FloatMap(np.full((480, 640), d), "disparity-px")
    cloud, skipped = reproject(disp, rig.Q)
    assert skipped == 0
    assert np.all(cloud.points[:, 2] == pytest.approx(pinhole_depth(800, 14, d), abs=1e-12))
    assert cloud.points[0, 2] == z


def test_reproject_skips_nonpositive(rig):
    v = np.full((4, 5), 10.0)
    v[0, 0] = 0.0
    v[1, 1] = -3.0
    cloud, skipped = reproject(FloatMap(v, "disparity-px"), rig.Q)
    assert skipped == 2 and len(cloud) == 18


def test_reproject_roi_and_colors(rig):
    disp = FloatMap(np.full((20, 30), 40.0), "disparity-px")
    img = ImageRGB8(np.full((20, 30, 3), 9, np.uint8))
    cloud, _ = reproject(disp, rig.Q, img, (5, 5, 15, 10))
    assert len(cloud) == 50 and np.all(cloud.colors == 9)
    depth = depth_from_cloud(cloud, (20, 30))
    assert depth.valid.sum() == 50


@settings(max_examples=50, deadline=None)
@given(st.floats(-60, 60), st.floats(-40, 40), st.floats(60, 300))
def test_triangulation_round_trip(x, y, z):
    rig = ideal_rig()
    p = np.array([[x, y, z]])
    ul = rig.left.project(p)[0]
    ur = rig.right.project(p @ rig.R.T + rig.T)[0]
    d = ul[0] - ur[0]
    X = rig.Q @ np.array([ul[0], ul[1], d, 1.0])
    assert np.linalg.norm(X[:3] / X[3] - p[0]) < 0.5


@settings(max_examples=30, deadline=None)
@given(st.floats(1, 100), st.floats(0.01, 50))
def test_larger_disparity_smaller_depth(d, step):
    Q = ideal_rig().Q
    z = lambda dd: (Q @ [0, 0, dd, 1])[2] / (Q @ [0, 0, dd, 1])[3]
    assert z(d + step) < z(d)


def test_plane_at_150_mm_accuracy(rig):
    left, right = render_stereo_pair(plane_scene(150.0), preset("transparent"), rig, rng=3)
    roi = central_roi((480, 640))
    depth, cloud, _ = stereo_depth(left, right, rig, roi=roi)
    cfg = EvalConfig(150.0, roi, focal_px=800.0, cx=319.5, cy=239.5)
    assert abs(z_accuracy(depth, cfg)) < 2.0


# -- outlier removal -------------------------------------------------------

def test_lone_point_removed():
    rng = np.random.default_rng(0)
    pts = rng.normal(0, 1, (200, 3))
    pts = np.vstack([pts, [[30.0, 30.0, 30.0]]])
    out = remove_outliers(PointCloud3D(pts), 20, 2.0)
    assert not np.any(np.all(out.points == [30, 30, 30], axis=1))
    assert len(out) >= 180


@pytest.mark.parametrize("k", [1, 2, 3])
def test_uniform_grid_nothing_removed(k):
    # up to 3 neighbours every grid point, corners included, sees identical distances
    g = np.stack(np.meshgrid(np.arange(10.0), np.arange(10.0), np.arange(10.0)), -1).reshape(-1, 3)
    assert len(remove_outliers(PointCloud3D(g), k, 2.0)) == 1000


def test_grid_boundary_peeled_at_large_k():
    # with 20 neighbours the border genuinely has larger distances and goes
    g = np.stack(np.meshgrid(np.arange(10.0), np.arange(10.0), np.arange(10.0)), -1).reshape(-1, 3)
    kept = remove_outliers(PointCloud3D(g), 20, 2.0).points
    assert 0 < 1000 - len(kept) < 500


def test_uniform_cloud_mostly_kept():
    pts = np.random.default_rng(2).uniform(0, 10, (3000, 3))
    assert len(remove_outliers(PointCloud3D(pts), 20, 2.0)) >= 0.95 * 3000


def test_second_pass_removes_little():
    rng = np.random.default_rng(3)
    pts = np.vstack([rng.normal(0, 1, (1000, 3)), rng.uniform(-40, 40, (50, 3))])
    once = remove_outliers(PointCloud3D(pts), 20, 2.0)
    twice = remove_outliers(once, 20, 2.0)
    kept_far = np.linalg.norm(once.points, axis=1) > 10
    assert kept_far.sum() <= 5
    assert len(once) - len(twice) < 0.05 * len(once)


def test_salt_noise_rmse_reduced(rig):
    left, right = render_stereo_pair(plane_scene(200.0), preset("transparent"), rig, rng=4)
    roi = central_roi((480, 640), 0.3)
    _, cloud, _ = stereo_depth(left, right, rig, roi=roi)
    rng = np.random.default_rng(5)
    pts = cloud.points.copy()
    idx = rng.choice(len(pts), int(0.05 * len(pts)), replace=False)
    pts[idx, 2] += rng.uniform(-30, 30, len(idx))
    noisy = PointCloud3D(pts)

    def rmse(c):
        A = np.column_stack([c.points[:, 0], c.points[:, 1], np.ones(len(c))])
        coef, *_ = np.linalg.lstsq(A, c.points[:, 2], rcond=None)
        return np.sqrt(np.mean((A @ coef - c.points[:, 2]) ** 2))

    assert rmse(noisy) / rmse(remove_outliers(noisy, 20, 2.0)) >= 3.0


def test_removal_capped_at_half():
    pts = np.vstack([np.zeros((30, 3)), np.random.default_rng(0).uniform(100, 1000, (70, 3))])
    assert len(remove_outliers(PointCloud3D(pts), 5, 0.0)) >= 50


def test_outlier_errors_and_estimator():
    with pytest.raises(ValueError, match="too small"):
        remove_outliers(PointCloud3D(np.zeros((5, 3))), 20)
    with pytest.raises(ValueError):
        StatisticalOutlierRemoval(k_neighbors=0).transform(np.zeros((50, 3)))
    est = StatisticalOutlierRemoval(k_neighbors=5)
    assert clone(est).get_params() == {"k_neighbors": 5, "std_ratio": 2.0}
    out = est.fit_transform(np.random.default_rng(0).random((100, 3)))
    assert isinstance(out, PointCloud3D)


def test_depth_from_cloud_requires_pixels():
    with pytest.raises(ValueError, match="pixel"):
        depth_from_cloud(PointCloud3D(np.zeros((3, 3))), (4, 4))
