import numpy as np
import pytest

from gaplab.geometry import (
    DiskProfile,
    GapGeometry,
    QuadraticProfile,
    RadialPolynomialProfile,
    Region,
    inner_normal,
    make_disk_geometry,
    make_quadratic_geometry,
    validate_hypotheses,
)


def test_disk_gap_width_at_origin():
    geom = make_disk_geometry(0.01)
    assert geom.gap_width(np.array([0.0])) == pytest.approx(0.01, abs=1e-15)


def test_disk_gap_width_off_origin():
    # eps + 2(1 - sqrt(1 - x1^2)) at eps=0.01, x1=0.1, frozen high-precision value
    geom = make_disk_geometry(0.01)
    w = geom.gap_width(np.array([0.1]))
    assert w == pytest.approx(0.0200251257867601, rel=1e-12)


def test_disk_profile_approaches_equator():
    geom = make_disk_geometry(0.5)
    h = geom.h_upper.value(np.array([0.999]))
    assert h == pytest.approx(1.0 - np.sqrt(1.0 - 0.999**2), rel=1e-14)
    assert h > 0.95


def test_disk_epsilon_range():
    with pytest.raises(ValueError):
        make_disk_geometry(0.0)
    with pytest.raises(ValueError):
        make_disk_geometry(1.5)


def test_inner_normal_disk_center():
    geom = make_disk_geometry(0.01)
    nu = inner_normal(geom, "upper", np.array([0.0]))
    np.testing.assert_allclose(nu, [0.0, 1.0], atol=1e-15)


def test_inner_normal_disk_off_center():
    # grad h1(0.6) = 0.75, normalize (-0.75, 1)/1.25
    geom = make_disk_geometry(0.01)
    nu = inner_normal(geom, "upper", np.array([0.6]))
    np.testing.assert_allclose(nu, [-0.6, 0.8], rtol=1e-13)


def test_inner_normal_quadratic_closed_form():
    kappa = 1.7
    geom = make_quadratic_geometry(0.01, kappa * np.eye(2), -kappa * np.eye(2))
    xp = np.array([0.2, -0.1])
    nu = inner_normal(geom, "upper", xp)
    expected = np.concatenate([-kappa * xp, [1.0]])
    expected /= np.sqrt(1 + kappa**2 * np.dot(xp, xp))
    np.testing.assert_allclose(nu, expected, rtol=1e-13)


def test_inner_normal_lower_points_down():
    geom = make_disk_geometry(0.01)
    nu = inner_normal(geom, "lower", np.array([0.3]))
    assert nu[-1] < 0
    # reflection symmetry of the symmetric disk pair
    nu_up = inner_normal(geom, "upper", np.array([0.3]))
    np.testing.assert_allclose(nu, [nu_up[0], -nu_up[1]], rtol=1e-13)


def test_inner_normal_unit_norm_batch():
    geom = make_disk_geometry(0.05)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.9, 0.9, size=(200, 1))
    for side in ("upper", "lower"):
        nus = inner_normal(geom, side, pts)
        np.testing.assert_allclose(np.linalg.norm(nus, axis=1), 1.0, atol=1e-12)


def test_inner_normal_outside_domain():
    geom = make_disk_geometry(0.01)
    with pytest.raises(ValueError):
        inner_normal(geom, "upper", np.array([1.2]))


def test_validate_disks_c1():
    geom = make_disk_geometry(1e-3)
    report = validate_hypotheses(geom, samples=2000, radius=0.9)
    assert report.c1_est >= 1.0 - 1e-12
    assert report.ok


def test_validate_quadratic_kappa():
    # h1 = |x'|^2, h2 = -|x'|^2 -> constant Hessian 2I
    geom = make_quadratic_geometry(0.01, 2 * np.eye(2), -2 * np.eye(2))
    report = validate_hypotheses(geom, samples=500)
    assert report.kappa1_est == pytest.approx(2.0, rel=1e-13)
    assert report.kappa2_est == pytest.approx(2.0, rel=1e-13)
    assert report.ok


def test_validate_equal_profiles_reports_violation():
    up = QuadraticProfile(2 * np.eye(1))
    lo = QuadraticProfile(2 * np.eye(1))
    geom = GapGeometry(dim=2, epsilon=0.01, h_upper=up, h_lower=lo, c1=1.0, c2=3.0)
    report = validate_hypotheses(geom, samples=300)
    kinds = {v["constraint"] for v in report.violations}
    assert "closeness_c1" in kinds


def test_gap_width_lower_bound_when_valid():
    geom = make_disk_geometry(1e-3)
    report = validate_hypotheses(geom, samples=500)
    assert report.ok
    pts = np.linspace(-0.9, 0.9, 101)[:, None]
    widths = geom.gap_width(pts)
    lower = geom.epsilon + geom.c1 * pts[:, 0] ** 2
    assert np.all(widths >= lower - 1e-14)


def test_disk_width_even_and_monotone():
    geom = make_disk_geometry(0.01)
    xs = np.linspace(0.0, 0.95, 200)
    w_pos = geom.gap_width(xs[:, None])
    w_neg = geom.gap_width(-xs[:, None])
    np.testing.assert_allclose(w_pos, w_neg, rtol=1e-14)
    assert np.all(np.diff(w_pos) > 0)


def test_radial_polynomial_profile_derivatives():
    prof = RadialPolynomialProfile(2, [0.5, -0.05])
    xp = np.array([0.3, -0.2])
    h = 1e-6
    grad = prof.gradient(xp)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (prof.value(xp + e) - prof.value(xp - e)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-7)
    hess = prof.hessian(xp)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (prof.gradient(xp + e) - prof.gradient(xp - e)) / (2 * h)
        np.testing.assert_allclose(hess[i], fd, rtol=1e-5, atol=1e-9)


def test_disk_profile_hessian_vs_fd():
    prof = DiskProfile(2, +1.0)
    xp = np.array([0.4, 0.25])
    h = 1e-6
    hess = prof.hessian(xp)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (prof.gradient(xp + e) - prof.gradient(xp - e)) / (2 * h)
        np.testing.assert_allclose(hess[i], fd, rtol=1e-6)


def test_region_validation():
    with pytest.raises(ValueError):
        Region("annulus", center=[0.0], radii=(0.2, 0.1))
    with pytest.raises(ValueError):
        Region("neck", center=[0.8], radii=(0.5,))
    reg = Region("annulus", center=[0.0], radii=(0.1, 0.3))
    mask = reg.contains_xp(np.array([[0.05], [0.2], [0.4]]))
    assert mask.tolist() == [False, True, False]


def test_geometry_rejects_shifted_profile():
    bad = CallableShift()
    with pytest.raises(ValueError):
        GapGeometry(dim=2, epsilon=0.1, h_upper=bad, h_lower=DiskProfile(1, -1.0),
                    c1=1.0, c2=2.0)


class CallableShift(DiskProfile):
    def __init__(self):
        super().__init__(1, 1.0)

    def _value(self, pts):
        return super()._value(pts) + 0.1
