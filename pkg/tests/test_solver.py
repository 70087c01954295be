import numpy as np
import pytest

from gaplab.geometry import Region, make_disk_geometry, make_flat_geometry
from gaplab.solver import (
    DiscreteField,
    SolverConfig,
    assemble_energy,
    dirichlet_from_expression,
    gradient_field,
    graded_axis,
    linear_p2_solve,
    make_field,
    neumann_residual,
    nodes_for_center_width,
    oscillation,
    solve,
)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(p=1.0)
    with pytest.raises(ValueError):
        SolverConfig(grid_ns=4)
    with pytest.raises(ValueError):
        SolverConfig(p=3.0, eta=1e-8, continuation=[(2.0, 1e-2), (3.0, 1e-6)])
    SolverConfig(p=3.0, eta=1e-8, continuation=[(2.0, 1e-2), (3.0, 1e-8)])


def test_graded_axis_symmetric_and_graded():
    ax = graded_axis(0.5, 41, 1.05)
    assert len(ax) == 41
    np.testing.assert_allclose(ax + ax[::-1], 0.0, atol=1e-15)
    w = np.diff(ax)
    half = len(w) // 2
    assert np.all(np.diff(w[half:]) > 0)  # widths grow away from center
    assert ax[0] == -0.5 and ax[-1] == 0.5


def test_nodes_for_center_width():
    r, target, ratio = 0.5, 0.00790569, 1.05
    ns = nodes_for_center_width(r, target, ratio)
    ax = graded_axis(r, ns, ratio)
    mid = len(ax) // 2
    assert ax[mid + 1] - ax[mid] <= target * (1 + 1e-9)


def test_energy_constant_field_zero():
    geom = make_flat_geometry(1.0)
    cfg = SolverConfig(grid_ns=9, grid_nt=9)
    fld = make_field(geom, cfg).with_values(np.full((9, 9), 3.7))
    J, g, _ = assemble_energy(fld, cfg, p=3.0, eta=0.0)
    assert J == 0.0
    assert np.all(g == 0.0)


def test_energy_linear_field_unit_slab():
    # flat profiles, eps=1, r=1/2: physical domain is the unit square
    geom = make_flat_geometry(1.0)
    cfg = SolverConfig(grid_ns=17, grid_nt=9)
    fld = make_field(geom, cfg)
    fld = fld.with_values(fld.node_points()[..., 0])
    J, _, _ = assemble_energy(fld, cfg, p=2.0, eta=0.0)
    assert J == pytest.approx(0.5, rel=1e-13)


def test_energy_gradient_matches_fd():
    geom = make_disk_geometry(0.05)
    cfg = SolverConfig(grid_ns=9, grid_nt=9)
    fld = make_field(geom, cfg)
    rng = np.random.default_rng(7)
    fld = fld.with_values(rng.normal(size=fld.values.shape))
    p, eta = 3.5, 1e-6
    J, g, _ = assemble_energy(fld, cfg, p=p, eta=eta)
    free = ~fld.dirichlet_mask().ravel()
    idx = np.flatnonzero(free)[::7][:40]
    h = 1e-6
    scale = np.abs(g[idx]).max()
    for a in idx:
        vp = fld.values.ravel().copy()
        vp[a] += h
        Jp, _, _ = assemble_energy(fld.with_values(vp.reshape(fld.values.shape)),
                                   cfg, p=p, eta=eta, want_hessian=False)
        vm = fld.values.ravel().copy()
        vm[a] -= h
        Jm, _, _ = assemble_energy(fld.with_values(vm.reshape(fld.values.shape)),
                                   cfg, p=p, eta=eta, want_hessian=False)
        fd = (Jp - Jm) / (2 * h)
        assert g[a] == pytest.approx(fd, rel=1e-6, abs=1e-6 * scale)


def test_hessian_psd_and_symmetric():
    geom = make_disk_geometry(0.05)
    cfg = SolverConfig(grid_ns=9, grid_nt=9)
    fld = make_field(geom, cfg)
    rng = np.random.default_rng(3)
    fld = fld.with_values(rng.normal(size=fld.values.shape))
    _, _, H = assemble_energy(fld, cfg, p=3.0, eta=1e-4)
    Hd = H.toarray()
    np.testing.assert_allclose(Hd, Hd.T, atol=1e-12 * np.abs(Hd).max())
    eig = np.linalg.eigvalsh(Hd)
    assert eig.min() > 0


def disk_solution(eps=1e-3, p=2.0, nt=17):
    geom = make_disk_geometry(eps)
    ns = nodes_for_center_width(0.5, np.sqrt(eps) / 4, 1.05)
    cfg = SolverConfig(p=p, eta=0.0 if p == 2.0 else None, grid_ns=ns, grid_nt=nt)
    return geom, cfg, solve(geom, cfg)


def test_solve_disks_axis_values_vanish():
    _, _, fld = disk_solution()
    mid = (len(fld.s_axes[0]) - 1) // 2
    assert np.abs(fld.values[mid, :]).max() <= 1e-8


def test_solve_maximum_principle():
    _, _, fld = disk_solution()
    assert fld.values.min() >= -0.5 - 1e-10
    assert fld.values.max() <= 0.5 + 1e-10


def test_solve_matches_linear_oracle_at_p2():
    geom, cfg, fld = disk_solution()
    direct = linear_p2_solve(geom, cfg)
    assert np.abs(fld.values - direct.values).max() <= 1e-10


def test_solve_symmetries():
    _, _, fld = disk_solution()
    v = fld.values
    assert np.abs(v + v[::-1, :]).max() <= 1e-8      # odd in x1
    assert np.abs(v - v[:, ::-1]).max() <= 1e-8      # even in x2


def test_energy_monotone_along_newton():
    eps = 1e-3
    geom = make_disk_geometry(eps)
    cfg = SolverConfig(p=5.0, grid_ns=41, grid_nt=13)
    fld = solve(geom, cfg)
    assert fld.converged
    for stage in fld.trace:
        en = stage.get("energies", [])
        assert all(b <= a * (1 + 1e-12) for a, b in zip(en, en[1:]))


def test_eta_continuation_cauchy():
    geom = make_disk_geometry(1e-3)
    cfg = SolverConfig(p=3.0, grid_ns=41, grid_nt=13)
    fld = solve(geom, cfg)
    tail = [t["max_grad"] for t in fld.trace if t["p"] == 3.0]
    diffs = [abs(a - b) for a, b in zip(tail, tail[1:])]
    assert all(b <= a + 1e-14 for a, b in zip(diffs, diffs[1:]))


def test_solve_p_below_two():
    geom = make_disk_geometry(1e-3)
    cfg = SolverConfig(p=1.5, grid_ns=41, grid_nt=13)
    fld = solve(geom, cfg)
    assert fld.converged
    assert fld.values.min() >= -0.5 - 1e-10
    assert fld.values.max() <= 0.5 + 1e-10


def test_gradient_affine_exact_on_flat():
    geom = make_flat_geometry(0.3)
    cfg = SolverConfig(grid_ns=11, grid_nt=9)
    fld = make_field(geom, cfg)
    pts = fld.node_points()
    fld = fld.with_values(1.3 * pts[..., 0] - 0.4 * pts[..., 1] + 2.0)
    gf = gradient_field(fld)
    expected = np.hypot(1.3, 0.4)
    np.testing.assert_allclose(gf.magnitudes, expected, rtol=1e-10)


def test_gradient_argmax_in_neck():
    eps = 1e-3
    _, _, fld = disk_solution(eps)
    gf = gradient_field(fld)
    assert np.linalg.norm(gf.argmax_x[:-1]) <= 2 * np.sqrt(eps)


def test_gradient_scaling_homogeneity():
    _, _, fld = disk_solution()
    gf = gradient_field(fld)
    scaled = gradient_field(fld.with_values(2.0 * fld.values + 5.0))
    np.testing.assert_allclose(scaled.magnitudes, 2.0 * gf.magnitudes, rtol=1e-12)
    assert scaled.argmax_index == gf.argmax_index


def test_oscillation_constant_zero():
    geom = make_flat_geometry(0.5)
    cfg = SolverConfig(grid_ns=9, grid_nt=9)
    fld = make_field(geom, cfg).with_values(np.full((9, 9), 2.2))
    assert oscillation(fld, Region("full")) == 0.0


def test_oscillation_linear():
    geom = make_flat_geometry(0.5)
    cfg = SolverConfig(grid_ns=33, grid_nt=9)
    fld = make_field(geom, cfg)
    fld = fld.with_values(fld.node_points()[..., 0])
    rho = 0.3
    osc = oscillation(fld, Region("neck", center=[0.0], radii=(rho,)))
    spacing = np.max(np.diff(fld.s_axes[0]))
    assert abs(osc - 2 * rho) <= 2 * spacing


def test_oscillation_nested_monotone():
    _, _, fld = disk_solution()
    radii = [0.4, 0.2, 0.1, 0.05]
    oscs = [oscillation(fld, Region("neck", center=[0.0], radii=(r,))) for r in radii]
    assert all(b <= a + 1e-14 for a, b in zip(oscs, oscs[1:]))


def test_oscillation_empty_region():
    _, _, fld = disk_solution(nt=9)
    tiny = Region("annulus", center=[0.0], radii=(0.49, 0.499))
    # annulus beyond the outermost node ring but inside |x'|<1
    with pytest.raises(ValueError):
        oscillation(fld, Region("annulus", center=[0.6], radii=(1e-7, 2e-7)))
    del tiny


def test_neumann_residual_constant_field():
    geom = make_flat_geometry(0.5)
    cfg = SolverConfig(grid_ns=9, grid_nt=9)
    fld = make_field(geom, cfg).with_values(np.full((9, 9), 1.0))
    res = neumann_residual(fld)
    assert res["flux_L2_upper"] == 0.0
    assert res["flux_L2_lower"] == 0.0


def test_neumann_residual_halves_under_refinement():
    geom = make_disk_geometry(1e-3)
    vals = []
    for ns, nt in ((41, 13), (81, 25)):
        cfg = SolverConfig(p=2.0, eta=0.0, grid_ns=ns, grid_nt=nt, grading_ratio=1.0)
        fld = solve(geom, cfg)
        vals.append(neumann_residual(fld)["flux_L2_upper"])
    ratio = vals[0] / vals[1]
    assert 1.5 <= ratio <= 3.0


def test_neumann_residual_detects_violation():
    # u = x_n has nonzero conormal flux; residual must not vanish with h
    geom = make_flat_geometry(0.5)
    res = []
    for ns, nt in ((17, 9), (33, 17)):
        cfg = SolverConfig(grid_ns=ns, grid_nt=nt)
        fld = make_field(geom, cfg)
        fld = fld.with_values(fld.node_points()[..., 1])
        res.append(neumann_residual(fld)["flux_L2_upper"])
    assert res[-1] > 0.5
    assert abs(res[0] - res[1]) < 0.1 * res[0]


def test_dirichlet_expression_trace():
    fn = dirichlet_from_expression("x1 + 0.5*xn")
    out = fn(np.array([[1.0, 2.0], [0.0, 4.0]]))
    np.testing.assert_allclose(out, [2.0, 2.0])


def test_custom_dirichlet_matched_exactly():
    geom = make_disk_geometry(1e-2)
    cfg = SolverConfig(grid_ns=17, grid_nt=9, dirichlet="x1**3")
    fld = solve(geom, cfg)
    pts = fld.node_points()
    mask = fld.dirichlet_mask()
    np.testing.assert_allclose(fld.values[mask], pts[mask][:, 0] ** 3, atol=0)


def test_container_round_trip():
    _, _, fld = disk_solution(nt=9)
    data = fld.to_container()
    back = DiscreteField.from_container(data)
    np.testing.assert_array_equal(back.values, fld.values)
    assert back.p == fld.p and back.eta == fld.eta
    assert back.geom.epsilon == fld.geom.epsilon


def test_solve_3d_coarse():
    geom = make_disk_geometry(1e-2, dim=3)
    cfg = SolverConfig(p=2.0, eta=0.0, grid_ns=15, grid_nt=9)
    fld = solve(geom, cfg)
    assert fld.converged
    assert fld.values.min() >= -0.5 - 1e-10
    assert fld.values.max() <= 0.5 + 1e-10
    # odd in x1, even in x2 and transverse
    v = fld.values
    assert np.abs(v + v[::-1, :, :]).max() <= 1e-8
    assert np.abs(v - v[:, ::-1, :]).max() <= 1e-8
    assert np.abs(v - v[:, :, ::-1]).max() <= 1e-8
