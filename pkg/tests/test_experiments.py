import math

import numpy as np
import pytest

from gaplab.experiments import (
    RateRow,
    RateTable,
    dyadic_osc_radii,
    fit_rate,
    oscillation_decay_fit,
    sweep_epsilon,
    theorem_targets,
)
from gaplab.geometry import make_disk_geometry
from gaplab.solver import SolverConfig, make_field, solve


def test_targets_p2():
    t = theorem_targets(2, 2.0, 0.0)
    assert t.upper_exponent == 0.5
    assert t.lower_exponent == 0.5  # (1 - delta)/2 at delta = 0, attained for delta > 0
    assert any("delta > 0" in n for n in t.notes)


def test_targets_p5():
    t = theorem_targets(2, 5.0, 0.1)
    assert t.upper_exponent == pytest.approx(0.275)
    assert t.lower_exponent == pytest.approx(0.225)


def test_targets_3d():
    t = theorem_targets(3, 2.0, 0.0)
    assert t.upper_exponent == 0.5
    assert t.lower_exponent is None
    assert any("beta" in n for n in t.notes)


def test_targets_domain_errors():
    with pytest.raises(ValueError):
        theorem_targets(1, 2.0)
    with pytest.raises(ValueError):
        theorem_targets(2, 1.0)
    with pytest.raises(ValueError):
        theorem_targets(2, 2.0, -0.1)


def _fake_row(eps, grad):
    return RateRow(epsilon=eps, max_grad_neck=grad, max_grad_global=grad,
                   argmax_x=[0.0, 0.0], window_radius=0.1, osc_by_radius={},
                   converged=True, iters=1, energy=1.0, grid_ns=9, grid_nt=9)


def synthetic_table(alpha, scale=1.0, epsilons=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4)):
    rows = [_fake_row(e, scale * e**-alpha) for e in epsilons]
    return RateTable(rows=rows, geometry={}, config={}, window_delta=0.25)


def test_fit_exact_power_law():
    fit = fit_rate(synthetic_table(0.5), drop_largest=False)
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.stderr == pytest.approx(0.0, abs=1e-10)


def test_fit_power_law_with_prefactor():
    fit = fit_rate(synthetic_table(1.0 / 3.0, scale=3.0), drop_largest=False)
    assert fit.slope == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_fit_requires_four_rows():
    table = synthetic_table(0.5, epsilons=(1e-2, 1e-3, 1e-4, 1e-5))
    with pytest.raises(ValueError):
        fit_rate(table)  # drop_largest leaves 3


def test_fit_excludes_unconverged():
    table = synthetic_table(0.5)
    table.rows[2].converged = False
    fit = fit_rate(table, drop_largest=False)
    assert fit.n_points == 4
    assert table.rows[2].epsilon not in fit.window


def test_table_rejects_unsorted_epsilons():
    rows = [_fake_row(1e-3, 1.0), _fake_row(1e-2, 1.0)]
    with pytest.raises(ValueError):
        RateTable(rows=rows, geometry={}, config={}, window_delta=0.25)


def test_sweep_rejects_duplicates_and_empty():
    cfg = SolverConfig(grid_ns=17, grid_nt=9)
    with pytest.raises(ValueError):
        sweep_epsilon(make_disk_geometry, cfg, [1e-2, 1e-2])
    table = sweep_epsilon(make_disk_geometry, cfg, [])
    assert table.rows == []


def test_sweep_disks_p2_small():
    cfg = SolverConfig(p=2.0, eta=0.0, grid_ns=17, grid_nt=9)
    eps = [1e-2, 3e-3, 1e-3]
    table = sweep_epsilon(make_disk_geometry, cfg, eps)
    assert len(table.rows) == 3
    grads = [r.max_grad_neck for r in table.rows]
    assert grads[0] < grads[1] < grads[2]
    assert all(r.converged for r in table.rows)
    # per-eps resolution rule kicked in
    assert table.rows[-1].grid_ns > table.rows[0].grid_ns


def test_sweep_csv_deterministic():
    cfg = SolverConfig(p=2.0, eta=0.0, grid_ns=17, grid_nt=9)
    eps = [1e-2, 3e-3]
    t1 = sweep_epsilon(make_disk_geometry, cfg, eps)
    t2 = sweep_epsilon(make_disk_geometry, cfg, eps)
    assert t1.csv_text() == t2.csv_text()


def test_dyadic_osc_radii():
    radii = dyadic_osc_radii(0.5, 1e-4)
    assert radii[0] == 0.25
    assert all(a / b == 2.0 for a, b in zip(radii, radii[1:]))
    assert all(r > 1e-2 for r in radii)


def test_oscillation_fit_exact_power():
    # u = |x1|^beta: osc over the neck of radius rho is (largest node
    # below rho)^beta, so the fitted slope matches beta up to the node
    # quantization of the outer radii
    geom = make_disk_geometry(1e-4)
    cfg = SolverConfig(grid_ns=257, grid_nt=9, grading_ratio=1.01)
    fld = make_field(geom, cfg)
    beta = 0.7
    pts = fld.node_points()
    fld = fld.with_values(np.abs(pts[..., 0]) ** beta)
    fit = oscillation_decay_fit(fld, [0.4, 0.2, 0.1, 0.05])
    assert not fit.degenerate
    assert fit.beta_hat == pytest.approx(beta, abs=0.01)
    assert fit.r_squared > 0.999

    # the same fit against the exact discrete oscillations is a sharp oracle
    nodes = np.abs(fld.s_axes[0])
    expect = [np.max(nodes[nodes < r]) ** beta for r in (0.4, 0.2, 0.1, 0.05)]
    np.testing.assert_allclose(sorted(fit.oscillations), sorted(expect), rtol=1e-12)


def test_oscillation_fit_constant_abstains():
    geom = make_disk_geometry(1e-4)
    cfg = SolverConfig(grid_ns=17, grid_nt=9)
    fld = make_field(geom, cfg).with_values(np.full((17, 9), 4.0))
    fit = oscillation_decay_fit(fld, [0.4, 0.2, 0.1, 0.05])
    assert fit.degenerate
    assert fit.beta_hat is None


def test_oscillation_fit_rejects_bad_radii():
    geom = make_disk_geometry(1e-2)
    cfg = SolverConfig(grid_ns=17, grid_nt=9)
    fld = make_field(geom, cfg)
    with pytest.raises(ValueError):
        oscillation_decay_fit(fld, [0.4, 0.2, 0.1, 0.05])  # 0.05 < sqrt(1e-2)
    with pytest.raises(ValueError):
        oscillation_decay_fit(fld, [0.4, 0.3, 0.2, 0.15])  # not dyadic


def test_sweep_parallel_matches_serial():
    cfg = SolverConfig(p=2.0, eta=0.0, grid_ns=17, grid_nt=9)
    eps = [1e-2, 3e-3, 1e-3]
    serial = sweep_epsilon(make_disk_geometry, cfg, eps, workers=1)
    parallel = sweep_epsilon(make_disk_geometry, cfg, eps, workers=2)
    assert serial.csv_text() == parallel.csv_text()


def test_oscillation_decay_3d_coarse():
    # coarse 3D solve of the balls-of-revolution geometry
    eps = 1e-3
    geom = make_disk_geometry(eps, dim=3)
    cfg = SolverConfig(p=2.0, eta=0.0, grid_ns=21, grid_nt=9)
    fld = solve(geom, cfg)
    assert fld.converged
    radii = [0.45, 0.225, 0.1125, 0.05625]
    fit = oscillation_decay_fit(fld, radii)
    assert fit.beta_hat is not None
    assert fit.beta_hat > 0.05
    assert fit.stderr < fit.beta_hat / 2
