"""Separation sweeps, blow-up exponent fits, and oscillation decay fits.

A sweep solves the gap problem for a decreasing list of separations eps,
recording the largest gradient both globally and inside the neck window
|x'| <= 8 sqrt(eps/delta_window) where the lower-bound construction looks,
plus oscillations over dyadic neck radii. Exponents come from ordinary
least squares on log max|Du| against log(1/eps); the fit window drops the
largest eps by default since the growth laws are asymptotic. Everything is
deterministic given identical configs, so re-runs reproduce tables
bit-identically.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .geometry import GapGeometry, Region, geometry_from_descriptor
from .solver import (DiscreteField, SolverConfig, gradient_field,
                     nodes_for_center_width, oscillation, solve)

# window factor of the lower-bound construction, |x'| <= 8 sqrt(eps/delta)
DEFAULT_WINDOW_DELTA = 0.25


@dataclass
class TheoremTargets:
    """Exponent targets the sweeps are compared against."""

    upper_exponent: float
    lower_exponent: Optional[float]
    notes: list

    def to_dict(self) -> dict:
        return {"upper_exponent": self.upper_exponent,
                "lower_exponent": self.lower_exponent, "notes": self.notes}


def theorem_targets(n: int, p: float, delta: float = 0.0) -> TheoremTargets:
    """Blow-up exponent bounds for max |Du| ~ eps^(-alpha).

    Upper bound 1/2 for p <= n + 1 and (n + 2 delta)/(2(p-1)) for
    p > n + 1 (any delta > 0). Lower bounds exist in the plane: (1-delta)/2
    for p <= 3 and (1-delta)/(p-1) for p > 3. For n >= 3 the upper bound
    improves to 1/2 - beta with an unspecified beta > 0.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if p <= 1:
        raise ValueError("p must exceed 1")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    notes = []
    if p <= n + 1:
        upper = 0.5
    else:
        upper = (n + 2 * delta) / (2 * (p - 1))
        if delta == 0:
            notes.append("upper bound holds for every exponent above "
                         "n/(2(p-1)); delta > 0 gives an attained bound")
    if n == 2:
        lower = (1 - delta) / 2 if p <= 3 else (1 - delta) / (p - 1)
        if delta == 0:
            notes.append("lower bound attained only for delta > 0")
    else:
        lower = None
        notes.append("for n >= 3 the upper bound improves to 1/2 - beta "
                     "for some unspecified beta in (0, 1/2)")
    return TheoremTargets(upper_exponent=float(upper), lower_exponent=lower,
                          notes=notes)


@dataclass
class RateRow:
    epsilon: float
    max_grad_neck: float
    max_grad_global: float
    argmax_x: list
    window_radius: float
    osc_by_radius: dict
    converged: bool
    iters: int
    energy: float
    grid_ns: int
    grid_nt: int

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "max_grad_neck": self.max_grad_neck,
            "max_grad_global": self.max_grad_global,
            "argmax_x": self.argmax_x,
            "window_radius": self.window_radius,
            "osc_by_radius": self.osc_by_radius,
            "converged": self.converged,
            "iters": self.iters,
            "energy": self.energy,
            "grid_ns": self.grid_ns,
            "grid_nt": self.grid_nt,
        }


@dataclass
class RateTable:
    rows: list
    geometry: dict
    config: dict
    window_delta: float

    def __post_init__(self):
        eps = [r.epsilon for r in self.rows]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")

    @property
    def epsilons(self):
        return [r.epsilon for r in self.rows]

    def converged_rows(self):
        return [r for r in self.rows if r.converged]

    def csv_text(self) -> str:
        """Deterministic CSV serialization (shortest round-trip floats)."""
        osc_radii = sorted({rr for row in self.rows
                            for rr in row.osc_by_radius}, reverse=True)
        header = ["epsilon", "max_grad_neck", "max_grad_global"]
        d = len(self.rows[0].argmax_x) if self.rows else 2
        header += [f"argmax_x{i + 1}" for i in range(d)]
        header += ["window_radius"]
        header += [f"osc_r={_fmt(rr)}" for rr in osc_radii]
        header += ["converged", "iters", "energy", "grid_ns", "grid_nt"]
        lines = [",".join(header)]
        for row in self.rows:
            cells = [_fmt(row.epsilon), _fmt(row.max_grad_neck),
                     _fmt(row.max_grad_global)]
            cells += [_fmt(v) for v in row.argmax_x]
            cells += [_fmt(row.window_radius)]
            cells += [_fmt(row.osc_by_radius.get(rr, "")) for rr in osc_radii]
            cells += ["1" if row.converged else "0", str(row.iters),
                      _fmt(row.energy), str(row.grid_ns), str(row.grid_nt)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "geometry": self.geometry,
            "config": self.config,
            "window_delta": self.window_delta,
        }


def _fmt(x) -> str:
    if x == "":
        return ""
    return repr(float(x))


def _config_dict(cfg: SolverConfig) -> dict:
    return {
        "p": cfg.p, "eta": cfg.eta, "grid_ns": cfg.grid_ns,
        "grid_nt": cfg.grid_nt, "outer_radius": cfg.outer_radius,
        "dirichlet": cfg.dirichlet, "newton_tol": cfg.newton_tol,
        "max_newton": cfg.max_newton, "continuation": cfg.continuation,
        "grading_ratio": cfg.grading_ratio,
    }


def resolution_rule(cfg: SolverConfig, epsilon: float) -> SolverConfig:
    """Per-eps grid: transverse count fixed, center cell width <= sqrt(eps)/4."""
    ns = nodes_for_center_width(cfg.outer_radius, math.sqrt(epsilon) / 4,
                                cfg.grading_ratio)
    return replace(cfg, grid_ns=ns)


def dyadic_osc_radii(outer_radius: float, epsilon: float, max_count: int = 6):
    """Dyadic radii outer/2, outer/4, ... staying above sqrt(eps)."""
    radii = []
    r = outer_radius / 2
    while r > math.sqrt(epsilon) and len(radii) < max_count:
        radii.append(r)
        r /= 2
    return radii


def _sweep_one(geom_desc: dict, cfg: SolverConfig, epsilon: float,
               window_delta: float) -> RateRow:
    geom = geometry_from_descriptor({**geom_desc, "epsilon": epsilon})
    cfg_eps = resolution_rule(cfg, epsilon)
    fld = solve(geom, cfg_eps)
    gf = gradient_field(fld)
    window = min(8 * math.sqrt(epsilon / window_delta), cfg.outer_radius)
    neck_max, argmax_x = gf.max_in_window(window)
    osc = {}
    for rr in dyadic_osc_radii(cfg.outer_radius, epsilon):
        osc[rr] = oscillation(fld, Region("neck", center=np.zeros(geom.dim - 1),
                                          radii=(rr,)))
    iters = sum(t.get("iters", 0) for t in fld.trace)
    energy = fld.trace[-1].get("energy", math.nan)
    return RateRow(
        epsilon=epsilon,
        max_grad_neck=neck_max,
        max_grad_global=gf.max_magnitude,
        argmax_x=[float(v) for v in argmax_x],
        window_radius=window,
        osc_by_radius=osc,
        converged=fld.converged,
        iters=iters,
        energy=energy,
        grid_ns=cfg_eps.grid_ns,
        grid_nt=cfg_eps.grid_nt,
    )


def sweep_epsilon(geom_family, cfg: SolverConfig, epsilons,
                  window_delta: float = DEFAULT_WINDOW_DELTA,
                  workers: int = 1) -> RateTable:
    """One converged solve per separation, assembled into a rate table.

    geom_family maps eps to a GapGeometry (a callable, or a geometry
    descriptor dict whose 'epsilon' entry gets replaced). Rows are keyed
    by eps, so parallel execution (workers > 1) produces identical tables.
    Non-converged solves stay in the table flagged, excluded from fits.
    """
    eps = [float(e) for e in epsilons]
    if any(e <= 0 or e >= 1 for e in eps):
        raise ValueError("epsilons must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing (no duplicates)")

    if callable(geom_family):
        descs = {e: geom_family(e).descriptor() for e in eps}
        geom_desc = descs[eps[0]] if eps else {}
    else:
        geom_desc = dict(geom_family)
        descs = {e: {**geom_desc, "epsilon": e} for e in eps}

    rows = []
    if workers > 1 and len(eps) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {e: pool.submit(_sweep_one, descs[e], cfg, e, window_delta)
                    for e in eps}
            rows = [futs[e].result() for e in eps]
    else:
        rows = [_sweep_one(descs[e], cfg, e, window_delta) for e in eps]
    return RateTable(rows=rows, geometry=geom_desc, config=_config_dict(cfg),
                     window_delta=window_delta)


@dataclass
class RateFit:
    """OLS fit of log(max gradient) against log(1/eps)."""

    slope: float
    intercept: float
    stderr: float
    r_squared: float
    window: list                  # epsilons used
    n_points: int
    quantity: str = "max_grad_neck"

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "stderr": self.stderr, "r_squared": self.r_squared,
                "window": self.window, "n_points": self.n_points,
                "quantity": self.quantity}


def _ols(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = len(x)
    xbar, ybar = x.mean(), y.mean()
    sxx = np.sum((x - xbar) ** 2)
    slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    intercept = float(ybar - slope * xbar)
    resid = y - (intercept + slope * x)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ybar) ** 2))
    stderr = math.sqrt(ss_res / (m - 2) / sxx) if m > 2 else 0.0
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, stderr, r2


def fit_rate(table: RateTable, window: Optional[tuple] = None,
             drop_largest: bool = True, quantity: str = "max_grad_neck") -> RateFit:
    """Fit the blow-up exponent on the table's converged rows.

    window = (eps_min, eps_max) restricts the rows; by default the largest
    eps is dropped as pre-asymptotic. Requires at least 4 usable rows.
    """
    rows = table.converged_rows()
    if window is not None:
        lo, hi = window
        rows = [r for r in rows if lo <= r.epsilon <= hi]
    elif drop_largest and len(rows) > 1:
        rows = rows[1:]
    if len(rows) < 4:
        raise ValueError("need at least 4 converged rows in the fit window")
    x = [math.log(1.0 / r.epsilon) for r in rows]
    y = [math.log(getattr(r, quantity)) for r in rows]
    slope, intercept, stderr, r2 = _ols(x, y)
    return RateFit(slope=slope, intercept=intercept, stderr=stderr,
                   r_squared=r2, window=[r.epsilon for r in rows],
                   n_points=len(rows), quantity=quantity)


@dataclass
class OscillationFit:
    beta_hat: Optional[float]
    stderr: Optional[float]
    r_squared: Optional[float]
    radii: list
    oscillations: list
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"beta_hat": self.beta_hat, "stderr": self.stderr,
                "r_squared": self.r_squared, "radii": self.radii,
                "oscillations": self.oscillations,
                "degenerate": self.degenerate}


def oscillation_decay_fit(fld: DiscreteField, radii) -> OscillationFit:
    """Slope of log osc(neck of radius r) against log r over dyadic radii.

    Radii must be dyadic, at least 4, and stay inside (sqrt(eps), 1/2)
    where the decay statement lives. A constant field gives zero
    oscillations; the fit then abstains instead of fabricating a slope.
    """
    radii = sorted((float(r) for r in radii), reverse=True)
    if len(radii) < 4:
        raise ValueError("need at least 4 radii")
    eps = fld.geom.epsilon
    lo, hi = math.sqrt(eps), 0.5
    for r in radii:
        if not (lo < r < hi):
            raise ValueError(f"radius {r} outside (sqrt(eps), 1/2) = "
                             f"({lo:.4g}, 0.5)")
    for a, b in zip(radii, radii[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ValueError("radii must be dyadic (consecutive ratio 2)")
    d = fld.geom.dim - 1
    oscs = [oscillation(fld, Region("neck", center=np.zeros(d), radii=(r,)))
            for r in radii]
    if any(o <= 0 for o in oscs):
        return OscillationFit(beta_hat=None, stderr=None, r_squared=None,
                              radii=radii, oscillations=oscs, degenerate=True)
    slope, _, stderr, r2 = _ols(np.log(radii), np.log(oscs))
    return OscillationFit(beta_hat=slope, stderr=stderr, r_squared=r2,
                          radii=radii, oscillations=oscs)
