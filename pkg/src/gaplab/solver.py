"""Energy-minimizing solver for the regularized p-Laplace problem in the gap.

The problem is discretized in the flattened neck coordinates of
``NeckChart``: tangential axes carry a geometrically graded tensor grid,
the transverse coordinate is rescaled to [0, 1] with a uniform grid. Cell
gradients (multilinear elements, one-point quadrature) are pulled back to
physical space through the chart Jacobian, so the discrete energy

    J(u) = sum_cells  gap(x'_c) * |cell| * (eta + |Du|^2)^(p/2) / p

is the physical energy. Dirichlet data is imposed on the lateral boundary
nodes; the top and bottom faces are left free, which is the discrete
natural (conormal-flux) condition. Minimization runs damped Newton with
(p, eta)-continuation from the quadratic p = 2 problem.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import GapGeometry, Region, geometry_from_descriptor, inner_normal
from .transforms import NeckChart


class LineSearchError(RuntimeError):
    """Raised when no energy-decreasing step exists along the search direction."""


def dirichlet_from_expression(expr: str) -> Callable:
    """Build a boundary-trace callable from a closed-form expression.

    The expression may use x1 ... xn, xn as the last coordinate, and numpy
    as np (e.g. "x1", "x1 + 0.3*np.sin(x2)").
    """
    def trace(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        names = {f"x{i + 1}": x[:, i] for i in range(x.shape[1])}
        names["xn"] = x[:, -1]
        names["np"] = np
        return np.broadcast_to(np.asarray(eval(expr, {"__builtins__": {}}, names),
                                          dtype=float), (x.shape[0],)).copy()
    trace.expression = expr
    return trace


_DEFAULT_TRACE = dirichlet_from_expression("x1")


@dataclass
class SolverConfig:
    """Discretization and continuation parameters.

    eta = None asks for the adaptive target 1e-10 * (max |Du|)^2 measured
    on the p = 2 warm start; an explicit value (including 0.0) is used
    as-is. grid_ns counts nodes per tangential axis, grid_nt transverse
    nodes. The continuation schedule, when given, must end at the target
    (p, eta).
    """

    p: float = 2.0
    eta: Optional[float] = None
    grid_ns: int = 65
    grid_nt: int = 17
    outer_radius: float = 0.5
    dirichlet: Optional[str] = None          # closed-form expression, default x1
    newton_tol: float = 1e-10
    max_newton: int = 60
    continuation: Optional[list] = None      # [(p, eta), ...] ending at target
    grading_ratio: float = 1.05

    def __post_init__(self):
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        if self.eta is not None and self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.grid_ns < 8 or self.grid_nt < 8:
            raise ValueError("grid_ns and grid_nt must be at least 8")
        if not (0 < self.outer_radius <= 0.5):
            raise ValueError("outer_radius must lie in (0, 1/2]")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.grading_ratio < 1.0:
            raise ValueError("grading_ratio must be >= 1")
        if self.continuation is not None:
            if not self.continuation:
                raise ValueError("continuation schedule must be nonempty")
            pk, ek = self.continuation[-1]
            if pk != self.p or (self.eta is not None and ek != self.eta):
                raise ValueError("continuation schedule must end at the target (p, eta)")

    def trace_fn(self) -> Callable:
        if self.dirichlet is None:
            return _DEFAULT_TRACE
        return dirichlet_from_expression(self.dirichlet)


def graded_axis(radius: float, n_nodes: int, ratio: float) -> np.ndarray:
    """Symmetric tangential axis on [-radius, radius], graded toward 0.

    Cell widths grow geometrically by `ratio` away from the center; the
    node count is rounded up to an odd number so 0 is a node and the axis
    is mirror symmetric.
    """
    if n_nodes % 2 == 0:
        n_nodes += 1
    half = (n_nodes - 1) // 2
    k = np.arange(half)
    widths = ratio**k
    pos = radius * np.concatenate([[0.0], np.cumsum(widths)]) / widths.sum()
    return np.concatenate([-pos[::-1][:-1], pos])


def nodes_for_center_width(radius: float, target: float, ratio: float,
                           min_nodes: int = 9) -> int:
    """Node count making the center cell width at most `target`."""
    if ratio == 1.0:
        half = max(1, math.ceil(radius / target))
    else:
        grow = 1.0 + radius * (ratio - 1.0) / target
        half = max(1, math.ceil(math.log(grow) / math.log(ratio)))
    return max(min_nodes, 2 * half + 1)


@dataclass
class DiscreteField:
    """Scalar field on the tensor grid in flattened neck coordinates.

    values has one axis per tangential direction plus a trailing transverse
    axis (the [0, 1] rescaled coordinate). p and eta record the parameters
    the field was solved at; trace keeps the per-stage convergence log.
    """

    chart: NeckChart
    s_axes: list
    tau: np.ndarray
    values: np.ndarray
    p: float = 2.0
    eta: float = 0.0
    trace: list = field(default_factory=list)
    converged: bool = True

    def __post_init__(self):
        expect = tuple(len(a) for a in self.s_axes) + (len(self.tau),)
        if self.values.shape != expect:
            raise ValueError(f"values shape {self.values.shape} != grid {expect}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def geom(self) -> GapGeometry:
        return self.chart.geom

    @property
    def d(self) -> int:
        return len(self.s_axes)

    def node_xp(self):
        """Tangential coordinates of all nodes, shape (n_tangential_nodes, d)."""
        grids = np.meshgrid(*self.s_axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1) + self.chart.base_xp

    def node_points(self):
        """Physical coordinates of every node, shape matching values + (n,)."""
        xp = self.node_xp()
        lo = self.geom.lower_height(xp)
        gap = self.geom.gap_width(xp)
        tshape = tuple(len(a) for a in self.s_axes)
        xn = (lo.reshape(tshape)[..., None]
              + gap.reshape(tshape)[..., None] * self.tau[None, :])
        xp_full = np.broadcast_to(
            xp.reshape(tshape + (1, self.d)), tshape + (len(self.tau), self.d))
        return np.concatenate([xp_full, xn[..., None]], axis=-1)

    def dirichlet_mask(self):
        mask = np.zeros(self.values.shape, dtype=bool)
        for a in range(self.d):
            sl = [slice(None)] * self.values.ndim
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = -1
            mask[tuple(sl)] = True
        return mask

    def with_values(self, values) -> "DiscreteField":
        return replace(self, values=np.asarray(values, dtype=float))

    def to_container(self) -> dict:
        return {
            "format": "gaplab-field-v1",
            "geometry": self.geom.descriptor(),
            "base_xp": self.chart.base_xp.tolist(),
            "outer_radius": self.chart.outer_radius,
            "s_axes": [a.tolist() for a in self.s_axes],
            "tau": self.tau.tolist(),
            "shape": list(self.values.shape),
            "values": self.values.ravel().tolist(),
            "p": self.p,
            "eta": self.eta,
            "trace": self.trace,
            "converged": self.converged,
        }

    @staticmethod
    def from_container(data: dict) -> "DiscreteField":
        if data.get("format") != "gaplab-field-v1":
            raise ValueError("not a gaplab field container")
        geom = geometry_from_descriptor(data["geometry"])
        chart = NeckChart(geom, base_xp=np.asarray(data["base_xp"]),
                          outer_radius=data["outer_radius"])
        values = np.asarray(data["values"], dtype=float).reshape(data["shape"])
        return DiscreteField(
            chart=chart,
            s_axes=[np.asarray(a, dtype=float) for a in data["s_axes"]],
            tau=np.asarray(data["tau"], dtype=float),
            values=values,
            p=data["p"],
            eta=data["eta"],
            trace=data.get("trace", []),
            converged=data.get("converged", True),
        )


def make_field(geom: GapGeometry, cfg: SolverConfig, values=None) -> DiscreteField:
    """Fresh field on the grid the config describes (zero values by default)."""
    chart = NeckChart(geom, base_xp=np.zeros(geom.dim - 1),
                      outer_radius=cfg.outer_radius)
    axis = graded_axis(cfg.outer_radius, cfg.grid_ns, cfg.grading_ratio)
    s_axes = [axis.copy() for _ in range(geom.dim - 1)]
    tau = np.linspace(0.0, 1.0, cfg.grid_nt)
    shape = tuple(len(a) for a in s_axes) + (len(tau),)
    vals = np.zeros(shape) if values is None else np.asarray(values, dtype=float)
    return DiscreteField(chart=chart, s_axes=s_axes, tau=tau, values=vals)


# ---------------------------------------------------------------------------
# Assembly workspace: everything that depends on grid + geometry only
# ---------------------------------------------------------------------------

class _Workspace:
    def __init__(self, fld: DiscreteField):
        self.node_shape = fld.values.shape
        nd = fld.values.ndim                      # tangential dims + 1
        d = nd - 1
        geom = fld.geom
        g0 = fld.chart.base_gap

        widths = [np.diff(a) for a in fld.s_axes] + [np.diff(fld.tau)]
        centers = [0.5 * (a[:-1] + a[1:]) for a in fld.s_axes]
        tau_c = 0.5 * (fld.tau[:-1] + fld.tau[1:])
        self.cells_shape = tuple(len(w) for w in widths)

        grids = np.meshgrid(*centers, indexing="ij")
        xp_c = (np.stack([g.ravel() for g in grids], axis=-1)
                + fld.chart.base_xp)              # (n_tan_cells, d)
        tshape = self.cells_shape[:-1]
        lo = geom.lower_height(xp_c).reshape(tshape)
        gap = geom.gap_width(xp_c).reshape(tshape)
        xn_c = lo[..., None] + gap[..., None] * tau_c
        xp_full = np.broadcast_to(
            xp_c.reshape(tshape + (1, d)), self.cells_shape + (d,))
        x_c = np.concatenate([xp_full, xn_c[..., None]], axis=-1)
        self.cell_centers = x_c
        x_flat = x_c.reshape(-1, d + 1)
        B, _ = fld.chart.jacobian_at_x(x_flat)
        self.M = np.einsum("cka,cla->ckl", B, B).reshape(
            self.cells_shape + (nd, nd))
        self.B = B.reshape(self.cells_shape + (nd, nd))

        # physical cell measure: gap(x') * prod(ds) * dtau
        meas = gap[..., None] * widths[-1]
        for a, w in enumerate(widths[:-1]):
            shape = [1] * nd
            shape[a] = -1
            meas = meas * w.reshape(shape)
        self.measure = meas

        # per-axis stencil scale 1/(2^(nd-1) * Delta_a), transverse Delta
        # includes the slab height g0
        self.inv_w = []
        for a in range(nd):
            w = widths[a] * (g0 if a == nd - 1 else 1.0)
            shape = [1] * nd
            shape[a] = -1
            self.inv_w.append(
                np.broadcast_to(w.reshape(shape), self.cells_shape).copy()
                ** -1 / 2 ** (nd - 1))
        self.delta = [
            np.broadcast_to(
                (widths[a] * (g0 if a == nd - 1 else 1.0)).reshape(
                    [len(widths[a]) if b == a else 1 for b in range(nd)]),
                self.cells_shape)
            for a in range(nd)]

        # flat node ids of each cell corner
        idx = np.indices(self.cells_shape)
        self.corners = list(itertools.product((0, 1), repeat=nd))
        self.corner_ids = {}
        for k in self.corners:
            shifted = idx + np.asarray(k).reshape((nd,) + (1,) * nd)
            self.corner_ids[k] = np.ravel_multi_index(
                tuple(shifted), self.node_shape).ravel()

        mask = np.zeros(self.node_shape, dtype=bool)
        for a in range(d):
            sl = [slice(None)] * nd
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = -1
            mask[tuple(sl)] = True
        self.dirichlet = mask.ravel()
        self.n_nodes = int(np.prod(self.node_shape))

    def cell_gradients(self, values):
        """Flattened-coordinate gradient per cell, shape cells + (nd,)."""
        nd = values.ndim
        comps = []
        for a in range(nd):
            g = np.diff(values, axis=a)
            for b in range(nd):
                if b == a:
                    continue
                sl0 = [slice(None)] * nd
                sl1 = [slice(None)] * nd
                sl0[b] = slice(0, -1)
                sl1[b] = slice(1, None)
                g = 0.5 * (g[tuple(sl0)] + g[tuple(sl1)])
            comps.append(g / self.delta[a])
        return np.stack(comps, axis=-1)

    def assemble(self, values, p, eta, want_hessian=True):
        """Energy, flat gradient, and (optionally) sparse Hessian."""
        nd = values.ndim
        xi = self.cell_gradients(values)
        Mxi = np.einsum("...kl,...l->...k", self.M, xi)
        q2 = eta + np.einsum("...k,...k->...", xi, Mxi)
        if np.any(~np.isfinite(q2)):
            bad = np.argwhere(~np.isfinite(q2))[0]
            raise FloatingPointError(f"non-finite energy density at cell {tuple(bad)}")
        sigma = _coefficient(q2, p, 2)
        a2 = _coefficient(q2, p, 4)
        J = float(np.sum(self.measure * q2 ** (p / 2) / p))

        # y_k = <M xi, c_k> for each corner stencil vector c_k
        sgn = {k: [1.0 if k[a] else -1.0 for a in range(nd)] for k in self.corners}
        y = {}
        for k in self.corners:
            acc = np.zeros(self.cells_shape)
            for a in range(nd):
                acc += sgn[k][a] * Mxi[..., a] * self.inv_w[a]
            y[k] = acc

        grad = np.zeros(self.n_nodes)
        gfac = self.measure * sigma
        for k in self.corners:
            np.add.at(grad, self.corner_ids[k], (gfac * y[k]).ravel())
        grad[self.dirichlet] = 0.0

        if not want_hessian:
            return J, grad, None

        rows, cols, vals = [], [], []
        rank_fac = np.zeros_like(q2) if p == 2.0 else (p - 2) * self.measure * a2
        for k in self.corners:
            for l in self.corners:
                mkl = np.zeros(self.cells_shape)
                for a in range(nd):
                    for b in range(nd):
                        mkl += (sgn[k][a] * sgn[l][b] * self.M[..., a, b]
                                * self.inv_w[a] * self.inv_w[b])
                v = rank_fac * y[k] * y[l] + self.measure * sigma * mkl
                rows.append(self.corner_ids[k])
                cols.append(self.corner_ids[l])
                vals.append(v.ravel())
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_nodes, self.n_nodes)).tocsr()
        H = _constrain(H, self.dirichlet)
        return J, grad, H

    def picard_matrix(self, values, p, eta):
        """Lagged-coefficient matrix: the sigma-weighted stiffness only."""
        nd = values.ndim
        xi = self.cell_gradients(values)
        Mxi = np.einsum("...kl,...l->...k", self.M, xi)
        q2 = eta + np.einsum("...k,...k->...", xi, Mxi)
        sigma = _coefficient(q2, p, 2)
        sgn = {k: [1.0 if k[a] else -1.0 for a in range(nd)] for k in self.corners}
        rows, cols, vals = [], [], []
        for k in self.corners:
            for l in self.corners:
                mkl = np.zeros(self.cells_shape)
                for a in range(nd):
                    for b in range(nd):
                        mkl += (sgn[k][a] * sgn[l][b] * self.M[..., a, b]
                                * self.inv_w[a] * self.inv_w[b])
                rows.append(self.corner_ids[k])
                cols.append(self.corner_ids[l])
                vals.append((self.measure * sigma * mkl).ravel())
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_nodes, self.n_nodes)).tocsr()
        return _constrain(H, self.dirichlet)


def _coefficient(q2, p, k):
    """q2^((p-k)/2) with the correct zero-gradient limit (0^0 = 1)."""
    power = (p - k) / 2
    if power == 0:
        return np.ones_like(q2)
    # the zero entries only ever multiply factors vanishing at least as fast
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q2 > 0, q2**power, 0.0)


def _constrain(H: sp.csr_matrix, mask) -> sp.csr_matrix:
    """Zero constrained rows/columns and put ones on their diagonal."""
    keep = sp.diags((~mask).astype(float))
    H = keep @ H @ keep
    H = H + sp.diags(mask.astype(float))
    return H.tocsr()


def assemble_energy(fld: DiscreteField, cfg: SolverConfig, p=None, eta=None,
                    want_hessian=True):
    """Energy J, flat gradient (zeroed at Dirichlet nodes), sparse Hessian."""
    ws = _Workspace(fld)
    return ws.assemble(fld.values, cfg.p if p is None else p,
                       (cfg.eta or 0.0) if eta is None else eta, want_hessian)


# ---------------------------------------------------------------------------
# Newton / continuation driver
# ---------------------------------------------------------------------------

def _newton_stage(ws: _Workspace, values, p, eta, tol, max_iter):
    """Minimize at fixed (p, eta). Returns (values, info)."""
    u = values.ravel().copy()
    shape = values.shape
    J, g, H = ws.assemble(u.reshape(shape), p, eta)
    energies = [J]
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn <= tol * (1.0 + abs(J)):
            return u.reshape(shape), {"p": p, "eta": eta, "iters": it,
                                      "grad_norm": gn, "energy": J,
                                      "energies": energies, "converged": True}
        delta = spla.spsolve(H.tocsc(), -g)
        slope = float(g @ delta)
        if not np.isfinite(slope) or slope >= 0:
            # Newton direction unusable (possible for p < 2 near eta -> 0):
            # fall back to the lagged-coefficient step
            Hp = ws.picard_matrix(u.reshape(shape), p, eta)
            delta = spla.spsolve(Hp.tocsc(), -g)
            slope = float(g @ delta)
            if slope >= 0:
                raise LineSearchError("no descent direction at this iterate")
        lam = 1.0
        while True:
            u_try = u + lam * delta
            J_try, g_try, H_try = ws.assemble(u_try.reshape(shape), p, eta)
            if J_try <= J + 1e-4 * lam * slope or J_try <= J * (1 + 1e-14):
                u, J, g, H = u_try, J_try, g_try, H_try
                energies.append(J)
                break
            lam *= 0.5
            if lam < 1e-12:
                raise LineSearchError("line search failed to decrease the energy")
    gn = float(np.linalg.norm(g))
    return u.reshape(shape), {"p": p, "eta": eta, "iters": max_iter,
                              "grad_norm": gn, "energy": J,
                              "energies": energies, "converged": False}


def _default_schedule(p_target, eta_start, eta_target):
    """Geometric continuation from (2, eta_start) to (p_target, eta_target)."""
    ps = [2.0]
    while abs(math.log((ps[-1] - 1) / (p_target - 1))) > 1e-12:
        step = 2.0 if p_target > ps[-1] else 0.5
        nxt = 1.0 + (ps[-1] - 1.0) * step
        if (p_target > 2 and nxt >= p_target) or (p_target < 2 and nxt <= p_target):
            nxt = p_target
        ps.append(nxt)
    etas = [eta_start]
    if eta_target < eta_start:
        while etas[-1] > eta_target:
            nxt = etas[-1] * 1e-2
            if nxt <= eta_target * (1 + 1e-12):
                nxt = eta_target
            etas.append(nxt)
    else:
        etas = [eta_target]
    k = max(len(ps), len(etas))
    ps = ps + [ps[-1]] * (k - len(ps))
    etas = etas + [etas[-1]] * (k - len(etas))
    return list(zip(ps, etas))


def solve(geom: GapGeometry, cfg: SolverConfig) -> DiscreteField:
    """Solve the gap problem for the config's (p, eta) via continuation.

    The p = 2 problem (a single sparse solve) warms up the Newton path.
    Non-convergence within max_newton returns the best iterate with
    converged=False in the trace; a failed line search raises.
    """
    fld = make_field(geom, cfg)
    ws = _Workspace(fld)
    trace = []

    # Dirichlet data, also used as the initial iterate everywhere.
    trace_fn = cfg.trace_fn()
    pts = fld.node_points().reshape(-1, geom.dim)
    u0 = trace_fn(pts).reshape(fld.values.shape).astype(float)

    values, info = _newton_stage(ws, u0, 2.0, 0.0, cfg.newton_tol, cfg.max_newton)
    info["max_grad"] = _max_gradient(ws, values)
    trace.append(info)

    target_eta = cfg.eta
    if cfg.p != 2.0 or (target_eta not in (None, 0.0)):
        scale = max(info["max_grad"], 1e-30)
        if target_eta is None:
            target_eta = 1e-10 * scale**2
        if cfg.continuation is not None:
            schedule = [(float(pk), float(ek)) for pk, ek in cfg.continuation]
        else:
            schedule = _default_schedule(cfg.p, 1e-2 * scale**2, target_eta)
        for pk, ek in schedule:
            values, info = _newton_stage(ws, values, pk, ek,
                                         cfg.newton_tol, cfg.max_newton)
            info["max_grad"] = _max_gradient(ws, values)
            trace.append(info)
            if not info["converged"]:
                break
    eta_final = 0.0 if target_eta is None else float(target_eta)
    return replace(fld, values=values, p=cfg.p, eta=eta_final, trace=trace,
                   converged=all(t["converged"] for t in trace))


def linear_p2_solve(geom: GapGeometry, cfg: SolverConfig) -> DiscreteField:
    """Direct sparse solve of the p = 2 (quadratic energy) system.

    Independent of the Newton path: lifts the boundary data and solves the
    constant-coefficient normal equations in one factorization.
    """
    fld = make_field(geom, cfg)
    ws = _Workspace(fld)
    pts = fld.node_points().reshape(-1, geom.dim)
    lift = cfg.trace_fn()(pts).reshape(fld.values.shape).astype(float)
    lift.ravel()[~ws.dirichlet] = 0.0
    _, g, H = ws.assemble(lift, 2.0, 0.0)
    u = lift.ravel() + spla.spsolve(H.tocsc(), -g)
    return replace(fld, values=u.reshape(fld.values.shape), p=2.0, eta=0.0,
                   trace=[{"p": 2.0, "eta": 0.0, "direct": True, "converged": True}],
                   converged=True)


def _max_gradient(ws: _Workspace, values) -> float:
    xi = ws.cell_gradients(values)
    G = np.einsum("...ka,...k->...a", ws.B, xi)
    return float(np.sqrt(np.einsum("...a,...a->...", G, G)).max())


# ---------------------------------------------------------------------------
# Field diagnostics
# ---------------------------------------------------------------------------

@dataclass
class GradientField:
    """Physical gradient sampled at cell centers."""

    magnitudes: np.ndarray        # shape = cells
    vectors: np.ndarray           # shape = cells + (n,)
    centers: np.ndarray           # shape = cells + (n,)
    argmax_index: tuple
    argmax_x: np.ndarray
    max_magnitude: float

    def max_in_window(self, radius: float):
        """Largest |Du| among cells with |x'| <= radius, with its location."""
        xp = self.centers[..., :-1]
        mask = np.linalg.norm(xp, axis=-1) <= radius
        if not np.any(mask):
            raise ValueError("window contains no cells")
        vals = np.where(mask, self.magnitudes, -np.inf)
        idx = _argmax_with_ties(vals, self.centers)
        return float(self.magnitudes[idx]), self.centers[idx]


def _argmax_with_ties(vals, centers):
    """Index of the max; ties go to smallest |x'|, then lexicographic center."""
    top = np.max(vals)
    cand = np.argwhere(vals == top)
    if len(cand) == 1:
        return tuple(cand[0])

    def key(c):
        x = centers[tuple(c)]
        return (np.linalg.norm(x[:-1]), tuple(x))

    best = min(range(len(cand)), key=lambda i: key(cand[i]))
    return tuple(cand[best])


def gradient_field(fld: DiscreteField) -> GradientField:
    """|Du| at cell centers in physical coordinates, plus the argmax."""
    ws = _Workspace(fld)
    xi = ws.cell_gradients(fld.values)
    G = np.einsum("...ka,...k->...a", ws.B, xi)
    mags = np.sqrt(np.einsum("...a,...a->...", G, G))
    idx = _argmax_with_ties(mags, ws.cell_centers)
    return GradientField(
        magnitudes=mags,
        vectors=G,
        centers=ws.cell_centers,
        argmax_index=idx,
        argmax_x=ws.cell_centers[idx],
        max_magnitude=float(mags[idx]),
    )


def oscillation(fld: DiscreteField, region: Region) -> float:
    """max - min of nodal values whose physical image lies in the region."""
    xp = fld.node_xp()
    mask = region.contains_xp(xp).reshape(tuple(len(a) for a in fld.s_axes))
    if not np.any(mask):
        raise ValueError("region does not intersect the grid")
    vals = fld.values[mask, :]
    return float(vals.max() - vals.min())


def neumann_residual(fld: DiscreteField) -> dict:
    """L2 norm of the discrete conormal flux on each boundary profile.

    The flux (eta + |Du|^2)^((p-2)/2) du/dnu is measured at boundary face
    centers with second-order one-sided transverse differences; for the
    exact discrete minimizer it vanishes at the discretization rate.
    """
    ws = _Workspace(fld)
    geom = fld.geom
    d = fld.d
    g0 = fld.chart.base_gap
    dtau = fld.tau[1] - fld.tau[0]

    out = {}
    for side, sl, sgn in (("upper", -1, +1), ("lower", 0, -1)):
        u0 = fld.values[..., sl]
        u1 = fld.values[..., sl - sgn * 1]
        u2 = fld.values[..., sl - sgn * 2]
        dudtau = sgn * (3 * u0 - 4 * u1 + u2) / (2 * dtau)

        # average nodal data to tangential face centers
        def to_centers(arr):
            for a in range(d):
                sl0 = [slice(None)] * arr.ndim
                sl1 = [slice(None)] * arr.ndim
                sl0[a] = slice(0, -1)
                sl1[a] = slice(1, None)
                arr = 0.5 * (arr[tuple(sl0)] + arr[tuple(sl1)])
            return arr

        dzn = to_centers(dudtau) / g0
        tang = []
        for a in range(d):
            g = np.diff(u0, axis=a)
            for b in range(d):
                if b == a:
                    continue
                sl0 = [slice(None)] * g.ndim
                sl1 = [slice(None)] * g.ndim
                sl0[b] = slice(0, -1)
                sl1[b] = slice(1, None)
                g = 0.5 * (g[tuple(sl0)] + g[tuple(sl1)])
            w = np.diff(fld.s_axes[a])
            shape = [1] * g.ndim
            shape[a] = -1
            tang.append(g / w.reshape(shape))
        xi = np.stack(tang + [dzn], axis=-1)

        centers = [0.5 * (ax[:-1] + ax[1:]) for ax in fld.s_axes]
        grids = np.meshgrid(*centers, indexing="ij")
        xp_c = np.stack([g.ravel() for g in grids], axis=-1) + fld.chart.base_xp
        if side == "upper":
            xn_c = geom.upper_height(xp_c)
        else:
            xn_c = geom.lower_height(xp_c)
        x_face = np.concatenate([xp_c, xn_c[:, None]], axis=1)
        B, _ = fld.chart.jacobian_at_x(x_face)
        G = np.einsum("cka,ck->ca", B, xi.reshape(-1, d + 1))
        nu = inner_normal(geom, side, xp_c)
        q2 = fld.eta + np.einsum("ca,ca->c", G, G)
        sigma = np.where(q2 > 0, q2 ** ((fld.p - 2) / 2), 0.0)
        flux = sigma * np.einsum("ca,ca->c", G, nu)

        prof = geom.h_upper if side == "upper" else geom.h_lower
        slope = prof.gradient(xp_c)
        area = np.sqrt(1.0 + np.einsum("ci,ci->c", slope, slope))
        for a in range(d):
            w = np.diff(fld.s_axes[a])
            area = area * np.broadcast_to(
                w.reshape([len(w) if b == a else 1 for b in range(d)]),
                tuple(len(c) for c in centers)).ravel()
        out[f"flux_L2_{side}"] = float(np.sqrt(np.sum(flux**2 * area)))
    return out
