"""Coordinate charts that flatten the thin gap onto computational cylinders.

Two charts are provided:

* ``NeckChart`` maps the gap region above a base point onto a flat slab by
  an affine-in-``x_n`` stretch of the vertical coordinate. Its inverse is
  closed form and its Jacobian has unit tangential block, so it is the
  chart the solver discretizes on.

* ``PhiChart`` maps a flat annular cylinder onto an annular neighborhood
  of the gap. Its vertical image follows the boundary profiles and its
  tangential displacement is built from mollified profiles so that the
  map's last Jacobian column is parallel to the boundary normals on the
  top and bottom faces (the flux condition survives the change of
  variables). The mollification integral is evaluated by tensor
  Gauss-Legendre quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gamma as _gamma

from .geometry import GapGeometry, Profile


# ---------------------------------------------------------------------------
# Neck chart
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NeckChart:
    """Flattening chart over the neck centered at base_xp.

    Forward map: Z' = x' - base_xp and

        Z_n = gap(base) * [ (x_n - lower_height(x')) / gap(x') - 1/2 ],

    sending the gap onto the slab {|Z'| < r, |Z_n| < gap(base)/2}. The
    Jacobian determinant equals its (n, n) entry and depends on Z' only.
    """

    geom: GapGeometry
    base_xp: np.ndarray = field(default_factory=lambda: np.zeros(1))
    outer_radius: float = 0.5

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base_xp, dtype=float))
        if base.shape[0] != self.geom.dim - 1:
            raise ValueError("base_xp must have dimension dim - 1")
        object.__setattr__(self, "base_xp", base)
        if not (0 < self.outer_radius <= 0.5):
            raise ValueError("outer_radius must lie in (0, 1/2]")

    @property
    def base_gap(self) -> float:
        return float(self.geom.gap_width(self.base_xp))

    @property
    def slab_halfwidth(self) -> float:
        return 0.5 * self.base_gap

    def forward(self, x):
        """Map physical point(s) (..., n) to slab coordinates."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        xp, xn = pts[:, :-1], pts[:, -1]
        lo = self.geom.lower_height(xp)
        gap = self.geom.gap_width(xp)
        inside = (xn >= lo - 1e-12) & (xn <= lo + gap + 1e-12)
        if not np.all(inside):
            raise ValueError("point outside the gap")
        Zn = self.base_gap * ((xn - lo) / gap - 0.5)
        Z = np.concatenate([xp - self.base_xp[None, :], Zn[:, None]], axis=1)
        return Z[0] if np.asarray(x).ndim == 1 else Z

    def inverse(self, Z):
        """Closed-form inverse of the forward map."""
        pts = np.atleast_2d(np.asarray(Z, dtype=float))
        Zp, Zn = pts[:, :-1], pts[:, -1]
        xp = Zp + self.base_xp[None, :]
        lo = self.geom.lower_height(xp)
        gap = self.geom.gap_width(xp)
        xn = lo + gap * (Zn / self.base_gap + 0.5)
        x = np.concatenate([xp, xn[:, None]], axis=1)
        return x[0] if np.asarray(Z).ndim == 1 else x

    def jacobian_at_x(self, x):
        """Jacobian B of the forward map at physical point(s) x.

        Returns (B, det) with B shaped (..., n, n); the first n-1 rows are
        those of the identity, the last row is

            b_nj = gap(base)/gap(x')^2 * [ Dh_lo_j (x_n - up(x'))
                                           - Dh_up_j (x_n - lo(x')) ],
            b_nn = gap(base)/gap(x'),

        and det = b_nn independently of x_n.
        """
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        m, n = pts.shape
        xp, xn = pts[:, :-1], pts[:, -1]
        gap = self.geom.gap_width(xp)
        up = self.geom.upper_height(xp)
        lo = self.geom.lower_height(xp)
        dup = self.geom.h_upper.gradient(xp)
        dlo = self.geom.h_lower.gradient(xp)
        g0 = self.base_gap
        B = np.zeros((m, n, n))
        B[:, :-1, :-1] = np.eye(n - 1)[None, :, :]
        B[:, -1, :-1] = (g0 / gap**2)[:, None] * (
            dlo * (xn - up)[:, None] - dup * (xn - lo)[:, None])
        bnn = g0 / gap
        B[:, -1, -1] = bnn
        if np.asarray(x).ndim == 1:
            return B[0], float(bnn[0])
        return B, bnn

    def jacobian(self, Z):
        """Jacobian at slab point(s) Z (evaluated at the physical preimage)."""
        return self.jacobian_at_x(self.inverse(Z))


# ---------------------------------------------------------------------------
# Mollification by tensor Gauss-Legendre quadrature
# ---------------------------------------------------------------------------

class Mollifier:
    """Normalized polynomial bump psi(z) = c_d (1 - |z|^2)^4_+ on the unit ball.

    c_d = Gamma(d/2 + 5) / (24 pi^(d/2)) makes the integral one; the bump is
    even, so first moments vanish and smoothing is O(mu^2) accurate. The
    smoothing integral and its profile derivatives are evaluated by a fixed
    tensor Gauss-Legendre rule on [-1, 1]^d.
    """

    def __init__(self, d: int, quad_order: int = 16):
        self.d = int(d)
        self.quad_order = int(quad_order)
        nodes, weights = np.polynomial.legendre.leggauss(self.quad_order)
        grids = np.meshgrid(*([nodes] * self.d), indexing="ij")
        self.nodes = np.stack([g.ravel() for g in grids], axis=-1)
        wgrid = np.meshgrid(*([weights] * self.d), indexing="ij")
        wprod = np.ones(self.nodes.shape[0])
        for w in wgrid:
            wprod = wprod * w.ravel()
        r2 = np.einsum("qi,qi->q", self.nodes, self.nodes)
        bump = np.where(r2 < 1.0, (1.0 - r2) ** 4, 0.0)
        norm = _gamma(self.d / 2 + 5) / (24.0 * np.pi ** (self.d / 2))
        raw = wprod * bump * norm
        # How far the rule is from the closed-form unit mass of the bump;
        # renormalizing keeps constants (and the mu=0 limit) exact.
        self.mass_defect = float(raw.sum() - 1.0)
        self.weights = raw / raw.sum()

    def _shifted(self, yp, mu):
        """Evaluation points y' - mu z_q, shaped (m*Q, d)."""
        yp = np.atleast_2d(yp)
        mu = np.atleast_1d(mu)
        pts = yp[:, None, :] - mu[:, None, None] * self.nodes[None, :, :]
        return pts.reshape(-1, self.d)

    def smooth_value(self, profile: Profile, yp, mu):
        m = np.atleast_2d(yp).shape[0]
        vals = profile.value(self._shifted(yp, mu)).reshape(m, -1)
        return vals @ self.weights

    def smooth_gradient(self, profile: Profile, yp, mu):
        m = np.atleast_2d(yp).shape[0]
        grads = profile.gradient(self._shifted(yp, mu)).reshape(m, -1, self.d)
        return np.einsum("mqi,q->mi", grads, self.weights)

    def smooth_hessian(self, profile: Profile, yp, mu):
        m = np.atleast_2d(yp).shape[0]
        hess = profile.hessian(self._shifted(yp, mu)).reshape(m, -1, self.d, self.d)
        return np.einsum("mqij,q->mij", hess, self.weights)

    def smooth_hessian_moment(self, profile: Profile, yp, mu):
        """integral of D^2 h(y' - mu z) z psi(z) dz, the mu-derivative kernel."""
        m = np.atleast_2d(yp).shape[0]
        hess = profile.hessian(self._shifted(yp, mu)).reshape(m, -1, self.d, self.d)
        return np.einsum("mqij,qj,q->mi", hess, self.nodes, self.weights)


# ---------------------------------------------------------------------------
# Annular chart
# ---------------------------------------------------------------------------

@dataclass
class PhiPoint:
    """Forward image of the annular chart with its intermediates."""

    x: np.ndarray
    g: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    h_mu_upper: float
    h_mu_lower: float
    mu: float


@dataclass(frozen=True)
class PhiChart:
    """Chart from the annular cylinder {r/4 <= |y'| < 2r, |y_n| < r^2}.

    Forward map:

        x'  = y' - g(y),      g = (y_n - r^2)(y_n + r^2)(Theta y_n + Xi),
        x_n = [ (y_n/r^2) (eps + h_up - h_lo) + h_up + h_lo ] / 2,

    with Theta, Xi built from gradients of the mollified profiles at the
    y_n-dependent scale mu = (r^4 - y_n^2)/r. On {y_n = +-r^2} the map is
    the identity in the tangential variables and its last Jacobian column
    is parallel to the corresponding boundary normal.
    """

    geom: GapGeometry
    scale_r: float
    quad_order: int = 16

    def __post_init__(self):
        if not (self.scale_r > 0):
            raise ValueError("scale_r must be positive")
        if self.scale_r**2 <= self.geom.epsilon:
            raise ValueError("scale_r must exceed sqrt(epsilon)")
        object.__setattr__(self, "_moll", Mollifier(self.geom.dim - 1, self.quad_order))

    @property
    def mollifier(self) -> Mollifier:
        return self._moll

    def in_domain(self, y, slack: float = 1e-12):
        pts = np.atleast_2d(np.asarray(y, dtype=float))
        yp, yn = pts[:, :-1], pts[:, -1]
        rp = np.linalg.norm(yp, axis=1)
        r = self.scale_r
        return (rp >= r / 4 - slack) & (rp <= 2 * r + slack) & (np.abs(yn) <= r**2 + slack)

    def mu(self, yn):
        return (self.scale_r**4 - np.asarray(yn) ** 2) / self.scale_r

    def _pieces(self, yp, yn):
        """All profile data the map and its Jacobian need, batched."""
        r = self.scale_r
        yp = np.atleast_2d(yp)
        yn = np.atleast_1d(yn)
        mu = self.mu(yn)
        up, lo = self.geom.h_upper, self.geom.h_lower
        h1, h2 = up.value(yp), lo.value(yp)
        dh1, dh2 = up.gradient(yp), lo.gradient(yp)
        s_grad = (self._moll.smooth_gradient(up, yp, mu)
                  + self._moll.smooth_gradient(lo, yp, mu))
        t_grad = (self._moll.smooth_gradient(up, yp, mu)
                  - self._moll.smooth_gradient(lo, yp, mu))
        w = self.geom.epsilon + h1 - h2
        theta = w[:, None] * s_grad / (8 * r**6)
        xi = w[:, None] * t_grad / (8 * r**4)
        return {"mu": mu, "h1": h1, "h2": h2, "dh1": dh1, "dh2": dh2,
                "w": w, "theta": theta, "xi": xi}

    def forward(self, y, check_domain: bool = True) -> PhiPoint:
        """Forward image of a single point with intermediates exposed."""
        y = np.asarray(y, dtype=float)
        if check_domain and not bool(self.in_domain(y)[0]):
            raise ValueError("point outside the annular cylinder")
        yp, yn = y[None, :-1], y[-1]
        pc = self._pieces(yp, yn)
        r = self.scale_r
        g = (yn**2 - r**4) * (pc["theta"][0] * yn + pc["xi"][0])
        xp = y[:-1] - g
        xn = 0.5 * ((yn / r**2) * pc["w"][0] + pc["h1"][0] + pc["h2"][0])
        up_mu = float(self._moll.smooth_value(self.geom.h_upper, yp, pc["mu"])[0])
        lo_mu = float(self._moll.smooth_value(self.geom.h_lower, yp, pc["mu"])[0])
        return PhiPoint(
            x=np.concatenate([xp, [xn]]),
            g=g,
            theta=pc["theta"][0],
            xi=pc["xi"][0],
            h_mu_upper=up_mu,
            h_mu_lower=lo_mu,
            mu=float(np.atleast_1d(pc["mu"])[0]),
        )

    def jacobian(self, y):
        """Jacobian D Phi at a single point y, shape (n, n)."""
        y = np.asarray(y, dtype=float)
        d = self.geom.dim - 1
        r = self.scale_r
        yp, yn = y[None, :-1], float(y[-1])
        pc = self._pieces(yp, yn)
        mu = np.atleast_1d(pc["mu"])
        up, lo = self.geom.h_upper, self.geom.h_lower
        w, theta, xi = pc["w"][0], pc["theta"][0], pc["xi"][0]
        dh1, dh2 = pc["dh1"][0], pc["dh2"][0]
        dw = dh1 - dh2

        s_grad = (theta * 8 * r**6) / w          # D(h1^mu + h2^mu)
        s_hess = (self._moll.smooth_hessian(up, yp, mu)
                  + self._moll.smooth_hessian(lo, yp, mu))[0]
        t_hess = (self._moll.smooth_hessian(up, yp, mu)
                  - self._moll.smooth_hessian(lo, yp, mu))[0]
        t_grad = (xi * 8 * r**4) / w             # D(h1^mu - h2^mu)
        # d/dy_n of the mollified gradients through mu(y_n)
        dmu_dyn = -2.0 * yn / r
        m1 = self._moll.smooth_hessian_moment(up, yp, mu)[0]
        m2 = self._moll.smooth_hessian_moment(lo, yp, mu)[0]
        s_grad_yn = -dmu_dyn * (m1 + m2)
        t_grad_yn = -dmu_dyn * (m1 - m2)

        # dTheta_i/dy_j, dXi_i/dy_j (tangential)
        dtheta = (np.outer(s_grad, dw) + w * s_hess) / (8 * r**6)
        dxi = (np.outer(t_grad, dw) + w * t_hess) / (8 * r**4)
        # dTheta_i/dy_n, dXi_i/dy_n
        dtheta_n = w * s_grad_yn / (8 * r**6)
        dxi_n = w * t_grad_yn / (8 * r**4)

        P = yn**2 - r**4
        J = np.zeros((d + 1, d + 1))
        J[:d, :d] = np.eye(d) - P * (yn * dtheta + dxi)
        J[:d, d] = -(2 * yn * (theta * yn + xi) + P * (yn * dtheta_n + theta + dxi_n))
        J[d, :d] = 0.5 * ((yn / r**2) * dw + dh1 + dh2)
        J[d, d] = w / (2 * r**2)
        return J

    def hessian_fd(self, y, rel_step: float = 1e-6):
        """Second derivatives D^2 Phi by central differences of the Jacobian.

        Returns H with H[k, j, m] = d^2 x_k / dy_j dy_m, symmetrized in
        (j, m). Steps are relative to the chart scales (r tangentially,
        r^2 transversally); the mollification scale mu is even in y_n, so
        stepping across |y_n| = r^2 stays smooth.
        """
        n = self.geom.dim
        scales = np.full(n, self.scale_r)
        scales[-1] = self.scale_r**2
        H = np.zeros((n, n, n))
        for m in range(n):
            h = rel_step * scales[m]
            e = np.zeros(n)
            e[m] = h
            Jp = self.jacobian(y + e)
            Jm = self.jacobian(y - e)
            H[:, :, m] = (Jp - Jm) / (2 * h)
        return 0.5 * (H + np.swapaxes(H, 1, 2))

    def inverse(self, x, y0=None, tol: float = 1e-12, max_iter: int = 50):
        """Invert the forward map by damped Newton iteration."""
        x = np.asarray(x, dtype=float)
        r = self.scale_r
        if y0 is None:
            xp = x[:-1]
            w = float(self.geom.gap_width(xp))
            mid = 0.5 * (self.geom.h_upper.value(xp) + self.geom.h_lower.value(xp))
            y = np.concatenate([xp, [2 * r**2 * (x[-1] - mid) / w]])
        else:
            y = np.asarray(y0, dtype=float).copy()
        scale = max(np.linalg.norm(x), r)
        res = self.forward(y, check_domain=False).x - x
        for _ in range(max_iter):
            if np.linalg.norm(res) <= tol * scale:
                return y
            step = np.linalg.solve(self.jacobian(y), res)
            lam = 1.0
            while lam > 1e-8:
                y_try = y - lam * step
                if bool(self.in_domain(y_try, slack=0.1 * r)[0]):
                    res_try = self.forward(y_try, check_domain=False).x - x
                    if np.linalg.norm(res_try) < np.linalg.norm(res):
                        y, res = y_try, res_try
                        break
                lam *= 0.5
            else:
                raise RuntimeError("Newton inversion stalled")
        if np.linalg.norm(res) > tol * scale:
            raise RuntimeError("Newton inversion did not converge")
        return y


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------

@dataclass
class PhiBoundsReport:
    """Measured chart bounds on the annular cylinder.

    C_btilde is the largest drift of the tangential coordinates, the part
    of the first-order coefficient that carries the 1/r growth law. The
    transverse coordinate lives on the collapsed scale r^2 and its drift
    keeps an r-independent boundary-layer component near the inner edge;
    it is reported separately as btilde_transverse_max so the growth-law
    diagnostic is not polluted by it.
    """

    r: float
    C_jacobian: float
    C_btilde: float
    btilde_transverse_max: float
    parallelism_residual_max: float
    n_samples: int
    violations: list

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "C_jacobian": self.C_jacobian,
            "C_btilde": self.C_btilde,
            "btilde_transverse_max": self.btilde_transverse_max,
            "parallelism_residual_max": self.parallelism_residual_max,
            "n_samples": self.n_samples,
            "violations": self.violations,
        }


def _annulus_samples(d, r, count, rng):
    """Points y' with r/4 < |y'| < 2r, roughly uniform in radius."""
    radii = rng.uniform(0.26 * r, 1.99 * r, size=count)
    if d == 1:
        signs = rng.choice([-1.0, 1.0], size=count)
        return (radii * signs)[:, None]
    dirs = rng.normal(size=(count, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return radii[:, None] * dirs


def verify_phi_bounds(chart: PhiChart, samples: int = 1000,
                      seed: int = 0) -> PhiBoundsReport:
    """Measure the chart's Jacobian bounds on the annular cylinder.

    Reports the smallest C with I/C <= sym(D Phi) <= C I over the samples,
    the largest first-order coefficient |b| of the pulled-back operator
    (computed for the Laplacian through the inverse-function identity
    relating D^2_x y to D Phi^{-1} and D^2_y Phi), and the worst sine of
    the angle between D Phi e_n and the boundary normal direction on the
    top and bottom faces. Singular Jacobians are reported as violations.
    """
    if samples < 10:
        raise ValueError("need at least 10 samples")
    rng = np.random.default_rng(seed)
    r = chart.scale_r
    d = chart.geom.dim - 1
    n = d + 1
    n_int = samples
    n_bdy = max(10, samples // 10)

    violations = []
    C_jac = 1.0
    C_btilde = 0.0
    bt_trans = 0.0

    yps = _annulus_samples(d, r, n_int, rng)
    yns = rng.uniform(-r**2, r**2, size=n_int)
    for yp, yn in zip(yps, yns):
        y = np.concatenate([yp, [yn]])
        J = chart.jacobian(y)
        sym = 0.5 * (J + J.T)
        eig = np.linalg.eigvalsh(sym)
        if eig[0] <= 0:
            violations.append({"kind": "nonpositive_jacobian", "y": y.tolist(),
                               "lambda_min": float(eig[0])})
            continue
        C_jac = max(C_jac, float(eig[-1]), float(1.0 / eig[0]))
        Jinv = np.linalg.inv(J)
        H = chart.hessian_fd(y)
        # d^2 y_i/dx dx = -Jinv (sum_k Jinv_ik H_k) Jinv, traced against the
        # identity coefficient matrix
        hess_y = -np.einsum("ik,kjm,jq,ml->iql", Jinv, H, Jinv, Jinv)
        btilde = np.einsum("iqq->i", hess_y)
        C_btilde = max(C_btilde, float(np.abs(btilde[:-1]).max()))
        bt_trans = max(bt_trans, float(abs(btilde[-1])))

    res_max = 0.0
    yps_b = _annulus_samples(d, r, n_bdy, rng)
    for yp in yps_b:
        for side, yn in (("upper", r**2), ("lower", -r**2)):
            y = np.concatenate([yp, [yn]])
            J = chart.jacobian(y)
            t = J[:, -1]
            prof = chart.geom.h_upper if side == "upper" else chart.geom.h_lower
            nvec = np.concatenate([-prof.gradient(yp), [1.0]])
            nhat = nvec / np.linalg.norm(nvec)
            resid = np.linalg.norm(t - (t @ nhat) * nhat) / np.linalg.norm(t)
            res_max = max(res_max, float(resid))

    return PhiBoundsReport(
        r=r,
        C_jacobian=C_jac,
        C_btilde=C_btilde,
        btilde_transverse_max=bt_trans,
        parallelism_residual_max=res_max,
        n_samples=n_int + 2 * n_bdy,
        violations=violations,
    )
