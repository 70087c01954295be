"""Explicit barrier functions, their sign certificates, and Bernstein weights.

Two families of anisotropic power barriers are evaluated in closed form:

* the supersolution family v = R^gamma with R^2 = |x'|^2 + (2+delta) x_n^2,
  whose p-Laplacian divergence is negative on a cone around the tangential
  plane when gamma < (p-n-1-delta)/(p-1), and whose flux through both
  boundary profiles is positive;

* the truncated subsolution family w = [R^gamma - (4 sqrt(eps/delta))^gamma]_+
  with R^2 = x_1^2 + (2-delta) x_2^2 for the two-disk geometry, with the
  reversed signs.

Certification samples the closed forms densely (tensor grid plus seeded
random points) and reports margins and violations; it is a sampling
confidence statement, not interval arithmetic. The module also evaluates
the Bernstein weight Q and the associated maximum-principle quantities on
solved fields, including the two-sided boundary growth check for |Du|^s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .geometry import GapGeometry, Region, inner_normal
from .solver import DiscreteField, gradient_field

VARIANTS = ("supersolution_v", "subsolution_w", "bernstein_F", "appendix_F")

# |Du| floor for boundary growth checks, relative to the field maximum;
# the inequality degenerates under discretization noise as |Du| -> 0.
GRAD_FLOOR_REL = 1e-3


class BarrierSpecError(ValueError):
    """A barrier parameter violates the bound its lemma requires."""


@dataclass(frozen=True)
class BarrierSpec:
    """Parameters of one barrier / Bernstein quantity.

    gamma and delta parametrize the power and the anisotropy; for the
    Bernstein variants gamma = 2 beta is the weight exponent and A, q are
    the auxiliary constants of the |Du|^2-quantity. kappa1/kappa2 are the
    convexity constants the boundary arguments need.
    """

    variant: str
    n: int
    p: float
    delta: float = 0.0
    gamma: float = 0.0
    beta: float = 0.0
    A: float = 1.0
    q: float = 2.0
    kappa1: Optional[float] = None
    kappa2: Optional[float] = None
    epsilon: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n < 2 or self.p <= 1:
            raise ValueError("need n >= 2 and p > 1")

    @property
    def anisotropy(self) -> float:
        """The coefficient of x_n^2 inside R^2."""
        if self.variant == "supersolution_v":
            return 2.0 + self.delta
        if self.variant == "subsolution_w":
            return 2.0 - self.delta
        raise BarrierSpecError(f"{self.variant} has no radial anisotropy")

    @property
    def truncation(self) -> float:
        """Truncation level of the subsolution, 4 sqrt(eps/delta)."""
        if self.variant != "subsolution_w":
            raise BarrierSpecError("truncation only applies to subsolution_w")
        if self.epsilon <= 0:
            raise BarrierSpecError("subsolution_w needs epsilon > 0")
        return 4.0 * math.sqrt(self.epsilon / self.delta)

    def admissibility_errors(self) -> list:
        """Named violations of the variant's parameter bounds (empty if ok)."""
        errs = []
        n, p, d, g = self.n, self.p, self.delta, self.gamma
        if self.variant == "supersolution_v":
            if not (p > n + 1):
                errs.append(f"requires p > n + 1, got p = {p}, n = {n}")
            if not (0 < d < p - n - 1):
                errs.append(f"delta must lie in (0, p - n - 1) = (0, {p - n - 1})")
            else:
                hi = (p - n - 1 - d) / (p - 1)
                if not (0 < g < hi):
                    errs.append(
                        f"gamma must lie in (0, (p-n-1-delta)/(p-1)) = (0, {hi})")
        elif self.variant == "subsolution_w":
            if not (0 < d < 0.5):
                errs.append("delta must lie in (0, 1/2)")
            lo = max((p - 3 + d) / (p - 1), 0.0)
            if not (g > lo):
                errs.append(
                    f"gamma must exceed max((p-3+delta)/(p-1), 0) = {lo}")
            if self.epsilon and not (self.epsilon < d / 10):
                errs.append("epsilon must be below delta/10")
        elif self.variant == "bernstein_F":
            if not (0 <= self.gamma < 1) or abs(self.gamma - 2 * self.beta) > 1e-12:
                errs.append("needs gamma = 2*beta in [0, 1)")
            if self.kappa1 is None or self.kappa2 is None:
                errs.append("needs kappa1 and kappa2")
            else:
                k = self.kappa2 / ((1 - self.gamma) * self.kappa1)
                if p >= 2:
                    bound = 5 * (p - 1) / 2 * ((p + 1 - 2 * self.beta * (p - 1)) / 2
                                               + k) + 1
                    if n < bound:
                        errs.append(
                            f"p >= 2 weight needs n >= {bound:.3f}, got n = {n}")
                else:
                    bound = 2.5 * ((3 - 2 * self.beta) / 2 + k) + 3 - p
                    if n < bound:
                        errs.append(
                            f"1 < p < 2 weight needs n >= {bound:.3f}, got n = {n}")
        elif self.variant == "appendix_F":
            if self.kappa1 is None or self.kappa2 is None:
                errs.append("needs kappa1 and kappa2")
            if self.A <= 0:
                errs.append("needs A > 0")
        return errs

    def validate(self):
        errs = self.admissibility_errors()
        if errs:
            raise BarrierSpecError("; ".join(errs))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "n": self.n, "p": self.p,
            "delta": self.delta, "gamma": self.gamma, "beta": self.beta,
            "A": self.A, "q": self.q, "kappa1": self.kappa1,
            "kappa2": self.kappa2, "epsilon": self.epsilon,
        }


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def _split(x, n):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[1] != n:
        raise ValueError(f"points must have dimension {n}")
    return pts


def _radial_quartic(n, p, gamma, a, X, Y):
    """Quartic factor of div(|Dv|^{p-2} Dv) for v = R^gamma, R^2 = X + aY.

    div * |Dv|^{4-p} = gamma^3 R^{3 gamma - 8} * quartic(X, Y); the quartic
    is homogeneous of degree two in (X, Y), so the divergence sign along a
    ray depends only on the slope |x_n|/|x'|.
    """
    s = X + a**2 * Y
    R2 = X + a * Y
    return R2 * ((n - 1 + a) * s + (p - 2) * (X + a**3 * Y)) \
        + (p - 1) * (gamma - 2) * s**2


def _aniso_power_eval(n, p, gamma, a, pts):
    """(value, gradient, divergence) of v = (|x'|^2 + a x_n^2)^(gamma/2)."""
    xp, xn = pts[:, :-1], pts[:, -1]
    X = np.einsum("mi,mi->m", xp, xp)
    Y = xn**2
    R2 = X + a * Y
    if np.any(R2 == 0):
        raise ValueError("barrier is singular at the origin")
    R = np.sqrt(R2)
    val = R**gamma
    grad = gamma * (R ** (gamma - 2))[:, None] * np.concatenate(
        [xp, (a * xn)[:, None]], axis=1)
    s = X + a**2 * Y
    grad_norm = gamma * R ** (gamma - 2) * np.sqrt(s)
    quartic = _radial_quartic(n, p, gamma, a, X, Y)
    div = np.where(
        grad_norm > 0,
        grad_norm ** (p - 4) * gamma**3 * R ** (3 * gamma - 8) * quartic,
        0.0)
    return val, grad, div


def eval_barrier(spec: BarrierSpec, x, check: bool = True) -> dict:
    """Closed-form value, gradient and p-Laplacian divergence at point(s) x.

    The subsolution returns the truncated form: value [R^g - t^g]_+ with
    zero gradient and divergence inside the truncation set. Points must
    avoid the origin, where the divergence is singular. check=False skips
    the admissibility validation (used to exhibit failing parameters).
    """
    if spec.variant not in ("supersolution_v", "subsolution_w"):
        raise BarrierSpecError(f"{spec.variant} is not a pointwise barrier; "
                               "use bernstein_eval / q_weight")
    if check:
        spec.validate()
    pts = _split(x, spec.n)
    a = spec.anisotropy
    val, grad, div = _aniso_power_eval(spec.n, spec.p, spec.gamma, a, pts)
    if spec.variant == "subsolution_w":
        level = spec.truncation ** spec.gamma
        active = val > level
        val = np.where(active, val - level, 0.0)
        grad = np.where(active[:, None], grad, 0.0)
        div = np.where(active, div, 0.0)
    single = np.asarray(x).ndim == 1
    if single:
        return {"value": float(val[0]), "gradient": grad[0],
                "p_laplacian_divergence": float(div[0])}
    return {"value": val, "gradient": grad, "p_laplacian_divergence": div}


def q_weight(spec: BarrierSpec, x):
    """The Bernstein weight Q at point(s) x.

    bernstein_F: Q = eps/kappa1 + |x'|^2 - 5 kappa2 / (2 (1-gamma) kappa1) x_n^2.
    appendix_F:  Q = eps + |x'|^2 - 4 kappa2^2 / kappa1 x_n^2.
    """
    pts = _split(x, spec.n)
    xp, xn = pts[:, :-1], pts[:, -1]
    X = np.einsum("mi,mi->m", xp, xp)
    if spec.kappa1 is None or spec.kappa2 is None:
        raise BarrierSpecError("Q needs kappa1 and kappa2")
    if spec.variant == "bernstein_F":
        coef = 5 * spec.kappa2 / (2 * (1 - spec.gamma) * spec.kappa1)
        Q = spec.epsilon / spec.kappa1 + X - coef * xn**2
    elif spec.variant == "appendix_F":
        Q = spec.epsilon + X - 4 * spec.kappa2**2 / spec.kappa1 * xn**2
    else:
        raise BarrierSpecError(f"{spec.variant} has no Q weight")
    return Q if np.asarray(x).ndim > 1 else float(Q[0])


# ---------------------------------------------------------------------------
# Constructive admissible parameters
# ---------------------------------------------------------------------------

def cone_slope(spec: BarrierSpec, cap: float = 0.5) -> Optional[float]:
    """Largest slope mu0 with the required divergence sign on |x_n| <= mu0 |x'|.

    Bisects on the first sign change of the homogeneous quartic along the
    slope parameter. Returns None when the sign is already wrong on the
    tangential plane (inadmissible parameters).
    """
    a = spec.anisotropy
    want_neg = spec.variant == "supersolution_v"

    def f(slope):
        q = _radial_quartic(spec.n, spec.p, spec.gamma, a, 1.0, slope**2)
        return q if want_neg else -q

    if f(0.0) >= 0:
        return None
    slopes = np.linspace(0.0, 2.0, 401)
    vals = np.array([f(s) for s in slopes])
    bad = np.flatnonzero(vals >= 0)
    if len(bad) == 0:
        return cap
    lo, hi = slopes[bad[0] - 1], slopes[bad[0]]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return min(lo * (1 - 1e-9), cap)


def hessian_continuity_radius(geom: GapGeometry, tol: float,
                              samples: int = 200) -> float:
    """Largest radius with |D^2 h_i(x') - D^2 h_i(0)| <= tol for both profiles."""
    d = geom.dim - 1
    origin = np.zeros(d)
    H0 = [h.hessian(origin) for h in (geom.h_upper, geom.h_lower)]

    def worst(radius):
        if d == 1:
            pts = np.linspace(-radius, radius, samples)[:, None]
        else:
            rng = np.random.default_rng(0)
            dirs = rng.normal(size=(samples, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            pts = dirs * np.linspace(0.01, 1.0, samples)[:, None] * radius
        dev = 0.0
        for h, h0 in zip((geom.h_upper, geom.h_lower), H0):
            diff = h.hessian(pts) - h0
            dev = max(dev, float(np.abs(np.linalg.eigvalsh(diff)).max()))
        return dev

    hi = geom.reference_radius
    if worst(hi) <= tol:
        return hi
    lo = 0.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if worst(mid) <= tol:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# Sign certification
# ---------------------------------------------------------------------------

@dataclass
class Certificate:
    """Sampled sign certificate for a barrier over its lemma's region."""

    spec: dict
    admissible: bool
    admissibility_errors: list
    region: dict
    params: dict                 # mu0, mu, r0, truncation as applicable
    n_interior: int
    n_boundary: int
    interior_min_margin: float
    boundary_min_margin: float
    violations: list
    notes: list

    @property
    def ok(self) -> bool:
        return self.admissible and not self.violations

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "admissible": self.admissible,
            "admissibility_errors": self.admissibility_errors,
            "region": self.region,
            "params": self.params,
            "n_interior": self.n_interior,
            "n_boundary": self.n_boundary,
            "interior_min_margin": self.interior_min_margin,
            "boundary_min_margin": self.boundary_min_margin,
            "violations": self.violations[:50],
            "notes": self.notes,
        }


def _tangential_samples(d, r_lo, r_hi, count, rng):
    """Tensor grid plus 10x random tangential points in the annulus/disk."""
    n_grid = max(10, count // 11)
    n_rand = count - n_grid
    radii = np.linspace(max(r_lo, 1e-12), r_hi, n_grid)
    if d == 1:
        grid = np.concatenate([radii, -radii])[:, None]
        rnd = rng.uniform(r_lo, r_hi, size=n_rand) * rng.choice([-1, 1], size=n_rand)
        return np.vstack([grid, rnd[:, None]])
    dirs = rng.normal(size=(n_grid, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    grid = radii[:, None] * dirs
    rnd_dirs = rng.normal(size=(n_rand, d))
    rnd_dirs /= np.linalg.norm(rnd_dirs, axis=1, keepdims=True)
    rnd = rng.uniform(r_lo, r_hi, size=n_rand)[:, None] * rnd_dirs
    return np.vstack([grid, rnd])


def certify_sign(spec: BarrierSpec, geom: GapGeometry,
                 region: Optional[Region] = None, samples: int = 10000,
                 seed: int = 0, enforce_admissibility: bool = False) -> Certificate:
    """Sample the barrier's sign conditions over its lemma's region.

    For the supersolution: -div(|Dv|^{p-2} Dv) > 0 on the cone
    |x_n| <= mu0 |x'| inside the annulus eps/mu < |x'| < mu/kappa2, and
    dv/dnu > 0 on both profiles. (The source computation's final line has
    the opposite divergence sign; the negative leading coefficient makes
    div < 0 the consistent reading, which is what is checked — see notes.)
    For the subsolution the signs reverse and the region is the disk
    |x'| < r0. Inadmissible parameters are certified anyway (so the
    failure is exhibited) unless enforce_admissibility is set.
    """
    errs = spec.admissibility_errors()
    if errs and enforce_admissibility:
        raise BarrierSpecError("; ".join(errs))
    rng = np.random.default_rng(seed)
    d = geom.dim - 1
    notes = []
    params = {}
    violations = []

    kappa2 = spec.kappa2 if spec.kappa2 is not None else geom.kappa2
    kappa1 = spec.kappa1 if spec.kappa1 is not None else geom.kappa1
    if kappa1 is None or kappa2 is None:
        raise BarrierSpecError("certification needs kappa constants")

    if spec.variant == "supersolution_v":
        mu0 = cone_slope(spec)
        if mu0 is None:
            mu0 = 0.25
            notes.append("divergence sign wrong on the tangential plane; "
                         "using fallback cone slope 0.25 to exhibit violations")
        tol = kappa1 * spec.delta / (8 + 2 * spec.delta)
        r0 = hessian_continuity_radius(geom, tol)
        mu = min(mu0, kappa2 * r0, 0.5)
        params = {"mu0": mu0, "r0": r0, "mu": mu}
        admissible = not errs and geom.epsilon < mu**2 / kappa2
        if not errs and geom.epsilon >= mu**2 / kappa2:
            errs = errs + [f"epsilon = {geom.epsilon} is not below mu^2/kappa2 "
                           f"= {mu**2 / kappa2:.3e}"]
        r_out, r_in = mu / kappa2, geom.epsilon / mu
        notes.append("checking the statement sign -div > 0; the closing line "
                     "of the source computation says div > 0, inconsistent "
                     "with its own negative leading coefficient")
        sign = -1.0       # margin = -div
        want_boundary_positive = True
    else:
        if spec.variant != "subsolution_w":
            raise BarrierSpecError("certify_sign handles the v and w barriers")
        if spec.epsilon and abs(spec.epsilon - geom.epsilon) > 1e-15:
            raise ValueError("subsolution spec epsilon must match the geometry")
        slope = cone_slope(spec)
        if slope is None:
            slope = 0.25
            notes.append("divergence sign wrong on the tangential plane; "
                         "using fallback radius to exhibit violations")
        r0 = min(slope / (1 + spec.delta / 8), 0.45, geom.reference_radius)
        params = {"sigma0": slope, "r0": r0, "truncation": spec.truncation}
        admissible = not errs
        r_out, r_in = r0, 0.0
        sign = +1.0       # margin = +div
        want_boundary_positive = False

    if region is None:
        kind = "annulus" if r_in > 0 else "neck"
        radii = (r_in, r_out) if r_in > 0 else (r_out,)
        region = Region(kind, center=np.zeros(d), radii=radii)
    else:
        lo = region.radii[0] if region.kind == "annulus" else 0.0
        hi = region.radii[-1]
        if hi > r_out * (1 + 1e-9) or lo < r_in * (1 - 1e-9):
            raise ValueError("region exceeds the lemma's admissible domain")
        r_in, r_out = lo, hi

    # interior samples: tangential points, transverse positions in the gap,
    # restricted to the cone for the supersolution
    xps = _tangential_samples(d, r_in, r_out, samples, rng)
    lo_h = geom.lower_height(xps)
    gap = geom.gap_width(xps)
    xns = lo_h + gap * rng.uniform(0.0, 1.0, size=len(xps))
    pts = np.concatenate([xps, xns[:, None]], axis=1)
    if spec.variant == "supersolution_v":
        mask = np.abs(pts[:, -1]) <= params["mu0"] * np.linalg.norm(
            pts[:, :-1], axis=1)
        pts = pts[mask]
    else:
        a = spec.anisotropy
        R2 = (np.einsum("mi,mi->m", pts[:, :-1], pts[:, :-1])
              + a * pts[:, -1] ** 2)
        pts = pts[R2 > spec.truncation**2 * (1 + 1e-9)]

    if len(pts) == 0:
        notes.append("no interior points clear the truncation level inside "
                     "the region; nothing to check there")
    out = eval_barrier(spec, pts, check=False)
    margins = sign * out["p_laplacian_divergence"]
    interior_min = float(margins.min()) if len(margins) else math.inf
    for i in np.flatnonzero(margins <= 0)[:50]:
        violations.append({"kind": "interior_divergence", "x": pts[i].tolist(),
                           "margin": float(margins[i])})
    n_bad = int(np.sum(margins <= 0))
    if n_bad > 50:
        notes.append(f"{n_bad} interior violations total; listing first 50")

    # boundary samples on both profiles
    xpb = _tangential_samples(d, r_in if spec.variant == "supersolution_v" else 0.0,
                              r_out, max(100, samples // 10), rng)
    n_boundary = 0
    boundary_min = math.inf
    for side in ("upper", "lower"):
        xn = (geom.upper_height(xpb) if side == "upper"
              else geom.lower_height(xpb))
        bpts = np.concatenate([xpb, xn[:, None]], axis=1)
        nus = inner_normal(geom, side, xpb)
        outb = eval_barrier(spec, bpts, check=False)
        flux = np.einsum("mi,mi->m", outb["gradient"], nus)
        if spec.variant == "subsolution_w":
            inactive = outb["value"] == 0.0
            flux = np.where(inactive, 0.0, flux)
        bm = flux if want_boundary_positive else -flux
        n_boundary += len(bpts)
        if spec.variant == "subsolution_w":
            # w = 0 patches satisfy the sign weakly; only active points carry margin
            active = outb["value"] > 0
            if np.any(active):
                boundary_min = min(boundary_min, float(bm[active].min()))
            bad = np.flatnonzero(active & (bm < 0))
        else:
            boundary_min = min(boundary_min, float(bm.min()))
            bad = np.flatnonzero(bm <= 0)
        for i in bad[:25]:
            violations.append({"kind": f"boundary_flux_{side}",
                               "x": bpts[i].tolist(), "margin": float(bm[i])})

    return Certificate(
        spec=spec.to_dict(),
        admissible=admissible and not violations,
        admissibility_errors=errs,
        region={"kind": region.kind, "center": region.center.tolist(),
                "radii": list(region.radii)},
        params=params,
        n_interior=int(len(pts)),
        n_boundary=n_boundary,
        interior_min_margin=interior_min,
        boundary_min_margin=boundary_min,
        violations=violations,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Bernstein quantities on solved fields
# ---------------------------------------------------------------------------

@dataclass
class BernsteinReport:
    """Q/F samples over a solved field plus boundary growth checks."""

    quantity: str                  # "F" (p >= 2), "G" (p < 2), or "appendix_F"
    Q: np.ndarray
    F: np.ndarray
    argmax_index: tuple
    argmax_x: np.ndarray
    boundary: dict                 # per side: arrays of samples
    growth_checks: dict            # per s: {"fraction_ok", "n_checked", ...}
    admissibility_errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "argmax_x": self.argmax_x.tolist(),
            "F_max": float(self.F.max()),
            "growth_checks": self.growth_checks,
            "admissibility_errors": self.admissibility_errors,
        }


def _field_interpolator(fld: DiscreteField, values_on_cells, method="cubic"):
    """Interpolator of cell-center data in (s, tau) coordinates."""
    centers = [0.5 * (a[:-1] + a[1:]) for a in fld.s_axes]
    tau_c = 0.5 * (fld.tau[:-1] + fld.tau[1:])
    return RegularGridInterpolator(tuple(centers) + (tau_c,), values_on_cells,
                                   bounds_error=False, fill_value=None,
                                   method=method)


def _to_chart_coords(fld: DiscreteField, pts):
    """Map physical points to (s..., tau) coordinates of the field grid."""
    xp = pts[:, :-1] - fld.chart.base_xp
    lo = fld.geom.lower_height(pts[:, :-1])
    gap = fld.geom.gap_width(pts[:, :-1])
    tau = (pts[:, -1] - lo) / gap
    return np.concatenate([xp, tau[:, None]], axis=1)


def normal_derivative_samples(fld: DiscreteField, s: float, side: str,
                              xpb, step_frac: float = 0.25):
    """One-sided-difference D_nu |Du|^s at boundary points above the profile.

    Uses the second-order 3-point stencil along the inward normal with a
    step proportional to the local gap width, on a cubic interpolant of
    the cell-center gradient magnitudes.
    """
    geom = fld.geom
    gf = gradient_field(fld)
    interp = _field_interpolator(fld, gf.magnitudes)

    xpb = np.atleast_2d(xpb)
    xn = geom.upper_height(xpb) if side == "upper" else geom.lower_height(xpb)
    x0 = np.concatenate([xpb, xn[:, None]], axis=1)
    nu = inner_normal(geom, side, xpb)
    gap = geom.gap_width(xpb)
    t = step_frac * gap

    def mag_at(pts):
        return interp(_to_chart_coords(fld, pts))

    f0 = mag_at(x0) ** s
    f1 = mag_at(x0 - t[:, None] * nu) ** s
    f2 = mag_at(x0 - 2 * t[:, None] * nu) ** s
    dn = (3 * f0 - 4 * f1 + f2) / (2 * t)
    return f0, dn


def bernstein_eval(spec: BarrierSpec, fld: DiscreteField,
                   boundary_samples: int = 200) -> BernsteinReport:
    """Evaluate the Bernstein quantity of the spec over a solved field.

    For bernstein_F the quantity is F = Q^((p - p gamma)/2) |Du|^p when
    p >= 2 and G = Q^(1-gamma) |Du|^2 when 1 < p < 2; appendix_F uses
    F = Q |Du|^2 + A u^2. Boundary samples check the two-sided growth
    s kappa1 |Du|^s <= D_nu |Du|^s <= s kappa2 |Du|^s for s in {2, p} at
    points where |Du| clears the relative floor.
    """
    if spec.variant not in ("bernstein_F", "appendix_F"):
        raise BarrierSpecError("bernstein_eval needs a Bernstein variant spec")
    if spec.kappa1 is None or spec.kappa2 is None:
        raise BarrierSpecError("bernstein_eval needs kappa constants")
    # evaluation is exploratory at dimensions below the weight's admissible
    # threshold; the report carries the unmet bounds instead of refusing
    gf = gradient_field(fld)
    centers = gf.centers.reshape(-1, fld.geom.dim)
    Q = q_weight(spec, centers).reshape(gf.magnitudes.shape)
    p = fld.p
    if spec.variant == "appendix_F":
        # nodal u averaged to cell centers
        u = fld.values
        for a in range(u.ndim):
            sl0 = [slice(None)] * u.ndim
            sl1 = [slice(None)] * u.ndim
            sl0[a] = slice(0, -1)
            sl1[a] = slice(1, None)
            u = 0.5 * (u[tuple(sl0)] + u[tuple(sl1)])
        F = Q * gf.magnitudes**2 + spec.A * u**2
        quantity = "appendix_F"
    elif p >= 2:
        F = np.where(Q > 0, Q, 0.0) ** ((p - p * spec.gamma) / 2) * gf.magnitudes**p
        quantity = "F"
    else:
        F = np.where(Q > 0, Q, 0.0) ** (1 - spec.gamma) * gf.magnitudes**2
        quantity = "G"

    flat_idx = int(np.argmax(F))
    idx = np.unravel_index(flat_idx, F.shape)
    argmax_x = gf.centers[idx]

    # boundary sampling at tangential cell centers (inner 80% of the radius)
    d = fld.geom.dim - 1
    r = fld.chart.outer_radius * 0.8
    rng = np.random.default_rng(0)
    xpb = _tangential_samples(d, 0.02 * r, r, boundary_samples, rng)

    floor = GRAD_FLOOR_REL * gf.max_magnitude
    boundary = {}
    checks = {}
    for s in (2.0, float(p)):
        total_ok = 0
        total = 0
        ratios = []
        slack_ok = {0.01: 0, 0.02: 0, 0.05: 0}
        for side in ("upper", "lower"):
            f0, dn = normal_derivative_samples(fld, s, side, xpb)
            mag0 = f0 ** (1.0 / s)
            use = mag0 > floor
            lo = s * spec.kappa1 * f0
            hi = s * spec.kappa2 * f0
            ok = (dn >= lo) & (dn <= hi)
            total_ok += int(np.sum(ok & use))
            total += int(np.sum(use))
            if np.any(use):
                ratios.append(dn[use] / (s * f0[use]))
            for sl in slack_ok:
                hit = (dn >= lo * (1 - sl)) & (dn <= hi * (1 + sl))
                slack_ok[sl] += int(np.sum(hit & use))
            boundary.setdefault(side, {})[f"s={s:g}"] = {
                "f0": f0, "dn": dn, "ok": ok, "used": use}
        ratios = np.concatenate(ratios) if ratios else np.array([])
        checks[f"s={s:g}"] = {
            "fraction_ok": (total_ok / total) if total else None,
            "n_checked": total,
            "kappa1": spec.kappa1,
            "kappa2": spec.kappa2,
            "median_ratio": float(np.median(ratios)) if len(ratios) else None,
            "fraction_ok_with_slack": {str(k): v / total if total else None
                                       for k, v in slack_ok.items()},
        }
    return BernsteinReport(
        quantity=quantity, Q=Q, F=F, argmax_index=tuple(int(i) for i in idx),
        argmax_x=argmax_x, boundary=boundary, growth_checks=checks,
        admissibility_errors=spec.admissibility_errors())


# ---------------------------------------------------------------------------
# Comparison fits
# ---------------------------------------------------------------------------

@dataclass
class ComparisonFit:
    C_boundary: float
    interior_violation_fraction: float
    n_boundary: int
    n_interior: int

    def to_dict(self) -> dict:
        return {
            "C_boundary": self.C_boundary,
            "interior_violation_fraction": self.interior_violation_fraction,
            "n_boundary": self.n_boundary,
            "n_interior": self.n_interior,
        }


def comparison_fit(fld: DiscreteField, spec: BarrierSpec, region: Region,
                   tol: float = 1e-6) -> ComparisonFit:
    """Fit |u| <= C (v + sqrt(eps)) on the region's lateral boundary shells.

    C_boundary is the max of |u| / (v + sqrt(eps)) over nodes within one
    local cell width of the region's tangential boundary; the interior
    violation fraction counts interior nodes where the fitted bound fails
    by more than the tolerance (expected zero by the comparison principle).
    """
    if spec.variant != "supersolution_v":
        raise BarrierSpecError("comparison_fit expects a supersolution spec")
    xp = fld.node_xp()
    dist = np.linalg.norm(xp - np.asarray(region.center)[None, :], axis=1)
    if region.kind == "neck":
        radii = [region.radii[0]]
        inside = dist < region.radii[0]
    elif region.kind == "annulus":
        radii = list(region.radii)
        inside = (dist > region.radii[0]) & (dist < region.radii[1])
    else:
        raise ValueError("comparison_fit needs a bounded region")
    spacing = max(np.max(np.diff(ax)) for ax in fld.s_axes)
    near_boundary = np.zeros_like(inside)
    for rr in radii:
        near_boundary |= np.abs(dist - rr) <= spacing
    if not np.any(near_boundary):
        raise ValueError("no nodes near the region boundary")

    shift = math.sqrt(fld.geom.epsilon)
    tshape = tuple(len(a) for a in fld.s_axes)

    def barrier_on(mask):
        pts_all = fld.node_points().reshape(-1, fld.geom.dim)
        mask_full = np.repeat(mask.reshape(tshape + (1,)), len(fld.tau), axis=-1)
        pts = pts_all[mask_full.ravel()]
        vals = eval_barrier(spec, pts)["value"] + shift
        return fld.values[mask_full], vals

    u_b, v_b = barrier_on(near_boundary.reshape(tshape))
    C = float(np.max(np.abs(u_b) / v_b)) if len(v_b) else 0.0

    interior = inside & ~near_boundary
    n_int = 0
    frac = 0.0
    if np.any(interior):
        u_i, v_i = barrier_on(interior.reshape(tshape))
        n_int = len(v_i)
        bad = np.abs(u_i) > C * v_i * (1 + tol)
        frac = float(np.mean(bad))
    return ComparisonFit(C_boundary=C, interior_violation_fraction=frac,
                         n_boundary=int(len(v_b)), n_interior=n_int)
