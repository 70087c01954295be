"""Boundary geometry of the thin gap between two nearly touching inclusions.

The two inclusion boundaries are graphs over the tangential variable
``x' = x[:n-1]``:

    upper boundary:  x_n = +eps/2 + h_upper(x')
    lower boundary:  x_n = -eps/2 + h_lower(x')

with ``h_upper(0) = h_lower(0) = 0`` and vanishing gradients at the origin,
so the two boundaries come within distance ``eps`` of each other at ``x' = 0``.
Profiles expose analytic values, gradients and Hessians; every other module
consumes this data (no numerical differentiation happens in this layer).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

# Disk profiles are clamped away from the square-root branch point at |x'| = 1.
DISK_CLAMP = 0.999

# Slack used when checking declared constants against sampled estimates.
_CHECK_RTOL = 1e-9


def _as_points(xp, d):
    """Return (points, scalar_input) with points shaped (m, d)."""
    a = np.asarray(xp, dtype=float)
    if a.ndim == 0:
        if d != 1:
            raise ValueError(f"scalar point given for {d}-dimensional profile")
        return a.reshape(1, 1), True
    if a.ndim == 1:
        if a.shape[0] != d:
            raise ValueError(f"point has dimension {a.shape[0]}, expected {d}")
        return a.reshape(1, d), True
    if a.shape[-1] != d:
        raise ValueError(f"points have dimension {a.shape[-1]}, expected {d}")
    return a.reshape(-1, d), False


class Profile:
    """A smooth boundary profile h(x') with analytic derivatives.

    Subclasses implement ``_value``, ``_gradient`` and ``_hessian`` on
    arrays of shape (m, d). The public methods accept single points (d,)
    or batches (m, d) and return matching shapes.
    """

    def __init__(self, d: int):
        self.d = int(d)

    def value(self, xp):
        pts, scalar = _as_points(xp, self.d)
        v = self._value(pts)
        return v[0] if scalar else v

    def gradient(self, xp):
        pts, scalar = _as_points(xp, self.d)
        g = self._gradient(pts)
        return g[0] if scalar else g

    def hessian(self, xp):
        pts, scalar = _as_points(xp, self.d)
        h = self._hessian(pts)
        return h[0] if scalar else h

    def _value(self, pts):
        raise NotImplementedError

    def _gradient(self, pts):
        raise NotImplementedError

    def _hessian(self, pts):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class QuadraticProfile(Profile):
    """h(x') = x'^T M x' / 2 for a symmetric matrix M."""

    def __init__(self, matrix):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ValueError("quadratic profile matrix must be square")
        if not np.allclose(M, M.T):
            raise ValueError("quadratic profile matrix must be symmetric")
        super().__init__(M.shape[0])
        self.matrix = M

    def _value(self, pts):
        return 0.5 * np.einsum("mi,ij,mj->m", pts, self.matrix, pts)

    def _gradient(self, pts):
        return pts @ self.matrix

    def _hessian(self, pts):
        return np.broadcast_to(self.matrix, (pts.shape[0],) + self.matrix.shape).copy()

    def descriptor(self):
        return {"kind": "quadratic", "matrix": self.matrix.tolist()}


class DiskProfile(Profile):
    """h(x') = sign * (1 - sqrt(1 - |x'|^2)), the unit-ball boundary graph.

    With sign=+1 this is the upper profile of two unit balls touching along
    the x_n axis; sign=-1 gives the reflected lower profile. Valid on
    |x'| <= DISK_CLAMP.
    """

    def __init__(self, d: int = 1, sign: float = 1.0):
        super().__init__(d)
        self.sign = float(sign)

    def _r2(self, pts):
        r2 = np.einsum("mi,mi->m", pts, pts)
        if np.any(r2 > DISK_CLAMP**2):
            raise ValueError(f"disk profile evaluated at |x'| > {DISK_CLAMP}")
        return r2

    def _value(self, pts):
        # r2/(1+sqrt(1-r2)) equals 1-sqrt(1-r2) without cancellation near 0.
        r2 = self._r2(pts)
        return self.sign * r2 / (1.0 + np.sqrt(1.0 - r2))

    def _gradient(self, pts):
        s = np.sqrt(1.0 - self._r2(pts))
        return self.sign * pts / s[:, None]

    def _hessian(self, pts):
        r2 = self._r2(pts)
        s = np.sqrt(1.0 - r2)
        eye = np.eye(self.d)
        outer = np.einsum("mi,mj->mij", pts, pts)
        return self.sign * (eye[None, :, :] / s[:, None, None]
                            + outer / (s**3)[:, None, None])

    def descriptor(self):
        return {"kind": "disk", "dim_tangential": self.d, "sign": self.sign}


class RadialPolynomialProfile(Profile):
    """h(x') = sum_k c_k |x'|^(2k), k = 1..K, an even polynomial in |x'|.

    Only even powers keep the profile smooth at the origin and enforce
    h(0) = 0, Dh(0) = 0 automatically.
    """

    def __init__(self, d: int, coeffs):
        super().__init__(d)
        self.coeffs = [float(c) for c in coeffs]
        if not self.coeffs:
            raise ValueError("need at least one coefficient")

    def _value(self, pts):
        r2 = np.einsum("mi,mi->m", pts, pts)
        v = np.zeros(pts.shape[0])
        for k, c in enumerate(self.coeffs, start=1):
            v += c * r2**k
        return v

    def _gradient(self, pts):
        r2 = np.einsum("mi,mi->m", pts, pts)
        scale = np.zeros(pts.shape[0])
        for k, c in enumerate(self.coeffs, start=1):
            scale += 2 * k * c * r2 ** (k - 1)
        return scale[:, None] * pts

    def _hessian(self, pts):
        r2 = np.einsum("mi,mi->m", pts, pts)
        a = np.zeros(pts.shape[0])  # coefficient of identity
        b = np.zeros(pts.shape[0])  # coefficient of x' (x')^T
        for k, c in enumerate(self.coeffs, start=1):
            a += 2 * k * c * r2 ** (k - 1)
            if k >= 2:
                b += 2 * k * (2 * k - 2) * c * r2 ** (k - 2)
        eye = np.eye(self.d)
        outer = np.einsum("mi,mj->mij", pts, pts)
        return a[:, None, None] * eye[None, :, :] + b[:, None, None] * outer

    def descriptor(self):
        return {"kind": "polynomial", "dim_tangential": self.d, "coeffs": self.coeffs}


class CallableProfile(Profile):
    """User-supplied closed forms for value, gradient and Hessian."""

    def __init__(self, d: int, value: Callable, gradient: Callable, hessian: Callable,
                 name: str = "callable"):
        super().__init__(d)
        self._value_fn = value
        self._gradient_fn = gradient
        self._hessian_fn = hessian
        self.name = name

    def _value(self, pts):
        return np.asarray([self._value_fn(p) for p in pts], dtype=float)

    def _gradient(self, pts):
        return np.asarray([self._gradient_fn(p) for p in pts], dtype=float)

    def _hessian(self, pts):
        return np.asarray([self._hessian_fn(p) for p in pts], dtype=float)

    def descriptor(self):
        return {"kind": "callable", "name": self.name}


@dataclass(frozen=True)
class GapGeometry:
    """Two boundary profiles plus the constants they are declared to satisfy.

    Immutable after construction; safe for concurrent reads.

    Attributes
    ----------
    dim : ambient dimension n >= 2 (profiles live on n-1 variables).
    epsilon : boundary separation at the origin.
    h_upper, h_lower : the profiles of the upper/lower boundary.
    c1 : declared closeness constant, c1 |x'|^2 <= h_upper - h_lower.
    c2 : declared C^{1,1} bound of both profiles.
    kappa1, kappa2 : optional two-sided convexity bounds on D^2 h_upper
        and -D^2 h_lower (absent when the profiles are only C^{1,1}).
    reference_radius : radius |x'| <= R on which the declared constants
        are meant to hold; validation does not extrapolate past it.
    """

    dim: int
    epsilon: float
    h_upper: Profile
    h_lower: Profile
    c1: float
    c2: float
    kappa1: Optional[float] = None
    kappa2: Optional[float] = None
    reference_radius: float = 0.9

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("ambient dimension must be >= 2")
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if self.h_upper.d != self.dim - 1 or self.h_lower.d != self.dim - 1:
            raise ValueError("profile dimension must equal dim - 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if (self.kappa1 is None) != (self.kappa2 is None):
            raise ValueError("kappa1 and kappa2 must be given together")
        origin = np.zeros(self.dim - 1)
        for h in (self.h_upper, self.h_lower):
            if abs(h.value(origin)) > 1e-12:
                raise ValueError("profiles must vanish at the origin")
            if np.max(np.abs(h.gradient(origin))) > 1e-12:
                raise ValueError("profile gradients must vanish at the origin")

    # -- derived boundary data -------------------------------------------

    def gap_width(self, xp):
        """eps + h_upper(x') - h_lower(x'), the vertical boundary distance."""
        return self.epsilon + self.h_upper.value(xp) - self.h_lower.value(xp)

    def upper_height(self, xp):
        return 0.5 * self.epsilon + self.h_upper.value(xp)

    def lower_height(self, xp):
        return -0.5 * self.epsilon + self.h_lower.value(xp)

    def contains(self, x):
        """True where x lies strictly between the two boundaries."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xp, xn = x[:, :-1], x[:, -1]
        inside = (xn > self.lower_height(xp)) & (xn < self.upper_height(xp))
        return inside if inside.size > 1 else bool(inside[0])

    def descriptor(self) -> dict:
        return {
            "dim": self.dim,
            "epsilon": self.epsilon,
            "h_upper": self.h_upper.descriptor(),
            "h_lower": self.h_lower.descriptor(),
            "c1": self.c1,
            "c2": self.c2,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "reference_radius": self.reference_radius,
        }


@dataclass(frozen=True)
class Region:
    """A tangential region: a neck {|x'-c| < r}, an annulus, or everything.

    kind is one of "neck", "annulus", "full". For annuli radii is
    (inner, outer); for necks it is (radius,).
    """

    kind: str
    center: np.ndarray = field(default_factory=lambda: np.zeros(1))
    radii: tuple = (0.5,)

    def __post_init__(self):
        if self.kind not in ("neck", "annulus", "full"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if self.kind == "neck":
            if len(radii) != 1 or radii[0] <= 0:
                raise ValueError("neck region needs one positive radius")
        elif self.kind == "annulus":
            if len(radii) != 2 or not (0 < radii[0] < radii[1]):
                raise ValueError("annulus needs 0 < inner < outer")
        if self.kind != "full":
            if np.linalg.norm(self.center) + max(radii) > 1.0:
                raise ValueError("region must lie within |x'| < 1")

    def contains_xp(self, xp):
        """Boolean mask over tangential points (m, d)."""
        pts = np.atleast_2d(np.asarray(xp, dtype=float))
        if self.kind == "full":
            return np.ones(pts.shape[0], dtype=bool)
        dist = np.linalg.norm(pts - self.center[None, :], axis=1)
        if self.kind == "neck":
            return dist < self.radii[0]
        return (dist > self.radii[0]) & (dist < self.radii[1])


def make_disk_geometry(epsilon: float, dim: int = 2,
                       reference_radius: float = 0.9) -> GapGeometry:
    """Two unit balls at distance epsilon, the standard test geometry.

    In 2D the boundaries are x_2 = +-(eps/2 + 1 - sqrt(1 - x_1^2)); for
    dim >= 3 the same profile of |x'| gives balls of revolution. The
    closeness constant is c1 = 1 (h_upper - h_lower = 2(1-sqrt(1-|x'|^2))
    >= |x'|^2) and the convexity constants on |x'| <= reference_radius are
    kappa1 = 1, kappa2 = (1 - R^2)^(-3/2).
    """
    if not (0 < epsilon < 1):
        raise ValueError("epsilon must lie in (0, 1)")
    if not (0 < reference_radius <= DISK_CLAMP):
        raise ValueError(f"reference_radius must lie in (0, {DISK_CLAMP}]")
    d = dim - 1
    R = reference_radius
    kappa2 = (1.0 - R**2) ** -1.5
    # C^{1,1} bound on |x'| <= R: max of |h|, |Dh|, |D^2h| there.
    c2 = max(1.0 - np.sqrt(1.0 - R**2), R / np.sqrt(1.0 - R**2), kappa2)
    return GapGeometry(
        dim=dim,
        epsilon=float(epsilon),
        h_upper=DiskProfile(d, +1.0),
        h_lower=DiskProfile(d, -1.0),
        c1=1.0,
        c2=float(c2),
        kappa1=1.0,
        kappa2=float(kappa2),
        reference_radius=R,
    )


def make_quadratic_geometry(epsilon: float, upper_matrix, lower_matrix,
                            reference_radius: float = 0.9) -> GapGeometry:
    """Geometry with quadratic-form profiles h = x'^T M x'/2.

    The declared constants are exact: c1 = lambda_min(M_up - M_lo)/2,
    kappa1/kappa2 are the extreme eigenvalues of M_up and -M_lo.
    """
    up = QuadraticProfile(upper_matrix)
    lo = QuadraticProfile(lower_matrix)
    diff = up.matrix - lo.matrix
    c1 = 0.5 * float(np.linalg.eigvalsh(diff).min())
    if c1 <= 0:
        raise ValueError("upper profile must dominate lower by a definite quadratic")
    eig_up = np.linalg.eigvalsh(up.matrix)
    eig_lo = np.linalg.eigvalsh(-lo.matrix)
    kappa1 = float(min(eig_up.min(), eig_lo.min()))
    kappa2 = float(max(eig_up.max(), eig_lo.max()))
    R = reference_radius
    c2 = max(abs(eig_up).max(), abs(eig_lo).max()) * max(1.0, R, R**2 / 2.0)
    kwargs = {}
    if kappa1 > 0:
        kwargs = {"kappa1": kappa1, "kappa2": kappa2}
    return GapGeometry(
        dim=up.d + 1,
        epsilon=float(epsilon),
        h_upper=up,
        h_lower=lo,
        c1=c1,
        c2=float(c2),
        reference_radius=R,
        **kwargs,
    )


def geometry_from_descriptor(desc: dict) -> GapGeometry:
    """Rebuild a geometry from the dict produced by GapGeometry.descriptor()."""
    kind = desc["h_upper"]["kind"]
    if kind == "disk":
        return make_disk_geometry(desc["epsilon"], dim=desc["dim"],
                                  reference_radius=desc["reference_radius"])
    if kind == "quadratic":
        up = QuadraticProfile(desc["h_upper"]["matrix"])
        lo = QuadraticProfile(desc["h_lower"]["matrix"])
        kwargs = {}
        if desc.get("kappa1") is not None:
            kwargs = {"kappa1": desc["kappa1"], "kappa2": desc["kappa2"]}
        return GapGeometry(dim=desc["dim"], epsilon=desc["epsilon"], h_upper=up,
                           h_lower=lo, c1=desc["c1"], c2=desc["c2"],
                           reference_radius=desc["reference_radius"], **kwargs)
    if kind == "polynomial":
        up = RadialPolynomialProfile(desc["dim"] - 1, desc["h_upper"]["coeffs"])
        lo = RadialPolynomialProfile(desc["dim"] - 1, desc["h_lower"]["coeffs"])
        kwargs = {}
        if desc.get("kappa1") is not None:
            kwargs = {"kappa1": desc["kappa1"], "kappa2": desc["kappa2"]}
        return GapGeometry(dim=desc["dim"], epsilon=desc["epsilon"], h_upper=up,
                           h_lower=lo, c1=desc["c1"], c2=desc["c2"],
                           reference_radius=desc["reference_radius"], **kwargs)
    raise ValueError(f"cannot rebuild geometry of kind {kind!r}")


def make_flat_geometry(epsilon: float, dim: int = 2) -> GapGeometry:
    """Degenerate geometry with h_upper = h_lower = 0 (a straight slab).

    Violates the closeness hypothesis (the validator will say so), but the
    coordinate charts and the solver are exact on it, which makes it the
    reference case for transform and energy tests.
    """
    zero = np.zeros((dim - 1, dim - 1))
    return GapGeometry(dim=dim, epsilon=float(epsilon),
                       h_upper=QuadraticProfile(zero), h_lower=QuadraticProfile(zero),
                       c1=1.0, c2=1.0)


def inner_normal(geom: GapGeometry, side: str, xp):
    """Unit normal on the chosen boundary at tangential point(s) xp.

    For the upper boundary this is (-grad h_upper, 1)/sqrt(1+|grad h_upper|^2)
    (pointing up, out of the gap into the upper inclusion); for the lower
    boundary the reflected analogue (grad h_lower, -1)/sqrt(...) pointing
    down. These are the directions the boundary-flux condition refers to.
    """
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    pts, scalar = _as_points(xp, geom.dim - 1)
    if np.any(np.linalg.norm(pts, axis=1) >= 1.0):
        raise ValueError("normal requested outside the profile domain |x'| < 1")
    if side == "upper":
        grad = geom.h_upper.gradient(pts)
        nvec = np.concatenate([-grad, np.ones((pts.shape[0], 1))], axis=1)
    else:
        grad = geom.h_lower.gradient(pts)
        nvec = np.concatenate([grad, -np.ones((pts.shape[0], 1))], axis=1)
    nvec /= np.linalg.norm(nvec, axis=1, keepdims=True)
    return nvec[0] if scalar else nvec


@dataclass
class HypothesisReport:
    """Estimated geometry constants and any declared-constant violations."""

    c1_est: float
    c2_est: float
    kappa1_est: Optional[float]
    kappa2_est: Optional[float]
    radius: float
    n_samples: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "c1_est": self.c1_est,
            "c2_est": self.c2_est,
            "kappa1_est": self.kappa1_est,
            "kappa2_est": self.kappa2_est,
            "radius": self.radius,
            "n_samples": self.n_samples,
            "violations": self.violations,
        }


def _sample_tangential(d: int, radius: float, samples: int, seed: int):
    """Uniform grid plus seeded random points in the ball |x'| <= radius."""
    rng = np.random.default_rng(seed)
    if d == 1:
        grid = np.linspace(-radius, radius, samples)[:, None]
    else:
        per_axis = max(3, int(round(samples ** (1.0 / d))))
        axes = [np.linspace(-radius, radius, per_axis)] * d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        grid = grid[np.linalg.norm(grid, axis=1) <= radius]
    rand = rng.uniform(-radius, radius, size=(samples, d))
    rand = rand[np.linalg.norm(rand, axis=1) <= radius]
    return np.vstack([grid, rand])


def validate_hypotheses(geom: GapGeometry, samples: int = 1000,
                        radius: Optional[float] = None, seed: int = 0) -> HypothesisReport:
    """Estimate the geometry constants on a dense sample and check declarations.

    Constants are extremized over a uniform grid plus seeded random points
    with |x'| <= radius (default: the geometry's reference radius). Any
    sample at which a declared constant fails gets a violation record;
    nothing is thrown.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    radius = geom.reference_radius if radius is None else float(radius)
    d = geom.dim - 1
    pts = _sample_tangential(d, radius, samples, seed)
    r = np.linalg.norm(pts, axis=1)
    violations = []

    # fg_0 conditions at the origin.
    origin = np.zeros(d)
    for name, h in (("upper", geom.h_upper), ("lower", geom.h_lower)):
        v0 = float(h.value(origin))
        g0 = float(np.max(np.abs(h.gradient(origin))))
        if abs(v0) > 1e-12 or g0 > 1e-12:
            violations.append({"constraint": "origin_conditions", "profile": name,
                               "value": v0, "gradient": g0})

    # Closeness: c1 |x'|^2 <= h_upper - h_lower away from the origin.
    mask = r > 1e-8
    diff = geom.h_upper.value(pts[mask]) - geom.h_lower.value(pts[mask])
    ratio = diff / r[mask] ** 2
    c1_est = float(ratio.min())
    bad = ratio < geom.c1 * (1.0 - _CHECK_RTOL)
    for idx in np.flatnonzero(bad)[:20]:
        violations.append({"constraint": "closeness_c1", "xp": pts[mask][idx].tolist(),
                           "ratio": float(ratio[idx]), "declared": geom.c1})

    # Regularity: C^{1,1} norms of both profiles.
    c2_est = 0.0
    for h in (geom.h_upper, geom.h_lower):
        vals = np.abs(h.value(pts))
        grads = np.linalg.norm(h.gradient(pts), axis=1)
        hess = h.hessian(pts)
        hnorm = np.abs(np.linalg.eigvalsh(hess)).max(axis=1)
        c2_est = max(c2_est, float(vals.max()), float(grads.max()), float(hnorm.max()))
    if c2_est > geom.c2 * (1.0 + _CHECK_RTOL):
        violations.append({"constraint": "regularity_c2", "estimate": c2_est,
                           "declared": geom.c2})

    # Convexity: kappa1 I <= D^2 h_upper <= kappa2 I and same for -D^2 h_lower.
    kappa1_est = kappa2_est = None
    eig_min = np.inf
    eig_max = -np.inf
    for sign, h in ((1.0, geom.h_upper), (-1.0, geom.h_lower)):
        eig = np.linalg.eigvalsh(sign * h.hessian(pts))
        eig_min = min(eig_min, float(eig.min()))
        eig_max = max(eig_max, float(eig.max()))
    kappa1_est, kappa2_est = eig_min, eig_max
    if geom.kappa1 is not None:
        if kappa1_est < geom.kappa1 * (1.0 - _CHECK_RTOL):
            violations.append({"constraint": "convexity_kappa1", "estimate": kappa1_est,
                               "declared": geom.kappa1})
        if kappa2_est > geom.kappa2 * (1.0 + _CHECK_RTOL):
            violations.append({"constraint": "convexity_kappa2", "estimate": kappa2_est,
                               "declared": geom.kappa2})

    return HypothesisReport(
        c1_est=c1_est,
        c2_est=c2_est,
        kappa1_est=kappa1_est,
        kappa2_est=kappa2_est,
        radius=radius,
        n_samples=pts.shape[0],
        violations=violations,
    )
