"""Models of hyperbolic space, distances, geodesics, shadows, horoballs.

Two coordinate models are supported:

- Ball: vectors of Euclidean norm < 1, metric ds^2 = 4|dx|^2/(1-|x|^2)^2.
  The distinguished interior point j is the origin.
- HalfSpace: coords[0] is the height t > 0, the remaining m coordinates
  are the boundary position v; metric ds^2 = |dx|^2/t^2.  The point j is
  e0 = (1, 0, ..., 0).

The two models are identified by the spherical inversion in (-1, 0, ..., 0)
of radius sqrt(2), which is an involution exchanging them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import minimize_scalar

BALL = "Ball"
HALFSPACE = "HalfSpace"

# degenerate input policy: reject points this close to the model boundary
BOUNDARY_MARGIN = 1e-12


class DegenerateInput(ValueError):
    """Raised for points within BOUNDARY_MARGIN of the model boundary."""


def _as_vec(coords) -> np.ndarray:
    a = np.asarray(coords, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise ValueError("coords must be a 1-D vector of length >= 2")
    return a


@dataclass(frozen=True)
class ModelPoint:
    """Interior point of hyperbolic space, tagged with its model."""

    model: str
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _as_vec(self.coords))
        if self.model == BALL:
            if np.linalg.norm(self.coords) >= 1.0 - BOUNDARY_MARGIN:
                raise DegenerateInput("ball point too close to the unit sphere")
        elif self.model == HALFSPACE:
            if self.coords[0] <= BOUNDARY_MARGIN:
                raise DegenerateInput("half-space point too close to height 0")
        else:
            raise ValueError(f"unknown model {self.model!r}")

    @property
    def dim(self) -> int:
        return self.coords.size

    def __eq__(self, other):
        return (isinstance(other, ModelPoint) and self.model == other.model
                and np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash((self.model, self.coords.tobytes()))


_INF = object()


@dataclass(frozen=True)
class IdealPoint:
    """Boundary point: unit vector (Ball) or finite vector / Infinity (HalfSpace).

    In the HalfSpace model `coords` holds the m boundary coordinates v (no
    leading height); Infinity is represented by ``IdealPoint.infinity(dim)``.
    """

    model: str
    coords: Union[np.ndarray, None]
    dim_hint: int = 0

    def __post_init__(self):
        if self.model == BALL:
            c = _as_vec(self.coords)
            if abs(np.linalg.norm(c) - 1.0) >= BOUNDARY_MARGIN:
                raise DegenerateInput("ball ideal point must be a unit vector")
            object.__setattr__(self, "coords", c)
        elif self.model == HALFSPACE:
            if self.coords is None:
                if self.dim_hint < 2:
                    raise ValueError("Infinity needs an ambient dim_hint >= 2")
            else:
                c = np.asarray(self.coords, dtype=float)
                if c.ndim != 1 or c.size < 1:
                    raise ValueError("boundary coords must be a 1-D vector")
                object.__setattr__(self, "coords", c)
        else:
            raise ValueError(f"unknown model {self.model!r}")

    @staticmethod
    def infinity(dim: int) -> "IdealPoint":
        return IdealPoint(HALFSPACE, None, dim_hint=dim)

    @property
    def is_infinity(self) -> bool:
        return self.model == HALFSPACE and self.coords is None

    @property
    def dim(self) -> int:
        if self.is_infinity:
            return self.dim_hint
        if self.model == BALL:
            return self.coords.size
        return self.coords.size + 1

    def __eq__(self, other):
        if not isinstance(other, IdealPoint) or self.model != other.model:
            return False
        if self.is_infinity or other.is_infinity:
            return self.is_infinity and other.is_infinity
        return np.array_equal(self.coords, other.coords)

    def __hash__(self):
        if self.is_infinity:
            return hash((self.model, "inf", self.dim_hint))
        return hash((self.model, self.coords.tobytes()))


Point = Union[ModelPoint, IdealPoint]


def ball_origin(dim: int) -> ModelPoint:
    return ModelPoint(BALL, np.zeros(dim))


def _invert_in_c(x: np.ndarray) -> np.ndarray:
    # inversion in center c = (-1, 0, ..., 0), radius sqrt(2)
    c = np.zeros_like(x)
    c[0] = -1.0
    d = x - c
    n2 = d @ d
    return c + 2.0 * d / n2


def invert_in_c_array(x: np.ndarray) -> np.ndarray:
    """Vectorized model-exchange inversion over rows of x."""
    x = np.atleast_2d(x)
    c = np.zeros(x.shape[-1])
    c[0] = -1.0
    d = x - c
    n2 = np.sum(d * d, axis=-1, keepdims=True)
    return c + 2.0 * d / n2


def convert_model(p: Point) -> Point:
    """Map a point to the other model via the standard inversion.

    Ball origin <-> HalfSpace e0 = (1, 0, ..., 0); the ball ideal point
    (-1, 0, ..., 0) <-> Infinity.
    """
    if isinstance(p, ModelPoint):
        if p.model == BALL:
            img = _invert_in_c(p.coords)
            return ModelPoint(HALFSPACE, img)
        img = _invert_in_c(p.coords)
        return ModelPoint(BALL, img)
    # ideal points
    if p.model == BALL:
        x = p.coords
        d0 = x.copy()
        d0[0] += 1.0
        if d0 @ d0 < 1e-24:
            return IdealPoint.infinity(x.size)
        img = _invert_in_c(x)
        # image lies on the boundary t = 0; drop the height coordinate
        return IdealPoint(HALFSPACE, img[1:])
    if p.is_infinity:
        out = np.zeros(p.dim_hint)
        out[0] = -1.0
        return IdealPoint(BALL, out)
    full = np.concatenate(([0.0], p.coords))
    img = _invert_in_c(full)
    n = np.linalg.norm(img)
    return IdealPoint(BALL, img / n)


def to_model(p: Point, model: str) -> Point:
    return p if p.model == model else convert_model(p)


def dist(p: ModelPoint, q: ModelPoint) -> float:
    """Hyperbolic distance rho(p, q).

    Closed forms: Ball arccosh(1 + 2|p-q|^2 / ((1-|p|^2)(1-|q|^2)));
    HalfSpace arccosh(1 + |p-q|^2 / (2 t_p t_q)).
    """
    if p.model != q.model:
        q = to_model(q, p.model)
    d2 = float(np.sum((p.coords - q.coords) ** 2))
    if p.model == BALL:
        a = 1.0 - float(p.coords @ p.coords)
        b = 1.0 - float(q.coords @ q.coords)
        arg = 1.0 + 2.0 * d2 / (a * b)
    else:
        arg = 1.0 + d2 / (2.0 * p.coords[0] * q.coords[0])
    return math.acosh(max(arg, 1.0))


def dist_ball_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Vectorized ball-model distance over rows of p and q."""
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    d2 = np.sum((p - q) ** 2, axis=-1)
    a = 1.0 - np.sum(p * p, axis=-1)
    b = 1.0 - np.sum(q * q, axis=-1)
    return np.arccosh(np.maximum(1.0 + 2.0 * d2 / (a * b), 1.0))


def chordal(x: IdealPoint, y: IdealPoint) -> float:
    """Euclidean distance between the ball-model unit vectors of x and y."""
    xb = to_model(x, BALL)
    yb = to_model(y, BALL)
    return float(np.linalg.norm(xb.coords - yb.coords))


@dataclass(frozen=True)
class Geodesic:
    """Geodesic line, ray, or segment given by its two endpoints.

    Each endpoint is a ModelPoint (included, closed) or an IdealPoint
    (excluded, open).  Two IdealPoints give a full line, one of each a ray,
    two ModelPoints a segment.
    """

    a: Point
    b: Point

    def __post_init__(self):
        pa, pb = self.a, self.b
        if isinstance(pa, IdealPoint) and isinstance(pb, IdealPoint):
            if chordal(pa, pb) <= 1e-12:
                raise ValueError("geodesic endpoints coincide")
        elif isinstance(pa, ModelPoint) and isinstance(pb, ModelPoint):
            if dist(pa, pb) <= 1e-12:
                raise ValueError("geodesic endpoints coincide")


def _halfspace_endpoint_data(p: Point):
    """Return (t, v) with t = None meaning the point at infinity."""
    q = to_model(p, HALFSPACE)
    if isinstance(q, IdealPoint):
        if q.is_infinity:
            return None, None
        return 0.0, q.coords
    return float(q.coords[0]), q.coords[1:]


def _geodesic_param(g: Geodesic):
    """Half-space parametrization of g.

    Returns (kind, data, (sa, open_a), (sb, open_b)).  For kind "vertical"
    data = (x,) and the point at log-height parameter s is (e^s, x); ideal
    ends sit at s = -inf (finite boundary point) or +inf (Infinity).  For
    kind "circle" data = (center, radius, unit direction) and the point at
    angle phi in (0, pi) is (r sin phi, center + r cos phi * dhat); ideal
    ends sit at phi = 0 or pi.  open_* marks ideal (excluded) endpoints.
    """
    ta, va = _halfspace_endpoint_data(g.a)
    tb, vb = _halfspace_endpoint_data(g.b)

    def vert_end(t):
        if t is None:
            return math.inf, True
        if t == 0.0:
            return -math.inf, True
        return math.log(t), False

    if ta is None or tb is None:
        x = va if ta is not None else vb
        return "vertical", (x,), vert_end(ta), vert_end(tb)

    dv = vb - va
    ndv = float(np.linalg.norm(dv))
    if ndv < 1e-14:
        return "vertical", (va,), vert_end(ta), vert_end(tb)

    dhat = dv / ndv
    # center at va + u * dhat on the boundary, equidistant from both points
    u = (ndv * ndv + tb * tb - ta * ta) / (2.0 * ndv)
    center = va + u * dhat
    r = math.hypot(u, ta)

    def circ_end(t, v):
        if t == 0.0:
            x = float((v - center) @ dhat)
            return (math.pi if x < 0 else 0.0), True
        return math.atan2(t, float((v - center) @ dhat)), False

    return "circle", (center, r, dhat), circ_end(ta, va), circ_end(tb, vb)


def _geodesic_point(kind, data, s) -> ModelPoint:
    if kind == "vertical":
        (x,) = data
        return ModelPoint(HALFSPACE, np.concatenate(([math.exp(s)], x)))
    center, r, dhat = data
    h = r * math.sin(s)
    v = center + r * math.cos(s) * dhat
    return ModelPoint(HALFSPACE, np.concatenate(([h], v)))


def dist_to_geodesic(p: ModelPoint, g: Geodesic) -> float:
    """Distance from p to the geodesic g (inf over the line/ray/segment).

    Golden-section/Brent minimization over the geodesic parameter to 1e-10;
    the minimizer is clamped to the parameter range of rays and segments.
    """
    ph = to_model(p, HALFSPACE)
    kind, data, (sa, open_a), (sb, open_b) = _geodesic_param(g)
    if sa > sb:
        sa, sb, open_a, open_b = sb, sa, open_b, open_a

    if kind == "vertical":
        # closed form for the full line: sinh rho = |v - x| / t
        (x,) = data
        t = float(ph.coords[0])
        vv = float(np.linalg.norm(ph.coords[1:] - x))
        if math.isinf(sa) and math.isinf(sb):
            return math.asinh(vv / t)
        # foot of perpendicular at height sqrt(|v-x|^2 + t^2)
        s = 0.5 * math.log(vv * vv + t * t)
        s = min(max(s, sa), sb)
        return dist(ph, _geodesic_point(kind, data, s))

    # circular arc: parameter phi in (0, pi), ideal ends kept open
    eps = 1e-9
    lo = max(sa, eps) if open_a else sa
    hi = min(sb, math.pi - eps) if open_b else sb
    lo = max(lo, eps)
    hi = min(hi, math.pi - eps)

    def f(phi):
        return dist(ph, _geodesic_point(kind, data, phi))

    if hi - lo < 1e-12:
        return f(0.5 * (lo + hi))
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    best = float(res.fun)
    # the bounded minimizer can stall a hair short of a clamped endpoint
    best = min(best, f(lo), f(hi))
    return best


def key_chord_identity(x: IdealPoint, y: IdealPoint) -> tuple[float, float]:
    """Return (|x-y| chordal, 2 / cosh rho(j, geodesic xy)); these agree."""
    lhs = chordal(x, y)
    j = ball_origin(x.dim if not x.is_infinity else x.dim_hint)
    g = Geodesic(to_model(x, BALL), to_model(y, BALL))
    rhs = 2.0 / math.cosh(dist_to_geodesic(j, g))
    return lhs, rhs


def cone_angle(alpha: float) -> float:
    """Half-angle theta of the alpha-neighborhood cone: cos theta cosh alpha = 1."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return math.acos(1.0 / math.cosh(alpha))


def shadow_ball_infinity(w: ModelPoint, alpha: float) -> tuple[np.ndarray, float]:
    """Shadow of w = (t, v) from infinity: the ball B(v, t sinh alpha)."""
    wh = to_model(w, HALFSPACE)
    t = float(wh.coords[0])
    v = wh.coords[1:]
    return v, t * math.sinh(alpha)


def shadow_contains(x: IdealPoint, v: Point, alpha: float, w: ModelPoint) -> bool:
    """True iff the geodesic [v, x] passes within distance alpha of w."""
    if isinstance(v, IdealPoint) and v.is_infinity:
        xv = to_model(x, HALFSPACE)
        if isinstance(xv, IdealPoint) and xv.is_infinity:
            raise ValueError("x and v must be distinct")
        center, radius = shadow_ball_infinity(w, alpha)
        return float(np.linalg.norm(xv.coords - center)) < radius
    g = Geodesic(v, x)
    return dist_to_geodesic(w, g) < alpha


@dataclass(frozen=True)
class Horoball:
    """Horoball: at Infinity the region t > c; at a finite base the open
    Euclidean ball of the given radius internally tangent at the base."""

    base: IdealPoint
    parameter: float

    def __post_init__(self):
        if self.parameter <= 0:
            raise ValueError("horoball parameter must be positive")


def horoball_contains(h: Horoball, p: ModelPoint) -> bool:
    if h.base.is_infinity:
        ph = to_model(p, HALFSPACE)
        return float(ph.coords[0]) > h.parameter
    if h.base.model == HALFSPACE:
        ph = to_model(p, HALFSPACE)
        center = np.concatenate(([h.parameter], h.base.coords))
        return float(np.linalg.norm(ph.coords - center)) < h.parameter
    pb = to_model(p, BALL)
    center = (1.0 - h.parameter) * h.base.coords
    return float(np.linalg.norm(pb.coords - center)) < h.parameter


# ---------------------------------------------------------------------------
# vectorized kernels used by the estimators

def dist_origin_ball(pts: np.ndarray) -> np.ndarray:
    """Ball-model distances from the origin, rows of pts."""
    r = np.linalg.norm(np.atleast_2d(pts), axis=-1)
    r = np.minimum(r, 1.0 - 1e-16)
    return np.log((1.0 + r) / (1.0 - r))


def dist_to_ray_from_origin(pts: np.ndarray, x_unit: np.ndarray) -> np.ndarray:
    """Distance from ball points (rows) to the ray [j, x).

    Right-triangle identity: for a point at distance rho0 from the origin
    making angle psi with the ray direction, the perpendicular distance to
    the line through the origin is asinh(sinh rho0 * sin psi); when the foot
    falls behind the origin (cos psi < 0) the nearest ray point is j itself.
    """
    pts = np.atleast_2d(pts)
    rho0 = dist_origin_ball(pts)
    r = np.linalg.norm(pts, axis=-1)
    safe_r = np.where(r > 0, r, 1.0)
    proj = pts @ x_unit
    # rejection-based sine: stable for points deep near the boundary,
    # where sqrt(1 - cos^2) would amplify rounding by sinh(rho0)
    perp = pts - proj[..., None] * x_unit
    sinp = np.linalg.norm(perp, axis=-1) / safe_r
    sinh0 = 2.0 * r / np.maximum(1.0 - r * r, 1e-300)
    d_line = np.arcsinh(sinh0 * sinp)
    return np.where(proj >= 0.0, d_line, rho0)


def dist_to_vertical_line(t: np.ndarray, v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Half-space distance from points (t, v) to the vertical line over x."""
    t = np.asarray(t, dtype=float)
    v = np.atleast_2d(v)
    dv = np.linalg.norm(v - x, axis=-1)
    return np.arcsinh(dv / t)
