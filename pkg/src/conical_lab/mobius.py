"""Mobius transformations of the boundary sphere / isometries of hyperbolic
space, represented as words of primitive generators acting on the ball model.

A word acts by composition: ``word = [w1, w2]`` means w1 o w2 (w2 applied
first), so composition of isometries is word concatenation.  Equality of
isometries is only ever tested by action on a probe set, never syntactically.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import geometry as geo
from .geometry import (BALL, HALFSPACE, IdealPoint, ModelPoint, Point,
                       ball_origin, chordal, convert_model, to_model)


class PreconditionViolated(ValueError):
    pass


class SideConditionViolated(ValueError):
    pass


# ---------------------------------------------------------------------------
# primitives, all acting on ball coordinates (rows of an (..., d) array)

@dataclass(frozen=True)
class HyperplaneReflection:
    """Reflection in the hyperplane through the origin with unit normal u."""

    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        n = np.linalg.norm(u)
        if n < 1e-14:
            raise ValueError("zero normal")
        object.__setattr__(self, "u", u / n)

    def act(self, x):
        return x - 2.0 * np.outer(x @ self.u, self.u).reshape(x.shape)

    def inverse(self):
        return self

    parity = -1


@dataclass(frozen=True)
class SphereInversion:
    """Inversion in the sphere S(c, r); orthogonality to the unit sphere
    (|c|^2 = r^2 + 1) makes it a ball isometry."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)
        if abs(float(c @ c) - self.radius ** 2 - 1.0) > 1e-9:
            raise ValueError("sphere not orthogonal to the unit sphere")

    def act(self, x):
        d = x - self.center
        n2 = np.sum(d * d, axis=-1, keepdims=True)
        return self.center + (self.radius ** 2) * d / n2

    def inverse(self):
        return self

    parity = -1


@dataclass(frozen=True)
class OrthogonalMap:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if np.max(np.abs(m @ m.T - np.eye(m.shape[0]))) > 1e-9:
            raise ValueError("matrix not orthogonal")
        object.__setattr__(self, "matrix", m)

    def act(self, x):
        return x @ self.matrix.T

    def inverse(self):
        return OrthogonalMap(self.matrix.T)

    @property
    def parity(self):
        return 1 if np.linalg.det(self.matrix) > 0 else -1


@dataclass(frozen=True)
class BallTransvection:
    """Mobius translation sending a to the origin (and 0 to -a)."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if np.linalg.norm(a) >= 1.0:
            raise ValueError("transvection point must be inside the ball")
        object.__setattr__(self, "a", a)

    def act(self, x):
        a = self.a
        aa = float(a @ a)
        xa = x - a
        nxa2 = np.sum(xa * xa, axis=-1)
        num = (1.0 - aa) * xa - nxa2[..., None] * a
        # stable form of 1 - 2<a,x> + |a|^2 |x|^2 (both summands >= 0)
        den = nxa2 + (1.0 - aa) * (1.0 - np.sum(x * x, axis=-1))
        return num / den[..., None]

    def inverse(self):
        return BallTransvection(-self.a)

    parity = 1


@dataclass(frozen=True)
class Matrix2:
    """2x2 matrix fast path: boundary action z -> (az+b)/(cz+d) on R_inf
    (dim 2) or C_inf (dim 3).

    The determinant is carried through compositions (recomputing ad - bc
    cancels catastrophically once entries are large); the Mobius action is
    scale-invariant, so entries are only rescaled to avoid overflow.
    `normalized()` gives the det-1 representative.
    """

    a: complex
    b: complex
    c: complex
    d: complex
    det: complex = None  # type: ignore[assignment]

    def __post_init__(self):
        for f in ("a", "b", "c", "d"):
            object.__setattr__(self, f, complex(getattr(self, f)))
        if self.det is None:
            det = self.a * self.d - self.b * self.c
            scale = max(abs(self.a), abs(self.b), abs(self.c), abs(self.d))
            if abs(det) <= 1e-13 * scale * scale:
                raise ValueError("singular matrix")
            object.__setattr__(self, "det", det)
        else:
            object.__setattr__(self, "det", complex(self.det))

    def normalized(self) -> "Matrix2":
        s = cmath.sqrt(self.det)
        return Matrix2(self.a / s, self.b / s, self.c / s, self.d / s,
                       det=1.0 + 0.0j)

    def matmul(self, other: "Matrix2") -> "Matrix2":
        a = self.a * other.a + self.b * other.c
        b = self.a * other.b + self.b * other.d
        c = self.c * other.a + self.d * other.c
        d = self.c * other.b + self.d * other.d
        det = self.det * other.det
        m = max(abs(a), abs(b), abs(c), abs(d))
        if m > 1e100:
            a, b, c, d, det = a / m, b / m, c / m, d / m, det / (m * m)
        return Matrix2(a, b, c, d, det=det)

    def inverse(self) -> "Matrix2":
        return Matrix2(self.d, -self.b, -self.c, self.a, det=self.det)

    def boundary(self, z):
        """Fractional linear action on the boundary; z may be inf."""
        if z == math.inf or (isinstance(z, complex) and cmath.isinf(z)):
            return self.a / self.c if self.c != 0 else math.inf
        w = self.c * z + self.d
        if abs(w) == 0.0:
            return math.inf
        return (self.a * z + self.b) / w


def matrix2_compose_stream(mats: Sequence[Matrix2]) -> Matrix2:
    """Left-to-right product, renormalized to det 1 every 32 factors to
    control drift."""
    out = Matrix2(1, 0, 0, 1)
    for i, m in enumerate(mats, start=1):
        out = out.matmul(m)
        if i % 32 == 0:
            out = out.normalized()
    return out


def psl2_apply(M: Matrix2, z: complex, t: float) -> tuple[complex, float]:
    """Poincare extension of the boundary action to the upper half-space:
    with D = |cz+d|^2 + |c|^2 t^2,
    z' = ((az+b) conj(cz+d) + a conj(c) t^2)/D, t' = |det| t/D
    (both scale-invariant; t' reduces to t/D when det = 1)."""
    if t <= 0:
        raise ValueError("height must be positive")
    z = complex(z)
    w = M.c * z + M.d
    D = abs(w) ** 2 + abs(M.c) ** 2 * t * t
    z2 = ((M.a * z + M.b) * w.conjugate() + M.a * M.c.conjugate() * t * t) / D
    return z2, abs(M.det) * t / D


Primitive = Union[HyperplaneReflection, SphereInversion, OrthogonalMap,
                  BallTransvection, Matrix2]

# words longer than this are compacted by a Matrix2 refit in dims 2-3
COMPACT_THRESHOLD = 10_000


@dataclass(frozen=True)
class Isometry:
    dim: int
    word: tuple = ()

    @property
    def orientation(self) -> int:
        s = 1
        for p in self.word:
            s *= 1 if isinstance(p, Matrix2) else p.parity
        return s

    def __repr__(self):
        return f"Isometry(dim={self.dim}, |word|={len(self.word)})"


def identity(dim: int) -> Isometry:
    return Isometry(dim)


def _matrix2_to_ball(M: Matrix2, x: np.ndarray, dim: int) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        p = ModelPoint(BALL, x[i]) if np.linalg.norm(x[i]) < 1.0 - 1e-12 \
            else IdealPoint(BALL, x[i] / np.linalg.norm(x[i]))
        q = to_model(p, HALFSPACE)
        if isinstance(q, IdealPoint):
            if q.is_infinity:
                z = math.inf if dim == 2 else complex(math.inf, 0)
            else:
                z = q.coords[0] if dim == 2 else complex(q.coords[0], q.coords[1])
            w = M.boundary(z)
            if w == math.inf or (isinstance(w, complex) and cmath.isinf(w)):
                img = IdealPoint.infinity(dim)
            else:
                w = complex(w)
                v = np.array([w.real]) if dim == 2 else np.array([w.real, w.imag])
                img = IdealPoint(HALFSPACE, v)
            out[i] = to_model(img, BALL).coords
        else:
            t = float(q.coords[0])
            z = q.coords[1] if dim == 2 else complex(q.coords[1], q.coords[2])
            z2, t2 = psl2_apply(M, z, t)
            v = np.array([t2, z2.real]) if dim == 2 else \
                np.array([t2, z2.real, z2.imag])
            # raw conversion: orbits may legitimately approach height 0
            out[i] = geo.invert_in_c_array(v[None, :])[0]
    return out


def apply_array(G: Isometry, x: np.ndarray) -> np.ndarray:
    """Apply G to ball coordinates (rows); interior and ideal alike."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    for p in reversed(G.word):
        if isinstance(p, Matrix2):
            x = _matrix2_to_ball(p, x, G.dim)
        else:
            x = p.act(x)
    return x


def apply(G: Isometry, p: Point) -> Point:
    """Apply G; interior points stay interior, ideal points stay ideal."""
    if isinstance(p, IdealPoint):
        pb = to_model(p, BALL)
        img = apply_array(G, pb.coords[None, :])[0]
        img = img / np.linalg.norm(img)
        out = IdealPoint(BALL, img)
    else:
        pb = to_model(p, BALL)
        img = apply_array(G, pb.coords[None, :])[0]
        out = ModelPoint(BALL, img)
    return out if p.model == BALL else convert_model(out)


def compose(G: Isometry, H: Isometry) -> Isometry:
    if G.dim != H.dim:
        raise ValueError("dimension mismatch")
    out = Isometry(G.dim, G.word + H.word)
    if len(out.word) > COMPACT_THRESHOLD:
        out = compact(out)
    return out


def invert(G: Isometry) -> Isometry:
    inv = tuple(p.inverse() for p in reversed(G.word))
    return Isometry(G.dim, inv)


def _boundary_value(G: Isometry, z, dim: int):
    """Boundary action of G as a value in R_inf / C_inf."""
    if z == math.inf:
        p = IdealPoint.infinity(dim)
    else:
        z = complex(z)
        v = np.array([z.real]) if dim == 2 else np.array([z.real, z.imag])
        p = IdealPoint(HALFSPACE, v)
    q = to_model(apply(G, p), HALFSPACE)
    if q.is_infinity:
        return math.inf
    return q.coords[0] if dim == 2 else complex(q.coords[0], q.coords[1])


def _mat_sending_0_1_inf(w1, w2, w3) -> Matrix2:
    """Matrix with M(0)=w1, M(1)=w2, M(inf)=w3 (standard 3-point fit)."""
    vals = [w1, w2, w3]
    infs = [v == math.inf or (isinstance(v, complex) and cmath.isinf(v))
            for v in vals]
    if not any(infs):
        return Matrix2(w3 * (w2 - w1), w1 * (w3 - w2), w2 - w1, w3 - w2)
    if infs[2]:
        # M(inf)=inf: affine map z -> (w2-w1) z + w1
        return Matrix2(w2 - w1, w1, 0, 1)
    if infs[0]:
        # M(0)=inf: z -> (w3 z + (w2-w3)... solve directly: d = 0
        return Matrix2(w3, w2 - w3, 1, 0)
    # M(1)=inf: c + d = 0
    return Matrix2(w3, -w1, 1, -1)


def compact(G: Isometry) -> Isometry:
    """Refit a long word to a single Matrix2 via its boundary action
    (dims 2-3, orientation +1 only); otherwise return G unchanged."""
    if G.dim not in (2, 3) or G.orientation != 1:
        return G
    w1 = _boundary_value(G, 0.0, G.dim)
    w2 = _boundary_value(G, 1.0, G.dim)
    w3 = _boundary_value(G, math.inf, G.dim)
    M = _mat_sending_0_1_inf(w1, w2, w3)
    return Isometry(G.dim, (M,))


def lemma_orthogonal_map(z: ModelPoint, x: IdealPoint, y: IdealPoint,
                         tol: float = 1e-7) -> Isometry:
    """Orientation-preserving U with U(z) = j, U(e) = x, U(-e) = y.

    Requires the chord/cosh identity |x - y| = 2 / cosh rho(z, gamma)
    where gamma is the geodesic from -e to e.  Construction: transvection
    V = T_z, then an orthogonal W matching the frames.
    """
    zb = to_model(z, BALL)
    dim = zb.dim
    e = np.zeros(dim)
    e[0] = 1.0
    ge = IdealPoint(BALL, e)
    gme = IdealPoint(BALL, -e)
    # gamma is the first-axis diameter; closed form sinh rho = sinh rho0 *
    # sin psi with a rejection-based sine stays stable near the boundary
    zc = zb.coords
    r = float(np.linalg.norm(zc))
    sinh0 = 2.0 * r / max(1.0 - r * r, 1e-300)
    perp = float(np.linalg.norm(zc[1:]))
    rho = math.asinh(sinh0 * perp / r) if r > 0 else 0.0
    lhs = chordal(x, y)
    if abs(lhs - 2.0 / math.cosh(rho)) > tol:
        raise PreconditionViolated(
            f"|x-y| = {lhs:.12g} but 2/cosh rho(z,gamma) = "
            f"{2.0/math.cosh(rho):.12g}")

    V = Isometry(dim, (BallTransvection(zb.coords),))
    p1 = to_model(apply(V, ge), BALL).coords
    p2 = to_model(apply(V, gme), BALL).coords
    q1 = to_model(x, BALL).coords
    q2 = to_model(y, BALL).coords

    W = _orthogonal_matching(p1, p2, q1, q2)
    return Isometry(dim, (OrthogonalMap(W),) + V.word)


def _orthogonal_matching(p1, p2, q1, q2) -> np.ndarray:
    """Rotation W with W p1 = q1, W p2 = q2 (unit vectors, equal chords).

    dim >= 3: always solvable in SO(d) via frame completion.  dim 2: a
    rotation exists only when both pairs have the same cyclic orientation;
    otherwise SideConditionViolated.
    """
    d = p1.size
    if d == 2:
        cr_p = p1[0] * p2[1] - p1[1] * p2[0]
        cr_q = q1[0] * q2[1] - q1[1] * q2[0]
        if abs(cr_p) > 1e-12 and abs(cr_q) > 1e-12 and \
                (cr_p > 0) != (cr_q > 0):
            raise SideConditionViolated(
                "boundary pairs wind oppositely; no rotation matches them")
        th = math.atan2(q1[1], q1[0]) - math.atan2(p1[1], p1[0])
        c, s = math.cos(th), math.sin(th)
        W = np.array([[c, -s], [s, c]])
        if np.linalg.norm(W @ p2 - q2) > 1e-7:
            raise SideConditionViolated(
                "no rotation maps both boundary points")
        return W

    def frame(a, b):
        u1 = a / np.linalg.norm(a)
        b2 = b - (b @ u1) * u1
        n = np.linalg.norm(b2)
        if n < 1e-13:
            # a, b colinear (antipodal pair): second frame vector is free
            basis = np.eye(d)
            idx = int(np.argmin(np.abs(u1)))
            b2 = basis[idx] - (basis[idx] @ u1) * u1
            n = np.linalg.norm(b2)
        u2 = b2 / n
        # complete to an orthonormal basis
        M = np.column_stack([u1, u2, *np.eye(d).T])
        Q, _ = np.linalg.qr(M)
        # qr may flip signs; force the first two columns
        Q[:, 0] = u1
        Q[:, 1] = u2
        for k in range(2, d):
            v = Q[:, k]
            for j in range(k):
                v = v - (v @ Q[:, j]) * Q[:, j]
            Q[:, k] = v / np.linalg.norm(v)
        return Q

    P = frame(p1, p2)
    Q = frame(q1, q2)
    W = Q @ P.T
    if np.linalg.det(W) < 0:
        # flip one free frame vector to restore orientation
        Q[:, -1] = -Q[:, -1]
        W = Q @ P.T
    # antipodal pairs leave the second frame vector free; W p2 = q2 can
    # still fail only in that degenerate case, where any choice is valid
    return W


def probe_points(dim: int, n: int = 20, seed: int = 12345) -> np.ndarray:
    """Fixed pseudo-random interior probe set for action-based equality."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim))
    r = rng.uniform(0.1, 0.85, size=n)
    x = x / np.linalg.norm(x, axis=1, keepdims=True) * r[:, None]
    return x


def same_action(G: Isometry, H: Isometry, tol: float = 1e-10) -> bool:
    pts = probe_points(G.dim)
    return bool(np.max(np.linalg.norm(apply_array(G, pts) -
                                      apply_array(H, pts), axis=1)) < tol)


def stabilizer_net(x: ModelPoint, n: int, seed: int = 0) -> list[Isometry]:
    """Isometries fixing x whose sweep of any boundary point forms a
    chordal 1/n-net of the sphere.

    M_i = T_x^{-1} o O_i o T_x with {O_i} orthogonal; the net size is grown
    until a brute-force coverage check passes (the conjugation's distortion
    constant is not known a priori).
    """
    xb = to_model(x, BALL)
    dim = xb.dim
    T = Isometry(dim, (BallTransvection(xb.coords),))
    Tinv = invert(T)

    def conj(O: OrthogonalMap) -> Isometry:
        return compose(Tinv, compose(Isometry(dim, (O,)), T))

    if dim == 2:
        k = max(4, int(math.ceil(2.0 * math.pi * n)))
        while True:
            angles = np.arange(k) * (2.0 * math.pi / k)
            mats = [np.array([[math.cos(a), -math.sin(a)],
                              [math.sin(a), math.cos(a)]]) for a in angles]
            net = [conj(OrthogonalMap(m)) for m in mats]
            if _net_covers(net, dim, n):
                return net
            k *= 2

    rng = np.random.default_rng(seed)
    k = max(8, 4 * n * n)
    while True:
        net = []
        for _ in range(k):
            A = rng.normal(size=(dim, dim))
            Q, R = np.linalg.qr(A)
            Q = Q @ np.diag(np.sign(np.diag(R)))
            if np.linalg.det(Q) < 0:
                Q[:, 0] = -Q[:, 0]
            net.append(conj(OrthogonalMap(Q)))
        if _net_covers(net, dim, n):
            return net
        k *= 2


def _net_covers(net: list[Isometry], dim: int, n: int) -> bool:
    """Check: for each probe boundary y and each grid target g, some net
    element moves y within chordal 1/n of g."""
    if dim == 2:
        m = max(16, 4 * n)
        ang = np.arange(m) * (2.0 * math.pi / m)
        ys = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        rng = np.random.default_rng(99)
        ys = rng.normal(size=(24, dim))
        ys /= np.linalg.norm(ys, axis=1, keepdims=True)
    targets = ys
    imgs_all = np.stack([apply_array(M, ys) for M in net])  # (k, m, dim)
    imgs_all /= np.linalg.norm(imgs_all, axis=2, keepdims=True)
    for iy in range(ys.shape[0]):
        imgs = imgs_all[:, iy, :]
        dmat = np.linalg.norm(targets[:, None, :] - imgs[None, :, :], axis=2)
        if np.max(np.min(dmat, axis=1)) > 1.0 / n:
            return False
    return True


# ---------------------------------------------------------------------------
# JSON serialization

def _prim_to_json(p: Primitive) -> dict:
    if isinstance(p, HyperplaneReflection):
        return {"kind": "reflection", "u": p.u.tolist()}
    if isinstance(p, SphereInversion):
        return {"kind": "inversion", "center": p.center.tolist(),
                "radius": p.radius}
    if isinstance(p, OrthogonalMap):
        return {"kind": "orthogonal", "matrix": p.matrix.tolist()}
    if isinstance(p, BallTransvection):
        return {"kind": "transvection", "a": p.a.tolist()}
    if isinstance(p, Matrix2):
        return {"kind": "matrix2",
                "entries": [[v.real, v.imag] for v in (p.a, p.b, p.c, p.d)]}
    raise TypeError(type(p))


def _prim_from_json(d: dict) -> Primitive:
    k = d["kind"]
    if k == "reflection":
        return HyperplaneReflection(np.array(d["u"]))
    if k == "inversion":
        return SphereInversion(np.array(d["center"]), d["radius"])
    if k == "orthogonal":
        return OrthogonalMap(np.array(d["matrix"]))
    if k == "transvection":
        return BallTransvection(np.array(d["a"]))
    if k == "matrix2":
        a, b, c, e = (complex(re, im) for re, im in d["entries"])
        return Matrix2(a, b, c, e)
    raise ValueError(k)


def isometry_to_json(G: Isometry) -> str:
    return json.dumps({"dim": G.dim,
                       "word": [_prim_to_json(p) for p in G.word]})


def isometry_from_json(s: str) -> Isometry:
    d = json.loads(s)
    return Isometry(d["dim"], tuple(_prim_from_json(p) for p in d["word"]))
