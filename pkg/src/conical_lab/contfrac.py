"""Continued fractions as Mobius sequences.

Classical continued fractions K(a_n | b_n) use the 2x2 matrix path
(t_n <-> [[0, a_n], [1, b_n]]); the ball-model constructions build chained
isometry sequences T_n(e) = T_{n-1}(-e) via the orthogonal-map lemma.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import geometry as geo, limits, mobius
from .geometry import BALL, IdealPoint, ModelPoint
from .limits import PointSequence, from_array
from .mobius import Isometry, Matrix2, PreconditionViolated, \
    SideConditionViolated


class DegenerateCoefficient(ValueError):
    """a_n = 0 is not a Mobius map."""


# largest distance-to-axis at which an e-tangent horocycle padding point is
# still representable away from the unit sphere in doubles
PAD_RHO_CAP = 14.0


@dataclass
class CoefficientCF:
    """Classical form: coefficients(n) -> (a_n, b_n), complex, a_n != 0."""

    coefficients: Callable[[int], tuple[complex, complex]]
    n_max: int

    def pair(self, n: int) -> tuple[complex, complex]:
        a, b = self.coefficients(n)
        if a == 0:
            raise DegenerateCoefficient(f"a_{n} = 0")
        return complex(a), complex(b)


@dataclass
class BallCF:
    """Ball-model form: chained isometries T_1, T_2, ... with
    T_n(e) = T_{n-1}(-e); conical data and construction diagnostics kept."""

    terms: list  # list[Isometry], terms[k] = T_{k+1}
    dim: int
    inverse_orbit: np.ndarray  # ball coords of T_n^{-1}(j)
    thetas: np.ndarray
    min_rho: float  # observed min of rho(z_n, gamma): finite-truncation caveat
    n_padding: int

    @property
    def n_max(self) -> int:
        return len(self.terms)


def preset(name: str, n_max: int = 1000) -> CoefficientCF:
    if name == "golden":
        return CoefficientCF(lambda n: (1.0, 1.0), n_max)
    if name == "oscillating":
        return CoefficientCF(lambda n: (1.0, 0.0), n_max)
    raise ValueError(f"unknown preset {name!r}")


def from_pairs(pairs: Sequence[tuple[complex, complex]]) -> CoefficientCF:
    pairs = [(complex(a), complex(b)) for a, b in pairs]
    return CoefficientCF(lambda n: pairs[n - 1], len(pairs))


def _t_boundary(a: complex, b: complex, z):
    """t_n(z) = a/(b+z) on C_inf."""
    if z == math.inf or (isinstance(z, complex) and cmath.isinf(z)):
        return 0.0 + 0.0j
    w = b + z
    if w == 0:
        return math.inf
    return a / w


def cf_matrix(cf: CoefficientCF, n: int) -> Matrix2:
    """Normalized partial product T_n = t_1 ... t_n."""
    out = Matrix2(1, 0, 0, 1)
    for k in range(1, n + 1):
        a, b = cf.pair(k)
        out = out.matmul(Matrix2(0, a, 1, b))
    return out


def cf_partial(cf: CoefficientCF, n: int, z) -> Union[complex, float]:
    """T_n(z) = t_1(...t_n(z)...), evaluated by nested application from the
    inside out; t_n(inf) = 0 exactly, so T_n(inf) runs the same float
    operations as T_{n-1}(0) and the chaining identity is bitwise exact."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = z
    for k in range(n, 0, -1):
        a, b = cf.pair(k)
        w = _t_boundary(a, b, w)
    return w


def trajectory(cf: CoefficientCF, N: int) -> list:
    """[T_1(0), ..., T_N(0)] via one streaming matrix product."""
    out = []
    P = Matrix2(1, 0, 0, 1)
    for n in range(1, N + 1):
        a, b = cf.pair(n)
        out.append(P.boundary(_t_boundary(a, b, 0.0)))
        P = P.matmul(Matrix2(0, a, 1, b))
    return out


def _chordal_c(z, w) -> float:
    """Chordal metric on C_inf (Riemann sphere, diameter 2)."""
    zi = z == math.inf or (isinstance(z, complex) and cmath.isinf(z))
    wi = w == math.inf or (isinstance(w, complex) and cmath.isinf(w))
    if zi and wi:
        return 0.0
    if zi or wi:
        f = w if zi else z
        return 2.0 / math.sqrt(1.0 + abs(f) ** 2)
    return 2.0 * abs(z - w) / math.sqrt((1.0 + abs(z) ** 2) *
                                        (1.0 + abs(w) ** 2))


@dataclass
class ConvergenceVerdict:
    status: str  # "Converges" | "Diverges" | "Undecided"
    value: Optional[complex]
    tail_diameter: float


def classical_convergence(cf, N: int, tol_lo: float = 1e-9,
                          tol_hi: float = 1e-2) -> ConvergenceVerdict:
    """Tail-diameter verdict on (T_n(0)) (coefficient form) or (T_n(e))
    (ball form), chordal metric."""
    if isinstance(cf, BallCF):
        vals = ball_trajectory(cf, N)
        lo = int(math.ceil(3 * N / 4)) - 1
        tail = vals[lo:]
        diam = float(np.linalg.norm(tail.max(axis=0) - tail.min(axis=0)))
        if diam < tol_lo:
            c = tail.mean(axis=0)
            return ConvergenceVerdict("Converges", c / np.linalg.norm(c),
                                      diam)
        return ConvergenceVerdict(
            "Diverges" if _persistent(vals, N, tol_hi) else "Undecided",
            None, diam)
    vals = trajectory(cf, N)
    lo = int(math.ceil(3 * N / 4)) - 1
    tail = vals[lo:]
    diam = 0.0
    for i in range(len(tail)):
        for j in range(i + 1, len(tail)):
            diam = max(diam, _chordal_c(tail[i], tail[j]))
    if diam < tol_lo:
        return ConvergenceVerdict("Converges", tail[-1], diam)
    # persistent oscillation over sub-windows of the final half
    half = vals[N // 2:]
    L = max(2, int(math.ceil(N / 10)))
    divergent = True
    for s in range(0, len(half) - L + 1):
        win = half[s:s + L]
        wd = max(_chordal_c(win[0], w) for w in win)
        wd = max(wd, max(_chordal_c(win[-1], w) for w in win))
        if wd <= tol_hi:
            divergent = False
            break
    return ConvergenceVerdict("Diverges" if divergent else "Undecided",
                              None, diam)


def _persistent(vals: np.ndarray, N: int, tol_hi: float) -> bool:
    half = vals[N // 2:]
    L = max(2, int(math.ceil(N / 10)))
    if half.shape[0] < L:
        return False
    from numpy.lib.stride_tricks import sliding_window_view
    win = sliding_window_view(half, L, axis=0)
    wdiag = np.linalg.norm(win.max(axis=-1) - win.min(axis=-1), axis=-1)
    return bool(wdiag.min() > tol_hi)


def ball_trajectory(cf: BallCF, N: int) -> np.ndarray:
    """(N, dim) unit vectors T_n(e)."""
    e = np.zeros(cf.dim)
    e[0] = 1.0
    out = np.empty((N, cf.dim))
    for n in range(N):
        img = mobius.apply_array(cf.terms[n], e[None, :])[0]
        out[n] = img / np.linalg.norm(img)
    return out


def cf_mobius_sequence(cf, N: int):
    """The associated Mobius sequence (for the divergence module)."""
    from . import divergence
    if isinstance(cf, BallCF):
        return divergence.from_isometries(cf.terms[:N])
    real = all(abs(complex(a).imag) < 1e-300 and abs(complex(b).imag) < 1e-300
               for a, b in (cf.pair(k) for k in range(1, min(N, 50) + 1)))
    dim = 2 if real else 3
    mats = []
    P = Matrix2(1, 0, 0, 1)
    for n in range(1, N + 1):
        a, b = cf.pair(n)
        P = P.matmul(Matrix2(0, a, 1, b))
        mats.append(Isometry(dim, (P,)))
    return divergence.from_isometries(mats)


# ---------------------------------------------------------------------------
# ball-model constructions

def _rho_to_axis(pts: np.ndarray) -> np.ndarray:
    """Distance from ball points to the geodesic gamma from -e to e (the
    first-axis diameter): sinh d = sinh rho0 * sin psi."""
    pts = np.atleast_2d(pts)
    r = np.linalg.norm(pts, axis=-1)
    sinh0 = 2.0 * r / np.maximum(1.0 - r * r, 1e-300)
    perp = np.linalg.norm(pts[:, 1:], axis=-1)
    safe_r = np.where(r > 0, r, 1.0)
    return np.arcsinh(sinh0 * perp / safe_r)


def _horocycle_point(side: float, rho: float) -> np.ndarray:
    """Dim-2 point on the horocycle through j tangent at e, on the given
    side of gamma (sign of second coordinate), at distance rho from gamma."""
    lo, hi = 1e-9, math.pi - 1e-9

    def f(phi):
        p = np.array([0.5 + 0.5 * math.cos(phi), 0.5 * math.sin(phi)])
        return float(_rho_to_axis(p[None, :])[0]) - rho

    # d is 0 at phi = pi (the origin) and grows toward the tangent point
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    phi = 0.5 * (lo + hi)
    p = np.array([0.5 + 0.5 * math.cos(phi), 0.5 * math.sin(phi)])
    if side < 0:
        p[1] = -p[1]
    return p


def construct_cfconv(z_seq: PointSequence, N: Optional[int] = None,
                     bounded_rho_threshold: float = 1.0) -> BallCF:
    """Chained classically convergent continued fraction sequence whose
    conical data is the given escaping sequence.

    The input is reordered so rho(z_n, gamma) increases; in dim 2 terms
    must alternate sides of gamma, and horocycle padding points (tangent at
    e) are inserted where the data does not alternate.  T_n is built so
    T_n(e) sits at angle theta_n, T_n(-e) at angle theta_{n+1} and
    T_n(z_{n+1}) = j, with the increments
    (theta_{n+1} - theta_n)/2 = +-asin(1/cosh rho(z_{n+1}, gamma)).
    """
    N = N or z_seq.n_max
    dim = z_seq.dim
    pts = z_seq.ball_coords(N).copy()
    rho = _rho_to_axis(pts)

    # e or -e in the conical data shows up as a bounded rho subsequence
    qlo = int(math.ceil(3 * N / 4)) - 1
    n_low_tail = int(np.count_nonzero(rho[qlo:] < bounded_rho_threshold))
    if n_low_tail > 5:
        raise PreconditionViolated(
            f"rho(z_n, gamma) bounded along a subsequence "
            f"({n_low_tail} low tail terms): e or -e in the conical data")
    min_rho = float(rho.min())

    order = np.argsort(rho, kind="stable")
    pts = pts[order]
    rho = rho[order]

    n_padding = 0
    if dim == 2:
        # enforce side alternation, padding on the e-horocycle when needed
        out_pts, out_rho = [], []
        prev_side = 0.0
        for p, r in zip(pts, rho):
            side = math.copysign(1.0, p[1]) if p[1] != 0 else 1.0
            if prev_side != 0.0 and side == prev_side:
                pad_rho = max(r - 1e-6, (out_rho[-1] + r) / 2)
                # horocycle points approach e quadratically (1 - |p| is
                # about 2/sinh^2 rho), so distances beyond ~14 are not
                # representable in doubles; clamping only slows convergence
                pad_rho = min(pad_rho, PAD_RHO_CAP)
                pad = _horocycle_point(-side, pad_rho)
                out_pts.append(pad)
                out_rho.append(pad_rho)
                n_padding += 1
            out_pts.append(p)
            out_rho.append(r)
            prev_side = side
        pts = np.array(out_pts)
        rho = np.array(out_rho)

    K = pts.shape[0]
    # theta recursion; in dim 2 the increment sign must match the side of
    # gamma that z_k lies on (the lemma's side condition), which alternates
    thetas = np.zeros(K + 1)
    incr = np.arcsin(1.0 / np.cosh(rho))
    for k in range(1, K + 1):
        if dim == 2:
            s = -math.copysign(1.0, pts[k - 1][1]) if pts[k - 1][1] != 0 \
                else (-1.0) ** k
        else:
            s = (-1.0) ** k
        thetas[k] = thetas[k - 1] + 2.0 * s * incr[k - 1]

    def angle_point(th: float) -> IdealPoint:
        c = np.zeros(dim)
        c[0] = math.cos(th)
        c[1] = math.sin(th)
        return IdealPoint(BALL, c)

    terms = []
    inv_orbit = []
    for n in range(1, K):
        zc = ModelPoint(BALL, pts[n])
        x = angle_point(thetas[n])
        y = angle_point(thetas[n + 1])
        # the increment sign -sign(z_1) makes the dim-2 side condition
        # hold: z left of gamma iff 0 left of the geodesic from y to x
        T = mobius.lemma_orthogonal_map(zc, x, y, tol=1e-6)
        terms.append(T)
        inv_orbit.append(pts[n])

    return BallCF(terms, dim, np.array(inv_orbit), thetas, min_rho,
                  n_padding)


def construct_prescribed_limit_set(C_samples: Sequence[IdealPoint],
                                   n_terms: int = 5000,
                                   chord_tol: float = 1e-9) -> BallCF:
    """Classically convergent CF sequence whose limit set (accumulation of
    T_n^{-1}(j)) is the sampled target set: z_n = r_n zeta_n with zeta_n
    cycling the targets and r_n chosen by bisection so
    cosh rho(z_n, gamma) = n + 2 (strictly increasing, unbounded)."""
    units = [geo.to_model(s, BALL).coords for s in C_samples]
    if not units:
        raise PreconditionViolated("empty target set")
    dim = units[0].size
    e = np.zeros(dim)
    e[0] = 1.0
    for u in units:
        if np.linalg.norm(u - e) < chord_tol or \
                np.linalg.norm(u + e) < chord_tol:
            raise PreconditionViolated("target set contains e or -e")

    if dim == 2:
        # cycle the targets so sides of gamma alternate where possible
        ups = [u for u in units if u[1] > 0]
        downs = [u for u in units if u[1] <= 0]
        if ups and downs:
            m = max(len(ups), len(downs))
            cycle = []
            for i in range(m):
                cycle.append(ups[i % len(ups)])
                cycle.append(downs[i % len(downs)])
        else:
            cycle = units
    else:
        cycle = units

    def radius_for(zeta: np.ndarray, target_cosh: float) -> float:
        lo, hi = 0.0, 1.0 - 1e-11
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            c = math.cosh(float(_rho_to_axis((mid * zeta)[None, :])[0]))
            if c < target_cosh:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    zs = []
    for n in range(1, n_terms + 1):
        zeta = cycle[(n - 1) % len(cycle)]
        r = radius_for(zeta, n + 2.0)
        zs.append(r * zeta)
    return construct_cfconv(from_array(np.array(zs), BALL))
