"""Sets of divergence of Mobius sequences: general convergence of the orbit
of j, pointwise boundary classification, the conical-limit crosscheck, and
the two constructive generators (radial data and dense divergence).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import geometry as geo, limits, mobius
from .geometry import BALL, IdealPoint, ModelPoint
from .limits import (ACCEPTED, REJECTED, UNDECIDED, PointSequence,
                     _samples_to_units, from_array)

CONVERGENT = "Convergent"
DIVERGENT = "Divergent"


class NotGenerallyConvergent(ValueError):
    pass


@dataclass
class MobiusSequence:
    gen: Callable[[int], mobius.Isometry]
    dim: int
    n_max: int

    def __post_init__(self):
        self._cache: list[mobius.Isometry] = []

    def term(self, n: int) -> mobius.Isometry:
        while len(self._cache) < n:
            self._cache.append(self.gen(len(self._cache) + 1))
        return self._cache[n - 1]

    def orbit(self, N: int) -> np.ndarray:
        """(N, dim) ball coordinates of G_n(j)."""
        origin = np.zeros((1, self.dim))
        return np.vstack([mobius.apply_array(self.term(n), origin)
                          for n in range(1, N + 1)])

    def inverse_orbit(self, N: int) -> np.ndarray:
        """(N, dim) ball coordinates of G_n^{-1}(j)."""
        origin = np.zeros((1, self.dim))
        return np.vstack([mobius.apply_array(mobius.invert(self.term(n)),
                                             origin)
                          for n in range(1, N + 1)])

    def boundary_images(self, units: np.ndarray, N: int) -> np.ndarray:
        """(N, S, dim) images G_n(x) of the boundary samples (unit rows)."""
        out = np.empty((N, units.shape[0], self.dim))
        for n in range(1, N + 1):
            img = mobius.apply_array(self.term(n), units)
            out[n - 1] = img / np.linalg.norm(img, axis=1, keepdims=True)
        return out


def from_isometries(isos: Sequence[mobius.Isometry]) -> MobiusSequence:
    isos = list(isos)
    return MobiusSequence(lambda n: isos[n - 1], isos[0].dim, len(isos))


@dataclass
class PointClassification:
    point: np.ndarray
    status: str
    limit: Optional[np.ndarray]
    tail_diameter: float


def _diag_diameter(pts: np.ndarray) -> float:
    """Bounding-box diagonal: the diameter measure used throughout (it
    bounds the true diameter from above, within sqrt(dim))."""
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


@dataclass
class GeneralConvergence:
    status: str  # "Converges" | "No" | "Undecided"
    limit: Optional[np.ndarray]
    tail_diameter: float


def general_convergence_test(seq: MobiusSequence, N: int,
                             tol: float = 1e-3) -> GeneralConvergence:
    """Converges when the final quarter of the orbit G_n(j) has chordal
    diameter < tol and sits within tol of the sphere; the limit is the
    final-quarter centroid projected to the sphere."""
    orb = seq.orbit(N)
    lo = int(math.ceil(3 * N / 4)) - 1
    tail = orb[lo:]
    gap = 1.0 - np.linalg.norm(tail, axis=1)
    diam = _diag_diameter(tail)
    if np.all(gap < tol) and diam < tol:
        c = tail.mean(axis=0)
        return GeneralConvergence("Converges", c / np.linalg.norm(c), diam)
    if np.min(gap) > 10.0 * tol or diam > 10.0 * tol:
        return GeneralConvergence("No", None, diam)
    return GeneralConvergence("Undecided", None, diam)


def classify_boundary(seq: MobiusSequence, samples, N: int,
                      tol_lo: float = 1e-6, tol_hi: float = 1e-2,
                      images: Optional[np.ndarray] = None)\
        -> list[PointClassification]:
    """Per-sample trajectory classification.

    Convergent: final-quarter diameter < tol_lo.  Divergent: every
    sub-window of length ceil(N/10) in the final half has diameter >
    tol_hi (persistent oscillation, not a single spike).  Else Undecided.
    """
    if tol_lo >= tol_hi:
        raise ValueError("tol_lo must be < tol_hi")
    units = _samples_to_units(samples)
    if images is None:
        images = seq.boundary_images(units, N)
    qlo = int(math.ceil(3 * N / 4)) - 1
    half = images[N // 2:]  # final half
    L = max(2, int(math.ceil(N / 10)))

    # sliding-window bounding boxes over the final half
    from numpy.lib.stride_tricks import sliding_window_view
    if half.shape[0] >= L:
        win = sliding_window_view(half, L, axis=0)  # (W, S, dim, L)
        wdiag = np.linalg.norm(win.max(axis=-1) - win.min(axis=-1), axis=-1)
        min_window_diag = wdiag.min(axis=0)  # (S,)
    else:
        min_window_diag = np.full(units.shape[0], np.inf)

    tail = images[qlo:]
    tdiag = np.linalg.norm(tail.max(axis=0) - tail.min(axis=0), axis=-1)

    out = []
    for j in range(units.shape[0]):
        if tdiag[j] < tol_lo:
            lim = tail[:, j, :].mean(axis=0)
            lim = lim / np.linalg.norm(lim)
            out.append(PointClassification(units[j], CONVERGENT, lim,
                                           float(tdiag[j])))
        elif min_window_diag[j] > tol_hi:
            out.append(PointClassification(units[j], DIVERGENT, None,
                                           float(tdiag[j])))
        else:
            out.append(PointClassification(units[j], UNDECIDED, None,
                                           float(tdiag[j])))
    return out


@dataclass
class AgreementReport:
    n_samples: int
    n_decided: int
    n_agree: int
    statuses: list  # (classification status, conical status) per sample
    limit: np.ndarray

    @property
    def agreement(self) -> float:
        return 1.0 if self.n_decided == 0 else self.n_agree / self.n_decided


def aebischer_crosscheck(seq: MobiusSequence, samples, N: int,
                         alphas: Sequence[float] = (1.0, 2.0, 3.0),
                         K: int = 5, R: Optional[float] = None,
                         tol_lo: float = 1e-6, tol_hi: float = 1e-2,
                         gc_tol: float = 1e-3) -> AgreementReport:
    """Compare the set of divergence with the conical limit set of the
    inverse orbit G_n^{-1}(j): Divergent <-> Accepted, Convergent <->
    Rejected; Undecided on either side is excluded from the count."""
    gc = general_convergence_test(seq, N, tol=gc_tol)
    if gc.status != "Converges":
        raise NotGenerallyConvergent(gc.status)
    cls = classify_boundary(seq, samples, N, tol_lo, tol_hi)
    inv = from_array(seq.inverse_orbit(N), BALL)
    ver = limits.conical_estimate(inv, samples, alphas, K=K, R=R, N=N)
    n_dec = n_agree = 0
    statuses = []
    for c, v in zip(cls, ver):
        statuses.append((c.status, v.status))
        if c.status == UNDECIDED or v.status == UNDECIDED:
            continue
        n_dec += 1
        if (c.status == DIVERGENT) == (v.status == ACCEPTED):
            n_agree += 1
    return AgreementReport(len(cls), n_dec, n_agree, statuses, gc.limit)


def _rotation_taking(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Special-orthogonal matrix sending unit a to unit b."""
    d = a.size
    if d == 2:
        th = math.atan2(b[1], b[0]) - math.atan2(a[1], a[0])
        cs, sn = math.cos(th), math.sin(th)
        return np.array([[cs, -sn], [sn, cs]])
    c = float(a @ b)
    if c > 1.0 - 1e-12:
        return np.eye(d)
    if c < -1.0 + 1e-12:
        # rotate by pi in a plane containing a
        basis = np.eye(d)
        idx = int(np.argmin(np.abs(a)))
        u2 = basis[idx] - (basis[idx] @ a) * a
        u2 /= np.linalg.norm(u2)
        return np.eye(d) - 2.0 * (np.outer(a, a) + np.outer(u2, u2))
    u1 = a
    u2 = b - c * a
    u2 /= np.linalg.norm(u2)
    s = math.sqrt(max(0.0, 1.0 - c * c))
    R = np.eye(d) + (c - 1.0) * (np.outer(u1, u1) + np.outer(u2, u2)) \
        + s * (np.outer(u2, u1) - np.outer(u1, u2))
    return R


def from_conical_data(z_seq: PointSequence) -> MobiusSequence:
    """G_n with G_n^{-1}(j) = z_n and G_n(j) = |z_n| e0.

    G_n = R_n o T_{z_n}: the transvection sends z_n to j (so the inverse
    orbit is z_n) and maps j to -z_n; the rotation R_n carries -z_n/|z_n|
    to e0.  Orientation +1.
    """
    dim = z_seq.dim
    coords = z_seq.ball_coords(z_seq.n_max)

    def gen(n: int) -> mobius.Isometry:
        z = coords[n - 1]
        r = np.linalg.norm(z)
        if r < 1e-14:
            return mobius.identity(dim)
        e0 = np.zeros(dim)
        e0[0] = 1.0
        R = _rotation_taking(-z / r, e0)
        return mobius.Isometry(dim, (mobius.OrthogonalMap(R),
                                     mobius.BallTransvection(z.copy())))

    return MobiusSequence(gen, dim, z_seq.n_max)


def radial_dataset(angles: Sequence[float], n_max: int, q: float = 0.98,
                   floor: float = 1e-10, jitter: float = 0.0)\
        -> PointSequence:
    """Ball-model (dim 2) sequence cycling through the given boundary
    angles with radii 1 - max(q^n, floor): conical limit set = the targets.

    `jitter` adds an alternating angular offset of jitter * (1 - r_n),
    which stays within bounded distance of the rays but breaks pointwise
    convergence of the derived Mobius sequence at the targets.
    """
    angles = list(angles)

    def fn(n: int) -> np.ndarray:
        gap = max(q ** n, floor)
        r = 1.0 - gap
        a = angles[(n - 1) % len(angles)]
        if jitter:
            a = a + (1 if n % 2 == 0 else -1) * jitter * gap
        return np.array([r * math.cos(a), r * math.sin(a)])

    return PointSequence(fn, BALL, 2, n_max)


def builtin_conical_dataset(name: str, n_max: int = 2000) -> PointSequence:
    """Named conical datasets: 'singleton', 'circle12', 'cantor5'."""
    if name == "singleton":
        return radial_dataset([2.0 * math.pi * 37 / 360], n_max, jitter=0.5)
    if name == "circle12":
        return radial_dataset([2.0 * math.pi * k / 12 for k in range(12)],
                              n_max, jitter=0.5)
    if name == "cantor5":
        from . import countable
        oracle = countable.build_example_set("CantorAccessible", 5)
        pts = sorted(float(p[0]) for p in oracle.enumerate(5))
        angles = [math.pi / 3 + x for x in pts]
        return radial_dataset(angles, n_max, jitter=0.5)
    raise ValueError(f"unknown dataset {name!r}")


def dense_divergence_generator(x_seq: PointSequence,
                               n_blocks: Optional[int] = None,
                               seed: int = 0) -> MobiusSequence:
    """Generally convergent sequence whose set of divergence is the whole
    sphere: blocks M_{n,i} o H_n with H_n(j) = x_n and M_{n,i} a
    stabilizer net of x_n at resolution 1/n.  For a fixed n the block's
    orbit of any boundary point sweeps a 1/n-net, so no boundary point's
    image trajectory can settle."""
    dim = x_seq.dim
    coords = x_seq.ball_coords(x_seq.n_max)
    n_blocks = n_blocks or x_seq.n_max
    terms: list[mobius.Isometry] = []
    for n in range(1, n_blocks + 1):
        x = ModelPoint(BALL, coords[n - 1])
        H = mobius.Isometry(dim, (mobius.BallTransvection(-coords[n - 1]),))
        net = mobius.stabilizer_net(x, n, seed=seed)
        for M in net:
            terms.append(mobius.compose(M, H))
    return from_isometries(terms)
