"""Dunes, finite-multiplicity covers, and the sequence constructions that
realize prescribed limit and conical limit sets.

The dune of an open set U is the half-space region below the squared
distance to the complement, D(U) = {(t, v): t < 1 and t < d(v, C(U))^2}.
Conically convergent sequences enter the dune of any open neighbourhood of
their limit and leave the dune of any open set excluding it, which makes
dune membership the localization tool for conical limit sets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import limits
from .geometry import HALFSPACE


class PreconditionViolated(ValueError):
    """A sampled hypothesis of a construction failed."""


class ScaleTooFine(ValueError):
    """A cover net would exceed the enumeration budget."""


@dataclass
class OpenSetRep:
    """Open subset of R^m: a union of open balls, the complement of a
    finite point set, all of R^m, or a finite intersection of these.

    `complement_distance(v)` is d(v, R^m minus U), exact for disjoint
    balls, 1-D unions, complements, and intersections; for overlapping
    balls in dimension >= 2 the per-ball depth is a sound lower bound
    (the reported dune is contained in the true one).
    """

    kind: str  # "all" | "balls" | "complement" | "intersection"
    dim: int
    centers: Optional[np.ndarray] = None  # (k, m) for balls/complement
    radii: Optional[np.ndarray] = None    # (k,) for balls
    parts: Sequence["OpenSetRep"] = field(default_factory=tuple)

    def complement_distance(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.kind == "all":
            return np.full(v.shape[0], np.inf)
        if self.kind == "complement":
            gaps = np.linalg.norm(
                v[:, None, :] - self.centers[None, :, :], axis=-1)
            return gaps.min(axis=1)
        if self.kind == "balls":
            depth = self.radii[None, :] - np.linalg.norm(
                v[:, None, :] - self.centers[None, :, :], axis=-1)
            return np.maximum(depth.max(axis=1), 0.0)
        return np.min([p.complement_distance(v) for p in self.parts],
                      axis=0)

    def sites(self) -> np.ndarray:
        """Boundary features: every complement point nearest to an interior
        point is one of these (used to enumerate shells without gridding
        the whole box)."""
        rows = []
        if self.kind == "complement":
            rows.append(self.centers)
        elif self.kind == "balls":
            if self.dim == 1:
                rows.append(self.centers - self.radii[:, None])
                rows.append(self.centers + self.radii[:, None])
            else:
                rows.append(self.centers)  # shells built around centers
        for p in self.parts:
            rows.append(p.sites())
        if not rows:
            return np.empty((0, self.dim))
        return np.vstack(rows)

    def bounds(self) -> Optional[np.ndarray]:
        """(2, m) bounding box of the defining data, or None for R^m."""
        boxes = []
        if self.kind == "balls":
            boxes.append(np.stack([
                (self.centers - self.radii[:, None]).min(axis=0),
                (self.centers + self.radii[:, None]).max(axis=0)]))
        if self.kind == "complement":
            boxes.append(np.stack([self.centers.min(axis=0),
                                   self.centers.max(axis=0)]))
        for p in self.parts:
            b = p.bounds()
            if b is not None:
                boxes.append(b)
        if not boxes:
            return None
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        return np.stack([lo, hi])


def open_ball(center, radius: float) -> OpenSetRep:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    return OpenSetRep("balls", c.size, c[None, :], np.array([radius]))


def open_balls(centers, radii) -> OpenSetRep:
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    return OpenSetRep("balls", c.shape[1], c,
                      np.asarray(radii, dtype=float))


def open_complement(points) -> OpenSetRep:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return OpenSetRep("complement", p.shape[1], p)


def open_all(dim: int) -> OpenSetRep:
    return OpenSetRep("all", dim)


def intersect_opens(*parts: OpenSetRep) -> OpenSetRep:
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        raise ValueError("mixed dimensions in intersection")
    return OpenSetRep("intersection", dims.pop(), parts=tuple(parts))


@dataclass
class GDeltaRep:
    """Finite descending chain V_1 >= V_2 >= ... (truncated G-delta)."""

    levels: Sequence[OpenSetRep]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("empty chain")

    def check_descending(self, samples) -> bool:
        """Descending on samples: deeper levels only shrink the distance."""
        d = np.array([lv.complement_distance(samples)
                      for lv in self.levels])
        return bool(np.all(np.diff(d, axis=0) <= 1e-12))


def dune_contains(U: OpenSetRep, w) -> np.ndarray:
    """Membership of half-space points w = (t, v) in the dune of U."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    t = w[:, 0]
    d = U.complement_distance(w[:, 1:])
    inside = (t < 1.0) & (t < d * d)
    return inside if inside.size > 1 else inside[0]


def localize(E: limits.PointSequence, U: OpenSetRep,
             N: Optional[int] = None) -> limits.PointSequence:
    """Subsequence of E inside the dune of U (half-space model)."""
    N = N or E.n_max
    hs = E.halfspace_coords(N)
    keep = np.atleast_1d(dune_contains(U, hs))
    if not np.any(keep):
        raise limits.EmptyResult("no terms inside the dune")
    return limits.from_array(hs[keep], HALFSPACE)


@dataclass
class CoverBall:
    center: np.ndarray
    radius: float
    shell: int


def _shell_net(V: OpenSetRep, lo: float, hi: float, spacing: float,
               bounds: np.ndarray) -> np.ndarray:
    """Net points of {lo <= d(v, C(V)) <= hi} at the given grid spacing,
    anchored so grid points sit at exact shell distances from the sites
    (the lower band edge is honored exactly, which is what the radius over
    boundary-distance condition needs)."""
    m = V.dim
    if m == 1:
        # every interior point's nearest complement point is a site, so the
        # shell lives in [s - hi, s - lo] u [s + lo, s + hi] around sites
        k = int(math.floor((hi - lo) / spacing)) + 2
        offs = lo + spacing * np.arange(k)
        cand = []
        for s in np.unique(V.sites()[:, 0]):
            cand.append(s + offs)
            cand.append(s - offs)
        pts = np.unique(np.concatenate(cand))[:, None]
        pts = pts[(pts[:, 0] >= bounds[0, 0] - 1e-12)
                  & (pts[:, 0] <= bounds[1, 0] + 1e-12)]
    else:
        axes = []
        total = 1.0
        for i in range(m):
            k = int(math.floor((bounds[1, i] - bounds[0, i]) / spacing)) + 2
            total *= k
            axes.append(bounds[0, i] + spacing * np.arange(k))
        if total > 2e6:
            raise ScaleTooFine(
                f"shell net would need ~{int(total)} grid points")
        grid = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grid], axis=1)
    d = V.complement_distance(pts)
    return pts[(d >= lo - 1e-12) & (d <= hi + spacing * math.sqrt(m))]


def cover_balls(V: OpenSetRep, eps: float,
                bounds: Optional[np.ndarray] = None,
                max_shell: int = 6) -> list[CoverBall]:
    """Finite-multiplicity ball cover of V by shells of the complement
    distance: W_0 = {d >= eps}, W_n = {eps 2^-n <= d <= eps 2^(1-n)},
    each covered by balls of radius eps 2^(-2n) on a net of spacing
    radius/sqrt(m).  Ball radii over distance to the boundary shrink like
    2^-n, which is what bounds the multiplicity of the inflated balls.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if bounds is None:
        bounds = V.bounds()
    if bounds is None:
        raise ValueError("unbounded representation needs explicit bounds")
    out = []
    m = V.dim
    for n in range(max_shell + 1):
        rad = eps * 4.0 ** (-n)
        spacing = rad / math.sqrt(m)
        if n == 0:
            span = float(np.max(bounds[1] - bounds[0]))
            net = _shell_net(V, eps, eps + span, eps / math.sqrt(m), bounds)
            rad = eps
        else:
            lo, hi = eps * 2.0 ** (-n), eps * 2.0 ** (1 - n)
            net = _shell_net(V, lo, hi, spacing, bounds)
        for row in net:
            out.append(CoverBall(row.copy(), rad, n))
    return out


def cover_conditions(V: OpenSetRep, balls: Sequence[CoverBall],
                     eps: float, probes, alpha: float = 4.0) -> dict:
    """Machine check of the cover lemma at truncation: (i) probed points
    of V inside the shell range are covered; (ii) radii <= eps; (iii)
    multiplicity of the inflated balls over adjacent shell triples; (iv)
    radius over boundary distance <= 2^-n per shell."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    d = V.complement_distance(probes)
    n_max = max(b.shell for b in balls)
    in_range = d >= eps * 2.0 ** (-n_max)
    centers = np.array([b.center for b in balls])
    radii = np.array([b.radius for b in balls])
    shells = np.array([b.shell for b in balls])
    gap = np.linalg.norm(probes[:, None, :] - centers[None, :, :], axis=-1)
    covered = np.any(gap <= radii[None, :], axis=1)
    mult = np.zeros(probes.shape[0], dtype=int)
    for n in range(n_max + 1):
        tri = np.abs(shells - n) <= 1
        hits = gap[:, tri] <= alpha * radii[None, tri]
        mult = np.maximum(mult, hits.sum(axis=1))
    db = V.complement_distance(centers)
    ratio_ok = radii <= db * 2.0 ** (-shells) + 1e-12
    return {
        "uncovered": int(np.count_nonzero(in_range & ~covered)),
        "radius_bound_ok": bool(np.all(radii <= eps + 1e-12)),
        "max_multiplicity": int(mult.max()) if mult.size else 0,
        "ratio_ok": bool(np.all(ratio_ok)),
    }


def gdelta_to_sequence(G: GDeltaRep,
                       bounds: Optional[np.ndarray] = None,
                       max_shell: int = 8) -> limits.PointSequence:
    """Lift a ball cover of each level V_n (at eps = 1/n) to half-space
    points (t, v): points of the intersection keep covered witnesses at
    every level (so they are approached within arcsinh 1), while a point
    deleted at level n only receives balls whose radius over distance
    ratio has dropped to 2^-shell by then."""
    rows = []
    for n, V in enumerate(G.levels, start=1):
        for b in cover_balls(V, 1.0 / n, bounds=bounds,
                             max_shell=max_shell):
            rows.append(np.concatenate([[b.radius], b.center]))
    arr = np.array(rows)
    # decreasing height so the index tail of the sequence is its fine tail
    arr = arr[np.argsort(-arr[:, 0], kind="stable")]
    return limits.from_array(arr, HALFSPACE)


_CANTOR_DEPTH_CAP = 12


def _cantor_gaps(depth: int) -> list[tuple[float, float, int]]:
    """Removed middle-third intervals (a, b, level) up to the depth."""
    out = []
    intervals = [(0.0, 1.0)]
    for n in range(1, depth + 1):
        nxt = []
        for a, b in intervals:
            third = (b - a) / 3.0
            out.append((a + third, b - third, n))
            nxt.append((a, a + third))
            nxt.append((b - third, b))
        intervals = nxt
    return out


def cantor_graph_sequence(depth: int) -> limits.PointSequence:
    """Samples of the graph (d(x, C)/n, x) over the removed intervals of
    the middle-thirds set C, where n is the interval's level.

    Inside a level-n gap the height is the distance to the gap ends over
    n, so the graph descends to each accessible endpoint e along its own
    gap with sinh of the cone distance equal to n; non-accessible points
    of C and interior gap points get no such tail.  Samples approach both
    ends of every gap geometrically; the per-gap floor in x is scaled by
    n so the heights of all gaps bottom out at one common value.
    """
    if depth > _CANTOR_DEPTH_CAP:
        raise ValueError(f"depth capped at {_CANTOR_DEPTH_CAP}")
    base = 3.0 ** (-depth - 2)
    rows = []
    for a, b, n in _cantor_gaps(depth):
        half = (b - a) / 2.0
        floor = min(half, n * base)
        k = max(1, int(math.ceil(math.log2(half / floor))) + 1)
        deltas = half * 2.0 ** (-np.arange(k, dtype=float))
        xs = np.concatenate([[a + half], a + deltas, b - deltas])
        d = np.minimum(xs - a, b - xs)
        rows.append(np.stack([d / n, xs], axis=1))
    arr = np.vstack(rows)
    arr = arr[np.argsort(-arr[:, 0], kind="stable")]
    return limits.from_array(arr, HALFSPACE)


def codim1_lift(gamma_list: Sequence[limits.PointSequence])\
        -> limits.PointSequence:
    """Embed each H^m sequence Gamma_n into H^(m+1) rotated by pi/n about
    the old boundary: (x0, x) with height x0 becomes
    (x0 sin(pi/n), x, x0 cos(pi/n)), keeping only terms with
    x0 < 2 sin(pi/n) so every copy stays inside a unit cylinder of its
    plane.  Copies are interleaved."""
    if not gamma_list:
        raise ValueError("empty list")
    per = []
    for n, g in enumerate(gamma_list, start=1):
        hs = g.halfspace_coords(g.n_max)
        ang = math.pi / n
        keep = hs[:, 0] < 2.0 * math.sin(ang)
        hs = hs[keep]
        lifted = np.concatenate(
            [hs[:, :1] * math.sin(ang), hs[:, 1:],
             hs[:, :1] * math.cos(ang)], axis=1)
        per.append(lifted)
    width = max(p.shape[1] for p in per)
    if any(p.shape[1] != width for p in per):
        raise ValueError("mixed dimensions in gamma_list")
    rows = []
    for i in range(max(p.shape[0] for p in per)):
        for p in per:
            if i < p.shape[0]:
                rows.append(p[i])
    return limits.from_array(np.array(rows), HALFSPACE)


def dune_boundary_mesh(F_points, F_distance, bounds, spacing: float)\
        -> np.ndarray:
    """Half-space mesh of the boundary surface of the dune of the
    complement of F: grid points v with height min(1, d(v, F)^2) minus a
    hair, and a hair above the boundary for v inside F so every point of
    F accumulates limit points.  Single isolated heights per column, so
    the mesh has empty conical data."""
    lo, hi = np.atleast_1d(bounds[0]), np.atleast_1d(bounds[1])
    axes = [l + spacing * np.arange(int(math.floor((h - l) / spacing)) + 2)
            for l, h in zip(lo, hi)]
    grid = np.meshgrid(*axes, indexing="ij")
    vs = np.stack([g.ravel() for g in grid], axis=1)
    d = np.asarray(F_distance(vs), dtype=float)
    h = np.maximum(np.minimum(1.0, d * d) - 1e-9, 1e-9)
    return np.concatenate([h[:, None], vs], axis=1)


def prescribe_limit_and_conical(W: limits.PointSequence, F_points,
                                F_distance, spacing: float = 0.05,
                                tol: float = 0.05,
                                grid=None) -> limits.PointSequence:
    """Replace W by W minus the dune of the complement of F, plus a mesh
    of that dune's boundary: the limit set fills out F while the conical
    limit set stays that of W.

    F is a closed set given by samples and a vectorized distance oracle.
    The sampled hypothesis checked here is that the conical data of W
    stays inside F; interior density of the conical data in F is reported
    by the caller's estimates, not enforced.
    """
    F_points = np.atleast_2d(np.asarray(F_points, dtype=float))
    hs = W.halfspace_coords(W.n_max)
    if hs.shape[1] != 2:
        raise ValueError("boundary dimension 1 expected")
    lo = min(F_points[:, 0].min(), hs[:, 1].min()) - 0.5
    hi = max(F_points[:, 0].max(), hs[:, 1].max()) + 0.5
    if grid is None:
        grid = np.linspace(lo, hi, 241)
    verdicts = limits.vertical_conical_estimate(
        W, grid, alphas=[2.0, 4.0], K=2)
    acc = np.array([v.point[0] for v in verdicts
                    if v.status == limits.ACCEPTED])
    if acc.size:
        off = np.asarray(F_distance(acc[:, None]), dtype=float)
        if np.max(off) > tol:
            raise PreconditionViolated(
                f"conical data escapes F by {np.max(off):.3g}")
    d = np.asarray(F_distance(hs[:, 1:]), dtype=float)
    keep = ~((hs[:, 0] < 1.0) & (hs[:, 0] < d * d))
    mesh = dune_boundary_mesh(F_points, F_distance,
                              np.array([[lo], [hi]]), spacing)
    rows = np.vstack([hs[keep], mesh]) if np.any(keep) else mesh
    rows = rows[np.argsort(-rows[:, 0], kind="stable")]
    return limits.from_array(rows, HALFSPACE)


def sequence_to_json(seq: limits.PointSequence,
                     N: Optional[int] = None) -> str:
    """Replayable JSON point list (half-space rows, full precision)."""
    N = N or seq.n_max
    hs = seq.halfspace_coords(N)
    rows = [[float(f"{x:.17g}") for x in row] for row in hs]
    return json.dumps({"model": "halfspace", "points": rows})


def sequence_from_json(text: str) -> limits.PointSequence:
    data = json.loads(text)
    return limits.from_array(np.array(data["points"], dtype=float),
                             HALFSPACE)
