"""Batch experiment driver: config ingestion, reproducible runs, and
CSV/JSON report emission.

Subcommands
-----------
lemma-check     geometry identity suites, pass/fail JSON with max residuals
divergence-map  boundary classification + conical crosscheck over a grid, CSV
cf-analyze      continued-fraction convergence diagnostics, trajectory CSV
rank            gd-operator rank iteration on a named oracle, JSON report
construct       point-sequence builders, JSON point list + estimator CSV

Reports embed the fully resolved config; re-running with the same seed
produces byte-identical files.  Floats are written with %.17g so values
round-trip exactly.  Exit codes: 0 success, 1 computational error,
2 config error.  CONICAL_LAB_THREADS caps the worker pool used by
divergence-map (output order is fixed by sample index either way).
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import constructions, contfrac, countable, divergence
from . import geometry as geo
from . import limits


class ConfigInvalid(ValueError):
    """Schema violation in an experiment config (exit code 2)."""


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


ORACLES = {
    "selfsimA": "SelfSimA",
    "selfsimB": "SelfSimB",
    "cantor": "CantorAccessible",
    "rationals": "Rationals01",
}

DATASETS = ("singleton", "circle12", "cantor5")
BUILDERS = ("thm3", "cantor-graph", "gdelta", "prescribed-limit")
PRESETS = ("golden", "oscillating")


@dataclass
class ExperimentConfig:
    subcommand: str
    dim: int = 2
    model: str = geo.BALL
    N: int = 2000
    grid: int = 360
    trials: int = 10000
    depth: int = 5
    n_pairs: int = 64
    tol_lo: float = 1e-6
    tol_hi: float = 1e-2
    alphas: tuple = (1.0, 2.0, 3.0)
    K: int = 5
    R: Optional[float] = None
    seed: int = 0
    preset: Optional[str] = None
    pairs: Optional[str] = None
    oracle: Optional[str] = None
    dataset: Optional[str] = None
    builder: Optional[str] = None
    thetas: tuple = ()
    removed: tuple = ()
    out: str = "report"
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.N < 10:
            raise ConfigInvalid("N must be >= 10")
        if self.tol_lo <= 0 or self.tol_hi <= 0:
            raise ConfigInvalid("tolerances must be positive")
        if self.tol_lo >= self.tol_hi:
            raise ConfigInvalid("tol_lo must be < tol_hi")
        if any(a <= 0 for a in self.alphas):
            raise ConfigInvalid("alphas must be positive")
        if self.K < 1:
            raise ConfigInvalid("K must be >= 1")
        if self.dim < 2:
            raise ConfigInvalid("dim must be >= 2")
        if self.trials < 1:
            raise ConfigInvalid("trials must be >= 1")
        if self.oracle is not None and self.oracle not in ORACLES:
            raise ConfigInvalid(f"unknown oracle {self.oracle!r}")
        if self.dataset is not None and self.dataset not in DATASETS:
            raise ConfigInvalid(f"unknown dataset {self.dataset!r}")
        if self.builder is not None and self.builder not in BUILDERS:
            raise ConfigInvalid(f"unknown builder {self.builder!r}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigInvalid(f"unknown preset {self.preset!r}")

    def resolved(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "extra"}
        d["alphas"] = list(self.alphas)
        d["thetas"] = list(self.thetas)
        d["removed"] = list(self.removed)
        d.update(self.extra)
        return d


def thread_count() -> int:
    raw = os.environ.get("CONICAL_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigInvalid(f"CONICAL_LAB_THREADS={raw!r} is not an integer")
    if n < 1:
        raise ConfigInvalid("CONICAL_LAB_THREADS must be >= 1")
    return n


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _json_report(cfg: ExperimentConfig, payload: dict) -> str:
    return json.dumps({"config": cfg.resolved(), **payload},
                      sort_keys=True, indent=1) + "\n"


def _csv_header(cfg: ExperimentConfig, columns: list[str]) -> str:
    # embedded audit trail; consumers treat '#' lines as comments
    return ("# config " + json.dumps(cfg.resolved(), sort_keys=True) + "\n"
            + ",".join(columns) + "\n")


# ---------------------------------------------------------------- lemma-check

def _unit_rows(rng, n: int, dim: int) -> np.ndarray:
    u = rng.normal(size=(n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def run_lemma_check(cfg: ExperimentConfig) -> dict:
    rng = np.random.default_rng(cfg.seed)
    n, dim = cfg.trials, cfg.dim
    out = {}

    # |x - y| cosh rho(j, gamma(x, y)) = 2, chordal metric on the sphere
    x = _unit_rows(rng, n, dim)
    y = _unit_rows(rng, n, dim)
    close = np.linalg.norm(x - y, axis=1) < 1e-3
    y[close] = -y[close]
    r = 0.0
    origin = geo.ball_origin(dim)
    for i in range(n):
        g = geo.Geodesic(geo.IdealPoint(geo.BALL, x[i]),
                         geo.IdealPoint(geo.BALL, y[i]))
        rho = geo.dist_to_geodesic(origin, g)
        r = max(r, abs(float(np.linalg.norm(x[i] - y[i]))
                       * math.cosh(rho) - 2.0))
    out["key_geometry"] = r

    # cone half-angle: a half-space point on the Euclidean cone
    # |v| = t sinh(alpha) lies at distance alpha from the vertical axis
    # and at angle theta from it with cos(theta) cosh(alpha) = 1
    alphas = rng.uniform(0.1, 4.0, size=n)
    ts = np.exp(rng.uniform(math.log(0.1), math.log(10.0), size=n))
    dirs = _unit_rows(rng, n, dim - 1)
    axis = geo.Geodesic(geo.IdealPoint(geo.HALFSPACE, np.zeros(dim - 1)),
                        geo.IdealPoint.infinity(dim))
    r = rc = 0.0
    for i in range(n):
        v = math.sinh(alphas[i]) * ts[i] * dirs[i]
        p = geo.ModelPoint(geo.HALFSPACE, np.concatenate([[ts[i]], v]))
        d = geo.dist_to_geodesic(p, axis)
        r = max(r, abs(d - alphas[i]))
        theta = math.atan2(float(np.linalg.norm(v)), ts[i])
        rc = max(rc, abs(math.cos(theta) * math.cosh(alphas[i]) - 1.0))
    out["cone_angle"] = max(r, rc)

    # shadow from infinity: radius t sinh(alpha), and the vertical line at
    # a boundary point of the shadow is at distance exactly alpha
    alphas = rng.uniform(0.1, 4.0, size=n)
    ts = np.exp(rng.uniform(math.log(0.1), math.log(10.0), size=n))
    vs = rng.normal(size=(n, dim - 1))
    dirs = _unit_rows(rng, n, dim - 1)
    r = 0.0
    edges = np.empty((n, dim - 1))
    for i in range(n):
        w = geo.ModelPoint(geo.HALFSPACE, np.concatenate([[ts[i]], vs[i]]))
        center, radius = geo.shadow_ball_infinity(w, alphas[i])
        r = max(r, abs(radius - ts[i] * math.sinh(alphas[i])))
        edges[i] = center + radius * dirs[i]
    d_edge = geo.dist_to_vertical_line(ts, vs, edges)
    out["alpha_shadow_radius"] = max(r, float(np.max(np.abs(d_edge
                                                            - alphas))))

    tol = 1e-9
    report = {
        "identities": {k: {"max_residual": v, "pass": bool(v < tol)}
                       for k, v in out.items()},
        "tolerance": tol,
        "pass": bool(max(out.values()) < tol),
    }
    _write(cfg.out + ".json", _json_report(cfg, report))
    return report


# ------------------------------------------------------------- divergence-map

def run_divergence_map(cfg: ExperimentConfig) -> dict:
    if cfg.dataset is None:
        raise ConfigInvalid("divergence-map needs --dataset")
    data = divergence.builtin_conical_dataset(cfg.dataset, n_max=cfg.N)
    seq = divergence.from_conical_data(data)
    samples = limits.circle_samples(cfg.grid)

    nthreads = thread_count()
    if nthreads > 1:
        seq.term(cfg.N)  # fill the term cache before sharing across threads
    bounds = np.linspace(0, len(samples), nthreads + 1).astype(int)
    chunks = [samples[bounds[i]:bounds[i + 1]] for i in range(nthreads)
              if bounds[i] < bounds[i + 1]]

    def work(chunk):
        return divergence.aebischer_crosscheck(
            seq, chunk, cfg.N, alphas=cfg.alphas, K=cfg.K, R=cfg.R,
            tol_lo=cfg.tol_lo, tol_hi=cfg.tol_hi)

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            reports = list(pool.map(work, chunks))
    else:
        reports = [work(samples)]

    statuses = [s for rep in reports for s in rep.statuses]
    n_dec = sum(rep.n_decided for rep in reports)
    n_agr = sum(rep.n_agree for rep in reports)

    units = limits._samples_to_units(samples)
    buf = io.StringIO()
    cols = [f"x{i}" for i in range(units.shape[1])]
    buf.write(_csv_header(cfg, cols + ["classification", "conical",
                                       "agree"]))
    for u, (c, v) in zip(units, statuses):
        agree = ""
        if "Undecided" not in (c, v):
            agree = str(int((c == divergence.DIVERGENT)
                            == (v == limits.ACCEPTED)))
        buf.write(",".join([_fmt(x) for x in u] + [c, v, agree]) + "\n")
    _write(cfg.out + ".csv", buf.getvalue())

    summary = {"n_samples": len(statuses), "n_decided": n_dec,
               "n_agree": n_agr,
               "agreement": 1.0 if n_dec == 0 else n_agr / n_dec}
    _write(cfg.out + ".json", _json_report(cfg, summary))
    return summary


# ----------------------------------------------------------------- cf-analyze

def run_cf_analyze(cfg: ExperimentConfig) -> dict:
    if cfg.preset is not None:
        cf = contfrac.preset(cfg.preset, n_max=max(cfg.N, 10))
    elif cfg.pairs is not None:
        with open(cfg.pairs) as fh:
            raw = json.load(fh)
        cf = contfrac.from_pairs([(complex(a[0], a[1]), complex(b[0], b[1]))
                                  for a, b in raw])
    else:
        raise ConfigInvalid("cf-analyze needs --preset or --pairs")

    verdict = contfrac.classical_convergence(cf, cfg.N, tol_lo=cfg.tol_lo,
                                             tol_hi=cfg.tol_hi)
    gseq = contfrac.cf_mobius_sequence(cf, cfg.N)
    gc = divergence.general_convergence_test(gseq, cfg.N)

    traj = contfrac.trajectory(cf, cfg.N)
    buf = io.StringIO()
    buf.write(_csv_header(cfg, ["n", "re", "im"]))
    for i, z in enumerate(traj, start=1):
        if z == math.inf:
            buf.write(f"{i},inf,inf\n")
        else:
            z = complex(z)
            buf.write(f"{i},{_fmt(z.real)},{_fmt(z.imag)}\n")
    _write(cfg.out + ".csv", buf.getvalue())

    val = verdict.value
    summary = {
        "classical": verdict.status,
        "value": None if val is None or val == math.inf
        else [complex(val).real, complex(val).imag],
        "tail_diameter": verdict.tail_diameter,
        "general_convergence": gc.status,
    }
    _write(cfg.out + ".json", _json_report(cfg, summary))
    return summary


# ----------------------------------------------------------------------- rank

def run_rank(cfg: ExperimentConfig) -> dict:
    if cfg.oracle is None:
        raise ConfigInvalid("rank needs --oracle")
    E = countable.build_example_set(ORACLES[cfg.oracle], cfg.depth)
    result = countable.rank_iterate(E, depth=cfg.depth)
    body = json.loads(countable.rank_report_json(E, result))
    _write(cfg.out + ".json", _json_report(cfg, body))
    return body


# ------------------------------------------------------------------ construct

def run_construct(cfg: ExperimentConfig) -> dict:
    if cfg.builder is None:
        raise ConfigInvalid("construct needs --builder")
    thetas = list(cfg.thetas)

    if cfg.builder == "thm3":
        if cfg.oracle is None:
            raise ConfigInvalid("builder thm3 needs --oracle")
        E = countable.build_example_set(ORACLES[cfg.oracle], cfg.depth)
        res = countable.thm3_construct(E, depth=cfg.depth,
                                       n_pairs=cfg.n_pairs)
        seq = res.points
        if not thetas:
            thetas = [float(p[0]) for p in E.enumerate(cfg.depth)[:20]]
    elif cfg.builder == "cantor-graph":
        seq = constructions.cantor_graph_sequence(cfg.depth)
        if not thetas:
            thetas = [1.0 / 3.0, 2.0 / 3.0, 0.5]
    elif cfg.builder == "gdelta":
        if not cfg.removed:
            raise ConfigInvalid("builder gdelta needs --removed")
        removed = np.asarray(cfg.removed, dtype=float)[:, None]
        base = constructions.intersect_opens(
            constructions.open_ball([0.5], 0.5),
            constructions.open_complement(removed))
        G = constructions.GDeltaRep([base] * max(2, cfg.depth))
        seq = constructions.gdelta_to_sequence(G)
        if not thetas:
            thetas = [float(q) for q in removed[:, 0]]
    else:  # prescribed-limit
        if not thetas:
            raise ConfigInvalid("builder prescribed-limit needs --thetas "
                                "(target angles in radians)")
        targets = [geo.IdealPoint(geo.BALL,
                                  np.array([math.cos(a), math.sin(a)]))
                   for a in thetas]
        cf = contfrac.construct_prescribed_limit_set(targets,
                                                     n_terms=cfg.N)
        seq = limits.from_array(cf.inverse_orbit, geo.BALL)

    _write(cfg.out + ".json",
           _json_report(cfg, {"points": json.loads(
               constructions.sequence_to_json(seq))}))

    if cfg.builder == "prescribed-limit":
        flags = limits.limit_set_estimate(seq, limits.circle_samples(cfg.grid),
                                          tol=cfg.tol_hi, N=seq.n_max)
        buf = io.StringIO()
        buf.write(_csv_header(cfg, ["angle", "flagged"]))
        for k, f in enumerate(flags):
            buf.write(f"{_fmt(2 * math.pi * k / cfg.grid)},{int(f)}\n")
        _write(cfg.out + ".csv", buf.getvalue())
        return {"n_points": seq.n_max, "n_flagged": int(np.sum(flags))}

    ver = limits.vertical_conical_estimate(seq, thetas, alphas=cfg.alphas,
                                           K=cfg.K, R=cfg.R)
    audit = "# config " + json.dumps(cfg.resolved(), sort_keys=True) + "\n"
    _write(cfg.out + ".csv", audit + limits.verdicts_to_csv(ver))
    return {"n_points": seq.n_max,
            "verdicts": {str(th): v.status for th, v in zip(thetas, ver)}}


# --------------------------------------------------------------------- driver

RUNNERS = {
    "lemma-check": run_lemma_check,
    "divergence-map": run_divergence_map,
    "cf-analyze": run_cf_analyze,
    "rank": run_rank,
    "construct": run_construct,
}


def run(cfg: ExperimentConfig) -> int:
    cfg.validate()
    thread_count()
    summary = RUNNERS[cfg.subcommand](cfg)
    sys.stdout.write(json.dumps({"subcommand": cfg.subcommand,
                                 "out": cfg.out, **_brief(summary)},
                                sort_keys=True) + "\n")
    return 0


def _brief(summary: dict) -> dict:
    keep = {}
    for k in ("pass", "status", "rank", "classical", "agreement",
              "n_points", "n_flagged"):
        if k in summary:
            keep[k] = summary[k]
    return keep


# per-subcommand defaults on top of the dataclass defaults; explicit
# flags and config-file values override in that order
SUB_DEFAULTS = {
    "rank": {"depth": 6},
    "cf-analyze": {"N": 50, "tol_lo": 1e-9},
    "construct": {"alphas": (math.asinh(1.0) + 0.1, 2.0, 3.0, 4.0), "K": 3},
}

S = argparse.SUPPRESS


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="conical-lab",
        description="Hyperbolic-geometry experiment driver. CSV reports "
        "start with a '# config' audit line; columns per subcommand: "
        "divergence-map: sample coords, classification, conical verdict, "
        "agree(0/1); cf-analyze: n, re, im of the partial values; "
        "construct: theta coords, status, alpha_min, witness_count "
        "(prescribed-limit: angle, flagged).")
    ap.add_argument("--config", help="JSON file of config defaults; "
                    "explicit flags override")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", default=S,
                       help="JSON file of config defaults; explicit flags "
                       "override")
        p.add_argument("--dim", type=int, default=S)
        p.add_argument("--N", type=int, default=S)
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--tol-lo", dest="tol_lo", type=float, default=S)
        p.add_argument("--tol-hi", dest="tol_hi", type=float, default=S)
        p.add_argument("--alphas", type=float, nargs="+", default=S)
        p.add_argument("--K", type=int, default=S)
        p.add_argument("--R", type=float, default=S)
        p.add_argument("--out", default=S,
                       help="output path base (default: subcommand name)")

    p = sub.add_parser("lemma-check", help="geometry identity suites")
    common(p)
    p.add_argument("--trials", type=int, default=S)

    p = sub.add_parser("divergence-map",
                       help="boundary classification + conical crosscheck")
    common(p)
    p.add_argument("--dataset", choices=DATASETS, default=S)
    p.add_argument("--grid", type=int, default=S)

    p = sub.add_parser("cf-analyze", help="continued-fraction diagnostics")
    common(p)
    p.add_argument("--preset", choices=PRESETS, default=S)
    p.add_argument("--pairs", default=S,
                   help="JSON file: list of [[re,im],[re,im]] coefficient "
                   "pairs (a_n, b_n)")

    p = sub.add_parser("rank", help="gd-operator rank iteration")
    common(p)
    p.add_argument("--oracle", choices=sorted(ORACLES), default=S)
    p.add_argument("--depth", type=int, default=S)

    p = sub.add_parser("construct", help="sequence builders + estimator")
    common(p)
    p.add_argument("--builder", choices=BUILDERS, default=S)
    p.add_argument("--oracle", choices=sorted(ORACLES), default=S)
    p.add_argument("--depth", type=int, default=S)
    p.add_argument("--n-pairs", dest="n_pairs", type=int, default=S)
    p.add_argument("--grid", type=int, default=S)
    p.add_argument("--thetas", type=float, nargs="+", default=S)
    p.add_argument("--removed", type=float, nargs="+", default=S)
    return ap


def config_from_args(argv) -> ExperimentConfig:
    ns = _parser().parse_args(argv)
    cfg = ExperimentConfig(subcommand=ns.subcommand)
    fields = set(cfg.__dataclass_fields__) - {"subcommand", "extra"}

    def apply(d, source):
        for k, v in d.items():
            if k not in fields:
                raise ConfigInvalid(f"unknown {source} key {k!r}")
            setattr(cfg, k, tuple(v) if isinstance(v, list) else v)

    apply(SUB_DEFAULTS.get(ns.subcommand, {}), "default")
    if getattr(ns, "config", None):
        try:
            with open(ns.config) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigInvalid(f"cannot read config: {e}")
        if not isinstance(base, dict):
            raise ConfigInvalid("config file must hold a JSON object")
        apply(base, "config")
    apply({k: v for k, v in vars(ns).items()
           if k not in ("config", "subcommand")}, "flag")
    if cfg.out == "report":
        cfg.out = ns.subcommand
    return cfg


def main(argv=None) -> int:
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
        return run(cfg)
    except ConfigInvalid as e:
        sys.stderr.write(f"config error: {e}\n")
        return 2
    except Exception as e:  # noqa: BLE001 - surface module errors as exit 1
        sys.stderr.write(f"{type(e).__name__}: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
