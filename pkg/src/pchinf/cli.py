"""Command-line front end: plant files, dispatch, CSV reports and figures.

Plant files are JSON with matrices given as arrays of polynomial-entry
strings in the named parameters (``xi1``, ``xi2``, ...), using ``+ - * ^``.
Commands: transform, synthesize, analyze, evaluate, reproduce-table1. All
outputs are deterministic given the seed; every file carries a metadata
header, and report figures are written alongside the delimited output.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import evaluation, report, synth
from .galerkin import expand_blocks
from .plant import PlantDimensionError, UncertainPlant
from .polychaos import Distribution, Marginal, PolynomialMatrix, build_basis
from .synth import SynthesisConfig, SynthesisError, rho_bisection, stability_post_analysis

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


class PlantSchemaError(ValueError):
    """Plant file violates the documented schema."""


# ---------------------------------------------------------------------------
# polynomial-entry parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<var>xi\d+)|(?P<op>[-+*^]))"
)


def _tokenize(text: str, where: str) -> list[tuple[str, str]]:
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PlantSchemaError(f"{where}: cannot parse entry near {text[pos:]!r}")
        pos = m.end()
        for kind in ("num", "var", "op"):
            if m.group(kind) is not None:
                out.append((kind, m.group(kind)))
                break
    return out


def parse_poly_entry(text: str, n_xi: int, where: str = "entry") -> dict[tuple, float]:
    """Parse a polynomial entry like '0.2 + 3*xi1^2*xi2 - 1.5' into a term map."""
    toks = _tokenize(str(text), where)
    if not toks:
        raise PlantSchemaError(f"{where}: empty entry")
    terms: dict[tuple, float] = {}
    i = 0

    def fail(msg):
        raise PlantSchemaError(f"{where}: {msg}")

    while i < len(toks):
        sign = 1.0
        while i < len(toks) and toks[i][0] == "op" and toks[i][1] in "+-":
            if toks[i][1] == "-":
                sign = -sign
            i += 1
        coeff = sign
        expo = [0] * n_xi
        expect_factor = True
        while True:
            if expect_factor:
                if i >= len(toks):
                    fail("dangling operator")
                kind, val = toks[i]
                if kind == "num":
                    coeff *= float(val)
                    i += 1
                elif kind == "var":
                    d = int(val[2:]) - 1
                    if not 0 <= d < n_xi:
                        fail(f"parameter {val} out of range (n_xi={n_xi})")
                    power = 1
                    i += 1
                    if i + 1 < len(toks) and toks[i] == ("op", "^"):
                        if toks[i + 1][0] != "num" or "." in toks[i + 1][1]:
                            fail("exponent must be a nonnegative integer")
                        power = int(toks[i + 1][1])
                        i += 2
                    expo[d] += power
                else:
                    fail(f"unexpected operator {val!r}")
                expect_factor = False
            elif i < len(toks) and toks[i] == ("op", "*"):
                i += 1
                expect_factor = True
            else:
                break
        key = tuple(expo)
        terms[key] = terms.get(key, 0.0) + coeff
    return {k: v for k, v in terms.items() if v != 0.0}


def format_poly(terms: dict[tuple, float]) -> str:
    """Canonical text form of a polynomial term map (graded-lex term order)."""
    if not terms:
        return "0"
    parts = []
    for expo in sorted(terms, key=lambda t: (sum(t), tuple(-e for e in t))):
        coeff = terms[expo]
        mono = "*".join(
            f"xi{d + 1}" + (f"^{e}" if e > 1 else "")
            for d, e in enumerate(expo) if e
        )
        c = f"{coeff:.12g}"
        if mono:
            body = mono if c == "1" else (f"-{mono}" if c == "-1" else f"{c}*{mono}")
        else:
            body = c
        parts.append(body)
    out = parts[0]
    for p in parts[1:]:
        out += f" - {p[1:]}" if p.startswith("-") else f" + {p}"
    return out


# ---------------------------------------------------------------------------
# plant files

def _parse_matrix(rows, n_xi: int, where: str) -> PolynomialMatrix:
    if not rows or not all(isinstance(r, list) and r for r in rows):
        raise PlantSchemaError(f"{where}: expected a non-empty 2-D array of entries")
    n_cols = len(rows[0])
    if any(len(r) != n_cols for r in rows):
        raise PlantSchemaError(f"{where}: ragged rows")
    terms: dict[tuple, np.ndarray] = {}
    for i, row in enumerate(rows):
        for j, entry in enumerate(row):
            emap = parse_poly_entry(entry, n_xi, where=f"{where}[{i}][{j}]")
            for expo, coeff in emap.items():
                mat = terms.setdefault(expo, np.zeros((len(rows), n_cols)))
                mat[i, j] = coeff
    if not terms:
        terms[(0,) * n_xi] = np.zeros((len(rows), n_cols))
    return PolynomialMatrix((len(rows), n_cols), n_xi, terms)


def _parse_const(rows, n_xi: int, where: str) -> np.ndarray:
    pm = _parse_matrix(rows, n_xi, where)
    if pm.degree > 0:
        raise PlantSchemaError(f"{where}: must be parameter independent")
    return pm.eval(np.zeros(n_xi))


def parse_plant_dict(doc: dict, where: str = "plant") -> UncertainPlant:
    try:
        params = doc["parameters"]
        mats = doc["matrices"]
    except (KeyError, TypeError) as e:
        raise PlantSchemaError(f"{where}: missing section {e}") from None
    if not params:
        raise PlantSchemaError(f"{where}: needs at least one parameter")
    marginals = []
    for k, prm in enumerate(params):
        kind = prm.get("dist")
        if kind == "uniform":
            marginals.append(Marginal("uniform", float(prm["low"]), float(prm["high"])))
        elif kind == "gaussian":
            marginals.append(Marginal("gaussian"))
        else:
            raise PlantSchemaError(f"{where}: parameters[{k}] has unsupported dist {kind!r}")
    dist = Distribution(tuple(marginals))
    n_xi = dist.n_xi
    need = {"A", "B_w", "B", "C", "D_w", "C_z", "D_zw", "D_z"}
    missing = need - set(mats)
    if missing:
        raise PlantSchemaError(f"{where}: missing matrices {sorted(missing)}")
    try:
        return UncertainPlant(
            A=_parse_matrix(mats["A"], n_xi, "A"),
            B_w=_parse_matrix(mats["B_w"], n_xi, "B_w"),
            B=_parse_matrix(mats["B"], n_xi, "B"),
            C=_parse_matrix(mats["C"], n_xi, "C"),
            D_w=_parse_matrix(mats["D_w"], n_xi, "D_w"),
            C_z=_parse_const(mats["C_z"], n_xi, "C_z"),
            D_zw=_parse_const(mats["D_zw"], n_xi, "D_zw"),
            D_z=_parse_const(mats["D_z"], n_xi, "D_z"),
            dist=dist,
            name=str(doc.get("name", "")),
        )
    except PlantDimensionError as e:
        raise PlantSchemaError(f"{where}: {e}") from None


def parse_plant(path) -> UncertainPlant:
    """Load a plant description from a JSON file (or a builtin name)."""
    path = resolve_plant_path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise PlantSchemaError(f"{path}: invalid JSON ({e})") from None
    return parse_plant_dict(doc, where=str(path))


def reference_gains(path) -> dict[str, np.ndarray]:
    doc = json.loads(Path(resolve_plant_path(path)).read_text())
    return {k: np.atleast_2d(np.asarray(v, dtype=float))
            for k, v in doc.get("reference_gains", {}).items()}


def resolve_plant_path(path) -> Path:
    """Accept a file path or the name of a packaged plant (e.g. 'cubic_sof')."""
    p = Path(path)
    if p.exists():
        return p
    builtin = resources.files("pchinf").joinpath(f"data/{path}.json")
    if builtin.is_file():
        return Path(str(builtin))
    raise PlantSchemaError(f"plant file not found: {path}")


def serialize_plant(plant: UncertainPlant) -> dict:
    """Canonical JSON-ready description; parse(serialize(p)) reproduces p."""
    def poly_rows(pm: PolynomialMatrix):
        rows = []
        for i in range(pm.shape[0]):
            row = []
            for j in range(pm.shape[1]):
                terms = {S: float(c[i, j]) for S, c in pm.terms.items() if c[i, j] != 0.0}
                row.append(format_poly(terms))
            rows.append(row)
        return rows

    def const_rows(M: np.ndarray):
        return [[f"{v:.12g}" for v in row] for row in np.atleast_2d(M)]

    params = []
    for k, m in enumerate(plant.dist.marginals):
        if m.kind == "uniform":
            params.append({"name": f"xi{k + 1}", "dist": "uniform",
                           "low": m.low, "high": m.high})
        else:
            params.append({"name": f"xi{k + 1}", "dist": "gaussian"})
    return {
        "name": plant.name,
        "parameters": params,
        "matrices": {
            "A": poly_rows(plant.A),
            "B_w": poly_rows(plant.B_w),
            "B": poly_rows(plant.B),
            "C": poly_rows(plant.C),
            "D_w": poly_rows(plant.D_w),
            "C_z": const_rows(plant.C_z),
            "D_zw": const_rows(plant.D_zw),
            "D_z": const_rows(plant.D_z),
        },
    }


# ---------------------------------------------------------------------------
# command implementations

def _threads(args) -> int:
    env = os.environ.get("PCE_HINF_THREADS")
    if env:
        return max(1, int(env))
    return 1


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
    for key in ("plant", "out", "seed", "degree", "rho2", "grid", "mc", "mode",
                "gain", "restarts", "T", "dt"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg.setdefault("seed", 0)
    cfg.setdefault("degree", 2)
    cfg.setdefault("grid", 1000)
    cfg.setdefault("mc", 5000)
    cfg.setdefault("T", 10.0)
    cfg.setdefault("dt", 1e-3)
    cfg.setdefault("x0", "ones")
    return cfg


def _meta(cfg: dict, **extra) -> dict:
    # the output directory is where results land, not part of what they mean
    sem = {k: v for k, v in cfg.items() if k != "out"}
    return report.run_metadata(sem, hinf_tol=1e-6, lmi_margin=1e-6, **extra)


def _out_dir(cfg) -> Path:
    out = Path(cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_gain(cfg) -> np.ndarray:
    ref = cfg.get("gain")
    if ref is None:
        raise PlantSchemaError("this command needs --gain (CSV file or reference name)")
    p = Path(str(ref))
    if p.exists():
        return np.atleast_2d(report.read_matrix_csv(p))
    gains = reference_gains(cfg["plant"])
    if str(ref) in gains:
        return gains[str(ref)]
    raise PlantSchemaError(f"gain {ref!r}: no such file or reference gain")


def cmd_transform(args) -> int:
    cfg = _load_config(args)
    plant = parse_plant(cfg["plant"])
    p = int(cfg["degree"])
    basis = build_basis(plant.dist, p, working_degree=p + plant.bcdw_degree)
    blocks = expand_blocks(plant, basis, p)
    out = _out_dir(cfg)
    meta = _meta(cfg, p=p, q=blocks.q, n_terms_p=blocks.n_p1, n_terms_q=blocks.n_q1)
    for name, M in (
        ("A_gal", blocks.A_gal), ("Bw_gal", blocks.Bw_gal),
        ("B_bar", blocks.B_bar), ("C_bar", blocks.C_bar), ("Dw_bar", blocks.Dw_bar),
        ("Cz_bar", blocks.Cz_bar), ("Dzw_bar", blocks.Dzw_bar), ("Dz_bar", blocks.Dz_bar),
    ):
        report.write_matrix_csv(out / f"transform_{name}.csv", M, meta)
    print(f"wrote expanded blocks (p={p}, q={blocks.q}) to {out}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = _load_config(args)
    plant = parse_plant(cfg["plant"])
    mode = cfg.get("mode", synth.MODE_NOMINAL)
    scfg = SynthesisConfig(
        mode=mode,
        p=int(cfg["degree"]),
        rho2=float(cfg.get("rho2", 0.0)),
        seed=int(cfg["seed"]),
        restarts=int(cfg.get("restarts", 3)),
    )
    res = synth.synthesize(plant, None, scfg)
    out = _out_dir(cfg)
    meta = _meta(cfg, mode=mode, gamma=res.gamma, stable=res.stability.stable,
                 max_real_part=res.stability.max_real_part)
    report.write_matrix_csv(out / "gain.csv", res.K, meta)
    report.write_csv(
        out / "synthesis_summary.csv",
        {
            "mode": [mode],
            "p": [res.p],
            "rho2": [res.rho2],
            "gamma": [res.gamma],
            "stable": [int(res.stability.stable)],
            "max_real_part": [res.stability.max_real_part],
            "iterations": [res.iterations],
            "restarts": [res.restarts_run],
            "recheck_feasible": [int(res.recheck_feasible)],
        },
        meta,
    )
    trace = res.gamma_trace
    report.write_csv(out / "gamma_trace.csv",
                     {"iteration": list(range(len(trace))), "gamma": trace}, meta)
    print(f"synthesized K = {res.K.tolist()}  gamma = {res.gamma:.6g}  "
          f"stable = {res.stability.stable}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    plant = parse_plant(cfg["plant"])
    K = _load_gain(cfg)
    grid_n = int(cfg["grid"])
    rep = stability_post_analysis(plant, K, grid_n=max(grid_n, 2),
                                  margin=1e-6)
    out = _out_dir(cfg)
    meta = _meta(cfg, stable=rep.stable, max_real_part=rep.max_real_part)
    try:
        nd = evaluation.norm_distribution(plant, K, grid_n=grid_n,
                                          threads=_threads(args))
        status = EXIT_OK
    except evaluation.UnstableSampleError as e:
        nd = e.distribution
        status = EXIT_INFEASIBLE
        print(f"warning: {e}", file=sys.stderr)
    cols = {f"xi{d + 1}": nd.xi[:, d] for d in range(nd.xi.shape[1])}
    cols["gamma"] = nd.gamma
    report.write_csv(out / "norm_distribution.csv", cols, meta)
    report.write_csv(
        out / "analysis_summary.csv",
        {
            "worst_case_hinf": [nd.worst_case],
            "averaged_hinf": [nd.averaged],
            "stable": [int(rep.stable)],
            "max_real_part": [rep.max_real_part],
            "unstable_samples": [len(nd.unstable)],
        },
        meta,
    )
    report.fig_norm_distribution([("gain", nd)], out / "norm_distribution.png")
    print(f"worst_case_hinf = {nd.worst_case:.6g}  averaged_hinf = {nd.averaged:.6g}  "
          f"stable = {rep.stable}")
    return status


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    plant = parse_plant(cfg["plant"])
    K = _load_gain(cfg)
    p = int(cfg["degree"])
    T, dt = float(cfg["T"]), float(cfg["dt"])
    x0 = np.ones(plant.n_x) if cfg["x0"] == "ones" else np.asarray(cfg["x0"], dtype=float)
    out = _out_dir(cfg)
    meta = _meta(cfg, p=p, x0=list(x0))
    mc, prop, leg = evaluation.simulate_stats(
        plant, K, p=p, x0=x0, T=T, dt=dt, n_mc=int(cfg["mc"]), seed=int(cfg["seed"]))
    for st in (mc, prop, leg):
        cols = {"t": st.t}
        for i in range(plant.n_x):
            cols[f"mean_{i + 1}"] = st.mean[:, i]
            cols[f"var_{i + 1}"] = st.var[:, i]
        report.write_csv(out / f"trajectory_{st.source}.csv", cols, meta)
    errs = evaluation.stats_errors(plant, K, p=p, x0=x0, T=T, dt=dt)
    e_prop, e_leg = evaluation.transform_error(plant, K, p=p, T=T, dt=dt, x0=x0)
    report.write_csv(
        out / "transform_error.csv",
        {
            "recon_err_closed_loop": [e_prop],
            "recon_err_legacy": [e_leg],
            **{k: [v] for k, v in errs.items()},
        },
        meta,
    )
    report.fig_trajectory_stats([mc, prop, leg], out / "trajectories.png")
    print(f"reconstruction error: closed_loop = {e_prop:.6g}  legacy = {e_leg:.6g}")
    return EXIT_OK


def cmd_reproduce_table1(args) -> int:
    cfg = _load_config(args)
    plant = parse_plant(cfg["plant"])
    gains = reference_gains(cfg["plant"])
    if not gains:
        raise PlantSchemaError("plant file has no reference_gains section")
    out = _out_dir(cfg)
    meta = _meta(cfg)
    rows = {"gain": [], "worst_case_hinf": [], "averaged_hinf": []}
    curves = []
    status = EXIT_OK
    for name, K in gains.items():
        try:
            nd = evaluation.norm_distribution(plant, K, grid_n=int(cfg["grid"]),
                                              threads=_threads(args))
        except evaluation.UnstableSampleError as e:
            nd = e.distribution
            status = EXIT_INFEASIBLE
        rows["gain"].append(name)
        rows["worst_case_hinf"].append(nd.worst_case)
        rows["averaged_hinf"].append(nd.averaged)
        curves.append((name, nd))
        print(f"{name:>12}: worst_case_hinf = {nd.worst_case:9.4f}  "
              f"averaged_hinf = {nd.averaged:9.4f}")
    report.write_csv(out / "table1_summary.csv", rows, meta)
    report.fig_norm_distribution(curves, out / "norm_distributions.png")
    return status


def cmd_rho_bisection(args) -> int:
    cfg = _load_config(args)
    plant = parse_plant(cfg["plant"])
    scfg = SynthesisConfig(mode=synth.MODE_ROBUST, p=int(cfg["degree"]),
                           seed=int(cfg["seed"]), restarts=int(cfg.get("restarts", 1)))
    rho2_min, res = rho_bisection(plant, None, scfg,
                                  rho2_hi=float(cfg.get("rho2", 0.01)))
    out = _out_dir(cfg)
    meta = _meta(cfg, rho2_min=rho2_min)
    report.write_matrix_csv(out / "gain.csv", res.K, meta)
    report.write_csv(out / "rho_bisection.csv",
                     {"rho2_min": [rho2_min], "gamma": [res.gamma],
                      "stable": [int(res.stability.stable)]}, meta)
    print(f"rho2_min = {rho2_min:.6g}  K = {res.K.tolist()}")
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="pchinf",
        description="H-infinity static output feedback under probabilistic "
                    "polynomial uncertainty (expansion-based synthesis and analysis)",
    )
    ap.add_argument("--config", help="JSON file with defaults for the flags below")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--plant", help="plant JSON file or builtin name (cubic_sof)")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--seed", type=int)
        p.add_argument("--degree", type=int, help="expansion truncation degree p")
        p.add_argument("--rho2", type=float, help="uncertainty radius (robust mode)")
        p.add_argument("--grid", type=int, help="sweep grid size")
        p.add_argument("--mc", type=int, help="Monte Carlo sample count")
        p.add_argument("--mode", choices=[synth.MODE_WORST_CASE, synth.MODE_NOMINAL,
                                          synth.MODE_ROBUST])
        p.add_argument("--gain", help="gain CSV file or reference gain name")
        p.add_argument("--restarts", type=int)
        p.add_argument("--T", type=float, help="simulation horizon")
        p.add_argument("--dt", type=float, help="integrator step")

    for name, fn in (
        ("transform", cmd_transform),
        ("synthesize", cmd_synthesize),
        ("analyze", cmd_analyze),
        ("evaluate", cmd_evaluate),
        ("reproduce-table1", cmd_reproduce_table1),
        ("rho-bisection", cmd_rho_bisection),
    ):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (PlantSchemaError, json.JSONDecodeError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except SynthesisError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (evaluation.UnstableSampleError, evaluation.IntegrationBlowupError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except np.linalg.LinAlgError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
