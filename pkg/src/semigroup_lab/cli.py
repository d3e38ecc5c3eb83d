"""Command line front end.

    semigroup-lab zoo list
    semigroup-lab run CONFIG [--out DIR] [--class Cb|Lb|Lbs]
    semigroup-lab sweep CONFIG [--out DIR]
    semigroup-lab evolve --model ID --from MEASURE --t TIME [--param k=v ...] [--out DIR]

Exit codes: 0 every verdict as expected, 1 a verdict mismatch, 2 a bad configuration.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import (ConfigError, evaluate, load_run_config, load_sweep_config, parse_number)
from .decomposition import SplitFailure, build_alpha_split, reconstruct
from .measure import Measure, bl_distance, parse_measure, total_variation
from .reports import SUMMARY_HEADER, render_csv, write_csv
from .semigroup import FlowModel, GeneratorModel, sample_states_at
from .testfn import CLASSES
from .zoo import INCONCLUSIVE, REFUTED, SUPPORTED, ZOO_IDS, cross_check_example2, instantiate, list_entries

THREADS_ENV = "SEMIGROUP_LAB_THREADS"
EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG = 0, 1, 2


@dataclass
class CheckResult:
    verdict: str
    summary: list
    header: tuple
    rows: list
    note: str = ""


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1")
    return n


# -- check execution -----------------------------------------------------------------

def _from_report(rep: an.ModulusReport) -> CheckResult:
    rows = [list(r) for r in rep.rows]
    if rep.witness is not None:
        rows.append(["witness:" + rep.witness.x, rep.witness.t, rep.witness.gap])
    return CheckResult(rep.verdict, rep.summary_row(), ("x", "t", "gap"), rows, rep.resolution)


def _initials(entry, items, seed):
    rng = np.random.default_rng(seed)
    out = []
    for item in items:
        if item.startswith("random(") and item.endswith(")"):
            for _ in range(int(parse_number(item[7:-1], "initials"))):
                out.append(Measure(entry.space, rng.dirichlet(np.ones(entry.space.size))))
        else:
            out.append(parse_measure(entry.space, item))
    return out


def execute(spec, entry) -> CheckResult:
    """Run one parsed check; runtime failures become an inconclusive verdict."""
    try:
        return _execute(spec, entry)
    except (ValueError, TypeError, ArithmeticError, KeyError, SplitFailure) as exc:
        row = [spec.property, spec.function.name if spec.function else "", spec.params.get("z", ""),
               INCONCLUSIVE, spec.params.get("epsilon"), None, None, None]
        return CheckResult(INCONCLUSIVE, row, ("error",), [[str(exc)]], str(exc))


def _execute(spec, entry) -> CheckResult:
    m, p, f = entry.model, spec.params, spec.function
    prop = spec.property
    if prop == "asymptotic_stability":
        inits = _initials(entry, p.get("initials", ["random(3)"]), spec.seed)
        rep = an.check_asymptotic_stability(m, inits, p.get("times"), p.get("tol", 1e-6))
        rows = [[lab, t, d] for lab, curve in zip(rep.initials, rep.curves) for t, d in zip(rep.times, curve)]
        worst = float(rep.final.max()) if rep.curves.size else None
        return CheckResult(rep.verdict, [prop, "", "", rep.verdict, rep.tol, None, None, worst],
                           ("initial", "t", "bl_distance"), rows)
    if prop == "feller":
        return _from_report(an.check_feller(m, f, p["t"], p["z"], p.get("approach"), p.get("tol")))
    if prop == "stochastic_continuity_zero":
        return _from_report(an.check_stochastic_continuity_zero(m, f, p["x"], p.get("t_sequence"), p.get("tol")))
    if prop == "strong_continuity":
        return _from_report(an.check_strong_continuity(m, f, p.get("t_sequence"), p.get("probes"), p.get("tol")))
    tail = p.get("tail", "stability-envelope")
    if prop == "e_property":
        return _from_report(an.check_e_property(m, f, p["z"], p["epsilon"], p.get("deltas"), p.get("times"), tail))
    if prop == "eventual_e_property":
        return _from_report(an.check_eventual_e_property(m, f, p["z"], p["epsilon"], p.get("deltas"),
                                                         p.get("taus"), p.get("times"), tail))
    if prop == "interval_e_property":
        return _from_report(an.check_interval_e_property(m, f, p["z"], p["T"], p.get("approach"), p.get("tol")))
    if prop == "lemma1":
        res = an.lemma1_search(m, f, p["epsilon"], p.get("times"))
        if res is None:
            return CheckResult(INCONCLUSIVE, [prop, f.name, "", INCONCLUSIVE, p["epsilon"], None, None, None],
                               ("T0", "center", "radius", "bound"), [])
        return CheckResult(SUPPORTED, [prop, f.name, res.ball.center, SUPPORTED, p["epsilon"], res.ball.radius,
                                       res.T0, res.bound],
                           ("T0", "center", "radius", "bound"),
                           [[res.T0, res.ball.center, res.ball.radius, res.bound]])
    if prop == "alpha_split":
        f_sup = float(np.max(np.abs(f.values(entry.space))))
        split = build_alpha_split(m, p["x0"], p["z"], p["r"], p["alpha"], f_sup, p["epsilon"],
                                  p.get("times"), p.get("k"))
        _, resid = reconstruct(m, split, split.threshold + 1.0)
        worst = max(max(split.stage_residuals), resid)
        verdict = SUPPORTED if worst <= 1e-8 else REFUTED
        rows = split.to_rows()
        return CheckResult(verdict, [prop, f.name, split.z, verdict, p["epsilon"], split.r, split.threshold, worst],
                           ("stage", "t", "r", "nu", "mu"), rows)
    if prop == "cross_check":
        times = p.get("times", np.linspace(0.0, 30.0, 64))
        rows = [[t, cross_check_example2(p["n"], [t])] for t in times]
        worst = max(r[1] for r in rows)
        verdict = SUPPORTED if worst <= 1e-9 else REFUTED
        return CheckResult(verdict, [prop, "", str(p["n"]), verdict, 1e-9, None, None, worst],
                           ("t", "residual"), rows)
    if prop == "simulate":
        if not isinstance(m, GeneratorModel):
            raise TypeError("simulation needs a generator model")
        paths = p.get("paths", 4000)
        emp = sample_states_at(m, p["initial"], p["t"], paths, spec.seed)
        exact = m.evolve(p["initial"], p["t"])
        tv = total_variation(emp, exact)
        tol = p.get("tol", 4.0 * np.sqrt(entry.space.size / paths))
        verdict = SUPPORTED if tv <= tol else REFUTED
        rows = [[lab, emp.weights[i], exact.weights[i]] for i, lab in enumerate(entry.space.labels)]
        return CheckResult(verdict, [prop, "", "", verdict, tol, None, p["t"], tv],
                           ("state", "empirical", "exact"), rows)
    raise ConfigError(f"unhandled property {prop}")


def _expected(spec, entry) -> str | None:
    if spec.expect is not None:
        return spec.expect
    fclass = spec.fclass or (spec.function.class_tag if spec.function else None)
    z = spec.params.get("z", spec.params.get("x"))
    if z is not None and entry.space.is_finite:
        z = entry.space.labels[entry.space.index_of(z)]
    return entry.declared(spec.property, fclass, None if z is None else str(z))


def run_command(config_path, out=None, default_class=None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    cfg = load_run_config(config_path, default_class)
    out_dir = Path(out or cfg.out or "reports")
    workers = _threads()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda s: execute(s, cfg.entry), cfg.checks))
    summary, mismatches = [], 0
    for spec, res in zip(cfg.checks, results):
        write_csv(out_dir / f"{spec.name}.csv", res.header, res.rows)
        summary.append(res.summary)
        expected = _expected(spec, cfg.entry)
        ok = (res.verdict == expected) if expected is not None else res.verdict != REFUTED
        mismatches += not ok
        tag = "ok" if ok else "MISMATCH"
        exp = expected if expected is not None else "-"
        stream.write(f"{spec.name}: {res.verdict} (expected {exp}) {tag}\n")
    write_csv(out_dir / "summary.csv", SUMMARY_HEADER, summary)
    return EXIT_MISMATCH if mismatches else EXIT_OK


# -- sweeps ------------------------------------------------------------------------

def _resolve_point(entry, value):
    space = entry.space
    if isinstance(value, str) or not space.is_finite:
        return value
    try:
        return space.labels[space.index_of(float(value))]
    except KeyError:
        raise ConfigError(f"sweep point {value!r} is not in the truncated space") from None


def _sweep_value(sw, entry, env) -> float:
    vals = {}
    for k, e in sw.exprs.items():
        vals[k] = e if isinstance(e, (str, float)) else evaluate(e, env)
    vals.update(env)
    m, f = entry.model, sw.function
    if sw.quantity == "modulus":
        return an.eprop_modulus(m, f, _resolve_point(entry, vals["z"]), vals["delta"], vals["tau"])
    x = _resolve_point(entry, vals["x"])
    t = float(vals["t"])
    if sw.quantity == "bl":
        return bl_distance(m.row(x, t), sw.target)
    pts = [x] if sw.quantity == "dual" else [x, _resolve_point(entry, vals["z"])]
    if isinstance(m, FlowModel):
        v = m.dual_masked(f, [t], [float(q) for q in pts])[0]
    else:
        v = m.dual_values(f, t, entry.space.indices(pts))
    return float(v[0]) if sw.quantity == "dual" else float(abs(v[0] - v[1]))


def sweep_command(config_path, out=None) -> int:
    cfg = load_sweep_config(config_path)
    out_dir = Path(out or cfg.out or "reports")
    workers = _threads()
    for sw in cfg.sweeps:
        names = list(sw.swept)
        cells = list(itertools.product(*[sw.swept[n] for n in names])) if names else [()]
        envs = [dict(zip(names, map(float, c))) for c in cells]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda env: _sweep_value(sw, cfg.entry, env), envs))
        rows = [[*c, v] for c, v in zip(cells, values)]
        write_csv(out_dir / f"{sw.name}.csv", (*names, "value"), rows)
    return EXIT_OK


# -- evolve and zoo ----------------------------------------------------------------

def _params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        num = parse_number(v, k)
        out[k.strip()] = int(num) if num == int(num) and k.strip() != "horizon" else num
    return out


def evolve_command(model_id, source, t, params=None, out=None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    if model_id not in ZOO_IDS:
        raise ConfigError(f"unknown zoo id {model_id!r}")
    try:
        entry = instantiate(model_id, **_params(params))
        space = entry.space
        if space.is_finite:
            mu = parse_measure(space, source)
        else:
            pairs = [s.split("=", 1) for s in source.split(";") if s.strip()]
            pos = [float(a) for a, *_ in pairs]
            w = [float(b[0]) if b else 1.0 for _, *b in pairs]
            mu = Measure(space, np.array(w), np.array(pos))
        nu = entry.model.evolve(mu, t)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    text = render_csv(("state", "weight"), nu.as_pairs())
    stream.write(text)
    if out:
        write_csv(Path(out) / "evolve.csv", ("state", "weight"), nu.as_pairs())
    return EXIT_OK


def zoo_command(out=None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    rows = []
    for zid, params in list_entries():
        entry = instantiate(zid, **params)
        ps = ";".join(f"{k}={v}" for k, v in sorted(params.items()))
        decl = ";".join(f"{p}[{c},{a}]={v}" for (p, c, a), v in sorted(entry.verdicts.items()))
        rows.append([zid, ps, decl])
    stream.write(render_csv(("id", "params", "declared"), rows))
    if out:
        write_csv(Path(out) / "zoo.csv", ("id", "params", "declared"), rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semigroup-lab", description="Property checks for Markov semigroups.")
    sub = ap.add_subparsers(dest="command", required=True)
    z = sub.add_parser("zoo", help="registered models")
    z.add_argument("action", choices=["list"])
    z.add_argument("--out")
    r = sub.add_parser("run", help="run the checks in a config file")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--class", dest="fclass", choices=CLASSES,
                   help="function class assumed when a check does not name one")
    s = sub.add_parser("sweep", help="evaluate a quantity over a parameter grid")
    s.add_argument("config")
    s.add_argument("--out")
    e = sub.add_parser("evolve", help="push a measure forward")
    e.add_argument("--model", required=True)
    e.add_argument("--from", dest="source", required=True, help="e.g. '1/5' or '0=0.5;1=0.5'")
    e.add_argument("--t", type=float, required=True)
    e.add_argument("--param", action="append", help="model parameter key=value")
    e.add_argument("--out")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "zoo":
            return zoo_command(args.out)
        if args.command == "run":
            return run_command(args.config, args.out, args.fclass)
        if args.command == "sweep":
            return sweep_command(args.config, args.out)
        if args.t < 0:
            raise ConfigError("--t must be nonnegative")
        return evolve_command(args.model, args.source, args.t, args.param, args.out)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
