"""Parsing of run and sweep configuration files (INI sections, one per check)."""

from __future__ import annotations

import ast
import configparser
import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .analysis import default_time_grid
from .measure import parse_measure
from .semigroup import GeneratorMatrix, GeneratorModel
from .space import coordinate_space, explicit_space
from .testfn import CLASSES, TestFunction, resolve
from .zoo import VERDICTS, ZOO_IDS, ZooEntry, instantiate

RESERVED = ("model", "run")

CHECK_KEYS = {
    "asymptotic_stability": {"initials", "times", "tol"},
    "feller": {"function", "t", "z", "approach", "tol"},
    "stochastic_continuity_zero": {"function", "x", "t_sequence", "tol"},
    "strong_continuity": {"function", "t_sequence", "probes", "tol"},
    "e_property": {"function", "z", "epsilon", "deltas", "times", "tail"},
    "eventual_e_property": {"function", "z", "epsilon", "deltas", "taus", "times", "tail"},
    "interval_e_property": {"function", "z", "T", "approach", "tol"},
    "lemma1": {"function", "epsilon", "times"},
    "alpha_split": {"function", "x0", "z", "r", "alpha", "epsilon", "k", "times"},
    "cross_check": {"n", "times"},
    "simulate": {"initial", "t", "paths", "tol"},
}
COMMON_KEYS = {"property", "expect", "class"}
SWEEP_QUANTITIES = ("gap", "dual", "bl", "modulus")
SWEEP_PARAMS = ("n", "t", "delta", "tau")


class ConfigError(ValueError):
    """Anything wrong with a configuration file; maps to exit code 2."""


@dataclass
class CheckSpec:
    name: str
    property: str
    params: dict
    function: TestFunction | None
    fclass: str | None
    expect: str | None
    seed: int


@dataclass
class RunConfig:
    entry: ZooEntry
    seed: int
    checks: list[CheckSpec] = field(default_factory=list)
    out: str | None = None


@dataclass
class SweepSpec:
    name: str
    quantity: str
    swept: dict
    exprs: dict
    function: TestFunction | None
    target: object = None


@dataclass
class SweepConfig:
    entry: ZooEntry
    sweeps: list[SweepSpec] = field(default_factory=list)
    out: str | None = None


# -- scalar parsing --------------------------------------------------------------

def parse_number(text: str, key: str = "value") -> float:
    try:
        v = float(Fraction(text.strip())) if "/" in text else float(text.strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    return v


def parse_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def parse_grid(text: str, key: str = "grid") -> np.ndarray:
    """``geometric(t_min, t_max, per_decade)``, ``linspace(a, b, n)`` or a comma list."""
    s = text.strip()
    for head in ("geometric", "linspace"):
        if s.startswith(head + "(") and s.endswith(")"):
            args = [parse_number(a, key) for a in s[len(head) + 1:-1].split(",")]
            if len(args) != 3:
                raise ConfigError(f"{key}: {head} takes three arguments")
            if head == "geometric":
                if not 0 < args[0] < args[1] or args[2] < 1:
                    raise ConfigError(f"{key}: geometric needs 0 < t_min < t_max and per_decade >= 1")
                return default_time_grid(args[1], int(args[2]), args[0])
            if args[2] < 1 or args[2] != int(args[2]):
                raise ConfigError(f"{key}: linspace count must be a positive integer")
            return np.linspace(args[0], args[1], int(args[2]))
    vals = np.array([parse_number(v, key) for v in parse_list(s)])
    if len(vals) == 0:
        raise ConfigError(f"{key}: empty grid")
    return vals


def derive_seed(seed: int, section: str) -> int:
    """Per-check seed from the run seed and the section name (stable across runs)."""
    h = hashlib.sha256(f"{seed}:{section}".encode("utf-8")).hexdigest()
    return int(h[:16], 16)


# -- expressions used by sweeps ---------------------------------------------------

_FUNCS = {"exp": math.exp, "log": math.log, "sqrt": math.sqrt}
_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b, ast.Mult: lambda a, b: a * b,
           ast.Div: lambda a, b: a / b, ast.Pow: lambda a, b: a ** b}


def compile_expression(text: str, names) -> ast.Expression:
    """Arithmetic over numbers, the given names and ``exp``, ``log``, ``sqrt``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ConfigError(f"cannot parse expression {text!r}") from None
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load, ast.operator, ast.unaryop)):
            continue
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            continue
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name) and (node.id in names or node.id in _FUNCS):
            continue
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                and len(node.args) == 1 and not node.keywords:
            continue
        raise ConfigError(f"expression {text!r} uses something other than arithmetic and {sorted(names)}")
    return tree


def evaluate(tree: ast.Expression, env: dict) -> float:
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return float(env[node.id])
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigError("unsupported expression")
    return ev(tree)


# -- model section -----------------------------------------------------------------

def _read(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return cp


def load_generator_file(path) -> GeneratorModel:
    """CSV with a header of state labels, then one row of rates per state."""
    try:
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read generator file: {exc}") from None
    labels = parse_list(lines[0])
    try:
        q = np.array([[float(v) for v in parse_list(ln)] for ln in lines[1:]])
    except ValueError:
        raise ConfigError("generator file has a non-numeric rate") from None
    try:
        coords = [float(Fraction(lab)) for lab in labels]
        space = coordinate_space(coords, labels, compact_model=True)
    except (ValueError, ZeroDivisionError):
        m = len(labels)
        space = explicit_space(labels, 1.0 - np.eye(m))
    try:
        return GeneratorModel(GeneratorMatrix(space, q), name=Path(path).stem)
    except ValueError as exc:
        raise ConfigError(f"generator file: {exc}") from None


def build_entry(section, base_dir: Path) -> ZooEntry:
    keys = dict(section)
    if "generator" in keys:
        model = load_generator_file(base_dir / keys["generator"])
        return ZooEntry(model.name, {"generator": keys["generator"]}, model, model.invariant(), {})
    zoo_id = keys.pop("zoo", None)
    if zoo_id is None:
        raise ConfigError("[model] needs zoo = <id> or generator = <file>")
    if zoo_id not in ZOO_IDS:
        raise ConfigError(f"unknown zoo id {zoo_id!r}")
    params = {}
    for k, v in keys.items():
        if k in ("n_max", "n_states", "seed"):
            params[k] = int(parse_number(v, k))
        elif k == "horizon":
            params[k] = parse_number(v, k)
        else:
            raise ConfigError(f"[model]: unknown key {k!r}")
    try:
        return instantiate(zoo_id, **params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}") from None


# -- run configuration ---------------------------------------------------------------

def _point(entry: ZooEntry, text: str, key: str):
    space = entry.space
    if not space.is_finite:
        v = parse_number(text, key)
        if not space.contains(v):
            raise ConfigError(f"{key}: {v} outside the flow domain")
        return v
    try:
        space.index_of(text.strip())
    except KeyError:
        raise ConfigError(f"{key}: unknown point {text!r}") from None
    return text.strip()


def _parse_check(name: str, sec, entry: ZooEntry, seed: int, default_class: str | None) -> CheckSpec:
    keys = dict(sec)
    prop = keys.get("property")
    if prop not in CHECK_KEYS:
        raise ConfigError(f"[{name}]: unknown or missing property {prop!r}")
    unknown = set(keys) - CHECK_KEYS[prop] - COMMON_KEYS
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    expect = keys.get("expect")
    if expect is not None and expect not in VERDICTS:
        raise ConfigError(f"[{name}]: expect must be one of {VERDICTS}")
    fclass = keys.get("class", default_class)
    if fclass is not None and fclass not in CLASSES:
        raise ConfigError(f"[{name}]: class must be one of {CLASSES}")
    function = None
    if "function" in CHECK_KEYS[prop]:
        if "function" not in keys:
            raise ConfigError(f"[{name}]: function is required")
        try:
            function = resolve(keys["function"], entry.space if entry.space.is_finite else None)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    p = {}
    for k, v in keys.items():
        if k in COMMON_KEYS or k == "function":
            continue
        if k in ("z", "x", "x0"):
            p[k] = _point(entry, v, k)
        elif k in ("approach", "probes"):
            p[k] = [_point(entry, item, k) for item in parse_list(v)]
            if not p[k]:
                raise ConfigError(f"[{name}]: {k} is empty")
        elif k in ("times", "t_sequence", "deltas", "taus"):
            p[k] = parse_grid(v, k)
        elif k == "tail":
            if v not in ("stability-envelope", "none"):
                raise ConfigError(f"[{name}]: tail must be stability-envelope or none")
            p[k] = v
        elif k == "initials":
            p[k] = [item.strip() for item in v.split("|") if item.strip()]
            if not p[k]:
                raise ConfigError(f"[{name}]: initials is empty")
            for item in p[k]:
                if not item.startswith("random("):
                    _measure(entry, item, name)
        elif k == "initial":
            p[k] = _measure(entry, v, name)
        elif k in ("n", "k", "paths"):
            p[k] = int(parse_number(v, k))
        else:
            p[k] = parse_number(v, k)
    for k in ("epsilon", "r", "tol", "T", "t"):
        if k in p and (p[k] < 0 or (k in ("epsilon", "r") and p[k] == 0)):
            raise ConfigError(f"[{name}]: {k} must be positive")
    if "alpha" in p and not 0 < p["alpha"] < 1:
        raise ConfigError(f"[{name}]: alpha must lie in (0, 1)")
    if "deltas" in p and np.any(p["deltas"] <= 0):
        raise ConfigError(f"[{name}]: deltas must be positive")
    if "taus" in p and np.any(p["taus"] < 0):
        raise ConfigError(f"[{name}]: taus must be nonnegative")
    required = {"feller": ("t", "z"), "stochastic_continuity_zero": ("x",), "e_property": ("z", "epsilon"),
                "eventual_e_property": ("z", "epsilon"), "interval_e_property": ("z", "T"),
                "lemma1": ("epsilon",), "alpha_split": ("x0", "z", "r", "alpha", "epsilon"),
                "cross_check": ("n",), "simulate": ("initial", "t")}.get(prop, ())
    missing = [k for k in required if k not in p]
    if missing:
        raise ConfigError(f"[{name}]: missing {missing}")
    return CheckSpec(name, prop, p, function, fclass, expect, derive_seed(seed, name))


def _measure(entry, text, name):
    try:
        return parse_measure(entry.space, text)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{name}]: bad measure {text!r}: {exc}") from None


def load_run_config(path, default_class: str | None = None) -> RunConfig:
    cp = _read(path)
    if not cp.has_section("model"):
        raise ConfigError("config needs a [model] section")
    entry = build_entry(cp["model"], Path(path).resolve().parent)
    run = dict(cp["run"]) if cp.has_section("run") else {}
    seed = int(parse_number(run.get("seed", "0"), "seed"))
    checks = [_parse_check(s, cp[s], entry, seed, default_class)
              for s in cp.sections() if s not in RESERVED]
    if not checks:
        raise ConfigError("config has no check sections")
    return RunConfig(entry, seed, checks, run.get("out"))


# -- sweep configuration ---------------------------------------------------------------

def parse_range(text: str, key: str) -> np.ndarray | None:
    """``a..b`` (inclusive integers) or a grid; None when ``text`` is an expression."""
    s = text.strip()
    if ".." in s:
        a, b = s.split("..", 1)
        lo, hi = int(parse_number(a, key)), int(parse_number(b, key))
        return np.arange(lo, hi + 1, dtype=float)
    if s.startswith(("geometric(", "linspace(")) or "," in s:
        return parse_grid(s, key)
    return None


def _parse_sweep(name: str, sec, entry: ZooEntry) -> SweepSpec:
    keys = dict(sec)
    q = keys.pop("quantity", None)
    if q not in SWEEP_QUANTITIES:
        raise ConfigError(f"[{name}]: quantity must be one of {SWEEP_QUANTITIES}")
    swept, exprs = {}, {}
    for k in list(keys):
        if k in SWEEP_PARAMS:
            rng = parse_range(keys[k], k)
            if rng is not None:
                swept[k] = rng
            else:
                exprs[k] = keys[k]
            del keys[k]
    if len(swept) > 2:
        raise ConfigError(f"[{name}]: at most two swept parameters, got {sorted(swept)}")
    names = set(swept)
    for k in ("x", "z"):
        if k in keys:
            exprs[k] = keys.pop(k)
    compiled = {}
    for k, text in exprs.items():
        if k in ("x", "z") and not _mentions(text, names):
            compiled[k] = _point(entry, text, k)
            continue
        compiled[k] = compile_expression(text, names)
    function = None
    if "function" in keys:
        try:
            function = resolve(keys.pop("function"), entry.space if entry.space.is_finite else None)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    target = None
    if "target" in keys:
        target = _measure(entry, keys.pop("target"), name)
    if keys:
        raise ConfigError(f"[{name}]: unknown keys {sorted(keys)}")
    needs = {"gap": ("x", "z", "t"), "dual": ("x", "t"), "bl": ("x", "t"), "modulus": ("z", "delta", "tau")}[q]
    missing = [k for k in needs if k not in compiled and k not in swept]
    if missing:
        raise ConfigError(f"[{name}]: missing {missing}")
    if q in ("gap", "dual", "modulus") and function is None:
        raise ConfigError(f"[{name}]: function is required")
    if q == "bl" and target is None:
        raise ConfigError(f"[{name}]: target measure is required")
    return SweepSpec(name, q, swept, compiled, function, target)


def _mentions(text: str, names) -> bool:
    """Whether ``text`` refers to any swept parameter."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        return False
    return any(isinstance(n, ast.Name) and n.id in names for n in ast.walk(tree))


def load_sweep_config(path) -> SweepConfig:
    cp = _read(path)
    if not cp.has_section("model"):
        raise ConfigError("config needs a [model] section")
    entry = build_entry(cp["model"], Path(path).resolve().parent)
    run = dict(cp["run"]) if cp.has_section("run") else {}
    sweeps = [_parse_sweep(s, cp[s], entry) for s in cp.sections() if s not in RESERVED]
    if not sweeps:
        raise ConfigError("config has no sweep sections")
    return SweepConfig(entry, sweeps, run.get("out"))
