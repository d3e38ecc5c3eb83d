import math

import numpy as np
import pytest

from semigroup_lab.config import (ConfigError, compile_expression, derive_seed, evaluate, load_generator_file,
                                  load_run_config, load_sweep_config, parse_grid, parse_number, parse_range)


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_parse_number():
    assert parse_number("1/4") == 0.25
    assert parse_number(" 2e-3 ") == 0.002
    for bad in ("x", "1/0", "inf", "nan"):
        with pytest.raises(ConfigError):
            parse_number(bad)


def test_parse_grid_forms():
    g = parse_grid("geometric(1e-3, 10, 8)")
    assert g[0] == 0.0 and g[1] == pytest.approx(1e-3) and g[-1] == pytest.approx(10.0)
    assert np.array_equal(parse_grid("linspace(0, 1, 5)"), np.linspace(0, 1, 5))
    assert np.array_equal(parse_grid("1, 1/2, 3"), [1.0, 0.5, 3.0])
    for bad in ("linspace(0, 1, 0)", "linspace(0, 1)", "geometric(1, 0.5, 4)", ""):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(7, "a") == derive_seed(7, "a")
    assert derive_seed(7, "a") != derive_seed(7, "b")
    assert derive_seed(7, "a") != derive_seed(8, "a")


def test_expressions_are_whitelisted():
    e = compile_expression("exp(-n * t) / (1 + n)", {"n", "t"})
    assert evaluate(e, {"n": 2.0, "t": 0.5}) == pytest.approx(math.exp(-1) / 3)
    for bad in ("__import__('os')", "n.real", "open('x')", "m + 1", "[n]"):
        with pytest.raises(ConfigError):
            compile_expression(bad, {"n"})


def test_parse_range():
    assert np.array_equal(parse_range("2..5", "n"), [2, 3, 4, 5])
    assert parse_range("1/n", "t") is None


def test_run_config_parses_checks(tmp_path):
    p = write(tmp_path, """
[run]
seed = 3
[model]
zoo = example1
n_max = 50
[feller_0]
property = feller
function = identity
t = 1
z = 0
expect = supported
[stab]
property = asymptotic_stability
initials = 1/3 | random(2)
""")
    cfg = load_run_config(p)
    assert cfg.seed == 3 and [c.name for c in cfg.checks] == ["feller_0", "stab"]
    assert cfg.checks[0].params == {"t": 1.0, "z": "0"}
    assert cfg.checks[1].params["initials"] == ["1/3", "random(2)"]
    assert cfg.checks[0].seed == derive_seed(3, "feller_0")


@pytest.mark.parametrize("body, message", [
    ("property = feller\nfunction = identity\nt = 1", "missing"),
    ("property = feller\nfunction = identity\nt = 1\nz = 1/77", "unknown point"),
    ("property = feller\nfunction = nope\nt = 1\nz = 0", "unknown test function"),
    ("property = flying\n", "property"),
    ("property = feller\nfunction = identity\nt = 1\nz = 0\ncolour = red", "unknown keys"),
    ("property = feller\nfunction = identity\nt = 1\nz = 0\nexpect = maybe", "expect"),
    ("property = feller\nfunction = identity\nt = 1\nz = 0\nclass = Lp", "class"),
    ("property = e_property\nfunction = identity\nz = 0\nepsilon = 0", "positive"),
    ("property = alpha_split\nfunction = identity\nx0 = 0\nz = 1\nr = 0.4\nalpha = 1\nepsilon = 0.1", "alpha"),
    ("property = eventual_e_property\nfunction = identity\nz = 0\nepsilon = 0.1\ntaus = linspace(0, 1, 0)", "count"),
    ("property = strong_continuity\nfunction = identity\nprobes = ,", "empty"),
])
def test_run_config_errors(tmp_path, body, message):
    p = write(tmp_path, f"[model]\nzoo = example1\nn_max = 20\n[check]\n{body}\n")
    with pytest.raises(ConfigError, match=message):
        load_run_config(p)


def test_model_section_errors(tmp_path):
    for model, message in [("zoo = nowhere", "unknown zoo"), ("zoo = example1\nn_max = 1", "n_max"),
                           ("zoo = example1\nwidth = 3", "unknown key"), ("", "needs zoo")]:
        p = write(tmp_path, f"[model]\n{model}\n[c]\nproperty = lemma1\nfunction = identity\nepsilon = 0.1\n")
        with pytest.raises(ConfigError, match=message):
            load_run_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError, match="no check"):
        load_run_config(write(tmp_path, "[model]\nzoo = example1\n"))


def test_generator_file(tmp_path):
    write(tmp_path, "a,b,c\n-1,1,0\n0.5,-1,0.5\n0,2,-2\n", "q.csv")
    model = load_generator_file(tmp_path / "q.csv")
    assert model.space.labels == ["a", "b", "c"]
    assert model.invariant() is not None
    write(tmp_path, "0,1\n-1,1\n1,0\n", "bad.csv")
    with pytest.raises(ConfigError, match="sum to zero"):
        load_generator_file(tmp_path / "bad.csv")
    p = write(tmp_path, "[model]\ngenerator = q.csv\n[s]\nproperty = strong_continuity\nfunction = a=0;b=1;c=2\n")
    cfg = load_run_config(p)
    assert cfg.entry.id == "q"


def test_sweep_config(tmp_path):
    p = write(tmp_path, """
[model]
zoo = example2
n_max = 20
[gap]
quantity = gap
function = capped_identity
n = 2..20
t = 1/n
x = 1/n
z = 0
[bl]
quantity = bl
t = linspace(0, 2, 3)
x = 1/3
target = 1
""")
    cfg = load_sweep_config(p)
    gap, bl = cfg.sweeps
    assert list(gap.swept) == ["n"] and set(gap.exprs) == {"t", "x", "z"}
    assert gap.exprs["z"] == "0"
    assert bl.target.weight("1") == 1.0


@pytest.mark.parametrize("body, message", [
    ("quantity = speed", "quantity"),
    ("quantity = gap\nfunction = identity\nn = 2..5\nt = 1..3\ndelta = 1..2\nx = 1/n\nz = 0", "at most two"),
    ("quantity = gap\nfunction = identity\nx = 0\nz = 0", "missing"),
    ("quantity = bl\nx = 0\nt = 1", "target"),
    ("quantity = gap\nx = 0\nz = 0\nt = 1", "function"),
    ("quantity = dual\nfunction = identity\nx = 0\nt = 1\nwhat = 2", "unknown keys"),
])
def test_sweep_config_errors(tmp_path, body, message):
    p = write(tmp_path, f"[model]\nzoo = example2\nn_max = 10\n[s]\n{body}\n")
    with pytest.raises(ConfigError, match=message):
        load_sweep_config(p)
