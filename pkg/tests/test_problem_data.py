from __future__ import annotations

import numpy as np
import pytest

from kphalf.errors import GridDataMalformed, ParseError, UnknownFamily
from kphalf.problem_data import ZeroField, compatibility_check, dump_scenario, load_scenario

BASE = """
[scenario]
name = demo
T = 1.0

[initial]
family = gaussian
profile = exponential
rate = 1.0

[boundary_g]
family = gaussian
profile = gaussian
rate = 0.5

[physical_grid]
x = -1, 1, 3
y = 0, 1, 2
t = 0, 1
"""


def test_load_basic_scenario():
    s = load_scenario(BASE)
    assert s.name == "demo" and s.T == 1.0
    assert s.physical_grid.xs.tolist() == [-1.0, 0.0, 1.0]
    assert s.physical_grid.ts.tolist() == [0.0, 1.0]
    assert abs(s.initial.eval(0.0, 1.0) - np.exp(-1.0)) < 1e-15
    assert abs(s.boundary.g(1.0, 2.0) - np.exp(-1.0) * np.exp(-1.0)) < 1e-15
    assert s.boundary.h(0.3, 0.2) == 0.0


def test_missing_T_is_rejected():
    with pytest.raises(ParseError):
        load_scenario("[scenario]\nname = a\n")


def test_unknown_family_is_rejected():
    with pytest.raises(UnknownFamily):
        load_scenario("[scenario]\nT = 1\n[initial]\nfamily = lorentzian\n")


def test_unknown_key_is_rejected():
    with pytest.raises(ParseError):
        load_scenario("[scenario]\nT = 1\n[quadrature]\nbogus = 3\n")


def test_times_beyond_horizon_are_rejected():
    with pytest.raises(ParseError):
        load_scenario("[scenario]\nT = 0.5\n[physical_grid]\nt = 0, 1\n")


def test_overrides_apply():
    s = load_scenario(BASE, overrides={"scenario.T": "2.5", "quadrature.truncation_radius": "12"})
    assert s.T == 2.5
    assert s.quadrature.truncation_radius == 12.0


def test_dump_round_trip():
    s = load_scenario(BASE)
    again = load_scenario(dump_scenario(s))
    assert again.T == s.T and again.physical_grid == s.physical_grid


def test_zero_family_has_exact_zero_field():
    s = load_scenario("[scenario]\nT = 1\n[initial]\nfamily = zero\n")
    assert isinstance(s.exact, ZeroField)
    assert np.all(s.exact.q(np.ones(3), 0.0, 0.5) == 0)


def test_scaled_scenario_scales_everything():
    s = load_scenario("[scenario]\nT = 1\n[initial]\nfamily = linear_wavepacket\n")
    sc = s.scaled(1e-2)
    x, y, t = 0.3, 0.7, 0.05
    assert sc.epsilon == 1e-2
    assert abs(sc.initial.eval(x, y) - 1e-2 * s.initial.eval(x, y)) < 1e-16
    assert abs(sc.boundary.h(x, t) - 1e-2 * s.boundary.h(x, t)) < 1e-16
    assert abs(sc.exact.q(x, y, t) - 1e-2 * s.exact.q(x, y, t)) < 1e-16
    assert abs(sc.exact.q_x(x, y, t) - 1e-2 * s.exact.q_x(x, y, t)) < 1e-16


def test_wavepacket_is_compatible_at_the_corner():
    s = load_scenario("[scenario]\nT = 1\n[initial]\nfamily = linear_wavepacket\n"
                      "[physical_grid]\nx = -3, 3, 13\n")
    checks = {c["name"]: c["value"] for c in compatibility_check(s)}
    assert checks["dirichlet_corner"] < 1e-12
    assert checks["neumann_corner"] < 1e-5


def test_wavepacket_solves_linear_equation():
    wp = load_scenario("[scenario]\nT = 1\n[initial]\nfamily = linear_wavepacket\n").exact
    x = np.linspace(-2, 2, 5)
    y, t = 0.8, 0.3
    # differentiated form avoids the nonlocal term: (q_t + q_xxx)_x + 3 q_yy = 0
    h = 1e-3
    lhs = (wp.q_t(x + h, y, t) + wp.q_xxx(x + h, y, t) - wp.q_t(x - h, y, t) - wp.q_xxx(x - h, y, t)) / (2 * h)
    res = lhs + 3 * wp.q_yy(x, y, t)
    assert np.max(np.abs(res)) < 1e-4 * max(1.0, np.max(np.abs(wp.q_yy(x, y, t))))


def test_sampled_family(tmp_path):
    xs = np.linspace(-2, 2, 9)
    ys = np.linspace(0, 2, 5)
    rows = ["x,y,value"] + [f"{a},{b},{np.exp(-a * a - b)}" for a in xs for b in ys]
    (tmp_path / "q0.csv").write_text("\n".join(rows) + "\n")
    s = load_scenario("[scenario]\nT = 1\n[initial]\nfamily = sampled\nfile = q0.csv\n",
                      base_dir=str(tmp_path))
    assert abs(s.initial.eval(0.0, 0.5) - np.exp(-0.5)) < 1e-2
    assert s.initial.eval(5.0, 0.5) == 0.0


def test_sampled_family_bad_header(tmp_path):
    (tmp_path / "q0.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(GridDataMalformed):
        load_scenario("[scenario]\nT = 1\n[initial]\nfamily = sampled\nfile = q0.csv\n",
                      base_dir=str(tmp_path))
