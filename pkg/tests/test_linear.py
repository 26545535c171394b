from __future__ import annotations

import numpy as np
import pytest

from kphalf.errors import DomainViolation, SingularPoint
from kphalf.linear_mu import DirectMu, dbar_finite_difference, dbar_linear_mu
from kphalf.linear_solver import (global_relation_check, pde_residual_linear, plane_wave,
                                  sample_global_relation_points, solve_linear)
from kphalf.linear_spectral import LinearTables, SpectralPoint, hat_q0, omega
from kphalf.problem_data import load_scenario

GAUSS = """
[scenario]
T = 0.5
[initial]
family = gaussian
profile = exponential
[physical_grid]
t = 0, 0.5
"""

PACKET = """
[scenario]
T = 0.1
[initial]
family = linear_wavepacket
[quadrature]
truncation_radius = 12
[spectral_grid]
nu_i_panels = 1200
[physical_grid]
x = -2, 2, 3
y = 0, 1, 3
t = 0, 0.05, 0.1
"""


@pytest.fixture(scope="module")
def packet():
    s = load_scenario(PACKET)
    return s, LinearTables(s, extra_times=[0.05])


def test_omega_values_and_notch():
    assert omega(1.0, 0.0) == -1j
    assert abs(omega(2.0, 1.0) - (-8j + 1.5j)) < 1e-15
    with pytest.raises(SingularPoint):
        omega(1e-4, 1.0)


def test_spectral_point_round_trip():
    p = SpectralPoint.from_nu(0.7, -0.3 + 0.2j)
    assert abs(p.nu_r - 0.7) < 1e-15 and abs(p.nu_i - (-0.3 + 0.2j)) < 1e-15


def test_hat_q0_requires_lower_half_plane():
    s = load_scenario(GAUSS)
    with pytest.raises(DomainViolation):
        hat_q0(1.0, 0.5j, s)


def test_hat_q0_adaptive_vs_tables():
    s = load_scenario(GAUSS)
    k1, k2 = 1.3, 0.4 - 0.2j
    # exp(-x^2) exp(-y): closed form sqrt(pi) exp(-k1^2/4) / (1 + i k2)
    exact = np.sqrt(np.pi) * np.exp(-k1**2 / 4) / (1 + 1j * k2)
    point = hat_q0(k1, k2, s).value
    table = LinearTables(s).hat_q0(np.array([k1]), np.array([k2]))[0]
    assert abs(point - exact) < 1e-8
    assert abs(table - exact) < 1e-5


def test_zero_data_give_zero_solution():
    s = load_scenario("[scenario]\nT = 0.5\n[physical_grid]\nx = -1, 1, 3\ny = 0, 1, 2\nt = 0, 0.5\n")
    sol = solve_linear(s, "t_form")
    assert np.all(sol.values == 0)


def test_plane_wave_residual_is_second_order():
    q = plane_wave(2 * np.pi, np.pi)
    errs = []
    for n in (41, 81):
        xs = np.linspace(0, 1, n)
        ys = np.linspace(0, 1, n)
        ts = np.linspace(0, 1e-3, 5)
        errs.append(pde_residual_linear(q, (xs, ys, ts), origin="mean"))
    assert errs[0] / errs[1] >= 3.0


def test_global_relation_sampler_respects_growth():
    k1, k2 = sample_global_relation_points(20, np.random.default_rng(0), T=0.5)
    assert np.all(k2.imag <= 0)
    assert np.all(omega(k1, k2).real * 0.5 <= 2.0)


def test_global_relation_holds_for_packet(packet):
    s, tab = packet
    k1, k2 = sample_global_relation_points(4, np.random.default_rng(1), T=s.T)
    vals = global_relation_check(k1, k2, 0.05, s, tables=tab)
    for v in vals:
        assert abs(v.residual) <= 1e-6 + 10 * v.err_estimate


def test_linear_solution_matches_packet(packet):
    s, tab = packet
    xs, ys = np.array([-1.0, 0.5]), np.array([0.0, 0.7])
    sol = solve_linear(s, "t_form", xs, ys, [0.05], tables=tab, error_estimate=False)
    exact = s.exact.q(xs[:, None], ys[None, :], 0.05)
    assert np.max(np.abs(sol.values[0] - exact)) < 1e-4 * np.max(np.abs(s.exact.q(0.0, 1.0, 0.0)) + 1)


def test_mu_dbar_matches_finite_difference(packet):
    s, tab = packet
    x, y, t = 0.3, 0.5, 0.05
    mu = DirectMu(s, x, y, t, tables=tab)
    kR, kI = -0.8, 0.6
    fd = dbar_finite_difference(lambda a, b: mu.value(a, b, "1+", error=False).value, kR, kI)
    exact = dbar_linear_mu(x, y, t, kR, kI, s, tab)
    assert abs(fd.value - exact) <= 10 * fd.err_estimate + 1e-8


def test_mu_correction_of_zero_data_vanishes():
    s = load_scenario("[scenario]\nT = 0.5\n[physical_grid]\nt = 0, 0.5\n")
    mu = DirectMu(s, 0.1, 0.2, 0.25)
    assert mu.value(-0.5, 0.4).value == 0
