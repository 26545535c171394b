from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kphalf.cli import emit_plot_data, write_field_csv
from kphalf.kpii_direct import KPIIData, solve_mu
from kphalf.kpii_inverse import SpectralNodes, cell_cauchy, segment_cauchy_weights
from kphalf.linear_spectral import omega
from kphalf.problem_data import load_scenario
from kphalf.quadrature import exp_moments, running_exp_integral

real = st.floats(-5, 5, allow_nan=False)
nonzero = st.floats(0.1, 5).flatmap(lambda v: st.sampled_from([v, -v]))


@given(nonzero, real, real)
def test_dispersion_is_even_in_second_wavenumber(k1, a, b):
    k2 = complex(a, b)
    assert omega(k1, -k2) == omega(k1, k2)


@given(nonzero, real)
def test_dispersion_is_imaginary_for_real_arguments(k1, k2):
    assert omega(k1, k2).real == 0


@given(st.complex_numbers(max_magnitude=30, allow_nan=False, allow_infinity=False))
def test_exp_moment_recursion(z):
    m = exp_moments(np.array([z]), 3)[:, 0]
    # integration by parts: z m_n = e^z - n m_{n-1}
    for n in range(1, 4):
        assert abs(z * m[n] - (np.exp(z) - n * m[n - 1])) <= 1e-9 * max(1.0, abs(np.exp(z)))


@given(st.floats(-3, 0), st.floats(-3, 3), st.floats(-3, 3))
def test_running_integral_is_linear(re_z, im_z, c):
    nodes = np.linspace(0, 1, 11)
    f, g = np.sin(3 * nodes), np.exp(-nodes)
    z = np.array([complex(re_z, im_z)])
    lhs = running_exp_integral(nodes, (f + c * g)[None, :], z, "backward")
    rhs = (running_exp_integral(nodes, f[None, :], z, "backward")
           + c * running_exp_integral(nodes, g[None, :], z, "backward"))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + abs(c))


@given(st.floats(-2, 2), st.floats(0.6, 3))
def test_cell_integrals_are_additive(kr, ki):
    k = complex(kr, ki)
    whole = cell_cauchy(k, -1.0, 1.0, -0.5, 0.5)
    parts = cell_cauchy(k, -1.0, 0.2, -0.5, 0.5) + cell_cauchy(k, 0.2, 1.0, -0.5, 0.5)
    assert abs(whole - parts) < 1e-12


@given(st.floats(-2, 2), st.floats(0.01, 3).flatmap(lambda v: st.sampled_from([v, -v])))
def test_segment_weights_reproduce_constants(kr, ki):
    nodes = np.linspace(-1, 1, 7)
    k = complex(kr, ki)
    exact = np.log((1 - k) / (-1 - k))
    assert abs(segment_cauchy_weights(nodes, k)[0].sum() - exact) < 1e-12


@given(st.integers(1, 4), st.integers(1, 4))
def test_node_reflection_is_an_involution(nr, ni):
    s = load_scenario("[scenario]\nT = 0.1\n[physical_grid]\nt = 0, 0.1\n",
                      overrides={"inverse_grid.r_max": str(0.3 * nr), "inverse_grid.r_step": "0.3",
                                 "inverse_grid.radius": str(0.3 * ni), "inverse_grid.i_step": "0.3",
                                 "inverse_grid.jump_step": "0.3"})
    nodes = SpectralNodes.from_scenario(s)
    assert np.array_equal(nodes.refl[nodes.refl], np.arange(nodes.nu.size))
    assert np.allclose(nodes.nu[nodes.refl], -np.conj(nodes.nu))


@settings(max_examples=20, deadline=None)
@given(st.permutations(list(range(6))))
def test_plot_data_order_ignores_input_order(tmp_path_factory, perm):
    d = tmp_path_factory.mktemp("plot")
    x = np.array([0.0, 0.0, 1.0, 1.0, 2.0, 2.0])
    y = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    v = x * 10 + y
    p = np.array(perm)
    write_field_csv(str(d / "a.csv"), x, y, np.zeros(6), v)
    write_field_csv(str(d / "b.csv"), x[p], y[p], np.zeros(6), v[p])
    emit_plot_data([str(d / "a.csv")], str(d / "a.dat"))
    emit_plot_data([str(d / "b.csv")], str(d / "b.dat"))
    body = [ln for ln in (d / "a.dat").read_text().splitlines() if not ln.startswith("#")]
    other = [ln for ln in (d / "b.dat").read_text().splitlines() if not ln.startswith("#")]
    assert body == other


@pytest.fixture(scope="module")
def small_packet():
    s = load_scenario("[scenario]\nT = 0.1\n[initial]\nfamily = linear_wavepacket\n"
                      "[physical_grid]\nt = 0, 0.1\n").scaled(1e-3)
    return s, KPIIData(s)


@settings(max_examples=4, deadline=None)
@given(st.floats(0.15, 1.2), st.floats(0.15, 1.2), st.booleans())
def test_eigenfunction_conjugation_symmetry(small_packet, kr, ki, upper):
    s, data = small_packet
    sgn = 1 if upper else -1
    right = solve_mu("Q1" if upper else "Q4", kr, sgn * ki, s, data=data)
    left = solve_mu("Q2" if upper else "Q3", -kr, sgn * ki, s, data=data)
    assert np.abs(left.samples - np.conj(right.samples)).max() < 1e-12
