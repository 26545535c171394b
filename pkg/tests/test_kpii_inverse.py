from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from kphalf.errors import CauchyKernelTooClose, ConfigError, ContractionFailure
from kphalf.kpii_inverse import (PompeiuOperator, SpectralNodes, SpectralTables, area_weights,
                                 build_tables, cell_cauchy, jump_weights, linear_tables,
                                 reconstruct_q, segment_cauchy_weights, solve_inverse,
                                 trivial_solution)
from kphalf.problem_data import load_scenario

SMALL = """
[scenario]
T = 0.1
[initial]
family = {family}
[physical_grid]
x = -1, 1, 3
y = 0, 1, 2
t = 0, 0.1
[kpii_grid]
lambda_extent = 1.0
[inverse_grid]
r_max = 0.6
r_step = 0.3
i_step = 0.3
radius = 0.9
jump_step = 0.3
"""


def _small(family="zero"):
    return load_scenario(SMALL.format(family=family))


@pytest.mark.parametrize("k", [2.0 + 1.5j, 0.3 + 0.2j, -0.4 + 0.05j])
def test_cell_cauchy_matches_quadrature(k):
    r0, r1, i0, i1 = 0.0, 0.5, 0.0, 0.4

    def part(f):
        return dblquad(lambda v, u: f(1 / (u + 1j * v - k)), r0, r1, i0, i1, epsabs=1e-12)[0]

    ref = part(np.real) + 1j * part(np.imag)
    tol = 1e-9 if not (r0 < k.real < r1 and i0 < k.imag < i1) else 1e-5
    assert abs(cell_cauchy(k, r0, r1, i0, i1) - ref) < tol


def test_segment_weights_integrate_linear_functions():
    nodes = np.linspace(-1, 1, 9)
    k = 0.37 + 0.8j
    f = 2 * nodes - 0.5
    ref = quad(lambda u: np.real((2 * u - 0.5) / (u - k)), -1, 1, epsabs=1e-13)[0] \
        + 1j * quad(lambda u: np.imag((2 * u - 0.5) / (u - k)), -1, 1, epsabs=1e-13)[0]
    assert abs(segment_cauchy_weights(nodes, k)[0] @ f - ref) < 1e-12


def test_nodes_are_mirror_symmetric():
    nodes = SpectralNodes.from_scenario(_small())
    assert np.allclose(nodes.nu[nodes.refl], -np.conj(nodes.nu))
    assert np.all(nodes.sign * np.sign(nodes.nu.real) < 0)
    assert nodes.jump_nu.tolist() == pytest.approx([-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9])
    assert nodes.nu.size == 4 * 6


def test_misaligned_jump_step_is_rejected():
    s = load_scenario(SMALL.format(family="zero"), overrides={"inverse_grid.jump_step": "0.33"})
    with pytest.raises(ConfigError):
        SpectralNodes.from_scenario(s)


def test_cauchy_kernel_guard():
    nodes = SpectralNodes.from_scenario(_small())
    with pytest.raises(CauchyKernelTooClose):
        jump_weights(nodes, [0.2 + 1e-4j])
    assert jump_weights(nodes, [0.2 + 0.1j]).shape == (1, nodes.jump_nu.size)


def test_area_weights_of_total_disk_match_sum_of_cells():
    nodes = SpectralNodes.from_scenario(_small())
    k = 3.0 + 2.0j
    w = area_weights(nodes, k)[0]
    r0, r1, i0, i1 = nodes.cells
    full = cell_cauchy(k, r0.min(), r1.max(), i0.min(), i1.max())
    # cells tile the rectangle; undo the per-cell sign and normalisation
    assert abs(np.sum(w * nodes.sign) * -np.pi - full) < 1e-12


def test_zero_data_reconstruct_zero():
    s = _small()
    tables = build_tables(s)
    assert np.all(tables.gamma == 0)
    assert all(np.all(d.X1 == 0) and np.all(d.X2 == 0) for d in tables.densities)
    sol = solve_inverse(PompeiuOperator.build(tables), s)
    assert np.all(sol.U == 1) and np.all(sol.Ux == 0)
    rec = reconstruct_q(sol)
    assert np.all(rec.q == 0)


def test_linear_reconstruction_is_linear_in_tables():
    s = _small("linear_wavepacket").scaled(1e-3)
    tab = linear_tables(s)
    x, y, t = np.array([0.0, 0.5]), np.array([0.0, 0.5]), np.array([0.1, 0.0])
    a = reconstruct_q(trivial_solution(PompeiuOperator.build(tab), x, y, t), probe_tol=10, reality_tol=10)
    b = reconstruct_q(trivial_solution(PompeiuOperator.build(tab.scaled(3.0)), x, y, t),
                      probe_tol=10, reality_tol=10)
    assert np.allclose(b.q, 3 * a.q, rtol=1e-12, atol=1e-300)


def test_large_data_fail_to_contract():
    s = _small("linear_wavepacket").scaled(1e-3)
    tab = linear_tables(s)
    big = SpectralTables(tab.nodes, 1e6 * np.ones_like(tab.gamma), tab.densities)
    with pytest.raises(ContractionFailure):
        solve_inverse(PompeiuOperator.build(big), s)
