from __future__ import annotations

import numpy as np
import pytest

from kphalf.errors import DomainViolation, OverflowRisk
from kphalf.kpii_direct import KPIIData, solve_rho
from kphalf.kpii_spectral import (alpha_value, beta_value, boundary_phi_minus, build_jump_kernels,
                                  global_relation_residual_kpii, lambda_grids, linear_alpha,
                                  linear_beta, linear_p1, p1_values, solve_jump_densities)
from kphalf.problem_data import load_scenario

ROOT = __file__.rsplit("/tests/", 1)[0]
PACKET = "[scenario]\nT = 0.1\n[initial]\nfamily = linear_wavepacket\n[physical_grid]\nt = 0, 0.05, 0.1\n"


def _scenario(name):
    with open(f"{ROOT}/scenarios/{name}") as fh:
        return load_scenario(fh.read())


@pytest.fixture(scope="module")
def packet():
    return load_scenario(PACKET)


def test_lambda_grids_pair_partners():
    for kR, system in ((-0.4, "chi"), (0.3, "psi")):
        lam2, lam1 = lambda_grids(kR, 0.05, 1.0, system)
        assert np.allclose(-2 * kR - lam2, lam1, atol=1e-14)


@pytest.mark.parametrize("kR", [-0.6, 0.4])
def test_densities_reduce_to_boundary_kernel_without_initial_data(kR):
    s = _scenario("boundary_only.ini")
    data = KPIIData(s)
    phi = boundary_phi_minus(data, kR)
    kern = build_jump_kernels(s, kR, data, phi1_minus=phi, step=0.1, extent=2.0)
    dens = solve_jump_densities(kern)
    assert np.abs(kern.r1).max() == 0 and np.abs(kern.r2).max() == 0
    p2 = p1_values(data, kR, -2 * kR - dens.lam2, phi)
    p1 = p1_values(data, kR, -2 * kR - dens.lam1, phi)
    assert np.abs(dens.X2 - p2).max() <= 1e-10 and np.abs(dens.X1 - p1).max() <= 1e-10
    assert np.abs(p1).max() > 1e-6


def test_printed_psi_equations_overflow(packet):
    s = packet.scaled(1e-3)
    data = KPIIData(s)
    with pytest.raises(OverflowRisk):
        build_jump_kernels(s, 0.5, data, step=0.1, extent=2.0, psi_form="printed")


def test_scattering_data_approach_linear_transforms(packet):
    devs = []
    for eps in (1e-3, 5e-4):
        data = KPIIData(packet.scaled(eps))
        k = -0.7 - 0.4j
        sol = solve_rho("-", k.real, k.imag, data=data)
        b, bl = beta_value(data, k, sol.rho.samples[:, :, 0]), linear_beta(data, k)
        a, al = alpha_value(data, k, sol.phi.samples), linear_alpha(data, k)
        devs.append((abs(b - bl) / abs(bl), abs(a - al) / abs(al)))
    assert 0.4 <= devs[1][0] / devs[0][0] <= 0.6
    assert devs[1][1] < devs[0][1]


def test_boundary_kernel_approaches_linear_kernel(packet):
    data = KPIIData(packet.scaled(1e-3))
    l = np.linspace(-3, 3, 13)
    pv = p1_values(data, -0.5, l, boundary_phi_minus(data, -0.5))
    pl = linear_p1(data, -0.5, l)
    assert np.abs(pv - pl).max() < 1e-2 * np.abs(pl).max()


def test_nonlinear_global_relation(packet):
    # linear-equation data miss the nonlinear equation at second order in the amplitude;
    # the quadrature error is first order, so the residual decays faster than linearly
    for k, l in ((-1.0 + 0.5j, 0.5), (0.8 - 0.6j, -1.0)):
        res = [abs(global_relation_residual_kpii(l, k, 0.1, data=KPIIData(packet.scaled(e)))[0])
               for e in (1e-3, 5e-4)]
        assert res[0] <= 1e-4
        assert res[1] / res[0] < 0.45


def test_global_relation_domain(packet):
    data = KPIIData(packet.scaled(1e-3))
    with pytest.raises(DomainViolation):
        global_relation_residual_kpii(2.0, -0.5 + 0.2j, 0.1, data=data)
