from __future__ import annotations

import numpy as np
import pytest

from kphalf.errors import DomainViolation
from kphalf.kpii_direct import KPIIData, exponent_w, exponent_z, lax_residual, solve_mu, solve_rho
from kphalf.problem_data import load_scenario

PACKET = "[scenario]\nT = 0.1\n[initial]\nfamily = linear_wavepacket\n[physical_grid]\nt = 0, 0.05, 0.1\n"
ZERO = "[scenario]\nT = 0.1\n[physical_grid]\nt = 0, 0.1\n"


@pytest.fixture(scope="module")
def packet():
    s = load_scenario(PACKET).scaled(1e-3)
    return s, KPIIData(s)


def test_exponents():
    k, l = 0.3 + 0.4j, 1.1
    assert exponent_z(k, l) == l * (l + 2 * k)
    assert abs(exponent_w(k, l) - 4j * l * (l * l + 3 * k * l + 3 * k * k)) < 1e-15


def test_zero_data_give_unit_eigenfunctions():
    s = load_scenario(ZERO)
    mu = solve_mu("Q3", -0.4, -0.7, s)
    assert np.all(mu.samples == 1)
    rho = solve_rho("-", 0.5, -0.2, s)
    assert np.all(rho.rho.samples == 1) and np.all(rho.phi.samples == 1)


def test_quadrant_is_enforced():
    s = load_scenario(ZERO)
    with pytest.raises(DomainViolation):
        solve_mu("Q1", -0.5, 0.5, s)
    with pytest.raises(DomainViolation):
        solve_rho("+", 0.5, -0.5, s)


def test_small_data_contract(packet):
    s, data = packet
    mu = solve_mu("Q2", -0.6, 0.5, s, data=data)
    assert mu.contraction < 0.5
    assert mu.self_residual < 1e-8
    assert 0 < np.abs(mu.samples - 1).max() < 1e-2


def test_deviation_from_one_is_linear_in_amplitude(packet):
    s, data = packet
    half = s.scaled(0.5)
    a = solve_mu("Q4", 0.5, -0.4, s, data=data)
    b = solve_mu("Q4", 0.5, -0.4, half, data=KPIIData(half))
    ratio = np.abs(b.samples - 1).max() / np.abs(a.samples - 1).max()
    assert abs(ratio - 0.5) < 0.1


def test_conjugation_symmetry(packet):
    s, data = packet
    right = solve_mu("Q1", 0.7, 0.3, s, data=data)
    left = solve_mu("Q2", -0.7, 0.3, s, data=data)
    assert np.abs(left.samples - np.conj(right.samples)).max() < 1e-12


def test_lax_pair_residual_is_small_and_consistent(packet):
    s, data = packet
    mu = solve_mu("Q2", -0.6, 0.5, s, data=data)
    scale = np.abs(mu.samples - 1).max()
    r1, coarse = lax_residual(mu, s.exact, s, hx=0.1)
    _, fine = lax_residual(mu, s.exact, s, hx=0.05)
    assert r1 < 0.01 * scale
    # the time equation is limited by its third-order x stencil
    assert fine < coarse / 3 and fine < 0.05 * scale
