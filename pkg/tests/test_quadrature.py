from __future__ import annotations

import math

import numpy as np
import pytest

from kphalf.errors import NonConvergence
from kphalf.quadrature import (ContourPath, IntegrationSpec, antiderivative_x, exp_moments,
                               gauss_panels, integrate_contour, integrate_line, integrate_plane,
                               running_exp_integral, running_exp_matrix)


def test_gaussian_line_integral():
    rep = integrate_line(lambda x: np.exp(-x * x), -math.inf, math.inf)
    assert abs(rep.value - math.sqrt(math.pi)) < 1e-10
    assert rep.err_estimate < 1e-8


def test_oscillatory_line_integral():
    # int_0^10 cos(30 x) dx = sin(300) / 30
    rep = integrate_line(lambda x: np.cos(30 * x), 0.0, 10.0, frequency=30.0)
    assert abs(rep.value - math.sin(300) / 30) < 1e-10


def test_refinement_budget_exhausted():
    spec = IntegrationSpec(max_refinements=0, panel_count=2, rel_tol=1e-14, abs_tol=1e-16)
    with pytest.raises(NonConvergence):
        integrate_line(lambda x: np.sin(200 * x) * np.exp(x), 0.0, 3.0, spec)


def test_contour_integral_of_pole():
    # counter-clockwise square around 0: int dz / z = 2 pi i
    path = ContourPath.polyline([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j], closed=True)
    rep = integrate_contour(lambda z: 1 / z, path)
    assert abs(rep.value - 2j * math.pi) < 1e-10


def test_contour_ray_to_infinity():
    # int_0^{i inf} exp(i z) dz = i
    rep = integrate_contour(lambda z: np.exp(1j * z), ContourPath.ray(0.0, 1j))
    assert abs(rep.value - 1j) < 1e-9


def test_plane_integral():
    rep = integrate_plane(lambda x, y: np.exp(-x * x - y), (-math.inf, math.inf), (0.0, math.inf))
    assert abs(rep.value - math.sqrt(math.pi)) < 1e-8


def test_antiderivative_of_gaussian():
    xs = np.array([-1.0, 0.0, 2.0])
    vals = antiderivative_x(lambda x: np.exp(-x * x), xs)
    ref = [0.5 * math.sqrt(math.pi) * (1 + math.erf(v)) for v in xs]
    assert np.max(np.abs(vals - ref)) < 1e-9


def test_gauss_panels_integrate_polynomials():
    x, w = gauss_panels([0.0, 1.0, 3.0], order=4, panels=[1, 2])
    assert abs(np.sum(w * x**7) - 3**8 / 8) < 1e-9


def test_exp_moments_small_and_large():
    for z in (1e-9, 0.3 - 2j, 40j, -25.0):
        ref = [complex(np.sum(w * np.exp(z * s) * s**n)) for n in range(4)
               for s, w in [gauss_panels([0, 1], 30, 8)]]
        assert np.max(np.abs(exp_moments(np.array(z), 3) - ref)) < 1e-12


def test_running_exp_integral_matches_matrix():
    nodes = np.linspace(0, 2, 21)
    z = np.array([-1.5 + 3j, -0.2])
    f = np.cos(nodes)[None, :] * np.ones((2, 1))
    fwd = running_exp_integral(nodes, f, z, "forward")
    M = running_exp_matrix(nodes, z, "forward")
    via_matrix = np.einsum("lab,lb->la", M, f)
    assert np.max(np.abs(fwd - via_matrix)) < 1e-13


def test_running_exp_integral_exact_value():
    nodes = np.linspace(0, 1, 41)
    z = -2.0 + 5j
    f = np.exp(-nodes)[None, :]
    total = running_exp_integral(nodes, f, np.array([z]), "backward")[0, 0]
    ref = (np.exp(z - 1) - 1) / (z - 1)
    assert abs(total - ref) < 1e-7
