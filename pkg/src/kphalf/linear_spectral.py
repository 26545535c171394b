"""Transforms and kernels of the linear problem.

Point evaluations (``hat_q0``, ``tilde_g`` ...) use the adaptive quadrature
engine. ``LinearTables`` evaluates the same transforms on whole arrays of
spectral points from sampled data (trapezoid in x, spline product rules in
y and t) for use by the solvers.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainViolation, OverflowRisk, SingularPoint
from .problem_data import Scenario
from .quadrature import (
    IntegrationSpec,
    QuadratureReport,
    cumulative_antiderivative,
    exp_moments,
    integrate_plane,
    spline_coefficients,
)

NOTCH = 1e-3


@dataclass(frozen=True)
class SpectralPoint:
    k1: float
    k2: complex

    @classmethod
    def from_nu(cls, nu_r: float, nu_i: complex) -> "SpectralPoint":
        return cls(-2.0 * nu_r, 4.0 * nu_r * nu_i)

    @property
    def nu_r(self) -> float:
        return -0.5 * self.k1

    @property
    def nu_i(self) -> complex:
        return self.k2 / (4.0 * self.nu_r) if self.nu_r != 0 else complex("nan")


@dataclass(frozen=True)
class TransformValue:
    value: complex
    report: QuadratureReport

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise OverflowRisk("transform value is not finite")


def omega(k1, k2, notch: float = NOTCH):
    """Dispersion relation ``-i k1^3 + 3 i k2^2 / k1``."""
    k1a = np.asarray(k1)
    if np.any(np.abs(k1a) <= notch):
        raise SingularPoint(f"|k1| <= {notch} in omega")
    return -1j * k1**3 + 3j * k2**2 / k1


def _point_spec(s: Scenario) -> IntegrationSpec:
    # double integrals: keep the tolerance moderate so nested rules stay cheap
    q = s.quadrature
    return q.with_(rel_tol=max(q.rel_tol, 1e-9), abs_tol=max(q.abs_tol, 1e-11))


def _check_lower(k2):
    if np.imag(k2) > 1e-14:
        raise DomainViolation("Im k2 must be <= 0 for half-plane transforms")


def _x_extent(s: Scenario) -> tuple[float, float]:
    return -math.inf, math.inf


def hat_q0(k1: float, k2: complex, s: Scenario) -> TransformValue:
    """``int dx int_0^inf dy exp(-i k1 x - i k2 y) q0(x, y)``."""
    _check_lower(k2)
    return hat_field(k1, k2, lambda x, y: s.initial.eval(x, y), s)


def hat_field(k1: float, k2: complex, field, s: Scenario) -> TransformValue:
    _check_lower(k2)

    def f(x, y):
        return np.exp(-1j * k1 * x - 1j * k2 * y) * field(x, y)

    lo, hi = _x_extent(s)
    rep = integrate_plane(
        f, (lo, hi), (0.0, math.inf), _point_spec(s),
        x_frequency=abs(k1), y_frequency=abs(k2),
    )
    return TransformValue(rep.value, rep)


def hat_q(k1: float, k2: complex, t: float, q_field, s: Scenario) -> TransformValue:
    """Half-plane transform of ``q(., ., t)`` for a field object with ``q(x, y, t)``."""
    return hat_field(k1, k2, lambda x, y: q_field.q(x, y, t), s)


def _time_transform(k1, k2, t_upper, data, s: Scenario, weight) -> TransformValue:
    if t_upper < 0 or t_upper > s.T + 1e-14:
        raise DomainViolation("time limit outside [0, T]")
    if t_upper == 0:
        return TransformValue(0j, QuadratureReport(0j))
    growth = np.real(weight) * t_upper
    if growth > 700:
        raise OverflowRisk(f"exponential weight grows like exp({growth:.1f})")
    if growth > 50:
        warnings.warn(f"exponential weight grows like exp({growth:.1f})", RuntimeWarning)
    lo, hi = _x_extent(s)

    def f(x, tau):
        return np.exp(-1j * k1 * x + weight * tau) * data(x, tau)

    rep = integrate_plane(
        f, (lo, hi), (0.0, float(t_upper)), _point_spec(s),
        x_frequency=abs(k1), y_frequency=abs(np.imag(weight)),
    )
    return TransformValue(rep.value, rep)


def tilde_g(k1: float, k2: complex, t_upper: float, s: Scenario) -> TransformValue:
    """``int dx int_0^t exp(-i k1 x + omega tau) g(x, tau)``."""
    return _time_transform(k1, k2, t_upper, s.boundary.g, s, omega(k1, k2))


def tilde_h(k1: float, k2: complex, t_upper: float, s: Scenario) -> TransformValue:
    return _time_transform(k1, k2, t_upper, s.boundary.h, s, omega(k1, k2))


def boundary_antiderivative(s: Scenario):
    """Callable ``(x, t) -> int_{-inf}^x h(xi, t) d xi``.

    Uses the closed form when the scenario carries one, otherwise a cubic
    spline running integral of h sampled on the transform x-grid.
    """
    if s.boundary.h_antiderivative is not None:
        return s.boundary.h_antiderivative
    sg = s.spectral_grid
    xi = np.arange(sg.xi_min, sg.xi_max + 0.5 * sg.xi_step, sg.xi_step)
    h = s.boundary.h

    @functools.lru_cache(maxsize=4096)
    def column(t: float):
        return cumulative_antiderivative(np.asarray(h(xi, np.full_like(xi, t)), float), xi)

    def hint(x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        out = np.empty(x.shape)
        for tv in np.unique(t):
            sel = t == tv
            col = column(float(tv))
            out[sel] = np.interp(x[sel], xi, col, left=0.0, right=col[-1])
        return out

    return hint


def tilde_S(nu_r: float, nu_i: complex, t_upper: float, s: Scenario) -> TransformValue:
    """``int dxi int_0^t exp(2 i nuR xi - 8 i nuR (3 nuI^2 - nuR^2) tau) 3[d^{-1}h - 2 nuI g]``."""
    hint = boundary_antiderivative(s)
    g = s.boundary.g
    k1 = -2.0 * nu_r
    weight = -8j * nu_r * (3 * nu_i**2 - nu_r**2)

    def data(x, tau):
        return 3.0 * (hint(x, tau) - 2.0 * nu_i * g(x, tau))

    return _time_transform(k1, 0.0, t_upper, data, s, weight)


def kernel_Q(x, t, k, l, s: Scenario):
    """``-3 [i (l + 2k) g(x, t) + d^{-1}h(x, t)]``."""
    hint = boundary_antiderivative(s)
    return -3.0 * (1j * (l + 2 * k) * s.boundary.g(x, t) + hint(x, t))


def tilde_QT(k: complex, l: float, s: Scenario) -> TransformValue:
    """``int dxi int_0^T exp(-i l xi - 4 i l (l^2 + 3kl + 3k^2) tau) Q(xi, tau, k, l)``."""
    weight = -4j * l * (l**2 + 3 * k * l + 3 * k**2)

    def data(x, tau):
        return kernel_Q(x, tau, k, l, s)

    return _time_transform(l, 0.0, s.T, data, s, weight)


def tilde_q0(nu_r: float, nu_i: complex, s: Scenario) -> TransformValue:
    """``int dxi int_0^inf deta exp(2 i nuR xi - 4 i nuR nuI eta) q0``."""
    return hat_field(-2.0 * nu_r, 4.0 * nu_r * nu_i, s.initial.eval, s)


# ---------------------------------------------------------------------------
# tabulated transforms
# ---------------------------------------------------------------------------

def _interval_groups(h: np.ndarray):
    """Group intervals of equal length (uniform grids give a single group)."""
    key = np.round(h / h.max(), 9)
    return [(float(h[key == v][0]), np.nonzero(key == v)[0]) for v in np.unique(key)]


def _node_exponentials(z: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """``exp(z_p t_j)`` for all p, j; (P, J).

    On uniform grids the table is the outer product of two short tables
    (block starts and offsets), which needs about ``2 sqrt(J)`` exponentials per row.
    """
    z = np.asarray(z, dtype=complex)
    J = len(nodes)
    h = np.diff(nodes)
    if J < 16 or np.ptp(h) > 1e-12 * abs(h[0]):
        return np.exp(np.outer(z, nodes))
    step = (nodes[-1] - nodes[0]) / (J - 1)
    B = int(math.ceil(math.sqrt(J)))
    A = -(-J // B)
    coarse = np.exp(np.outer(z, nodes[0] + step * B * np.arange(A)))
    fine = np.exp(np.outer(z, step * np.arange(B)))
    return (coarse[:, :, None] * fine[:, None, :]).reshape(len(z), A * B)[:, :J]


def _weighted_sums(z: np.ndarray, nodes: np.ndarray, coef: np.ndarray, groups) -> np.ndarray:
    """Per-interval integrals ``int_{t_j}^{t_{j+1}} exp(z t) F(t) dt``.

    ``z``: (P,), ``coef``: (J, 4) spline coefficients of one data row.
    Returns (P, J). Moments are evaluated once per distinct interval length.
    """
    z = np.asarray(z, dtype=complex)
    out = np.empty((len(z), len(nodes) - 1), dtype=complex)
    for h, idx in groups:
        m = exp_moments(z * h)  # (4, P)
        out[:, idx] = h * (m.T @ coef[idx].T)
    out *= _node_exponentials(z, nodes[:-1])
    return out


def _weighted_total(z: np.ndarray, nodes: np.ndarray, coef: np.ndarray, groups) -> np.ndarray:
    """``int exp(z t) F(t) dt`` over the whole grid: (P,)."""
    z = np.asarray(z, dtype=complex)
    E = _node_exponentials(z, nodes[:-1])
    total = np.zeros(len(z), dtype=complex)
    for h, idx in groups:
        m = exp_moments(z * h)  # (4, P)
        total += h * np.einsum("pn,pn->p", m.T, E[:, idx] @ coef[idx])
    return total


def _rowwise_total(z: np.ndarray, nodes: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """``int exp(z_m t) F_m(t) dt`` with one exponent per data row; coef (M, J, 4)."""
    z = np.asarray(z, dtype=complex)
    if len(nodes) < 2 or len(z) == 0:
        return np.zeros(len(z), complex)
    E = np.exp(np.outer(z, nodes[:-1]))
    total = np.zeros(len(z), complex)
    for h, idx in _interval_groups(np.diff(nodes)):
        m = exp_moments(z * h)  # (4, M)
        total += h * np.einsum("nm,mj,mjn->m", m, E[:, idx], coef[:, idx, :])
    return total


class LinearTables:
    """Sampled boundary/initial data and vectorised transforms."""

    def __init__(self, s: Scenario, extra_times=()):
        self.s = s
        sg = s.spectral_grid
        self.xi = np.arange(sg.xi_min, sg.xi_max + 0.5 * sg.xi_step, sg.xi_step)
        w = np.full(self.xi.shape, sg.xi_step)
        w[0] = w[-1] = 0.5 * sg.xi_step
        self.xi_w = w
        base = np.linspace(0.0, s.T, sg.tau_count)
        times = np.concatenate([base, s.physical_grid.ts, np.asarray(extra_times, float)])
        times = np.unique(np.round(times, 14))
        # drop nodes that nearly coincide with a required time
        keep = [times[0]]
        for tv in times[1:]:
            if tv - keep[-1] > 1e-6 * s.T:
                keep.append(tv)
        self.tau = np.asarray(keep)
        self.eta = np.linspace(0.0, sg.eta_max, sg.eta_count)
        self.eta_w = np.full(self.eta.shape, self.eta[1] - self.eta[0])
        self.eta_w[[0, -1]] *= 0.5
        X, TAU = np.meshgrid(self.xi, self.tau, indexing="ij")
        self.g = np.asarray(s.boundary.g(X, TAU), float)
        self.h = np.asarray(s.boundary.h(X, TAU), float)
        if s.boundary.h_antiderivative is not None:
            self.hint = np.asarray(s.boundary.h_antiderivative(X, TAU), float)
        else:
            self.hint = cumulative_antiderivative(self.h, self.xi, axis=0)
        XE, ETA = np.meshgrid(self.xi, self.eta, indexing="ij")
        self.q0 = np.asarray(s.initial.eval(XE, ETA), float)
        self._tau_h = np.diff(self.tau)
        self._eta_h = np.diff(self.eta)

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.tau - t)))
        if abs(self.tau[idx] - t) > 1e-9 * max(1.0, self.s.T):
            raise DomainViolation(f"time {t} is not a node of the time grid")
        return idx

    def x_transform(self, data: np.ndarray, kappa) -> np.ndarray:
        """``sum_xi w exp(-i kappa xi) data[xi, ...]``; returns (len(kappa), ...)."""
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        mat = np.exp(-1j * np.outer(kappa, self.xi)) * self.xi_w
        return mat @ data.reshape(len(self.xi), -1).astype(complex) if data.ndim > 1 else mat @ data

    def x_transform_complex(self, data: np.ndarray, kappa) -> np.ndarray:
        kappa = np.atleast_1d(np.asarray(kappa, dtype=complex))
        mat = np.exp(-1j * np.outer(kappa, self.xi)) * self.xi_w
        return mat @ data

    # -- initial data ---------------------------------------------------
    def q0_hat_x(self, k1) -> np.ndarray:
        """x-transform of q0 on the eta grid: (len(k1), n_eta)."""
        return self.x_transform(self.q0, k1)

    def hat_q0(self, k1, k2) -> np.ndarray:
        """``hat q0(k1[m], k2[m, p])`` for rows m of spectral points."""
        k1 = np.atleast_1d(np.asarray(k1, float))
        k2 = np.asarray(k2, dtype=complex).reshape(len(k1), -1)
        qx = self.q0_hat_x(k1)  # (M, Ne)
        coef = spline_coefficients(self.eta, qx)  # (M, J, 4)
        if k2.shape[1] == 1:
            return _rowwise_total(-1j * k2[:, 0], self.eta, coef)[:, None]
        groups = _interval_groups(self._eta_h)
        out = np.empty(k2.shape, dtype=complex)
        for m in range(len(k1)):
            out[m] = _weighted_total(-1j * k2[m], self.eta, coef[m], groups)
        return out

    def tilde_q0(self, nu_r, nu_i) -> np.ndarray:
        nu_r = np.atleast_1d(np.asarray(nu_r, float))
        nu_i = np.asarray(nu_i).reshape(len(nu_r), -1)
        return self.hat_q0(-2 * nu_r, 4 * nu_r[:, None] * nu_i)

    # -- boundary data ---------------------------------------------------
    def boundary_hat_x(self, kappa):
        """x-transforms of g and d^{-1}h and h on the time grid: three (K, Nt) arrays."""
        kappa = np.atleast_1d(np.asarray(kappa, float))
        mat = np.exp(-1j * np.outer(kappa, self.xi)) * self.xi_w
        return mat @ self.g, mat @ self.hint, mat @ self.h

    def time_integrals(self, samples: np.ndarray, z: np.ndarray, uppers) -> np.ndarray:
        """``int_0^{t_u} exp(z tau) F(tau) d tau`` for each upper limit index.

        samples: (M, Nt) rows of F; z: (M, P). Returns (len(uppers), M, P).
        """
        coef = spline_coefficients(self.tau, samples)  # (M, J, 4)
        groups = _interval_groups(self._tau_h)
        uppers = list(uppers)
        # column u of ``select`` sums the intervals below the u-th upper limit
        select = np.zeros((len(self.tau) - 1, len(uppers)))
        for u, iu in enumerate(uppers):
            select[:iu, u] = 1.0
        out = np.empty((len(uppers), z.shape[0], z.shape[1]), dtype=complex)
        if z.shape[1] == 1:
            for u, iu in enumerate(uppers):
                out[u, :, 0] = _rowwise_total(z[:, 0], self.tau[: iu + 1], coef[:, :iu])
            return out
        for m in range(z.shape[0]):
            out[:, m] = (_weighted_sums(z[m], self.tau, coef[m], groups) @ select).T
        return out

    def tilde_S(self, nu_r, nu_i, t_uppers) -> np.ndarray:
        """``tilde S_t(nu_r[m], nu_i[m, p])`` for each t in ``t_uppers``: (U, M, P)."""
        nu_r = np.atleast_1d(np.asarray(nu_r, float))
        nu_i = np.asarray(nu_i, dtype=complex).reshape(len(nu_r), -1)
        G, HI, _ = self.boundary_hat_x(-2 * nu_r)
        z = -8j * nu_r[:, None] * (3 * nu_i**2 - nu_r[:, None] ** 2)
        uppers = [self.time_index(t) for t in t_uppers]
        IG = self.time_integrals(G, z, uppers)
        IH = self.time_integrals(HI, z, uppers)
        return 3.0 * (IH - 2.0 * nu_i[None] * IG)

    def tilde_gh(self, k1, k2, t_uppers):
        """``(tilde g_t, tilde h_t)`` at rows k1[m], k2[m, p]: two (U, M, P) arrays."""
        k1 = np.atleast_1d(np.asarray(k1, float))
        k2 = np.asarray(k2, dtype=complex).reshape(len(k1), -1)
        G, _, Hh = self.boundary_hat_x(k1)
        z = -1j * k1[:, None] ** 3 + 3j * k2**2 / k1[:, None]
        uppers = [self.time_index(t) for t in t_uppers]
        return self.time_integrals(G, z, uppers), self.time_integrals(Hh, z, uppers)
