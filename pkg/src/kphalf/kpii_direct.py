"""Eigenfunctions of the KPII Lax pair for given (small) data.

All solves share one discretisation (``Scenario.kpii_grid``):

* x: uniform grid, trapezoid weights, Fourier transform by direct sums;
* l: composite Gauss panels on ``[-L, L]`` with breakpoints at ``0`` and
  ``-2 Re k`` so that the two mode families
  ``L+ = {l (l + 2 Re k) >= 0}`` and ``L- = {l (l + 2 Re k) < 0}`` are
  integrated panel-wise;
* y and tau: exponentially weighted cubic-spline product integration.

For each mode ``l`` (``z = l(l+2k)``, ``w = 4 i l (l^2 + 3kl + 3k^2)``)

    L+ : mu^(l, y, t) = int_0^y e^{z(eta-y)} (q mu)^ d eta + e^{-z y} phi^(l, t)
    L- : mu^(l, y, t) = -int_y^inf e^{z(eta-y)} (q mu)^ d eta

and ``phi^`` on L+ is the running tau-integral of ``e^{-w(tau-t)} (H phi)^``
forward from 0 (``+`` family) or backward from T (``-`` family), with
``H phi = 3 [g_x - 2i(l+k) g - d_x^{-1} h] phi``. The same equations serve
``mu_1`` and ``mu_2``; the quadrant only fixes the family.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractionFailure, DomainViolation, GridTooCoarse, NonConvergence
from .linear_spectral import boundary_antiderivative
from .problem_data import Scenario
from .quadrature import gauss_panels, running_exp_matrix

QUADRANTS = {
    # quadrant: (index j of mu_j, family sign, sign of k_R, sign of k_I)
    "Q1": (2, "+", 1, 1),
    "Q2": (1, "+", -1, 1),
    "Q3": (1, "-", -1, -1),
    "Q4": (2, "-", 1, -1),
}


def quadrant_of(index: int, family: str, kR: float) -> str:
    for name, (j, fam, sr, _) in QUADRANTS.items():
        if j == index and fam == family:
            return name
    raise DomainViolation(f"no quadrant for mu_{index}{family}")


def exponent_z(k, l):
    return l * (l + 2 * k)


def exponent_w(k, l):
    return 4j * l * (l * l + 3 * k * l + 3 * k * k)


# ---------------------------------------------------------------------------
# sampled data
# ---------------------------------------------------------------------------

def _x_derivative(f):
    step = 1e-4

    def fx(x, t):
        return (f(x + step, t) - f(x - step, t)) / (2 * step)

    return fx


@dataclass(frozen=True)
class KernelH:
    """``H(x, t, k, l) = 3 [g_x - 2i(l+k) g - d_x^{-1} h]``."""

    g: object
    g_x: object
    h_int: object

    @classmethod
    def from_scenario(cls, s: Scenario) -> "KernelH":
        gx = None
        if s.exact is not None and hasattr(s.exact, "q_x"):
            gx = lambda x, t: s.exact.q_x(x, 0.0, t)  # noqa: E731
        return cls(s.boundary.g, gx or _x_derivative(s.boundary.g), boundary_antiderivative(s))

    def __call__(self, x, t, k, l):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        return 3 * (self.g_x(x, t) - 2j * (l + k) * self.g(x, t) - self.h_int(x, t))


class KPIIData:
    """Data sampled on the nonlinear solver grids.

    ``q_field`` supplies q(x, y, t) inside the domain (a manufactured or
    externally computed solution); ``None`` means the scenario's exact field.
    """

    def __init__(self, s: Scenario, q_field=None, extra_times=()):
        kg = s.kpii_grid
        self.s = s
        self.grid = kg
        n = int(round((kg.x_max - kg.x_min) / kg.x_step))
        self.x = np.linspace(kg.x_min, kg.x_max, n + 1)
        self.wx = np.full(self.x.shape, self.x[1] - self.x[0])
        self.wx[[0, -1]] *= 0.5
        ny = int(round(kg.y_max / kg.y_step))
        self.y = np.linspace(0.0, kg.y_max, ny + 1)
        tau = np.linspace(0.0, s.T, kg.tau_count)
        extra = [t for t in np.concatenate([s.physical_grid.ts, np.asarray(extra_times, float)])
                 if np.min(np.abs(tau - t)) > 1e-12]
        self.tau = np.unique(np.concatenate([tau, extra]))
        self.H = KernelH.from_scenario(s)
        X, Tt = np.meshgrid(self.x, self.tau, indexing="ij")
        self.g = np.asarray(self.H.g(X, Tt), float)
        self.g_x = np.asarray(self.H.g_x(X, Tt), float)
        self.h_int = np.asarray(self.H.h_int(X, Tt), float)
        X2, Y2 = np.meshgrid(self.x, self.y, indexing="ij")
        self.q0 = np.asarray(s.initial.eval(X2, Y2), float)
        self._q_field = q_field if q_field is not None else s.exact
        self._q = None

    @property
    def q(self) -> np.ndarray:
        """q on the (x, y, tau) grid; evaluated lazily (only full solves need it)."""
        if self._q is None:
            if self._q_field is None:
                raise DomainViolation("full eigenfunction solves need a q field")
            X, Y, Tt = np.meshgrid(self.x, self.y, self.tau, indexing="ij")
            self._q = np.asarray(self._q_field.q(X, Y, Tt), float)
        return self._q

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.tau - t)))
        if abs(self.tau[i] - t) > 1e-9:
            raise DomainViolation(f"t={t} is not a solver time node")
        return i

    def l_nodes(self, kR: float):
        kg = self.grid
        L = max(kg.l_max, 2 * abs(kR) + 1.0)
        breaks = sorted({-L, 0.0, -2.0 * kR, L})
        counts = [max(1, math.ceil((b - a) / kg.l_panel - 1e-9)) for a, b in zip(breaks[:-1], breaks[1:])]
        l, w = gauss_panels(breaks, kg.l_order, counts)
        return l, w

    def h_transform(self, fx: np.ndarray, l: np.ndarray, k: complex) -> np.ndarray:
        """(H phi)^ for phi sampled on (x, tau); shape (len(l), n_tau)."""
        E = self.wx[None, :] * np.exp(-1j * np.outer(l, self.x))
        a = E @ (self.g_x * fx)
        b = E @ (self.g * fx)
        c = E @ (self.h_int * fx)
        return 3 * (a - 2j * (l + k)[:, None] * b - c)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class BoundaryEigenfunction:
    """phi_j^{+-}(x, t) for one spectral point."""

    index: int
    family: str
    k: complex
    x: np.ndarray
    t: np.ndarray
    samples: np.ndarray
    l: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)
    hat: np.ndarray = field(repr=False, default=None)


@dataclass
class EigenfunctionField:
    """mu sampled on the solver grid for fixed k.

    ``quadrant`` is ``None`` for evaluations of a family formula outside its
    own quadrant (boundary values, reflected arguments).
    """

    quadrant: str | None
    family: str
    k: complex
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    samples: np.ndarray
    iteration_residual: float
    history: list = field(default_factory=list)
    contraction: float = 0.0
    self_residual: float = 0.0
    l: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)
    hat: np.ndarray = field(repr=False, default=None)
    boundary: BoundaryEigenfunction | None = None

    @property
    def kR(self) -> float:
        return float(np.real(self.k))

    @property
    def kI(self) -> float:
        return float(np.imag(self.k))

    def at(self, x, iy: int, it: int = 0):
        """mu at arbitrary x (Fourier sum) on grid row ``y[iy]``, ``t[it]``."""
        x = np.asarray(x, float)
        ph = np.exp(1j * np.multiply.outer(x, self.l)) * (self.weights / (2 * np.pi))
        return 1.0 + ph @ self.hat[:, iy, it]

    def y_index(self, y: float) -> int:
        i = int(np.argmin(np.abs(self.y - y)))
        if abs(self.y[i] - y) > 1e-9:
            raise DomainViolation(f"y={y} is not a solver node")
        return i

    def t_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > 1e-9:
            raise DomainViolation(f"t={t} is not a solver node")
        return i

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "t", "re", "im"])
            for i, xv in enumerate(self.x):
                for j, yv in enumerate(self.y):
                    for m, tv in enumerate(self.t):
                        v = self.samples[i, j, m]
                        w.writerow([repr(xv), repr(yv), repr(tv), repr(v.real), repr(v.imag)])


# ---------------------------------------------------------------------------
# the discretised integral operators
# ---------------------------------------------------------------------------

class _Modes:
    """Per-k tables: transforms, mode split and running-integral matrices."""

    def __init__(self, data: KPIIData, k: complex, family: str, need_tau: bool = True):
        if family not in ("+", "-"):
            raise ValueError("family must be '+' or '-'")
        self.data, self.k, self.family = data, complex(k), family
        l, wl = data.l_nodes(self.k.real)
        self.l, self.wl = l, wl
        self.fwd = data.wx[None, :] * np.exp(-1j * np.outer(l, data.x))
        self.inv = np.exp(1j * np.outer(data.x, l)) * (wl / (2 * np.pi))
        self.z = exponent_z(self.k, l)
        self.w = exponent_w(self.k, l)
        self.plus = l * (l + 2 * self.k.real) >= 0
        self.P = np.nonzero(self.plus)[0]
        self.M = np.nonzero(~self.plus)[0]
        y = data.y
        self.Ay_plus = running_exp_matrix(y, self.z[self.P], "forward")
        self.Ay_minus = -running_exp_matrix(y, self.z[self.M], "backward")
        self.decay_y = np.exp(-np.outer(self.z[self.P], y))
        if need_tau:
            tau = data.tau
            if family == "+":
                self.At = running_exp_matrix(tau, -self.w[self.P], "forward")
            else:
                self.At = -running_exp_matrix(tau, -self.w[self.P], "backward")

    def y_volterra(self, F: np.ndarray) -> np.ndarray:
        """Mode-wise y-integrals of F (len(l), Ny, ...) without the boundary term."""
        out = np.empty(F.shape, dtype=complex)
        sh = F.shape
        rest = int(np.prod(sh[2:], dtype=int))
        Fp = F[self.P].reshape(len(self.P), sh[1], rest)
        Fm = F[self.M].reshape(len(self.M), sh[1], rest)
        out[self.P] = np.matmul(self.Ay_plus, Fp).reshape((len(self.P),) + sh[1:])
        out[self.M] = np.matmul(self.Ay_minus, Fm).reshape((len(self.M),) + sh[1:])
        return out

    def to_x(self, hat: np.ndarray) -> np.ndarray:
        sh = hat.shape
        return 1.0 + (self.inv @ hat.reshape(sh[0], -1)).reshape((self.inv.shape[0],) + sh[1:])

    def from_x(self, f: np.ndarray) -> np.ndarray:
        sh = f.shape
        return (self.fwd @ f.reshape(sh[0], -1)).reshape((self.fwd.shape[0],) + sh[1:])

    def h_hat(self, phi: np.ndarray, rows=None) -> np.ndarray:
        d = self.data
        rows = slice(None) if rows is None else rows
        E = self.fwd[rows]
        lk = (self.l[rows] + self.k)[:, None]
        return 3 * (E @ (d.g_x * phi) - 2j * lk * (E @ (d.g * phi)) - E @ (d.h_int * phi))


def _neumann(step, start, tol: float, max_iter: int, what: str):
    """Iterate ``u <- step(u)``; returns (u, updates, contraction estimate)."""
    u = start
    updates = []
    for _ in range(max_iter):
        new = step(u)
        upd = max(float(np.max(np.abs(a - b))) for a, b in zip(new, u))
        u = new
        updates.append(upd)
        if len(updates) == 2 and updates[0] > 0:
            ratio = updates[1] / updates[0]
            if ratio >= 1:
                raise ContractionFailure(f"{what}: estimated operator norm {ratio:.3g} >= 1",
                                         contraction=ratio)
        if upd <= tol or upd == 0.0:
            break
    else:
        raise NonConvergence(f"{what}: no convergence after {max_iter} iterations",
                             err_estimate=updates[-1])
    contraction = updates[1] / updates[0] if len(updates) > 1 and updates[0] > 0 else 0.0
    return u, updates, contraction


def _full_step(m: _Modes, q: np.ndarray):
    def step(state):
        (mu,) = state
        F = m.from_x(q * mu)
        hat = m.y_volterra(F)
        G = m.h_hat(mu[:, 0, :], m.P)
        phihat = np.einsum("lab,lb->la", m.At, G)
        hat[m.P] += m.decay_y[:, :, None] * phihat[:, None, :]
        step.hat = hat
        return (m.to_x(hat),)

    return step


def solve_family(data: KPIIData, k: complex, family: str) -> EigenfunctionField:
    """Solve the ``family`` integral equation at an arbitrary complex ``k``.

    Boundedness of the running integrals requires ``Im k >= 0`` for ``+``
    and ``Im k <= 0`` for ``-``; ``k`` real gives the boundary values.
    """
    k = complex(k)
    if (family == "+" and k.imag < 0) or (family == "-" and k.imag > 0):
        raise DomainViolation(f"family {family} is unbounded at k={k}")
    m = _Modes(data, k, family)
    q = data.q
    kg = data.grid
    start = (np.ones(q.shape, dtype=complex),)
    step = _full_step(m, q)
    (mu,), updates, ratio = _neumann(step, start, kg.tol, kg.max_iter, f"mu{family} at k={k}")
    hat = step.hat
    (again,) = step((mu,))
    self_res = float(np.max(np.abs(again - mu)))
    field_ = EigenfunctionField(None, family, k, data.x, data.y, data.tau, mu, updates[-1], updates,
                                ratio, self_res, m.l, m.wl, hat)
    field_.boundary = BoundaryEigenfunction(0, family, k, data.x, data.tau, mu[:, 0, :].copy(),
                                            m.l, m.wl, hat[:, 0, :])
    return field_


def _check_quadrant(quadrant: str, kR: float, kI: float):
    if quadrant not in QUADRANTS:
        raise DomainViolation(f"unknown quadrant {quadrant!r}")
    _, _, sr, si = QUADRANTS[quadrant]
    if sr * kR < 0 or si * kI < 0:
        raise DomainViolation(f"(kR, kI)=({kR}, {kI}) is outside {quadrant}")


def solve_mu(quadrant: str, kR: float, kI: float, s: Scenario, q_field=None,
             data: KPIIData | None = None) -> EigenfunctionField:
    """mu in one quadrant: Q1 -> mu2+, Q2 -> mu1+, Q3 -> mu1-, Q4 -> mu2-."""
    _check_quadrant(quadrant, kR, kI)
    data = data or KPIIData(s, q_field)
    out = solve_family(data, complex(kR, kI), QUADRANTS[quadrant][1])
    out.quadrant = quadrant
    out.boundary.index = QUADRANTS[quadrant][0]
    return out


# ---------------------------------------------------------------------------
# t = 0 eigenfunctions
# ---------------------------------------------------------------------------

@dataclass
class InitialEigenfunctions:
    """rho(x, y) at t = 0 and, for the ``-`` family, the coupled phi^-(x, t)."""

    family: str
    k: complex
    rho: EigenfunctionField
    phi: BoundaryEigenfunction | None
    contraction: float
    iteration_residual: float
    self_residual: float


def solve_rho(sign: str, kR: float, kI: float, s: Scenario | None = None,
              data: KPIIData | None = None) -> InitialEigenfunctions:
    """rho^{+-} from q0 (and, for ``-``, jointly with phi^- from g, h)."""
    if data is None:
        data = KPIIData(s)
    k = complex(kR, kI)
    if (sign == "+" and kI < 0) or (sign == "-" and kI > 0):
        raise DomainViolation(f"rho{sign} is unbounded at k={k}")
    m = _Modes(data, k, sign, need_tau=False)
    kg = data.grid
    q0 = data.q0
    tau, y = data.tau, data.y
    nx = len(data.x)

    if sign == "+":
        def step(state):
            (rho,) = state
            hat = m.y_volterra(m.from_x(q0 * rho))
            step.hat = hat
            return (m.to_x(hat),)

        start = (np.ones((nx, len(y)), dtype=complex),)
    else:
        P, M = m.P, m.M
        back_t = running_exp_matrix(tau, -m.w[P], "backward")  # rows: int_{tau_n}^T
        fwd_t = running_exp_matrix(tau, -m.w[M], "forward")
        back_y0 = running_exp_matrix(y, m.z[M], "backward")[:, 0, :]  # int_0^Y e^{z eta} F
        grow_t = np.exp(np.outer(m.w[M], tau))

        def step(state):
            rho, phi = state
            F0 = m.from_x(q0 * rho)
            G = m.h_hat(phi)
            hat = m.y_volterra(F0)
            total_t = np.einsum("lb,lb->l", back_t[:, 0, :], G[P])
            hat[P] -= m.decay_y * total_t[:, None]
            phat = np.empty((len(m.l), len(tau)), dtype=complex)
            phat[P] = -np.einsum("lab,lb->la", back_t, G[P])
            total_y = np.einsum("lb,lb->l", back_y0, F0[M])
            phat[M] = np.einsum("lab,lb->la", fwd_t, G[M]) - grow_t * total_y[:, None]
            step.hat, step.phat = hat, phat
            return (m.to_x(hat), m.to_x(phat))

        start = (np.ones((nx, len(y)), dtype=complex), np.ones((nx, len(tau)), dtype=complex))

    state, updates, ratio = _neumann(step, start, kg.tol, kg.max_iter, f"rho{sign} at k={k}")
    hat = step.hat
    phat = getattr(step, "phat", None)
    again = step(state)
    self_res = max(float(np.max(np.abs(a - b))) for a, b in zip(again, state))
    rho_field = EigenfunctionField(None, sign, k, data.x, data.y, np.zeros(1), state[0][:, :, None],
                                   updates[-1], updates, ratio, self_res, m.l, m.wl, hat[:, :, None])
    phi = None
    if sign == "-":
        phi = BoundaryEigenfunction(0, "-", k, data.x, tau, state[1], m.l, m.wl, phat)
    return InitialEigenfunctions(sign, k, rho_field, phi, ratio, updates[-1], self_res)


# ---------------------------------------------------------------------------
# Lax-pair residuals
# ---------------------------------------------------------------------------

def lax_residual(mu: EigenfunctionField, q_field, s: Scenario, points=None, hx: float = 0.1,
                 stride: int = 1) -> tuple[float, float]:
    """Finite-difference residuals of both Lax equations at interior points.

    x-derivatives use centred stencils of step ``hx`` on the Fourier
    representation; y and t derivatives use centred differences on solver
    nodes ``stride`` apart. ``points`` are (x, iy, it) index triples; by
    default a few interior rows are used.
    """
    k = mu.k
    ny, nt = len(mu.y), len(mu.t)
    if ny < 2 * stride + 1 or nt < 2 * stride + 1:
        raise GridTooCoarse("need at least three y and t nodes per stencil")
    if points is None:
        iys = sorted({max(stride, ny // 8), max(stride, ny // 4)})
        its = sorted({max(stride, nt // 3), min(nt - 1 - stride, 2 * nt // 3)})
        points = [(xv, iy, it) for xv in (-1.0, 0.5, 2.0) for iy in iys for it in its]
    r1 = r2 = 0.0
    ex = q_field
    for xv, iy, it in points:
        if not (stride <= iy < ny - stride and stride <= it < nt - stride):
            raise GridTooCoarse("stencil leaves the solver grid")
        xs = xv + hx * np.arange(-2, 3)
        c = mu.at(xs, iy, it)
        m_x = (c[3] - c[1]) / (2 * hx)
        m_xx = (c[3] - 2 * c[2] + c[1]) / hx**2
        m_xxx = (c[4] - 2 * c[3] + 2 * c[1] - c[0]) / (2 * hx**3)
        hy = mu.y[iy + stride] - mu.y[iy]
        ht = mu.t[it + stride] - mu.t[it]
        m_y = (mu.at(xv, iy + stride, it) - mu.at(xv, iy - stride, it)) / (2 * hy)
        m_t = (mu.at(xv, iy, it + stride) - mu.at(xv, iy, it - stride)) / (2 * ht)
        yv, tv = mu.y[iy], mu.t[it]
        qv = float(ex.q(xv, yv, tv))
        qx = float(ex.q_x(xv, yv, tv))
        qy_int = float(ex.antiderivative_x(xv, yv, tv, dy_order=1))
        m0 = c[2]
        r1 = max(r1, abs(m_y - m_xx - 2j * k * m_x - qv * m0))
        F = -6 * qv * (m_x + 1j * k * m0) - 3 * (qx + qy_int) * m0
        r2 = max(r2, abs(m_t + 4 * m_xxx + 12j * k * m_xx - 12 * k * k * m_x - F))
    return r1, r2
