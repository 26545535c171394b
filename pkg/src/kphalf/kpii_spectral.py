"""Spectral functions of KPII built from the t = 0 and boundary eigenfunctions.

* ``alpha^-, beta^+-`` and ``gamma`` on quadrant point sets;
* the kernels ``r_1, r_2, p_1`` and the Volterra systems for the jump
  densities ``chi_{1,2}`` (``k_R <= 0``) and ``psi_{1,2}`` (``k_R >= 0``);
* the nonlinear global relation residual.

Two facts keep the jump kernels cheap. ``rho_1^+`` and ``rho_2^+`` obey the
same equations, and the reflected eigenfunction
``rho(x, y, -k_R - lam/2, i lam/2)`` is the ``+`` family at the real point
``kappa = -k_R - lam``; so one solve per ``kappa`` serves both kernels. At
``t = 0`` the phase ``e_lam`` is ``exp(-i(lam+2k_R)x - f(lam) y)`` with
``f(a) = a(a + 2k_R)``, so each kernel entry is an x-transform of
``q0 rho`` at a shifted frequency followed by one eta-integral.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractionFailure, DomainViolation, NonConvergence, OverflowRisk
from .kpii_direct import (QUADRANTS, EigenfunctionField, KPIIData, exponent_w, exponent_z,
                          solve_rho)
from .quadrature import running_exp_integral

TWO_PI = 2 * np.pi


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------

def phase_E(x, y, t, k, l):
    """``E = exp(i l x - l(l+2k) y + 4 i l (l^2 + 3kl + 3k^2) t)``."""
    return np.exp(1j * l * x - exponent_z(k, l) * y + exponent_w(k, l) * t)


def phase_e(x, y, t, kR, lam):
    """``e_lam(x, y, t, k_R, lam)``."""
    return np.exp(-1j * (lam + 2 * kR) * x - lam * (lam + 2 * kR) * y
                  - 4j * lam * (lam * lam + 3 * kR * lam + 3 * kR * kR) * t - 8j * kR**3 * t)


# ---------------------------------------------------------------------------
# quadrature helpers on the solver grids
# ---------------------------------------------------------------------------

def _x_transform(data: KPIIData, freqs, f: np.ndarray) -> np.ndarray:
    """sum_x w_x e^{-i m x} f(x, ...) for every frequency m; leading axis = freqs."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    E = data.wx[None, :] * np.exp(-1j * np.outer(freqs, data.x))
    sh = f.shape
    return (E @ f.reshape(sh[0], -1)).reshape((len(freqs),) + sh[1:])


def _exp_total(nodes: np.ndarray, samples: np.ndarray, z) -> np.ndarray:
    """int over the whole node range of exp(z s) F(s) ds (nodes start at 0)."""
    return running_exp_integral(nodes, samples, z, "backward")[..., 0]


def _h_transform(data: KPIIData, freqs, k, phi: np.ndarray) -> np.ndarray:
    """(H(k, l) phi)^ at l = freqs; phi on (x, tau)."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    nt = phi.shape[-1]
    a = _x_transform(data, freqs, data.g_x[:, :nt] * phi)
    b = _x_transform(data, freqs, data.g[:, :nt] * phi)
    c = _x_transform(data, freqs, data.h_int[:, :nt] * phi)
    return 3 * (a - 2j * (freqs + k)[:, None] * b - c)


def beta_value(data: KPIIData, k: complex, rho: np.ndarray) -> complex:
    """(1/2pi) int int e^{2ik_R xi - 4ik_Rk_I eta} q0 rho."""
    l = -2 * k.real
    F = _x_transform(data, [l], data.q0 * rho)[0]
    return complex(_exp_total(data.y, F, exponent_z(k, l))) / TWO_PI


def alpha_value(data: KPIIData, k: complex, phi: np.ndarray) -> complex:
    """(1/2pi) int int e^{2ik_R xi + 8ik_R(k_R^2-3k_I^2) tau} H(k, -2k_R) phi."""
    l = -2 * k.real
    G = _h_transform(data, [l], k, phi)[0]
    return complex(_exp_total(data.tau, G, -exponent_w(k, l))) / TWO_PI


def linear_beta(data: KPIIData, k: complex) -> complex:
    """beta with rho = 1 (the O(eps) term B times eps)."""
    return beta_value(data, complex(k), np.ones_like(data.q0))


def linear_alpha(data: KPIIData, k: complex) -> complex:
    """A times eps, from the integrated-by-parts kernel 3[2 k_I g - d^{-1} h]."""
    k = complex(k)
    l = -2 * k.real
    f = 3 * (2 * k.imag * data.g - data.h_int)
    G = _x_transform(data, [l], f)[0]
    return complex(_exp_total(data.tau, G, -exponent_w(k, l))) / TWO_PI


def linear_p1(data: KPIIData, kR: float, l) -> np.ndarray:
    """P_1 times eps, from the integrated-by-parts kernel 3[-i(l+2k_R) g - d^{-1} h]."""
    l = np.atleast_1d(np.asarray(l, float))
    Fg = _x_transform(data, l, data.g)
    Fh = _x_transform(data, l, data.h_int)
    G = 3 * (-1j * (l + 2 * kR)[:, None] * Fg - Fh)
    return _exp_total(data.tau, G, -exponent_w(kR, l)) / TWO_PI


# ---------------------------------------------------------------------------
# gamma tables
# ---------------------------------------------------------------------------

@dataclass
class GammaTable:
    """alpha^-, beta^+- and gamma on per-quadrant point sets (complex k)."""

    points: dict
    beta: dict
    alpha: dict
    gamma: dict
    contraction: float = 0.0

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quadrant", "kR", "kI", "re", "im"])
            for q in sorted(self.points):
                for k, g in zip(self.points[q], self.gamma[q]):
                    w.writerow([q, repr(k.real), repr(k.imag), repr(g.real), repr(g.imag)])


def initial_solutions(data: KPIIData, points) -> dict:
    """Solve rho (and phi^- below the axis) at every point of every quadrant."""
    out = {}
    for quad, ks in points.items():
        fam = QUADRANTS[quad][1]
        out[quad] = [solve_rho(fam, k.real, k.imag, data=data) for k in np.asarray(ks, complex)]
    return out


def build_gamma(s, points: dict, data: KPIIData | None = None,
                solutions: dict | None = None) -> GammaTable:
    """gamma_j^{+-} on the given quadrant point sets.

    ``points`` maps Q1..Q4 to arrays of complex k; Q1/Q4 carry index 2,
    Q2/Q3 index 1. ``solutions`` may hold precomputed ``solve_rho`` output
    in the same layout.
    """
    data = data or KPIIData(s)
    solutions = solutions or initial_solutions(data, points)
    beta, alpha, gamma = {}, {}, {}
    worst = 0.0
    for quad, ks in points.items():
        ks = np.asarray(ks, complex)
        fam = QUADRANTS[quad][1]
        b = np.empty(len(ks), complex)
        a = np.zeros(len(ks), complex)
        for i, (k, sol) in enumerate(zip(ks, solutions[quad])):
            worst = max(worst, sol.contraction)
            b[i] = beta_value(data, k, sol.rho.samples[:, :, 0])
            if fam == "-":
                a[i] = alpha_value(data, k, sol.phi.samples)
        beta[quad], alpha[quad] = b, a
        gamma[quad] = b - a if fam == "-" else b.copy()
    return GammaTable({q: np.asarray(v, complex) for q, v in points.items()}, beta, alpha, gamma, worst)


# ---------------------------------------------------------------------------
# jump kernels
# ---------------------------------------------------------------------------

def lambda_grids(kR: float, step: float, extent: float, system: str):
    """Trapezoid nodes for the two densities of one system.

    Returns ``(lam2, lam1)``; node ``n`` of either grid has the
    ``-2k_R - lam`` partner on the other grid at the same index, so every
    Volterra limit falls on a node.
    """
    n = np.arange(int(math.ceil(extent / step - 1e-9)) + 1) * step
    if system == "chi":
        return -n, -2 * kR + n
    if system == "psi":
        return -2 * kR - n, n
    raise ValueError("system must be 'chi' or 'psi'")


def system_for(kR: float) -> str:
    return "chi" if kR <= 0 else "psi"


@dataclass
class JumpKernels:
    """r_1, r_2 and p_1 on the nodes used by one Volterra system.

    ``r2[m, n]`` is ``r_2(k_R, lam2[m], L[n])`` and ``r1[m, n]`` is
    ``r_1(k_R, lam1[m], L[n])`` with ``L = concat(-2k_R - lam2, -2k_R - lam1)``
    (the third arguments the equations reference). ``r1_diag`` holds
    ``r_1(k_R, lam, -2k_R - lam)`` at the lam2 nodes (the alternative
    reading of the first equation of each system).
    """

    kR: float
    system: str
    lam2: np.ndarray
    lam1: np.ndarray
    r2: np.ndarray
    r1: np.ndarray
    r1_diag: np.ndarray
    p2: np.ndarray  # p_1(k_R, -2k_R - lam2)
    p1: np.ndarray  # p_1(k_R, -2k_R - lam1)
    rho_kappa: dict = field(default_factory=dict, repr=False)
    psi_form: str = "reflected"

    @property
    def step(self) -> float:
        return float(abs(self.lam2[1] - self.lam2[0])) if len(self.lam2) > 1 else 0.0

    def e_lambda(self, x, y, t, lam):
        return phase_e(x, y, t, self.kR, lam)

    def E(self, x, y, t, k, l):
        return phase_E(x, y, t, k, l)

    def in_domain(self, index: int, lam: float) -> bool:
        kR = self.kR
        tol = 1e-12
        if self.system == "chi":
            return lam <= tol if index == 2 else lam >= -2 * kR - tol
        return lam <= -2 * kR + tol if index == 2 else lam >= -tol

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kR", "lambda", "re", "im"])
            for lam, v in zip(np.concatenate([self.lam2, self.lam1]), np.concatenate([self.p2, self.p1])):
                w.writerow([repr(self.kR), repr(lam), repr(v.real), repr(v.imag)])


def p1_values(data: KPIIData, kR: float, l, phi1: np.ndarray) -> np.ndarray:
    """p_1(k_R, l) from phi_1^-(x, tau, k_R, 0)."""
    l = np.atleast_1d(np.asarray(l, float))
    G = _h_transform(data, l, kR, phi1)
    return _exp_total(data.tau, G, -exponent_w(kR, l)) / TWO_PI


def boundary_phi_minus(data: KPIIData, kR: float, method: str = "direct", delta: float = 0.02):
    """phi_1^-(x, tau, k_R, 0).

    ``direct`` solves the ``-`` family at the real point (all its running
    integrals stay bounded there); ``richardson`` extrapolates linearly
    from ``k_I = -delta, -2 delta``.
    """
    if method == "direct":
        return solve_rho("-", kR, 0.0, data=data).phi.samples
    if method == "richardson":
        a = solve_rho("-", kR, -delta, data=data).phi.samples
        b = solve_rho("-", kR, -2 * delta, data=data).phi.samples
        return 2 * a - b
    raise ValueError("method must be 'direct' or 'richardson'")


def _rho_plus(data: KPIIData, kappa: float, cache: dict) -> np.ndarray:
    key = round(float(kappa), 12)
    if key not in cache:
        cache[key] = solve_rho("+", kappa, 0.0, data=data).rho.samples[:, :, 0]
    return cache[key]


class KappaTransforms:
    """x-transforms of ``q0 rho^+_kappa`` on a uniform frequency grid, per kappa.

    Kernels at many k_R nodes of a common lambda grid reuse the same
    ``(kappa, frequency)`` pairs; this table computes each pair once.
    """

    def __init__(self, data: KPIIData, step: float, max_freq: float, rho_cache: dict | None = None):
        self.data = data
        self.step = float(step)
        self.J = int(math.ceil(max_freq / step - 1e-9))
        self.freqs = np.arange(-self.J, self.J + 1) * self.step
        self.rho_cache = {} if rho_cache is None else rho_cache
        self._table: dict = {}

    def rows(self, kappa: float, freqs: np.ndarray) -> np.ndarray | None:
        """Transforms at ``freqs`` (None when they are off the grid)."""
        idx = np.rint(freqs / self.step).astype(int)
        if np.any(np.abs(idx * self.step - freqs) > 1e-9) or np.any(np.abs(idx) > self.J):
            return None
        key = round(float(kappa), 12)
        if key not in self._table:
            rho = _rho_plus(self.data, kappa, self.rho_cache)
            self._table[key] = _x_transform(self.data, self.freqs, self.data.q0 * rho)
        return self._table[key][idx + self.J]


def r_values(data: KPIIData, kR: float, lam: float, L, cache: dict | None = None,
             transforms: KappaTransforms | None = None) -> np.ndarray:
    """``r(k_R, lam, L)`` for one lam and many L (same function for r_1 and r_2)."""
    cache = {} if cache is None else cache
    L = np.atleast_1d(np.asarray(L, float))
    if L.size == 0:
        return np.zeros(0, complex)
    z = L * (L + 2 * kR) - lam * (lam + 2 * kR)
    if np.max(z) * data.y[-1] > 40.0:
        raise OverflowRisk(f"r kernel at k_R={kR}, lam={lam} grows like exp({np.max(z):.3g} eta)")
    freqs = L + lam + 2 * kR
    T = None if transforms is None else transforms.rows(-kR - lam, freqs)
    if T is None:
        rho = _rho_plus(data, -kR - lam, cache)
        T = _x_transform(data, freqs, data.q0 * rho)  # (len(L), Ny)
    return _exp_total(data.y, T, z) / TWO_PI


def _referenced(n: int, N: int, system: str, form: str):
    """Masks of the (row node, equation) kernel entries the equations use.

    Equations are ordered lam2 nodes then lam1 nodes; node ``m`` of a grid
    enters equation ``e`` when ``m >= e`` (tail integrals), except in the
    printed psi form where lam1 nodes enter for ``m <= e``.
    """
    m2 = np.arange(n)[:, None]
    m1 = np.arange(N)[:, None]
    e2 = np.concatenate([np.arange(n), np.arange(N)])[None, :]
    use2 = m2 >= e2
    if system == "psi" and form == "printed":
        use1 = m1 <= e2
    else:
        use1 = m1 >= e2
    return use2, use1


def build_jump_kernels(s, kR: float, data: KPIIData | None = None, system: str | None = None,
                       phi1_minus: np.ndarray | None = None, rho_cache: dict | None = None,
                       step: float | None = None, extent: float | None = None,
                       psi_form: str = "reflected",
                       transforms: KappaTransforms | None = None) -> JumpKernels:
    """Kernels of the ``chi`` (k_R <= 0) or ``psi`` (k_R >= 0) system at one k_R.

    ``psi_form='printed'`` keeps the psi equations with the integration
    ranges ``[0, lam]`` as usually stated; their kernels grow exponentially
    in eta and raise OverflowRisk for non-trivial q0. The default
    ``'reflected'`` form is the image of the chi system under
    ``k -> -conj(k)`` (``psi_1(k_R, lam) = conj chi_2(-k_R, -lam)``).
    """
    data = data or KPIIData(s)
    system = system or system_for(kR)
    if (system == "chi" and kR > 0) or (system == "psi" and kR < 0):
        raise DomainViolation(f"{system} system is defined for k_R {'<=' if system == 'chi' else '>='} 0")
    if psi_form not in ("reflected", "printed"):
        raise ValueError("psi_form must be 'reflected' or 'printed'")
    kg = data.grid
    step = step or kg.lambda_step
    extent = extent or kg.lambda_extent
    lam2, lam1 = lambda_grids(kR, step, extent, system)
    n, N = len(lam2), len(lam1)
    L = np.concatenate([-2 * kR - lam2, -2 * kR - lam1])
    cache = {} if rho_cache is None else rho_cache
    if transforms is not None:
        cache = transforms.rho_cache
    use2, use1 = _referenced(n, N, system, psi_form)
    r2 = np.zeros((n, n + N), complex)
    r1 = np.zeros((N, n + N), complex)
    for m, lam in enumerate(lam2):
        r2[m, use2[m]] = r_values(data, kR, lam, L[use2[m]], cache, transforms)
    for m, lam in enumerate(lam1):
        r1[m, use1[m]] = r_values(data, kR, lam, L[use1[m]], cache, transforms)
    r1_diag = np.array([r_values(data, kR, lam, [-2 * kR - lam], cache, transforms)[0] for lam in lam2])
    phi1 = boundary_phi_minus(data, kR) if phi1_minus is None else phi1_minus
    pv = p1_values(data, kR, L, phi1)
    return JumpKernels(kR, system, lam2, lam1, r2, r1, r1_diag, pv[:n], pv[n:], cache, psi_form)


# ---------------------------------------------------------------------------
# Volterra systems
# ---------------------------------------------------------------------------

@dataclass
class JumpDensities:
    """chi (k_R <= 0) or psi (k_R >= 0): ``X2`` on ``lam2`` and ``X1`` on ``lam1``."""

    kR: float
    system: str
    lam2: np.ndarray
    lam1: np.ndarray
    X2: np.ndarray
    X1: np.ndarray
    contraction: float
    residual: float
    history: list = field(default_factory=list)
    r1_argument: str = "l"

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kR", "lambda", "re", "im"])
            for lam, v in zip(np.concatenate([self.lam2, self.lam1]), np.concatenate([self.X2, self.X1])):
                w.writerow([repr(self.kR), repr(lam), repr(v.real), repr(v.imag)])


def _range_weights(n_nodes: int, lo: int, hi: int, step: float) -> np.ndarray:
    """Trapezoid weights over node indices lo..hi (inclusive)."""
    w = np.zeros(n_nodes)
    if hi > lo:
        w[lo:hi + 1] = step
        w[lo] *= 0.5
        w[hi] *= 0.5
    return w


def volterra_matrix(kernels: JumpKernels, r1_argument: str = "l") -> np.ndarray:
    """Discretised integral operator acting on ``concat(X2, X1)``.

    Rows follow the equations for X2 (first block) and X1, so that the
    system reads ``X = p + K X``. The chi system and the reflected psi
    system integrate over tails (nodes ``m >= e``); the printed psi form
    has the opposite sign and integrates X1 over nodes ``0..e``.
    """
    if r1_argument not in ("l", "lambda"):
        raise ValueError("r1_argument must be 'l' or 'lambda'")
    n = len(kernels.lam2)
    N = len(kernels.lam1)
    h = kernels.step
    K = np.zeros((n + N, n + N), dtype=complex)
    printed = kernels.system == "psi" and kernels.psi_form == "printed"
    sign = -1.0 if printed else 1.0
    for e in range(n + N):  # equation e; its third kernel argument is L[e]
        own = e if e < n else e - n
        K[e, :n] = _range_weights(n, own, n - 1, h) * kernels.r2[:, e]
        w1 = _range_weights(N, 0, own, h) if printed else _range_weights(N, own, N - 1, h)
        if e < n and r1_argument == "lambda":
            r1col = np.full(N, kernels.r1_diag[e])
        else:
            r1col = kernels.r1[:, e]
        K[e, n:] = w1 * r1col
    return sign * K


def solve_jump_densities(kernels: JumpKernels, kR: float | None = None, r1_argument: str = "l",
                         tol: float = 1e-15, max_iter: int = 200) -> JumpDensities:
    """Jacobi iteration ``X <- p + K X`` for the system at ``kernels.kR``."""
    if kR is not None and abs(kR - kernels.kR) > 1e-12:
        raise DomainViolation("kernels were built for a different k_R")
    K = volterra_matrix(kernels, r1_argument)
    p = np.concatenate([kernels.p2, kernels.p1])
    X = p.copy()
    scale = max(float(np.max(np.abs(p))), 1e-300)
    history = []
    for it in range(max_iter):
        new = p + K @ X
        upd = float(np.max(np.abs(new - X)))
        X = new
        history.append(upd)
        if len(history) == 2 and history[0] > 0 and history[1] / history[0] >= 1:
            raise ContractionFailure(f"jump densities at k_R={kernels.kR}: ratio {history[1] / history[0]:.3g}",
                                     contraction=history[1] / history[0])
        if upd <= tol * scale:
            break
    else:
        raise NonConvergence(f"jump densities at k_R={kernels.kR} did not converge", err_estimate=history[-1])
    ratio = history[1] / history[0] if len(history) > 1 and history[0] > 0 else 0.0
    residual = float(np.max(np.abs(X - p - K @ X)))
    n = len(kernels.lam2)
    return JumpDensities(kernels.kR, kernels.system, kernels.lam2, kernels.lam1, X[:n], X[n:],
                         ratio, residual, history, r1_argument)


def jump_representation(dens: JumpDensities, mu_breve: dict, x, y, t) -> complex:
    """sum of the two lam-integrals of the jump formula at one (x, y, t).

    ``mu_breve`` maps ``round(kappa, 12)`` to a callable ``(x, y, t) -> mu^+``
    at the real point ``kappa = -k_R - lam``.
    """
    kR = dens.kR
    h = abs(dens.lam2[1] - dens.lam2[0]) if len(dens.lam2) > 1 else 0.0
    total = 0.0 + 0.0j
    for lam, X in ((dens.lam2, dens.X2), (dens.lam1, dens.X1)):
        w = np.full(len(lam), h)
        w[[0, -1]] *= 0.5
        mb = np.array([mu_breve[round(float(-kR - v), 12)](x, y, t) for v in lam])
        total += np.sum(w * X * phase_e(x, y, t, kR, lam) * mb)
    return complex(total)


# ---------------------------------------------------------------------------
# nonlinear global relation
# ---------------------------------------------------------------------------

def _gr_terms(data: KPIIData, l: float, k: complex, it: int, mu: EigenfunctionField,
              rho: np.ndarray, stride: int = 1):
    y = data.y[::stride]
    tau = data.tau
    z = exponent_z(k, l)
    w = exponent_w(k, l)
    F0 = _x_transform(data, [l], (data.q0 * rho)[:, ::stride])[0]
    t1 = _exp_total(y, F0, z)
    if it > 0:
        G = _h_transform(data, [l], k, mu.samples[:, 0, :it + 1])[0]
        t2 = _exp_total(tau[:it + 1], G, -w)
    else:
        t2 = 0.0
    q = data.q[:, ::stride, it]
    Ft = _x_transform(data, [l], q * mu.samples[:, ::stride, it])[0]
    t3 = np.exp(-w * tau[it]) * _exp_total(y, Ft, z)
    return complex(t1), complex(t2), complex(t3)


def global_relation_residual_kpii(l: float, k: complex, t: float, s=None, mu_fields=None,
                                  phi_fields=None, rho_fields=None, data: KPIIData | None = None):
    """LHS - RHS of the nonlinear global relation and an error estimate.

    ``mu_fields``: an ``EigenfunctionField`` of the family matching k
    (its y = 0 row is phi unless ``phi_fields`` is given); ``rho_fields``:
    rho samples on (x, y) (default: the t = 0 slice of mu).
    Returns ``(residual, err_estimate, terms)``.
    """
    k = complex(k)
    if l * (l + 2 * k.real) > 1e-12:
        raise DomainViolation(f"l(l+2k_R) = {l * (l + 2 * k.real):.3g} > 0")
    if data is None:
        data = KPIIData(s)
    if mu_fields is None:
        from .kpii_direct import solve_family
        mu_fields = solve_family(data, k, "+" if k.imag >= 0 else "-")
    mu = mu_fields
    if phi_fields is not None:
        mu = EigenfunctionField(mu.quadrant, mu.family, mu.k, mu.x, mu.y, mu.t, mu.samples.copy(),
                                mu.iteration_residual)
        mu.samples[:, 0, :] = phi_fields.samples if hasattr(phi_fields, "samples") else phi_fields
    rho = mu.samples[:, :, 0] if rho_fields is None else (
        rho_fields.samples[:, :, 0] if hasattr(rho_fields, "samples") else rho_fields)
    it = data.time_index(t)
    t1, t2, t3 = _gr_terms(data, l, k, it, mu, rho)
    c1, c2, c3 = _gr_terms(data, l, k, it, mu, rho, stride=2)
    res = t1 - t2 - t3
    err = (abs(t1 - c1) + abs(t3 - c3)) / 15.0 + abs(t2) * 1e-12
    return res, err, (t1, t2, t3)
