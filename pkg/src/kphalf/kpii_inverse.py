"""Inverse problem for KPII: the Pompeiu representation as a fixed point.

The representation of ``mu`` is discretised on a fixed set of spectral nodes:

* area cells (rectangles centred at ``nu_a``, symmetric under
  ``nu_R -> -nu_R``) carrying ``d mu / d conj(nu) = s gamma E mu(-nu_R, nu_I)``
  with ``s = +1`` left of the imaginary axis and ``-1`` right of it; the
  Cauchy kernel is integrated over each cell in closed form;
* real-axis nodes ``nu_m`` carrying the jump ``mu^+ - mu^-``, written as
  the lam-integrals of the jump densities against ``e_lam mu^+`` at the
  real points ``kappa = -nu_m - lam``; the jump is interpolated linearly
  between nodes and the Cauchy integral of each hat function is exact.

The unknowns are ``mu`` at the cell centres and ``mu^+`` at the kappa
nodes, the latter evaluated at ``kappa + i eps_c`` (one-sided limit). All
physical points are solved at once: every sweep is two matrix products.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CauchyKernelTooClose, ConfigError, ContractionFailure, GridTooCoarse,
                     NonConvergence, ProbeNotConverged, RealityViolation)
from .kpii_direct import KPIIData, solve_mu
from .kpii_spectral import (JumpDensities, KappaTransforms, alpha_value, beta_value,
                            boundary_phi_minus, build_gamma, build_jump_kernels,
                            jump_representation, lambda_grids, p1_values, phase_E, phase_e,
                            solve_jump_densities, system_for)


# ---------------------------------------------------------------------------
# closed-form Cauchy integrals
# ---------------------------------------------------------------------------

def _cell_primitive(U, V):
    """F with d^2F/dUdV = 1/(U + iV)."""
    r2 = U * U + V * V
    logr = np.log(np.where(r2 > 0, r2, 1.0))
    safe_u = np.where(U != 0, U, 1.0)
    safe_v = np.where(V != 0, V, 1.0)
    p = np.where(U != 0, U * np.arctan(V / safe_u), 0.0) + 0.5 * V * logr - V
    q = np.where(V != 0, V * np.arctan(U / safe_v), 0.0) + 0.5 * U * logr - U
    return p - 1j * q


def cell_cauchy(k, r0, r1, i0, i1):
    """Integral of 1/(nu - k) over the rectangle [r0, r1] x [i0, i1]; broadcasts."""
    k = np.asarray(k, complex)
    U0, U1 = r0 - k.real, r1 - k.real
    V0, V1 = i0 - k.imag, i1 - k.imag
    return (_cell_primitive(U1, V1) - _cell_primitive(U0, V1)
            - _cell_primitive(U1, V0) + _cell_primitive(U0, V0))


def segment_cauchy_weights(nodes: np.ndarray, k) -> np.ndarray:
    """W with ``W @ f = int f(nu)/(nu - k) dnu`` for f linear between real nodes."""
    k = np.atleast_1d(np.asarray(k, complex))[:, None]
    a, b = nodes[:-1][None, :], nodes[1:][None, :]
    d = b - a
    L = np.log((b - k) / (a - k))
    W = np.zeros((k.shape[0], len(nodes)), complex)
    W[:, :-1] += ((b - k) * L - d) / d
    W[:, 1:] += (d + (k - a) * L) / d
    return W


# ---------------------------------------------------------------------------
# spectral nodes and tables
# ---------------------------------------------------------------------------

QUADRANT_SIGN = {"Q1": -1.0, "Q2": 1.0, "Q3": 1.0, "Q4": -1.0}


def _quadrant(nu: complex) -> str:
    if nu.imag > 0:
        return "Q1" if nu.real > 0 else "Q2"
    return "Q4" if nu.real > 0 else "Q3"


@dataclass
class SpectralNodes:
    """Area cells, real-axis jump nodes and the kappa nodes they reference."""

    nu: np.ndarray
    cells: tuple
    refl: np.ndarray
    sign: np.ndarray
    quadrant: list
    jump_nu: np.ndarray
    kappa: np.ndarray
    lam_step: float
    lam_extent: float
    eps_c: float

    @classmethod
    def from_scenario(cls, s) -> "SpectralNodes":
        ig, kg = s.inverse_grid, s.kpii_grid
        ratio = ig.jump_step / kg.lambda_step
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("inverse_grid.jump_step must be a positive multiple of kpii_grid.lambda_step")
        nr = max(1, int(round(ig.r_max / ig.r_step)))
        ni = max(1, int(round(ig.radius / ig.i_step)))
        cr = (np.arange(-nr, nr) + 0.5) * ig.r_step
        ci = (np.arange(-ni, ni) + 0.5) * ig.i_step
        CR, CI = np.meshgrid(cr, ci, indexing="ij")
        nu = (CR + 1j * CI).ravel()
        hr, hi = ig.r_step / 2, ig.i_step / 2
        cells = (nu.real - hr, nu.real + hr, nu.imag - hi, nu.imag + hi)
        # (-nu_R, nu_I) sits at the mirrored row index
        idx = np.arange(nu.size).reshape(CR.shape)
        refl = idx[::-1, :].ravel()
        quads = [_quadrant(v) for v in nu]
        sign = np.array([QUADRANT_SIGN[q] for q in quads])
        nj = int(math.floor(ig.radius / ig.jump_step + 1e-9))
        jump_nu = np.arange(-nj, nj + 1) * ig.jump_step
        h = kg.lambda_step
        nk = int(round((jump_nu[-1] + kg.lambda_extent) / h)) + 1
        kappa = np.arange(-nk, nk + 1) * h
        return cls(nu, cells, refl, sign, quads, jump_nu, kappa, h, kg.lambda_extent, ig.eps_c)

    def kappa_index(self, values) -> np.ndarray:
        idx = np.rint((np.asarray(values) - self.kappa[0]) / self.lam_step).astype(int)
        if np.any(idx < 0) or np.any(idx >= len(self.kappa)) or np.any(
                np.abs(self.kappa[np.clip(idx, 0, len(self.kappa) - 1)] - values) > 1e-9):
            raise GridTooCoarse("jump density node outside the kappa grid")
        return idx

    def quadrant_points(self) -> dict:
        out: dict = {q: [] for q in ("Q1", "Q2", "Q3", "Q4")}
        for v, q in zip(self.nu, self.quadrant):
            out[q].append(v)
        return {q: np.asarray(v, complex) for q, v in out.items()}

    def scatter(self, per_quadrant: dict) -> np.ndarray:
        """Per-quadrant arrays (in quadrant_points order) back to node order."""
        out = np.empty(self.nu.size, complex)
        pos = {q: 0 for q in per_quadrant}
        for a, q in enumerate(self.quadrant):
            out[a] = per_quadrant[q][pos[q]]
            pos[q] += 1
        return out


@dataclass
class SpectralTables:
    """gamma at the area nodes and jump densities at the real-axis nodes."""

    nodes: SpectralNodes
    gamma: np.ndarray
    densities: list
    contraction: float = 0.0
    beta: np.ndarray | None = None
    alpha: np.ndarray | None = None

    def scaled(self, factor: float) -> "SpectralTables":
        dens = [JumpDensities(d.kR, d.system, d.lam2, d.lam1, factor * d.X2, factor * d.X1,
                              d.contraction, d.residual, d.history, d.r1_argument)
                for d in self.densities]
        return SpectralTables(self.nodes, factor * self.gamma, dens, self.contraction)


def build_tables(s, nodes: SpectralNodes | None = None, data: KPIIData | None = None,
                 log=None) -> SpectralTables:
    """gamma and chi/psi from the data of ``s`` on the inverse-problem nodes."""
    data = data or KPIIData(s)
    nodes = nodes or SpectralNodes.from_scenario(s)
    pts = nodes.quadrant_points()
    gt = build_gamma(s, pts, data)
    if log:
        log(f"gamma at {nodes.nu.size} nodes, worst contraction {gt.contraction:.3g}")
    max_freq = 2 * (abs(nodes.jump_nu).max() + nodes.lam_extent) + nodes.lam_step
    transforms = KappaTransforms(data, nodes.lam_step, max_freq)
    dens = []
    worst = gt.contraction
    for nu in nodes.jump_nu:
        phi = boundary_phi_minus(data, float(nu))
        kern = build_jump_kernels(s, float(nu), data, phi1_minus=phi, step=nodes.lam_step,
                                  extent=nodes.lam_extent, transforms=transforms)
        d = solve_jump_densities(kern)
        worst = max(worst, d.contraction)
        dens.append(d)
    if log:
        log(f"jump densities at {len(dens)} nodes")
    return SpectralTables(nodes, nodes.scatter(gt.gamma), dens, worst,
                          nodes.scatter(gt.beta), nodes.scatter(gt.alpha))


def linear_tables(s, nodes: SpectralNodes | None = None, data: KPIIData | None = None) -> SpectralTables:
    """The same tables with every eigenfunction replaced by 1 (first order in the data)."""
    data = data or KPIIData(s)
    nodes = nodes or SpectralNodes.from_scenario(s)
    one_rho = np.ones((len(data.x), len(data.y)))
    one_phi = np.ones((len(data.x), len(data.tau)))
    gamma = np.empty(nodes.nu.size, complex)
    for a, (k, q) in enumerate(zip(nodes.nu, nodes.quadrant)):
        gamma[a] = beta_value(data, k, one_rho)
        if q in ("Q3", "Q4"):
            gamma[a] -= alpha_value(data, k, one_phi)
    dens = []
    for nu in nodes.jump_nu:
        lam2, lam1 = lambda_grids(float(nu), nodes.lam_step, nodes.lam_extent, system_for(float(nu)))
        X2 = p1_values(data, float(nu), -2 * nu - lam2, one_phi)
        X1 = p1_values(data, float(nu), -2 * nu - lam1, one_phi)
        dens.append(JumpDensities(float(nu), system_for(float(nu)), lam2, lam1, X2, X1, 0.0, 0.0))
    return SpectralTables(nodes, gamma, dens, 0.0)


# ---------------------------------------------------------------------------
# the operator
# ---------------------------------------------------------------------------

@dataclass
class PompeiuOperator:
    """Weights of the discretised representation at the node evaluation points.

    Rows of ``Wa`` / ``Wj`` are the evaluation points ``nu_a`` followed by
    ``kappa_n + i eps_c``; ``reflect=False`` feeds ``mu(nu)`` instead of
    ``mu(-nu_R, nu_I)`` into the area terms (argument audit only).
    """

    tables: SpectralTables
    k_eval: np.ndarray
    Wa: np.ndarray
    Wj: np.ndarray
    flat_m: np.ndarray
    flat_lam: np.ndarray
    flat_coef: np.ndarray
    flat_kappa: np.ndarray
    starts: np.ndarray
    reflect: bool = True

    @classmethod
    def build(cls, tables: SpectralTables, reflect: bool = True) -> "PompeiuOperator":
        nodes = tables.nodes
        k_eval = np.concatenate([nodes.nu, nodes.kappa + 1j * nodes.eps_c])
        Wa = area_weights(nodes, k_eval)
        Wj = jump_weights(nodes, k_eval)
        ms, lams, coefs, kaps, starts = [], [], [], [], []
        for m, d in enumerate(tables.densities):
            h = nodes.lam_step
            starts.append(sum(len(v) for v in lams))
            for lam, X in ((d.lam2, d.X2), (d.lam1, d.X1)):
                w = np.full(len(lam), h)
                w[[0, -1]] *= 0.5
                ms.append(np.full(len(lam), m))
                lams.append(lam)
                coefs.append(w * X)
                kaps.append(nodes.kappa_index(-d.kR - lam))
        return cls(tables, k_eval, Wa, Wj, np.concatenate(ms), np.concatenate(lams),
                   np.concatenate(coefs), np.concatenate(kaps), np.asarray(starts), reflect)

    @property
    def n_area(self) -> int:
        return self.tables.nodes.nu.size

    def phases(self, x, y, t):
        """gamma E on the cells and coef e_lam on the density nodes, plus x-derivatives."""
        nodes = self.tables.nodes
        x, y, t = (np.asarray(v, float)[None, :] for v in (x, y, t))
        nu = nodes.nu[:, None]
        GE = self.tables.gamma[:, None] * phase_E(x, y, t, nu, -2 * nu.real)
        dGE = -2j * nu.real * GE
        numf = self.tables.nodes.jump_nu[self.flat_m][:, None]
        lam = self.flat_lam[:, None]
        CE = self.flat_coef[:, None] * phase_e(x, y, t, numf, lam)
        dCE = -1j * (lam + 2 * numf) * CE
        return GE, dGE, CE, dCE

    def _area_arg(self, U):
        return U[self.tables.nodes.refl] if self.reflect else U[:self.n_area]

    def densities_x(self, U, P):
        """Area and jump densities for values U (rows = evaluation points)."""
        GE, CE = P[0], P[2]
        area = GE * self._area_arg(U)
        jump = np.add.reduceat(CE * U[self.n_area + self.flat_kappa], self.starts, axis=0)
        return area, jump

    def derivative_source(self, U, P):
        dGE, dCE = P[1], P[3]
        area = dGE * self._area_arg(U)
        jump = np.add.reduceat(dCE * U[self.n_area + self.flat_kappa], self.starts, axis=0)
        return area, jump

    def apply(self, U, P):
        """1 + K U at every node evaluation point."""
        area, jump = self.densities_x(U, P)
        return 1.0 + self.Wa @ area + self.Wj @ jump

    def apply_linear(self, V, P):
        area, jump = self.densities_x(V, P)
        return self.Wa @ area + self.Wj @ jump


def area_weights(nodes: SpectralNodes, k) -> np.ndarray:
    """-(1/pi) s_a int_cell dA/(nu - k); rows = k, columns = cells."""
    k = np.atleast_1d(np.asarray(k, complex))[:, None]
    r0, r1, i0, i1 = (c[None, :] for c in nodes.cells)
    return -(1 / np.pi) * cell_cauchy(k, r0, r1, i0, i1) * nodes.sign[None, :]


def jump_weights(nodes: SpectralNodes, k) -> np.ndarray:
    """(1/2 pi i) times the hat-function Cauchy weights on the real-axis nodes."""
    k = np.atleast_1d(np.asarray(k, complex))
    lo, hi = nodes.jump_nu[0], nodes.jump_nu[-1]
    dist = np.where((k.real >= lo) & (k.real <= hi), np.abs(k.imag),
                    np.minimum(np.abs(k - lo), np.abs(k - hi)))
    if np.any(dist < nodes.eps_c * (1 - 1e-9)):
        bad = k[np.argmin(dist)]
        raise CauchyKernelTooClose(f"k = {bad:.4g} is within eps_c = {nodes.eps_c} of the real axis")
    return segment_cauchy_weights(nodes.jump_nu, k) / (2j * np.pi)


def apply_pompeiu(op: PompeiuOperator, mu_current: np.ndarray, x, y, t, kR: float, kI: float,
                  mu_x: np.ndarray | None = None) -> complex:
    """The representation at one (x, y, t, k) for node values ``mu_current``.

    ``mu_current`` holds mu at the cell centres followed by mu^+ at the
    kappa nodes, for this single physical point.
    """
    U = np.asarray(mu_current, complex).reshape(-1, 1)
    P = op.phases([x], [y], [t])
    k = complex(kR, kI)
    area, jump = op.densities_x(U, P)
    return complex(1.0 + (area_weights(op.tables.nodes, k) @ area
                          + jump_weights(op.tables.nodes, k) @ jump)[0, 0])


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------

@dataclass
class InverseSolution:
    """Node values of mu and mu_x for a batch of physical points."""

    op: PompeiuOperator
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    U: np.ndarray
    Ux: np.ndarray
    contraction: float
    history: list = field(default_factory=list)

    def mu_at(self, k: complex) -> np.ndarray:
        nodes = self.op.tables.nodes
        P = self.op.phases(self.x, self.y, self.t)
        area, jump = self.op.densities_x(self.U, P)
        return 1.0 + (area_weights(nodes, k) @ area + jump_weights(nodes, k) @ jump)[0]

    def mu_x_at(self, k) -> np.ndarray:
        """mu_x at one or several k; rows = k, columns = physical points."""
        nodes = self.op.tables.nodes
        P = self.op.phases(self.x, self.y, self.t)
        a1, j1 = self.op.derivative_source(self.U, P)
        a2, j2 = self.op.densities_x(self.Ux, P)
        return area_weights(nodes, k) @ (a1 + a2) + jump_weights(nodes, k) @ (j1 + j2)


def _iterate(step, start, tol, max_iter, what):
    state = start
    history = []
    for _ in range(max_iter):
        new = step(state)
        upd = float(np.max(np.abs(new - state)))
        state = new
        history.append(upd)
        if len(history) == 2 and history[0] > 0 and history[1] / history[0] >= 1:
            raise ContractionFailure(f"{what}: update ratio {history[1] / history[0]:.3g}",
                                     contraction=history[1] / history[0])
        if upd <= tol:
            return state, history
    raise NonConvergence(f"{what} did not converge in {max_iter} sweeps", err_estimate=history[-1])


def solve_inverse(op: PompeiuOperator, s, x=None, y=None, t=None, batch: int = 256) -> InverseSolution:
    """mu and mu_x at all node evaluation points for every physical point.

    Defaults to the scenario's physical grid (all (x, y, t) combinations).
    """
    ig = s.inverse_grid
    if x is None:
        pg = s.physical_grid
        T, Y, X = np.meshgrid(pg.ts, pg.ys, pg.xs, indexing="ij")
        x, y, t = X.ravel(), Y.ravel(), T.ravel()
    x, y, t = (np.asarray(v, float).ravel() for v in (x, y, t))
    n = len(op.k_eval)
    U = np.ones((n, x.size), complex)
    Ux = np.zeros((n, x.size), complex)
    hist_all: list = []
    ratio = 0.0
    for b0 in range(0, x.size, batch):
        sl = slice(b0, b0 + batch)
        P = op.phases(x[sl], y[sl], t[sl])
        u, h = _iterate(lambda V: op.apply(V, P), np.ones((n, x[sl].size), complex),
                        ig.tol, ig.max_iter, "inverse fixed point")
        a, j = op.derivative_source(u, P)
        src = op.Wa @ a + op.Wj @ j
        ux, hx = _iterate(lambda V: src + op.apply_linear(V, P), src, ig.tol, ig.max_iter,
                          "x-derivative fixed point")
        U[:, sl], Ux[:, sl] = u, ux
        if len(h) > 1 and h[0] > 0:
            ratio = max(ratio, h[1] / h[0])
        hist_all.append(h)
    return InverseSolution(op, x, y, t, U, Ux, ratio, hist_all)


def trivial_solution(op: PompeiuOperator, x, y, t) -> InverseSolution:
    """mu = 1, mu_x = 0 at the nodes (the linear representation)."""
    x, y, t = (np.asarray(v, float).ravel() for v in (x, y, t))
    n = len(op.k_eval)
    return InverseSolution(op, x, y, t, np.ones((n, x.size), complex),
                           np.zeros((n, x.size), complex), 0.0)


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------

@dataclass
class ReconstructedSolution:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    q: np.ndarray
    err: np.ndarray
    probes: dict
    imag_residue: float

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "t", "q", "err"])
            for row in zip(self.x, self.y, self.t, self.q, self.err):
                w.writerow([repr(float(v)) for v in row])

    def write_probes(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump({"probes": {str(r): {"max_abs": float(np.max(np.abs(v))),
                                           "max_imag": float(np.max(np.abs(v.imag)))}
                                  for r, v in self.probes.items()},
                       "imag_residue": self.imag_residue,
                       "max_err": float(np.max(self.err)) if self.err.size else 0.0},
                      fh, indent=2, sort_keys=True)


def reconstruct_q(sol: InverseSolution, probes=(20.0, 40.0), angle: float = math.pi / 4,
                  probe_tol: float = 0.25, reality_tol: float = 5e-2) -> ReconstructedSolution:
    """q = -2i lim k mu_x, two-point Richardson extrapolation in 1/|k| along a ray."""
    probes = [float(p) for p in probes]
    if len(probes) < 2 or any(b <= a for a, b in zip(probes, probes[1:])):
        raise ValueError("probes must be at least two increasing magnitudes")
    ks = np.array([r * np.exp(1j * angle) for r in probes])
    mux = sol.mu_x_at(ks)
    est = {r: -2j * k * mux[i] for i, (r, k) in enumerate(zip(probes, ks))}
    r1, r2 = probes[-2], probes[-1]
    q1, q2 = est[r1], est[r2]
    q_inf = (r2 * q2 - r1 * q1) / (r2 - r1)
    scale = max(float(np.max(np.abs(q_inf))), 1e-300)
    spread = float(np.max(np.abs(q2 - q1)))
    if spread > probe_tol * scale and spread > 1e-14:
        raise ProbeNotConverged(f"probe estimates differ by {spread:.3g} (scale {scale:.3g})")
    residue = float(np.max(np.abs(q_inf.imag))) / scale if scale > 1e-300 else 0.0
    if residue > reality_tol and float(np.max(np.abs(q_inf.imag))) > 1e-14:
        raise RealityViolation(f"imaginary residue {residue:.3g} of reconstructed q")
    err = np.abs(q_inf - q2)
    return ReconstructedSolution(sol.x, sol.y, sol.t, q_inf.real, err, est, residue)


# ---------------------------------------------------------------------------
# checks against the direct problem
# ---------------------------------------------------------------------------

@dataclass
class CheckReport:
    deviation: float
    oracle_error: float
    falsified: float
    scale: float
    details: list = field(default_factory=list)


def _mu_field(data, k: complex, s):
    quad = _quadrant(k) if k.imag != 0 else ("Q1" if k.real > 0 else "Q2")
    return solve_mu(quad, k.real, k.imag, s, data=data)


def dbar_check(s, samples, data: KPIIData | None = None, h: float = 0.02) -> CheckReport:
    """Finite-difference d/d conj(k) of the direct mu against s gamma E mu(-k_R, k_I).

    ``samples``: iterable of ``(k, x, y, t)``; y and t must be solver nodes.
    The oracle error is the change of the central difference under h -> 2h.
    """
    data = data or KPIIData(s)
    out = []
    dev = err = scale = 0.0
    fals = math.inf
    for k, x, y, t in samples:
        k = complex(k)
        if min(abs(k.real), abs(k.imag)) < 2.5 * h:
            raise GridTooCoarse(f"stencil of width {2 * h} crosses an axis at k={k}")
        quad = _quadrant(k)
        f0 = _mu_field(data, k, s)
        iy, it = f0.y_index(y), f0.t_index(t)

        def val(kk):
            return complex(_mu_field(data, kk, s).at(x, iy, it))

        def dbar(step):
            dR = (val(k + step) - val(k - step)) / (2 * step)
            dI = (val(k + 1j * step) - val(k - 1j * step)) / (2 * step)
            return 0.5 * (dR + 1j * dI)

        d1, d2 = dbar(h), dbar(2 * h)
        other = val(complex(-k.real, k.imag))
        g = build_gamma(s, {quad: [k]}, data).gamma[quad][0]
        rhs = QUADRANT_SIGN[quad] * complex(phase_E(x, y, t, k, -2 * k.real)) * g * other
        e = abs(d1 - d2) / 3
        out.append({"k": [k.real, k.imag], "x": x, "y": y, "t": t, "fd": [d1.real, d1.imag],
                    "rhs": [rhs.real, rhs.imag], "deviation": abs(d1 - rhs), "oracle_error": e,
                    "falsified": abs(d1 + rhs)})
        dev, err = max(dev, abs(d1 - rhs)), max(err, e)
        fals = min(fals, abs(d1 + rhs))
        scale = max(scale, abs(rhs))
    return CheckReport(dev, err, fals, scale, out)


def _extrapolated(fields, x, iy, it) -> complex:
    """delta -> 0 limit from offsets delta, 2 delta, 4 delta (Richardson, error O(delta^3))."""
    a, b, c = (complex(f.at(x, iy, it)) for f in fields)
    return (8 * a - 6 * b + c) / 3


def jump_check(s, kR: float, points, data: KPIIData | None = None, delta: float = 0.005,
               densities: JumpDensities | None = None, log=None) -> CheckReport:
    """Jump of the direct mu across the real axis against the lam-integral representation.

    ``points``: iterable of ``(x, y, t)`` on solver nodes. The jump is the
    difference of the delta -> 0 extrapolations from above and
    below; the oracle error adds the distance of that extrapolation to the
    direct real-axis solves and the trapezoid error of the lam-integrals
    (change under doubling the step).
    """
    data = data or KPIIData(s)
    if densities is None:
        kern = build_jump_kernels(s, kR, data)
        densities = solve_jump_densities(kern)
    lam_all = np.concatenate([densities.lam2, densities.lam1])
    breve = {}
    for lam in lam_all:
        key = round(float(-kR - lam), 12)
        if key not in breve:
            f = solve_mu("Q1" if key > 0 else "Q2", key, 0.0, s, data=data)
            breve[key] = f
    if log:
        log(f"jump check at k_R={kR}: {len(breve)} reflected solves")
    up_real = solve_mu("Q1" if kR > 0 else "Q2", kR, 0.0, s, data=data)
    dn_real = solve_mu("Q4" if kR > 0 else "Q3", kR, 0.0, s, data=data)
    off = {side: [_mu_field(data, complex(kR, side * m * delta), s) for m in (1, 2, 4)] for side in (1, -1)}
    coarse = JumpDensities(kR, densities.system, densities.lam2[::2], densities.lam1[::2],
                           densities.X2[::2], densities.X1[::2], 0.0, 0.0)
    out = []
    dev = err = scale = 0.0
    fals = math.inf
    for x, y, t in points:
        iy, it = up_real.y_index(y), up_real.t_index(t)
        jump = _extrapolated(off[1], x, iy, it) - _extrapolated(off[-1], x, iy, it)
        direct = complex(up_real.at(x, iy, it) - dn_real.at(x, iy, it))
        mb = {key: (lambda xx, yy, tt, f=f: complex(f.at(xx, f.y_index(yy), f.t_index(tt))))
              for key, f in breve.items()}
        rep = jump_representation(densities, mb, x, y, t)
        rep2 = jump_representation(coarse, mb, x, y, t)
        e = abs(jump - direct) + abs(rep - rep2) / 3
        out.append({"kR": kR, "x": x, "y": y, "t": t, "jump": [jump.real, jump.imag],
                    "representation": [rep.real, rep.imag], "deviation": abs(jump - rep),
                    "oracle_error": e, "falsified": abs(jump + rep)})
        dev, err = max(dev, abs(jump - rep)), max(err, e)
        fals = min(fals, abs(jump + rep))
        scale = max(scale, abs(jump))
    return CheckReport(dev, err, fals, scale, out)


def imaginary_axis_jump(s, kI: float, points, data: KPIIData | None = None, delta: float = 0.02) -> float:
    """max |mu(0^-, k_I) - mu(0^+, k_I)| from one-sided linear extrapolation in k_R."""
    data = data or KPIIData(s)
    worst = 0.0
    fields = {}
    for sgn in (-1, 1):
        for m in (1, 2):
            fields[(sgn, m)] = _mu_field(data, complex(sgn * m * delta, kI), s)
    for x, y, t in points:
        f = fields[(1, 1)]
        iy, it = f.y_index(y), f.t_index(t)
        side = {sgn: 2 * complex(fields[(sgn, 1)].at(x, iy, it)) - complex(fields[(sgn, 2)].at(x, iy, it))
                for sgn in (-1, 1)}
        worst = max(worst, abs(side[1] - side[-1]))
    return worst


def direct_mu(s, k: complex, x, y, t, data: KPIIData | None = None) -> np.ndarray:
    """The direct-problem mu at one k for arrays of (x, y, t) on solver nodes."""
    data = data or KPIIData(s)
    f = _mu_field(data, complex(k), s)
    return np.array([complex(f.at(xx, f.y_index(yy), f.t_index(tt))) for xx, yy, tt in zip(x, y, t)])


def node_values_direct(s, op: PompeiuOperator, x, y, t, data: KPIIData | None = None) -> np.ndarray:
    """Direct-problem mu at every node evaluation point (rows) for the given physical points."""
    data = data or KPIIData(s)
    return np.array([direct_mu(s, k, x, y, t, data) for k in op.k_eval])


__all__ = [
    "CheckReport", "InverseSolution", "PompeiuOperator", "ReconstructedSolution", "SpectralNodes",
    "SpectralTables", "apply_pompeiu", "area_weights", "build_tables", "cell_cauchy", "dbar_check",
    "direct_mu", "imaginary_axis_jump", "jump_check", "jump_weights", "linear_tables",
    "node_values_direct", "reconstruct_q", "segment_cauchy_weights", "solve_inverse",
    "trivial_solution",
]
