"""Eigenfunctions of the linear problem in two independent representations.

``DirectMu`` integrates the physical-space form over the wavenumber ``l``
(data transforms of q(., ., t), g and d^{-1}h). ``PompeiuMu`` sums the
area and boundary-contour Cauchy integrals of the initial and boundary
transforms. Both return a value together with an error estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CauchyKernelTooClose, DomainViolation, MissingField
from .linear_solver import (
    CONTOUR_SENSE,
    _layout_params,
    _nu_r_panels,
    _panel_rows,
    _phase,
    _tail_correction,
)
from .linear_spectral import LinearTables, _rowwise_total
from .problem_data import Scenario
from .quadrature import spline_coefficients

L_STEP = 0.05
ETA_STEP = 0.05
SPECTRUM_CUTOFF = 1e-12


@dataclass(frozen=True)
class MuValue:
    value: complex
    err_estimate: float

    def __complex__(self) -> complex:
        return complex(self.value)


def _branch(kR: float, kI: float, branch: str | None) -> str:
    if branch is None:
        return ("1" if kR <= 0 else "2") + ("+" if kI >= 0 else "-")
    if branch not in ("1+", "1-", "2+", "2-"):
        raise ValueError(f"unknown branch {branch!r}")
    return branch


# ---------------------------------------------------------------------------
# physical-space representation
# ---------------------------------------------------------------------------

@dataclass
class _LNodes:
    nodes: np.ndarray  # (P, n)
    weights: np.ndarray
    coef_a: np.ndarray | None  # (P, n, Ja, 4) q-hat on [0, y]
    coef_c: np.ndarray  # (P, n, Jc, 4) q-hat on [y, y + eta_max]
    coef_g: np.ndarray  # (P, n, Jt, 4)
    coef_h: np.ndarray


class DirectMu:
    """mu at one physical point from the l-integral representation.

    The l line is cut into uniform panels (those where the data spectrum is
    negligible are dropped); the panel containing the moving breakpoint
    ``-2 k_R`` is split there on each call. The eta and tau integrals are
    exact integrals of exponentials against cubic splines of the sampled
    x-transforms.
    """

    def __init__(self, s: Scenario, x: float, y: float, t: float, q_field=None,
                 tables: LinearTables | None = None, order: int | None = None,
                 l_step: float = L_STEP, eta_step: float = ETA_STEP):
        if y < 0:
            raise DomainViolation("y must be non-negative")
        if not 0 <= t <= s.T + 1e-12:
            raise DomainViolation("t must lie in [0, T]")
        q_field = q_field if q_field is not None else s.exact
        if q_field is None:
            raise MissingField("a reference field q(x, y, t) is required")
        self.s, self.x, self.y, self.t = s, float(x), float(y), float(t)
        self.tables = tables or LinearTables(s, extra_times=[t])
        tb = self.tables
        self.it = tb.time_index(t)
        self.order = order or s.spectral_grid.order
        sg = s.spectral_grid
        xi = tb.xi
        self.eta_a = np.linspace(0.0, y, max(4, int(math.ceil(y / eta_step)) + 1)) if y > 0 else None
        self.eta_c = y + np.linspace(0.0, sg.eta_max, int(math.ceil(sg.eta_max / eta_step)) + 1)
        self.q_a = None if self.eta_a is None else np.asarray(
            q_field.q(xi[:, None], self.eta_a[None, :], t), float)
        self.q_c = np.asarray(q_field.q(xi[:, None], self.eta_c[None, :], t), float)

        lmax = 2 * sg.nu_r_max
        npan = 2 * int(round(lmax / l_step))
        edges = np.linspace(-lmax, lmax, npan + 1)
        probe = np.linspace(-lmax, lmax, 4 * npan + 1)
        cols = [self.q_c[:, ::4], tb.g[:, ::8], tb.hint[:, ::8]]
        if self.q_a is not None:
            cols.append(self.q_a[:, ::4])
        spec = np.abs(tb.x_transform(np.hstack(cols), probe)).max(axis=1)
        scale = float(spec.max()) or 1.0
        self.panels, dropped = [], 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            sel = (probe >= a - 1e-12) & (probe <= b + 1e-12)
            big = float(spec[sel].max())
            if big > SPECTRUM_CUTOFF * scale:
                self.panels.append((float(a), float(b)))
            else:
                dropped += (b - a) * big
        # dropped panels: |l-integrand| <= spectrum times the eta/tau extents
        self.mask_bound = dropped * (sg.eta_max + y + 3 * s.T * (1 + 2 * lmax)) / (2 * math.pi)
        self._cache: dict[int, _LNodes] = {}

    # -- node tables --------------------------------------------------------
    def _prepare(self, nodes: np.ndarray, weights: np.ndarray) -> _LNodes:
        tb = self.tables
        flat = nodes.ravel()
        mat = np.exp(-1j * np.outer(flat, tb.xi)) * tb.xi_w
        shape = nodes.shape
        ca = None
        if self.q_a is not None:
            ca = spline_coefficients(self.eta_a, mat @ self.q_a)
            ca = ca.reshape(shape + ca.shape[1:])
        cc = spline_coefficients(self.eta_c, mat @ self.q_c)
        cg = spline_coefficients(tb.tau, mat @ tb.g)
        ch = spline_coefficients(tb.tau, mat @ tb.hint)
        return _LNodes(nodes, weights, ca, cc.reshape(shape + cc.shape[1:]),
                       cg.reshape(shape + cg.shape[1:]), ch.reshape(shape + ch.shape[1:]))

    def _panel_nodes(self, order: int, intervals) -> tuple[np.ndarray, np.ndarray]:
        xg, wg = np.polynomial.legendre.leggauss(order)
        a = np.array([iv[0] for iv in intervals])[:, None]
        b = np.array([iv[1] for iv in intervals])[:, None]
        return 0.5 * (a + b) + 0.5 * (b - a) * xg, np.broadcast_to(0.5 * (b - a) * wg, (len(intervals), order))

    def _base(self, order: int) -> _LNodes:
        if order not in self._cache:
            self._cache[order] = self._prepare(*self._panel_nodes(order, self.panels))
        return self._cache[order]

    def _rows(self, order: int, cut: float):
        """Flattened node data with the panel containing ``cut`` split at it."""
        base = self._base(order)
        parts = []
        keep = np.ones(len(self.panels), bool)
        for p, (a, b) in enumerate(self.panels):
            if a + 1e-13 < cut < b - 1e-13:
                keep[p] = False
                parts.append(self._prepare(*self._panel_nodes(order, [(a, cut), (cut, b)])))
        parts.insert(0, _LNodes(base.nodes[keep], base.weights[keep],
                                None if base.coef_a is None else base.coef_a[keep],
                                base.coef_c[keep], base.coef_g[keep], base.coef_h[keep]))

        def cat(name):
            arrs = [getattr(q, name) for q in parts]
            if arrs[0] is None:
                return None
            return np.concatenate([a.reshape((-1,) + a.shape[2:]) for a in arrs])

        return (cat("nodes"), cat("weights"), cat("coef_a"), cat("coef_c"), cat("coef_g"),
                cat("coef_h"))

    # -- evaluation ---------------------------------------------------------
    def _value(self, kR: float, kI: float, branch: str, order: int) -> complex:
        k = complex(kR, kI)
        l, w, ca, cc, cg, ch = self._rows(order, -2 * kR)
        lo, hi = min(0.0, -2 * kR), max(0.0, -2 * kR)
        plus = (l <= lo) | (l >= hi)
        tb, y, t, it = self.tables, self.y, self.t, self.it
        ex = np.exp(1j * l * self.x) * w

        lp = l[plus]
        z = lp * (lp + 2 * k)
        A = np.zeros(len(lp), complex)
        if ca is not None:
            A = _rowwise_total(z, self.eta_a - y, ca[plus])
        b = -4j * lp * (lp**2 + 3 * k * lp + 3 * k**2)
        if branch.endswith("+"):
            sl, sgn = slice(0, it + 1), 1.0
        else:
            sl, sgn = slice(it, None), -1.0
        s_nodes = tb.tau[sl] - t
        jsl = slice(sl.start, None if sl.stop is None else sl.stop - 1)
        IG = _rowwise_total(b, s_nodes, cg[plus][:, jsl])
        IH = _rowwise_total(b, s_nodes, ch[plus][:, jsl])
        B = sgn * (-3.0) * (1j * (lp + 2 * k) * IG + IH)
        term_plus = np.sum(ex[plus] * (A + np.exp(-z * y) * B))

        lm = l[~plus]
        zc = lm * (lm + 2 * k)
        C = _rowwise_total(zc, self.eta_c - y, cc[~plus])
        term_minus = np.sum(ex[~plus] * C)
        return complex((term_plus - term_minus) / (2 * math.pi))

    def value(self, kR: float, kI: float, branch: str | None = None, error: bool = True) -> MuValue:
        br = _branch(kR, kI, branch)
        if br.endswith("+") and kI < 0 or br.endswith("-") and kI > 0:
            raise DomainViolation(f"branch {br} needs k_I {'>=' if br.endswith('+') else '<='} 0")
        v = self._value(kR, kI, br, self.order)
        err = 0.0
        if error:
            err = abs(v - self._value(kR, kI, br, max(2, self.order - 2))) + self.mask_bound
        return MuValue(v, err)

    def jump_formula(self, kR: float, error: bool = True) -> MuValue:
        """Right-hand side of the jump across k_I = 0 from the transform of Q over [0, T]."""

        def rhs(order):
            l, w, *_ = self._rows(order, -2 * kR)
            lo, hi = min(0.0, -2 * kR), max(0.0, -2 * kR)
            plus = (l <= lo) | (l >= hi)
            lp, wp = l[plus], w[plus]
            tb = self.tables
            b = -4j * lp * (lp**2 + 3 * kR * lp + 3 * kR**2)
            G, HI, _ = tb.boundary_hat_x(lp)
            last = len(tb.tau) - 1
            IG = tb.time_integrals(G, b[:, None], [last])[0, :, 0]
            IH = tb.time_integrals(HI, b[:, None], [last])[0, :, 0]
            QT = -3.0 * (1j * (lp + 2 * kR) * IG + IH)
            ph = np.exp(1j * lp * self.x - lp * (lp + 2 * kR) * self.y - b * self.t)
            return complex(np.sum(wp * ph * QT) / (2 * math.pi))

        v = rhs(self.order)
        err = abs(v - rhs(max(2, self.order - 2))) + self.mask_bound if error else 0.0
        return MuValue(v, err)


def eval_linear_mu(x: float, y: float, t: float, kR: float, kI: float, s: Scenario,
                   q_field=None, tables: LinearTables | None = None, branch: str | None = None) -> complex:
    """mu at (x, y, t; k) from the physical-space representation."""
    return DirectMu(s, x, y, t, q_field, tables).value(kR, kI, branch, error=False).value


# ---------------------------------------------------------------------------
# d-bar data and finite-difference checks
# ---------------------------------------------------------------------------

def dbar_linear_mu(x: float, y: float, t: float, kR: float, kI: float, s: Scenario,
                   tables: LinearTables | None = None, branch: str | None = None) -> complex:
    """Closed-form d-bar derivative of mu in the quadrant of ``branch``."""
    tables = tables or LinearTables(s, extra_times=[t])
    br = _branch(kR, kI, branch)
    val = tables.tilde_q0(np.array([kR]), np.array([[kI]]))[0, 0]
    if br.endswith("-"):
        val += tables.tilde_S(np.array([kR]), np.array([[kI]]), [s.T])[0, 0, 0]
    phase = np.exp(-2j * kR * x + 4j * kR * kI * y + 8j * kR * (3 * kI**2 - kR**2) * t)
    sign = 1.0 if br.startswith("1") else -1.0
    return complex(sign * phase * val / (2 * math.pi))


def dbar_finite_difference(mu, kR: float, kI: float, step: float = 2e-3) -> MuValue:
    """``(d_R + i d_I) mu / 2`` by centred differences with one Richardson step.

    ``mu(kR, kI)`` returns a complex value. The error estimate is the change
    under the extrapolation.
    """

    def D(h):
        dr = (mu(kR + h, kI) - mu(kR - h, kI)) / (2 * h)
        di = (mu(kR, kI + h) - mu(kR, kI - h)) / (2 * h)
        return 0.5 * (dr + 1j * di)

    d1, d2 = D(step), D(2 * step)
    rich = (4 * d1 - d2) / 3
    return MuValue(complex(rich), float(abs(rich - d1)))


# ---------------------------------------------------------------------------
# Cauchy-integral representation
# ---------------------------------------------------------------------------

def _duffy_square(u0: float, v0: float, rho: float, n: int):
    """Nodes and weights on the square of half-width rho around (u0, v0).

    The square is cut into four triangles with apex at the centre and each is
    mapped from the unit square with a radial coordinate, so an integrand
    times the weights stays smooth when it has a 1/distance singularity at
    the centre.
    """
    g, gw = np.polynomial.legendre.leggauss(n)
    g, gw = 0.5 * (g + 1), 0.5 * gw
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float) * rho
    us, vs, ws = [], [], []
    for i in range(4):
        A, B = corners[i], corners[(i + 1) % 4]
        area2 = abs(A[0] * (B[1] - A[1]) - A[1] * (B[0] - A[0]))
        r, tt = np.meshgrid(g, g, indexing="ij")
        wr, wt = np.meshgrid(gw, gw, indexing="ij")
        px = r * (A[0] + tt * (B[0] - A[0]))
        py = r * (A[1] + tt * (B[1] - A[1]))
        us.append(u0 + px.ravel())
        vs.append(v0 + py.ravel())
        ws.append((wr * wt * r * area2).ravel())
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ws)


# breakpoints around the Cauchy point in units of the square half-width
GRADING = (1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0)
ROW_GRADING = (1.0, 2.0, 4.0)
DUFFY_ORDER = 12


class PompeiuMu:
    """mu at one physical point from the Cauchy-integral representation.

    The boundary transforms run to the final time T. Rows of the nu_R rule
    and nodes along nu_I are refined around the Cauchy point; the square of
    half-width rho around it is integrated with a polar (Duffy) rule.
    """

    def __init__(self, s: Scenario, x: float, y: float, t: float,
                 tables: LinearTables | None = None, order: int | None = None,
                 epsilon: float | None = None):
        if y < 0:
            raise DomainViolation("y must be non-negative")
        if not 0 <= t <= s.T + 1e-12:
            raise DomainViolation("t must lie in [0, T]")
        self.s, self.x, self.y, self.t = s, float(x), float(y), float(t)
        self.tables = tables or LinearTables(s, extra_times=[t])
        self.order = order or s.spectral_grid.order
        self.epsilon = epsilon if epsilon is not None else max(s.epsilon, 1e-3)
        self.R = s.quadrature.truncation_radius
        self.panels, self.scale, self.dropped = _nu_r_panels(s, self.tables)
        self._base: dict[int, list] = {}

    def _params(self, order):
        return _layout_params(self.s, self.tables, [self.y], [self.t], "T_form", order, self.scale)

    def _prepare(self, rows) -> list:
        tb, s = self.tables, self.s
        out = []
        for r in rows:
            sg = math.copysign(1.0, r.nu_r)
            front = sg * r.w * np.exp(-2j * r.nu_r * self.x)
            yv = np.array([self.y])
            q0t = (tb.tilde_q0(np.array([r.nu_r]), r.line_nu[None, :])[0]
                   if len(r.line_nu) else np.zeros(0, complex))
            ST = tb.tilde_S(np.array([r.nu_r]), r.path_nu[None, :], [s.T])[0, 0]
            fl = front * _phase(r.nu_r, r.line_nu, yv, self.t)[0] * r.line_w * q0t
            fp = front * _phase(r.nu_r, r.path_nu, yv, self.t)[0] * r.path_w * ST
            out.append((r, front, r.nu_r + 1j * r.line_nu, fl, r.nu_r + 1j * r.path_nu, fp))
        return out

    def _base_rows(self, order: int):
        if order not in self._base:
            lp = self._params(order)
            self._base[order] = [self._prepare(_panel_rows(self.tables, lp, a, b, order))
                                 for a, b in self.panels]
        return self._base[order]

    def _sum(self, prepared, k: complex, R: float, rho_tail: float):
        tb, yv = self.tables, np.array([self.y])
        total = 0j
        for r, front, nl, fl, npth, fp in prepared:
            il = np.abs(nl.imag) <= R + 1e-12
            ip = np.abs(r.path_nu) <= R + 1e-12
            total += np.sum(fl[il] / (nl[il] - k)) + np.sum(fp[ip] / (npth[ip] - k))
            total += front * _tail_correction(r, tb, yv, self.t, "T_form", self.s.T, rho_tail,
                                              cauchy=k)[0]
        return total

    def _value(self, kR: float, kI: float, order: int, duffy: int) -> tuple[complex, complex]:
        """(value with radius R, value with radius R/2)."""
        k = complex(kR, kI)
        rho = min(0.25, abs(kR) / 2, abs(kI) / 2)
        base = self._base_rows(order)
        lo, hi = kR - ROW_GRADING[-1] * rho, kR + ROW_GRADING[-1] * rho
        inside = [p for p, (a, b) in enumerate(self.panels) if a - 1e-12 <= kR <= b + 1e-12]
        singular = bool(inside) and abs(kR) > 0
        full = half = 0j
        lp = self._params(order)
        for p, (a, b) in enumerate(self.panels):
            if singular and b > lo and a < hi:
                cuts = [c for g in ROW_GRADING for c in (kR - g * rho, kR + g * rho) if a < c < b]
                edges = np.unique(np.concatenate([[a, b], cuts]))
                line_breaks = [kI + sgn * g * rho for g in GRADING for sgn in (-1, 1)]
                path_breaks = [-kI + sgn * g * rho for g in GRADING for sgn in (-1, 1)] if kI < 0 else []
                rows = []
                for c, d in zip(edges[:-1], edges[1:]):
                    in_square = c >= kR - rho - 1e-12 and d <= kR + rho + 1e-12
                    rows.extend(_panel_rows(
                        self.tables, lp, c, d, order,
                        line_breaks=line_breaks,
                        line_window=(kI - rho, kI + rho) if in_square else None,
                        path_breaks=path_breaks,
                        path_window=(-kI - rho, -kI + rho) if in_square and kI < 0 else None,
                    ))
                prepared = self._prepare(rows)
            else:
                prepared = base[p]
            full += self._sum(prepared, k, self.R, self.R)
            half += self._sum(prepared, k, self.R / 2, self.R / 2)
        if singular:
            sq = self._duffy(kR, kI, rho, duffy)
            full += sq
            half += sq
        c = 1.0 / (2 * math.pi**2)
        return c * full, c * half

    def _duffy(self, kR: float, kI: float, rho: float, n: int) -> complex:
        tb = self.tables
        k = complex(kR, kI)
        u, v, w = _duffy_square(kR, kI, rho, n)
        sg = np.sign(u)
        ph = np.exp(-2j * u * self.x + 4j * u * v * self.y + 8j * u * (3 * v**2 - u**2) * self.t)
        q0t = tb.tilde_q0(u, v[:, None])[:, 0]
        total = np.sum(w * sg * ph * q0t / (u + 1j * v - k))
        if kI < 0:
            # real ray of the boundary contour: nu_I = -s, singular at s = -k_I
            u, sv, w = _duffy_square(kR, -kI, rho, n)
            nu_i = -sv
            ph = np.exp(-2j * u * self.x + 4j * u * nu_i * self.y
                        + 8j * u * (3 * nu_i**2 - u**2) * self.t)
            ST = tb.tilde_S(u, nu_i[:, None], [self.s.T])[0, :, 0]
            total += CONTOUR_SENSE * np.sum(w * np.sign(u) * ph * ST / (u - 1j * sv - k))
        return complex(total)

    def value(self, kR: float, kI: float, error: bool = True) -> MuValue:
        if abs(kI) <= self.epsilon:
            raise CauchyKernelTooClose(f"|k_I| = {abs(kI):.2e} <= {self.epsilon:.2e}")
        v, vh = self._value(kR, kI, self.order, DUFFY_ORDER)
        err = 0.0
        if error:
            v2, _ = self._value(kR, kI, max(2, self.order - 2), DUFFY_ORDER - 4)
            mask_rows = sum(abs(r.w) * r.line_mask_bound for rows in self._base_rows(self.order)
                            for r, *_ in rows)
            err = abs(v - v2) + abs(v - vh) + (mask_rows + self.dropped) / (2 * math.pi**2)
        return MuValue(v, err)


def eval_mu_pompeiu_linear(x: float, y: float, t: float, kR: float, kI: float, s: Scenario,
                           tables: LinearTables | None = None) -> complex:
    """mu at (x, y, t; k) from the Cauchy-integral representation."""
    return PompeiuMu(s, x, y, t, tables).value(kR, kI, error=False).value
