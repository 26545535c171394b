"""Linear KP on the half-plane: solution formula, eigenfunctions and checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import exp1

from .errors import GridTooCoarse, MissingField, RealityViolation
from .linear_spectral import LinearTables, _node_exponentials, _rowwise_total, omega
from .problem_data import Scenario
from .quadrature import ContourPath, QuadratureReport, gauss_panels, spline_coefficients

# Orientation of the quadrant boundaries. With +1 every boundary is traversed
# with its real half-line first when that half-line is the negative one
# (dD1+: -inf -> 0 -> +i inf, dD1-: -inf -> 0 -> -i inf) and last when it is
# the positive one (dD2+: +i inf -> 0 -> +inf, dD2-: -i inf -> 0 -> +inf), so
# each path is the real line deformed into the half-plane of its quadrant.
# The boundary-recovery test fails for the opposite choice.
CONTOUR_SENSE = +1


@dataclass(frozen=True)
class QuadrantContours:
    dD1_plus: ContourPath
    dD1_minus: ContourPath
    dD2_plus: ContourPath
    dD2_minus: ContourPath

    @classmethod
    def standard(cls, sense: int = CONTOUR_SENSE) -> "QuadrantContours":
        paths = (
            ContourPath.corner(-1, 0, 1j),
            ContourPath.corner(-1, 0, -1j),
            ContourPath.corner(1j, 0, 1),
            ContourPath.corner(-1j, 0, 1),
        )
        if sense < 0:
            paths = tuple(p.reversed() for p in paths)
        return cls(*paths)


@dataclass
class LinearSolution:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    values: np.ndarray  # (nt, nx, ny)
    err_estimate: np.ndarray
    tail_bound: np.ndarray
    imag_residue: np.ndarray
    representation_tag: str
    flagged: np.ndarray = field(default=None)

    def report(self, it: int, ix: int, iy: int) -> QuadratureReport:
        return QuadratureReport(
            complex(self.values[it, ix, iy]), float(self.err_estimate[it, ix, iy]),
            float(self.tail_bound[it, ix, iy]), 1,
        )

    def rows(self):
        for it, tv in enumerate(self.t):
            for ix, xv in enumerate(self.x):
                for iy, yv in enumerate(self.y):
                    yield xv, yv, tv, self.values[it, ix, iy], self.err_estimate[it, ix, iy]


# ---------------------------------------------------------------------------
# spectral node layout
# ---------------------------------------------------------------------------

# Radians of local phase per Gauss node (1.5 pi per 8-node panel keeps the
# per-panel error of an oscillatory integrand near 1e-8).
PHASE_PER_NODE = 1.5 * math.pi / 8
# Spectral contributions below this fraction of the largest one are dropped
# and accounted for in the tail bound.
AMPLITUDE_CUTOFF = 1e-10


def _geometric_breaks(R: float, first: float = 0.05) -> np.ndarray:
    b = [0.0]
    v = first
    while v < R / 2:
        b.append(v)
        v *= 2.0
    b.extend([R / 2, R])
    return np.unique(np.asarray(b))


def _ray_intervals(R: float, freq, budget: int, order: int, extra=(), window=None):
    """Panels on [0, R]; ``freq(a, b)`` is the phase rate on [a, b].

    Every panel spans at most ``order * PHASE_PER_NODE`` radians unless the
    total exceeds ``budget`` panels, in which case all counts are scaled down.
    ``extra`` adds breakpoints; panels inside ``window = (lo, hi)`` are dropped.
    """
    breaks = _geometric_breaks(R)
    extra = [e for e in extra if 0 < e < R]
    if window is not None:
        extra += [w for w in window if 0 < w < R]
    if extra:
        breaks = np.unique(np.concatenate([breaks, extra]))
    counts = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = int(math.ceil((b - a) * freq(a, b) / (order * PHASE_PER_NODE)))
        counts.append(max(1, n, int(math.ceil((b - a) / max(b, 0.05)))))
    counts = np.asarray(counts)
    if counts.sum() > budget:
        counts = np.maximum(1, np.floor(counts * budget / counts.sum())).astype(int)
    out = []
    for a, b, n in zip(breaks[:-1], breaks[1:], counts):
        if window is not None and a >= window[0] - 1e-14 and b <= window[1] + 1e-14:
            continue
        e = np.linspace(a, b, n + 1)
        out.extend(zip(e[:-1], e[1:]))
    return out


def _interval_nodes(intervals, order: int):
    if not intervals:
        return np.zeros(0), np.zeros(0)
    x, w = np.polynomial.legendre.leggauss(order)
    a = np.array([iv[0] for iv in intervals])[:, None]
    b = np.array([iv[1] for iv in intervals])[:, None]
    return (0.5 * (a + b) + 0.5 * (b - a) * x).ravel(), (0.5 * (b - a) * w).ravel()


def _ray_nodes(R: float, freq, budget: int, order: int, extra=(), window=None):
    """Composite Gauss nodes on [0, R] (see ``_ray_intervals``)."""
    return _interval_nodes(_ray_intervals(R, freq, budget, order, extra, window), order)


@dataclass
class _Row:
    nu_r: float
    w: float
    line_nu: np.ndarray  # real nu_I nodes of the area term
    line_w: np.ndarray
    line_mask_bound: float  # bound for the amplitude-masked part of the area term
    path_nu: np.ndarray  # nu_I nodes on the quadrant boundary
    path_w: np.ndarray  # complex weights incl. d nu_I/ds and orientation
    q0t: np.ndarray | None = None
    S: dict | None = None  # upper time -> boundary transform on path nodes
    G: np.ndarray | None = None  # x-transform of g on the time grid
    HI: np.ndarray | None = None  # x-transform of d^{-1} h on the time grid
    coef: np.ndarray | None = None  # time-spline coefficients of (G, HI)


def _time_derivatives(samples: np.ndarray, tau: np.ndarray, at_end: bool) -> np.ndarray:
    """|F|, |F'|, |F''| at one end of the time grid, from one-sided differences."""
    f = samples[..., ::-1] if at_end else samples
    h = abs(tau[1] - tau[0]) if not at_end else abs(tau[-1] - tau[-2])
    d0 = np.abs(f[..., 0])
    d1 = np.abs(-1.5 * f[..., 0] + 2 * f[..., 1] - 0.5 * f[..., 2]) / h
    d2 = np.abs(2 * f[..., 0] - 5 * f[..., 1] + 4 * f[..., 2] - f[..., 3]) / h**2
    return np.stack([d0, d1, d2], axis=-1)


def _chirp_amplitude(derivs: np.ndarray, nu_r: float, s: float) -> float:
    """Size of the endpoint term of the boundary transform at |nu_I| = s."""
    zabs = max(8 * abs(nu_r) * abs(3 * s * s - nu_r * nu_r), 1e-300)
    return float(3 * (1 + 2 * s) * sum(d / zabs ** (n + 1) for n, d in enumerate(derivs)))


@dataclass
class _Layout:
    rows: list
    scale: float
    nu_r_mask_bound: float


def _nu_r_panels(s: Scenario, tables: LinearTables):
    sg = s.spectral_grid
    vmax = min(sg.nu_r_max, s.quadrature.truncation_radius)
    edges = np.linspace(-vmax, vmax, 2 * sg.nu_r_panels + 1)
    probe = np.linspace(-vmax, vmax, 16 * sg.nu_r_panels + 1)
    kappa = -2 * probe
    mat = np.exp(-1j * np.outer(kappa, tables.xi)) * tables.xi_w
    spec = np.maximum.reduce([
        np.abs(mat @ tables.q0).max(axis=1),
        np.abs(mat @ tables.g).max(axis=1),
        np.abs(mat @ tables.hint).max(axis=1),
    ])
    scale = float(spec.max()) or 1.0
    keep, dropped = [], 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (probe >= a - 1e-12) & (probe <= b + 1e-12)
        big = spec[sel].max()
        if big > AMPLITUDE_CUTOFF * scale:
            keep.append((a, b))
        else:
            # |nu_R| weight times the full nu_I line times the largest transform
            dropped += (b - a) * max(abs(a), abs(b)) * big * 2 * s.quadrature.truncation_radius
    return keep, scale, dropped


def _eta_extent(tables: LinearTables) -> float:
    col = np.abs(tables.q0).max(axis=0)
    if col.max() == 0:
        return 0.0
    sig = np.nonzero(col > AMPLITUDE_CUTOFF * col.max())[0]
    return float(tables.eta[sig[-1]])


@dataclass
class _LayoutParams:
    R: float
    order: int
    budget: int
    ymax: float
    tmax: float
    tmin: float
    form: str
    T: float
    eta_ext: float
    scale: float


def _split_signed(points, window):
    """Breakpoints and window on the line -> (positive ray, negative ray) versions."""
    pos = [p for p in points if p > 0]
    neg = [-p for p in points if p < 0]
    wp = wn = None
    if window is not None:
        lo, hi = window
        if lo >= 0:
            wp = (lo, hi)
        elif hi <= 0:
            wn = (-hi, -lo)
    return pos, neg, wp, wn


def _panel_rows(tables: LinearTables, lp: _LayoutParams, a: float, b: float, order: int | None = None,
                line_breaks=(), line_window=None, path_breaks=(), path_window=None) -> list:
    """Rows (nu_R Gauss nodes) of the panel [a, b] with their nu_I nodes.

    ``line_*`` refer to the real nu_I line of the area term (signed values),
    ``path_*`` to the distance s along the real ray nu_I = -s of the boundary term.
    """
    order = order or lp.order
    R = lp.R
    xg, wg = np.polynomial.legendre.leggauss(order)
    nus = 0.5 * (a + b) + 0.5 * (b - a) * xg
    ws = 0.5 * (b - a) * wg
    G, HI, _ = tables.boundary_hat_x(-2 * nus)
    qx = tables.q0_hat_x(-2 * nus)  # (order, n_eta)
    line_probe = np.linspace(0.0, R, 4 * int(math.ceil(R)) + 1)
    lpos, lneg, wpos, wneg = _split_signed(line_breaks, line_window)
    rows = []
    for j, (vr, wv) in enumerate(zip(nus, ws)):
        ar = abs(vr)
        # area term: drop |nu_I| beyond the point where the transform of q0 is negligible
        k2 = 4 * vr * line_probe
        E = _node_exponentials(-1j * k2, tables.eta)
        amp = np.maximum(
            np.abs(E @ (qx[j] * tables.eta_w)),
            np.abs(E.conj() @ (qx[j] * tables.eta_w)),
        )
        sig = np.nonzero(amp > AMPLITUDE_CUTOFF * lp.scale)[0]
        r_eff = 0.0 if len(sig) == 0 else min(R, 1.25 * line_probe[sig[-1]] + 0.5)
        if line_window is not None:
            r_eff = max(r_eff, min(R, max(abs(line_window[0]), abs(line_window[1])) + 1.0))
        beyond = amp[line_probe > r_eff]
        mask_bound = 2 * (R - r_eff) * (beyond.max() if len(beyond) else 0.0)
        line_nu, line_w = np.zeros(0), np.zeros(0)
        if r_eff > 0:
            def lfreq(p, q, ar=ar):
                return 4 * ar * (lp.ymax + lp.eta_ext) + 48 * ar * q * lp.tmax
            pn, pw = _ray_nodes(r_eff, lfreq, lp.budget, order, lpos, wpos)
            nn, nw = _ray_nodes(r_eff, lfreq, lp.budget, order, lneg, wneg)
            line_nu = np.concatenate([-nn[::-1], pn])
            line_w = np.concatenate([nw[::-1], pw])

        # boundary term
        start = _time_derivatives(np.stack([G[j], HI[j]]), tables.tau, False).max(axis=0)
        row_scale = max(np.abs(G[j]).max(), np.abs(HI[j]).max(), 1e-300)

        def path_freq(p, q, ar=ar, vr=vr, start=start, row_scale=row_scale):
            f = 4 * ar * lp.ymax
            if lp.tmax > 0 and _chirp_amplitude(start, vr, p) > AMPLITUDE_CUTOFF * row_scale:
                f += 48 * ar * q * lp.tmax
            if lp.form == "T_form" and lp.T - lp.tmin > 0:
                f += 48 * ar * q * (lp.T - lp.tmin)
            return f

        rn, rw = _ray_nodes(R, path_freq, lp.budget, order, path_breaks, path_window)
        im, iw = _ray_nodes(R, path_freq, lp.budget, order)
        sigma = 1.0 if vr > 0 else -1.0
        path_nu = np.concatenate([-rn, sigma * 1j * im])
        path_w = CONTOUR_SENSE * np.concatenate([rw, sigma * 1j * iw]).astype(complex)
        rows.append(_Row(float(vr), float(wv), line_nu, line_w, float(mask_bound),
                         path_nu, path_w, G=G[j], HI=HI[j]))
    return rows


def _layout_params(s: Scenario, tables: LinearTables, ys, ts, form: str, order: int, scale: float):
    return _LayoutParams(
        R=s.quadrature.truncation_radius, order=order, budget=s.spectral_grid.nu_i_panels,
        ymax=float(np.max(np.abs(ys))), tmax=float(np.max(ts)), tmin=float(np.min(ts)),
        form=form, T=s.T, eta_ext=_eta_extent(tables), scale=scale,
    )


def _layout(s: Scenario, tables: LinearTables, ys, ts, form: str, order: int) -> _Layout:
    panels, scale, nu_r_dropped = _nu_r_panels(s, tables)
    lp = _layout_params(s, tables, ys, ts, form, order, scale)
    rows = []
    for a, b in panels:
        rows.extend(_panel_rows(tables, lp, a, b))
    return _Layout(rows, scale, nu_r_dropped)


def _fill(layout: _Layout, tables: LinearTables, uppers):
    for r in layout.rows:
        if len(r.line_nu):
            r.q0t = tables.tilde_q0(np.array([r.nu_r]), r.line_nu[None, :])[0]
        else:
            r.q0t = np.zeros(0, complex)
        live = [u for u in uppers if u > 0]
        r.S = {0.0: np.zeros(len(r.path_nu), complex)}
        if live:
            S = tables.tilde_S(np.array([r.nu_r]), r.path_nu[None, :], live)
            for i, u in enumerate(live):
                r.S[float(u)] = S[i, 0]


SERIES_TERMS = 12


def _expint_table(z: np.ndarray, nmax: int) -> np.ndarray:
    """E_2 .. E_nmax at points with Re z >= 0 by upward recurrence; row n holds E_n."""
    out = np.zeros((nmax + 1,) + z.shape, complex)
    zero = z == 0
    e1 = np.zeros(z.shape, complex)
    e1[~zero] = exp1(z[~zero])
    ez = np.exp(-z)
    prev = e1
    for n in range(1, nmax):
        nxt = (ez - z * prev) / n
        nxt[zero] = 1.0 / n
        out[n + 1] = nxt
        prev = nxt
    return out


def _endpoint_series(nu_r: float, G, HI, sign: float, cauchy=None):
    """Inverse-power coefficients of an endpoint term on both rays.

    ``G`` and ``HI`` hold the data and its time derivatives at the endpoint;
    the term is ``sign * 3 sum_m (-1)^m (HI^(m) - 2 nu_I G^(m)) / z^(m+1)``
    (times ``1 / (nu - k)`` when ``cauchy = k``), expanded in powers of ``1/s``
    on the real ray ``nu_I = -s`` and on the imaginary ray ``nu_I = i sigma s``.
    The imaginary-ray series already includes ``d nu_I / ds``.
    """
    N = SERIES_TERMS
    sigma = 1.0 if nu_r > 0 else -1.0
    # 3 / z on each ray as a series in w = 1/s
    geo_r = np.zeros(N + 1)
    geo_i = np.zeros(N + 1)
    geo_r[0::2] = (nu_r**2 / 3) ** np.arange(N // 2 + 1)
    geo_i[0::2] = (-nu_r**2 / 3) ** np.arange(N // 2 + 1)
    inv_r = np.convolve([0, 0, 1j / (8 * nu_r)], geo_r)[: N + 1]
    inv_i = np.convolve([0, 0, -1j / (8 * nu_r)], geo_i)[: N + 1]
    a_r = np.zeros(N + 1, complex)
    a_i = np.zeros(N + 1, complex)
    pow_r, pow_i = inv_r, inv_i
    for m in range(len(G)):
        # HI - 2 nu_I G with nu_I = -1/w (real ray) and i sigma / w (imaginary ray)
        a_r += (-1) ** m / 3**m * np.convolve([2 * G[m], HI[m]], pow_r[1:])[: N + 1]
        a_i += (-1) ** m / 3**m * np.convolve([-2j * sigma * G[m], HI[m]], pow_i[1:])[: N + 1]
        pow_r = np.convolve(pow_r, inv_r)[: N + 1]
        pow_i = np.convolve(pow_i, inv_i)[: N + 1]
    a_r = sign * a_r
    a_i = sign * a_i * (1j * sigma)
    if cauchy is not None:
        d = nu_r - cauchy
        b_r = np.concatenate([[0], 1j * (-1j * d) ** np.arange(N)])
        b_i = np.concatenate([[0], -sigma * (sigma * d) ** np.arange(N)])
        a_r = np.convolve(a_r, b_r)[: N + 1]
        a_i = np.convolve(a_i, b_i)[: N + 1]
    return a_r, a_i


def _endpoint_data(r: "_Row", tables: LinearTables, idx: int) -> tuple[np.ndarray, np.ndarray]:
    """Values and first two time derivatives of G and HI at time node ``idx``."""
    if r.coef is None:
        r.coef = spline_coefficients(tables.tau, np.stack([r.G, r.HI]))  # (2, J, 4)
    h = np.diff(tables.tau)
    if idx < len(h):
        c, hj = r.coef[:, idx], h[idx]
        d = np.stack([c[:, 0], c[:, 1] / hj, 2 * c[:, 2] / hj**2], axis=1)
    else:
        c, hj = r.coef[:, -1], h[-1]
        d = np.stack([c.sum(axis=1), (c[:, 1] + 2 * c[:, 2] + 3 * c[:, 3]) / hj,
                      (2 * c[:, 2] + 6 * c[:, 3]) / hj**2], axis=1)
    return d[0], d[1]


def _series_tail(nu_r: float, y: np.ndarray, rho: float, a_r, a_i) -> np.ndarray:
    """Exact integrals beyond radius rho of exp(4 i nu_R nu_I y) sum_n a_n s^-n on both rays.

    The 1/s terms of the two rays cancel at infinity and are combined before
    the limit y -> 0 is taken.
    """
    sigma = 1.0 if nu_r > 0 else -1.0
    N = len(a_r) - 1
    br = 4j * nu_r * y * rho
    bi = 4 * abs(nu_r) * y * rho
    out = np.zeros(y.shape, complex)
    if a_r[1] != 0 or a_i[1] != 0:
        # the two 1/s coefficients are opposite, leaving a logarithm at y = 0
        zero = y <= 0
        pair = np.full(y.shape, -1j * sigma * math.pi / 2)
        rest = np.zeros(y.shape, complex)
        pair[~zero] = exp1(br[~zero]) - exp1(bi[~zero])
        rest[~zero] = exp1(bi[~zero])
        out += a_r[1] * pair + (a_r[1] + a_i[1]) * rest
    Er = _expint_table(br, N)
    Ei = _expint_table(bi.astype(complex), N)
    for n in range(2, N + 1):
        out += rho ** (1 - n) * (a_r[n] * Er[n] + a_i[n] * Ei[n])
    return CONTOUR_SENSE * out


def _chirp_tail(nu_r: float, y: np.ndarray, rho: float, lam: float, factor) -> np.ndarray | None:
    """Path integral beyond radius rho of exp(lam z + 4 i nu_R nu_I y) factor(nu_I).

    Each ray is continued from radius rho along the direction of steepest
    descent of the quadratic phase, where the integrand decays like a Gaussian.
    Returns None when the linear part of the phase overwhelms the chirp at rho.
    """
    sigma = 1.0 if nu_r > 0 else -1.0
    total = np.zeros(y.shape, complex)
    rays = (
        (lambda sv: -sv, 1.0 + 0j, -24 * nu_r * lam, -4 * nu_r * y),  # real ray, nu = -s
        (lambda sv: sigma * 1j * sv, sigma * 1j, 24 * nu_r * lam, None),  # imaginary ray
    )
    for to_nu, jac, alpha, gamma in rays:
        d = np.exp(1j * math.copysign(math.pi / 4, alpha))
        lin = 2 * abs(alpha) * rho
        if gamma is not None:
            if np.any(np.abs(gamma) >= lin):
                return None
            lin = lin - np.abs(gamma).max()
        lin /= math.sqrt(2)
        # decay to e^-40
        rmax = (-lin + math.sqrt(lin * lin + 160 * abs(alpha))) / (2 * abs(alpha))
        r, w = gauss_panels(np.array([0.0, 0.05, 0.2, 0.5, 1.0]) * rmax, 10, 2)
        nu = to_nu(rho + r * d)
        z = -8j * nu_r * (3 * nu**2 - nu_r**2)
        vals = np.exp(lam * z + 4j * nu_r * np.outer(y, nu)) * factor(nu)[None, :]
        total += (vals @ (w * d)) * jac
    return CONTOUR_SENSE * total


def _tail_correction(r: _Row, tables: LinearTables, y: np.ndarray, t: float, form: str,
                     T: float, rho: float, cauchy=None) -> np.ndarray:
    """Contribution beyond radius rho of the endpoint terms of exp(Phi) S.

    For large |nu_I| the boundary transform is dominated by its endpoint
    terms sign * 3 (HI(tau_e) - 2 nu_I G(tau_e)) / z * exp(z (tau_e - t)) plus
    the corrections from the time derivatives at tau_e.
    Non-oscillating endpoints (tau_e = t) are expanded in inverse powers of
    |nu_I| and integrated exactly; chirped ones are integrated numerically.
    ``cauchy = k`` multiplies the integrand by ``1 / (nu - k)``.
    """
    upper = T if form == "T_form" else t
    out = np.zeros(y.shape, complex)
    for tau_e, sign in ((upper, 1.0), (0.0, -1.0)):
        idx = tables.time_index(tau_e)
        G, HI = _endpoint_data(r, tables, idx)
        if not (np.any(G) or np.any(HI)):
            continue
        lam = tau_e - t
        if abs(lam) <= 1e-12 * max(1.0, T):
            a_r, a_i = _endpoint_series(r.nu_r, G, HI, sign, cauchy)
            out += _series_tail(r.nu_r, y, rho, a_r, a_i)
        else:
            def factor(nu, G=G, HI=HI, sign=sign):
                z = -8j * r.nu_r * (3 * nu**2 - r.nu_r**2)
                f = sum((-1) ** m * (HI[m] - 2 * nu * G[m]) / z ** (m + 1) for m in range(len(G)))
                f = sign * 3 * f
                if cauchy is not None:
                    f = f / (r.nu_r + 1j * nu - cauchy)
                return f

            tail = _chirp_tail(r.nu_r, y, rho, lam, factor)
            if tail is not None:
                out += tail
    return out


def _phase(nu_r, nu_i, y, t):
    """exp(4 i nu_R nu_I y + 8 i nu_R (3 nu_I^2 - nu_R^2) t): (len(y), len(nu_i))."""
    base = 8j * nu_r * (3 * nu_i**2 - nu_r**2) * t
    return np.exp(4j * nu_r * np.outer(y, nu_i) + base[None, :])


def _evaluate(layout: _Layout, tables, xs, ys, t, form: str, T: float, R: float):
    """q on the (x, y) grid at time t: (value, value with radius R/2, mask bound)."""
    rows = layout.rows
    A = np.zeros((len(rows), len(ys)), complex)
    Ahalf = np.zeros_like(A)
    mask = np.zeros(len(rows))
    key = float(T) if form == "T_form" else float(t)
    for m, r in enumerate(rows):
        pl = _phase(r.nu_r, r.line_nu, ys, t) * (r.line_w * r.q0t)[None, :]
        pp = _phase(r.nu_r, r.path_nu, ys, t) * (r.path_w * r.S[key])[None, :]
        inner_l = np.abs(r.line_nu) <= R / 2 + 1e-12
        inner_p = np.abs(r.path_nu) <= R / 2 + 1e-12
        A[m] = pl.sum(axis=1) + pp.sum(axis=1)
        Ahalf[m] = pl[:, inner_l].sum(axis=1) + pp[:, inner_p].sum(axis=1)
        A[m] += _tail_correction(r, tables, ys, t, form, T, R)
        Ahalf[m] += _tail_correction(r, tables, ys, t, form, T, R / 2)
        mask[m] = r.line_mask_bound
    nu = np.array([r.nu_r for r in rows])
    wr = np.array([r.w for r in rows]) * np.abs(nu) * (2 / np.pi**2)
    X = np.exp(-2j * np.outer(xs, nu)) * wr[None, :]
    return X @ A, X @ Ahalf, float(wr @ mask) + layout.nu_r_mask_bound


def _solve_pass(s: Scenario, tables, xs, ys, ts, form, order):
    layout = _layout(s, tables, ys, ts, form, order)
    uppers = [s.T] if form == "T_form" else sorted(set(float(t) for t in ts))
    _fill(layout, tables, uppers)
    R = s.quadrature.truncation_radius
    vals = np.zeros((len(ts), len(xs), len(ys)), complex)
    halves = np.zeros_like(vals)
    masks = np.zeros(len(ts))
    for it, t in enumerate(ts):
        vals[it], halves[it], masks[it] = _evaluate(layout, tables, xs, ys, float(t), form, s.T, R)
    return vals, halves, masks, layout


def solve_linear(
    s: Scenario,
    form: str = "t_form",
    xs=None,
    ys=None,
    ts=None,
    *,
    tables: LinearTables | None = None,
    error_estimate: bool = True,
    reality_threshold: float = 10.0,
) -> LinearSolution:
    """Evaluate the half-plane solution formula on a physical grid.

    ``form`` selects the upper time limit of the boundary transforms:
    ``"t_form"`` integrates the boundary data up to the evaluation time,
    ``"T_form"`` up to the final time. The error estimate is the difference
    to a lower-order rule on the same panels; the tail bound is the change
    between truncation at R/2 and at R plus the masked contributions.
    """
    if form not in ("t_form", "T_form"):
        raise ValueError("form must be 't_form' or 'T_form'")
    pg = s.physical_grid
    xs = pg.xs if xs is None else np.atleast_1d(np.asarray(xs, float))
    ys = pg.ys if ys is None else np.atleast_1d(np.asarray(ys, float))
    ts = pg.ts if ts is None else np.atleast_1d(np.asarray(ts, float))
    if np.any(ts > s.T + 1e-12) or np.any(ts < 0):
        raise ValueError("evaluation times must lie in [0, T]")
    if np.any(ys < 0):
        raise ValueError("the solution is defined for y >= 0 only")
    tables = tables or LinearTables(s, extra_times=ts)
    order = s.spectral_grid.order
    fine, half, masks, _ = _solve_pass(s, tables, xs, ys, ts, form, order)
    if error_estimate:
        coarse, _, _, _ = _solve_pass(s, tables, xs, ys, ts, form, max(2, order - 2))
        err = np.abs(fine - coarse)
    else:
        err = np.zeros(fine.shape)
    tail_b = np.abs(fine - half) + masks[:, None, None]
    imag = np.abs(fine.imag)
    floor = 1e-12 * max(1.0, float(np.abs(fine.real).max(initial=0.0)))
    flagged = imag > reality_threshold * (err + tail_b) + floor
    sol = LinearSolution(xs, ys, ts, fine.real.copy(), err, tail_b, imag, form, flagged)
    if error_estimate and flagged.any():
        raise RealityViolation(
            f"imaginary residue {imag.max():.3e} exceeds {reality_threshold}x error estimate"
        )
    return sol


# ---------------------------------------------------------------------------
# global relation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalRelationValue:
    residual: complex
    err_estimate: float
    lhs: complex  # exp(omega t) times the transform of q(., ., t)


def _half_plane_transform(tables: LinearTables, samples: np.ndarray, eta: np.ndarray, k1, k2) -> np.ndarray:
    """Transform of samples on the (xi, eta) grid at rows (k1[m], k2[m])."""
    qx = tables.x_transform(samples, k1)
    return _rowwise_total(-1j * np.asarray(k2, complex), eta, spline_coefficients(eta, qx))


def global_relation_check(k1, k2, t: float, s: Scenario, q_field=None,
                          tables: LinearTables | None = None) -> list[GlobalRelationValue]:
    """Residuals of the global relation at points (k1[m], k2[m]) with Im k2 <= 0.

    The error estimate is the change of the residual when every second
    node of the eta and time grids is dropped.
    """
    k1 = np.atleast_1d(np.asarray(k1, float))
    k2 = np.atleast_1d(np.asarray(k2, complex))
    if np.any(np.abs(k1) <= s.quadrature.notch):
        raise ValueError("|k1| must exceed the notch width")
    if np.any(k2.imag > 1e-14):
        raise ValueError("Im k2 must be <= 0")
    q_field = q_field if q_field is not None else s.exact
    if q_field is None:
        raise MissingField("a field q(x, y, t) is required")
    tables = tables or LinearTables(s, extra_times=[t])
    it = tables.time_index(t)
    xi, eta = tables.xi, tables.eta
    qt = np.asarray(q_field.q(xi[:, None], eta[None, :], t), float)
    w = omega(k1, k2)

    def residual(step: int):
        e = eta[::step]
        qhat = _half_plane_transform(tables, qt[:, ::step], e, k1, k2)
        q0hat = _half_plane_transform(tables, tables.q0[:, ::step], e, k1, k2)
        tau = tables.tau
        sel = np.arange(0, it + 1, step)
        if sel[-1] != it:
            sel = np.append(sel, it)
        G, _, Hh = tables.boundary_hat_x(k1)
        gt = _rowwise_total(w, tau[sel], spline_coefficients(tau[sel], G[:, sel]))
        ht = _rowwise_total(w, tau[sel], spline_coefficients(tau[sel], Hh[:, sel]))
        lhs = np.exp(w * t) * qhat
        return lhs - q0hat - 3 * ((k2 / k1) * gt - (1j / k1) * ht), lhs

    r1, lhs = residual(1)
    r2, _ = residual(2)
    return [GlobalRelationValue(complex(a), float(abs(a - b)), complex(c)) for a, b, c in zip(r1, r2, lhs)]


def global_relation_residual_linear(k1: float, k2: complex, t: float, s: Scenario, q_field=None,
                                    tables: LinearTables | None = None) -> complex:
    """``exp(omega t) q-hat(t) - q0-hat - 3 [(k2/k1) g~_t - (i/k1) h~_t]``."""
    return global_relation_check([k1], [k2], t, s, q_field, tables)[0].residual


def sample_global_relation_points(n: int, rng: np.random.Generator, T: float, max_growth: float = 2.0):
    """Random (k1, k2) with Im k2 <= 0 and Re(omega) T <= max_growth."""
    out = []
    while len(out) < n:
        k1 = rng.uniform(0.5, 3.0) * rng.choice([-1.0, 1.0])
        k2 = complex(rng.uniform(-2.0, 2.0), -rng.uniform(0.0, 1.5))
        if (omega(k1, k2).real * T) <= max_growth:
            out.append((k1, k2))
    return np.array([p[0] for p in out]), np.array([p[1] for p in out])


# ---------------------------------------------------------------------------
# PDE residual
# ---------------------------------------------------------------------------

def _uniform_step(v: np.ndarray, name: str, minimum: int) -> float:
    if len(v) < minimum:
        raise GridTooCoarse(f"{name} grid needs at least {minimum} nodes")
    h = np.diff(v)
    if np.ptp(h) > 1e-9 * abs(h[0]):
        raise GridTooCoarse(f"{name} grid is not uniform")
    return float(h[0])


def pde_residual_field(q_field, grid, origin: str = "left") -> np.ndarray:
    """``q_t + q_xxx + 3 d_x^{-1} q_yy`` at the interior nodes of a uniform grid.

    ``grid = (xs, ys, ts)``; ``q_field`` is either an array of samples with
    shape (nt, nx, ny) or an object/callable giving q(x, y, t). Derivatives
    are second-order centred differences; ``d_x^{-1}`` is the cumulative
    trapezoid integral from the first x node, so the grid should start where
    q is negligible. ``origin="mean"`` instead fixes the constant so that the
    antiderivative has zero mean along x (periodic fields sampled over whole
    periods).
    """
    if origin not in ("left", "mean"):
        raise ValueError("origin must be 'left' or 'mean'")
    xs, ys, ts = (np.asarray(v, float) for v in grid)
    hx = _uniform_step(xs, "x", 5)
    hy = _uniform_step(ys, "y", 3)
    ht = _uniform_step(ts, "t", 3)
    if isinstance(q_field, np.ndarray):
        Q = q_field
    else:
        f = q_field.q if hasattr(q_field, "q") else q_field
        Q = np.asarray(f(xs[None, :, None], ys[None, None, :], ts[:, None, None]), float)
    if Q.shape != (len(ts), len(xs), len(ys)):
        raise GridTooCoarse(f"samples have shape {Q.shape}, grid is {(len(ts), len(xs), len(ys))}")
    qt = (Q[2:, 2:-2, 1:-1] - Q[:-2, 2:-2, 1:-1]) / (2 * ht)
    qxxx = (-Q[1:-1, :-4, 1:-1] + 2 * Q[1:-1, 1:-3, 1:-1] - 2 * Q[1:-1, 3:-1, 1:-1]
            + Q[1:-1, 4:, 1:-1]) / (2 * hx**3)
    qyy = (Q[1:-1, :, 2:] - 2 * Q[1:-1, :, 1:-1] + Q[1:-1, :, :-2]) / hy**2
    inv = np.concatenate([np.zeros(qyy[:, :1].shape),
                          np.cumsum(0.5 * hx * (qyy[:, 1:] + qyy[:, :-1]), axis=1)], axis=1)
    if origin == "mean":
        wts = np.full(len(xs), hx)
        wts[[0, -1]] *= 0.5
        inv = inv - np.tensordot(inv, wts, axes=([1], [0]))[:, None, :] / (xs[-1] - xs[0])
    return qt + qxxx + 3 * inv[:, 2:-2]


def pde_residual_linear(q_field, grid, origin: str = "left") -> float:
    """Largest |q_t + q_xxx + 3 d_x^{-1} q_yy| over the interior nodes."""
    return float(np.abs(pde_residual_field(q_field, grid, origin)).max(initial=0.0))


def plane_wave(k1: float, k2: float):
    """Real exact solution ``Re exp(i k1 x + i k2 y - omega t)`` of the linear equation."""
    w = complex(omega(k1, k2))

    def q(x, y, t):
        return np.real(np.exp(1j * k1 * x + 1j * k2 * y - w * t))

    return q
