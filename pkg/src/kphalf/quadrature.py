"""Quadrature backbone.

Adaptive Gauss-Kronrod panels for real lines and piecewise-ray complex
contours, the antiderivative operator ``(d/dx)^{-1}`` and exponential-weighted
product integration for tabulated data multiplied by fast exponentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import IntegrandFailure, NonConvergence

__all__ = [
    "IntegrationSpec",
    "QuadratureReport",
    "Segment",
    "ContourPath",
    "integrate_line",
    "integrate_contour",
    "integrate_plane",
    "antiderivative_x",
    "gauss_panels",
    "exp_moments",
    "spline_coefficients",
    "running_exp_integral",
    "running_exp_matrix",
    "cumulative_antiderivative",
]

# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1] (positive half).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES15 = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_WK15 = np.concatenate([_WGK[:-1], _WGK[::-1]])
# Gauss points sit at odd positions of the positive half (indices 1, 3, 5, 7).
_WG15 = np.zeros(15)
for _i, _w in zip((1, 3, 5), _WG[:3]):
    _WG15[_i] = _w
    _WG15[14 - _i] = _w
_WG15[7] = _WG[3]


@dataclass(frozen=True)
class IntegrationSpec:
    truncation_radius: float = 40.0
    panel_count: int = 16
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_refinements: int = 12
    notch: float = 1e-3

    def __post_init__(self):
        if not self.truncation_radius > 0:
            raise ValueError("truncation_radius must be positive")
        if self.panel_count < 2:
            raise ValueError("panel_count must be at least 2")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be non-negative")

    def with_(self, **changes) -> "IntegrationSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class QuadratureReport:
    value: complex
    err_estimate: float = 0.0
    truncation_tail_bound: float = 0.0
    refinements_used: int = 0

    def __add__(self, other: "QuadratureReport") -> "QuadratureReport":
        return QuadratureReport(
            self.value + other.value,
            self.err_estimate + other.err_estimate,
            self.truncation_tail_bound + other.truncation_tail_bound,
            max(self.refinements_used, other.refinements_used),
        )

    def scaled(self, c: complex) -> "QuadratureReport":
        return QuadratureReport(
            c * self.value, abs(c) * self.err_estimate,
            abs(c) * self.truncation_tail_bound, self.refinements_used,
        )


def _evaluate(f: Callable, x: np.ndarray) -> np.ndarray:
    try:
        y = np.asarray(f(x), dtype=complex)
        if y.shape != x.shape:
            y = np.broadcast_to(y, x.shape).astype(complex)
    except (TypeError, ValueError):
        y = np.array([complex(f(xi)) for xi in x.ravel()]).reshape(x.shape)
    bad = ~np.isfinite(y)
    if bad.any():
        where = x[bad].ravel()[0]
        raise IntegrandFailure(f"non-finite integrand at {where!r}", abscissa=where)
    return y


def _gk_panels(f, a: np.ndarray, b: np.ndarray):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * _NODES15[None, :]
    y = _evaluate(f, x)
    k = (y * _WK15).sum(axis=1) * half
    g = (y * _WG15).sum(axis=1) * half
    return k, np.abs(k - g)


def _frequency_split(a, b, frequency) -> tuple[np.ndarray, np.ndarray]:
    if frequency is None:
        return a, b
    aa, bb = [], []
    for lo, hi in zip(a, b):
        if callable(frequency):
            probe = np.linspace(lo, hi, 5)
            freq = float(np.max(np.abs(frequency(probe))))
        else:
            freq = abs(float(frequency))
        width_max = math.pi / (4.0 * freq) if freq > 0 else math.inf
        n = max(1, int(math.ceil((hi - lo) / width_max)))
        edges = np.linspace(lo, hi, n + 1)
        aa.append(edges[:-1])
        bb.append(edges[1:])
    return np.concatenate(aa), np.concatenate(bb)


def _adaptive(f, intervals, spec: IntegrationSpec, frequency=None):
    a = np.concatenate([np.linspace(lo, hi, spec.panel_count + 1)[:-1] for lo, hi in intervals])
    b = np.concatenate([np.linspace(lo, hi, spec.panel_count + 1)[1:] for lo, hi in intervals])
    a, b = _frequency_split(a, b, frequency)
    total_width = float(np.sum(b - a))
    done_val = 0j
    done_err = 0.0
    rounds = 0
    while True:
        k, e = _gk_panels(f, a, b)
        running = done_val + k.sum()
        tol = max(spec.rel_tol * abs(running), spec.abs_tol)
        share = tol * (b - a) / total_width
        ok = e <= share
        if rounds >= spec.max_refinements:
            ok[:] = True
        done_val += k[ok].sum()
        done_err += float(e[ok].sum())
        if ok.all():
            break
        a, b = a[~ok], b[~ok]
        m = 0.5 * (a + b)
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
        order = np.argsort(a, kind="stable")
        a, b = a[order], b[order]
        rounds += 1
    return done_val, done_err, rounds


def integrate_line(
    f: Callable,
    a: float,
    b: float,
    spec: IntegrationSpec | None = None,
    *,
    frequency: float | Callable | None = None,
    flagged: Sequence[float] = (),
) -> QuadratureReport:
    """Integrate ``f`` over ``[a, b]`` (ends may be infinite).

    ``f`` is called with numpy arrays. Infinite ends are cut at
    ``spec.truncation_radius``; the discarded tail is bounded by
    ``|f(end)| * |end|``. Points in ``flagged`` are cut out by a notch of
    half-width ``spec.notch`` whose contribution goes into the tail bound.
    """
    spec = spec or IntegrationSpec()
    if not a < b:
        raise ValueError("integrate_line requires a < b")
    R = spec.truncation_radius
    tail = 0.0
    lo, hi = float(a), float(b)
    if math.isinf(lo):
        lo = -R if hi > -R else hi - R
        tail += float(abs(_evaluate(f, np.array([lo]))[0])) * max(1.0, abs(lo))
    if math.isinf(hi):
        hi = R if lo < R else lo + R
        tail += float(abs(_evaluate(f, np.array([hi]))[0])) * max(1.0, abs(hi))
    intervals = [(lo, hi)]
    eps = spec.notch
    for p in sorted(float(p) for p in flagged):
        new = []
        for s, e in intervals:
            if s < p < e:
                probe = np.array([max(s, p - eps), min(e, p + eps)])
                tail += 2 * eps * float(np.max(np.abs(_evaluate(f, probe))))
                if p - eps > s:
                    new.append((s, p - eps))
                if p + eps < e:
                    new.append((p + eps, e))
            else:
                new.append((s, e))
        intervals = new
    value, err, rounds = _adaptive(f, intervals, spec, frequency)
    tol = max(spec.rel_tol * abs(value), spec.abs_tol)
    if err > tol:
        raise NonConvergence(
            f"quadrature error {err:.3e} exceeds tolerance {tol:.3e} after {rounds} refinements",
            err_estimate=err,
        )
    return QuadratureReport(complex(value), float(err), float(tail), rounds)


@dataclass(frozen=True)
class Segment:
    """Straight piece ``start + direction*s`` for ``0 <= s <= length``.

    ``inward`` means the piece is traversed towards ``start`` (only
    meaningful for an infinite first segment).
    """

    start: complex
    direction: complex
    length: float
    inward: bool = False

    def __post_init__(self):
        d = complex(self.direction)
        if abs(abs(d) - 1.0) > 1e-12:
            object.__setattr__(self, "direction", d / abs(d))
        if not self.length > 0:
            raise ValueError("segment length must be positive")

    @property
    def infinite(self) -> bool:
        return math.isinf(self.length)

    @property
    def begin(self) -> complex:
        if self.inward:
            return complex("inf") if self.infinite else self.start + self.direction * self.length
        return complex(self.start)

    @property
    def end(self) -> complex:
        if self.inward:
            return complex(self.start)
        return complex("inf") if self.infinite else self.start + self.direction * self.length


@dataclass(frozen=True)
class ContourPath:
    segments: tuple[Segment, ...]
    orientation_tag: str = "as_listed"

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("empty contour")
        for i, s in enumerate(segs):
            if s.infinite and 0 < i < len(segs) - 1:
                raise ValueError("only the first and last segments may be infinite")
        for s0, s1 in zip(segs[:-1], segs[1:]):
            e, b = s0.end, s1.begin
            if not (np.isfinite(e) and np.isfinite(b)) or abs(e - b) > 1e-12 * max(1.0, abs(e)):
                raise ValueError("consecutive segments must share endpoints")

    @classmethod
    def polyline(cls, points: Sequence[complex], closed: bool = False) -> "ContourPath":
        pts = [complex(p) for p in points]
        if closed:
            pts.append(pts[0])
        segs = []
        for p, q in zip(pts[:-1], pts[1:]):
            segs.append(Segment(p, (q - p) / abs(q - p), abs(q - p)))
        return cls(tuple(segs))

    @classmethod
    def ray(cls, start: complex, direction: complex, inward: bool = False) -> "ContourPath":
        return cls((Segment(complex(start), complex(direction), math.inf, inward),))

    @classmethod
    def corner(cls, incoming: complex, vertex: complex, outgoing: complex) -> "ContourPath":
        """Path from ``vertex + incoming*inf`` to ``vertex`` and out along ``outgoing``."""
        return cls((
            Segment(complex(vertex), complex(incoming), math.inf, inward=True),
            Segment(complex(vertex), complex(outgoing), math.inf),
        ))

    def reversed(self) -> "ContourPath":
        out = []
        for s in reversed(self.segments):
            if s.infinite:
                out.append(Segment(s.start, s.direction, s.length, not s.inward))
            else:
                out.append(Segment(s.end if not s.inward else s.begin, -s.direction, s.length))
        return ContourPath(tuple(out), self.orientation_tag)

    def __add__(self, other: "ContourPath") -> "ContourPath":
        return ContourPath(self.segments + other.segments, self.orientation_tag)


def integrate_contour(
    f: Callable,
    path: ContourPath,
    spec: IntegrationSpec | None = None,
    *,
    frequency: Callable | None = None,
) -> QuadratureReport:
    """Sum of parameterized line integrals of ``f(z) dz`` along ``path``.

    ``frequency`` (optional) maps points ``z`` on the path to a local
    oscillation frequency used to size the initial panels.
    """
    spec = spec or IntegrationSpec()
    total = QuadratureReport(0j)
    for seg in path.segments:
        z0, d = seg.start, seg.direction

        def g(s, z0=z0, d=d):
            return np.asarray(f(z0 + d * s), dtype=complex) * d

        freq = None
        if frequency is not None:
            freq = lambda s, z0=z0, d=d: frequency(z0 + d * s)  # noqa: E731
        upper = seg.length
        rep = integrate_line(g, 0.0, upper, spec, frequency=freq)
        total = total + (rep.scaled(-1.0) if seg.inward else rep)
    return total


def integrate_plane(
    f: Callable,
    xlim: tuple[float, float],
    ylim: tuple[float, float],
    spec: IntegrationSpec | None = None,
    *,
    x_frequency: float | None = None,
    y_frequency: float | None = None,
) -> QuadratureReport:
    """Iterated 2D integral of ``f(x, y)`` (outer x, inner y)."""
    spec = spec or IntegrationSpec()
    tails = [0.0]
    errs = [0.0]

    def outer(xs):
        out = np.empty(xs.shape, dtype=complex)
        for idx, x in np.ndenumerate(xs):
            rep = integrate_line(lambda y: f(x, y), ylim[0], ylim[1], spec, frequency=y_frequency)
            out[idx] = rep.value
            tails[0] = max(tails[0], rep.truncation_tail_bound)
            errs[0] = max(errs[0], rep.err_estimate)
        return out

    rep = integrate_line(outer, xlim[0], xlim[1], spec, frequency=x_frequency)
    width = (min(xlim[1], spec.truncation_radius) - max(xlim[0], -spec.truncation_radius))
    return QuadratureReport(
        rep.value,
        rep.err_estimate + errs[0] * width,
        rep.truncation_tail_bound + tails[0] * width,
        rep.refinements_used,
    )


def antiderivative_x(h: Callable, x, spec: IntegrationSpec | None = None):
    """``int_{-inf}^{x} h``; array input is integrated as a running prefix sum."""
    spec = spec or IntegrationSpec()
    R = spec.truncation_radius
    tail = float(abs(_evaluate(h, np.array([-R]))[0])) * R
    if tail > spec.abs_tol:
        raise NonConvergence(
            f"tail bound {tail:.3e} at -{R} exceeds abs_tol {spec.abs_tol:.3e}", err_estimate=tail
        )
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    order = np.argsort(xs, kind="stable")
    out = np.empty(xs.shape, dtype=complex)
    acc = 0j
    prev = -R
    for i in order:
        xi = xs[i]
        if xi > prev:
            acc += integrate_line(h, prev, xi, spec).value
            prev = xi
        elif xi < prev and prev == -R:
            out[i] = -integrate_line(h, xi, -R, spec).value
            continue
        out[i] = acc
    if np.ndim(x) == 0:
        return complex(out[0])
    return out


def cumulative_antiderivative(samples: np.ndarray, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Running integral from ``x[0]`` of tabulated samples (cubic spline)."""
    sp = CubicSpline(x, samples, axis=axis)
    return sp.antiderivative()(x) - sp.antiderivative()(x[0])


def gauss_panels(breaks: Sequence[float], order: int = 8, panels: int | Sequence[int] = 1):
    """Composite Gauss-Legendre nodes and weights over consecutive intervals."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    breaks = list(breaks)
    npan = [panels] * (len(breaks) - 1) if np.ndim(panels) == 0 else list(panels)
    nodes, weights = [], []
    for (lo, hi), n in zip(zip(breaks[:-1], breaks[1:]), npan):
        edges = np.linspace(lo, hi, int(n) + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
            weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# exponential-weighted product integration
# ---------------------------------------------------------------------------

_TAYLOR_TERMS = 22


def exp_moments(z, nmax: int = 3) -> np.ndarray:
    """``m_n(z) = int_0^1 exp(z s) s^n ds`` for ``n = 0..nmax``; shape ``(nmax+1,) + z.shape``."""
    z0 = np.asarray(z, dtype=complex)
    z = z0.reshape(-1)
    out = np.empty((nmax + 1,) + z.shape, dtype=complex)
    small = np.abs(z) < 1.0
    if small.any():
        zs = z[small]
        for n in range(nmax + 1):
            term = np.ones_like(zs)
            acc = term / (n + 1)
            for k in range(1, _TAYLOR_TERMS):
                term = term * zs / k
                acc = acc + term / (n + k + 1)
            out[n][small] = acc
    big = ~small
    if big.any():
        zb = z[big]
        ez = np.exp(zb)
        m = (ez - 1.0) / zb
        out[0][big] = m
        for n in range(1, nmax + 1):
            m = (ez - n * m) / zb
            out[n][big] = m
    return out.reshape((nmax + 1,) + z0.shape)


def spline_coefficients(nodes: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Local cubic coefficients in the scaled variable s in [0, 1].

    Returns array of shape ``samples.shape[:-1] + (N-1, 4)`` with
    ``F(t_j + h_j s) = sum_n c[..., j, n] s^n``.
    """
    nodes = np.asarray(nodes, dtype=float)
    h = np.diff(nodes)
    samples = np.asarray(samples)
    if len(nodes) < 4:
        # linear interpolation for very short grids
        c0 = samples[..., :-1]
        c1 = samples[..., 1:] - samples[..., :-1]
        z = np.zeros_like(c0)
        return np.stack([c0, c1, z, z], axis=-1)
    sp = CubicSpline(nodes, samples, axis=-1)
    c = sp.c  # (4, N-1, ...) descending powers of (t - t_j)
    c = np.moveaxis(c, (0, 1), (-1, -2))  # (..., N-1, 4) descending
    c = c[..., ::-1]  # ascending powers
    scale = h[:, None] ** np.arange(4)[None, :]
    return c * scale


def _reverse_coefficients(c: np.ndarray) -> np.ndarray:
    c0, c1, c2, c3 = (c[..., i] for i in range(4))
    return np.stack([c0 + c1 + c2 + c3, -(c1 + 2 * c2 + 3 * c3), c2 + 3 * c3, -c3], axis=-1)


def _interval_integrals(z, h, coef):
    """Per-interval integrals of ``exp(z (t - anchor)) p_j(t)``.

    Returns the values anchored at the left node and at the right node.
    """
    z = np.asarray(z, dtype=complex)[..., None]
    zh = z * h
    m_left = exp_moments(zh)
    m_right = exp_moments(-zh)
    c_rev = _reverse_coefficients(coef)
    left = h * sum(coef[..., n] * m_left[n] for n in range(4))
    right = h * sum(c_rev[..., n] * m_right[n] for n in range(4))
    return left, right


def running_exp_integral(nodes, samples, z, direction: str = "forward") -> np.ndarray:
    """Running integrals of ``exp(z (t - t_n)) F(t)`` on a node set.

    forward:  ``R_n = int_{t_0}^{t_n} exp(z (t - t_n)) F(t) dt``
    backward: ``L_n = int_{t_n}^{t_N} exp(z (t - t_n)) F(t) dt``

    ``F`` is the cubic spline through ``samples`` (last axis = nodes); ``z``
    broadcasts against ``samples.shape[:-1]``. The recursions are stable
    when the requested integrals are bounded (Re z >= 0 forward,
    Re z <= 0 backward).
    """
    nodes = np.asarray(nodes, dtype=float)
    h = np.diff(nodes)
    coef = spline_coefficients(nodes, samples)
    z = np.asarray(z, dtype=complex)
    shape = np.broadcast_shapes(z.shape, np.shape(samples)[:-1])
    coef = np.broadcast_to(coef, shape + coef.shape[-2:])
    zb = np.broadcast_to(z, shape)
    left_anch, right_anch = _interval_integrals(zb, h, coef)
    out = np.zeros(shape + (len(nodes),), dtype=complex)
    if direction == "forward":
        step = np.exp(-zb[..., None] * h)  # exp(z (t_{n} - t_{n+1}))
        for n in range(len(h)):
            out[..., n + 1] = step[..., n] * out[..., n] + right_anch[..., n]
    elif direction == "backward":
        step = np.exp(zb[..., None] * h)  # exp(z (t_{n+1} - t_n))
        for n in range(len(h) - 1, -1, -1):
            out[..., n] = step[..., n] * out[..., n + 1] + left_anch[..., n]
    else:
        raise ValueError("direction must be 'forward' or 'backward'")
    return out


def running_exp_matrix(nodes, z, direction: str = "forward") -> np.ndarray:
    """Linear map samples -> running integrals; shape ``z.shape + (N, N)``.

    ``out[..., n, m]`` is the weight of sample ``m`` in the running integral
    ending (forward) or starting (backward) at node ``n``.
    """
    nodes = np.asarray(nodes, dtype=float)
    N = len(nodes)
    h = np.diff(nodes)
    z = np.asarray(z, dtype=complex)
    basis = spline_coefficients(nodes, np.eye(N))  # (N basis, N-1, 4)
    rev = _reverse_coefficients(basis)
    zh = z[..., None] * h  # z.shape + (N-1,)
    m_left = exp_moments(zh)
    m_right = exp_moments(-zh)
    # per-interval weights of every basis sample: z.shape + (N-1, N basis)
    left = np.einsum("n...j,bjn->...jb", m_left, basis) * h[:, None]
    right = np.einsum("n...j,bjn->...jb", m_right, rev) * h[:, None]
    out = np.zeros(z.shape + (N, N), dtype=complex)
    if direction == "forward":
        step = np.exp(-zh)
        for n in range(N - 1):
            out[..., n + 1, :] = step[..., n, None] * out[..., n, :] + right[..., n, :]
    elif direction == "backward":
        step = np.exp(zh)
        for n in range(N - 2, -1, -1):
            out[..., n, :] = step[..., n, None] * out[..., n + 1, :] + left[..., n, :]
    else:
        raise ValueError("direction must be 'forward' or 'backward'")
    return out
