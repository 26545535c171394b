"""Exact linear-KP wave packet used as manufactured data.

The packet is a full-plane solution of ``q_t + q_xxx + 3 d_x^{-1} q_yy = 0``

    q(x, y, t) = (1/2pi) int dk e^{i k x + i k^3 t} X(k) Y_k(y, t),

with ``X(k) = exp(-k^2/w - a/k^2)`` (flat to all orders at ``k = 0``) and
``Y`` the heat-like evolution of ``(u^4 + c u^5) exp(-u^2)``, ``u = y/l``, under the
multiplier ``exp(-3 i t k2^2 / k)``. Everything in ``y`` is closed form;
only the ``k`` integral is done numerically, on a fixed Gauss rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite as H

from .quadrature import gauss_panels


def _hermite_functions(u: np.ndarray, nmax: int) -> np.ndarray:
    """Physicists' Hermite polynomials H_0..H_nmax at complex points."""
    out = np.empty((nmax + 1,) + u.shape, dtype=complex)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = 2 * u
    for n in range(1, nmax):
        out[n + 1] = 2 * u * out[n] - 2 * n * out[n - 1]
    return out


@dataclass(frozen=True)
class LinearWavepacket:
    amplitude: float = 1.0
    spectral_gap: float = 4.0  # the ``a`` in exp(-a/k^2)
    spectral_width: float = 1.0  # the ``w`` in exp(-k^2/w)
    y_skew: float = 0.5  # the ``c`` in y^4 + c y^5
    y_scale: float = 2.0  # profile uses y / y_scale
    x_shift: float = 0.0
    k_max: float = 7.0
    k_panels: int = 160
    order: int = 8
    _norm: float = field(default=0.0, repr=False, compare=False)

    def __post_init__(self):
        k, w = gauss_panels([0.0, self.k_max], self.order, self.k_panels)
        spec = np.exp(-k**2 / self.spectral_width - self.spectral_gap / k**2)
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_wk", w * spec)
        coeffs = np.zeros(6)
        coeffs[4] = 1.0
        coeffs[5] = self.y_skew
        object.__setattr__(self, "_herm", H.poly2herm(coeffs))
        # normalise so that the peak of |q0| on a probe grid equals the amplitude
        xs = np.linspace(-6, 6, 121)
        ys = np.linspace(0, 4 * self.y_scale, 81)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        raw = self._field(X, Y, 0.0, 0, 0, unit=True)
        object.__setattr__(self, "_norm", float(np.max(np.abs(raw))))

    # ------------------------------------------------------------------
    def _field(self, x, y, t, dy_order: int, x_power: int, unit: bool = False):
        """Generic evaluator: ``dy_order`` y-derivatives, multiplied by (ik)^x_power."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        x, y, t = np.broadcast_arrays(x, y, t)
        shape = x.shape
        xf, yf, tf = x.ravel(), y.ravel(), t.ravel()
        k = self._k
        wk = self._wk * (1j * k) ** x_power
        # the field factors as sum_k e^{ikx} P_k(y, t); on tensor grids this is one matrix product
        ux, xinv = np.unique(xf, return_inverse=True)
        yt = np.stack([yf, tf], axis=1)
        uyt, ytinv = np.unique(yt, axis=0, return_inverse=True)
        ytinv = ytinv.ravel()
        if len(ux) * len(uyt) <= 4 * len(xf) + 64:
            prof = self._profile(uyt[:, 0], uyt[:, 1], dy_order)  # (n_yt, K)
            prof = prof * (wk * np.exp(1j * k**3 * uyt[:, 1:2]))
            table = np.empty((len(ux), len(uyt)))
            chunk = max(1, 400000 // len(k))
            for s0 in range(0, len(ux), chunk):
                ph = np.exp(1j * np.outer(ux[s0:s0 + chunk] - self.x_shift, k))
                table[s0:s0 + chunk] = (ph @ prof.T).real
            out = table[xinv, ytinv]
        else:
            out = np.empty(xf.shape)
            chunk = max(1, 200000 // len(k))
            for s0 in range(0, len(xf), chunk):
                sl = slice(s0, s0 + chunk)
                prof = self._profile(yf[sl], tf[sl], dy_order)
                phase = np.exp(1j * np.outer(xf[sl] - self.x_shift, k) + 1j * np.outer(tf[sl], k**3))
                out[sl] = ((phase * prof) @ wk).real
        vals = out / np.pi  # (1/2pi) * 2 Re int_0^inf
        if not unit:
            vals = vals * self.amplitude / self._norm
        return vals.reshape(shape)

    def _profile(self, y, t, dy_order: int) -> np.ndarray:
        """y-profile after time t for every k node: (len(y), K)."""
        k = self._k
        yy, tt = y[:, None], t[:, None]
        s = np.sqrt(1.0 + 12j * tt / (k[None, :] * self.y_scale**2))
        u = yy / (self.y_scale * s)
        herm = _hermite_functions(u, len(self._herm) - 1 + dy_order)
        prof = np.zeros(u.shape, dtype=complex)
        for n, d in enumerate(self._herm):
            m = n + dy_order
            prof += d * (-1) ** dy_order * herm[m] / s ** (m + 1) / self.y_scale**dy_order
        return prof * np.exp(-u**2)

    def q(self, x, y, t):
        return self._field(x, y, t, 0, 0)

    def q_y(self, x, y, t):
        return self._field(x, y, t, 1, 0)

    def q_yy(self, x, y, t):
        return self._field(x, y, t, 2, 0)

    def q_x(self, x, y, t):
        return self._field(x, y, t, 0, 1)

    def q_xxx(self, x, y, t):
        return self._field(x, y, t, 0, 3)

    def q_t(self, x, y, t):
        # q_t = -q_xxx - 3 d_x^{-1} q_yy
        return -self.q_xxx(x, y, t) - 3 * self.antiderivative_x(x, y, t, dy_order=2)

    def antiderivative_x(self, x, y, t, dy_order: int = 0):
        return self._field(x, y, t, dy_order, -1)

    # boundary data
    def g(self, x, t):
        return self.q(x, 0.0, t)

    def h(self, x, t):
        return self.q_y(x, 0.0, t)

    def h_antiderivative(self, x, t):
        return self.antiderivative_x(x, 0.0, t, dy_order=1)

    def q0(self, x, y):
        return self.q(x, y, 0.0)
