"""Problem triple (q0, g, h), grids and scenario configuration.

Configuration is INI-style key/value text::

    [scenario]
    name = demo
    T = 1.0
    epsilon = 0.0

    [initial]            # q0(x, y)
    family = gaussian    # gaussian | sech2 | gaussian_poly | zero | sampled | linear_wavepacket
    amplitude = 1.0
    x_center = 0.0
    x_width = 1.0
    profile = exponential   # second-variable profile: exponential | gaussian | constant
    rate = 1.0

    [boundary_g]         # g(x, t), same keys as [initial]
    [boundary_h]         # h(x, t)

    [quadrature]         # IntegrationSpec fields
    [spectral_grid]      # SpectralGrid fields
    [physical_grid]      # x = lo, hi, n ; y = lo, hi, n ; t = t1, t2, ...
    [kpii_grid]          # KPIIGrid fields (nonlinear solvers)
    [inverse_grid]       # InverseGrid fields (Cauchy and area integrals)

``family = linear_wavepacket`` in ``[initial]`` binds q0, g and h to one
exact solution of the linear equation; boundary sections are then ignored.
``family = sampled`` reads ``file`` (CSV with header ``x,y,value`` or
``x,t,value``) and interpolates with bicubic splines, zero outside the grid.
"""

from __future__ import annotations

import configparser
import csv
import io
import os
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import GridDataMalformed, ParseError, UnknownFamily
from .manufactured import LinearWavepacket
from .quadrature import IntegrationSpec

FAMILIES = ("gaussian", "sech2", "gaussian_poly", "zero", "sampled", "linear_wavepacket")
PROFILES = ("exponential", "gaussian", "constant")


@dataclass(frozen=True)
class InitialField:
    eval: Callable
    decay_class: str = "gaussian"
    rate: float = 1.0
    family: str = "custom"

    def __call__(self, x, y):
        return self.eval(x, y)


@dataclass(frozen=True)
class BoundaryPair:
    g: Callable
    h: Callable
    decay_class: str = "gaussian"
    rate: float = 1.0
    h_antiderivative: Callable | None = None
    family: str = "custom"


@dataclass(frozen=True)
class SpectralGrid:
    """Discretisation of the spectral planes and of the data transforms."""

    nu_r_max: float = 4.0
    nu_r_panels: int = 48
    nu_i_panels: int = 160
    order: int = 8
    xi_min: float = -100.0
    xi_max: float = 80.0
    xi_step: float = 0.1
    tau_count: int = 121
    eta_max: float = 20.0
    eta_count: int = 401


@dataclass(frozen=True)
class KPIIGrid:
    """Discretisation used by the nonlinear eigenfunction solvers."""

    x_min: float = -45.0
    x_max: float = 45.0
    x_step: float = 0.25
    y_max: float = 11.0
    y_step: float = 0.2
    tau_count: int = 21
    l_max: float = 5.5
    l_panel: float = 0.5
    l_order: int = 8
    tol: float = 1e-13
    max_iter: int = 60
    lambda_step: float = 0.05
    lambda_extent: float = 6.0


@dataclass(frozen=True)
class InverseGrid:
    """Discretisation of the Cauchy/area integrals of the inverse problem.

    Area cells are ``r_step x i_step`` rectangles covering
    ``|nu_R| <= r_max, |nu_I| <= radius``; the real-axis density lives on
    ``|nu| <= radius`` with spacing ``jump_step`` (a multiple of the
    lambda step of [kpii_grid]).
    """

    r_max: float = 2.4
    r_step: float = 0.15
    i_step: float = 0.15
    radius: float = 4.5
    jump_step: float = 0.2
    eps_c: float = 1e-2
    probe_small: float = 20.0
    probe_large: float = 40.0
    ray_angle: float = 0.7853981633974483
    probe_tol: float = 0.25
    reality_tol: float = 5e-2
    tol: float = 1e-13
    max_iter: int = 80


@dataclass(frozen=True)
class PhysicalGrid:
    x: tuple[float, float, int] = (-5.0, 5.0, 41)
    y: tuple[float, float, int] = (0.0, 5.0, 41)
    t: tuple[float, ...] = (0.0, 0.25, 0.5)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x[0], self.x[1], int(self.x[2]))

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y[0], self.y[1], int(self.y[2]))

    @property
    def ts(self) -> np.ndarray:
        return np.asarray(self.t, dtype=float)


@dataclass(frozen=True)
class Scenario:
    name: str
    initial: InitialField
    boundary: BoundaryPair
    T: float
    quadrature: IntegrationSpec = field(default_factory=IntegrationSpec)
    spectral_grid: SpectralGrid = field(default_factory=SpectralGrid)
    physical_grid: PhysicalGrid = field(default_factory=PhysicalGrid)
    kpii_grid: KPIIGrid = field(default_factory=KPIIGrid)
    inverse_grid: InverseGrid = field(default_factory=InverseGrid)
    epsilon: float = 0.0
    exact: object | None = None  # object with q(x, y, t) when a closed form is known
    config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ParseError("T must be positive")
        if np.any(self.physical_grid.ts > self.T + 1e-14):
            raise ParseError("physical grid times exceed T")
        if min(int(self.physical_grid.x[2]), int(self.physical_grid.y[2]), len(self.physical_grid.t)) < 1:
            raise ParseError("grids must be nonempty")

    def scaled(self, factor: float) -> "Scenario":
        """Same scenario with all data multiplied by ``factor``."""
        q0, g, h = self.initial.eval, self.boundary.g, self.boundary.h
        ha = self.boundary.h_antiderivative
        exact = _ScaledField(self.exact, factor) if self.exact is not None else None
        return replace(
            self,
            initial=replace(self.initial, eval=lambda x, y: factor * q0(x, y)),
            boundary=replace(
                self.boundary,
                g=lambda x, t: factor * g(x, t),
                h=lambda x, t: factor * h(x, t),
                h_antiderivative=None if ha is None else (lambda x, t: factor * ha(x, t)),
            ),
            exact=exact,
            epsilon=factor,
        )


class _ScaledField:
    def __init__(self, base, factor: float):
        self.base = base
        self.factor = factor

    def q(self, x, y, t):
        return self.factor * self.base.q(x, y, t)

    def __getattr__(self, name):
        attr = getattr(self.base, name)
        if callable(attr):
            return lambda *a, **k: self.factor * attr(*a, **k)
        return attr


class ZeroField:
    """The identically vanishing field."""

    def q(self, x, y, t):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y), np.asarray(t)).shape)

    def q_x(self, x, y, t):
        return self.q(x, y, t)

    def antiderivative_x(self, x, y, t, dy_order: int = 0):
        return self.q(x, y, t)


# ---------------------------------------------------------------------------
# closed-form families
# ---------------------------------------------------------------------------

def _x_profile(family: str, params: dict) -> Callable:
    c = float(params.get("x_center", 0.0))
    w = float(params.get("x_width", 1.0))
    if family == "gaussian":
        return lambda x: np.exp(-(((np.asarray(x, float) - c) / w) ** 2))
    if family == "sech2":
        return lambda x: 1.0 / np.cosh((np.asarray(x, float) - c) / w) ** 2
    if family == "gaussian_poly":
        coeffs = [float(v) for v in str(params.get("poly", "1")).split(",")]

        def prof(x):
            u = (np.asarray(x, float) - c) / w
            return np.polynomial.polynomial.polyval(u, coeffs) * np.exp(-u**2)

        return prof
    raise UnknownFamily(f"unknown family {family!r}")


def _second_profile(params: dict) -> Callable:
    kind = str(params.get("profile", "constant"))
    rate = float(params.get("rate", 1.0))
    if kind == "exponential":
        return lambda s: np.exp(-rate * np.asarray(s, float))
    if kind == "gaussian":
        return lambda s: np.exp(-((rate * np.asarray(s, float)) ** 2))
    if kind == "constant":
        return lambda s: np.ones_like(np.asarray(s, float))
    raise UnknownFamily(f"unknown profile {kind!r}")


def _sampled(path: str, second: str, base_dir: str) -> Callable:
    full = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(full):
        raise GridDataMalformed(f"data file {path!r} not found")
    with open(full, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["x", second, "value"]:
            raise GridDataMalformed(f"expected header x,{second},value in {path!r}, got {header}")
        try:
            rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
        except ValueError as exc:
            raise GridDataMalformed(f"non-numeric entry in {path!r}: {exc}") from exc
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise GridDataMalformed(f"{path!r} must have three columns")
    xs = np.unique(rows[:, 0])
    ss = np.unique(rows[:, 1])
    if len(xs) * len(ss) != len(rows) or len(xs) < 4 or len(ss) < 4:
        raise GridDataMalformed(f"{path!r} is not a full rectangular grid of at least 4x4 nodes")
    vals = np.full((len(xs), len(ss)), np.nan)
    ix = np.searchsorted(xs, rows[:, 0])
    js = np.searchsorted(ss, rows[:, 1])
    vals[ix, js] = rows[:, 2]
    if np.isnan(vals).any():
        raise GridDataMalformed(f"{path!r} has duplicate or missing nodes")
    spline = RectBivariateSpline(xs, ss, vals, kx=3, ky=3, s=0)
    lo_x, hi_x, lo_s, hi_s = xs[0], xs[-1], ss[0], ss[-1]

    def ev(x, s):
        x, s = np.broadcast_arrays(np.asarray(x, float), np.asarray(s, float))
        out = spline.ev(x, s)
        inside = (x >= lo_x) & (x <= hi_x) & (s >= lo_s) & (s <= hi_s)
        return np.where(inside, out, 0.0)

    return ev


def _build_field(section: dict, second: str, base_dir: str):
    family = str(section.get("family", "zero")).strip()
    if family not in FAMILIES:
        raise UnknownFamily(f"unknown family {family!r}")
    amp = float(section.get("amplitude", 1.0))
    if family == "zero":
        return (lambda x, s: np.zeros(np.broadcast(np.asarray(x), np.asarray(s)).shape)), "gaussian", 1.0
    if family == "sampled":
        if "file" not in section:
            raise ParseError("sampled family requires 'file'")
        ev = _sampled(section["file"], second, base_dir)
        return (lambda x, s: amp * ev(x, s)), "custom", 0.0
    xp = _x_profile(family, section)
    sp = _second_profile(section)
    w = float(section.get("x_width", 1.0))
    decay = "exponential" if family == "sech2" else "gaussian"
    rate = 2.0 / w if family == "sech2" else 1.0 / w**2
    return (lambda x, s: amp * xp(x) * sp(s)), decay, rate


def _parse_triplet(text: str, name: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ParseError(f"{name} must be 'lo, hi, n'")
    try:
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ParseError(f"bad value for {name}: {text!r}") from exc


def _coerce(dc, section: dict, label: str):
    out = {}
    names = {f.name: f for f in fields(dc)}
    for key, raw in section.items():
        if key not in names:
            raise ParseError(f"unknown key {key!r} in [{label}]")
        default = getattr(dc(), key)
        try:
            out[key] = type(default)(raw) if not isinstance(default, bool) else raw.lower() in ("1", "true", "yes")
        except ValueError as exc:
            raise ParseError(f"bad value for {label}.{key}: {raw!r}") from exc
    return dc(**out)


def parse_config(text: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"config does not parse: {exc}") from exc
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def load_scenario(text: str, base_dir: str = ".", overrides: dict | None = None) -> Scenario:
    """Build a Scenario from configuration text.

    ``overrides`` maps ``section.key`` to a string value and is applied
    before interpretation.
    """
    cfg = parse_config(text)
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ParseError(f"override {dotted!r} must be section.key")
        sec, key = dotted.split(".", 1)
        cfg.setdefault(sec, {})[key] = str(value)
    return scenario_from_dict(cfg, base_dir)


def scenario_from_dict(cfg: dict, base_dir: str = ".") -> Scenario:
    sc = cfg.get("scenario")
    if sc is None:
        raise ParseError("missing [scenario] section")
    if "T" not in sc:
        raise ParseError("missing required field 'T' in [scenario]")
    try:
        T = float(sc["T"])
        epsilon = float(sc.get("epsilon", 0.0))
    except ValueError as exc:
        raise ParseError(f"bad numeric value in [scenario]: {exc}") from exc
    name = sc.get("name", "scenario")

    init = cfg.get("initial", {"family": "zero"})
    exact = None
    if init.get("family", "zero").strip() == "linear_wavepacket":
        params = {}
        for key in ("amplitude", "spectral_gap", "spectral_width", "y_skew", "y_scale", "x_shift"):
            if key in init:
                params[key] = float(init[key])
        extra = set(init) - set(params) - {"family"}
        if extra:
            raise ParseError(f"unknown keys for linear_wavepacket: {sorted(extra)}")
        wp = LinearWavepacket(**params)
        exact = wp
        initial = InitialField(wp.q0, "custom", 0.0, "linear_wavepacket")
        boundary = BoundaryPair(wp.g, wp.h, "custom", 0.0, wp.h_antiderivative, "linear_wavepacket")
    else:
        q0, dec, rate = _build_field(init, "y", base_dir)
        initial = InitialField(q0, dec, rate, init.get("family", "zero"))
        gsec = cfg.get("boundary_g", {"family": "zero"})
        hsec = cfg.get("boundary_h", {"family": "zero"})
        g, dec_g, rate_g = _build_field(gsec, "t", base_dir)
        h, dec_h, rate_h = _build_field(hsec, "t", base_dir)
        boundary = BoundaryPair(g, h, dec_g, min(rate_g, rate_h), None,
                                f"{gsec.get('family', 'zero')}/{hsec.get('family', 'zero')}")
        if init.get("family", "zero") == "zero" and gsec.get("family", "zero") == "zero" \
                and hsec.get("family", "zero") == "zero":
            exact = ZeroField()

    quad = _coerce(IntegrationSpec, cfg.get("quadrature", {}), "quadrature")
    spectral = _coerce(SpectralGrid, cfg.get("spectral_grid", {}), "spectral_grid")
    pg = cfg.get("physical_grid", {})
    kwargs = {}
    if "x" in pg:
        kwargs["x"] = _parse_triplet(pg["x"], "physical_grid.x")
    if "y" in pg:
        kwargs["y"] = _parse_triplet(pg["y"], "physical_grid.y")
    if "t" in pg:
        try:
            kwargs["t"] = tuple(float(v) for v in pg["t"].split(","))
        except ValueError as exc:
            raise ParseError(f"bad physical_grid.t: {pg['t']!r}") from exc
    extra = set(pg) - {"x", "y", "t"}
    if extra:
        raise ParseError(f"unknown keys in [physical_grid]: {sorted(extra)}")
    physical = PhysicalGrid(**kwargs)
    kgrid = _coerce(KPIIGrid, cfg.get("kpii_grid", {}), "kpii_grid")
    igrid = _coerce(InverseGrid, cfg.get("inverse_grid", {}), "inverse_grid")
    return Scenario(name, initial, boundary, T, quad, spectral, physical, kgrid, igrid, epsilon, exact,
                    config={k: dict(v) for k, v in cfg.items()})


def dump_scenario(s: Scenario) -> str:
    """Serialise the configuration a scenario was loaded from."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for sec, items in s.config.items():
        parser[sec] = {k: str(v) for k, v in items.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def compatibility_check(s: Scenario, dy: float = 1e-3) -> list[dict]:
    """Corner mismatches between q0 and (g, h) at t = 0 over the x-grid."""
    xs = s.physical_grid.xs
    q0 = s.initial.eval
    g0 = np.asarray(s.boundary.g(xs, np.zeros_like(xs)), float)
    h0 = np.asarray(s.boundary.h(xs, np.zeros_like(xs)), float)
    first = float(np.max(np.abs(np.asarray(q0(xs, np.zeros_like(xs)), float) - g0)))
    if s.initial.family == "sampled":
        # one-sided second-order difference: the sampled field vanishes below y = 0
        d = (-3 * q0(xs, 0 * xs) + 4 * q0(xs, dy + 0 * xs) - q0(xs, 2 * dy + 0 * xs)) / (2 * dy)
    else:
        d = (q0(xs, dy + 0 * xs) - q0(xs, -dy + 0 * xs)) / (2 * dy)
    second = float(np.max(np.abs(np.asarray(d, float) - h0)))
    return [
        {"name": "dirichlet_corner", "description": "max |q0(x,0) - g(x,0)|", "value": first},
        {"name": "neumann_corner", "description": "max |dq0/dy(x,0) - h(x,0)|", "value": second},
    ]
