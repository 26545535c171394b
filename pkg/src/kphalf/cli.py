"""Command-line pipelines: linear solve/verify, KPII round trip, linear-limit study.

Exit status: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical failure. Every run writes ``manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError, KPError, MissingField, NumericalError
from .problem_data import Scenario, dump_scenario, load_scenario

log = logging.getLogger("kphalf")

MODES = ("linear_solve", "linear_verify", "kpii_roundtrip", "linear_limit_study", "global_relation_scan")

# every tolerance a check uses; override with --set checks.<name>=<value>
CHECK_DEFAULTS = {
    "reality": 1e-8,
    "gr_linear": 1e-5,
    "ic_recovery": 1e-3,
    "boundary_recovery": 1e-2,
    "form_equivalence": 10.0,
    "direct_contraction": 0.5,
    "direct_self_residual": 1e-8,
    "direct_halving_low": 0.4,
    "direct_halving_high": 0.6,
    "gr_kpii": 1e-4,
    "dbar_abs": 1e-4,
    "jump_abs": 1e-4,
    "oracle_factor": 10.0,
    "falsification_margin": 10.0,
    "inverse_contraction": 0.5,
    "slope_low": 0.8,
    "slope_high": 1.2,
    "limit_relative": 5e-2,
}

# checks each mode reports, in order
DECLARED_CHECKS = {
    "linear_solve": ("solve_completed", "reality"),
    "linear_verify": ("dispersion_identities", "global_relation", "initial_condition_recovery",
                      "boundary_recovery", "form_equivalence"),
    "kpii_roundtrip": ("direct_contraction", "direct_self_residual", "direct_halving",
                       "global_relation_kpii", "dbar_formula", "jump_formula",
                       "inverse_contraction", "reconstruction"),
    "linear_limit_study": ("inverse_converged", "limit_slope", "limit_relative_deviation"),
    "global_relation_scan": ("global_relation_linear", "global_relation_kpii"),
}


@dataclass
class PipelineRequest:
    mode: str
    scenario: str
    out: str
    overrides: dict = field(default_factory=dict)
    epsilon: float | None = None
    truncation_radius: float | None = None
    seed: int = 0


@dataclass
class RunManifest:
    mode: str
    scenario: str
    config_hash: str
    versions: dict
    checks: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)
    status: str = "pass"
    error: str | None = None

    @property
    def all_passed(self) -> bool:
        return self.error is None and all(c["passed"] for c in self.checks)

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_json_default)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, complex):
        return [v.real, v.imag]
    raise TypeError(f"cannot serialise {type(v)}")


class _Stages:
    """Wall-clock bookkeeping per stage."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def __call__(self, name: str):
        stages = self.manifest.stages

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()
                log.info("stage %s", name)

            def __exit__(self, *exc):
                stages[name] = round(time.perf_counter() - self.t0, 3)

        return _Timer()


def _check(name: str, passed: bool, value, threshold, **details) -> dict:
    return {"name": name, "passed": bool(passed), "value": value, "threshold": threshold, "details": details}


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def write_field_csv(path: str, x, y, t, q, err=None) -> None:
    """Rows ``x,y,t,q,err`` in the given order; values written with repr."""
    err = np.zeros(len(q)) if err is None else err
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "t", "q", "err"])
        for row in zip(x, y, t, q, err):
            w.writerow([repr(float(v)) for v in row])


def read_field_csv(path: str) -> dict:
    if not os.path.exists(path):
        raise MissingField(f"field file {path!r} does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        return {"x": np.zeros(0), "y": np.zeros(0), "t": np.zeros(0), "value": np.zeros(0)}
    cols = reader.fieldnames or []
    value_col = next((c for c in ("q", "value", "re") if c in cols), cols[-1])
    t = np.array([float(r["t"]) for r in rows]) if "t" in cols else np.zeros(len(rows))
    return {"x": np.array([float(r["x"]) for r in rows]), "y": np.array([float(r["y"]) for r in rows]),
            "t": t, "value": np.array([float(r[value_col]) for r in rows])}


def emit_plot_data(field_files, out_path: str, times=None, warnings: list | None = None) -> list:
    """Gnuplot columnar text: one ``x y value`` block per (file, time slice).

    Rows are row-major in x then y (sorted), blocks separated by two blank
    lines. A requested time that is not on a file's grid is replaced by the
    nearest slice and a warning is recorded. Returns the warnings.
    """
    warnings = [] if warnings is None else warnings
    if isinstance(field_files, str):
        field_files = [field_files]
    lines: list[str] = []
    for path in field_files:
        data = read_field_csv(path)
        slices = np.unique(data["t"])
        wanted = slices if times is None else np.atleast_1d(np.asarray(times, float))
        for tw in wanted:
            if slices.size == 0:
                continue
            i = int(np.argmin(np.abs(slices - tw)))
            tv = slices[i]
            if abs(tv - tw) > 1e-12:
                msg = f"{os.path.basename(path)}: t={tw:g} not on grid, using nearest slice t={tv:g}"
                warnings.append(msg)
                log.warning(msg)
            sel = data["t"] == tv
            xs, ys, vs = data["x"][sel], data["y"][sel], data["value"][sel]
            order = np.lexsort((ys, xs))
            lines.append(f"# file {os.path.basename(path)} t {float(tv)!r}")
            prev_x = None
            for j in order:
                if prev_x is not None and xs[j] != prev_x:
                    lines.append("")
                prev_x = xs[j]
                lines.append(f"{float(xs[j])!r} {float(ys[j])!r} {float(vs[j])!r}")
            lines.append("")
            lines.append("")
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines))
    return warnings


def render_png(csv_path: str, png_path: str, title: str) -> None:
    """Heat maps of every time slice of a field CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = read_field_csv(csv_path)
    slices = np.unique(data["t"])
    if slices.size == 0:
        return
    fig, axes = plt.subplots(1, len(slices), figsize=(4 * len(slices), 3.4), squeeze=False)
    for ax, tv in zip(axes[0], slices):
        sel = data["t"] == tv
        xs, ys = np.unique(data["x"][sel]), np.unique(data["y"][sel])
        grid = np.full((len(ys), len(xs)), np.nan)
        ix = np.searchsorted(xs, data["x"][sel])
        iy = np.searchsorted(ys, data["y"][sel])
        grid[iy, ix] = data["value"][sel]
        im = ax.pcolormesh(xs, ys, grid, shading="auto", cmap="RdBu_r")
        ax.set_title(f"{title}, t={tv:g}")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(png_path, dpi=90, metadata={"Software": None})
    plt.close(fig)


def _emit(out: str, name: str, x, y, t, q, err=None, title: str = "q") -> None:
    path = os.path.join(out, f"{name}.csv")
    write_field_csv(path, x, y, t, q, err)
    emit_plot_data([path], os.path.join(out, f"{name}.dat"))
    render_png(path, os.path.join(out, f"{name}.png"), title)


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _grid_rows(sol):
    T, X, Y = np.meshgrid(sol.t, sol.x, sol.y, indexing="ij")
    return X.ravel(), Y.ravel(), T.ravel(), sol.values.ravel(), sol.err_estimate.ravel()


def mode_linear_solve(s: Scenario, req: PipelineRequest, tol: dict, stage) -> list:
    from .linear_solver import solve_linear

    with stage("solve_linear"):
        sol = solve_linear(s, "t_form", error_estimate=True)
    _emit(req.out, "q_linear", *_grid_rows(sol), title="q")
    scale = max(float(np.abs(sol.values).max(initial=0.0)), 1.0)
    imag = float(sol.imag_residue.max(initial=0.0))
    return [
        _check("solve_completed", True, int(sol.values.size), None),
        _check("reality", imag <= tol["reality"] * scale + float((sol.err_estimate + sol.tail_bound).max(initial=0.0)),
               imag, tol["reality"]),
    ]


def mode_linear_verify(s: Scenario, req: PipelineRequest, tol: dict, stage) -> list:
    from .linear_solver import global_relation_check, sample_global_relation_points, solve_linear
    from .linear_spectral import LinearTables, omega

    checks = []
    with stage("dispersion"):
        rng = np.random.default_rng(req.seed)
        exact = (omega(1, 0) == -1j and omega(1, 1) == 2j and omega(1, 1j) == -4j)
        k1 = rng.uniform(0.5, 3, 100) * rng.choice([-1, 1], 100)
        k2 = rng.uniform(-3, 3, 100) + 1j * rng.uniform(-3, 3, 100)
        sym = float(np.max(np.abs(omega(k1, -k2) - omega(k1, k2))))
        checks.append(_check("dispersion_identities", exact and sym == 0.0, sym, 0.0))
    with stage("global_relation"):
        ts = s.physical_grid.ts
        tables = LinearTables(s, extra_times=ts)
        pk1, pk2 = sample_global_relation_points(20, rng, s.T)
        q_field = s.exact
        note = "exact field"
        if q_field is None:
            ts, note = np.array([0.0]), "no closed-form q(t); t=0 only"
            q_field = _InitialOnly(s)
        worst = err = 0.0
        for t in ts:
            for v in global_relation_check(pk1, pk2, float(t), s, q_field, tables):
                worst, err = max(worst, abs(v.residual)), max(err, v.err_estimate)
        checks.append(_check("global_relation", worst <= tol["gr_linear"], worst, tol["gr_linear"],
                             err_estimate=err, points=len(pk1), times=list(map(float, ts)), note=note))
    with stage("initial_condition"):
        sol0 = solve_linear(s, "t_form", ts=[0.0], tables=tables)
        ex0 = s.initial.eval(sol0.x[:, None], sol0.y[None, :])
        rel = float(np.abs(sol0.values[0] - ex0).max() / max(np.abs(ex0).max(), 1e-300))
        checks.append(_check("initial_condition_recovery", rel <= tol["ic_recovery"], rel, tol["ic_recovery"]))
    with stage("boundary"):
        tb = float(ts[len(ts) // 2]) if len(ts) > 1 else float(s.T / 2)
        solb = solve_linear(s, "t_form", ys=[0.0], ts=[tb], tables=LinearTables(s, extra_times=[tb]))
        exb = s.boundary.g(solb.x, tb)
        relb = float(np.abs(solb.values[0, :, 0] - exb).max() / max(np.abs(exb).max(), 1e-300))
        checks.append(_check("boundary_recovery", relb <= tol["boundary_recovery"], relb,
                             tol["boundary_recovery"], t=tb))
    with stage("form_equivalence"):
        pg = s.physical_grid
        xs = np.linspace(pg.xs[0], pg.xs[-1], 5) / 2
        ys = np.linspace(pg.ys[0], pg.ys[-1], 5) / 2
        t3 = np.linspace(0, s.T, 3)
        ft = solve_linear(s, "t_form", xs, ys, t3, tables=LinearTables(s, extra_times=t3))
        fT = solve_linear(s, "T_form", xs, ys, t3, tables=LinearTables(s, extra_times=t3))
        diff = np.abs(ft.values - fT.values)
        comb = ft.err_estimate + ft.tail_bound + fT.err_estimate + fT.tail_bound
        ratio = float(np.max(diff / np.maximum(comb, 1e-300)))
        checks.append(_check("form_equivalence", ratio <= tol["form_equivalence"], ratio, tol["form_equivalence"],
                             max_difference=float(diff.max())))
    with stage("write"):
        sol = solve_linear(s, "t_form", tables=LinearTables(s, extra_times=s.physical_grid.ts))
        _emit(req.out, "q_linear", *_grid_rows(sol), title="q")
    return checks


class _InitialOnly:
    def __init__(self, s: Scenario):
        self.s = s

    def q(self, x, y, t):
        return self.s.initial.eval(x, y)


def _kpii_data(s: Scenario):
    from .kpii_direct import KPIIData

    return KPIIData(s, extra_times=tuple(s.physical_grid.ts))


def _epsilon_scenario(s: Scenario, eps: float) -> Scenario:
    return s.scaled(eps)


def _kpii_gr_check(s: Scenario, data, rng, tol) -> dict:
    from .kpii_spectral import global_relation_residual_kpii

    worst = err = 0.0
    n = 0
    while n < 10:
        k = complex(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5))
        if abs(k.imag) < 0.1 or abs(k.real) < 0.05:
            continue
        l = rng.uniform(0.05, 0.95) * (-2 * k.real)
        r, e, _ = global_relation_residual_kpii(l, k, float(s.T), data=data)
        worst, err = max(worst, abs(r)), max(err, e)
        n += 1
    return _check("global_relation_kpii", worst <= tol["gr_kpii"], worst, tol["gr_kpii"],
                  err_estimate=err, samples=n)


def _inverse_pipeline(s: Scenario, data, stage, tag: str):
    from . import kpii_inverse as ki

    with stage(f"tables_{tag}"):
        nodes = ki.SpectralNodes.from_scenario(s)
        tables = ki.build_tables(s, nodes, data, log=log.info)
    with stage(f"inverse_{tag}"):
        op = ki.PompeiuOperator.build(tables)
        sol = ki.solve_inverse(op, s)
        ig = s.inverse_grid
        rec = ki.reconstruct_q(sol, (ig.probe_small, ig.probe_large), ig.ray_angle, ig.probe_tol, ig.reality_tol)
    return nodes, tables, sol, rec


def _linear_reference(s: Scenario, nodes, data, sol):
    from . import kpii_inverse as ki

    ig = s.inverse_grid
    lt = ki.linear_tables(s, nodes, data)
    lin = ki.reconstruct_q(ki.trivial_solution(ki.PompeiuOperator.build(lt), sol.x, sol.y, sol.t),
                           (ig.probe_small, ig.probe_large), ig.ray_angle, ig.probe_tol, ig.reality_tol)
    return lin


def mode_kpii_roundtrip(s: Scenario, req: PipelineRequest, tol: dict, stage) -> list:
    from . import kpii_inverse as ki
    from .kpii_direct import KPIIData, solve_mu

    eps = s.epsilon or 1e-3
    se = _epsilon_scenario(s, eps)
    rng = np.random.default_rng(req.seed)
    checks = []
    data = _kpii_data(se)
    with stage("direct"):
        probe = complex(-0.6, 0.5)
        mu = solve_mu("Q2", probe.real, probe.imag, se, data=data)
        half = solve_mu("Q2", probe.real, probe.imag, _epsilon_scenario(s, eps / 2),
                        data=KPIIData(_epsilon_scenario(s, eps / 2)))
        ratio = float(np.abs(half.samples - 1).max() / np.abs(mu.samples - 1).max())
    checks.append(_check("direct_contraction", mu.contraction < tol["direct_contraction"], mu.contraction,
                         tol["direct_contraction"]))
    checks.append(_check("direct_self_residual", mu.self_residual < tol["direct_self_residual"],
                         mu.self_residual, tol["direct_self_residual"]))
    checks.append(_check("direct_halving", tol["direct_halving_low"] <= ratio <= tol["direct_halving_high"],
                         ratio, [tol["direct_halving_low"], tol["direct_halving_high"]]))
    with stage("global_relation_kpii"):
        checks.append(_kpii_gr_check(se, data, rng, tol))
    ys, ts = data.y, s.physical_grid.ts
    with stage("dbar_check"):
        samples = []
        while len(samples) < 5:
            k = complex(rng.uniform(-1.2, 1.2), rng.uniform(-1.0, 1.0))
            if min(abs(k.real), abs(k.imag)) < 0.2:
                continue
            samples.append((k, float(rng.uniform(-2, 2)), float(ys[rng.integers(0, 11)]), float(rng.choice(ts))))
        db = ki.dbar_check(se, samples, data)
    bound = max(tol["dbar_abs"], tol["oracle_factor"] * db.oracle_error)
    checks.append(_check("dbar_formula", db.deviation <= bound and db.falsified >= tol["falsification_margin"] * db.deviation,
                         db.deviation, bound, oracle_error=db.oracle_error, falsified=db.falsified))
    with stage("jump_check"):
        pts = [(float(rng.uniform(-2, 2)), float(ys[rng.integers(0, 11)]), float(rng.choice(ts))) for _ in range(5)]
        jc = ki.jump_check(se, -0.5, pts[:3], data)
        jc2 = ki.jump_check(se, 0.5, pts[3:], data)
    dev = max(jc.deviation, jc2.deviation)
    err = max(jc.oracle_error, jc2.oracle_error)
    fals = min(jc.falsified, jc2.falsified)
    boundj = max(tol["jump_abs"], tol["oracle_factor"] * err)
    checks.append(_check("jump_formula", dev <= boundj and fals >= tol["falsification_margin"] * dev,
                         dev, boundj, oracle_error=err, falsified=fals))
    nodes, tables, sol, rec = _inverse_pipeline(se, data, stage, "roundtrip")
    checks.append(_check("inverse_contraction", sol.contraction < tol["inverse_contraction"], sol.contraction,
                         tol["inverse_contraction"], tables_contraction=tables.contraction))
    with stage("reference"):
        lin = _linear_reference(se, nodes, data, sol)
        ref = eps * lin.q
        rel = float(np.abs(rec.q - ref).max() / max(np.abs(ref).max(), 1e-300))
        exact_rel = None
        if s.exact is not None:
            ue = eps * s.exact.q(sol.x, sol.y, sol.t)
            exact_rel = float(np.abs(rec.q - ue).max() / max(np.abs(ue).max(), 1e-300))
    checks.append(_check("reconstruction", rel <= tol["limit_relative"], rel, tol["limit_relative"],
                         relative_to_exact=exact_rel, imag_residue=rec.imag_residue))
    rec.write_probes(os.path.join(req.out, "probes.json"))
    _emit(req.out, "q_kpii", rec.x, rec.y, rec.t, rec.q, rec.err, title="q")
    return checks


def mode_linear_limit_study(s: Scenario, req: PipelineRequest, tol: dict, stage) -> list:
    eps_list = (1e-2, 5e-3, 2.5e-3)
    devs, rels = [], []
    converged = True
    lin_q = None
    for eps in eps_list:
        se = _epsilon_scenario(s, eps)
        data = _kpii_data(se)
        nodes, tables, sol, rec = _inverse_pipeline(se, data, stage, f"eps_{eps:g}")
        converged &= sol.contraction < tol["inverse_contraction"]
        if lin_q is None:
            with stage("reference"):
                lin_q = _linear_reference(se, nodes, data, sol).q / eps
            _emit(req.out, "u_reference", sol.x, sol.y, sol.t, lin_q, title="u")
        d = float(np.abs(rec.q / eps - lin_q).max())
        devs.append(d)
        rels.append(d / max(float(np.abs(lin_q).max()), 1e-300))
        _emit(req.out, f"q_eps_{eps:g}", rec.x, rec.y, rec.t, rec.q / eps, rec.err / eps, title="q/eps")
    slope = float(np.polyfit(np.log(eps_list), np.log(devs), 1)[0])
    with open(os.path.join(req.out, "limit_study.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "max_deviation", "relative_deviation"])
        for row in zip(eps_list, devs, rels):
            w.writerow([repr(float(v)) for v in row])
    _plot_limit(req.out, eps_list, devs)
    return [
        _check("inverse_converged", converged, converged, True),
        _check("limit_slope", tol["slope_low"] <= slope <= tol["slope_high"], slope,
               [tol["slope_low"], tol["slope_high"]], deviations=devs),
        _check("limit_relative_deviation", rels[-1] <= tol["limit_relative"], rels[-1], tol["limit_relative"]),
    ]


def _plot_limit(out: str, eps, devs) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(eps, devs, "o-", label="max |q/eps - u|")
    ax.loglog(eps, devs[0] * np.asarray(eps) / eps[0], "k--", label="slope 1")
    ax.set_xlabel("epsilon")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out, "limit_study.png"), dpi=90, metadata={"Software": None})
    plt.close(fig)


def mode_global_relation_scan(s: Scenario, req: PipelineRequest, tol: dict, stage) -> list:
    from .linear_solver import global_relation_check, sample_global_relation_points
    from .linear_spectral import LinearTables

    rng = np.random.default_rng(req.seed)
    rows = []
    with stage("linear"):
        ts = s.physical_grid.ts
        q_field = s.exact if s.exact is not None else _InitialOnly(s)
        if s.exact is None:
            ts = np.array([0.0])
        tables = LinearTables(s, extra_times=ts)
        k1, k2 = sample_global_relation_points(20, rng, s.T)
        worst = err = 0.0
        for t in ts:
            for a, b, v in zip(k1, k2, global_relation_check(k1, k2, float(t), s, q_field, tables)):
                rows.append(["linear", repr(float(a)), repr(b.real), repr(b.imag), repr(float(t)),
                             repr(abs(v.residual)), repr(v.err_estimate)])
                worst, err = max(worst, abs(v.residual)), max(err, v.err_estimate)
    checks = [_check("global_relation_linear", worst <= tol["gr_linear"], worst, tol["gr_linear"], err_estimate=err)]
    with stage("kpii"):
        se = _epsilon_scenario(s, s.epsilon or 1e-3)
        checks.append(_kpii_gr_check(se, _kpii_data(se), rng, tol))
    with open(os.path.join(req.out, "global_relation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "k1", "k2_re", "k2_im", "t", "abs_residual", "err"])
        w.writerows(rows)
    return checks


MODE_FUNCS = {
    "linear_solve": mode_linear_solve,
    "linear_verify": mode_linear_verify,
    "kpii_roundtrip": mode_kpii_roundtrip,
    "linear_limit_study": mode_linear_limit_study,
    "global_relation_scan": mode_global_relation_scan,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _overrides(req: PipelineRequest) -> tuple[dict, dict]:
    scen, checks = {}, {}
    for key, val in req.overrides.items():
        if key.startswith("checks."):
            name = key.split(".", 1)[1]
            if name not in CHECK_DEFAULTS:
                raise ConfigError(f"unknown check tolerance {name!r}")
            try:
                checks[name] = float(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        else:
            scen[key] = val
    if req.epsilon is not None:
        scen["scenario.epsilon"] = str(req.epsilon)
    if req.truncation_radius is not None:
        scen["quadrature.truncation_radius"] = str(req.truncation_radius)
        scen["inverse_grid.radius"] = str(req.truncation_radius)
    return scen, checks


def load_request_scenario(req: PipelineRequest) -> tuple[Scenario, dict, str]:
    if req.mode not in MODES:
        raise ConfigError(f"unknown mode {req.mode!r}")
    if not os.path.exists(req.scenario):
        raise ConfigError(f"scenario file {req.scenario!r} not found")
    scen_over, check_over = _overrides(req)
    with open(req.scenario) as fh:
        text = fh.read()
    s = load_scenario(text, os.path.dirname(os.path.abspath(req.scenario)), scen_over)
    tol = dict(CHECK_DEFAULTS)
    tol.update({k: float(v) for k, v in s.config.get("checks", {}).items() if k in CHECK_DEFAULTS})
    tol.update(check_over)
    digest = hashlib.sha256(
        json.dumps({"mode": req.mode, "scenario": dump_scenario(s), "tol": tol, "seed": req.seed},
                   sort_keys=True).encode()).hexdigest()
    return s, tol, digest


def run(req: PipelineRequest) -> tuple[RunManifest, int]:
    """Execute one mode; returns the manifest and the exit status."""
    os.makedirs(req.out, exist_ok=True)
    manifest = RunManifest(req.mode, req.scenario, "", {"kphalf": __version__, "numpy": np.__version__})
    code = 0
    try:
        s, tol, manifest.config_hash = load_request_scenario(req)
        import scipy

        manifest.versions["scipy"] = scipy.__version__
        checks = MODE_FUNCS[req.mode](s, req, tol, _Stages(manifest))
        declared = DECLARED_CHECKS[req.mode]
        if [c["name"] for c in checks] != list(declared):
            raise RuntimeError(f"mode {req.mode} reported {[c['name'] for c in checks]}, declared {declared}")
        manifest.checks = checks
        code = 0 if manifest.all_passed else 1
    except ConfigError as exc:
        manifest.error, code = f"{type(exc).__name__}: {exc}", 2
    except (NumericalError, MissingField) as exc:
        manifest.error, code = f"{type(exc).__name__}: {exc}", 3
    except KPError as exc:
        manifest.error, code = f"{type(exc).__name__}: {exc}", 3
    manifest.status = {0: "pass", 1: "check_failed", 2: "config_error", 3: "numerical_failure"}[code]
    manifest.write(os.path.join(req.out, "manifest.json"))
    return manifest, code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kphalf", description=__doc__.splitlines()[0])
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--scenario", required=True, help="scenario config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override section.key (or checks.<name>) from the scenario")
    p.add_argument("--epsilon", type=float, default=None, help="data amplitude for the nonlinear modes")
    p.add_argument("--truncation-radius", type=float, default=None, help="spectral truncation radius")
    p.add_argument("--seed", type=int, default=0, help="seed for random sample points")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    req = PipelineRequest(args.mode, args.scenario, args.out, overrides, args.epsilon,
                          args.truncation_radius, args.seed)
    manifest, code = run(req)
    for c in manifest.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']} (threshold {c['threshold']})")
    if manifest.error:
        print(f"ERROR {manifest.error}", file=sys.stderr)
    print(f"status {manifest.status}; manifest {os.path.join(req.out, 'manifest.json')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
