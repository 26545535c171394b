from __future__ import annotations

import json
import os

import numpy as np
import pytest

from kphalf.cli import (CHECK_DEFAULTS, DECLARED_CHECKS, PipelineRequest, emit_plot_data, main,
                        read_field_csv, run, write_field_csv)
from kphalf.errors import MissingField

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ZERO = os.path.join(ROOT, "scenarios", "zero.ini")


def _blocks(text: str):
    return [b for b in text.split("\n\n\n") if b.strip()]


def _rows(block: str):
    return [ln.split() for ln in block.splitlines() if ln and not ln.startswith("#")]


def test_zero_field_gives_zero_columns(tmp_path):
    src = tmp_path / "f.csv"
    write_field_csv(str(src), [0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
    emit_plot_data([str(src)], str(tmp_path / "f.dat"))
    rows = _rows((tmp_path / "f.dat").read_text())
    assert [float(r[2]) for r in rows] == [0.0, 0.0]


def test_two_by_two_grid_is_row_major(tmp_path):
    src = tmp_path / "f.csv"
    # deliberately shuffled input order
    x = [1.0, 0.0, 1.0, 0.0]
    y = [1.0, 1.0, 0.0, 0.0]
    write_field_csv(str(src), x, y, [0.5] * 4, [4.0, 2.0, 3.0, 1.0])
    emit_plot_data([str(src)], str(tmp_path / "f.dat"))
    rows = _rows((tmp_path / "f.dat").read_text())
    assert [[float(v) for v in r] for r in rows] == [
        [0.0, 0.0, 1.0], [0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [1.0, 1.0, 4.0]]


def test_one_block_per_time_slice(tmp_path):
    src = tmp_path / "f.csv"
    write_field_csv(str(src), [0.0, 0.0], [0.0, 0.0], [0.0, 1.0], [1.0, 2.0])
    emit_plot_data([str(src)], str(tmp_path / "f.dat"))
    assert len(_blocks((tmp_path / "f.dat").read_text())) == 2


def test_off_grid_time_uses_nearest_slice_with_warning(tmp_path):
    src = tmp_path / "f.csv"
    write_field_csv(str(src), [0.0, 0.0], [0.0, 0.0], [0.0, 1.0], [1.0, 2.0])
    warnings = emit_plot_data([str(src)], str(tmp_path / "f.dat"), times=[0.8])
    assert len(warnings) == 1 and "nearest" in warnings[0]
    rows = _rows((tmp_path / "f.dat").read_text())
    assert [float(r[2]) for r in rows] == [2.0]


def test_missing_field_file(tmp_path):
    with pytest.raises(MissingField):
        emit_plot_data([str(tmp_path / "absent.csv")], str(tmp_path / "out.dat"))
    with pytest.raises(MissingField):
        read_field_csv(str(tmp_path / "absent.csv"))


def test_zero_scenario_passes(tmp_path):
    manifest, code = run(PipelineRequest("linear_solve", ZERO, str(tmp_path)))
    assert code == 0 and manifest.status == "pass"
    assert [c["name"] for c in manifest.checks] == list(DECLARED_CHECKS["linear_solve"])
    data = read_field_csv(str(tmp_path / "q_linear.csv"))
    assert data["value"].size == 5 * 5 * 3 and np.all(data["value"] == 0)
    for ext in ("csv", "dat", "png"):
        assert (tmp_path / f"q_linear.{ext}").exists()
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved["config_hash"] == manifest.config_hash and len(saved["config_hash"]) == 64


def test_exit_codes(tmp_path):
    assert main(["--mode", "linear_solve", "--scenario", ZERO, "--out", str(tmp_path / "a")]) == 0
    assert main(["--mode", "linear_solve", "--scenario", ZERO, "--out", str(tmp_path / "b"),
                 "--set", "checks.reality=-1"]) == 1
    assert main(["--mode", "linear_solve", "--scenario", str(tmp_path / "none.ini"),
                 "--out", str(tmp_path / "c")]) == 2
    assert main(["--mode", "linear_solve", "--scenario", ZERO, "--out", str(tmp_path / "d"),
                 "--set", "quadrature.bogus=1"]) == 2
    packet = os.path.join(ROOT, "scenarios", "kpii_wavepacket.ini")
    assert main(["--mode", "kpii_roundtrip", "--scenario", packet, "--out", str(tmp_path / "e"),
                 "--epsilon", "50"]) == 3
    saved = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert saved["status"] == "numerical_failure" and "Contraction" in saved["error"]


def test_tolerance_overrides_reach_config_hash(tmp_path):
    a, _ = run(PipelineRequest("linear_solve", ZERO, str(tmp_path / "a")))
    b, _ = run(PipelineRequest("linear_solve", ZERO, str(tmp_path / "b"), {"checks.reality": "1e-6"}))
    assert a.config_hash != b.config_hash
    assert set(CHECK_DEFAULTS) >= {"gr_linear", "limit_relative", "falsification_margin"}


def test_repeated_runs_are_bit_identical(tmp_path):
    for d in ("a", "b"):
        main(["--mode", "linear_solve", "--scenario", ZERO, "--out", str(tmp_path / d)])
    for name in ("q_linear.csv", "q_linear.dat"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
