"""Command-line surface: artifacts, exit codes, plotting, and determinism."""

import copy
import json

import numpy as np
import pytest

from levyfilter import PRESETS, preset_to_config
from levyfilter.cli import _split_top_level, emit_svg, main


@pytest.fixture(autouse=True)
def _no_thread_env(monkeypatch):
    monkeypatch.delenv("LEVYFILTER_THREADS", raising=False)


def _write_config(tmp_path, mutate=None):
    cfg = copy.deepcopy(preset_to_config(PRESETS["example6"]()))
    if mutate:
        mutate(cfg)
    path = tmp_path / "model.json"
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------------------
# happy paths


def test_simulate_writes_path_and_summary(tmp_path):
    out = tmp_path / "sim"
    rc = main(["simulate", "--T", "0.2", "--dt", "0.02", "--out", str(out)])
    assert rc == 0
    assert (out / "path.csv").exists()
    assert (out / "config.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 10
    assert summary["epsilon"] == 0.1
    data = np.loadtxt(out / "path.csv", delimiter=",", skiprows=1)
    assert data.shape[0] == 11


def test_average_writes_table(tmp_path):
    out = tmp_path / "avg"
    rc = main([
        "average", "--samples", "2000", "--burn-in", "2.0", "--stride", "5",
        "--x", "0.3", "--out", str(out),
    ])
    assert rc == 0
    header = (out / "averaged.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "x"
    assert any(h.startswith("bbar1") for h in header)
    assert any(h.startswith("hbar") for h in header)
    data = np.loadtxt(out / "averaged.csv", delimiter=",", skiprows=1, ndmin=2)
    assert data.shape[0] == 1 and data[0, 0] == 0.3
    meta = json.loads((out / "averaged.json").read_text())
    assert meta["mode"] == "exact_ou"
    assert meta["n_samples"] == 2000


def test_filter_both_modes_share_the_observation(tmp_path):
    out = tmp_path / "filt"
    rc = main([
        "filter", "--T", "0.2", "--dt", "0.02", "--particles", "50",
        "--mode", "both", "--psi", "tanh", "--out", str(out),
    ])
    assert rc == 0
    assert (out / "filter_full.csv").exists()
    assert (out / "filter_homog.csv").exists()
    assert (out / "path.csv").exists()
    full = np.loadtxt(out / "filter_full.csv", delimiter=",", skiprows=1)
    homog = np.loadtxt(out / "filter_homog.csv", delimiter=",", skiprows=1)
    assert full.shape == homog.shape == (11, 4)  # t, pi_tanh, rho1, ess
    np.testing.assert_array_equal(full[:, 0], homog[:, 0])


def test_validate_passes_on_preset(tmp_path):
    out = tmp_path / "val"
    rc = main(["validate", "--samples", "150", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "validation.json").read_text())
    assert doc["passed"] is True
    assert any(c["name"] == "lipschitz_coefficients" for c in doc["checks"])


def _converge_args(out, threads):
    return [
        "converge", "--eps", "0.5,0.2", "--replications", "3",
        "--particles", "32", "--T", "0.2", "--dt", "0.02",
        "--psi", "tanh", "--signal-paths", "300", "--martingale-runs", "100",
        "--threads", str(threads), "--out", str(out),
    ]


def test_converge_writes_tables_and_plots(tmp_path):
    out = tmp_path / "conv"
    rc = main(_converge_args(out, threads=2))
    assert rc == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert len(lines) == 3  # header + two epsilons
    header = lines[0].split(",")
    assert header[0] == "epsilon"
    assert "mean_gap_tanh" in header and "ks_signal" in header
    doc = json.loads((out / "convergence.json").read_text())
    assert doc["epsilons"] == [0.5, 0.2]
    svg = (out / "gap_vs_eps.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert (out / "ks_vs_eps.svg").exists()


def test_converge_is_thread_count_invariant(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(_converge_args(a, threads=1)) == 0
    assert main(_converge_args(b, threads=3)) == 0
    for name in ("convergence.csv", "gap_vs_eps.svg", "ks_vs_eps.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_config_file_round_trips_through_cli(tmp_path):
    cfg_path = _write_config(tmp_path)
    out = tmp_path / "sim"
    rc = main([
        "simulate", "--config", str(cfg_path), "--T", "0.1", "--dt", "0.02",
        "--eps", "0.5", "--out", str(out),
    ])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["epsilon"] == 0.5  # --eps overrode the config's value


# ---------------------------------------------------------------------------
# failure paths


def test_unknown_flag_is_a_usage_error(tmp_path, capsys):
    rc = main(["simulate", "--bogus", str(tmp_path)])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand(tmp_path):
    assert main(["frobnicate"]) == 1


def test_unknown_config_key_names_the_key(tmp_path, capsys):
    cfg_path = _write_config(tmp_path, lambda c: c["model"].__setitem__("bogus_knob", 1))
    rc = main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "bogus_knob" in capsys.readouterr().err


def test_broken_json_config(tmp_path, capsys):
    cfg_path = tmp_path / "broken.json"
    cfg_path.write_text("{not json")
    rc = main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_stiff_fast_step_maps_to_numerical_failure(tmp_path, capsys):
    rc = main([
        "simulate", "--fast-mode", "euler", "--dt", "0.1", "--dt-fast", "0.05",
        "--eps", "0.1", "--T", "0.2", "--out", str(tmp_path / "o"),
    ])
    assert rc == 2
    err = capsys.readouterr().err
    assert "numerical failure" in err and "seed" in err


def test_validation_failures_exit_nonzero(tmp_path, capsys):
    cfg_path = _write_config(
        tmp_path, lambda c: c["model"]["bounds"].__setitem__("L1", 0.05)
    )
    rc = main([
        "validate", "--config", str(cfg_path), "--samples", "300",
        "--out", str(tmp_path / "o"),
    ])
    assert rc == 2
    assert (tmp_path / "o" / "validation.json").exists()  # report still written


def test_invalid_thread_env_is_a_config_error(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LEVYFILTER_THREADS", "many")
    rc = main(_converge_args(tmp_path / "t", threads=1))
    assert rc == 1
    assert "LEVYFILTER_THREADS" in capsys.readouterr().err


def test_bad_psi_spec_is_a_config_error(tmp_path, capsys):
    rc = main([
        "filter", "--T", "0.1", "--dt", "0.02", "--particles", "10",
        "--psi", "wavelet", "--out", str(tmp_path / "o"),
    ])
    assert rc == 1


# ---------------------------------------------------------------------------
# plotting and parsing helpers


def test_split_top_level_respects_parentheses():
    assert _split_top_level("a,b(c,d),e") == ["a", "b(c,d)", "e"]
    assert _split_top_level(" tanh , poly(1, 0, 0) ") == ["tanh", "poly(1, 0, 0)"]
    assert _split_top_level("single") == ["single"]
    assert _split_top_level("") == []


def test_emit_svg_draws_one_polyline_per_series():
    series = [
        {"label": "a", "x": [1.0, 2.0, 3.0], "y": [1.0, 4.0, 9.0]},
        {"label": "b", "x": [1.0, 2.0, 3.0], "y": [2.0, 5.0, 10.0]},
    ]
    svg = emit_svg(series, title="t", xlabel="x", ylabel="y")
    assert svg.count("<polyline") == 2
    assert "t" in svg and svg.startswith("<svg")
    assert emit_svg(series, title="t", xlabel="x", ylabel="y") == svg  # deterministic


def test_emit_svg_log_axes_reject_nonpositive_values():
    series = [{"label": "a", "x": [0.1, 1.0], "y": [0.0, 2.0]}]
    with pytest.raises(ValueError):
        emit_svg(series, log_y=True)
    with pytest.raises(ValueError):
        emit_svg([{"label": "a", "x": [1.0], "y": [2.0]}])  # one point is not a line
    with pytest.raises(ValueError):
        emit_svg([{"label": "a", "x": [1.0, 2.0], "y": [float("nan"), 1.0]}])
