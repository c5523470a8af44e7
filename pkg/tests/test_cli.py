"""End-to-end coverage of the command line verbs and their output contract."""

import json
import os
import shutil
import subprocess
import sys

import pytest

from pathint.cli import OUT_ENV_VAR, main


def write_cfg(tmp_path, body, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return str(p)


def load_summary(out):
    with open(os.path.join(out, "summary.json")) as fh:
        return json.load(fh)


def linear_cfg(**extra):
    body = {
        "path": {
            "kind": "linear",
            "seed": 0,
            "params": {"n_steps": 1024, "T": 1.0, "d": 1, "slope": 1.0},
        },
        "thresholds": {"start_exp": 1, "stop_exp": 8},
        "p": 2.5,
        "integrand": "coordinate",
    }
    body.update(extra)
    return body


def walk_cfg(**extra):
    body = {
        "path": {
            "kind": "random_walk",
            "seed": 7,
            "params": {"n_steps": 4096, "T": 1.0, "d": 1, "scale": 2.0**-6},
        },
        "thresholds": {"start_exp": 2, "stop_exp": 6},
        "p": 2.5,
    }
    body.update(extra)
    return body


# ---------------------------------------------------------------------------
# verbs

def test_generate_outputs(tmp_path):
    cfg = write_cfg(tmp_path, linear_cfg())
    out = str(tmp_path / "out")
    assert main(["generate", "--config", cfg, "--out", out]) == 0
    for name in ("path.csv", "ladder.json", "path.png", "summary.json"):
        assert os.path.exists(os.path.join(out, name))
    summary = load_summary(out)
    assert summary["schema_version"] == 1
    assert summary["verb"] == "generate"
    assert summary["n_points"] == 1025
    assert summary["all_passed"] is True


def test_integrate_linear_contract(tmp_path):
    # flat ramp, eight dyadic levels: exact chen identity and vanishing qv
    cfg = write_cfg(tmp_path, linear_cfg())
    out = str(tmp_path / "out")
    assert main(["integrate", "--config", cfg, "--out", out]) == 0
    summary = load_summary(out)
    assert summary["chen_residual_max"] < 1e-12
    assert summary["qv_limit"] == 0.0
    assert summary["integrand"] == "coordinate"
    for name in ("ladder.json", "qv_report.csv", "integral_curves.csv", "rate_fit.png"):
        assert os.path.exists(os.path.join(out, name))


def test_verify_walk_checks_pass(tmp_path):
    cfg = write_cfg(
        tmp_path,
        walk_cfg(
            path={
                "kind": "random_walk",
                "seed": 7,
                "params": {"n_steps": 8192, "T": 1.0, "d": 1, "scale": 2.0**-6},
            },
            thresholds={"start_exp": 2, "stop_exp": 10},
            checks=["rie", "follmer", "hoeffding"],
        ),
    )
    out = str(tmp_path / "out")
    assert main(["verify", "--config", cfg, "--out", out]) == 0
    summary = load_summary(out)
    assert summary["all_passed"] is True
    for name in ("rie", "follmer", "hoeffding"):
        assert summary["checks"][name]["passed"] is True


def test_roughpath_outputs(tmp_path):
    cfg = write_cfg(tmp_path, walk_cfg())
    out = str(tmp_path / "out")
    assert main(["roughpath", "--config", cfg, "--out", out]) == 0
    summary = load_summary(out)
    assert summary["checks"]["chen"]["passed"] is True
    with open(os.path.join(out, "rough_path.json")) as fh:
        blob = json.load(fh)
    g = len(blob["grid_times"])
    assert blob["p"] == 2.5
    assert len(blob["area_row_major"]) == g * g * blob["d"] * blob["d"]


def test_study_outputs_and_gap_decay(tmp_path):
    cfg = write_cfg(tmp_path, walk_cfg())
    out = str(tmp_path / "out")
    assert main(["study", "--config", cfg, "--out", out]) == 0
    summary = load_summary(out)
    gaps = summary["gap_per_level"]
    assert summary["modelfree_vs_rough_gap"] == gaps[-1]
    assert gaps[-1] < gaps[0]
    assert summary["integrand"] == "phi:square"
    for name in ("study.csv", "study_gaps.png", "rate_fit.png"):
        assert os.path.exists(os.path.join(out, name))


# ---------------------------------------------------------------------------
# integrand variants and csv input

def test_integrate_phi_integrand(tmp_path):
    cfg = write_cfg(tmp_path, walk_cfg(integrand={"phi": "sin"}))
    out = str(tmp_path / "out")
    assert main(["integrate", "--config", cfg, "--out", out]) == 0
    assert load_summary(out)["integrand"] == "phi:sin"


def test_integrate_csv_integrand_and_path_roundtrip(tmp_path):
    cfg = write_cfg(tmp_path, linear_cfg())
    gen_out = str(tmp_path / "gen")
    assert main(["generate", "--config", cfg, "--out", gen_out]) == 0
    path_csv = os.path.join(gen_out, "path.csv")

    reuse = linear_cfg(integrand={"csv": path_csv})
    reuse["path"] = {"csv": path_csv}
    cfg2 = write_cfg(tmp_path, reuse, name="reuse.json")
    out = str(tmp_path / "out")
    assert main(["integrate", "--config", cfg2, "--out", out]) == 0
    assert load_summary(out)["integrand"] == "csv"


def test_integrand_grid_mismatch_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, linear_cfg())
    gen_out = str(tmp_path / "gen")
    assert main(["generate", "--config", cfg, "--out", gen_out]) == 0

    small = linear_cfg(integrand={"csv": os.path.join(gen_out, "path.csv")})
    small["path"]["params"]["n_steps"] = 512
    cfg2 = write_cfg(tmp_path, small, name="mismatch.json")
    assert main(["integrate", "--config", cfg2, "--out", str(tmp_path / "o2")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["code"] == "config_invalid"


# ---------------------------------------------------------------------------
# error handling

def test_exponent_out_of_range(tmp_path, capsys):
    cfg = write_cfg(tmp_path, linear_cfg(p=3.5))
    out = str(tmp_path / "out")
    assert main(["integrate", "--config", cfg, "--out", out]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["code"] == "exponent_out_of_range"
    assert not os.path.exists(os.path.join(out, "summary.json"))


def test_config_not_found(tmp_path, capsys):
    rc = main(["verify", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert json.loads(capsys.readouterr().err)["error"]["code"] == "config_not_found"


def test_config_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["verify", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert json.loads(capsys.readouterr().err)["error"]["code"] == "config_parse_error"


def test_unknown_check_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path, walk_cfg(checks=["bogus"]))
    rc = main(["verify", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 2
    assert json.loads(capsys.readouterr().err)["error"]["code"] == "config_invalid"


def test_usage_error_on_unknown_verb(tmp_path, capsys):
    rc = main(["frobnicate", "--config", "x.json"])
    assert rc == 2
    assert json.loads(capsys.readouterr().err)["error"]["code"] == "usage_error"


def test_failing_check_exits_1(tmp_path):
    # isometry budget far below the realized quadratic variation: not applicable
    cfg = write_cfg(
        tmp_path,
        walk_cfg(checks=["isometry"], check_params={"isometry": {"c": 1e-9}}),
    )
    out = str(tmp_path / "out")
    assert main(["verify", "--config", cfg, "--out", out]) == 1
    summary = load_summary(out)
    assert summary["all_passed"] is False
    assert summary["checks"]["isometry"]["verdict"] == "not applicable"


# ---------------------------------------------------------------------------
# reproducibility and environment

def test_reruns_are_bit_identical(tmp_path):
    cfg = write_cfg(tmp_path, walk_cfg())
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert main(["verify", "--config", cfg, "--out", out_a]) == 0
    assert main(["verify", "--config", cfg, "--out", out_b]) == 0
    names = sorted(os.listdir(out_a))
    assert names == sorted(os.listdir(out_b))
    for name in names:
        with open(os.path.join(out_a, name), "rb") as fa:
            with open(os.path.join(out_b, name), "rb") as fb:
                assert fa.read() == fb.read(), name


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, walk_cfg())
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert main(["generate", "--config", cfg, "--out", out_a]) == 0
    assert main(["generate", "--config", cfg, "--out", out_b, "--seed", "99"]) == 0
    assert load_summary(out_a)["seed"] == 7
    assert load_summary(out_b)["seed"] == 99
    with open(os.path.join(out_a, "path.csv")) as fa:
        with open(os.path.join(out_b, "path.csv")) as fb:
            assert fa.read() != fb.read()


def test_out_env_var(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUT_ENV_VAR, str(target))
    monkeypatch.chdir(tmp_path)
    cfg = write_cfg(tmp_path, linear_cfg())
    assert main(["generate", "--config", cfg]) == 0
    assert (target / "summary.json").exists()


def test_no_figures_flag(tmp_path):
    cfg = write_cfg(tmp_path, walk_cfg())
    out = str(tmp_path / "out")
    assert main(["verify", "--config", cfg, "--out", out, "--no-figures"]) == 0
    assert not [f for f in os.listdir(out) if f.endswith(".png")]


def test_outputs_list_matches_directory(tmp_path):
    cfg = write_cfg(tmp_path, walk_cfg())
    out = str(tmp_path / "out")
    assert main(["study", "--config", cfg, "--out", out]) == 0
    summary = load_summary(out)
    assert sorted(summary["outputs"]) == sorted(os.listdir(out))


def test_console_script(tmp_path):
    exe = shutil.which("pathint")
    cfg = write_cfg(tmp_path, linear_cfg())
    out = str(tmp_path / "out")
    argv = [exe] if exe else [sys.executable, "-m", "pathint.cli"]
    proc = subprocess.run(
        argv + ["integrate", "--config", cfg, "--out", out, "--no-figures"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(os.path.join(out, "summary.json"))
