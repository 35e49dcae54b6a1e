import json
import os
from pathlib import Path

import numpy as np
import pytest

from invprob.cli import ExperimentConfig, main, run, validate
from invprob.families import family_labels


def _read(path, binary=False):
    return Path(path).read_bytes() if binary else Path(path).read_text()


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(tmp_path, cfg, *extra, name="out"):
    cfg = {**cfg, "output": str(tmp_path / name)}
    code = main([_write(tmp_path, cfg, name + ".cfg.json"), *extra])
    return code, str(tmp_path / name)


POSTERIOR = {"command": "posterior", "family": "normal-location", "factor": "location", "data": [0.0]}


def test_validate_minimal_config():
    cfg = validate(json.dumps(POSTERIOR))
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.family == "normal-location" and cfg.data == [0.0]


def test_validate_delta_out_of_range_names_field_and_bound():
    errors = validate({**POSTERIOR, "delta": 1.2})
    assert isinstance(errors, list)
    hit = [e for e in errors if e.startswith("delta")]
    assert hit and "[0, 1]" in hit[0] and "1.2" in hit[0]


def test_validate_unknown_family_lists_labels():
    errors = validate({**POSTERIOR, "family": "gumbel-thing"})
    assert isinstance(errors, list)
    msg = [e for e in errors if e.startswith("family")][0]
    for label in family_labels():
        assert label in msg


def test_validate_reports_every_error():
    errors = validate({"command": "coverage", "family": "nope", "delta": 1.5, "trials": 0, "alpha": -1})
    fields = {e.split(":", 1)[0] for e in errors}
    assert {"family", "delta", "trials", "alpha", "truth"} <= fields


def test_validate_cross_field_checks():
    errors = validate({**POSTERIOR, "alpha": 0.2, "delta": 0.9})
    assert any(e.startswith("alpha") and "1 - delta" in e for e in errors)
    errors = validate({"command": "posterior", "family": "normal-location"})
    assert any(e.startswith("data") for e in errors)
    assert validate("[1, 2]") == ["config must be a JSON object"]
    assert validate("{not json")[0].startswith("config is not valid JSON")


def test_posterior_command(tmp_path):
    code, prefix = _run(tmp_path, POSTERIOR)
    assert code == 0
    result = json.loads(_read(prefix + ".json"))
    assert abs(result["log_eta"]) < 1e-9
    assert result["posterior"]["grid"]
    csv = np.loadtxt(prefix + ".csv", delimiter=",", skiprows=1)
    k = np.argmin(np.abs(csv[:, 0]))
    assert csv[k, 0] == pytest.approx(0.0, abs=0.05)
    from invprob.posterior import Posterior
    post = Posterior.from_dict(result["posterior"])
    assert float(post.density(0.0)) == pytest.approx(0.3989422804014327, abs=1e-9)


def test_manifest_lists_existing_files(tmp_path):
    code, prefix = _run(tmp_path, {**POSTERIOR, "emit_plot": True})
    assert code == 0
    manifest = json.loads(_read(prefix + ".manifest.json"))
    assert {prefix + ext for ext in (".json", ".csv", ".manifest.json")} <= set(manifest["output_files"])
    for path in manifest["output_files"]:
        assert os.path.exists(path)
    assert manifest["config_echo"]["family"] == "normal-location"
    assert manifest["wall_time_seconds"] >= 0
    if prefix + ".svg" in manifest["output_files"]:
        svg = _read(prefix + ".svg")
        assert "<svg" in svg and "xlink:href=\"http" not in svg


def test_csv_format(tmp_path):
    code, prefix = _run(tmp_path, POSTERIOR)
    raw = _read(prefix + ".csv", binary=True)
    assert b"\r" not in raw
    head, first = raw.decode().split("\n")[:2]
    assert head == "theta,density,cdf"
    # 17 significant digits round-trip exactly
    for field in first.split(","):
        assert float(f"{float(field):.17g}") == float(field)


def test_coverage_deterministic_across_runs_and_jobs(tmp_path):
    cfg = {"command": "coverage", "family": "normal-location", "factor": "location", "truth": 3.0,
           "alpha": 0.05, "delta": 0.9, "trials": 2000, "seed": 42}
    c1, p1 = _run(tmp_path, {**cfg, "jobs": 1}, name="a")
    c2, p2 = _run(tmp_path, {**cfg, "jobs": 2}, name="b")
    assert c1 == c2 == 0
    assert _read(p1 + ".csv", binary=True) == _read(p2 + ".csv", binary=True)
    j1 = json.loads(_read(p1 + ".json"))
    j2 = json.loads(_read(p2 + ".json"))
    for j in (j1, j2):
        j["config"].pop("output")
        j["config"].pop("jobs")
    assert j1 == j2


def test_flags_override_config(tmp_path):
    cfg = {"command": "coverage", "family": "normal-location", "truth": 0.0, "trials": 50, "seed": 1}
    code, prefix = _run(tmp_path, cfg, "--seed", "7", "--trials", "30", "--delta", "0.8", "--alpha", "0.1",
                        "--set", "n_obs=2")
    assert code == 0
    echo = json.loads(_read(prefix + ".json"))["config"]
    assert (echo["seed"], echo["trials"], echo["delta"], echo["alpha"], echo["n_obs"]) == (7, 30, 0.8, 0.1, 2)


def test_validate_flag_writes_nothing(tmp_path, capsys):
    code, prefix = _run(tmp_path, POSTERIOR, "--validate")
    assert code == 0
    assert json.loads(capsys.readouterr().out)["family"] == "normal-location"
    assert not os.path.exists(prefix + ".json")


def test_compare_priors_command(tmp_path):
    cfg = {"command": "compare-priors", "family": "normal", "data": [1.0, 1.0]}
    code, prefix = _run(tmp_path, cfg)
    assert code == 0
    header = _read(prefix + ".csv").split("\n")[0].strip().split(",")
    assert header == ["lambda", "consistency", "reference"]
    assert json.loads(_read(prefix + ".json"))["l1_distance"] > 0.01


def test_fiducial_and_reduce_commands(tmp_path):
    code, prefix = _run(tmp_path, {"command": "fiducial", "family": "exponential-scale", "data": [1.0]}, name="f")
    assert code == 0
    assert json.loads(_read(prefix + ".json"))["residual"] < 1e-6
    code, prefix = _run(tmp_path, {"command": "reduce", "family": "exponential-scale"}, name="r")
    assert code == 0
    result = json.loads(_read(prefix + ".json"))
    assert result["h_form_residual"] < 1e-8


def test_pit_command(tmp_path):
    cfg = {"command": "pit", "family": "normal-location", "truth": 1.0, "trials": 300, "seed": 3}
    code, prefix = _run(tmp_path, cfg)
    assert code == 0
    result = json.loads(_read(prefix + ".json"))
    assert result["ks"] < result["critical_1pct"]
    assert len(_read(prefix + ".csv").splitlines()) == 301


def test_exit_code_config_error(tmp_path, capsys):
    code, prefix = _run(tmp_path, {**POSTERIOR, "delta": 1.2})
    assert code == 2
    err = capsys.readouterr().err
    assert "delta" in err
    assert not os.path.exists(prefix + ".json")
    path = tmp_path / "broken.json"
    path.write_text("{")
    assert main([str(path)]) == 2


def test_exit_code_numerical_failure(tmp_path, capsys):
    cfg = {"command": "posterior", "family": "exponential-scale", "factor": "sigma^0", "mode": "unchecked",
           "data": [1.0]}
    code, prefix = _run(tmp_path, cfg)
    assert code == 3
    err = capsys.readouterr().err
    assert "PosteriorNotNormalizable" in err and "[posterior]" in err
    assert not os.path.exists(prefix + ".json")


def test_trivial_locus_is_numerical_failure(tmp_path, capsys):
    cfg = {"command": "posterior", "family": "exponential-scale", "data": [0.0]}
    code, _ = _run(tmp_path, cfg)
    assert code == 3
    assert "TrivialLocusDatum" in capsys.readouterr().err


def test_exit_code_missing_file(tmp_path):
    assert main([str(tmp_path / "absent.json")]) == 4


def test_run_leaves_no_temporary_files(tmp_path):
    cfg = validate({**POSTERIOR, "output": str(tmp_path / "x")})
    manifest = run(cfg)
    assert sorted(os.listdir(tmp_path)) == sorted(os.path.basename(p) for p in manifest.output_files)
