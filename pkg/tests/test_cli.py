import json
import os
import shutil

import numpy as np
import pytest

from dssboussinesq import cli
from dssboussinesq import spectral_core as sc
from dssboussinesq.errors import ConfigError

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SMOKE = """
[data]
lambda = 2.0
[box]
L = 8.0
N = 16
[profiles]
n_s = 4
[revision]
R0 = 4.0
[verify]
quarter_power = false
"""


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("smoke")
    cfg = write_cfg(d / "c.toml", SMOKE)
    out = str(d / "run")
    assert cli.main(["solve", "--config", cfg, "--out", out]) == 0
    return cfg, out


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def hashes(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return json.load(fh)["files"]


def test_missing_lambda(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.toml", SMOKE.replace("lambda = 2.0", ""))
    assert cli.main(["profile", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "lambda" in capsys.readouterr().err
    with pytest.raises(ConfigError) as exc:
        cli.validate_config({"data": {}})
    assert exc.value.path == "lambda"


@pytest.mark.parametrize("section,key,value", [
    ("box", "N", 15), ("box", "N", 6), ("revision", "q", 4.0), ("model", "epsilon", 1.5),
    ("solver", "steps_per_period", 40), ("data", "lambda", 1.0), ("box", "bogus", 1),
])
def test_config_validation(section, key, value):
    raw = {"data": {"lambda": 2.0}}
    raw.setdefault(section, {})[key] = value
    with pytest.raises(ConfigError):
        cli.validate_config(raw)


def test_config_defaults_and_hash():
    cfg = cli.validate_config({"data": {"lambda": 2.0}})
    assert cfg["box"]["N"] == 32 and cfg["solver"]["tol"] == 1e-8
    other = json.loads(json.dumps(cfg))
    other["output"]["dir"] = "elsewhere"
    assert cli.config_hash(cfg) == cli.config_hash(other)
    other["box"]["N"] = 48
    assert cli.config_hash(cfg) != cli.config_hash(other)


def test_solve_artifact_layout(smoke_run):
    _, out = smoke_run
    files = hashes(out)
    for rel in ("profiles/V0.bin", "profiles/certificates.json", "revise/pair.Vstar",
                "solve/U.bin", "solve/ledger.csv", "solve/solve_manifest.json",
                "reports/verification.json"):
        assert rel in files
    with open(os.path.join(out, "reports", "verification.json")) as fh:
        rep = json.load(fh)
    assert all(rep["hard"].values())


def test_rerun_identical_hashes(smoke_run, tmp_path):
    cfg, out = smoke_run
    out2 = str(tmp_path / "again")
    assert cli.main(["solve", "--config", cfg, "--out", out2]) == 0
    assert hashes(out) == hashes(out2)


def test_resume_reuses_stages(smoke_run, tmp_path):
    cfg, out = smoke_run
    copy = str(tmp_path / "copy")
    shutil.copytree(out, copy)
    before = os.path.getmtime(os.path.join(copy, "profiles", "V0.bin"))
    assert cli.main(["solve", "--config", cfg, "--out", copy, "--resume"]) == 0
    assert os.path.getmtime(os.path.join(copy, "profiles", "V0.bin")) == before
    assert hashes(copy) == hashes(out)


def test_verify_smoke(smoke_run, capsys):
    _, out = smoke_run
    assert cli.main(["verify", out]) == 0
    text = capsys.readouterr().out
    assert "PASS divergence" in text and "(monitor)" in text


def test_verify_corrupted_file(smoke_run, tmp_path):
    _, out = smoke_run
    copy = str(tmp_path / "bad")
    shutil.copytree(out, copy)
    with open(os.path.join(copy, "solve", "U.bin"), "r+b") as fh:
        fh.seek(-8, os.SEEK_END)
        fh.write(b"\x00\x01\x02\x03\x04\x05\x06\x07")
    assert cli.main(["verify", copy]) == 5


def test_verify_unprojected_field(smoke_run, tmp_path, capsys):
    _, out = smoke_run
    copy = str(tmp_path / "unproj")
    shutil.copytree(out, copy)
    path = os.path.join(copy, "solve", "U.bin")
    box, U, header = sc.load_snapshot(path)
    g = np.exp(-np.sum(box.coords**2, axis=0) / 2.0)
    U = U + sc.gradient(box, g)
    sc.save_snapshot(path, box, U, header.get("s", 0.0))
    art = cli.Artifact.open(copy)
    art.register("solve/U.bin")
    art.save()
    code = cli.main(["verify", copy])
    assert code != 0
    assert "FAIL divergence" in capsys.readouterr().out


def test_stationary_mode_needs_homogeneous_data(tmp_path):
    text = SMOKE.replace("[data]", '[data]\nvelocity = "annulus-bump"') + '[solver]\nmode = "stationary"\n'
    cfg = write_cfg(tmp_path / "c.toml", text)
    assert cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_alpha_unreachable(tmp_path, capsys):
    text = SMOKE.replace("R0 = 4.0", "alpha = 0.01")
    cfg = write_cfg(tmp_path / "c.toml", text)
    assert cli.main(["revise", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "enlarge the box half-width L" in capsys.readouterr().err


def test_reconstruct_command(smoke_run, tmp_path):
    _, out = smoke_run
    csv = str(tmp_path / "r.csv")
    assert cli.main(["reconstruct", out, "--t", "2.0", "--points", "0,0,0;0.5,0.2,-0.1",
                     "--csv", csv]) == 0
    rows = open(csv).read().splitlines()
    assert rows[0].startswith("x1,x2,x3,t") and len(rows) == 3
    assert cli.main(["reconstruct", out, "--points", "1,2"]) == 2
    assert cli.main(["reconstruct", out, "--t", "1.0", "--points", "7.9,0,0"]) == 2


def test_report_command(smoke_run):
    _, out = smoke_run
    assert cli.main(["report", out]) == 0
    rep = read_json(os.path.join(out, "reports", "report.json"))
    assert rep


def test_profile_certificate_inverse_radius(tmp_path):
    text = SMOKE.replace("L = 8.0\nN = 16", "L = 16.0\nN = 32").replace("n_s = 4", "n_s = 16")
    cfg = write_cfg(tmp_path / "c.toml", text)
    out = str(tmp_path / "o")
    assert cli.main(["profile", "--config", cfg, "--out", out]) == 0
    cert = read_json(os.path.join(out, "profiles", "certificates.json"))
    # measured about 4e-4 at this resolution
    assert cert["Theta0"]["L_residual_ratio"] <= 1e-3


@pytest.mark.xfail(strict=True, reason="spatial resolution at N=32 limits the residual to ~4e-4")
def test_profile_certificate_meets_1e6(tmp_path):
    text = SMOKE.replace("L = 8.0\nN = 16", "L = 16.0\nN = 32").replace("n_s = 4", "n_s = 16")
    cfg = write_cfg(tmp_path / "c.toml", text)
    out = str(tmp_path / "o")
    assert cli.main(["profile", "--config", cfg, "--out", out]) == 0
    cert = read_json(os.path.join(out, "profiles", "certificates.json"))
    assert cert["Theta0"]["L_residual_ratio"] <= 1e-6


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("bench") / "run")
    code = cli.main(["solve", "--config", os.path.join(ROOT, "configs", "benchmark.toml"),
                     "--out", out])
    return code, out


@pytest.mark.slow
def test_benchmark_end_to_end(benchmark_run):
    code, out = benchmark_run
    assert code == 0
    rep = read_json(os.path.join(out, "reports", "verification.json"))
    assert all(rep["hard"].values())
    sm = read_json(os.path.join(out, "solve", "solve_manifest.json"))
    assert sm["converged"] and sm["relative_residual"] <= 1e-8
    assert cli.main(["verify", out, "--no-quarter-power"]) == 0


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="local energy monitor stays near -1e-2 at N=32")
def test_benchmark_monitors_green(benchmark_run):
    _, out = benchmark_run
    rep = read_json(os.path.join(out, "reports", "verification.json"))
    assert all(rep["monitors"].values())
