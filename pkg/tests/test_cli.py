"""End-to-end exercises of the command-line surface.

Each test drives ``nslocal.cli.main`` in-process, which is the same code
path the console script runs, and checks the exit-code contract: 0 all
checks passed, 1 a check failed, 2 usage or input error, 3 runtime
abort.
"""

import json
import math

import numpy as np
import pytest

from nslocal.cli import main
from nslocal.cover import read_cover
from nslocal.fields import GridField, read_field, write_field


def run_cli(*argv):
    return main([str(a) for a in argv])


def make_mode_field(N=16, L=4.0, m=2, amp=1.0):
    """Single shear mode (amp sin(k y), 0, 0): divergence-free, exact
    heat decay rate k^2."""
    k = math.pi * m / L
    ax = -L + (np.arange(N) + 0.5) * (2.0 * L / N)
    data = np.zeros((3, N, N, N))
    data[0] = amp * np.sin(k * ax)[None, :, None]
    return GridField(L, data), k


def write_config(path, **kw):
    cfg = {"N": 16, "L": 4.0, "dt": 0.05, "t_end": 0.2, "mode": "navier_stokes"}
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def zero_run(tmp_path_factory):
    """A short all-zero run on a grid fine enough for cutoff checks."""
    root = tmp_path_factory.mktemp("zero_run")
    cfg = write_config(root / "config.json", N=64, L=8.0, dt=0.1, t_end=0.3)
    out = root / "run"
    assert run_cli("solve", "--config", cfg, "--init", "zero", "--out-dir", out) == 0
    return out


# ---------------------------------------------------------------------------
# cover


def test_cover_counts_and_exit(tmp_path, capsys):
    out = tmp_path / "cover.bin"
    assert run_cli("cover", "--n-max", 1, "--out", out) == 0
    assert len(read_cover(out).cubes) == 120
    manifest = json.loads((tmp_path / "cover.bin.manifest.json").read_text())
    assert manifest["outputs"].keys() == {"cover.bin"}
    assert manifest["exit_code"] == 0

    refined = tmp_path / "c2.bin"
    assert run_cli("cover", "--n-max", 3, "--refine", 2, "--out", refined) == 0
    assert len(read_cover(refined).cubes) == 113

    capsys.readouterr()
    assert run_cli("cover", "--n-max", 2, "--verify", "--out", out) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert report["shell_sizes"] == {"0": 64, "1": 56, "2": 56}


def test_cover_rejects_empty_size(tmp_path):
    assert run_cli("cover", "--n-max", 0, "--out", tmp_path / "x.bin") == 2


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli("cover", "--n-max", 1, "--bogus", "--out", tmp_path / "x.bin")
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# norm


def test_norm_zero_field(tmp_path):
    field = tmp_path / "zero.nswf"
    write_field(GridField(4.0, np.zeros((3, 16, 16, 16))), field)
    report = tmp_path / "norm.json"
    assert run_cli("norm", "--field", field, "--family", "cover", "--n", 1,
                   "--report", report) == 0
    assert json.loads(report.read_text())["value"] == 0.0


def test_norm_equivalence_decays_on_self_similar_field(tmp_path):
    from nslocal.generators import GeneratorSpec, generate

    field = tmp_path / "dss.nswf"
    write_field(generate(GeneratorSpec("dss", lam=2.0, seed=3), 32.0, 128), field)
    report = tmp_path / "eq.json"
    assert run_cli("norm", "--field", field, "--family", "equivalence", "--n", 4,
                   "--report", report) == 0
    payload = json.loads(report.read_text())
    cn = payload["report"]["cn_values"]
    # half-power scaling: levels 2..4 drop by ~sqrt(2) per level
    assert len(cn) == 4 and cn[3] < 0.8 * cn[1]


def test_norm_missing_field_file(tmp_path):
    assert run_cli("norm", "--field", tmp_path / "nope.nswf",
                   "--report", tmp_path / "r.json") == 2


# ---------------------------------------------------------------------------
# solve


def test_solve_zero_series(zero_run):
    for step in (0, 3):
        u = read_field(zero_run / f"u_{step:06d}.nswf")
        assert not u.data.any()
    manifest = json.loads((zero_run / "manifest.json").read_text())
    assert "monitor.csv" in manifest["outputs"]
    assert "run.json" in manifest["outputs"]
    assert manifest["config_digest"]


def test_solve_stokes_matches_heat_decay(tmp_path):
    u0, k = make_mode_field()
    init = tmp_path / "mode.nswf"
    write_field(u0, init)
    cfg = write_config(tmp_path / "config.json")
    out = tmp_path / "run"
    assert run_cli("solve", "--config", cfg, "--init", init,
                   "--mode", "stokes_heat", "--out-dir", out) == 0
    final = read_field(out / "u_000004.nswf")
    expected = u0.data * math.exp(-k**2 * 0.2)
    assert np.abs(final.data - expected).max() < 1e-12
    manifest = json.loads((out / "manifest.json").read_text())
    assert str(init) in manifest["inputs"]
    assert manifest["constants"]["mode"] == "stokes_heat"


def test_solve_cfl_violation_aborts(tmp_path):
    cfg = write_config(tmp_path / "config.json")
    code = run_cli("solve", "--config", cfg,
                   "--init", "gen:gaussian_vortex,amplitude=1e6",
                   "--out-dir", tmp_path / "run")
    assert code == 3


def test_solve_bad_config_key(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"N": 16, "L": 4.0, "dt": 0.05, "t_end": 0.2,
                               "viscosity": 2.0}))
    assert run_cli("solve", "--config", cfg, "--init", "zero",
                   "--out-dir", tmp_path / "run") == 2


# ---------------------------------------------------------------------------
# diagnose


def test_diagnose_zero_run_all_pass(zero_run, tmp_path):
    report = tmp_path / "diag.json"
    assert run_cli("diagnose", "--run-dir", zero_run, "--report", report) == 0
    payload = json.loads(report.read_text())
    assert payload["passed"] is True
    assert set(payload["checks"]) == {"lei", "pressure", "cubic", "apriori"}
    for entry in payload["checks"].values():
        assert entry["passed"] is True
    manifest = json.loads((tmp_path / "diag.json.manifest.json").read_text())
    assert manifest["constants"]["c0"] > 0
    assert manifest["constants"]["lei_tol"] >= 0


def test_diagnose_truncated_run_rejects_horizon(zero_run, tmp_path):
    code = run_cli("diagnose", "--run-dir", zero_run, "--checks", "apriori",
                   "--t", 10.0, "--report", tmp_path / "d.json")
    assert code == 2


def test_diagnose_unknown_check(zero_run, tmp_path):
    assert run_cli("diagnose", "--run-dir", zero_run, "--checks", "lei,entropy",
                   "--report", tmp_path / "d.json") == 2


def test_diagnose_missing_run_dir(tmp_path):
    assert run_cli("diagnose", "--run-dir", tmp_path / "ghost",
                   "--report", tmp_path / "d.json") == 2


# ---------------------------------------------------------------------------
# regularity


def test_regularity_zero_run_full_coverage(zero_run, tmp_path):
    out = tmp_path / "reg"
    assert run_cli("regularity", "--run-dir", zero_run, "--out", out) == 0
    summary = json.loads((out / "summary_eps0.05.json").read_text())
    assert summary["sigma_sq"] == 0.8
    assert summary["cylinders"] == summary["passed"] > 0
    mask_lines = (out / "mask_eps0.05.csv").read_text().strip().splitlines()
    assert mask_lines[0] == "x,y,z,t,pass"
    assert all(line.endswith(",1") for line in mask_lines[1:])
    assert (out / "slice_eps0.05.ppm").read_bytes().startswith(b"P6")


def test_regularity_sweep_emits_one_mask_per_threshold(zero_run, tmp_path):
    out = tmp_path / "sweep"
    assert run_cli("regularity", "--run-dir", zero_run, "--sweep", "0.02,0.1",
                   "--out", out) == 0
    for tag in ("eps0.02", "eps0.1"):
        assert (out / f"mask_{tag}.csv").exists()
        assert (out / f"summary_{tag}.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["outputs"]) == 6
    assert manifest["constants"]["eps_star"] == [0.02, 0.1]
    assert manifest["constants"]["delta"] == 1.0


# ---------------------------------------------------------------------------
# rerun / reproducibility


def test_rerun_solve_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "config.json")
    first = tmp_path / "a"
    assert run_cli("solve", "--config", cfg,
                   "--init", "gen:gaussian_vortex,seed=3,amplitude=0.5",
                   "--out-dir", first) == 0
    second = tmp_path / "b"
    assert run_cli("rerun", "--manifest", first / "manifest.json",
                   "--out-dir", second) == 0
    for name in ("u_000000.nswf", "u_000004.nswf", "monitor.csv", "run.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_rerun_detects_tampered_output(tmp_path):
    out = tmp_path / "cover.bin"
    assert run_cli("cover", "--n-max", 1, "--out", out) == 0
    manifest_path = tmp_path / "cover.bin.manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["outputs"]["cover.bin"] = "0" * 64
    manifest_path.write_text(json.dumps(manifest))
    assert run_cli("rerun", "--manifest", manifest_path,
                   "--out-dir", tmp_path / "replay") == 1


def test_rerun_rejects_foreign_json(tmp_path):
    bogus = tmp_path / "m.json"
    bogus.write_text(json.dumps({"format": "something-else"}))
    assert run_cli("rerun", "--manifest", bogus, "--out-dir", tmp_path / "o") == 2
