import json
import textwrap

from kinsde.cli import main


def write(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return str(path)


OU_WEAK = """
[experiment]
drift = "ou:gamma=1.0"
z0_x = [0.5]
z0_v = [0.5]
n_set = [4, 8, 16]
reference = "exact_ou"
sample_count = 20000
seed = 7
functionals = ["cos:alpha=1,beta=1"]

[verdict]
max_slope = -0.45
max_stderr_slope = 0.5
"""


def test_sample_zero_drift_deterministic(tmp_path):
    cfg = write(tmp_path, "sample.toml", """
    [experiment]
    drift = "zero"
    seed = 3

    [sample]
    scheme = "tamed"
    n = 8
    paths = 100
    """)
    out1 = tmp_path / "o1"
    out2 = tmp_path / "o2"
    assert main(["sample", cfg, "--out-dir", str(out1)]) == 0
    assert main(["sample", cfg, "--out-dir", str(out2)]) == 0
    rows = (out1 / "samples.csv").read_text().splitlines()
    assert rows[0] == "path_id,x0,v0"
    assert len(rows) == 101
    assert (out1 / "samples.csv").read_bytes() == \
        (out2 / "samples.csv").read_bytes()
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["outputs"] == ["samples.csv"]
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert manifest["config_hash"] == m2["config_hash"]


def test_sample_rejects_kappa_above_half(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml", """
    [experiment]
    drift = "powerlaw:A=1,beta=0.25"

    [taming]
    kind = "cutoff"
    kappa = 0.6

    [sample]
    n = 8
    paths = 10
    """)
    code = main(["sample", cfg, "--out-dir", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "kappa" in err and "1/2" in err


def test_unknown_config_key_is_hard_error(tmp_path, capsys):
    cfg = write(tmp_path, "typo.toml", """
    [experiment]
    drift = "zero"
    smaple_count = 1000

    [sample]
    paths = 10
    """)
    assert main(["sample", cfg, "--out-dir", str(tmp_path / "o")]) == 2
    assert "smaple_count" in capsys.readouterr().err


def test_weak_rate_ou_pass_and_reproducible(tmp_path, capsys):
    cfg = write(tmp_path, "weak.toml", OU_WEAK)
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    assert main(["weak-rate", cfg, "--out-dir", str(out1)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["weak-rate", cfg, "--out-dir", str(out2),
                 "--threads", "2"]) == 0
    for name in ("weak_rate_results.csv", "weak_rate_summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    rows = (out1 / "weak_rate_results.csv").read_text().splitlines()
    assert rows[0] == "n,error,stderr,metric,functional_id"
    assert all(r.endswith("functional,cos:alpha=1,beta=1")
               for r in rows[1:])


def test_weak_rate_fail_verdict_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "strict.toml", OU_WEAK.replace(
        "max_slope = -0.45", "max_slope = -5.0"))
    out = tmp_path / "fail"
    code = main(["weak-rate", cfg, "--out-dir", str(out), "--format",
                 "json"])
    assert code == 4
    assert "FAIL" in capsys.readouterr().out
    # json format suppresses the CSV table
    assert not (out / "weak_rate_results.csv").exists()
    assert (out / "weak_rate_summary.json").exists()


def test_weak_rate_rejects_exact_ou_with_sign_drift(tmp_path, capsys):
    cfg = write(tmp_path, "bad_ref.toml", """
    [experiment]
    drift = "signv:A=1.0"
    n_set = [4, 8]
    reference = "exact_ou"
    sample_count = 2000
    """)
    assert main(["weak-rate", cfg, "--out-dir", str(tmp_path / "o")]) == 2
    assert "OU" in capsys.readouterr().err


def test_density_rejects_dimension_three(tmp_path, capsys):
    cfg = write(tmp_path, "d3.toml", """
    [experiment]
    drift = "ou:gamma=1.0"
    z0_x = [0.0, 0.0, 0.0]
    z0_v = [0.0, 0.0, 0.0]
    n_set = [4, 8]
    reference = "exact_ou"
    sample_count = 2000
    """)
    assert main(["density", cfg, "--out-dir", str(tmp_path / "o")]) == 2
    assert "d <= 2" in capsys.readouterr().err


def test_kernel_check_passes(tmp_path, capsys):
    out = tmp_path / "kc"
    assert main(["kernel-check", "--out-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 4 and "FAIL" not in text
    summary = json.loads((out / "kernel_check_summary.json").read_text())
    assert summary["all_passed"] is True


def test_besov_rate_exact_taming_path(tmp_path, capsys):
    cfg = write(tmp_path, "besov.toml", """
    [experiment]
    drift = "signv:A=1.0"

    [taming]
    kind = "cutoff"
    kappa = 0.25
    c2 = 2.0

    [besov]
    resolution = [128, 128]
    extent = [1.5, 1.5]
    levels = 5
    n_set = [2, 4, 8, 16]
    """)
    assert main(["besov-rate", cfg, "--out-dir", str(tmp_path / "o")]) == 0
    assert "exact" in capsys.readouterr().out


def test_taming_check_command(tmp_path, capsys):
    cfg = write(tmp_path, "growth.toml", """
    [experiment]
    drift = "powerlaw:A=1,beta=0.25"
    seed = 5

    [taming]
    kind = "cutoff"
    kappa = 0.25
    zeta = 0.25

    [growth]
    n_set = [4, 16, 64, 256]
    budget = 512
    """)
    assert main(["taming-check", cfg, "--out-dir", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    summary = json.loads(
        (tmp_path / "o" / "taming_check_summary.json").read_text())
    assert abs(summary["growth_exponent"] - 0.25) < 0.05


def test_out_dir_env_override(tmp_path, monkeypatch):
    cfg = write(tmp_path, "sample.toml", """
    [experiment]
    drift = "zero"

    [sample]
    paths = 5
    """)
    target = tmp_path / "env-out"
    monkeypatch.setenv("KINSDE_OUT_DIR", str(target))
    assert main(["sample", cfg]) == 0
    assert (target / "samples.csv").exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["weak-rate", str(tmp_path / "nope.toml")]) == 2
    assert "not found" in capsys.readouterr().err
