import json

import pytest

from invlab import __version__
from invlab.bench import REPORT_FIELDS, read_report
from invlab.cli import build_id, main, sci, split_overrides
from invlab.config import DEFAULTS, load_config

SMALL = {"suite": {"n": 2, "replicates": 1},
         "methods": [{"method": "ddim"}, {"method": "direct"}],
         "edit": {"target_modes": ["none", "target_offset"]}}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(dict(SMALL, output={"path": str(tmp_path / "out.csv"), "format": "csv"})))
    return p


def test_sci():
    assert sci(0.0) == "0.0e0" and sci(-3e-11) == "0.0e0"
    assert sci(1.5e-3) == "1.5000e-03"


def test_invert_direct_prints_exact_zero(cfg_path, capsys):
    assert main(["invert", str(cfg_path), "r0-s000-translate_blob"]) == 0
    out = capsys.readouterr().out.splitlines()
    direct = [line for line in out if "method=direct" in line]
    assert direct and "mse_all=0.0e0" in direct[0]
    assert any("method=ddim" in line and "mse_all=0.0e0" not in line for line in out)


def test_config_errors_exit_2(tmp_path, cfg_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["invert", str(bad), "r0-s000-translate_blob"]) == 2
    assert main(["invert", str(tmp_path / "nope.json"), "x"]) == 2
    assert main(["edit", str(tmp_path / "nope.json"), "x"]) == 2
    capsys.readouterr()
    assert main(["invert", str(cfg_path), "r9-s999-nothing"]) == 2
    assert "r9-s999-nothing" in capsys.readouterr().err
    assert main(["invert", str(cfg_path), "r0-s000-translate_blob", "--edit.rhoo", "1"]) == 2
    assert "edit.rhoo" in capsys.readouterr().err
    assert main(["bench", str(cfg_path), "--suite.K", "1"]) == 2
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"suite": {"colour": 1}}))
    assert main(["bench", str(unknown)]) == 2
    assert "suite.colour" in capsys.readouterr().err


def test_runtime_error_exit_3(cfg_path, tmp_path, capsys):
    assert main(["bench", str(cfg_path), "--workers", "1", "--output", str(tmp_path / "no" / "dir.csv")]) == 3
    assert "dir.csv" in capsys.readouterr().err


def test_edit_rows_and_overrides(cfg_path, capsys):
    assert main(["edit", str(cfg_path), "r0-s001-recolor_blob", "--edit.rho", "0.8"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 3
    assert all("rho=0.8" in line for line in out)
    fid = {line.split("target_mode=")[1].split()[0]: float(line.split("fidelity_region=")[1].split()[0])
           for line in out if "method=direct" in line}
    assert fid["target_offset"] < fid["none"]


@pytest.mark.parametrize("flags", [
    # full injection makes the target retrace the source branch
    ["--edit.rho=1", "--edit.tau_fraction=0", '--edit.target_modes=["none"]'],
    # no injection: the target's own offset returns it to the inversion path
    ["--edit.rho=0", '--methods=[{"method": "direct", "target_mode": "target_offset"}]'],
])
def test_same_prompt_fidelity_matches_reconstruction(cfg_path, capsys, flags):
    assert main(["edit", str(cfg_path), "r0-s000-translate_blob", "--same-prompt"] + flags) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines
    for row, recon in zip(lines[::2], lines[1::2]):
        a = row.split("fidelity_region=")[1].split()[0]
        assert recon.strip() == f"reconstruction fidelity_region={a}"


def test_bench_and_report(cfg_path, tmp_path, capsys):
    assert main(["bench", str(cfg_path), "--workers", "1"]) == 0
    out = capsys.readouterr().out
    assert "wrote 6 rows (0 failed)" in out and build_id() in out
    rows = read_report(tmp_path / "out.csv")
    assert len(rows) == 6 and all(r["version"] == __version__ for r in rows)
    assert main(["report", str(tmp_path / "out.csv")]) == 0
    assert "recon_mse" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "none.csv")]) == 2
    assert main(["bench", str(cfg_path), "--workers", "1", "--format", "json",
                 "--output", str(tmp_path / "o.json")]) == 0
    assert len(json.loads((tmp_path / "o.json").read_text())) == 6


def test_version(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["--version"])
    assert ei.value.code == 0
    assert capsys.readouterr().out.strip() == build_id()


def test_split_overrides():
    assert split_overrides(["--edit.rho", "0.5", "--methods.0.method=direct"]) == [
        ("edit.rho", 0.5), ("methods.0.method", "direct")]
    from invlab import ConfigError
    with pytest.raises(ConfigError):
        split_overrides(["--edit.rho"])
    with pytest.raises(ConfigError):
        split_overrides(["stray"])


def test_seed_env_and_defaults(tmp_path):
    cfg = load_config(None, env={"INVLAB_SEED": "42"})
    assert cfg.raw["suite"]["master_seed"] == 42
    assert cfg.suite()[0].seed != load_config(None, env={}).suite()[0].seed
    from invlab import ConfigError
    with pytest.raises(ConfigError):
        load_config(None, env={"INVLAB_SEED": "x"})
    base = load_config(None, env={})
    assert len(base.run_specs()) == 6
    assert len(base.suite()) == 64
    assert base.raw["suite"] == DEFAULTS["suite"]


def test_shipped_configs_validate():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    counts = {p.name: len(load_config(p, env={}).run_specs()) for p in sorted(root.glob("*.json"))}
    assert counts["default.json"] == 6
    assert counts["guidance_grid.json"] == 40


def test_report_header_constant():
    assert REPORT_FIELDS[:11] == ("scenario_id", "seed", "method", "w_inv", "w_fwd", "opt_iters", "scale",
                                  "interval", "target_mode", "rho", "tau")
