"""
配置解析与命令行的测试：校验信息、假设警告、退出码、结果文件与确定性。
"""

from pathlib import Path

import pytest

from gpcplast.cli import EXIT_AUDIT, EXIT_FAILURE, EXIT_OK, main
from gpcplast.config_io import (
    HypothesisWarning,
    demo_config,
    dump_config,
    parse_config_text,
)
from gpcplast.errors import ConfigParseError, ConfigValidationError
from gpcplast.models import RunConfig
from gpcplast.output import LEDGER_COLUMNS, field_steps


def _write(tmp_path: Path, cfg: RunConfig, name: str = "run.toml") -> Path:
    path = tmp_path / name
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


# ── 配置 ─────────────────────────────────────────────────────────────────


def test_demo_config_parses():
    cfg = parse_config_text(demo_config())
    assert cfg.mesh.nx == cfg.mesh.ny == 8
    assert cfg.loading.steps == 20
    assert cfg.material.kappa == 0.05


def test_shipped_demo_file_matches_builtin():
    shipped = Path(__file__).resolve().parent.parent / "configs" / "demo.toml"
    assert shipped.read_text(encoding="utf-8") == demo_config()


def test_echo_round_trip(small_cfg):
    assert parse_config_text(dump_config(small_cfg)) == small_cfg


def test_omitted_keys_take_defaults():
    cfg = parse_config_text("[mesh]\nnx = 3\n")
    assert cfg.mesh.nx == 3
    assert cfg.material == RunConfig().material


def test_negative_kappa_names_field_and_line():
    text = demo_config().replace("kappa = 0.05", "kappa = -1.0")
    line = text.splitlines().index("kappa = -1.0") + 1
    with pytest.raises(ConfigValidationError) as exc_info:
        parse_config_text(text)
    assert "material.kappa must be > 0" in exc_info.value.message
    assert f"(line {line})" in exc_info.value.message
    assert exc_info.value.data["line"] == line


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigValidationError, match="is not a recognised key"):
        parse_config_text("[solver]\nmax_outr = 3\n")


def test_tau_must_match_steps():
    with pytest.raises(ConfigValidationError, match="tau"):
        parse_config_text("[loading]\nT = 1.0\nsteps = 20\n[solver]\ntau = 0.1\n")


def test_small_beta_warns_but_parses():
    with pytest.warns(HypothesisWarning, match="β>n required by growth") as caught:
        cfg = parse_config_text("[material]\nbeta = 1.5\n")
    assert cfg.material.beta == 1.5
    assert "β>n required by growth (beta=1.5, n=2)" in [str(w.message) for w in caught]


def test_syntax_error_reports_line():
    with pytest.raises(ConfigParseError) as exc_info:
        parse_config_text("[mesh]\nnx = \n")
    assert exc_info.value.data["line"] == 2


def test_field_steps_always_include_last():
    assert field_steps(20, 10) == [0, 10, 20]
    assert field_steps(7, 3) == [0, 3, 6, 7]


# ── 子命令 ───────────────────────────────────────────────────────────────


def test_demo_command(capsys):
    assert main(["demo"]) == EXIT_OK
    assert capsys.readouterr().out == demo_config()


def test_check_command_echoes_effective_config(tmp_path, capsys, small_cfg):
    assert main(["check", str(_write(tmp_path, small_cfg))]) == EXIT_OK
    assert parse_config_text(capsys.readouterr().out) == small_cfg


def test_check_command_reports_invalid_config(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[material]\nkappa = -1\n", encoding="utf-8")
    assert main(["check", str(path)]) == EXIT_FAILURE
    assert "material.kappa must be > 0 (line 2)" in capsys.readouterr().err


def test_constraint_bound_printed_as_written():
    with pytest.raises(ConfigValidationError) as exc_info:
        parse_config_text("[material]\nc_H = -1\n")
    assert exc_info.value.message == "material.c_H must be >= 0 (line 2)"


def test_three_dimensional_slip_rejected_at_check(tmp_path, capsys):
    path = tmp_path / "slip3.toml"
    path.write_text(
        "[material]\nslip_direction = [1.0, 0.0, 0.0]\nslip_normal = [0.0, 1.0, 0.0]\n",
        encoding="utf-8",
    )
    assert main(["check", str(path)]) == EXIT_FAILURE
    err = capsys.readouterr().err
    assert "material.slip_direction: must have 2 components, got 3 (line 2)" in err
    assert "material.slip_normal: must have 2 components, got 3 (line 3)" in err


def test_unexpected_solver_exception_exits_with_failure(tmp_path, capsys, monkeypatch, small_cfg):
    def broken(cfg):
        raise ValueError("boom")

    monkeypatch.setattr("gpcplast.cli.run_evolution", broken)
    assert main(["run", str(_write(tmp_path, small_cfg))]) == EXIT_FAILURE
    assert "error: boom" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, small_cfg):
    out = tmp_path / "result"
    assert main(["run", str(_write(tmp_path, small_cfg)), "--out", str(out)]) == EXIT_OK

    ledger = (out / "ledger.csv").read_text().splitlines()
    assert ledger[0] == ",".join(LEDGER_COLUMNS)
    assert len(ledger) == 1 + small_cfg.loading.steps + 1
    for k in (0, 2, 4):
        header = (out / f"fields_{k}.csv").read_text().splitlines()[0]
        assert header == "node_id,x,y,u_x,u_y,gamma"
    assert not (out / "fields_1.csv").exists()
    for name in ("audit.txt", "audit.csv", "config.echo", "trajectory.npz"):
        assert (out / name).exists()
    assert parse_config_text((out / "config.echo").read_text()) == small_cfg


def test_run_is_deterministic(tmp_path, small_cfg):
    path = _write(tmp_path, small_cfg)
    assert main(["run", str(path), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", str(path), "--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "ledger.csv").read_bytes() == (tmp_path / "b" / "ledger.csv").read_bytes()


def test_inverted_mesh_exits_with_failure(tmp_path, capsys, small_cfg):
    cfg = small_cfg.model_copy(update={"mesh": small_cfg.mesh.model_copy(update={"Lx": -1.0})})
    assert main(["run", str(_write(tmp_path, cfg))]) == EXIT_FAILURE
    assert "error [" in capsys.readouterr().err


def test_strict_run_fails_on_stability_violation(tmp_path, small_cfg):
    cfg = small_cfg.model_copy(
        update={
            "solver": small_cfg.solver.model_copy(
                update={"max_inner": 1, "max_outer": 1, "polish": False, "direction": "steepest"}
            ),
            "audit": small_cfg.audit.model_copy(update={"n_samples": 60, "radius": 1e-4}),
        }
    )
    path = _write(tmp_path, cfg)
    assert main(["run", str(path), "--out", str(tmp_path / "lax")]) == EXIT_OK
    assert main(["run", str(path), "--strict", "--out", str(tmp_path / "strict")]) == EXIT_AUDIT
    assert "[FAIL] stability" in (tmp_path / "strict" / "audit.txt").read_text()


def test_audit_command_reaudits_saved_run(tmp_path, capsys, small_cfg):
    out = tmp_path / "saved"
    assert main(["run", str(_write(tmp_path, small_cfg)), "--out", str(out)]) == EXIT_OK
    (out / "audit.txt").unlink()
    capsys.readouterr()
    assert main(["audit", str(out), "--strict"]) == EXIT_OK
    assert "overall: PASS" in capsys.readouterr().out
    assert (out / "audit.txt").exists()


def test_audit_command_missing_directory(tmp_path):
    assert main(["audit", str(tmp_path / "nowhere")]) == EXIT_FAILURE


@pytest.mark.slow
def test_demo_run_end_to_end(tmp_path):
    demo = tmp_path / "demo.toml"
    demo.write_text(demo_config(), encoding="utf-8")
    out = tmp_path / "demo"
    assert main(["run", str(demo), "--strict", "--out", str(out)]) == EXIT_OK
    assert len((out / "ledger.csv").read_text().splitlines()) == 22
    assert sorted(p.name for p in out.glob("fields_*.csv")) == [
        "fields_0.csv",
        "fields_10.csv",
        "fields_20.csv",
    ]
