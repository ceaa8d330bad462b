import subprocess
import sys

import pytest

from condopt import cli, output
from condopt.problems import builtin, spec_to_text


def test_defaults():
    cfg = cli.parse_config(["optimize"], environ={})
    assert cfg.beta0 == 0.75 and cfg.mu0 == 1.5
    assert cfg.problem == "1" and cfg.resolution is None
    assert cfg.problem_spec().resolution == 100
    assert cfg.loop_cap == 500 and cfg.relax_cap == 2000 and cfg.threads == 1


def test_flags_select_problem():
    cfg = cli.parse_config(["solve", "--problem", "1", "--resolution", "100"], environ={})
    spec = cfg.problem_spec()
    assert spec == builtin(1, resolution=100)


def test_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("beta0 = 0.5\nmu0 = 1.2\nseed = 4\n")
    env = {"CONDOPT_MU0": "1.9", "CONDOPT_SEED": "5"}
    cfg = cli.parse_config(["optimize", "--config", str(conf), "--seed", "6"], environ=env)
    assert cfg.beta0 == 0.5  # file
    assert cfg.mu0 == 1.9  # environment beats file
    assert cfg.seed == 6  # flag beats both


def test_config_from_environment(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("loop-cap = 7\n")
    cfg = cli.parse_config(["optimize"], environ={"CONDOPT_CONFIG": str(conf)})
    assert cfg.loop_cap == 7


@pytest.mark.parametrize("argv,env,key", [
    (["solve", "--resolution", "0"], {}, "resolution"),
    (["solve", "--h-ratio", "abc"], {}, "h_ratio"),
    (["solve", "--steady-method", "magic"], {}, "steady_method"),
    (["solve"], {"CONDOPT_THREADS": "0"}, "threads"),
    (["solve"], {"CONDOPT_NOT_A_FLAG": "1"}, "not_a_flag"),
])
def test_errors_name_the_key(argv, env, key):
    with pytest.raises(cli.ConfigError, match=key):
        cli.parse_config(argv, environ=env)


def test_unknown_file_key(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("beta = 1\n")
    with pytest.raises(cli.ConfigError, match="beta"):
        cli.parse_config(["optimize", "--config", str(conf)], environ={})


def test_bad_problem_reference():
    with pytest.raises(cli.ConfigError, match="problem"):
        cli.parse_config(["solve", "--problem", "9"], environ={}).problem_spec()
    with pytest.raises(cli.ConfigError, match="problem"):
        cli.parse_config(["solve", "--problem", "/nonexistent/p.txt"], environ={}).problem_spec()


def test_main_exit_codes(tmp_path, monkeypatch, capsys):
    for var in [v for v in list(__import__("os").environ) if v.startswith("CONDOPT_")]:
        monkeypatch.delenv(var)
    assert cli.main(["solve", "--resolution", "0"]) == cli.EXIT_CONFIG
    assert "resolution" in capsys.readouterr().err

    out = tmp_path / "solve"
    code = cli.main(["solve", "--resolution", "16", "--steady-method", "direct", "--output-dir", str(out)])
    assert code == cli.EXIT_OK
    assert (out / "fields.csv").exists() and (out / "summary.txt").exists()
    assert not (out / "history.csv").exists()

    out = tmp_path / "opt"
    code = cli.main(["optimize", "--resolution", "12", "--steady-method", "direct", "--loop-cap", "3",
                     "--output-dir", str(out)])
    assert code == cli.EXIT_NOT_CONVERGED
    assert len(output.read_history(out / "history.csv")) == 3
    summary = output.read_summary(out / "summary.txt")
    assert summary["loops"] == "3" and summary["converged"] == "False"
    assert len(output.read_fields(out / "fields.csv")["x"]) == (12 + 8) ** 2


def test_zero_target_reports_no_reduction(tmp_path):
    out = tmp_path / "zero"
    code = cli.main(["optimize", "--resolution", "12", "--steady-method", "direct", "--beta0", "0",
                     "--output-dir", str(out)])
    assert code == cli.EXIT_OK
    summary = output.read_summary(out / "summary.txt")
    assert summary["reduction_percent"] == "0.00" and summary["loops"] == "0"
    assert output.read_history(out / "history.csv") == []


def test_problem_file(tmp_path):
    path = tmp_path / "plate.txt"
    path.write_text(spec_to_text(builtin(3, resolution=14)))
    cfg = cli.parse_config(["solve", "--problem", str(path)], environ={})
    assert cfg.problem_spec() == builtin(3, resolution=14)
    cfg = cli.parse_config(["solve", "--problem", str(path), "--resolution", "20"], environ={})
    assert cfg.problem_spec().resolution == 20


def test_console_entry_point(tmp_path):
    out = tmp_path / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "condopt.cli", "solve", "--resolution", "10", "--steady-method", "direct",
         "--output-dir", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "average T" in proc.stdout


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        cli.parse_config(["--help"], environ={})
    text = capsys.readouterr().out
    for opt in cli.OPTIONS:
        assert "--" + opt.name.replace("_", "-") in text
