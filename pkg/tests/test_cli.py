from __future__ import annotations

import pytest

from parisian_knockin.cli import (EXIT_ENGINE, EXIT_OK, EXIT_TOLERANCE, EXIT_VALIDATION,
                                  main)
from parisian_knockin.config import DEFAULT_CONFIG_TEXT, ConfigError, parse_config

FAST_ENGINE = """
[engine]
pde_n_x = 201
pde_n_J = 10
mc_paths = 2000
mc_steps_per_year = 2000
seed = 5
bias_ladder = 500, 1000, 2000
"""


def write_config(tmp_path, text: str, name: str = "run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def fast_config(state: str | None = None) -> str:
    head, _, _ = DEFAULT_CONFIG_TEXT.partition("[engine]")
    if state is not None:
        head = head.partition("[state]")[0] + f"[state]\nt = 0.0\n{state}\n\n"
    return head + FAST_ENGINE


def test_default_config_parses():
    cfg = parse_config(DEFAULT_CONFIG_TEXT)
    assert cfg.contract.S_bar == 95.0 and cfg.S == (100.0,)
    assert cfg.engine.mc_paths == 200_000


@pytest.mark.parametrize("text, needle", [
    (DEFAULT_CONFIG_TEXT.replace("sigma = 0.2\n", ""), "sigma"),
    (DEFAULT_CONFIG_TEXT.replace("sigma = 0.2", "sigma = abc"), "sigma"),
    (DEFAULT_CONFIG_TEXT.replace("J = 0.0", "J = 0.5"), "J"),
    (DEFAULT_CONFIG_TEXT.replace("S = 100 ", "S = , "), "S"),
    (DEFAULT_CONFIG_TEXT + "\n[bogus]\na = 1\n", "bogus"),
    (DEFAULT_CONFIG_TEXT.replace("bias_ladder = 1250, 5000, 20000", "bias_ladder = 10"),
     "bias_ladder"),
])
def test_config_errors_name_the_field(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text, "run.ini")


def test_price_writes_csv(tmp_path, capsys):
    cfg = write_config(tmp_path, fast_config(state="S = 90, 100\nJ = 0, 0.02"))
    out = tmp_path / "p.csv"
    assert main(["price", "--config", cfg, "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 4
    assert "price=" in capsys.readouterr().out


def test_price_csv_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, fast_config())
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["price", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["price", "--config", cfg, "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_missing_field_is_validation_error(tmp_path, capsys):
    cfg = write_config(tmp_path, fast_config().replace("r = 0.05\n", ""))
    assert main(["price", "--config", cfg]) == EXIT_VALIDATION
    assert "'r'" in capsys.readouterr().err


def test_missing_file_is_validation_error(tmp_path):
    assert main(["price", "--config", str(tmp_path / "nope.ini")]) == EXIT_VALIDATION


def test_degenerate_contract_refused_unless_allowed(tmp_path, capsys):
    cfg = write_config(tmp_path, fast_config().replace("J_bar = 0.05", "J_bar = 1.5"))
    assert main(["price", "--config", cfg]) == EXIT_VALIDATION
    assert "allow-degenerate" in capsys.readouterr().out
    out = tmp_path / "d.csv"
    assert main(["price", "--config", cfg, "--allow-degenerate", "--out", str(out)]) == EXIT_OK
    assert ",0," in out.read_text().splitlines()[1]


def test_surface_and_dump_windows(tmp_path, capsys):
    cfg = write_config(tmp_path, fast_config(state="S = 80, 95, 110\nJ = 0"))
    assert main(["surface", "--config", cfg]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == "S,t,J,price,delta,region"
    out = tmp_path / "w.csv"
    assert main(["dump-windows", "--config", cfg, "--out", str(out)]) == EXIT_OK
    header = out.read_text().splitlines()[0]
    assert header == "window,tau,W,term1,term2,term3,term4,term5"


def test_verify_skips_and_passes(tmp_path, capsys):
    cfg = write_config(tmp_path, fast_config())
    out = tmp_path / "v.csv"
    assert main(["verify", "--config", cfg, "--skip-mc", "--out", str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()
    assert rows[0] == "engine,price,std_error,difference,tolerance,status"
    assert [r.split(",")[0] for r in rows[1:]] == ["pricer", "pde"]
    assert main(["verify", "--config", cfg, "--skip-pde", "--skip-mc"]) == EXIT_OK


def test_verify_reports_tolerance_breach(tmp_path):
    text = fast_config().replace("pde_n_x = 201\npde_n_J = 10",
                                 "pde_n_x = 41\npde_n_J = 2\npde_rel_tol = 1e-6")
    cfg = write_config(tmp_path, text)
    assert main(["verify", "--config", cfg, "--skip-mc"]) == EXIT_TOLERANCE


def test_bias_study_csv_reproducible(tmp_path):
    cfg = write_config(tmp_path, fast_config())
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["bias-study", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["bias-study", "--config", cfg, "--out", str(b), "--seed", "5"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 5


def test_engine_failure_exit_code(tmp_path, monkeypatch):
    import parisian_knockin.cli as cli

    def boom(*a, **k):
        raise RuntimeError("solver diverged")

    monkeypatch.setitem(cli.COMMANDS, "price", boom)
    assert main(["price"]) == EXIT_ENGINE


def test_bad_seed(tmp_path):
    assert main(["verify", "--seed", "-3", "--skip-mc", "--skip-pde"]) == EXIT_VALIDATION
