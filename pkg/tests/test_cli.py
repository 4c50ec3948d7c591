import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from mala_transport.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, execute, fmt, main
from mala_transport.config import ConfigError, RunConfig, config_reference, parse_config

ROOT = Path(__file__).resolve().parents[1]
SMALL = {"system": "cosine1d", "dt": 0.01, "n_replicas": 600, "n_steps": 60, "block_size": 256}


def run(tmp_path, command, cfg, *extra, name="run"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    return code, out


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- config ---------------------------------------------------------------


def test_beta_defaults_to_one():
    assert parse_config('{"system": "cosine1d", "dt": 0.01}').beta == 1.0


def test_negative_dt_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config('{"system": "cosine1d", "dt": -0.01}')
    assert exc.value.key == "dt"


@pytest.mark.parametrize("text, key", [
    ('{"system": "cosine1d", "dt": 0.01, "colour": 1}', "colour"),
    ('{"dt": 0.01}', "system"),
    ('{"system": "cosine1d"}', "dt"),
    ('{"system": "cosine1d", "dt": 0.01, "dt_list": [0.01]}', "dt"),
    ('{"system": "cosine1d", "dt": 0.01, "beta": 0}', "beta"),
    ('{"system": "cosine1d", "dt": 0.01, "n_replicas": 2.5}', "n_replicas"),
    ('{"system": "cosine1d", "dt_list": [0.01, -1]}', "dt_list"),
    ('{"system": "argon", "dt": 0.01}', "system"),
    ('{"system": "cosine1d", "dt": 0.01, "mode": "serial"}', "mode"),
    ('[1, 2]', "<document>"),
    ('{not json', "<document>"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


def test_round_trip_preserves_all_fields():
    cfg = parse_config(json.dumps({
        "system": "solvated-ion", "dt_list": [0.0002, 0.001], "beta": 1, "seed": 7,
        "einstein_tau": 20, "mode": "sequential-trajectories", "progress": True,
    }))
    again = parse_config(cfg.to_json())
    assert again == cfg
    assert again.beta == 1.0 and again.dt_list == (0.0002, 0.001)


def test_ion_system_defaults():
    cfg = parse_config('{"system": "solvated-ion", "dt": 0.001}')
    pot = cfg.potential()
    assert pot.box.n_particles == 20
    assert pot.box.length == pytest.approx((20 / 0.4) ** (1 / 3))
    assert (pot.ion.e_min, pot.ion.kappa, pot.ion.r_cut, pot.lj.r_cut) == (0.8347, 1.7025, 1.76, 1.76)


def test_t_final_sets_step_count():
    cfg = RunConfig(system="cosine1d", dt=0.01, t_final=3.0)
    assert cfg.einstein_steps(0.002) == 1500
    assert cfg.einstein_steps(0.01) == 300


def test_reference_page_is_current():
    assert (ROOT / "docs" / "config.md").read_text() == config_reference()


# --- formatting -------------------------------------------------------------


def test_fmt_is_17_significant_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(3) == "3"
    assert float(fmt(2 / 3)) == 2 / 3


# --- commands ---------------------------------------------------------------


def test_sim_einstein_outputs(tmp_path):
    code, out = run(tmp_path, "sim-einstein", SMALL)
    assert code == EXIT_OK
    msd = read(out / "msd.csv")
    assert msd[0] == ["time", "msd", "stderr"] and len(msd) == 62
    summ = read(out / "summary.csv")
    assert summ[0] == ["method", "dt", "D", "stderr", "rejection_rate"]
    assert summ[1][0] == "einstein-slope" and 0 < float(summ[1][2]) < 1


def test_sim_gk_outputs(tmp_path):
    code, out = run(tmp_path, "sim-gk", SMALL)
    assert code == EXIT_OK
    corr = read(out / "corr.csv")
    assert corr[0] == ["lag_time", "corr", "stderr"] and len(corr) == 32
    assert read(out / "summary.csv")[1][0] == "green-kubo"


def test_sweep_outputs(tmp_path):
    cfg = {**SMALL, "dt": None, "dt_list": [0.02, 0.01, 0.005]}
    code, out = run(tmp_path, "sweep-dt", cfg)
    assert code == EXIT_OK
    sweep = read(out / "sweep.csv")
    assert sweep[0] == ["dt", "method", "D", "stderr"]
    assert [float(r[0]) for r in sweep[1:]] == [0.005, 0.005, 0.01, 0.01, 0.02, 0.02]
    fit = read(out / "fit.csv")
    assert fit[0] == ["method", "D0", "D1", "max_residual"]
    assert [r[0] for r in fit[1:]] == ["einstein", "green-kubo"]


def test_rejection_scan_outputs(tmp_path, capsys):
    cfg = {**SMALL, "dt": None, "dt_list": [0.005, 0.01, 0.02], "n_steps": 40}
    code, out = run(tmp_path, "rejection-scan", cfg)
    assert code == EXIT_OK
    assert read(out / "reject.csv")[0] == ["dt", "rate"]
    slope = float(read(out / "reject_fit.csv")[1][0])
    assert 1.0 < slope < 2.0
    assert "slope" in capsys.readouterr().out


def test_oracle_command(tmp_path):
    code, out = run(tmp_path, "oracle", {"system": "cosine1d", "dt": 0.01, "n_mc": 10_000})
    assert code == EXIT_OK
    rows = dict(read(out / "oracle.csv")[1:])
    lj, pg = float(rows["lifson_jackson"]), float(rows["poisson_gk"])
    assert lj == pytest.approx(0.6239, abs=1e-4)
    assert abs(lj - pg) < 1e-6


def test_oracle_rejects_ion_system(tmp_path):
    code, _ = run(tmp_path, "oracle", {"system": "solvated-ion", "dt": 0.01})
    assert code == EXIT_CONFIG


def test_single_dt_commands_reject_lists(tmp_path):
    code, _ = run(tmp_path, "sim-gk", {"system": "cosine1d", "dt_list": [0.01, 0.02]})
    assert code == EXIT_CONFIG


def test_unknown_command_exit_one(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SMALL))
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", str(path)])
    assert exc.value.code == EXIT_CONFIG
    assert "usage" in capsys.readouterr().err
    assert execute("simulate", RunConfig(**SMALL)) == EXIT_CONFIG


def test_missing_config_file_exit_one(tmp_path):
    assert main(["oracle", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_bad_config_exit_one(tmp_path, capsys):
    code, _ = run(tmp_path, "sim-gk", {"system": "cosine1d", "dt": -0.01})
    assert code == EXIT_CONFIG
    assert "dt" in capsys.readouterr().err


def test_blowup_exit_two(tmp_path, capsys):
    # bare Euler-Maruyama on the ion system at a large step
    cfg = {"system": "solvated-ion", "dt": 0.02, "scheme": "em", "n_replicas": 4,
           "n_steps": 2000, "n_therm": 0}
    code, _ = run(tmp_path, "sim-einstein", cfg)
    assert code == EXIT_BLOWUP
    assert "step" in capsys.readouterr().err


def test_seed_override_and_determinism(tmp_path):
    _, a = run(tmp_path, "sim-einstein", SMALL, "--seed", "5", name="a")
    _, b = run(tmp_path, "sim-einstein", SMALL, "--seed", "5", name="b")
    _, c = run(tmp_path, "sim-einstein", SMALL, "--seed", "6", name="c")
    for f in ("msd.csv", "summary.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert (a / "msd.csv").read_bytes() != (c / "msd.csv").read_bytes()


def test_worker_count_does_not_change_output(tmp_path):
    _, a = run(tmp_path, "sim-gk", SMALL, "--workers", "1", name="w1")
    _, b = run(tmp_path, "sim-gk", SMALL, "--workers", "3", name="w3")
    for f in ("corr.csv", "summary.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_module_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"system": "cosine1d", "dt": 0.01, "n_mc": 10_000, "n_grid": 256}))
    res = subprocess.run([sys.executable, "-m", "mala_transport", "oracle", "--config", str(path),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "oracle.csv").exists()
