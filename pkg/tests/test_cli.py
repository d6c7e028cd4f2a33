import pytest

from rowlane.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from rowlane.config import ConfigError, RunConfig, dump_config, load_config, parse_config


def test_envelope_command(capsys):
    assert main(["envelope", "--v-f2", "20", "--v-ego", "20", "--t-merging", "1"]) == EXIT_OK
    out = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert float(out["forbidden_f2"]) == pytest.approx(29.523810, abs=1e-6)
    assert float(out["negotiable_f2"]) == pytest.approx(79.142857, abs=1e-6)
    assert float(out["boundary_f2"]) == pytest.approx(108.666667, abs=1e-6)
    assert float(out["forbidden_ego_behind_leader"]) == pytest.approx(11.523810, abs=1e-6)
    assert float(out["elude_time"]) == pytest.approx(3.742122, abs=1e-6)


def test_trial_command(capsys):
    assert main(["trial", "--lambda", "600", "--seed", "3", "--consent", "1.0"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("{")
    assert lines[-1].startswith("# outcome=State1")


def test_experiment_to_file(tmp_path):
    out = tmp_path / "time.csv"
    code = main(["exp-time", "--lambda", "600", "1200", "--trials", "3", "--out", str(out)])
    assert code == EXIT_OK
    assert len(out.read_text().splitlines()) == 5


def test_jobs_do_not_change_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["exp-success", "--lambda", "1200", "--trials", "8", "--budget", "40", "180", "--consent", "0.5"]
    assert main(args + ["--jobs", "1", "--out", str(a)]) == EXIT_OK
    assert main(args + ["--jobs", "2", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_bad_values_exit_with_config_code(capsys):
    assert main(["exp-time", "--lambda", "-5", "--trials", "1"]) == EXIT_CONFIG
    assert main(["envelope", "--v-f2", "45"]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["envelope", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_unwritable_output(tmp_path):
    bad = tmp_path / "missing" / "x.csv"
    assert main(["exp-failure", "--lambda", "600", "--trials", "1", "--out", str(bad)]) == EXIT_IO


def test_config_file_feeds_run(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# lighter braking\na_max_brake = 5\nrho_human=1.0\n")
    assert main(["envelope", "--config", str(cfg)]) == EXIT_OK
    out = dict(line.split("=") for line in capsys.readouterr().out.split())
    # 20 + 400/(2*(2+20/30*3)) - 400/10
    assert float(out["forbidden_f2"]) == pytest.approx(30.0, abs=1e-6)


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig(seed=12, trials=50, rho=0.2)
        assert parse_config(dump_config(cfg)) == cfg

    def test_defaults(self):
        p = RunConfig().params()
        assert (p.l_v, p.a_max_accel, p.a_min_brake, p.a_max_brake) == (5.0, 2.0, 2.0, 6.0)
        assert (p.rho, p.rho_human, p.v_max) == (0.1, 1.0, 30.0)
        sim = RunConfig().sim_config()
        assert (sim.v_ego, sim.t_lc, sim.dt) == (20.0, 3.0, 0.1)

    @pytest.mark.parametrize("text", ["bogus=1", "rho", "rho=fast", "trials=2.5", "a_min_brake=9"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_comments_and_blanks(self):
        assert parse_config("\n# nothing\n  seed = 4  # trailing\n").seed == 4

    def test_load_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent")
