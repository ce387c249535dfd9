import csv
import json

import numpy as np
import pytest

from sagtwin import cli
from sagtwin import config as cfgmod
from sagtwin import pipeline as pl
from sagtwin import scenarios as sc

SMALL = {
    "format_version": 1,
    "training": {"candidate_orders": [1, 2], "candidate_lags": [2, 4], "candidate_widths": [1, 2], "restarts": 1},
    "detection": {"M_D": [20, 20]},
}


def run(argv, env=None):
    return cli.main([str(a) for a in argv], environ={} if env is None else env)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(SMALL))
    assert run(["scenario", "generate", "--steps", 600, "--seed", 3, "--out", d / "data.csv",
                "--config", d / "cfg.json"]) == 0
    assert run(["train", d / "data.csv", "--models", d / "models", "--config", d / "cfg.json"]) == 0
    return d


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestIngest:
    def test_raw_round_trip(self, tmp_path):
        s = sc.generate(steps=120, seed=1)
        raw = sc.to_raw(s, np.random.default_rng(0))
        pl.write_csv(raw, tmp_path / "raw.csv")
        assert run(["ingest", tmp_path / "raw.csv", "--out", tmp_path / "c"]) == 0
        back = pl.load_segments(tmp_path / "c" / "conditioned.csv")
        assert len(back) == 1
        np.testing.assert_array_equal(back[0].y, s.y)
        assert read_rows(tmp_path / "c" / "manifest.csv")[1] == ["0", "0", "120"]

    def test_no_valid_segments(self, tmp_path, capsys):
        s = sc.generate(steps=20, seed=1)
        raw = sc.to_raw(s, np.random.default_rng(0))
        dead = pl.SampledSeries(raw.timestamp, raw.u, raw.u_sp, raw.y, sag_running=np.zeros(len(raw), bool),
                                sample_period=raw.sample_period)
        pl.write_csv(dead, tmp_path / "raw.csv")
        assert run(["ingest", tmp_path / "raw.csv", "--out", tmp_path / "c"]) == cli.EXIT_NO_SEGMENTS
        assert "no valid segments" in capsys.readouterr().err

    def test_malformed_reports_line(self, tmp_path, capsys):
        lines = ["%s" % ",".join(pl.CSV_HEADER), "0,1,2,3,4,5,6,7,8,1,1", "5,1,2,3,4,5,6,x,8,1,1"]
        (tmp_path / "raw.csv").write_text("\n".join(lines) + "\n")
        assert run(["ingest", tmp_path / "raw.csv"]) == cli.EXIT_MALFORMED
        assert "3" in capsys.readouterr().err


class TestTrainRun:
    def test_artifacts(self, workdir):
        names = {p.name for p in (workdir / "models").iterdir()}
        assert names == {"regulatory.json", "narx.json", "fingerprint.json", "train_report.json"}
        report = json.loads((workdir / "models" / "train_report.json").read_text())
        assert report["regulatory"]["order"] in (1, 2)
        assert report["narx"]["m"] in (2, 4) and report["narx"]["hidden_width"] in (1, 2)

    def test_too_little_data(self, workdir, tmp_path):
        (tmp_path / "tiny.csv").write_text("".join(open(workdir / "data.csv").readlines()[:25]))
        assert run(["train", tmp_path / "tiny.csv", "--models", tmp_path / "m",
                    "--config", workdir / "cfg.json"]) == cli.EXIT_TRAINING

    def test_missing_models(self, workdir, tmp_path):
        assert run(["run", workdir / "data.csv", "--models", tmp_path / "none"]) == cli.EXIT_ARTIFACT
        assert run(["run", tmp_path / "none.csv", "--models", workdir / "models"]) == cli.EXIT_ARTIFACT

    def test_bad_config(self, workdir, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"format_version": 1, "bogus": 1}))
        assert run(["run", workdir / "data.csv", "--models", workdir / "models",
                    "--config", tmp_path / "bad.json"]) == cli.EXIT_ARTIFACT

    def test_run_outputs(self, workdir, tmp_path):
        short = tmp_path / "short.csv"
        short.write_text("".join(open(workdir / "data.csv").readlines()[:121]))
        out = tmp_path / "out"
        assert run(["run", short, "--models", workdir / "models", "--out", out, "--horizon", 3,
                    "--config", workdir / "cfg.json", "--supervisor", "on"]) == 0
        rows = read_rows(out / "trace.csv")
        assert rows[0] == list(cli.twin.TRACE_HEADER)
        ks = sorted({int(r[0]) for r in rows[1:]})
        assert ks == list(range(ks[0], 120))
        for k in ks:
            assert [int(r[1]) for r in rows[1:] if int(r[0]) == k] == [0, 1, 2, 3]
        assert read_rows(out / "detection_log.csv")[0] == list(cli.det.LOG_HEADER)
        dec = read_rows(out / "decisions.csv")
        assert dec[0] == ["k", "y1_lim", "y2_lim", "score"] and len(dec) == 1 + len(ks)
        assert (out / "events.jsonl").exists()

    def test_report(self, workdir, tmp_path, capsys):
        out = tmp_path / "rep"
        assert run(["report", workdir / "data.csv", "--models", workdir / "models", "--out", out,
                    "--horizon", 5]) == 0
        rows = read_rows(out / "error_report.csv")
        assert [(r[0], r[1]) for r in rows[1:]] == [(str(h), cv) for h in range(1, 7) for cv in ("y1", "y2")]
        assert "quality gate at horizon 5" in capsys.readouterr().out


class TestScenarioCommands:
    def test_generate_is_reproducible(self, tmp_path):
        for name in ("a", "b"):
            assert run(["scenario", "generate", "--steps", 80, "--seed", 9, "--out", tmp_path / f"{name}.csv",
                        "--limit-range", 1150, 1350]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_make_and_apply(self, workdir, tmp_path):
        assert run(["scenario", "make", "wear", "--months", 5, "--out", tmp_path / "w.json"]) == 0
        assert run(["scenario", "apply", workdir / "data.csv", "--scenario-file", tmp_path / "w.json",
                    "--out", tmp_path / "worn.csv"]) == 0
        a, b = pl.read_csv(workdir / "data.csv"), pl.read_csv(tmp_path / "worn.csv")
        assert np.all(b.y[:, 0] == a.y[:, 0] * 1.10)
        np.testing.assert_array_equal(b.y[:, 1], a.y[:, 1])

    def test_apply_without_file(self, workdir, tmp_path):
        assert run(["scenario", "apply", workdir / "data.csv", "--out", tmp_path / "x.csv"]) == cli.EXIT_ARTIFACT


class TestConfigResolution:
    def resolve(self, argv, env):
        return cli.resolve_config(cli.build_parser().parse_args(argv), env)

    def test_defaults(self):
        cfg = self.resolve(["run", "d.csv"], {})
        assert cfg.horizon.N == 5 and cfg.seed == 0 and not cfg.supervisor.enabled

    def test_env_then_flag(self):
        env = {"SAGTWIN_HORIZON": "7", "SAGTWIN_SEED": "4", "SAGTWIN_SUPERVISOR": "on"}
        cfg = self.resolve(["run", "d.csv"], env)
        assert (cfg.horizon.N, cfg.seed, cfg.supervisor.enabled) == (7, 4, True)
        cfg = self.resolve(["run", "d.csv", "--horizon", "2", "--supervisor", "off"], env)
        assert (cfg.horizon.N, cfg.seed, cfg.supervisor.enabled) == (2, 4, False)

    def test_file_then_env(self, tmp_path):
        cfgmod.save(cfgmod.RunConfig(seed=11), tmp_path / "c.json")
        assert self.resolve(["run", "d.csv", "--config", str(tmp_path / "c.json")], {}).seed == 11
        assert self.resolve(["run", "d.csv", "--config", str(tmp_path / "c.json")], {"SAGTWIN_SEED": "12"}).seed == 12

    def test_round_trip(self, tmp_path):
        cfg = cfgmod.RunConfig(seed=3, y_lim=(1200.0, 10000.0))
        cfgmod.save(cfg, tmp_path / "c.json")
        assert cfgmod.load(tmp_path / "c.json", {}) == cfg
