import numpy as np
import pandas as pd
import pytest

from config import load_run_config
from main import main
from services.checkpoint import load_checkpoint, replay_path
from services.policy_network import PolicyWeights

TINY = """
channels = 2,2,2
vehicle_widths = 8,8
fc_widths = 16,8
batch_size = 16
learning_rate = 0.01
step_cap = 20
min_separation = 3
horizon = 10
max_iters = 10
log_every = 0
"""


@pytest.fixture
def tiny_conf(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(TINY)
    return path


@pytest.fixture
def spin16(tmp_path):
    path = tmp_path / "spin16.csv"
    assert main(["gen-field", "--kind", "spin", "--size", "16", "--frames", "2", "--seed", "0",
                 "--out", str(path)]) == 0
    return path


@pytest.fixture
def untrained(tmp_path, tiny_conf):
    path = tmp_path / "policy.dpck"
    assert main(["train", "--kind", "spin", "--size", "8", "--rounds", "0", "--seed", "0",
                 "--config", str(tiny_conf), "--out", str(path)]) == 0
    return path


class TestGenField:
    def test_writes_every_cell_of_every_frame(self, tmp_path, capsys):
        path = tmp_path / "vortex.csv"
        assert main(["gen-field", "--kind", "vortex", "--size", "48", "--frames", "8",
                     "--out", str(path)]) == 0
        table = pd.read_csv(path)
        assert list(table.columns) == ["t_sec", "ix", "iy", "u_east", "v_north"]
        assert len(table) == 48 * 48 * 8
        assert table["t_sec"].nunique() == 8
        assert np.hypot(table["u_east"], table["v_north"]).max() <= 1.0 + 1e-9
        assert "grid_w: 48" in capsys.readouterr().out

    def test_zero_strength_uniform_field_is_all_zero(self, tmp_path):
        path = tmp_path / "calm.csv"
        assert main(["gen-field", "--kind", "uniform", "--strength", "0", "--size", "8", "--frames", "2",
                     "--out", str(path)]) == 0
        table = pd.read_csv(path)
        assert (table["u_east"] == 0).all() and (table["v_north"] == 0).all()

    def test_unknown_kind_is_a_usage_error(self, tmp_path, capsys):
        assert main(["gen-field", "--kind", "whirlpool", "--out", str(tmp_path / "x.csv")]) == 2
        capsys.readouterr()

    def test_help(self, capsys):
        assert main(["gen-field", "--help"]) == 0
        assert "--kind" in capsys.readouterr().out

    def test_missing_command(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_config_key(self, tmp_path, capsys):
        assert main(["gen-field", "--set", "colour=red", "--out", str(tmp_path / "x.csv")]) == 2
        assert "colour" in capsys.readouterr().err


class TestIngest:
    def test_crop(self, tmp_path, spin16):
        out = tmp_path / "crop.csv"
        assert main(["ingest", "--in", str(spin16), "--out", str(out), "--crop", "2,3,6,5"]) == 0
        table = pd.read_csv(out)
        assert (table["ix"].max(), table["iy"].max()) == (5, 4)
        assert len(table) == 6 * 5 * 2

    def test_bad_crop_text(self, tmp_path, spin16, capsys):
        assert main(["ingest", "--in", str(spin16), "--out", str(tmp_path / "c.csv"), "--crop", "2,3"]) == 2
        capsys.readouterr()

    def test_missing_input_file(self, tmp_path, capsys):
        assert main(["ingest", "--in", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "c.csv")]) == 1
        capsys.readouterr()


class TestTrain:
    def test_zero_rounds_saves_the_initial_weights(self, untrained, tiny_conf):
        weights, state = load_checkpoint(untrained)
        cfg = load_run_config(tiny_conf, {"grid_size": 8, "seed": 0})
        assert weights.allclose(PolicyWeights.init(cfg.network()))
        assert state["round"] == 0
        curve = pd.read_csv(untrained.with_name(untrained.name + ".curve.csv"))
        assert curve.empty

    def test_short_run_then_resume(self, tmp_path, tiny_conf, capsys):
        path = tmp_path / "run.dpck"
        common = ["--kind", "spin", "--size", "8", "--seed", "2", "--config", str(tiny_conf)]
        assert main(["train", *common, "--rounds", "3", "--out", str(path)]) == 0
        assert "rounds: 3" in capsys.readouterr().out
        assert replay_path(path).exists()
        assert len(pd.read_csv(path.with_name(path.name + ".curve.csv"))) == 3

        resumed = tmp_path / "resumed.dpck"
        curve = tmp_path / "resumed.csv"
        assert main(["train", *common, "--rounds", "5", "--resume", str(path), "--out", str(resumed),
                     "--curve", str(curve)]) == 0
        assert pd.read_csv(curve)["round"].tolist() == [3, 4]
        assert load_checkpoint(resumed)[1]["round"] == 5

    def test_needs_a_field(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path / "p.dpck")]) == 2
        capsys.readouterr()


class TestEval:
    def test_single_ilqr_trial(self, tmp_path, spin16, tiny_conf, capsys):
        out = tmp_path / "trials.csv"
        summary = tmp_path / "summary.csv"
        assert main(["eval", "--method", "ilqr", "--field", str(spin16), "--trials", "1",
                     "--config", str(tiny_conf), "--out", str(out), "--summary", str(summary)]) == 0
        trials = pd.read_csv(out)
        assert len(trials) == 1 and trials.loc[0, "method"] == "ilqr"
        assert capsys.readouterr().out == summary.read_text()

    def test_drl_needs_a_checkpoint(self, spin16, capsys):
        assert main(["eval", "--method", "drl", "--field", str(spin16)]) == 2
        assert "checkpoint" in capsys.readouterr().err

    def test_reruns_are_byte_identical(self, tmp_path, spin16, tiny_conf, capsys):
        outputs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["eval", "--method", "ilqr", "--field", str(spin16), "--trials", "3",
                         "--config", str(tiny_conf), "--seed", "4", "--out", str(out)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        capsys.readouterr()


class TestCompare:
    def run_compare(self, tmp_path, tag, spin16, untrained, tiny_conf):
        paths = {kind: tmp_path / f"{tag}-{kind}.csv" for kind in ("summary", "trials", "paired")}
        assert main(["compare", "--checkpoint", str(untrained), "--field", str(spin16),
                     "--random-crops", "3", "--crop-size", "8", "--trials", "2", "--seed", "1",
                     "--config", str(tiny_conf), "--out-summary", str(paths["summary"]),
                     "--out-trials", str(paths["trials"]), "--out-paired", str(paths["paired"])]) == 0
        return paths

    def test_three_areas_two_methods(self, tmp_path, spin16, untrained, tiny_conf, capsys):
        paths = self.run_compare(tmp_path, "a", spin16, untrained, tiny_conf)
        summary = pd.read_csv(paths["summary"])
        assert len(summary) == 6
        assert summary["area"].tolist() == ["area1", "area1", "area2", "area2", "area3", "area3"]
        assert summary["method"].tolist() == ["drl", "ilqr"] * 3
        paired = pd.read_csv(paths["paired"])
        assert (paired["placements_match"] == 1).all()
        assert len(pd.read_csv(paths["trials"])) == 12
        capsys.readouterr()

    def test_reruns_are_byte_identical(self, tmp_path, spin16, untrained, tiny_conf, capsys):
        first = self.run_compare(tmp_path, "a", spin16, untrained, tiny_conf)
        second = self.run_compare(tmp_path, "b", spin16, untrained, tiny_conf)
        for kind in first:
            assert first[kind].read_bytes() == second[kind].read_bytes()
        capsys.readouterr()

    def test_crop_larger_than_field(self, tmp_path, spin16, untrained, capsys):
        assert main(["compare", "--checkpoint", str(untrained), "--field", str(spin16),
                     "--random-crops", "1", "--crop-size", "32",
                     "--out-summary", str(tmp_path / "s.csv")]) == 2
        capsys.readouterr()
