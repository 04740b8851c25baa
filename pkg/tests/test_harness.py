"""
Tests for configuration documents, dataset directories, plots and the command line
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from config.experiment_config import ExperimentConfig
from config.flowcount_config import NetworkConfig, RuntimeConfig, derive_seed
from src.crowd_sim import simulate
from src.encoding import FieldEncoder
from src.errors import ConfigError, ParseError
from src.harness import (
    CURVE_COLUMNS,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    LOCK_NAME,
    cmd_dispatch,
    export_dataset,
    export_plots,
    infer_keyframe_interval,
    load_dataset,
    output_lock,
    read_curve,
    render_curve,
    write_table,
)
from src.harness import cli
from src.harness.cli import build_parser, load_config
from src.harness.plots import AXIS, BACKGROUND, LINE, MARGIN, PLOT_H, PLOT_W
from src.regressor import OpticalRegressorParams, init_params, load_checkpoint, optical_layout, save_checkpoint
from src.training import TrainResult

SMALL_SIM = ["--frames", "6", "--agents", "10", "--rows", "4", "--cols", "4"]


class TestExperimentConfig:
    """Test strict config documents and overrides"""

    def test_unknown_keys_are_refused(self):
        """Test extra keys at the top level and inside sections"""
        with pytest.raises(ConfigError):
            ExperimentConfig.from_document({"seed": 1, "learning_rate": 0.1})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_document({"train": {"lr": 0.1}})

    def test_overrides(self):
        """Test dotted overrides and their validation"""
        config = ExperimentConfig().with_overrides({"train.keyframe_interval": 3, "seed": 9, "weights.gamma": None})
        assert config.train.keyframe_interval == 3
        assert config.train_config().seed == 9
        assert config.weights.gamma == 1.0
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides({"train.momentum": 0.9})
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides({"optimizer.kind": "sgd"})

    def test_digest(self):
        """Test that the hash depends on content only"""
        assert ExperimentConfig().digest() == ExperimentConfig.from_document({}).digest()
        assert ExperimentConfig().digest() != ExperimentConfig(seed=1).digest()

    def test_load(self, tmp_path):
        """Test files, bad JSON and missing relative paths"""
        good = tmp_path / "good.json"
        good.write_bytes(FieldEncoder.encode_json({"seed": 4, "sim": {"rows": 6}}))
        config = ExperimentConfig.load(good)
        assert config.seed == 4 and config.grid_shape().rows == 6
        bad = tmp_path / "bad.json"
        bad.write_bytes(b"{seed: 4")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(bad)
        dangling = tmp_path / "dangling.json"
        dangling.write_bytes(FieldEncoder.encode_json({"paths": {"dataset": "nowhere"}}))
        with pytest.raises(ConfigError):
            ExperimentConfig.load(dangling)
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "absent.json")

    def test_runtime_and_seeds(self, monkeypatch):
        """Test the thread count variable and derived seeds"""
        monkeypatch.setenv("FLOWCOUNT_THREADS", "3")
        assert RuntimeConfig.from_env().threads == 3
        monkeypatch.setenv("FLOWCOUNT_THREADS", "many")
        with pytest.raises(ConfigError):
            RuntimeConfig.from_env()
        assert derive_seed(0, "a") == derive_seed(0, "a")
        assert derive_seed(0, "a") != derive_seed(0, "b")


class TestDataset:
    """Test dataset export and loading"""

    def test_export_and_load(self, tmp_path, smoke_sim):
        """Test that frames survive 8-bit quantization and flows survive exactly"""
        export_dataset(smoke_sim, tmp_path / "ds")
        dataset = load_dataset(tmp_path / "ds")
        assert dataset.n_frames == smoke_sim.n_frames
        assert dataset.keyframe_interval == 1
        for original, loaded in zip(smoke_sim.frames, dataset.frames):
            assert np.max(np.abs(np.clip(original.pixels, 0.0, 1.0) - loaded)) <= 1.0 / 510 + 1e-12
        for original, loaded in zip(smoke_sim.flows, dataset.flows):
            assert np.array_equal(original.channels, loaded.channels)
        assert len(dataset.states) == smoke_sim.n_frames
        assert not (tmp_path / "ds" / LOCK_NAME).exists()

    def test_sparse_annotations(self, tmp_path, smoke_sim):
        """Test that V=2 keeps every other annotation and is read back"""
        export_dataset(smoke_sim, tmp_path / "ds", keyframe_interval=2)
        dataset = load_dataset(tmp_path / "ds")
        assert dataset.annotations.times == [0, 2, 4, 6]
        assert dataset.keyframe_interval == 2
        sequence = dataset.training_sequence()
        assert sorted(sequence.targets) == [0, 2, 4, 6]

    def test_missing_declared_keyframe(self, tmp_path, smoke_sim):
        """Test that a hole in the declared keyframes is a parse error"""
        export_dataset(smoke_sim, tmp_path / "ds", keyframe_interval=2)
        path = tmp_path / "ds" / "annotations.json"
        document = FieldEncoder.decode_json(path.read_bytes())
        document["frames"] = [entry for entry in document["frames"] if entry["t"] != 2]
        path.write_bytes(FieldEncoder.encode_json(document))
        with pytest.raises(ParseError):
            load_dataset(tmp_path / "ds")

    def test_bad_manifest(self, tmp_path):
        """Test that a foreign directory is refused"""
        (tmp_path / "manifest.json").write_bytes(FieldEncoder.encode_json({"format": "other"}))
        with pytest.raises(ParseError):
            load_dataset(tmp_path)
        with pytest.raises(ParseError):
            load_dataset(tmp_path / "missing")

    def test_infer_keyframe_interval(self):
        """Test gcd inference"""
        assert infer_keyframe_interval([0, 5, 10, 20]) == 5
        assert infer_keyframe_interval([3]) == 1

    def test_lock_conflict(self, tmp_path):
        """Test that a second writer is refused"""
        (tmp_path / LOCK_NAME).write_text("123")
        with pytest.raises(ConfigError):
            with output_lock(tmp_path):
                pass
        assert (tmp_path / LOCK_NAME).exists()


class TestPlots:
    """Test curve tables and raster plots"""

    def test_empty_curve_draws_axes(self):
        """Test the canvas without data"""
        canvas = render_curve([], [])
        assert canvas.shape == (PLOT_H, PLOT_W)
        assert set(np.unique(canvas)) == {AXIS, BACKGROUND}
        assert canvas[PLOT_H - MARGIN, MARGIN + 5] == AXIS

    def test_polyline_endpoints(self):
        """Test where the first and last points land"""
        canvas = render_curve([0.0, 0.5, 1.0], [0.0, 2.0, 1.0])
        assert canvas[PLOT_H - MARGIN - 1, MARGIN + 1] == LINE
        assert (canvas == LINE).sum() > 100
        assert np.array_equal(canvas, render_curve([0.0, 0.5, 1.0], [0.0, 2.0, 1.0]))

    def test_export_plots(self, tmp_path):
        """Test tidy tables and PGM files"""
        rows = [{"iteration": 1, "annotation_ratio": 0.2, "mae": 3.0, "rmse": 4.0},
                {"iteration": 0, "annotation_ratio": 0.1, "mae": 5.0, "rmse": 6.0}]
        write_table(rows, CURVE_COLUMNS, tmp_path / "curve.csv")
        written = export_plots([tmp_path / "curve.csv"], tmp_path / "plots")
        assert [p.name for p in written] == ["curve_tidy.csv", "curve_mae.pgm"]
        tidy = read_curve(tmp_path / "plots" / "curve_tidy.csv")
        assert list(tidy["iteration"]) == [0, 1]
        assert FieldEncoder.read_pgm(tmp_path / "plots" / "curve_mae.pgm").shape == (PLOT_H, PLOT_W)

    def test_bad_curve_files(self, tmp_path):
        """Test parse errors on empty tables and missing columns"""
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(ParseError):
            read_curve(empty)
        partial = tmp_path / "partial.csv"
        partial.write_text("iteration,mae\n0,1.0\n")
        with pytest.raises(ParseError):
            read_curve(partial)


class TestCommandLine:
    """Test the command dispatcher end to end on tiny runs"""

    def test_usage_errors(self, capsys):
        """Test exit codes for missing and unknown commands"""
        assert cmd_dispatch([]) == EXIT_USAGE
        assert cmd_dispatch(["teleport"]) == EXIT_USAGE
        assert cmd_dispatch(["eval"]) == EXIT_RUNTIME

    def test_simulate_is_reproducible(self, tmp_path):
        """Test that two runs with one seed write identical bytes"""
        for name in ("a", "b"):
            assert cmd_dispatch(["simulate", "--out", str(tmp_path / name), "--seed", "7"] + SMALL_SIM) == EXIT_OK
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_oracle_evaluation(self, tmp_path, capsys):
        """Test that ground-truth flows count a simulated dataset exactly"""
        out = tmp_path / "ds"
        assert cmd_dispatch(["simulate", "--out", str(out), "--seed", "2"] + SMALL_SIM) == EXIT_OK
        capsys.readouterr()
        assert cmd_dispatch(["eval", "--dataset", str(out), "--oracle"]) == EXIT_OK
        assert "MAE 0.000 RMSE 0.000" in capsys.readouterr().out

    def test_locked_output(self, tmp_path):
        """Test that a locked output directory fails the run"""
        out = tmp_path / "ds"
        out.mkdir()
        (out / LOCK_NAME).write_text("1")
        assert cmd_dispatch(["simulate", "--out", str(out)] + SMALL_SIM) == EXIT_RUNTIME

    def test_export_plots_command(self, tmp_path):
        """Test the plotting command"""
        write_table([{"iteration": 0, "annotation_ratio": 0.1, "mae": 1.0, "rmse": 1.0}],
                    CURVE_COLUMNS, tmp_path / "c.csv")
        assert cmd_dispatch(["export-plots", str(tmp_path / "c.csv"), "--out", str(tmp_path / "p")]) == EXIT_OK
        assert (tmp_path / "p" / "c_mae.pgm").exists()

    def test_train_reads_fo_checkpoint_from_config(self, tmp_path, monkeypatch):
        """Test that paths.fo_checkpoint enables the optical term without --fo"""
        ds = tmp_path / "ds"
        assert cmd_dispatch(["simulate", "--out", str(ds), "--seed", "2"] + SMALL_SIM) == EXIT_OK
        fo_path = tmp_path / "fo.ckpt"
        save_checkpoint(init_params(optical_layout(NetworkConfig()), 0, OpticalRegressorParams), fo_path)
        config_path = tmp_path / "config.json"
        config_path.write_bytes(FieldEncoder.encode_json({"paths": {"fo_checkpoint": str(fo_path)}}))
        received = []

        def fake_train(sequence, train_config, network, fo_params=None):
            received.append(fo_params)
            return TrainResult(fo_params)

        monkeypatch.setattr(cli, "train_three_frame", fake_train)
        argv = ["train", "--config", str(config_path), "--dataset", str(ds), "--out", str(tmp_path / "run")]
        assert cmd_dispatch(argv) == EXIT_OK
        assert len(received) == 1 and received[0] is not None
        assert np.array_equal(received[0].theta, load_checkpoint(fo_path).theta)

    def test_value_errors_exit_with_runtime_code(self, tmp_path, monkeypatch):
        """Test that a plain ValueError from a command is reported, not raised"""
        def broken(args, config):
            raise ValueError("bad value")

        monkeypatch.setitem(cli.COMMANDS, "export-plots", broken)
        argv = ["export-plots", str(tmp_path / "c.csv"), "--out", str(tmp_path / "p")]
        assert cmd_dispatch(argv) == EXIT_RUNTIME


class TestCommandOverrides:
    """Test how command-line flags map onto config keys"""

    def test_steps_sets_max_steps_for_train(self):
        """Test that train --steps bounds the single training run"""
        config = load_config(build_parser().parse_args(["train", "--steps", "3"]))
        assert config.train.max_steps == 3
        assert config.active_config().steps_per_round == ExperimentConfig().active.steps_per_round

    def test_steps_sets_steps_per_round_for_train_active(self):
        """Test that train-active --steps bounds every retraining round"""
        config = load_config(build_parser().parse_args(["train-active", "--steps", "3"]))
        assert config.active_config().steps_per_round == 3
        assert config.train.max_steps == ExperimentConfig().train.max_steps

    def test_other_flags_are_shared(self):
        """Test that remapping one flag leaves the rest alone"""
        config = load_config(build_parser().parse_args(["train-active", "--v", "4", "--patch-n", "2"]))
        assert config.train.keyframe_interval == 4
        assert config.patches.n == 2
