import json

import numpy as np
import pytest
import torch
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from maker.cli import main
from maker.data import IntervalModel, read_store, synth_trajectory, window_samples
from maker.errors import ConfigError
from maker.batching import prepare_samples
from maker.harness.config import ExperimentConfig, config_hash, load_config, save_config
from maker.harness.experiment import (
    ablation_matrix,
    build_datasets,
    evaluate_checkpoint,
    load_checkpoint,
    predict,
    read_log,
    train_run,
)
from maker.harness.metrics import (
    band_identity_gap,
    band_report,
    evaluate_predictions,
    stratify,
)

TINY_RUN = dict(
    synth_count=8, synth_n=40, h=16, p=4, stride=4, patch_len=16, patch_stride=8, d_model=4, enc_layers=1,
    enc_heads=2, hidden=6, n_prototypes=3, d_dec=8, dec_layers=1, dec_heads=2, epochs=2, batch_size=8,
    dtype="float64",
)


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_RUN))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("run")
    return train_run(ExperimentConfig.from_dict(TINY_RUN), run_dir)


class TestMetrics:
    def test_perfect_predictor(self, prepared):
        pred = np.stack([it.fut_norm for it in prepared])
        rep = evaluate_predictions(pred, prepared)
        assert all(v == 0 for v in rep.mae_deg.values()) and all(v == 0 for v in rep.mae_norm.values())

    def test_constant_degree_offset(self, prepared):
        pred_deg = np.stack([it.sample.future_positions + 0.01 for it in prepared])
        mean = np.stack([it.stats.mean[:2] for it in prepared])[:, None]
        scale = np.stack([it.stats.scale[:2] for it in prepared])[:, None]
        rep = evaluate_predictions((pred_deg - mean) / scale, prepared)
        for v in rep.mae_deg.values():
            assert v == pytest.approx(0.01, abs=1e-12)

    def test_band_counts(self, prepared):
        rep = evaluate_predictions(np.zeros((len(prepared), 24, 2)), prepared)
        n = len(prepared)
        assert rep.band_counts == {"1-6": 6 * n, "7-12": 6 * n, "13-24": 12 * n, "1-24": 24 * n}

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 2**32 - 1))
    def test_band_identity(self, n, seed):
        rng = np.random.default_rng(seed)
        err = np.abs(rng.standard_cauchy((n, 24)))
        assert band_identity_gap(band_report(err, err * rng.uniform(1e-4, 1))) < 1e-12

    def test_empty_split(self):
        with pytest.raises(ValueError):
            evaluate_predictions(np.zeros((0, 24, 2)), [])

    def test_report_files(self, tmp_path, prepared):
        rep = evaluate_predictions(np.zeros((len(prepared), 24, 2)), prepared)
        path = rep.write(tmp_path, "m")
        assert json.loads(path.read_text())["mae_deg"] == rep.mae_deg
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "band,mae_deg,mae_norm,count"


class TestStratify:
    def test_counts_sum_to_split(self, prepared):
        err = np.random.default_rng(0).uniform(size=(len(prepared), 24))
        strata = stratify(err, prepared)
        for axis in ("spatial", "temporal"):
            cells = strata[axis]
            assert sum(c["count"] for c in cells.values()) == len(prepared)
            bound = (len(prepared) - 1) // 4 + 1
            assert cells["Low"]["count"] <= bound and cells["High"]["count"] <= bound

    def test_cell_means(self, prepared):
        err = np.random.default_rng(1).uniform(size=(len(prepared), 24))
        from maker.harness.metrics import difficulty_scores
        from maker.kinematics import quartile_levels

        scores = difficulty_scores(prepared)["spatial"]
        levels = [lv.value for lv in quartile_levels(scores)]
        cell = stratify(err, prepared)["spatial"]["Medium"]
        expected = np.mean([err[i].mean() for i, lv in enumerate(levels) if lv == "Medium"])
        assert cell["mae_deg"] == pytest.approx(expected, rel=1e-12)

    def test_identical_trajectories_all_medium(self, provider):
        traj = synth_trajectory("loop", 48, 0.0, seed=0, interval_model=IntervalModel.regular(60))
        items = prepare_samples(window_samples(traj, 24, 24)[:1] * 5, provider)
        strata = stratify(np.ones((5, 24)), items)
        for axis in ("spatial", "temporal"):
            assert strata[axis]["Medium"]["count"] == 5
            assert strata[axis]["Low"] == {"mae_deg": None, "count": 0}
            assert strata[axis]["High"]["count"] == 0

    def test_too_small(self, prepared):
        with pytest.raises(ValueError):
            stratify(np.ones((3, 24)), prepared[:3])


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig.from_dict(TINY_RUN)
        back = load_config(save_config(cfg, tmp_path / "c.yaml"))
        assert back == cfg and config_hash(back) == cfg.hash()

    def test_hash_changes(self):
        a = ExperimentConfig()
        assert a.hash() != ExperimentConfig(seed=1).hash() and len(a.hash()) == 16

    def test_overrides(self, cfg_path):
        assert load_config(cfg_path, seed=9).seed == 9
        assert load_config(cfg_path, seed=None).seed == 0

    @pytest.mark.parametrize(
        "bad", [{"nonsense": 1}, {"h": {"nested": 1}}, {"use_llm": "maybe"}, {"dtype": "float16"},
                {"use_llm": False}, {"split_train": 0.95}, {"gate_scope": "pred"}],
    )
    def test_rejected(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="missing.yaml"):
            load_config(tmp_path / "missing.yaml")


class TestRuns:
    def test_run_directory(self, trained):
        names = {p.name for p in trained.run_dir.iterdir()}
        assert {"config.yaml", "config_hash", "seed", "train_log.jsonl", "checkpoint.pt", "checkpoint_best.pt",
                "metrics.json", "metrics.csv", "baseline_metrics.json"} <= names
        cfg = load_config(trained.run_dir / "config.yaml")
        assert (trained.run_dir / "config_hash").read_text().strip() == cfg.hash()
        log = read_log(trained.run_dir / "train_log.jsonl")
        assert any(r.get("event") == "validation" for r in log)
        assert band_identity_gap(trained.test_report) < 1e-12

    def test_evaluate_reproduces_final_validation(self, trained):
        report = evaluate_checkpoint(trained.run_dir / "checkpoint.pt", "val")
        assert report.mae_deg["1-24"] == trained.final_val_mae

    def test_checkpoint_round_trip(self, trained):
        model, cfg, provider = load_checkpoint(trained.run_dir / "checkpoint.pt")
        items = build_datasets(cfg, provider)["test"]
        assert np.array_equal(predict(model, items), predict(trained.trainer.model, items))
        payload = torch.load(trained.run_dir / "checkpoint.pt", weights_only=False)
        assert payload["format"] == "maker-checkpoint" and payload["version"] == 1
        assert payload["step"] == trained.trainer.step and payload["lambda"] == trained.trainer.state.lam

    def test_bad_checkpoint(self, tmp_path):
        torch.save({"format": "other"}, tmp_path / "x.pt")
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "x.pt")
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "absent.pt")

    def test_rerun_bitwise(self, trained, tmp_path):
        again = train_run(ExperimentConfig.from_dict(TINY_RUN), tmp_path / "again")
        assert (again.run_dir / "metrics.json").read_text() == (trained.run_dir / "metrics.json").read_text()

    def test_ablation_rows(self, tmp_path):
        cfg = ExperimentConfig.from_dict({**TINY_RUN, "epochs": 1})
        rows = ablation_matrix(cfg, ["MAKER", "MAKER-MKT", "MAKER-KSL"], tmp_path)
        for band in rows["MAKER"].mae_deg:
            assert rows["MAKER"].mae_deg[band] != rows["MAKER-MKT"].mae_deg[band]
        ksl_log = read_log(tmp_path / "MAKER-KSL" / "train_log.jsonl")
        assert all(r["selected_fraction"] == 1.0 for r in ksl_log if "selected_fraction" in r)
        assert (tmp_path / "ablation.csv").read_text().count("\n") == 4
        twice = ablation_matrix(cfg, ["MAKER", "MAKER"], tmp_path / "twice")
        assert twice["MAKER"].to_dict() == rows["MAKER"].to_dict()

    def test_ablation_rejects_before_training(self, tmp_path):
        with pytest.raises(ConfigError):
            ablation_matrix(ExperimentConfig.from_dict(TINY_RUN), ["MAKER", "MAKER-XYZ"], tmp_path)
        assert not any(tmp_path.iterdir())


class TestCli:
    def test_synth(self, tmp_path, capsys):
        assert main(["synth", "--kind", "straight", "--n", "48", "--out", str(tmp_path / "d")]) == 0
        path = capsys.readouterr().out.strip()
        trajs = read_store(path)
        assert len(trajs) == 1 and len(trajs[0]) == 48

    def test_missing_config(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2
        assert "missing.yaml" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert main(["fly"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_runtime_failure(self, tmp_path, capsys):
        store = tmp_path / "broken.jsonl"
        store.write_text("{not json\n")
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump({**TINY_RUN, "data_path": str(store)}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1

    def test_ingest(self, tmp_path, capsys):
        csv = tmp_path / "a.csv"
        rows = [f"1,2023-12-25T00:{m:02d}:00,40.0,-70.{m:02d},5,90,0,x" for m in range(0, 60, 3)]
        csv.write_text("MMSI,BaseDateTime,LAT,LON,SOG,COG,Heading,VesselName\n" + "\n".join(rows) + "\n")
        assert main(["ingest", str(csv), "--dialect", "us_coast", "--out", str(tmp_path / "s")]) == 0
        trajs = read_store(capsys.readouterr().out.strip())
        assert [len(t) for t in trajs] == [20]

    def test_train_evaluate_stratify(self, tmp_path, cfg_path, capsys):
        out = str(tmp_path / "run")
        assert main(["train", "--config", str(cfg_path), "--out", out]) == 0
        metrics = json.loads(open(capsys.readouterr().out.strip()).read())
        assert main(["evaluate", "--config", str(cfg_path), "--out", out, "--split", "val"]) == 0
        val = json.loads(open(capsys.readouterr().out.strip()).read())
        log = read_log(tmp_path / "run" / "train_log.jsonl")
        final = [r for r in log if r.get("event") == "validation"][-1]["val_mae_deg"]
        assert val["mae_deg"]["1-24"] == final
        assert main(["stratify", "--out", out]) == 0
        strata = json.loads(open(capsys.readouterr().out.strip()).read())
        assert sum(c["count"] for c in strata["spatial"].values()) == sum(
            c["count"] for c in metrics["strata"]["spatial"].values()
        )

    def test_global_flags_either_side(self, tmp_path, capsys):
        assert main(["--seed", "3", "synth", "--out", str(tmp_path / "a")]) == 0
        a = capsys.readouterr().out.strip()
        assert main(["synth", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
        b = capsys.readouterr().out.strip()
        assert read_store(a) == read_store(b)
