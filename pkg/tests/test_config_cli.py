import json

import numpy as np
import pytest

from mia_audit import ConfigError, load_config, run_pipeline, write_artifacts
from mia_audit.cli import main, render_report
from mia_audit.config import ExperimentConfig, SyntheticSource
from mia_audit.evaluation import sweep
from mia_audit.nn import TrainingConfig
from mia_audit.signals import SignalKind

FAST_TRAIN = TrainingConfig(epochs=3, batch_size=32)
FAST_SCORING = TrainingConfig(learning_rate=0.05, weight_decay=0.0, epochs=10)


def fast_config(**kw):
    defaults = dict(
        data=SyntheticSource(num_classes=2, feature_dim=4, class_separation=0.5,
                             cov_scale=1.0, n_samples=300),
        hidden_sizes=(8,),
        target_train=FAST_TRAIN, shadow_train=FAST_TRAIN, reference_train=FAST_TRAIN,
        scoring_train=FAST_SCORING,
        num_queries=2, augmentation_noise_std=0.1, num_reference_models=2,
        fpr_levels=(0.1,), master_seed=5,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


SAMPLE_INI = """
[data]
source = synthetic
num_classes = 2
feature_dim = 4
class_separation = 0.5
cov_scale = 1.0
n_samples = 300

[model]
hidden_sizes = 8

[train.target]
learning_rate = 0.1
momentum = 0.9
weight_decay = 0.0005
batch_size = 32
epochs = 3
cosine_schedule = true

[signal]
kind = loss
num_queries = 2
augmentation_noise_std = 0.1

[reference]
count = 2
sampling = fixed

[attacks]
enabled = loss,calibration,lira_offline,rapid,shortcut_lira

[scoring]
learning_rate = 0.05
weight_decay = 0.0
epochs = 10

[eval]
fpr_levels = 0.1

[experiment]
master_seed = 5
"""


class TestConfigParsing:
    def write(self, tmp_path, text):
        path = tmp_path / "exp.ini"
        path.write_text(text, encoding="utf-8")
        return path

    def test_sample_parses_to_expected_values(self, tmp_path):
        cfg = load_config(self.write(tmp_path, SAMPLE_INI))
        assert cfg.hidden_sizes == (8,)
        assert cfg.num_reference_models == 2
        assert cfg.signal_kind is SignalKind.LOSS
        assert cfg.target_train.epochs == 3
        assert cfg.master_seed == 5

    def test_ini_matches_programmatic_config(self, tmp_path):
        cfg = load_config(self.write(tmp_path, SAMPLE_INI))
        assert cfg.digest() == fast_config().digest()

    def test_shadow_defaults_to_target_settings(self, tmp_path):
        cfg = load_config(self.write(tmp_path, SAMPLE_INI))
        assert cfg.shadow_train == cfg.target_train
        assert cfg.reference_train == cfg.target_train

    def test_unknown_key_named(self, tmp_path):
        text = SAMPLE_INI.replace("kind = loss", "kind = loss\nbogus = 1")
        with pytest.raises(ConfigError, match=r"\[signal\] bogus"):
            load_config(self.write(tmp_path, text))

    def test_unknown_section_named(self, tmp_path):
        with pytest.raises(ConfigError, match=r"\[nonsense\]"):
            load_config(self.write(tmp_path, SAMPLE_INI + "\n[nonsense]\nx = 1\n"))

    def test_bad_signal_kind(self, tmp_path):
        text = SAMPLE_INI.replace("kind = loss", "kind = entropy")
        with pytest.raises(ConfigError, match=r"\[signal\] kind"):
            load_config(self.write(tmp_path, text))

    def test_bad_attack_name(self, tmp_path):
        text = SAMPLE_INI.replace("enabled = loss,", "enabled = sidechannel,")
        with pytest.raises(ConfigError, match="unknown attack"):
            load_config(self.write(tmp_path, text))

    def test_fpr_level_out_of_range(self, tmp_path):
        text = SAMPLE_INI.replace("fpr_levels = 0.1", "fpr_levels = 1.5")
        with pytest.raises(ConfigError, match="fpr_levels"):
            load_config(self.write(tmp_path, text))

    def test_unparsable_number_named(self, tmp_path):
        text = SAMPLE_INI.replace("epochs = 3", "epochs = three")
        with pytest.raises(ConfigError, match=r"\[train.target\] epochs"):
            load_config(self.write(tmp_path, text))

    def test_dp_section(self, tmp_path):
        text = SAMPLE_INI + "\n[dp]\nclip_norm = 10\nnoise_multiplier = 0.5\n"
        cfg = load_config(self.write(tmp_path, text))
        assert cfg.dp.clip_norm == 10.0
        assert cfg.dp_apply_to == ("target",)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.ini")

    def test_digest_changes_with_values(self):
        assert fast_config().digest() != fast_config(master_seed=6).digest()
        assert fast_config().digest() == fast_config().digest()


class TestPipeline:
    def test_loss_only_run_trains_no_attacker_models(self):
        result = run_pipeline(fast_config(attacks=("loss",)))
        assert result.shadow_model is None
        assert result.reference_models == []
        assert result.target_table.calibrated is None
        assert set(result.outputs) == {"loss"}
        assert result.bucket_report is None

    def test_full_run_produces_all_outputs(self):
        result = run_pipeline(fast_config())
        assert set(result.outputs) == {"loss", "calibration", "lira_offline",
                                       "rapid", "shortcut_lira"}
        assert result.bucket_report is not None
        assert result.target_table.calibrated is not None

    def test_eval_set_is_balanced_train_vs_test(self):
        result = run_pipeline(fast_config(attacks=("loss",)))
        member = result.target_table.is_member
        assert member.sum() == (~member).sum()

    def test_sweep_single_value_matches_direct_run(self):
        cfg = fast_config(attacks=("loss", "calibration"))
        swept = sweep(cfg, "num_queries", [1])
        direct = run_pipeline(cfg.with_overrides(num_queries=1))
        by_metric = {row["metric"]: row["result"] for row in swept.rows}
        assert by_metric["calibration.auc"] == direct.metrics["calibration"].auc
        assert by_metric["loss.auc"] == direct.metrics["loss"].auc

    def test_sweep_reference_axis_matches_direct_run(self):
        cfg = fast_config(attacks=("calibration",))
        swept = sweep(cfg, "num_reference_models", [1])
        direct = run_pipeline(cfg.with_overrides(num_reference_models=1))
        by_metric = {row["metric"]: row["result"] for row in swept.rows}
        assert by_metric["calibration.auc"] == direct.metrics["calibration"].auc

    def test_nested_query_prefix_property(self):
        # with per-(sample, query) rng streams, a 1-query run equals the
        # unperturbed signal regardless of the configured maximum
        cfg1 = fast_config(num_queries=1)
        cfg2 = fast_config(num_queries=2)
        r1 = run_pipeline(cfg1.with_overrides(attacks=("loss",)))
        r2 = run_pipeline(cfg2.with_overrides(attacks=("loss",)))
        assert not np.array_equal(r1.target_table.raw, r2.target_table.raw)

    def test_reference_models_stable_under_count_increase(self):
        cfg2 = fast_config(num_reference_models=2, attacks=("calibration",))
        cfg3 = fast_config(num_reference_models=3, attacks=("calibration",))
        r2 = run_pipeline(cfg2)
        r3 = run_pipeline(cfg3)
        for a, b in zip(r2.reference_models, r3.reference_models[:2]):
            for wa, wb in zip(a.parameters(), b.parameters()):
                assert np.array_equal(wa, wb)

    def test_random_sampling_mode(self):
        result = run_pipeline(fast_config(reference_sampling_mode="random",
                                          attacks=("calibration",)))
        assert "calibration" in result.metrics

    def test_shortcut_lira_only_selection(self):
        result = run_pipeline(fast_config(attacks=("shortcut_lira",)))
        assert set(result.outputs) == {"shortcut_lira"}
        assert result.shadow_model is not None
        assert result.target_lira is not None

    def test_split_json_keeps_interface_fields(self, tmp_path):
        from mia_audit import SplitPlan
        result = run_pipeline(fast_config(attacks=("loss",)))
        write_artifacts(result, tmp_path / "s")
        plan = SplitPlan.from_json((tmp_path / "s" / "split.json").read_text())
        assert plan == result.target_plan

    def test_disjoint_attacker_source(self):
        cfg = fast_config(attacker_data=SyntheticSource(
            num_classes=2, feature_dim=4, class_separation=0.5, cov_scale=1.0,
            n_samples=300, seed=123))
        result = run_pipeline(cfg)
        assert result.attacker_plan is not None
        assert set(result.outputs) == set(cfg.attacks)

    def test_dp_applies_to_target_only_by_default(self):
        from mia_audit.nn import DPConfig
        cfg = fast_config(dp=DPConfig(10.0, 0.0), attacks=("loss", "calibration"))
        base = run_pipeline(fast_config(attacks=("loss", "calibration")))
        dp = run_pipeline(cfg)
        # sigma=0 with a huge effective clip bound: reference models untouched
        for a, b in zip(base.reference_models, dp.reference_models):
            for wa, wb in zip(a.parameters(), b.parameters()):
                assert np.array_equal(wa, wb)

    def test_parallelism_does_not_change_results(self, monkeypatch):
        cfg = fast_config()
        serial = run_pipeline(cfg)
        monkeypatch.setenv("MIA_AUDIT_PARALLELISM", "4")
        parallel = run_pipeline(cfg)
        for name in cfg.attacks:
            assert np.array_equal(serial.outputs[name].scores,
                                  parallel.outputs[name].scores)


class TestArtifacts:
    def run_to_dir(self, tmp_path, name="out", **kw):
        outdir = tmp_path / name
        result = run_pipeline(fast_config(**kw))
        written = write_artifacts(result, outdir)
        return outdir, result, written

    def test_expected_files_present(self, tmp_path):
        outdir, result, written = self.run_to_dir(tmp_path)
        expected = {"config.json", "split.json", "target_scores.csv", "shadow_scores.csv",
                    "manifest.json", "loss_buckets_raw.csv", "loss_buckets_calibrated.csv"}
        for attack in result.config.attacks:
            expected |= {f"scores_{attack}.csv", f"scores_{attack}.json",
                         f"roc_{attack}.csv", f"metrics_{attack}.json"}
        assert expected == set(written)
        for name in written:
            assert (outdir / name).exists()

    def test_loss_only_artifacts(self, tmp_path):
        outdir, _, written = self.run_to_dir(tmp_path, attacks=("loss",))
        assert "shadow_scores.csv" not in written
        assert "scores_rapid.csv" not in written
        assert "loss_buckets_raw.csv" not in written

    def test_every_artifact_carries_digest(self, tmp_path):
        outdir, result, written = self.run_to_dir(tmp_path)
        for name in written:
            text = (outdir / name).read_text()
            if name.endswith(".csv"):
                assert text.startswith(f"# config_digest={result.digest}")
            else:
                assert result.digest in text

    def test_rerun_is_byte_identical(self, tmp_path):
        out1, _, written = self.run_to_dir(tmp_path, "a")
        out2, _, _ = self.run_to_dir(tmp_path, "b")
        for name in written:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_manifest_reports_ok(self, tmp_path):
        outdir, result, _ = self.run_to_dir(tmp_path)
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["config_digest"] == result.digest


class TestCli:
    def write_config(self, tmp_path, text=SAMPLE_INI):
        path = tmp_path / "exp.ini"
        path.write_text(text, encoding="utf-8")
        return str(path)

    def test_run_and_report(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        outdir = str(tmp_path / "run")
        assert main(["run", cfg, "-o", outdir]) == 0
        assert main(["report", outdir]) == 0
        out = capsys.readouterr().out
        lines = [ln for ln in out.splitlines() if ln and not ln.startswith("wrote")]
        assert lines[0].split() == ["attack", "TPR@10%FPR", "AUC", "BalancedAcc"]
        assert lines[1].startswith("loss")
        assert len(lines) == 6  # header + five attacks

    def test_report_rounding_matches_json(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        outdir = str(tmp_path / "run")
        main(["run", cfg, "-o", outdir])
        payload = json.loads((tmp_path / "run" / "metrics_loss.json").read_text())
        main(["report", outdir])
        report_line = [ln for ln in capsys.readouterr().out.splitlines()
                       if ln.startswith("loss")][0]
        assert f"{payload['auc']:.4f}" in report_line

    def test_report_empty_dir_errors(self, tmp_path, capsys):
        outdir = tmp_path / "empty"
        outdir.mkdir()
        assert main(["report", str(outdir)]) == 1
        assert str(outdir) in capsys.readouterr().err

    def test_report_refuses_mixed_digests(self, tmp_path):
        outdir = tmp_path / "mixed"
        outdir.mkdir()
        for i, digest in enumerate(["aaa", "bbb"]):
            payload = {"attack": f"a{i}", "config_digest": digest,
                       "balanced_accuracy": 0.5, "auc": 0.5, "tpr_at_fpr": {}}
            (outdir / f"metrics_a{i}.json").write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="mismatched"):
            render_report(str(outdir))

    def test_invalid_config_exit_code_and_message(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, SAMPLE_INI.replace("kind = loss", "kind = x"))
        assert main(["run", cfg, "-o", str(tmp_path / "o")]) == 1
        assert "[signal] kind" in capsys.readouterr().err

    def test_failed_stage_marks_manifest(self, tmp_path, capsys):
        bad = SAMPLE_INI.replace("source = synthetic", "source = csv\npath = missing.csv")
        bad = "\n".join(ln for ln in bad.splitlines()
                        if not any(k in ln for k in ("num_classes", "feature_dim",
                                                     "class_separation", "cov_scale",
                                                     "n_samples")))
        cfg = self.write_config(tmp_path, bad)
        outdir = tmp_path / "fail"
        assert main(["run", cfg, "-o", str(outdir)]) == 1
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert "error" in manifest

    def test_sweep_csv_cardinality(self, tmp_path):
        cfg = self.write_config(tmp_path, SAMPLE_INI.replace(
            "enabled = loss,calibration,lira_offline,rapid,shortcut_lira",
            "enabled = loss"))
        outdir = tmp_path / "sweep"
        assert main(["sweep", cfg, "--axis", "num_queries", "--values", "1,2",
                     "--seeds", "1,2", "-o", str(outdir)]) == 0
        lines = (outdir / "sweep.csv").read_text().splitlines()
        assert lines[1] == "axis,value,seed,metric,result"
        # 2 values x 2 seeds x 1 attack x 3 metrics (auc, bal, one fpr level)
        assert len(lines) == 2 + 2 * 2 * 3

    def test_gen_data_round_trips(self, tmp_path):
        from mia_audit import load_csv
        cfg = self.write_config(tmp_path)
        out = tmp_path / "data.csv"
        assert main(["gen-data", cfg, "-o", str(out)]) == 0
        ds = load_csv(out)
        assert len(ds) == 300
        assert ds.num_classes == 2

    def test_run_from_csv_source(self, tmp_path):
        cfg = self.write_config(tmp_path)
        data = tmp_path / "data.csv"
        assert main(["gen-data", cfg, "-o", str(data)]) == 0
        csv_ini = SAMPLE_INI.replace("source = synthetic",
                                     f"source = csv\npath = {data}")
        cfg2 = tmp_path / "csv.ini"
        cfg2.write_text(csv_ini, encoding="utf-8")
        outdir = tmp_path / "csvrun"
        assert main(["run", str(cfg2), "-o", str(outdir)]) == 0
        assert (outdir / "metrics_rapid.json").exists()

    def test_gen_data_rejects_csv_source(self, tmp_path, capsys):
        text = SAMPLE_INI.replace("source = synthetic", "source = csv\npath = x.csv")
        cfg = self.write_config(tmp_path, text)
        assert main(["gen-data", cfg, "-o", str(tmp_path / "y.csv")]) == 1
        assert "not synthetic" in capsys.readouterr().err
