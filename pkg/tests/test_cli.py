import json

import pytest
import yaml

from duohar.cli import main
from duohar.config import apply_overrides, expand_sweep, load_config, resolve
from duohar.errors import ConfigError


def write_config(tmp_path, extra=None):
    raw = {
        "synth": {
            "num_subjects": 6,
            "windows_per_subject_class": 3,
            "noise_std": 0.1,
            "seed": 1,
            "classes": [
                {"label": "low", "freq_hz": [1.5, 2.0, 2.5]},
                {"label": "mid", "freq_hz": [4.0, 4.5, 5.0]},
                {"label": "high", "freq_hz": [7.0, 7.5, 8.0]},
            ],
        },
        "corpus": {"stride": 128},
        "split": {"scheme": "scheme2", "seed": 2},
        "pretrain": {"batch_size": 16, "epochs_signal": 2, "epochs_scalogram": 1},
        "finetune": {
            "epochs_signal": 2,
            "epochs_scalogram": 1,
            "batch_size": 16,
            "unfreeze_last_conv": False,
        },
        "fusion": {"mode": "signal-only"},
        "output_dir": str(tmp_path / "run"),
    }
    if extra:
        raw.update(extra)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


class TestConfig:
    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as exc:
            resolve({"pretrain": {"taus": 0.5}})
        assert "pretrain.taus" in str(exc.value)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError) as exc:
            resolve({"pretraining": {}})
        assert "pretraining" in str(exc.value)

    def test_unknown_list_item_key(self):
        with pytest.raises(ConfigError) as exc:
            resolve({"augment": {"temporal": [{"kind": "noise", "sigma": 1.0}]}})
        assert "augment.temporal[0].sigma" in str(exc.value)

    def test_bad_enum_values(self):
        for raw in (
            {"split": {"scheme": "scheme3"}},
            {"fusion": {"mode": "mean"}},
            {"pretrain": {"objective": "byol"}},
            {"augment": {"mode": "both"}},
        ):
            with pytest.raises(ConfigError):
                resolve(raw)

    def test_overrides(self):
        data = apply_overrides({"pretrain": {"tau": 0.5}}, ["pretrain.tau=0.1"])
        assert data["pretrain"]["tau"] == 0.1
        cfg = resolve({}, overrides=["pretrain.epochs_signal=7"])
        assert cfg.raw["pretrain"]["epochs_signal"] == 7

    def test_hash_stable_and_sensitive(self):
        a = resolve({})
        b = resolve({})
        c = resolve({"pretrain": {"tau": 0.1}})
        assert a.hash() == b.hash()
        assert a.hash() != c.hash()

    def test_sweep_expansion(self):
        cfg = resolve(
            {
                "sweep": [
                    {"augment.mode": "ablation", "augment.temporal": [{"kind": "rotation"}]},
                    {"pretrain.tau": 0.1},
                ]
            }
        )
        entries = expand_sweep(cfg)
        assert len(entries) == 2
        assert entries[0].raw["augment"]["mode"] == "ablation"
        assert len(entries[0].raw["augment"]["temporal"]) == 1
        assert entries[1].raw["pretrain"]["tau"] == 0.1

    def test_load_config_file(self, tmp_path):
        p = write_config(tmp_path)
        cfg = load_config(p)
        assert cfg.raw["pretrain"]["epochs_signal"] == 2


class TestCli:
    def test_unknown_key_exits_2(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("pretrain:\n  objective: ntxent\n  bogus_key: 1\n")
        code = main(["ingest", "--config", str(p)])
        assert code == 2
        assert "pretrain.bogus_key" in capsys.readouterr().err

    def test_missing_csv_exits_5(self, tmp_path):
        p = write_config(tmp_path)
        code = main(["ingest", "--config", str(p), "--csv", str(tmp_path / "absent.csv")])
        assert code == 5

    def test_malformed_csv_exits_3(self, tmp_path):
        p = write_config(tmp_path)
        bad = tmp_path / "bad.csv"
        bad.write_text("subject,label,x,y,z\ns1,walk,1,2\n")
        code = main(["ingest", "--config", str(p), "--csv", str(bad)])
        assert code == 3

    def test_synth_then_ingest(self, tmp_path, capsys):
        p = write_config(tmp_path)
        out = tmp_path / "corpus.csv"
        assert main(["synth", "--config", str(p), "--out", str(out)]) == 0
        assert out.exists()
        assert main(["ingest", "--config", str(p), "--csv", str(out)]) == 0
        text = capsys.readouterr().out
        assert "windows: 54" in text  # 6 subjects x 3 classes x 3 windows

    def test_cwt_exports(self, tmp_path):
        p = write_config(tmp_path)
        assert main(["cwt", "--config", str(p), "--limit", "2"]) == 0
        d = tmp_path / "run" / "scalograms"
        assert (d / "window0000.bin").exists()
        assert (d / "window0001.png").exists()

    def test_augment_preview(self, tmp_path):
        p = write_config(tmp_path)
        assert main(["augment-preview", "--config", str(p)]) == 0
        d = tmp_path / "run" / "augment_preview"
        for name in (
            "signal_original.csv",
            "signal_view_i.csv",
            "signal_view_j.csv",
            "scalogram_view_i.png",
            "scalogram_view_j.bin",
        ):
            assert (d / name).exists()

    def test_pretrain_finetune_evaluate_pipeline(self, tmp_path, capsys):
        p = write_config(tmp_path)
        assert main(["pretrain", "--config", str(p), "--learner", "signal"]) == 0
        ck_dir = tmp_path / "run" / "pretrain_signal" / "checkpoint"
        assert (ck_dir / "manifest.json").exists()
        assert (tmp_path / "run" / "pretrain_signal" / "metrics.jsonl").exists()
        assert main(["finetune", "--config", str(p), "--checkpoint", str(ck_dir)]) == 0
        har_dir = tmp_path / "run" / "finetune_signal" / "checkpoint"
        assert (har_dir / "weights.bin").exists()

        assert main(["evaluate", "--config", str(p)]) == 0
        report_path = tmp_path / "run" / "metrics_report.json"
        report = json.loads(report_path.read_text())
        assert report["scheme"] == "scheme2"
        assert len(report["folds"]) == 1
        out = capsys.readouterr().out
        assert "weighted_f1" in out

        assert main(["export-embeddings", "--config", str(p), "--checkpoint", str(har_dir)]) == 0
        emb = (tmp_path / "run" / "embeddings.csv").read_text().strip().splitlines()
        assert len(emb) == 54 + 1

        prov = json.loads((tmp_path / "run" / "provenance.json").read_text())
        assert prov["config_hash"]
        assert "total_s" in prov["timings"]

    def test_evaluate_deterministic_reports(self, tmp_path):
        p = write_config(tmp_path)
        assert main(["evaluate", "--config", str(p)]) == 0
        first = (tmp_path / "run" / "metrics_report.json").read_bytes()
        assert main(["evaluate", "--config", str(p)]) == 0
        second = (tmp_path / "run" / "metrics_report.json").read_bytes()
        assert first == second

    def test_evaluate_sweep_runs(self, tmp_path):
        p = write_config(
            tmp_path,
            extra={
                "sweep": [
                    {"pretrain.seed": 3},
                    {"pretrain.seed": 4},
                ]
            },
        )
        assert main(["evaluate", "--config", str(p)]) == 0
        for i in range(2):
            d = tmp_path / "run" / f"sweep{i:03d}"
            assert (d / "metrics_report.json").exists()

    def test_set_override_applies(self, tmp_path):
        p = write_config(tmp_path)
        assert (
            main(
                [
                    "pretrain",
                    "--config",
                    str(p),
                    "--learner",
                    "signal",
                    "--set",
                    "pretrain.epochs_signal=1",
                ]
            )
            == 0
        )
        log = (tmp_path / "run" / "pretrain_signal" / "metrics.jsonl").read_text()
        assert len(log.strip().splitlines()) == 1

    def test_transfer_command(self, tmp_path):
        p = write_config(tmp_path)
        target = tmp_path / "target.csv"
        # target corpus with different class frequencies/names
        code = main(
            [
                "synth",
                "--config",
                str(p),
                "--set",
                'synth.classes=[{"label": "p", "freq_hz": [3.0, 3.2, 3.4]}, {"label": "q", "freq_hz": [6.0, 6.2, 6.4]}]',
                "--set",
                "synth.num_subjects=4",
                "--out",
                str(target),
            ]
        )
        assert code == 0
        assert main(["transfer", "--config", str(p), "--target-csv", str(target)]) == 0
        assert (tmp_path / "run" / "metrics_report.json").exists()
