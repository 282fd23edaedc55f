import json
from pathlib import Path

import pytest
import yaml

from absakit import cli
from absakit.config import apply_override, load_run_config
from absakit.corpus import read_jsonl, write_jsonl
from absakit.errors import ConfigError

from synth import build_adv_fixture, build_overfit_sc_set
from test_corpus import SEMEVAL_XML


@pytest.fixture()
def sc_jsonl(tmp_path):
    path = tmp_path / "sc.jsonl"
    write_jsonl(build_overfit_sc_set(16), path)
    return path


@pytest.fixture()
def figure_jsonl(tmp_path, figure_instance):
    path = tmp_path / "figure.jsonl"
    write_jsonl([figure_instance], path)
    return path


def write_config(tmp_path, **extra) -> Path:
    sc_path = tmp_path / "train.jsonl"
    write_jsonl(build_overfit_sc_set(16), sc_path)
    cfg = {
        "run_id": "smoke",
        "task": "sc",
        "transform": "am",
        "encoder": {"backend": "tiny:0", "width": 16},
        "data": {"train": str(sc_path), "dev": str(sc_path)},
        "learning_rate": 0.01,
        "batch_size": 16,
        "epochs": 2,
        "seeds": [1],
        "head": {"dropout": 0.0},
        "checkpoint_root": str(tmp_path / "ckpt"),
        "out_dir": str(tmp_path / "runs"),
    }
    cfg.update(extra)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestConfig:
    def test_load_and_types(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_run_config(path)
        assert cfg.task == "sc" and cfg.transform == "am"
        assert cfg.seeds == (1,)
        assert cfg.dropout == 0.0

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, bogus_key=1)
        with pytest.raises(ConfigError, match="bogus_key"):
            load_run_config(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        path = write_config(tmp_path, head={"dropout": 0.0, "zap": 1})
        with pytest.raises(ConfigError, match="zap"):
            load_run_config(path)

    def test_override(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_run_config(path, overrides=["epochs=5", "head.dropout=0.25"])
        assert cfg.epochs == 5 and cfg.dropout == 0.25

    def test_encoder_section_selects_backend(self, tmp_path):
        path = write_config(tmp_path, encoder={"backend": "tiny:9", "width": 24})
        cfg = load_run_config(path)
        assert cfg.backend == "tiny:9" and cfg.encoder_width == 24

    def test_oe_aggregation_key(self, tmp_path):
        path = write_config(tmp_path, oe_aggregation="macro")
        assert load_run_config(path).oe_aggregation == "macro"
        bad = write_config(tmp_path, oe_aggregation="median")
        with pytest.raises(ConfigError):
            load_run_config(bad)

    def test_bad_override_shape(self):
        with pytest.raises(ConfigError):
            apply_override({}, "no-equals-sign")

    def test_missing_task_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("transform: am\n")
        with pytest.raises(ConfigError):
            load_run_config(path)


class TestIngest:
    def test_xml_to_jsonl_with_stats(self, tmp_path, capsys):
        xml = tmp_path / "train.xml"
        xml.write_text(SEMEVAL_XML, encoding="utf-8")
        out = tmp_path / "out.jsonl"
        code = cli.main([
            "ingest", "--input", str(xml), "--format", "semeval-xml",
            "--task", "sc", "--out", str(out),
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "sentences=3 aspects=4" in stdout
        assert len(read_jsonl(out)) == 4
        side = json.loads(Path(str(out) + ".stats.json").read_text())
        assert side["stats"]["n_aspects"] == 4
        assert len(side["rejections"]) == 2

    def test_malformed_xml_exit_2(self, tmp_path, capsys):
        xml = tmp_path / "bad.xml"
        xml.write_text("<sentences><sentence>")
        code = cli.main([
            "ingest", "--input", str(xml), "--format", "semeval-xml",
            "--task", "sc", "--out", str(tmp_path / "o.jsonl"),
        ])
        assert code == 2
        assert "bad.xml" in capsys.readouterr().err

    def test_jsonl_round_trip_idempotent(self, tmp_path, sc_jsonl):
        out1 = tmp_path / "o1.jsonl"
        out2 = tmp_path / "o2.jsonl"
        assert cli.main(["ingest", "--input", str(sc_jsonl), "--format", "jsonl",
                         "--task", "sc", "--out", str(out1)]) == 0
        assert cli.main(["ingest", "--input", str(out1), "--format", "jsonl",
                         "--task", "sc", "--out", str(out2)]) == 0
        assert out1.read_text() == out2.read_text()


class TestPreview:
    def test_marker_preview_shows_markers(self, figure_jsonl, capsys):
        code = cli.main(["preview", "--input", str(figure_jsonl),
                         "--transform", "am", "--n", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "⟨asp⟩ food ⟨/asp⟩" in out

    def test_n_zero_prints_nothing(self, figure_jsonl, capsys):
        code = cli.main(["preview", "--input", str(figure_jsonl),
                         "--transform", "am", "--n", "0"])
        assert code == 0
        assert capsys.readouterr().out == ""

    def test_ac_extends_ag_by_appended_tail(self, figure_jsonl, capsys):
        cli.main(["preview", "--input", str(figure_jsonl), "--transform", "ag",
                  "--n", "1"])
        ag_line = capsys.readouterr().out.splitlines()[0]
        cli.main(["preview", "--input", str(figure_jsonl), "--transform", "ac",
                  "--n", "1"])
        ac_line = capsys.readouterr().out.splitlines()[0]
        ag_tokens = ag_line.split(": ", 1)[1]
        ac_tokens = ac_line.split(": ", 1)[1]
        assert ac_tokens == ag_tokens + " food [SEP]"

    def test_preview_jsonl_schema(self, figure_jsonl, tmp_path):
        out = tmp_path / "preview.jsonl"
        cli.main(["preview", "--input", str(figure_jsonl), "--transform", "ap",
                  "--n", "1", "--out", str(out)])
        obj = json.loads(out.read_text().splitlines()[0])
        assert set(obj) == {"kind", "subtokens", "word_of", "aspect_first",
                            "aspect_last"}


class TestTrainEval:
    def test_train_smoke_writes_reports_and_checkpoint(self, tmp_path, capsys):
        config = write_config(tmp_path)
        code = cli.main(["train", "--config", str(config)])
        assert code == 0
        out = capsys.readouterr().out
        assert "mean dev" in out
        assert (tmp_path / "runs" / "smoke" / "report_dev.json").exists()
        assert (tmp_path / "ckpt" / "smoke" / "1" / "best.pt").exists()

    def test_eval_and_mismatch_guard(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert cli.main(["train", "--config", str(config)]) == 0
        capsys.readouterr()
        ckpt = tmp_path / "ckpt" / "smoke" / "1" / "best.pt"
        data = tmp_path / "train.jsonl"
        metrics_out = tmp_path / "metrics.json"

        code = cli.main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                         "--out", str(metrics_out)])
        assert code == 0
        report = json.loads(metrics_out.read_text())
        assert report["task"] == "sc" and "accuracy" in report["metrics"]

        code = cli.main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                         "--out", str(metrics_out), "--task", "oe"])
        assert code == 2

        code = cli.main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                         "--out", str(metrics_out), "--robustness"])
        assert code == 2  # standard origin refused for robustness

    def test_eval_writes_saliency_jsonl(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert cli.main(["train", "--config", str(config)]) == 0
        capsys.readouterr()
        ckpt = tmp_path / "ckpt" / "smoke" / "1" / "best.pt"
        sal = tmp_path / "sal.jsonl"
        code = cli.main(["eval", "--checkpoint", str(ckpt),
                         "--data", str(tmp_path / "train.jsonl"),
                         "--out", str(tmp_path / "m.json"),
                         "--saliency-out", str(sal), "--saliency-n", "2"])
        assert code == 0
        rows = [json.loads(l) for l in sal.read_text().splitlines()]
        assert len(rows) == 2
        assert set(rows[0]) == {"subtokens", "scores"}
        assert max(rows[0]["scores"]) == pytest.approx(1.0)

    def test_config_error_exits_2(self, tmp_path):
        config = write_config(tmp_path, bogus=1)
        assert cli.main(["train", "--config", str(config)]) == 2


class TestGenAdvAndReport:
    def test_gen_adv_writes_set_and_manifest(self, tmp_path, capsys):
        test_path = tmp_path / "test.jsonl"
        train_path = tmp_path / "train.jsonl"
        write_jsonl(build_adv_fixture(10), test_path)
        write_jsonl(build_adv_fixture(10, seed=5), train_path)
        out = tmp_path / "adv.jsonl"
        code = cli.main(["gen-adv", "--input", str(test_path), "--train",
                         str(train_path), "--out", str(out), "--seed", "3"])
        assert code == 0
        assert out.exists()
        manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
        assert manifest["strategy_counts"]["SOURCE"] > 0
        variants = read_jsonl(out)
        assert all(v.origin == "adversarial" for v in variants)
        stdout = capsys.readouterr().out
        assert "SOURCE=" in stdout

    def test_report_table_layout(self, tmp_path, capsys):
        metrics = {
            "run_id": "r1", "task": "sc", "transform": "am",
            "dataset": "lap", "split": "test",
            "metrics": {"accuracy": 0.8207, "macro_f1": 0.7850},
            "per_seed": [], "n_unscoreable": 0,
        }
        path = tmp_path / "m.json"
        path.write_text(json.dumps(metrics))
        assert cli.main(["report", "--metrics", str(path)]) == 0
        out = capsys.readouterr().out
        header, row = out.splitlines()[:2]
        assert "Acc" in header and "F1" in header
        assert "82.07" in row and "78.50" in row

    def test_report_saliency_png(self, tmp_path):
        rows = [{"subtokens": ["[CLS]", "the", "food", "[SEP]"],
                 "scores": [1.0, 0.2, 0.8, 0.4]}]
        path = tmp_path / "sal.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows))
        png = tmp_path / "sal.png"
        assert cli.main(["report", "--saliency", str(path), "--out", str(png)]) == 0
        assert png.exists() and png.stat().st_size > 0

    def test_report_requires_some_input(self):
        assert cli.main(["report"]) == 2

    def test_unknown_verb_exits_2(self):
        assert cli.main(["frobnicate"]) == 2
