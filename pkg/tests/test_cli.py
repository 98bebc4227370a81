import json
import sys

import numpy as np
import pytest

from wsi_pipeline.classify import external_scores_load
from wsi_pipeline.cli import main
from wsi_pipeline.config import RunConfig, config_from_dict, load_config
from wsi_pipeline.errors import ConfigInvalid
from wsi_pipeline.tiler import read_manifest

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-corpus")
    rc = main(
        [
            "synth",
            "--out",
            str(root),
            "--per-class",
            "3",
            "--seed",
            "21",
            "--slide-px",
            "640",
            "--two-blob-prob",
            "0",
        ]
    )
    assert rc == 0
    return root


@pytest.fixture(scope="session")
def workdir(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("cli-out")
    config = out / "run.toml"
    config.write_text(
        f"""
[paths]
slides_dir = "{corpus}/slides"
annotations_dir = "{corpus}/annotations"
metadata_dir = "{corpus}/metadata"
output_dir = "{out}"

[patch]
coverage_min = 0.6

[split]
test_fraction_per_class = 0.3
val_rois_per_class = 1

[train]
epochs = 150
""",
        encoding="utf-8",
    )
    return out, config


def run_json(argv, capsys):
    rc = main(argv + ["--json"])
    captured = capsys.readouterr()
    assert rc == 0, captured.err
    return json.loads(captured.out)


class TestConfig:
    def test_print_config_roundtrips(self, capsys, tmp_path):
        assert main(["--print-config"]) == 0
        text = capsys.readouterr().out
        obj = tomllib.loads(text)
        cfg = config_from_dict(obj)
        assert cfg == RunConfig()

    def test_load_config_missing_file(self):
        with pytest.raises(ConfigInvalid):
            load_config("/nonexistent/config.toml")

    def test_validate_rejects_bad_mode(self):
        with pytest.raises(ConfigInvalid):
            RunConfig(mode="sepia").validate()

    def test_validate_rejects_phi_outside_band(self):
        from wsi_pipeline.resampler import PatchSpec

        cfg = RunConfig(patch=PatchSpec(phi_um=100.0))
        with pytest.raises(ConfigInvalid):
            cfg.validate()

    def test_validate_rejects_unknown_scorer(self):
        with pytest.raises(ConfigInvalid):
            RunConfig(scorer="psychic").validate()


class TestCorpusCommands:
    def test_synth_deterministic(self, tmp_path):
        for sub in ("a", "b"):
            rc = main(
                ["synth", "--out", str(tmp_path / sub), "--per-class", "1", "--seed", "4",
                 "--slide-px", "512", "--classes", "2"]
            )
            assert rc == 0
        for rel in ("corpus.json", "slides/hp_000.png", "annotations/hp_000.ndpa.xml"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_validate_ok(self, workdir, capsys):
        out, config = workdir
        summary = run_json(["validate", "--config", str(config)], capsys)
        assert summary["ok"] is True
        assert summary["slides"] == 18

    def test_validate_missing_corpus_exits_1(self, tmp_path, capsys):
        rc = main(["validate", "--corpus", str(tmp_path / "nope")])
        assert rc == 1

    def test_summarize(self, workdir, capsys):
        out, config = workdir
        summary = run_json(["summarize", "--config", str(config)], capsys)
        assert summary["total_slides"] == 18
        assert summary["per_class"]["TA.LG"]["slides"] == 3


class TestPipelineCommands:
    def test_tile_then_train_then_score(self, workdir, capsys):
        out, config = workdir
        summary = run_json(["tile", "--config", str(config), "--mode", "gray"], capsys)
        assert summary["patches"]["train"] > 0
        assert summary["patches"]["test"] > 0
        records = read_manifest(out / "manifest.jsonl")
        assert {r["split"] for r in records} == {"train", "val", "test"}
        labeled = [r for r in records if r["split"] in ("train", "val")]
        assert all(r["label"] for r in labeled)

        summary = run_json(["train-baseline", "--config", str(config)], capsys)
        assert (out / "baseline.json").exists()
        assert summary["final_loss"] < summary["initial_loss"]

        summary = run_json(
            ["score", "--config", str(config), "--model", str(out / "baseline.json"),
             "--split", "test"],
            capsys,
        )
        test_records = [r for r in records if r["split"] == "test"]
        assert summary["rows"] == len(test_records)
        table = external_scores_load(out / "scores.csv", test_records)
        assert len(table) == len(test_records)

    def test_evaluate_oracle_is_perfect(self, workdir, capsys):
        out, config = workdir
        summary = run_json(
            ["evaluate", "--config", str(config), "--scorer", "oracle", "--mode", "gray"],
            capsys,
        )
        assert summary["slide_accuracy"] == 1.0
        for metrics in summary["slide_metrics"]["per_class"].values():
            if not metrics["degenerate"]:
                assert metrics["sensitivity"] == 1.0
                assert metrics["f1"] == 1.0
        assert (out / "evaluation.json").exists()
        assert (out / "verdicts.jsonl").exists()

    def test_evaluate_external_scores_match_baseline(self, workdir, capsys):
        # protocol closure: score test patches to CSV, then evaluate through
        # the external-scorer path and compare with the in-process baseline
        out, config = workdir
        baseline = run_json(
            ["evaluate", "--config", str(config), "--mode", "gray"], capsys
        )
        external = run_json(
            ["evaluate", "--config", str(config), "--mode", "gray",
             "--scorer", f"external:{out / 'scores.csv'}"],
            capsys,
        )
        assert external["verdicts"] == baseline["verdicts"]

    def test_infer_slide_and_overlay(self, workdir, corpus, capsys):
        out, config = workdir
        slide_id = "ta_hg_000"
        summary = run_json(
            [
                "infer-slide", "--config", str(config),
                "--slide", str(corpus / "slides" / f"{slide_id}.png"),
                "--metadata", str(corpus / "metadata" / f"{slide_id}.json"),
                "--model", str(out / "baseline.json"),
                "--overlay-out", str(out / "overlay.png"),
            ],
            capsys,
        )
        assert summary["slide_id"] == slide_id
        assert summary["n_patches"] >= 1
        assert summary["predicted"] in ("HP", "NORM", "HG", "LG")
        assert (out / "overlay.png").exists()
        assert (out / "verdict.jsonl").exists()

    def test_infer_blank_slide_exits_2(self, workdir, tmp_path, capsys):
        out, config = workdir
        from wsi_pipeline.raster import ImageBuffer, write_png
        from wsi_pipeline.annotations import SlideMetadata, metadata_to_json

        blank = np.full((640, 640, 3), 255, dtype=np.uint8)
        write_png(ImageBuffer(blank), tmp_path / "blank.png")
        (tmp_path / "blank.json").write_text(
            metadata_to_json(SlideMetadata(slide_id="blank", width_px=640, height_px=640, mpp=2.0))
        )
        rc = main(
            [
                "infer-slide", "--config", str(config),
                "--slide", str(tmp_path / "blank.png"),
                "--metadata", str(tmp_path / "blank.json"),
                "--model", str(out / "baseline.json"),
            ]
        )
        assert rc == 2

    def test_sweep_small_grid_deterministic(self, workdir, capsys):
        out, config = workdir
        first = run_json(
            ["sweep", "--config", str(config), "--phis", "500,600", "--modes", "gray"],
            capsys,
        )
        assert first["rows"] == 2
        csv_a = (out / "sweep.csv").read_bytes()
        second = run_json(
            ["sweep", "--config", str(config), "--phis", "500,600", "--modes", "gray"],
            capsys,
        )
        assert (out / "sweep.csv").read_bytes() == csv_a

    def test_overlay_command(self, workdir, corpus, capsys):
        out, config = workdir
        summary = run_json(
            [
                "overlay", "--config", str(config),
                "--slide", str(corpus / "slides" / "norm_001.png"),
                "--metadata", str(corpus / "metadata" / "norm_001.json"),
                "--model", str(out / "baseline.json"),
                "--overlay-out", str(out / "standalone_overlay.png"),
            ],
            capsys,
        )
        assert summary["n_patches"] >= 1
        assert (out / "standalone_overlay.png").exists()

    def test_log_level_env(self, monkeypatch):
        import logging
        from wsi_pipeline.cli import setup_logging

        monkeypatch.setenv("WSI_PIPELINE_LOG", "debug")
        logging.getLogger().handlers.clear()
        setup_logging()
        assert logging.getLogger().level == logging.DEBUG
        monkeypatch.setenv("WSI_PIPELINE_LOG", "error")
        logging.getLogger().handlers.clear()
        setup_logging()
        assert logging.getLogger().level == logging.ERROR

    def test_workers_do_not_change_output(self, workdir, capsys):
        out, config = workdir
        a = run_json(
            ["evaluate", "--config", str(config), "--mode", "gray", "--workers", "1"], capsys
        )
        b = run_json(
            ["evaluate", "--config", str(config), "--mode", "gray", "--workers", "4"], capsys
        )
        a.pop("report_file"), b.pop("report_file")
        assert a == b
