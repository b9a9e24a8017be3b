"""End-to-end command line behavior: exit codes, outputs, stage isolation."""

import json
import shutil

import pytest

from binrisk.cli import EXIT_ALERTS, EXIT_ERROR, EXIT_OK, main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    doc = json.loads(captured.out) if captured.out.strip() else None
    return code, doc, captured.err


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory, fixtures_dir):
    outdir = tmp_path_factory.mktemp("toy_run")
    code = main(["report", "--config", str(fixtures_dir / "config_toy.json"),
                 "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
                 "--outdir", str(outdir)])
    assert code == EXIT_OK
    return outdir


@pytest.fixture(scope="module")
def firmware_run(tmp_path_factory, fixtures_dir):
    outdir = tmp_path_factory.mktemp("firmware_run")
    code = main(["report", "--config", str(fixtures_dir / "config_firmware.json"),
                 "--cpg", str(fixtures_dir / "firmware_update.cpg.json"),
                 "--outdir", str(outdir)])
    assert code == EXIT_ALERTS
    return outdir


# --- single commands ---------------------------------------------------------

def test_ingest_reports_graph_shape(capsys, fixtures_dir, tmp_path):
    out = tmp_path / "canon.json"
    code, doc, _ = run(capsys, "ingest",
                       "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
                       "--out", str(out))
    assert code == EXIT_OK
    assert doc == {"binary_id": "toy_modbus", "nodes": 20, "edges": 31,
                   "functions": 5}
    first = out.read_bytes()
    run(capsys, "ingest", "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
        "--out", str(out))
    assert out.read_bytes() == first  # canonical form is stable


def test_missing_input_gives_error_exit(capsys, tmp_path):
    code, _, err = run(capsys, "ingest", "--cpg", str(tmp_path / "nope.json"),
                       "--out", str(tmp_path / "out.json"))
    assert code == EXIT_ERROR
    assert "error:" in err


def test_bad_config_key_gives_error_exit(capsys, fixtures_dir, tmp_path):
    bad = tmp_path / "cfg.json"
    bad.write_text('{"not_a_real_knob": 1}', encoding="utf-8")
    code, _, err = run(capsys, "ingest", "--config", str(bad),
                       "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
                       "--out", str(tmp_path / "o.json"))
    assert code == EXIT_ERROR
    assert "not_a_real_knob" in err


def test_lift_summary(capsys, fixtures_dir, tmp_path):
    code, doc, _ = run(capsys, "lift",
                       "--config", str(fixtures_dir / "config_toy.json"),
                       "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
                       "--out", str(tmp_path / "corpus.jsonl"))
    assert code == EXIT_OK
    assert doc == {"accepted": 5, "rejected": 0, "failed": 0,
                   "rejection_rate": 0.0}


def test_threshold_command(capsys, fixtures_dir, tmp_path):
    out = tmp_path / "threshold.json"
    code, doc, _ = run(capsys, "threshold",
                       "--scores", str(fixtures_dir / "threshold_scores.json"),
                       "--out", str(out))
    assert code == EXIT_OK
    assert doc["tau"] == 0.78
    assert doc["tpr"] == 0.72
    assert doc["fpr"] == 0.038
    assert doc["fpr_cap_satisfied"] is True
    assert json.loads(out.read_text())["tau"] == 0.78


def test_metrics_command(capsys, tmp_path):
    code, doc, _ = run(capsys, "metrics", "--confusion", "6,2,9,3")
    assert code == EXIT_OK
    assert doc["precision"] == 0.75
    assert doc["recall"] == pytest.approx(2 / 3)
    assert doc["f1"] == pytest.approx(12 / 17)
    assert doc["fpr"] == pytest.approx(2 / 11)
    assert doc["mcc"] == pytest.approx(0.4923659639173309)
    assert doc["flagged"] == []

    code, _, err = run(capsys, "metrics", "--confusion", "1,2,3")
    assert code == EXIT_ERROR and "tp,fp,tn,fn" in err
    code, _, err = run(capsys, "metrics", "--confusion", "a,b,c,d")
    assert code == EXIT_ERROR


def test_embed_command_is_seeded(capsys, fixtures_dir, tmp_path):
    texts = tmp_path / "texts.json"
    texts.write_text(json.dumps({"a": "socket recv frame", "b": ""}),
                     encoding="utf-8")
    out1, out2, out3 = (tmp_path / n for n in ("e1.json", "e2.json", "e3.json"))
    code, doc, _ = run(capsys, "embed", "--texts", str(texts), "--out", str(out1))
    assert code == EXIT_OK
    assert doc == {"embedded": 2, "dimension": 384}
    run(capsys, "embed", "--texts", str(texts), "--out", str(out2))
    assert out1.read_bytes() == out2.read_bytes()
    run(capsys, "embed", "--texts", str(texts), "--seed", "7", "--out", str(out3))
    assert out1.read_bytes() != out3.read_bytes()
    vectors = json.loads(out1.read_text())
    assert set(vectors) == {"a", "b"}
    assert len(vectors["a"]) == 384


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


# --- full pipeline ------------------------------------------------------------

def test_report_toy_exit_and_ranking(capsys, toy_run):
    report = json.loads((toy_run / "toy_modbus.report.json").read_text())
    assert report["binary_id"] == "toy_modbus"
    assert report["corpus"] == {"accepted": 5, "rejected": 0, "failed": 0,
                                "total": 5, "rejection_rate": 0.0}
    assert report["stats"]["entities"] == 5
    assert report["stats"]["compression_ratio"] == 4.0
    ranking = report["risk"]["ranking"]
    assert ranking[0]["name"] == "write_coil"
    assert report["fingerprints"] is None


def test_report_firmware_raises_single_alert(capsys, firmware_run, fixtures_dir):
    report = json.loads((firmware_run / "firmware_update.report.json").read_text())
    assert report["fingerprints"]["alerts"] == ["planted_apt"]
    match = {m["fingerprint"]: m for m in report["fingerprints"]["matches"]}
    assert match["planted_apt"]["alert"] is True
    assert match["planted_apt"]["similarity"] == pytest.approx(0.94, abs=1e-6)
    assert match["decoy_apt"]["alert"] is False
    # the report command exposes the alert through its exit code
    code, doc, _ = run(capsys, "report",
                       "--config", str(fixtures_dir / "config_firmware.json"),
                       "--cpg", str(fixtures_dir / "firmware_update.cpg.json"),
                       "--outdir", str(firmware_run))
    assert code == EXIT_ALERTS
    assert doc == [{"binary_id": "firmware_update", "alerts": ["planted_apt"]}]


def test_report_is_repeatable_byte_for_byte(capsys, fixtures_dir, tmp_path):
    names = ["toy_modbus.cpg.json", "toy_modbus.corpus.jsonl",
             "toy_modbus.kg.json", "toy_modbus.embeddings.json",
             "toy_modbus.risk.json", "toy_modbus.report.json", "toy_modbus.dot"]
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        code = main(["report", "--config", str(fixtures_dir / "config_toy.json"),
                     "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
                     "--outdir", str(d)])
        capsys.readouterr()
        assert code == EXIT_OK
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


def test_manual_chain_equals_report_outputs(capsys, fixtures_dir, tmp_path, toy_run):
    """Each stage rereads only files, so the chained commands must
    reproduce the one-shot report outputs exactly."""
    cfg = str(fixtures_dir / "config_toy.json")
    b = tmp_path
    steps = [
        ["ingest", "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
         "--out", str(b / "toy_modbus.cpg.json")],
        ["lift", "--config", cfg, "--cpg", str(b / "toy_modbus.cpg.json"),
         "--out", str(b / "toy_modbus.corpus.jsonl")],
        ["build-ssckg", "--config", cfg, "--cpg", str(b / "toy_modbus.cpg.json"),
         "--corpus", str(b / "toy_modbus.corpus.jsonl"),
         "--out", str(b / "toy_modbus.kg.json")],
        ["forward", "--config", cfg, "--kg", str(b / "toy_modbus.kg.json"),
         "--out", str(b / "toy_modbus.embeddings.json")],
        ["score", "--config", cfg, "--kg", str(b / "toy_modbus.kg.json"),
         "--out", str(b / "toy_modbus.risk.json")],
        ["export-dot", "--config", cfg, "--kg", str(b / "toy_modbus.kg.json"),
         "--risk", str(b / "toy_modbus.risk.json"),
         "--out", str(b / "toy_modbus.dot")],
    ]
    for argv in steps:
        assert main(argv) == EXIT_OK
        capsys.readouterr()
    for name in ("toy_modbus.cpg.json", "toy_modbus.corpus.jsonl",
                 "toy_modbus.kg.json", "toy_modbus.embeddings.json",
                 "toy_modbus.risk.json", "toy_modbus.dot"):
        assert (b / name).read_bytes() == (toy_run / name).read_bytes(), name


def test_manual_match_equals_report_alerts(capsys, fixtures_dir, tmp_path,
                                           firmware_run):
    out = tmp_path / "alerts.json"
    code, doc, _ = run(capsys, "match",
                       "--config", str(fixtures_dir / "config_firmware.json"),
                       "--kg-embeddings",
                       str(firmware_run / "firmware_update.embeddings.json"),
                       "--repo", str(fixtures_dir / "fingerprints"),
                       "--out", str(out))
    assert code == EXIT_ALERTS
    assert doc["alerts"] == ["planted_apt"]
    assert out.read_bytes() == (
        firmware_run / "firmware_update.alerts.json").read_bytes()


def test_match_tau_override_silences_alert(capsys, fixtures_dir, firmware_run,
                                           tmp_path):
    code, doc, _ = run(capsys, "match",
                       "--kg-embeddings",
                       str(firmware_run / "firmware_update.embeddings.json"),
                       "--repo", str(fixtures_dir / "fingerprints"),
                       "--tau", "0.99",
                       "--out", str(tmp_path / "alerts.json"))
    assert code == EXIT_OK
    assert doc["alerts"] == []
    assert doc["matches"] == 2


def test_fingerprint_extract_and_self_match(capsys, firmware_run, tmp_path):
    emb = firmware_run / "firmware_update.embeddings.json"
    repo = tmp_path / "repo"
    repo.mkdir()
    code, doc, _ = run(capsys, "fingerprint", "extract",
                       "--embeddings", str(emb), "--ids", "3,4",
                       "--name", "self_probe", "--provenance", "test",
                       "--out", str(repo / "self_probe.json"))
    assert code == EXIT_OK
    assert doc == {"name": "self_probe", "nodes": 2}
    # embeddings extracted from the target itself match it perfectly
    code, doc, _ = run(capsys, "match", "--kg-embeddings", str(emb),
                       "--repo", str(repo), "--tau", "0.999",
                       "--out", str(tmp_path / "alerts.json"))
    assert code == EXIT_ALERTS
    assert doc["alerts"] == ["self_probe"]


def test_fingerprint_extract_rejects_unknown_ids(capsys, firmware_run, tmp_path):
    code, _, err = run(capsys, "fingerprint", "extract",
                       "--embeddings",
                       str(firmware_run / "firmware_update.embeddings.json"),
                       "--ids", "3,99", "--name", "x",
                       "--out", str(tmp_path / "x.json"))
    assert code == EXIT_ERROR
    assert "99" in err


def test_export_dot_without_risk(capsys, toy_run, tmp_path):
    out = tmp_path / "plain.dot"
    code, _, _ = run(capsys, "export-dot", "--kg",
                     str(toy_run / "toy_modbus.kg.json"), "--out", str(out))
    assert code == EXIT_OK
    text = out.read_text()
    assert text.startswith("digraph ssckg {")
    assert "risk=" not in text
    risky = (toy_run / "toy_modbus.dot").read_text()
    assert "risk=" in risky


def test_report_parallel_workers_identical_outputs(capsys, fixtures_dir, tmp_path):
    dirs = [tmp_path / "serial", tmp_path / "parallel"]
    cpgs = [str(fixtures_dir / "toy_modbus.cpg.json"),
            str(fixtures_dir / "diamond.cpg.json")]
    for d, workers in zip(dirs, ("1", "4")):
        code = main(["report", "--config", str(fixtures_dir / "config_toy.json"),
                     "--cpg", *cpgs, "--outdir", str(d), "--workers", workers])
        capsys.readouterr()
        assert code == EXIT_OK
    for name in ("toy_modbus.report.json", "diamond.report.json"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_report_rejects_bad_worker_count(capsys, fixtures_dir, tmp_path):
    code, _, err = run(capsys, "report",
                       "--config", str(fixtures_dir / "config_toy.json"),
                       "--cpg", str(fixtures_dir / "toy_modbus.cpg.json"),
                       "--outdir", str(tmp_path), "--workers", "0")
    assert code == EXIT_ERROR
    assert "workers" in err
