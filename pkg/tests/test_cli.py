import json

import pytest

from foolhd import cli, corpus, experiment


def _config(args):
    return cli.build_config(cli.build_parser().parse_args(args))


def test_synth_writes_corpus(tmp_path):
    out_dir = tmp_path / "corpus"
    code = cli.main(["synth", "--out-dir", str(out_dir), "--n-speakers", "2",
                     "--clips-per-speaker", "2", "--seed", "4"])
    assert code == 0
    manifest = corpus.load_manifest(out_dir)
    assert len(manifest) == 4
    assert [e.clip_id for e in manifest.split("test")] == ["spk00_001", "spk01_001"]


def test_synth_reads_config_defaults(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("seed: 2\npaths:\n  corpus_dir: data\ncorpus:\n  n_speakers: 2\n  clips_per_speaker: 3\n"
                   "  test_clips_per_speaker: 1\n")
    assert cli.main(["synth", "--config", str(cfg)]) == 0
    assert len(corpus.load_manifest(tmp_path / "data")) == 6


def test_synth_zero_flags_are_not_replaced_by_config(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("seed: 2\ncorpus:\n  n_speakers: 3\n  clips_per_speaker: 3\n")
    assert cli.main(["synth", "--config", str(cfg), "--n-speakers", "0"]) == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "ContractViolation"
    assert "got 0" in payload["message"]
    assert not (tmp_path / "corpus").exists()


def test_missing_config_reports_json_error(tmp_path, capsys):
    code = cli.main(["attack", "--config", str(tmp_path / "absent.yaml"), "--seed", "1"])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "FileNotFoundError"
    assert payload["stage"] is None
    assert "absent.yaml" in payload["message"]


def test_missing_corpus_reports_stage(tmp_path, capsys):
    code = cli.main(["attack", "fgsm", "--seed", "1", "--corpus-dir", str(tmp_path / "nowhere"),
                     "--output-dir", str(tmp_path / "run")])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "StageError"
    assert payload["stage"] == "config"


def test_missing_seed_is_a_config_error(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(experiment.SEED_ENV_VAR, raising=False)
    assert cli.main(["train", "--corpus-dir", str(tmp_path)]) == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "ConfigError"


def test_unknown_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as info:
        cli.main(["fool"])
    assert info.value.code == 2


def test_targeted_mode_doubles_iterations(monkeypatch):
    monkeypatch.delenv(experiment.SEED_ENV_VAR, raising=False)
    assert _config(["attack", "--seed", "1"]).echo()["attack"]["iterations"] == 500
    assert _config(["attack", "--seed", "1", "--mode", "targeted"]).echo()["attack"]["iterations"] == 1000
    assert _config(["attack", "foolhd-t", "--seed", "1", "--m", "50"]).echo()["attack"]["iterations"] == 50


def test_flags_override_config_file(tmp_path, monkeypatch):
    monkeypatch.setenv(experiment.SEED_ENV_VAR, "8")
    cfg_file = tmp_path / "exp.yaml"
    cfg_file.write_text("seed: 2\nworkers: 3\nattack:\n  method: bim\n  epsilon: 0.002\n")
    cfg = _config(["attack", "fgsm", "--config", str(cfg_file), "--epsilon", "0.004", "--limit", "5"])
    assert cfg.seed == 8
    assert cfg.workers == 3
    assert cfg.limit == 5
    assert cfg.attack.method == "fgsm"
    assert cfg.echo()["attack"]["epsilon"] == 0.004
    assert _config(["attack", "--config", str(cfg_file), "--seed", "1"]).seed == 1


def test_path_flags_are_stored_relative_to_config(tmp_path):
    cfg_file = tmp_path / "exp.yaml"
    cfg_file.write_text("seed: 2\n")
    cfg = _config(["attack", "--config", str(cfg_file), "--corpus-dir", str(tmp_path / "data")])
    assert cfg.echo()["paths"]["corpus_dir"] == "data"
    assert cfg.manifest_path.resolve() == (tmp_path / "data" / corpus.MANIFEST_NAME).resolve()


def test_report_renders_results(tmp_path, capsys):
    from foolhd import metrics

    record = metrics.ClipRecord("spk00_001", 0, 0, 1, None, True, 0.2, -0.1, 3, 20.0, 1.0, 0.01)
    experiment.write_results_csv([record], tmp_path / experiment.RESULTS_NAME)
    assert cli.main(["report", "--results", str(tmp_path), "--output", str(tmp_path / "agg.json")]) == 0
    out = capsys.readouterr().out
    assert "Untargeted success rate: 1.000" in out
    assert json.loads((tmp_path / "agg.json").read_text(encoding="utf-8"))["S"] == 1.0

    assert cli.main(["report", "--summarize", str(tmp_path / "agg.json"), "--text-output", str(tmp_path / "agg.txt")]) == 0
    assert "Clips: 1" in (tmp_path / "agg.txt").read_text(encoding="utf-8")
