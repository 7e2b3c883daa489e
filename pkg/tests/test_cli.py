import json
from pathlib import Path

import numpy as np
import pytest

from opclass.cli import (
    corpus_from_cache,
    corpus_to_cache,
    load_cached_corpus,
    main,
)
from opclass.config import RunConfig, config_from_mapping, load_config, override_config
from opclass.corpus import generate_synthetic_corpus
from opclass.errors import ConfigError


def write_config(path: Path, **keys) -> Path:
    lines = []
    for name, value in keys.items():
        if isinstance(value, str):
            lines.append(f'{name} = "{value}"')
        elif isinstance(value, (list, tuple)):
            lines.append(f"{name} = {list(value)}")
        else:
            lines.append(f"{name} = {value}")
    file = path / "run.toml"
    file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return file


def small_setup(tmp_path, **extra):
    """Config for a fast 2-family run plus its materialized corpus."""
    keys = dict(
        corpus_dir=str(tmp_path / "corpus"),
        artifact_dir=str(tmp_path / "artifacts"),
        seed=5,
        svm_epochs=100,
        synth_classes=2,
        synth_samples=6,
        synth_seq_len=40,
        synth_vocab=10,
    )
    keys.update(extra)
    cfg = write_config(tmp_path, **keys)
    assert main(["synth", "--config", str(cfg)]) == 0
    assert main(["ingest", "--config", str(cfg)]) == 0
    return cfg


class TestConfig:
    def test_defaults_match_reference_table(self):
        defaults = RunConfig()
        table = {
            "svm_c": 1.0,
            "knn_k": 3,
            "tree_max_depth": 20,
            "cnn_dropout": 0.3,
            "cnn_lr": 0.001,
            "cnn_epochs": 10,
            "cnn_seq_len": 512,
            "cnn_kernel": 5,
            "cnn_channels1": 64,
            "cnn_channels2": 128,
            "cnn_hidden": 128,
            "test_fraction": 0.2,
            "ngram_orders": (1, 2),
            "pipeline_order": "paper-faithful",
        }
        for key, value in table.items():
            assert getattr(defaults, key) == value, key

    def test_load_round_trip(self, tmp_path):
        cfg = write_config(tmp_path, model="tree", seed=9, test_fraction=0.3, ngram_orders=[1, 2, 3])
        config = load_config(cfg)
        assert config.model == "tree"
        assert config.seed == 9
        assert config.ngram_orders == (1, 2, 3)

    def test_unknown_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path, mystery=1)
        with pytest.raises(ConfigError, match="mystery"):
            load_config(cfg)

    def test_bad_enum_rejected(self):
        with pytest.raises(ConfigError, match="model"):
            config_from_mapping({"model": "forest"})

    def test_boolean_not_an_integer(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"seed": True})

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"test_fraction": 1.5})
        with pytest.raises(ConfigError):
            config_from_mapping({"cnn_dropout": 1.0})
        with pytest.raises(ConfigError):
            config_from_mapping({"knn_k": 0})

    def test_ngram_orders_must_increase(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"ngram_orders": [2, 1]})

    def test_invalid_toml_rejected(self, tmp_path):
        file = tmp_path / "run.toml"
        file.write_text("model = \n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(file)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_override_ignores_none(self):
        config = override_config(RunConfig(), model=None, seed=7)
        assert config.model == "svm"
        assert config.seed == 7

    def test_override_revalidates(self):
        with pytest.raises(ConfigError):
            override_config(RunConfig(), model="forest")


class TestSynth:
    def test_writes_conformant_filenames(self, tmp_path):
        cfg = write_config(
            tmp_path,
            corpus_dir=str(tmp_path / "corpus"),
            synth_classes=2,
            synth_samples=10,
            synth_seq_len=20,
            synth_vocab=8,
        )
        assert main(["synth", "--config", str(cfg)]) == 0
        names = sorted(p.name for p in (tmp_path / "corpus").iterdir())
        assert len(names) == 20
        assert names[0] == "class0_000.opcode"
        assert names[-1] == "class1_009.opcode"

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(
            tmp_path,
            corpus_dir=str(tmp_path / "corpus"),
            synth_classes=2,
            synth_samples=3,
            synth_seq_len=15,
            synth_vocab=6,
        )
        main(["synth", "--config", str(cfg)])
        first = {p.name: p.read_bytes() for p in (tmp_path / "corpus").iterdir()}
        main(["synth", "--config", str(cfg)])
        second = {p.name: p.read_bytes() for p in (tmp_path / "corpus").iterdir()}
        assert first == second


class TestIngest:
    def test_manifest_counts(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        for fam, n in (("fama", 3), ("famb", 3)):
            for i in range(n):
                (corpus / f"{fam}_{i:03d}.opcode").write_text("mov\npush\n")
        out = tmp_path / "artifacts"
        assert main(["ingest", str(corpus), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["families"] == {"fama": 3, "famb": 3}
        assert manifest["total"] == 6
        assert manifest["skipped"] == 0

    def test_malformed_file_counted_as_skipped(self, tmp_path):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        (corpus / "fama_001.opcode").write_text("mov\n")
        (corpus / "fama_002.opcode").write_text("ret\n")
        (corpus / "badname.opcode").write_text("mov\n")
        out = tmp_path / "artifacts"
        assert main(["ingest", str(corpus), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["total"] == 2
        assert manifest["skipped"] == 1

    def test_empty_dir_exits_2_naming_directory(self, tmp_path, capsys):
        corpus = tmp_path / "nothing"
        corpus.mkdir()
        assert main(["ingest", str(corpus), "--out", str(tmp_path / "a")]) == 2
        assert str(corpus) in capsys.readouterr().err

    def test_cache_round_trips_the_corpus(self, tmp_path):
        cfg = small_setup(tmp_path)
        config = load_config(cfg)
        cached = load_cached_corpus(config.artifact_dir)
        direct = generate_synthetic_corpus(2, 6, 40, 10, seed=5)
        assert cached.samples == direct.samples
        assert cached.class_index == direct.class_index

    def test_cache_codec_round_trip(self):
        corpus = generate_synthetic_corpus(2, 3, 10, 6, seed=0)
        assert corpus_from_cache(corpus_to_cache(corpus)).samples == corpus.samples

    def test_json_flag_prints_manifest(self, tmp_path, capsys):
        small_setup(tmp_path)
        cfg = tmp_path / "run.toml"
        capsys.readouterr()
        assert main(["ingest", "--config", str(cfg), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["total"] == 12


class TestTrain:
    def test_svm_learns_synthetic_families(self, tmp_path, capsys):
        cfg = small_setup(tmp_path)
        capsys.readouterr()
        assert main(["train", "--config", str(cfg), "--model", "svm"]) == 0
        out = capsys.readouterr().out
        assert "accuracy" in out
        doc = json.loads((tmp_path / "artifacts" / "metrics.json").read_text())
        assert doc["model"] == "svm"
        assert doc["accuracy"] > 0.9
        assert (tmp_path / "artifacts" / "model.json").exists()
        assert (tmp_path / "artifacts" / "features.json").exists()

    def test_voting_reports_member_accuracy(self, tmp_path, capsys):
        cfg = small_setup(tmp_path)
        assert main(["train", "--config", str(cfg), "--model", "voting"]) == 0
        assert "member accuracy" in capsys.readouterr().out
        doc = json.loads((tmp_path / "artifacts" / "metrics.json").read_text())
        assert set(doc["member_accuracy"]) == {"svm", "knn", "tree"}

    def test_identical_runs_are_byte_identical(self, tmp_path):
        cfg = small_setup(tmp_path)
        main(["train", "--config", str(cfg)])
        arts = tmp_path / "artifacts"
        first = {p.name: p.read_bytes() for p in arts.iterdir()}
        main(["train", "--config", str(cfg)])
        second = {p.name: p.read_bytes() for p in arts.iterdir()}
        assert first == second

    def test_leak_free_order_recorded(self, tmp_path):
        cfg = small_setup(tmp_path)
        assert main(["train", "--config", str(cfg), "--order", "leak-free"]) == 0
        doc = json.loads((tmp_path / "artifacts" / "metrics.json").read_text())
        assert doc["pipeline_order"] == "leak-free"

    def test_missing_cache_exits_1(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            corpus_dir=str(tmp_path / "corpus"),
            artifact_dir=str(tmp_path / "artifacts"),
        )
        assert main(["train", "--config", str(cfg)]) == 1
        assert "ingest" in capsys.readouterr().err

    def test_json_flag_prints_metrics_document(self, tmp_path, capsys):
        cfg = small_setup(tmp_path)
        capsys.readouterr()
        assert main(["train", "--config", str(cfg), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["classes"] == ["class0", "class1"]

    def test_cnn_path_writes_checkpoint_and_sidecar(self, tmp_path):
        cfg = small_setup(
            tmp_path,
            model="cnn",
            cnn_seq_len=16,
            cnn_epochs=2,
            cnn_batch_size=8,
            cnn_channels1=3,
            cnn_channels2=4,
            cnn_hidden=8,
        )
        assert main(["train", "--config", str(cfg)]) == 0
        arts = tmp_path / "artifacts"
        assert (arts / "model.ckpt").exists()
        sidecar = json.loads((arts / "model.ckpt.json").read_text())
        assert sidecar["classes"] == ["class0", "class1"]
        assert sidecar["token_index"]
        assert len(sidecar["loss_history"]) == 2
        doc = json.loads((arts / "metrics.json").read_text())
        assert doc["model"] == "cnn"

    def test_cnn_ngram_input_uses_featurizer(self, tmp_path):
        cfg = small_setup(
            tmp_path,
            model="cnn",
            cnn_input="ngram",
            cnn_epochs=2,
            cnn_batch_size=8,
            cnn_channels1=3,
            cnn_channels2=4,
            cnn_hidden=8,
        )
        assert main(["train", "--config", str(cfg)]) == 0
        arts = tmp_path / "artifacts"
        assert (arts / "features.json").exists()
        sidecar = json.loads((arts / "model.ckpt.json").read_text())
        assert sidecar["token_index"] is None


class TestPredict:
    def overfit_tree(self, tmp_path):
        cfg = small_setup(tmp_path, model="tree", test_fraction=0.2)
        main(["train", "--config", str(cfg)])
        return load_config(cfg)

    def test_training_file_maps_to_its_own_family(self, tmp_path, capsys):
        config = self.overfit_tree(tmp_path)
        target = str(Path(config.corpus_dir) / "class1_002.opcode")
        model = str(Path(config.artifact_dir) / "model.json")
        capsys.readouterr()
        assert main(["predict", target, "--model", model]) == 0
        line = capsys.readouterr().out.strip()
        path, family, score = line.split("\t")
        assert path == target
        assert family == "class1"
        assert 0.0 <= float(score) <= 1.0

    def test_directory_lines_in_lexicographic_order(self, tmp_path, capsys):
        config = self.overfit_tree(tmp_path)
        probe = tmp_path / "probe"
        probe.mkdir()
        for name in ("e_0.opcode", "a_0.opcode", "c_0.opcode", "b_0.opcode", "d_0.opcode"):
            (probe / name).write_text("mov\npush\n")
        model = str(Path(config.artifact_dir) / "model.json")
        capsys.readouterr()
        assert main(["predict", str(probe), "--model", model]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5
        paths = [line.split("\t")[0] for line in lines]
        assert paths == sorted(paths)

    def test_empty_file_skipped_with_log(self, tmp_path, capsys):
        config = self.overfit_tree(tmp_path)
        probe = tmp_path / "probe"
        probe.mkdir()
        (probe / "good_0.opcode").write_text("mov\n")
        (probe / "bad_0.opcode").write_text("")
        model = str(Path(config.artifact_dir) / "model.json")
        capsys.readouterr()
        assert main(["predict", str(probe), "--model", model]) == 0
        captured = capsys.readouterr()
        assert len(captured.out.strip().splitlines()) == 1
        assert "bad_0.opcode" in captured.err

    def test_all_files_bad_exits_2(self, tmp_path, capsys):
        config = self.overfit_tree(tmp_path)
        probe = tmp_path / "probe"
        probe.mkdir()
        (probe / "bad_0.opcode").write_text("")
        model = str(Path(config.artifact_dir) / "model.json")
        assert main(["predict", str(probe), "--model", model]) == 2

    def test_incompatible_artifact_exits_1(self, tmp_path, capsys):
        config = self.overfit_tree(tmp_path)
        model_path = Path(config.artifact_dir) / "model.json"
        doc = json.loads(model_path.read_text())
        doc["version"] = 99
        model_path.write_text(json.dumps(doc))
        target = str(Path(config.corpus_dir) / "class0_000.opcode")
        assert main(["predict", target, "--model", str(model_path)]) == 1

    def test_cnn_checkpoint_predicts(self, tmp_path, capsys):
        cfg = small_setup(
            tmp_path,
            model="cnn",
            cnn_seq_len=16,
            cnn_epochs=2,
            cnn_batch_size=8,
            cnn_channels1=3,
            cnn_channels2=4,
            cnn_hidden=8,
        )
        main(["train", "--config", str(cfg)])
        config = load_config(cfg)
        target = str(Path(config.corpus_dir) / "class0_000.opcode")
        model = str(Path(config.artifact_dir) / "model.ckpt")
        capsys.readouterr()
        assert main(["predict", target, "--model", model]) == 0
        line = capsys.readouterr().out.strip()
        _, family, score = line.split("\t")
        assert family in ("class0", "class1")
        assert 0.0 < float(score) <= 1.0

    def test_json_flag_emits_documents(self, tmp_path, capsys):
        config = self.overfit_tree(tmp_path)
        target = str(Path(config.corpus_dir) / "class0_000.opcode")
        model = str(Path(config.artifact_dir) / "model.json")
        capsys.readouterr()
        assert main(["predict", target, "--model", model, "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc[0]["path"] == target
