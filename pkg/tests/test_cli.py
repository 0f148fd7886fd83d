"""Command-line pipeline: config validation, exit codes, artifacts,
resumability, and rerun determinism."""
import json
import os

import pytest

from omegaprm.cli import RunConfig, main
from omegaprm.core import Question
from omegaprm.dataset import export_corpus_jsonl
from omegaprm.errors import ConfigError


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig.from_dict({})
        assert cfg.completer_kind == "sim"
        assert cfg.engine.k_rollouts == 8
        assert cfg.seed == 0

    def test_engine_section_applied(self):
        cfg = RunConfig.from_dict({"engine": {"k_rollouts": 4,
                                              "search_limit": 10}})
        assert cfg.engine.k_rollouts == 4
        assert cfg.engine.search_limit == 10

    @pytest.mark.parametrize("doc", [
        {"unknown_top": 1},
        {"engine": {"k": 8}},
        {"completer": {"kind": "oracle"}},
        {"completer": {"sim": {"error_prob": 0.1}}},
        {"train": {"optimizer": "adam"}},
        {"eval": {"bootstrap": True}},
        {"parallelism": 0},
        {"engine": {"alpha": 2.0}},
    ])
    def test_invalid_configs_rejected(self, doc):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(doc)

    def test_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 7, "output": "results"}))
        cfg = RunConfig.from_file(path)
        assert cfg.seed == 7
        assert cfg.output == "results"


def write_corpus(path, n_questions=6):
    questions = [
        Question(f"q{i:02d}", f"compute quantity number {i}", str(100 + i))
        for i in range(n_questions)
    ]
    chains = {
        q.id: [f"{q.id} part{j}" for j in range(1, 9)]  # 8 steps, 2 tokens
        for q in questions
    }
    export_corpus_jsonl(questions, path, chains)
    return questions


def write_config(tmp_path, out_name="out", seed=0):
    doc = {
        "corpus": str(tmp_path / "corpus.jsonl"),
        "output": str(tmp_path / out_name),
        "seed": seed,
        "filter_k": 16,
        "engine": {"search_limit": 20, "step_split_target": 4},
        "completer": {"kind": "sim", "sim": {"per_step_error_prob": 0.1}},
        "eval": {"k_max": 4, "n_resamples": 5, "pool_size": 8},
        "bench": {"budget": 2000},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc, indent=2))
    return path, doc


def run(cmd, config):
    return main([cmd, "--config", str(config)])


class TestExitCodes:
    def test_bad_config_is_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"frobnicate": True}))
        assert main(["filter", "--config", str(path)]) == 2

    def test_missing_corpus_is_2(self, tmp_path):
        config, _ = write_config(tmp_path)
        assert run("filter", config) == 2

    def test_generate_without_filter_is_3(self, tmp_path):
        write_corpus(tmp_path / "corpus.jsonl")
        config, _ = write_config(tmp_path)
        with pytest.raises(SystemExit) as err:
            run("generate", config)
        assert err.value.code == 3

    def test_export_without_trees_is_3(self, tmp_path):
        write_corpus(tmp_path / "corpus.jsonl")
        config, _ = write_config(tmp_path)
        with pytest.raises(SystemExit) as err:
            run("export", config)
        assert err.value.code == 3


@pytest.fixture
def pipeline(tmp_path):
    write_corpus(tmp_path / "corpus.jsonl")
    config, doc = write_config(tmp_path)
    return tmp_path, config, doc


class TestPipeline:
    def run_all(self, config):
        for cmd in ("filter", "generate", "export", "train", "eval", "bench"):
            assert run(cmd, config) == 0, cmd

    def test_end_to_end_artifacts(self, pipeline):
        tmp_path, config, doc = pipeline
        self.run_all(config)
        out = tmp_path / "out"
        for name in ("kept.jsonl", "filter_report.jsonl",
                     "generate_summary.json", "examples.jsonl", "pairs.jsonl",
                     "prm_model.json", "train_curve.json", "eval_report.json",
                     "eval_majority.csv", "eval_weighted.csv",
                     "bench_report.json"):
            assert (out / name).exists(), name
        assert (out / "trees").is_dir()
        # Every kept question has a serialized tree.
        kept = [json.loads(l)["id"]
                for l in (out / "kept.jsonl").read_text().splitlines()]
        assert kept
        for qid in kept:
            assert (out / "trees" / f"{qid}.json").exists()
        # The exported dataset is nonempty and well-formed.
        examples = (out / "examples.jsonl").read_text().splitlines()
        assert examples
        rec = json.loads(examples[0])
        assert set(rec) == {"question_id", "question", "prefix", "step",
                            "mc", "hard_label"}

    def test_generate_resumes(self, pipeline):
        tmp_path, config, doc = pipeline
        assert run("filter", config) == 0
        assert run("generate", config) == 0
        trees = sorted((tmp_path / "out" / "trees").glob("*.json"))
        stamps = {p.name: p.read_bytes() for p in trees}
        assert run("generate", config) == 0
        summary = json.loads(
            (tmp_path / "out" / "generate_summary.json").read_text()
        )
        assert all(q["status"] == "resumed" for q in summary["questions"])
        for p in trees:
            assert p.read_bytes() == stamps[p.name]

    def test_rerun_is_byte_identical(self, tmp_path):
        write_corpus(tmp_path / "corpus.jsonl")
        outputs = []
        for out_name in ("out_a", "out_b"):
            config, _ = write_config(tmp_path, out_name=out_name, seed=5)
            self.run_all(config)
            outputs.append(tmp_path / out_name)
        a, b = outputs
        for name in ("kept.jsonl", "examples.jsonl", "pairs.jsonl",
                     "prm_model.json", "eval_report.json",
                     "bench_report.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        for tree in sorted((a / "trees").glob("*.json")):
            assert tree.read_bytes() == (b / "trees" / tree.name).read_bytes()

    def test_seed_changes_results(self, tmp_path):
        write_corpus(tmp_path / "corpus.jsonl")
        config, _ = write_config(tmp_path, out_name="out_s0", seed=0)
        assert run("filter", config) == 0
        assert run("generate", config) == 0
        config2, _ = write_config(tmp_path, out_name="out_s1", seed=1)
        assert run("filter", config2) == 0
        assert run("generate", config2) == 0
        s0 = (tmp_path / "out_s0" / "generate_summary.json").read_bytes()
        s1 = (tmp_path / "out_s1" / "generate_summary.json").read_bytes()
        assert s0 != s1

    def test_output_override_flag(self, pipeline):
        tmp_path, config, doc = pipeline
        override = tmp_path / "elsewhere"
        assert main(["filter", "--config", str(config),
                     "--output", str(override)]) == 0
        assert (override / "kept.jsonl").exists()

    def test_parallel_matches_serial(self, pipeline):
        tmp_path, config, doc = pipeline
        assert run("filter", config) == 0
        assert run("generate", config) == 0
        doc2 = dict(doc, output=str(tmp_path / "out_par"), parallelism=4)
        config2 = tmp_path / "config_par.json"
        config2.write_text(json.dumps(doc2))
        assert run("filter", config2) == 0
        assert run("generate", config2) == 0
        serial = tmp_path / "out"
        parallel = tmp_path / "out_par"
        assert (serial / "kept.jsonl").read_bytes() == \
            (parallel / "kept.jsonl").read_bytes()
        for tree in sorted((serial / "trees").glob("*.json")):
            assert tree.read_bytes() == \
                (parallel / "trees" / tree.name).read_bytes()

    def test_pairwise_training_path(self, pipeline):
        tmp_path, config, doc = pipeline
        for cmd in ("filter", "generate", "export"):
            assert run(cmd, config) == 0
        doc2 = dict(doc, train={"objective": "pairwise", "epochs": 50})
        config2 = tmp_path / "config_pw.json"
        config2.write_text(json.dumps(doc2))
        assert run("train", config2) == 0
        model = json.loads((tmp_path / "out" / "prm_model.json").read_text())
        assert model["objective"] == "pairwise"
