import json

import pytest

from ranklab.cli import (
    EXIT_CONFIG,
    EXIT_DEPENDENCY,
    PipelineConfig,
    analyze_domain_gap,
    main,
    run_pipeline,
)
from ranklab.errors import ConfigError, DependencyError
from ranklab.evaluation import read_qrels
from ranklab.sparse import InvertedIndex, coverage_at_k, search_topk
from ranklab.subword import SubwordVocab
from ranklab.synthetic import make_separable_corpus


def write_fixture_inputs(root, n_topics=4, docs_per_topic=6):
    docs, queries, qrels = make_separable_corpus(n_topics, docs_per_topic)
    corpus = root / "corpus.jsonl"
    with open(corpus, "w") as fh:
        for d in docs:
            fh.write(json.dumps(
                {"doc_id": d.doc_id, "title": d.title, "abstract": d.abstract}) + "\n")
    queries_path = root / "queries.tsv"
    with open(queries_path, "w") as fh:
        for q in queries:
            fh.write(f"{q.query_id}\t{q.raw_text}\n")
    qrels_path = root / "qrels.txt"
    with open(qrels_path, "w") as fh:
        for qid in qrels.query_ids():
            for doc_id, grade in sorted(qrels.judgments[qid].items()):
                fh.write(f"{qid} 0 {doc_id} {grade}\n")
    return corpus, queries_path, qrels_path


@pytest.fixture
def fixture_config(tmp_path):
    corpus, queries, qrels = write_fixture_inputs(tmp_path)
    return PipelineConfig(
        corpus_path=str(corpus),
        queries_path=str(queries),
        qrels_path=str(qrels),
        workdir=str(tmp_path / "work"),
        vocab_size=600,
        topk=20,
        depth=20,
        coverage_k=20,
        triples_count=8,
        dense_epochs=4,
        mlm_epochs=2,
        select_steps=4,
        seed=0,
    )


class TestConfig:
    def test_file_parse_and_overrides(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("# comment\nk1 = 1.2\ntopk = 30\nfusion = rrf\nresidual = true\n")
        config = PipelineConfig.from_file(path)
        assert config.k1 == 1.2
        assert config.topk == 30
        assert config.fusion == "rrf"
        assert config.residual is True

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("mystery = 1\n")
        with pytest.raises(ConfigError):
            PipelineConfig.from_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("topk = many\n")
        with pytest.raises(ConfigError):
            PipelineConfig.from_file(path)

    def test_range_validation(self):
        with pytest.raises(ConfigError):
            PipelineConfig(alpha=1.5).validate()
        with pytest.raises(ConfigError):
            PipelineConfig(mask_rate=0.0).validate()
        with pytest.raises(ConfigError):
            PipelineConfig(fusion="blend").validate()


class TestPipeline:
    def test_smoke_path_produces_run_and_report(self, fixture_config, tmp_path):
        outputs = run_pipeline(fixture_config, ["ingest", "index", "evaluate"])
        work = tmp_path / "work"
        assert (work / "run.trec").is_file()
        assert (work / "report.txt").is_file()
        assert (work / "report.jsonl").is_file()
        assert "evaluate" in outputs
        manifest = [json.loads(l) for l in (work / "manifest.jsonl").read_text().splitlines()]
        assert [m["stage"] for m in manifest] == ["ingest", "index", "evaluate"]
        listed = {path for m in manifest for path in m["outputs"]}
        for name in ("vocab.json", "index.bin", "run.trec", "report.txt", "report.jsonl"):
            assert str(work / name) in listed

    def test_rerank_without_ranker_is_dependency_error(self, fixture_config):
        run_pipeline(fixture_config, ["ingest", "index"])
        with pytest.raises(DependencyError):
            run_pipeline(fixture_config, ["rerank"])

    def test_evaluate_without_any_artifact_is_dependency_error(self, fixture_config):
        with pytest.raises(DependencyError):
            run_pipeline(fixture_config, ["evaluate"])

    def test_missing_input_is_config_error(self, fixture_config):
        import dataclasses

        broken = dataclasses.replace(fixture_config, corpus_path="nope.jsonl")
        with pytest.raises(ConfigError):
            run_pipeline(broken, ["ingest"])

    def test_unknown_stage_rejected(self, fixture_config):
        with pytest.raises(ConfigError):
            run_pipeline(fixture_config, ["shampoo"])

    def test_lock_conflict(self, fixture_config, tmp_path):
        work = tmp_path / "work"
        work.mkdir()
        (work / ".lock").write_text("12345")
        with pytest.raises(ConfigError, match="lock"):
            run_pipeline(fixture_config, ["ingest"])

    def test_full_pipeline_and_determinism(self, fixture_config, tmp_path):
        import dataclasses

        stages = ["ingest", "index", "synth-weak", "train-dense",
                  "select-train", "rerank", "evaluate"]
        artifacts = ["vocab.json", "index.bin", "weak_triples.jsonl",
                     "encoder.ckpt", "dense_index.bin", "ranker.ckpt",
                     "policy.json", "run.trec"]
        contents = []
        for name in ("w1", "w2"):
            config = dataclasses.replace(fixture_config, workdir=str(tmp_path / name))
            run_pipeline(config, stages)
            contents.append({a: (tmp_path / name / a).read_bytes() for a in artifacts})
        assert contents[0] == contents[1]

    def test_warm_start_requires_mlm_artifact(self, fixture_config):
        import dataclasses

        config = dataclasses.replace(fixture_config, warm_start=True)
        run_pipeline(config, ["ingest", "index", "synth-weak"])
        with pytest.raises(DependencyError):
            run_pipeline(config, ["train-dense"])
        run_pipeline(config, ["dapt", "train-dense"])


class TestAnalyze:
    def test_report_fields_and_delegation(self, fixture_config, tmp_path):
        run_pipeline(fixture_config, ["ingest", "index", "analyze"])
        work = tmp_path / "work"
        report = json.loads((work / "analysis.json").read_text())
        for field in ("n_documents", "n_queries", "n_judged_queries", "n_judgments",
                      "subword_ratio_queries", "subword_ratio_corpus", "coverage_at_k"):
            assert report[field] is not None

        # counts match line counts of the inputs
        assert report["n_documents"] == len(
            open(fixture_config.corpus_path).read().splitlines())
        assert report["n_queries"] == len(
            open(fixture_config.queries_path).read().splitlines())
        assert report["n_judgments"] == len(
            open(fixture_config.qrels_path).read().splitlines())

        # coverage field equals the sparse module's own measurement
        index = InvertedIndex.load(work / "index.bin")
        qrels = read_qrels(fixture_config.qrels_path)
        from ranklab.corpus import load_queries
        queries = load_queries(fixture_config.queries_path)
        run = {q.query_id: search_topk(index, q, fixture_config.coverage_k,
                                       fixture_config.k1, fixture_config.b)
               for q in queries}
        assert report["coverage_at_k"] == pytest.approx(
            coverage_at_k(run, qrels, fixture_config.coverage_k), abs=1e-12)


class TestMainExitCodes:
    def test_config_error_is_exit_2(self, tmp_path, capsys):
        code = main(["index", "--corpus", "missing.jsonl",
                     "--workdir", str(tmp_path / "w")])
        assert code == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_dependency_error_is_exit_3(self, tmp_path, capsys):
        corpus, queries, qrels = write_fixture_inputs(tmp_path)
        code = main(["rerank", "--corpus", str(corpus), "--queries", str(queries),
                     "--qrels", str(qrels), "--workdir", str(tmp_path / "w")])
        assert code == EXIT_DEPENDENCY

    def test_success_is_exit_0(self, tmp_path, capsys):
        corpus, queries, qrels = write_fixture_inputs(tmp_path)
        code = main(["pipeline", "--stages", "ingest,index,analyze",
                     "--corpus", str(corpus), "--queries", str(queries),
                     "--qrels", str(qrels), "--workdir", str(tmp_path / "w"),
                     "--set", "vocab_size=600", "--set", "coverage_k=20"])
        assert code == 0

    def test_flag_overrides_config_file(self, tmp_path):
        corpus, queries, qrels = write_fixture_inputs(tmp_path)
        config_file = tmp_path / "config.txt"
        config_file.write_text(
            f"corpus_path = {corpus}\nqueries_path = {queries}\n"
            f"qrels_path = {qrels}\nworkdir = {tmp_path / 'w'}\n"
            "vocab_size = 600\ncoverage_k = 999999\n")
        # flag must override the config file's absurd coverage depth
        code = main(["analyze", "--config", str(config_file), "--coverage-k", "20",
                     "--set", "vocab_size=600"])
        assert code == EXIT_DEPENDENCY  # analyze still needs vocab + index artifacts
        code = main(["pipeline", "--stages", "ingest,index", "--config", str(config_file)])
        assert code == 0
        code = main(["analyze", "--config", str(config_file), "--coverage-k", "20"])
        assert code == 0
        report = json.loads((tmp_path / "w" / "analysis.json").read_text())
        assert report["coverage_k"] == 20
