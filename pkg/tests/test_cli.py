"""CLI flows: subcommands, configuration precedence, help coverage."""
from __future__ import annotations

import json
import warnings

import pytest

from taxrec.cli import build_parser, main, resolve_config


def run_cli(args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return main(args, **kwargs)


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    # Keep ambient env from leaking into precedence tests.
    for key in (
        "TAXREC_LLM_BASE_URL",
        "TAXREC_LLM_MODEL",
        "TAXREC_LLM_API_KEY",
        "TAXREC_EMBED_BASE_URL",
        "TAXREC_CACHE_DIR",
    ):
        monkeypatch.delenv(key, raising=False)
    return tmp_path


SMALL_SYNTH = [
    "--dataset", "synthetic", "--n-items", "40", "--n-users", "12", "--per-user", "10",
]


class TestTaxonomyCommand:
    def test_generate_then_cached(self, workdir, capsys):
        assert run_cli(["taxonomy", "--domain", "book", "--provider", "mock"]) == 0
        out = capsys.readouterr().out
        assert "generated taxonomy" in out
        assert "10 features" in out
        assert "genre" in out

        assert run_cli(["taxonomy", "--domain", "book", "--provider", "mock"]) == 0
        assert "cached" in capsys.readouterr().out

    def test_http_provider_without_base_url_fails(self, workdir, capsys):
        code = run_cli(["taxonomy", "--domain", "book", "--provider", "http"])
        assert code == 1
        assert "base URL" in capsys.readouterr().err


class TestCategorizeCommand:
    def test_requires_taxonomy_first(self, workdir, capsys):
        code = run_cli(["categorize", "--provider", "mock", *SMALL_SYNTH])
        assert code == 1
        assert "taxonomy" in capsys.readouterr().err

    def test_categorize_synthetic(self, workdir, capsys):
        run_cli(["taxonomy", "--domain", "book", "--provider", "mock"])
        code = run_cli(["categorize", "--provider", "mock", *SMALL_SYNTH])
        out = capsys.readouterr().out
        assert code == 0
        assert "coverage 100.00%" in out
        assert (workdir / ".taxrec-cache" / "book" / "items.jsonl").exists()

    def test_bad_dataset_path(self, workdir, capsys):
        run_cli(["taxonomy", "--domain", "movie", "--provider", "mock"])
        code = run_cli(
            ["categorize", "--provider", "mock", "--dataset", "movielens", "--data-dir", "missing"]
        )
        assert code == 1


class TestRecommendCommand:
    def _prepare(self, workdir):
        run_cli(["taxonomy", "--domain", "book", "--provider", "mock"])
        run_cli(["categorize", "--provider", "mock", *SMALL_SYNTH])

    def test_topk_table(self, workdir, capsys):
        self._prepare(workdir)
        capsys.readouterr()
        code = run_cli(
            ["recommend", "--provider", "mock", *SMALL_SYNTH,
             "--ids", "s0000,s0001,s0002", "--k", "10"]
        )
        out = capsys.readouterr().out
        assert code == 0
        rows = [line for line in out.splitlines() if line.strip() and line.split()[0].isdigit()]
        assert len(rows) == 10
        scores = [float(line.split()[2]) for line in rows]
        assert scores == sorted(scores, reverse=True)

    def test_no_taxonomy_prompt_is_raw_titles(self, workdir, capsys):
        self._prepare(workdir)
        capsys.readouterr()
        code = run_cli(
            ["recommend", "--provider", "mock", *SMALL_SYNTH,
             "--ids", "s0000,s0001", "--no-taxonomy", "--verbose"]
        )
        out = capsys.readouterr().out
        assert code == 0
        prompt = out.split("--- prompt ---")[1].split("--- raw output ---")[0]
        assert "taxonomy" not in prompt.lower()
        assert "The" in prompt  # synthetic titles present

    def test_unknown_id_named(self, workdir, capsys):
        self._prepare(workdir)
        code = run_cli(
            ["recommend", "--provider", "mock", *SMALL_SYNTH, "--ids", "s0000,ghost42"]
        )
        assert code == 1
        assert "ghost42" in capsys.readouterr().err

    def test_ids_file(self, workdir, capsys):
        self._prepare(workdir)
        ids_file = workdir / "ids.txt"
        ids_file.write_text("s0000\ns0001\n")
        code = run_cli(
            ["recommend", "--provider", "mock", *SMALL_SYNTH, "--ids-file", str(ids_file)]
        )
        assert code == 0


EVAL_ARGS = [
    "evaluate", "--provider", "mock", *SMALL_SYNTH,
    "--n", "25", "--seed", "7", "--repeats", "1",
]


class TestEvaluateCommand:
    def test_three_method_rows(self, workdir, capsys):
        code = run_cli(EVAL_ARGS + ["--methods", "taxrec,direct,popularity", "--out", "run1"])
        out = capsys.readouterr().out
        assert code == 0
        table = (workdir / "run1" / "table.txt").read_text()
        for name in ("taxrec", "direct", "popularity"):
            assert name in table
        payload = json.loads((workdir / "run1" / "report.json").read_text())
        assert set(payload["reports"][0]["per_method"]) == {"taxrec", "direct", "popularity"}
        assert payload["config"]["seed"] == 7
        assert "out" not in payload["config"]

    def test_avgemb_method_runs_offline(self, workdir):
        code = run_cli(EVAL_ARGS + ["--methods", "avgemb", "--out", "run-avg"])
        assert code == 0

    def test_deterministic_report_bytes(self, workdir):
        assert run_cli(EVAL_ARGS + ["--out", "runA"]) == 0
        assert run_cli(EVAL_ARGS + ["--out", "runB"]) == 0
        bytes_a = (workdir / "runA" / "report.json").read_bytes()
        bytes_b = (workdir / "runB" / "report.json").read_bytes()
        assert bytes_a == bytes_b

    def test_feature_count_sweep_columns(self, workdir):
        code = run_cli(
            EVAL_ARGS + ["--sweep", "feature-count", "--values", "5,10,15,20", "--out", "sweep1"]
        )
        assert code == 0
        payload = json.loads((workdir / "sweep1" / "report.json").read_text())
        labels = [report["label"] for report in payload["reports"]]
        assert labels == [
            "feature_count=5", "feature_count=10", "feature_count=15", "feature_count=20",
        ]

    def test_ablation_sweep_cells(self, workdir):
        code = run_cli(EVAL_ARGS + ["--sweep", "ablation", "--out", "sweep2"])
        assert code == 0
        payload = json.loads((workdir / "sweep2" / "report.json").read_text())
        labels = [report["label"] for report in payload["reports"]]
        assert labels == [
            "component_ablation=full",
            "component_ablation=no_tax",
            "component_ablation=no_match",
        ]
        assert all(report["error"] is None for report in payload["reports"])

    def test_prompt_variant_sweep_default_values(self, workdir):
        code = run_cli(EVAL_ARGS + ["--sweep", "prompt-variant", "--out", "sweep3"])
        assert code == 0
        payload = json.loads((workdir / "sweep3" / "report.json").read_text())
        assert len(payload["reports"]) == 4
        assert all(report["error"] is None for report in payload["reports"])

    def test_external_results_merge(self, workdir):
        pool_target = "s0001"
        external = {
            "method": "frozen-sota",
            "instances": [],
        }
        # Build instances for every sampled sequence by reusing the builder.
        from taxrec.cli import load_dataset, resolve_config as rc
        from taxrec.evaluation import build_movie_sequences

        parser = build_parser()
        args = parser.parse_args(EVAL_ARGS + ["--out", "ext"])
        cfg = rc(args, env={})
        pool, interactions = load_dataset(cfg)
        sequences = build_movie_sequences(interactions, pool, sample_n=25, seed=7)
        external["instances"] = [
            {
                "user_id": seq.user_id,
                "target_id": seq.target.id,
                "ranking": [[seq.target.id, 1.0]] + [[f"zz{n}", 0.5] for n in range(9)],
            }
            for seq in sequences
        ]
        path = workdir / "external.json"
        path.write_text(json.dumps(external))
        code = run_cli(EVAL_ARGS + ["--external", str(path), "--out", "ext"])
        assert code == 0
        payload = json.loads((workdir / "ext" / "report.json").read_text())
        assert payload["reports"][0]["per_method"]["frozen-sota"]["recall@1"] == 1.0


class TestConfigPrecedence:
    def _namespace(self, **kwargs):
        parser = build_parser()
        args = parser.parse_args(kwargs.pop("argv"))
        return args

    def test_file_then_env_then_flags(self, tmp_path):
        config_file = tmp_path / "cfg.json"
        config_file.write_text(json.dumps({"cache_dir": "from-file", "model": "file-model"}))

        args = self._namespace(argv=["taxonomy", "--config", str(config_file)])
        cfg = resolve_config(args, env={})
        assert cfg.cache_dir == "from-file"

        cfg = resolve_config(args, env={"TAXREC_CACHE_DIR": "from-env"})
        assert cfg.cache_dir == "from-env"
        assert cfg.model == "file-model"

        args = self._namespace(
            argv=["taxonomy", "--config", str(config_file), "--cache-dir", "from-flag"]
        )
        cfg = resolve_config(args, env={"TAXREC_CACHE_DIR": "from-env"})
        assert cfg.cache_dir == "from-flag"

    def test_env_vars_recognized(self):
        args = self._namespace(argv=["taxonomy"])
        cfg = resolve_config(
            args,
            env={
                "TAXREC_LLM_BASE_URL": "http://llm",
                "TAXREC_LLM_MODEL": "m1",
                "TAXREC_LLM_API_KEY": "k1",
                "TAXREC_EMBED_BASE_URL": "http://emb",
                "TAXREC_CACHE_DIR": "cache",
            },
        )
        assert (cfg.base_url, cfg.model, cfg.api_key) == ("http://llm", "m1", "k1")
        assert (cfg.embed_base_url, cfg.cache_dir) == ("http://emb", "cache")

    def test_unknown_config_key_rejected(self, tmp_path):
        config_file = tmp_path / "cfg.json"
        config_file.write_text(json.dumps({"nonsense": 1}))
        args = self._namespace(argv=["taxonomy", "--config", str(config_file)])
        with pytest.raises(Exception, match="nonsense"):
            resolve_config(args, env={})

    def test_domain_defaults_per_dataset(self):
        args = self._namespace(argv=["evaluate", "--dataset", "movielens"])
        assert resolve_config(args, env={}).domain == "movie"
        args = self._namespace(argv=["evaluate", "--dataset", "synthetic"])
        assert resolve_config(args, env={}).domain == "book"

    def test_provenance_excludes_output_and_secrets(self):
        args = self._namespace(argv=["evaluate", "--out", "somewhere", "--api-key", "hush"])
        data = resolve_config(args, env={}).provenance()
        assert "out" not in data and "api_key" not in data


class TestHelpCoverage:
    @pytest.mark.parametrize(
        "command,flags",
        [
            ("taxonomy", ["--provider", "--mock-seed", "--cache-dir", "--domain", "--config"]),
            ("categorize", ["--dataset", "--data-dir", "--n-items", "--max-workers"]),
            ("recommend", ["--ids", "--ids-file", "--k", "--no-taxonomy", "--matcher", "--verbose"]),
            (
                "evaluate",
                ["--n", "--seed", "--repeats", "--ks", "--methods", "--sweep", "--values",
                 "--external", "--out", "--label", "--history-titles", "--rec-titles",
                 "--feature-count", "--max-in-flight", "--embed-base-url"],
            ),
        ],
    )
    def test_every_flag_in_help(self, command, flags, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args([command, "--help"])
        help_text = capsys.readouterr().out
        for flag in flags:
            assert flag in help_text
