"""End-to-end command line checks through main(argv)."""

import json

import pytest

from policyboot.cli import main


def run_cli(*argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    return code or 0


@pytest.fixture
def toy_csv(tmp_path):
    # scores under e = 0.5 come out to g = (2, -4, 6)
    path = tmp_path / "toy.csv"
    path.write_text(
        "y,t,x1\n1.0,1,0.1\n2.0,0,0.5\n3.0,1,0.9\n", encoding="utf-8"
    )
    return path


@pytest.fixture
def lin_class(tmp_path):
    path = tmp_path / "lin.toml"
    path.write_text('[class]\nkind = "linear"\ndims = [0]\n', encoding="utf-8")
    return path


DATA_FLAGS = ["--outcome", "y", "--arm", "t", "--covariates", "x1", "--propensity", "0.5"]


class TestValidateAndScores:
    def test_validate_passes(self, toy_csv, tmp_path):
        out = tmp_path / "v"
        code = run_cli("--out", str(out), "validate", str(toy_csv), *DATA_FLAGS)
        assert code == 0
        payload = json.loads((out / "overlap.json").read_text())
        assert payload["passed"] is True
        assert payload["violations"] == []

    def test_validate_flags_boundary_propensity(self, toy_csv, tmp_path):
        # validation reports rather than errors: exit stays 0, the report fails
        out = tmp_path / "v"
        code = run_cli(
            "--out", str(out), "validate", str(toy_csv),
            "--outcome", "y", "--arm", "t", "--covariates", "x1",
            "--propensity", "0.005", "--kappa", "0.01",
        )
        assert code == 0
        payload = json.loads((out / "overlap.json").read_text())
        assert payload["passed"] is False
        assert len(payload["violations"]) > 0
        # non-strict: same violations, but the report passes
        code = run_cli(
            "--out", str(out), "validate", str(toy_csv),
            "--outcome", "y", "--arm", "t", "--covariates", "x1",
            "--propensity", "0.005", "--kappa", "0.01", "--no-strict",
        )
        assert code == 0
        payload = json.loads((out / "overlap.json").read_text())
        assert payload["passed"] is True
        assert len(payload["violations"]) > 0

    def test_scores_stdout_json(self, toy_csv, capsys):
        code = run_cli("scores", str(toy_csv), *DATA_FLAGS)
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["g1"] == [2.0, -4.0, 6.0]
        assert payload["g_binary"] == [2.0, -4.0, 6.0]
        assert payload["z0"] == [0.0, 4.0, 0.0]

    def test_scores_csv_file(self, toy_csv, tmp_path):
        out = tmp_path / "s"
        code = run_cli("--out", str(out), "--format", "csv", "scores", str(toy_csv), *DATA_FLAGS)
        assert code == 0
        lines = (out / "scores.csv").read_text().strip().split("\n")
        assert lines[0] == "z0,z1,g0,g1,g_binary"
        assert len(lines) == 4

    def test_missing_file_is_a_data_error(self, tmp_path):
        code = run_cli("validate", str(tmp_path / "nope.csv"), *DATA_FLAGS)
        assert code == 3

    def test_bad_flag_is_a_usage_error(self, toy_csv):
        assert run_cli("validate", str(toy_csv), "--bogus") == 2


class TestEwm:
    def test_known_value(self, toy_csv, lin_class, capsys):
        code = run_cli(
            "ewm", str(toy_csv), *DATA_FLAGS, "--class-config", str(lin_class)
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert abs(payload["value"] - 2.0) < 1e-12
        assert payload["exact"] is True
        assert abs(payload["treated_share"] - 1.0 / 3.0) < 1e-12

    def test_json_and_toml_configs_agree(self, toy_csv, tmp_path, capsys):
        t = tmp_path / "c.toml"
        t.write_text('[class]\nkind = "linear"\ndims = [0]\n', encoding="utf-8")
        j = tmp_path / "c.json"
        j.write_text('{"class": {"kind": "linear", "dims": [0]}}', encoding="utf-8")
        run_cli("ewm", str(toy_csv), *DATA_FLAGS, "--class-config", str(t))
        out_t = capsys.readouterr().out
        run_cli("ewm", str(toy_csv), *DATA_FLAGS, "--class-config", str(j))
        out_j = capsys.readouterr().out
        assert out_t == out_j

    def test_bootstrap_needs_seed(self, toy_csv, lin_class):
        code = run_cli(
            "ewm", str(toy_csv), *DATA_FLAGS,
            "--class-config", str(lin_class), "--boot", "20",
        )
        assert code == 2

    def test_bootstrap_ci_present(self, toy_csv, lin_class, capsys):
        code = run_cli(
            "--seed", "5", "ewm", str(toy_csv), *DATA_FLAGS,
            "--class-config", str(lin_class), "--boot", "25",
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload["ci"]) == 2
        assert payload["n_boot"] == 25

    def test_unknown_class_kind(self, toy_csv, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text('[class]\nkind = "cubist"\n', encoding="utf-8")
        code = run_cli("ewm", str(toy_csv), *DATA_FLAGS, "--class-config", str(bad))
        assert code == 2


@pytest.fixture
def classes_cfg(tmp_path):
    path = tmp_path / "classes.toml"
    path.write_text(
        "[[classes]]\n"
        'label = "lin"\n'
        'kind = "linear"\n'
        "dims = [0]\n"
        "[[classes]]\n"
        'label = "null"\n'
        'kind = "finite"\n'
        "[[classes.policies]]\n"
        "arm = 0\n",
        encoding="utf-8",
    )
    return path


class TestNbpl:
    def run_once(self, toy_csv, classes_cfg, out):
        return run_cli(
            "--seed", "77", "--out", str(out),
            "nbpl", str(toy_csv), *DATA_FLAGS,
            "--classes-config", str(classes_cfg), "--draws", "4",
        )

    def test_outputs_and_determinism(self, toy_csv, classes_cfg, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert self.run_once(toy_csv, classes_cfg, out1) == 0
        assert self.run_once(toy_csv, classes_cfg, out2) == 0
        for name in ("run.jsonl", "summary.json", "comparisons.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        figs1 = sorted(p.name for p in (out1 / "figures").iterdir())
        assert "cdf_welfare_lin.csv" in figs1
        assert "cdf_diff_lin_vs_null.csv" in figs1
        for name in figs1:
            assert (out1 / "figures" / name).read_bytes() == (
                out2 / "figures" / name
            ).read_bytes()

    def test_null_class_summary_is_degenerate(self, toy_csv, classes_cfg, tmp_path):
        out = tmp_path / "r"
        self.run_once(toy_csv, classes_cfg, out)
        payload = json.loads((out / "summary.json").read_text())
        null = next(c for c in payload["classes"] if c["label"] == "null")
        assert null["value_median"] == 0.0
        assert null["value_ci"] == [0.0, 0.0]
        assert null["share_median"] == 0.0

    def test_requires_out_and_seed(self, toy_csv, classes_cfg, tmp_path):
        code = run_cli(
            "--seed", "1",
            "nbpl", str(toy_csv), *DATA_FLAGS,
            "--classes-config", str(classes_cfg), "--draws", "2",
        )
        assert code == 2
        code = run_cli(
            "--out", str(tmp_path / "x"),
            "nbpl", str(toy_csv), *DATA_FLAGS,
            "--classes-config", str(classes_cfg), "--draws", "2",
        )
        assert code == 2

    def test_with_ewm_rows(self, toy_csv, classes_cfg, tmp_path):
        out = tmp_path / "r"
        code = run_cli(
            "--seed", "77", "--out", str(out),
            "nbpl", str(toy_csv), *DATA_FLAGS,
            "--classes-config", str(classes_cfg), "--draws", "3", "--with-ewm",
        )
        assert code == 0
        payload = json.loads((out / "summary.json").read_text())
        lin = next(c for c in payload["classes"] if c["label"] == "lin")
        assert lin["ewm"] is not None
        assert abs(lin["ewm"]["value"] - 2.0) < 1e-12

    def test_compare_from_run(self, toy_csv, classes_cfg, tmp_path, capsys):
        out = tmp_path / "r"
        self.run_once(toy_csv, classes_cfg, out)
        code = run_cli("compare", str(out / "run.jsonl"), "-a", "lin", "-b", "null")
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["pr_greater"] + payload["pr_equal"] + payload["pr_less"] == 1.0
        assert payload["pr_less"] == 0.0  # null class can never win

    def test_compare_missing_run(self, tmp_path):
        code = run_cli("compare", str(tmp_path / "gone.jsonl"), "-a", "x", "-b", "y")
        assert code == 3


@pytest.fixture
def sel_experiment(tmp_path):
    path = tmp_path / "sel.toml"
    path.write_text(
        'kind = "selection"\n'
        "seed = 44\n"
        "ns = [30, 60]\n"
        "reps = 2\n"
        "draws = 25\n"
        "[dgp]\n"
        'design = "one_hot"\n'
        "taus = [1.0]\n"
        "noise_sd = 0.5\n"
        '[class_a]\nkind = "finite"\n[[class_a.policies]]\narm = 1\n'
        '[class_b]\nkind = "finite"\n[[class_b.policies]]\narm = 0\n',
        encoding="utf-8",
    )
    return path


@pytest.fixture
def rate_experiment(tmp_path):
    path = tmp_path / "rate.toml"
    path.write_text(
        'kind = "rate"\n'
        "seed = 46\n"
        "ns = [20, 40]\n"
        "reps = 2\n"
        "draws = 20\n"
        "check_lemma = true\n"
        "[dgp]\n"
        'design = "one_hot"\n'
        "taus = [0.8, 0.3]\n"
        "noise_sd = 1.0\n"
        '[class]\nkind = "subset"\nsize = 2\n',
        encoding="utf-8",
    )
    return path


class TestSimulate:
    def test_selection_run(self, sel_experiment, tmp_path):
        out = tmp_path / "sim"
        code = run_cli("--out", str(out), "simulate", str(sel_experiment))
        assert code == 0
        payload = json.loads((out / "selection.json").read_text())
        assert abs(payload["delta"] - 1.0) < 1e-12
        assert len(payload["points"]) == 2
        assert (out / "selection.csv").exists()

    def test_rate_run_with_lemma(self, rate_experiment, tmp_path):
        out = tmp_path / "sim"
        code = run_cli("--out", str(out), "simulate", str(rate_experiment))
        assert code == 0
        payload = json.loads((out / "rate.json").read_text())
        assert payload["lemma"]["checked"] == 2 * 2 * 20
        assert payload["lemma"]["violations"] == 0
        assert (out / "rate.csv").exists()

    def test_bundled_experiments_resolve(self):
        from policyboot.cli import _load_experiment

        for name in ("rate_smoke", "selection_smoke"):
            d = _load_experiment(name)
            assert d["kind"] in ("rate", "selection")
        from policyboot.errors import ConfigError

        with pytest.raises(ConfigError):
            _load_experiment("not_a_real_experiment")

    def test_invalid_reps_rejected(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text(
            'kind = "selection"\nseed = 1\nns = [10]\nreps = 0\ndraws = 5\n'
            '[dgp]\ndesign = "one_hot"\ntaus = [1.0]\n'
            '[class_a]\nkind = "finite"\n[[class_a.policies]]\narm = 1\n'
            '[class_b]\nkind = "finite"\n[[class_b.policies]]\narm = 0\n',
            encoding="utf-8",
        )
        code = run_cli("--out", str(tmp_path / "o"), "simulate", str(bad))
        assert code == 2

    def test_simulate_requires_out(self, sel_experiment):
        assert run_cli("simulate", str(sel_experiment)) == 2


class TestExportFigures:
    def test_pngs_from_artifacts(
        self, toy_csv, classes_cfg, sel_experiment, rate_experiment, tmp_path
    ):
        run_dir, sim_dir, fig_dir = tmp_path / "r", tmp_path / "s", tmp_path / "f"
        assert (
            run_cli(
                "--seed", "77", "--out", str(run_dir),
                "nbpl", str(toy_csv), *DATA_FLAGS,
                "--classes-config", str(classes_cfg), "--draws", "4",
            )
            == 0
        )
        assert run_cli("--out", str(sim_dir), "simulate", str(sel_experiment)) == 0
        assert run_cli("--out", str(sim_dir), "simulate", str(rate_experiment)) == 0
        code = run_cli(
            "--out", str(fig_dir), "export-figures",
            "--run", str(run_dir / "run.jsonl"),
            "--rate", str(sim_dir / "rate.json"),
            "--selection", str(sim_dir / "selection.json"),
        )
        assert code == 0
        for name in ("welfare_cdf.png", "diff_cdf.png", "rate.png", "selection.png"):
            body = (fig_dir / name).read_bytes()
            assert body[:8] == b"\x89PNG\r\n\x1a\n"
            assert len(body) > 1000

    def test_requires_an_input(self, tmp_path):
        assert run_cli("--out", str(tmp_path / "f"), "export-figures") == 2

    def test_missing_run_file(self, tmp_path):
        code = run_cli(
            "--out", str(tmp_path / "f"), "export-figures",
            "--run", str(tmp_path / "gone.jsonl"),
        )
        assert code == 3
