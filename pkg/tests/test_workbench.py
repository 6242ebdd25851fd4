import csv
import warnings

import numpy as np
import pytest

from sclbench.trainer import TrainConfig, train
from sclbench.workbench.cli import main
from sclbench.workbench.data import (export_tsv, ingest, load_splits, synth_corpus)
from sclbench.workbench.metrics import macro_f1
from sclbench.workbench.projection import project_2d, write_projection_csv


class TestIngest:
    def test_roundtrip(self, tmp_path):
        splits = synth_corpus(classes=3, size=120, seed=1, difficulty=0.5)
        path = tmp_path / "train.tsv"
        export_tsv(splits.train, path)
        back = ingest(path).corpus
        assert back.texts == splits.train.texts
        # class ids are assigned by first appearance, so compare by name
        orig = [splits.train.class_names[y] for y in splits.train.labels]
        got = [back.class_names[y] for y in back.labels]
        assert got == orig
        assert sorted(back.class_names) == sorted(splits.train.class_names)

    def test_malformed_lines_reported_with_numbers(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("# comment\npos\tgreat stuff\nno tab here\n\tmissing label\nneg\t\npos\tok\n",
                        encoding="utf-8")
        result = ingest(path)
        assert len(result.corpus.texts) == 2
        reasons = {m.number: m.reason for m in result.malformed}
        assert "tab" in reasons[3]
        assert "label" in reasons[4]
        assert "text" in reasons[5]

    def test_frozen_catalog_flags_unknown_class(self, tmp_path):
        path = tmp_path / "dev.tsv"
        path.write_text("pos\tgood\nmystery\thmm\n", encoding="utf-8")
        result = ingest(path, class_names=["pos", "neg"])
        assert result.corpus.class_names == ["pos", "neg"]
        assert any("unknown class" in m.reason for m in result.malformed)

    def test_header_skipped_duplicate_flagged(self, tmp_path):
        path = tmp_path / "h.tsv"
        path.write_text("label\ttext\npos\tfine\nlabel\ttext\n", encoding="utf-8")
        result = ingest(path)
        assert len(result.corpus.texts) == 1
        assert any("duplicate header" in m.reason for m in result.malformed)

    def test_all_invalid_raises(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("# nothing\n\n", encoding="utf-8")
        with pytest.raises(ValueError, match="no valid examples"):
            ingest(path)

    def test_load_splits_shares_catalog(self, tmp_path):
        splits = synth_corpus(classes=2, size=80, seed=0, difficulty=0.3)
        for name in ("train", "dev", "test"):
            export_tsv(getattr(splits, name), tmp_path / f"{name}.tsv")
        loaded = load_splits(tmp_path)
        assert loaded.dev.class_names == loaded.train.class_names
        assert loaded.test.class_names == loaded.train.class_names


class TestSynthCorpus:
    def test_deterministic(self):
        a = synth_corpus(classes=3, size=150, seed=9, difficulty=0.5)
        b = synth_corpus(classes=3, size=150, seed=9, difficulty=0.5)
        assert a.train.texts == b.train.texts
        assert np.array_equal(a.dev.labels, b.dev.labels)

    def test_split_proportions(self):
        splits = synth_corpus(classes=2, size=200, seed=0, difficulty=0.5)
        assert len(splits.train) == 160
        assert len(splits.dev) == 20 and len(splits.test) == 20

    def test_difficulty_zero_disjoint_vocabularies(self):
        splits = synth_corpus(classes=2, size=100, seed=0, difficulty=0.0)
        vocab_by_class = {}
        for t, y in zip(splits.train.texts, splits.train.labels):
            vocab_by_class.setdefault(int(y), set()).update(t.split())
        assert not (vocab_by_class[0] & vocab_by_class[1])

    def test_difficulty_one_all_shared(self):
        splits = synth_corpus(classes=2, size=100, seed=0, difficulty=1.0)
        tokens = {tok for t in splits.train.texts for tok in t.split()}
        assert all(tok.startswith("w") for tok in tokens)

    def test_validation(self):
        with pytest.raises(ValueError, match="classes"):
            synth_corpus(classes=1, size=100, seed=0, difficulty=0.5)
        with pytest.raises(ValueError, match="difficulty"):
            synth_corpus(classes=2, size=100, seed=0, difficulty=1.5)
        with pytest.raises(ValueError, match="too small"):
            synth_corpus(classes=5, size=20, seed=0, difficulty=0.5)

    def test_separable_corpus_is_learnable(self):
        splits = synth_corpus(classes=2, size=160, seed=3, difficulty=0.0)
        cfg = TrainConfig(method="ce", batch_size=8, learning_rate=5e-4, max_epochs=8,
                          patience=8, max_seq_len=16, d_h=32, num_layers=1,
                          num_heads=2, d_p=16, seed=0)
        record = train(cfg, splits)
        assert record.test_f1 >= 0.99

    def test_identical_distributions_near_chance(self):
        splits = synth_corpus(classes=2, size=200, seed=3, difficulty=1.0)
        cfg = TrainConfig(method="ce", batch_size=8, learning_rate=5e-4, max_epochs=3,
                          patience=3, max_seq_len=16, d_h=32, num_layers=1,
                          num_heads=2, d_p=16, seed=0)
        record = train(cfg, splits)
        assert record.test_f1 <= 0.8


class TestMacroF1:
    def test_hand_computed_binary_case(self):
        # gold (1,1,0,0), pred (1,0,0,0): class1 P=1,R=.5,F1=2/3;
        # class0 P=2/3,R=1,F1=0.8; macro = 11/15
        report = macro_f1([1, 1, 0, 0], [1, 0, 0, 0], 2)
        assert report.macro_f1 == pytest.approx(11 / 15, abs=1e-9)
        assert report.accuracy == pytest.approx(0.75)
        np.testing.assert_array_equal(report.confusion, [[2, 0], [1, 1]])

    def test_zero_support_class_counts_as_zero(self):
        report = macro_f1([0, 0], [0, 0], num_classes=3)
        assert report.per_class[1].f1 == 0.0 and report.per_class[2].f1 == 0.0
        assert report.macro_f1 == pytest.approx(1 / 3)

    def test_perfect_and_inverted(self):
        assert macro_f1([0, 1, 2], [0, 1, 2], 3).macro_f1 == 1.0
        assert macro_f1([0, 1], [1, 0], 2).macro_f1 == 0.0

    def test_matches_sklearn_100_random_cases(self):
        sklearn = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(0)
        for _ in range(100):
            k = int(rng.integers(2, 5))
            n = int(rng.integers(5, 40))
            gold = rng.integers(0, k, n)
            pred = rng.integers(0, k, n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                expected = sklearn.f1_score(gold, pred, labels=range(k),
                                            average="macro", zero_division=0)
            assert macro_f1(gold, pred, k).macro_f1 == pytest.approx(expected, abs=1e-9)

    def test_invariances(self):
        rng = np.random.default_rng(1)
        gold = rng.integers(0, 3, 30)
        pred = rng.integers(0, 3, 30)
        base = macro_f1(gold, pred, 3).macro_f1
        order = rng.permutation(30)
        assert macro_f1(gold[order], pred[order], 3).macro_f1 == pytest.approx(base)
        relabel = np.array([2, 0, 1])
        assert macro_f1(relabel[gold], relabel[pred], 3).macro_f1 == pytest.approx(base)

    def test_validation(self):
        with pytest.raises(ValueError, match="gold"):
            macro_f1([0, 1], [0], 2)
        with pytest.raises(ValueError, match="outside"):
            macro_f1([0, 3], [0, 1], 2)


class TestProjection:
    def test_planar_data_recovered_exactly(self):
        rng = np.random.default_rng(0)
        coords_true = rng.normal(size=(40, 2)) * np.array([3.0, 1.0])
        basis, _ = np.linalg.qr(rng.normal(size=(6, 2)))
        x = coords_true @ basis.T + rng.normal(size=6)  # embed + translate
        coords = project_2d(x)
        # same plane: distances between points preserved
        d_true = np.linalg.norm(coords_true[:, None] - coords_true[None, :], axis=2)
        d_got = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        np.testing.assert_allclose(d_got, d_true, atol=1e-8)

    def test_component_order_by_variance(self):
        x = project_2d(np.random.default_rng(1).normal(size=(100, 5)) * [5, 2, 1, 1, 1])
        assert x[:, 0].var() > x[:, 1].var()

    def test_matches_eigh_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 8))
        coords = project_2d(x)
        centered = x - x.mean(axis=0)
        _, vecs = np.linalg.eigh(centered.T @ centered / len(x))
        for k, v in enumerate((vecs[:, -1], vecs[:, -2])):
            got = coords[:, k] / np.linalg.norm(coords[:, k])
            want = (centered @ v) / np.linalg.norm(centered @ v)
            cosine = abs(float(got @ want))
            assert np.arccos(min(cosine, 1.0)) < 1e-4, k

    def test_translation_invariance(self):
        x = np.random.default_rng(3).normal(size=(30, 4))
        np.testing.assert_allclose(project_2d(x), project_2d(x + 100.0), atol=1e-6)

    def test_rank_one_zeroes_second_column(self):
        line = np.outer(np.arange(10.0), np.array([1.0, 2.0]))
        with pytest.warns(UserWarning, match="rank"):
            coords = project_2d(line)
        assert np.all(coords[:, 1] == 0.0)
        assert coords[:, 0].var() > 0

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            project_2d(np.ones((2, 5)))
        with pytest.raises(ValueError):
            project_2d(np.ones((5, 1)))

    def test_csv_roundtrip(self, tmp_path):
        coords = np.array([[1.5, -0.25], [0.0, 2.0], [-3.0, 0.125]])
        path = tmp_path / "proj.csv"
        write_projection_csv(coords, ["a", "b", "a"], path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["label_name"] for r in rows] == ["a", "b", "a"]
        back = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        np.testing.assert_array_equal(back, coords)


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """synth + one quick training run, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--classes", "2", "--size", "120", "--seed", "0",
                 "--difficulty", "0.0", "--out", str(data)]) == 0
    run = root / "run"
    assert main(["train", "--data", str(data), "--method", "scl", "--out", str(run),
                 "--max-epochs", "2", "--patience", "2", "--batch-size", "8",
                 "--lr", "5e-4", "--max-seq-len", "16", "--d-h", "32",
                 "--num-layers", "1", "--num-heads", "2", "--d-p", "16",
                 "--no-figures"]) == 0
    return root


class TestCli:
    def test_synth_writes_three_splits(self, cli_workspace):
        data = cli_workspace / "data"
        assert {(p.name) for p in data.glob("*.tsv")} == {"train.tsv", "dev.tsv", "test.tsv"}

    def test_train_writes_record_and_checkpoint(self, cli_workspace):
        run = cli_workspace / "run"
        assert (run / "run_scl.jsonl").exists()
        assert (run / "run_scl.npz").exists()

    def test_eval_exit_zero_and_report(self, cli_workspace, capsys):
        run = cli_workspace / "run"
        out = cli_workspace / "eval"
        code = main(["eval", "--checkpoint", str(run / "run_scl.npz"),
                     "--data", str(cli_workspace / "data" / "test.tsv"), "--out", str(out)])
        assert code == 0
        assert "macro-F1" in capsys.readouterr().out
        assert (out / "eval.tsv").read_text().startswith("class\tprecision")

    def test_project_writes_csv(self, cli_workspace):
        run = cli_workspace / "run"
        out = cli_workspace / "proj"
        code = main(["project", "--checkpoint", str(run / "run_scl.npz"),
                     "--data", str(cli_workspace / "data" / "dev.tsv"),
                     "--out", str(out), "--no-figures"])
        assert code == 0
        header = (out / "projection.csv").read_text().splitlines()[0]
        assert header == "x,y,label_name"

    def test_compare_grid(self, cli_workspace, capsys):
        out = cli_workspace / "cmp"
        code = main(["compare", str(cli_workspace / "run" / "run_scl.jsonl"),
                     "--out", str(out), "--no-figures"])
        assert code == 0
        text = (out / "compare.tsv").read_text()
        assert "SCL" in text and "Avg." in text

    def test_figures_rendered_by_default(self, cli_workspace):
        out = cli_workspace / "cmp_fig"
        code = main(["compare", str(cli_workspace / "run" / "run_scl.jsonl"),
                     "--out", str(out)])
        assert code == 0
        assert (out / "compare.png").stat().st_size > 0

    def test_usage_error_exit_one(self, capsys):
        assert main(["train", "--data", "x", "--method", "nonsense"]) == 1
        assert main(["no-such-command"]) == 1
        capsys.readouterr()

    def test_runtime_error_exit_two(self, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "missing.npz"),
                     "--data", str(tmp_path / "missing.tsv"), "--out", str(tmp_path)])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_out_dir_from_environment(self, cli_workspace, monkeypatch, capsys):
        target = cli_workspace / "env_out"
        monkeypatch.setenv("SCLBENCH_OUT", str(target))
        code = main(["compare", str(cli_workspace / "run" / "run_scl.jsonl"), "--no-figures"])
        assert code == 0
        assert (target / "compare.tsv").exists()
        capsys.readouterr()

    def test_sweep_data_grid_output(self, cli_workspace, capsys):
        out = cli_workspace / "sweep"
        code = main(["sweep-data", "--data", str(cli_workspace / "data"),
                     "--methods", "ce", "--fractions", "0.5,1.0", "--out", str(out),
                     "--max-epochs", "1", "--patience", "1", "--batch-size", "8",
                     "--max-seq-len", "16", "--d-h", "16", "--num-layers", "1",
                     "--num-heads", "2", "--d-p", "8", "--no-figures"])
        assert code == 0
        grid = (out / "data_efficiency.tsv").read_text()
        assert "50%" in grid and "100%" in grid
        assert len(list((out / "runs").glob("*.jsonl"))) == 2
        capsys.readouterr()
