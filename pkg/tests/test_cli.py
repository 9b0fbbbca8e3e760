import dataclasses
import hashlib
import json

import pytest

from vte.annotation import save_records
from vte.cli import dispatch
from vte.corpus import CorpusSplit, Label, SplitName, compute_stats, load_split, save_split
from vte.metrics import read_relevance_sheet, write_relevance_sheet
from vte.synth import write_demo_workspace

from tests.helpers import make_instance, make_record


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return write_demo_workspace(tmp_path_factory.mktemp("ws"), seed=0, n_train=24)


def neutral_base(tmp_path):
    split = CorpusSplit(
        SplitName.VALIDATION,
        tuple(
            make_instance(f"p{i}", ["a", "dog", "runs"], Label.NEUTRAL)
            for i in range(4)
        ),
    )
    path = tmp_path / "base.jsonl"
    save_split(split, path)
    return path


def annotation_records(tmp_path):
    records = []
    # p0: entailment majority (2 of 3)
    for worker, label in (("w0", Label.ENTAILMENT), ("w1", Label.ENTAILMENT), ("w2", Label.NEUTRAL)):
        records.append(make_record("p0", worker, label, explanation=f"{worker} view"))
    # p1: three distinct labels -> ambiguous
    for worker, label in (("w0", Label.ENTAILMENT), ("w1", Label.NEUTRAL), ("w2", Label.CONTRADICTION)):
        records.append(make_record("p1", worker, label))
    # p2: incomplete (2 annotations) -> skipped with a warning
    for worker in ("w0", "w1"):
        records.append(make_record("p2", worker, Label.CONTRADICTION))
    path = tmp_path / "records.jsonl"
    save_records(records, path)
    return path


class TestAggregateCommand:
    def test_writes_corrected_split(self, tmp_path):
        base = neutral_base(tmp_path)
        records = annotation_records(tmp_path)
        out = tmp_path / "corrected.jsonl"
        code = dispatch(
            [
                "aggregate",
                "--records", str(records),
                "--base", str(base),
                "--out", str(out),
                "--report", str(tmp_path / "report.json"),
                "--outcomes-out", str(tmp_path / "outcomes.jsonl"),
                "--ambiguous-out", str(tmp_path / "ambiguous.jsonl"),
            ]
        )
        assert code == 0
        merged = load_split(out, SplitName.VALIDATION)
        by_id = merged.by_pair_id()
        assert by_id["p0"].label is Label.ENTAILMENT
        assert by_id["p0"].source.value == "corrected"
        assert len(by_id["p0"].explanations) == 2
        assert "p1" not in by_id  # ambiguous removed
        assert by_id["p2"].label is Label.NEUTRAL  # incomplete, untouched
        assert by_id["p3"].label is Label.NEUTRAL

        report = json.loads((tmp_path / "report.json").read_text())
        assert report["n_ambiguous"] == 1
        ambiguous = load_split(tmp_path / "ambiguous.jsonl", SplitName.VALIDATION)
        assert [i.pair_id for i in ambiguous] == ["p1"]

    def test_does_not_mutate_inputs_and_is_deterministic(self, tmp_path):
        base = neutral_base(tmp_path)
        records = annotation_records(tmp_path)
        before = (sha(base), sha(records))
        out1, out2 = tmp_path / "o1.jsonl", tmp_path / "o2.jsonl"
        for out in (out1, out2):
            assert dispatch(
                ["aggregate", "--records", str(records), "--base", str(base), "--out", str(out)]
            ) == 0
        assert (sha(base), sha(records)) == before
        assert out1.read_bytes() == out2.read_bytes()


class TestBuildCorpusCommand:
    def test_merge_and_attach(self, tmp_path):
        base = neutral_base(tmp_path)
        outcomes = tmp_path / "outcomes.jsonl"
        outcomes.write_text(
            json.dumps(
                {
                    "pair_id": "p0",
                    "decision": "majority",
                    "label": "contradiction",
                    "agreement": 3,
                    "majority_explanations": ["no dog", "not there", "absent"],
                }
            )
            + "\n"
            + json.dumps(
                {"pair_id": "p1", "decision": "ambiguous", "label": None,
                 "agreement": None, "majority_explanations": []}
            )
            + "\n",
            encoding="utf-8",
        )
        explanations = tmp_path / "expl.jsonl"
        explanations.write_text(
            json.dumps({"pair_id": "p2", "explanations": ["e1", "e2", "e3", "e4"]}) + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "built.jsonl"
        code = dispatch(
            [
                "build-corpus",
                "--base", str(base),
                "--outcomes", str(outcomes),
                "--explanations", str(explanations),
                "--out", str(out),
            ]
        )
        assert code == 0
        built = load_split(out, SplitName.VALIDATION).by_pair_id()
        assert built["p0"].label is Label.CONTRADICTION
        assert "p1" not in built
        assert built["p2"].explanations == ("e1", "e2", "e3")  # capped at 3


class TestStatsCommand:
    def test_counts_match_compute_stats(self, tmp_path, capsys):
        base = neutral_base(tmp_path)
        json_out = tmp_path / "stats.json"
        code = dispatch(
            ["stats", "--split", str(base), "--name", "validation", "--json", str(json_out)]
        )
        assert code == 0
        expected = compute_stats(load_split(base, SplitName.VALIDATION))
        emitted = json.loads(json_out.read_text())
        assert emitted == expected.to_record()
        assert str(expected.vocabulary_size) in capsys.readouterr().out


class TestUsageErrors:
    def test_alpha_out_of_range_is_exit_2(self, workspace, tmp_path):
        code = dispatch(
            [
                "train", "--model", "predict-explain",
                "--train", str(workspace / "train.jsonl"),
                "--val", str(workspace / "validation.jsonl"),
                "--features", str(workspace / "features"),
                "--alpha", "1.5",
                "--out", str(tmp_path / "m.ckpt"),
            ]
        )
        assert code == 2

    def test_unknown_flag_is_exit_2(self, tmp_path):
        assert dispatch(["stats", "--split", "x.jsonl", "--bogus"]) == 2

    def test_unknown_command_is_exit_2(self):
        assert dispatch(["frobnicate"]) == 2

    def test_missing_file_is_exit_1(self, tmp_path):
        assert dispatch(["stats", "--split", str(tmp_path / "absent.jsonl")]) == 1


def train_classifier(workspace, tmp_path, name, seed="0", epochs="2"):
    out = tmp_path / name
    code = dispatch(
        [
            "train", "--model", "classifier",
            "--train", str(workspace / "train.jsonl"),
            "--val", str(workspace / "validation.jsonl"),
            "--features", str(workspace / "features"),
            "--hidden-dim", "8", "--embed-dim", "8",
            "--batch-size", "8", "--max-epochs", epochs, "--patience", "3",
            "--seed", seed,
            "--out", str(out),
            "--history", str(tmp_path / (name + ".history.json")),
        ]
    )
    assert code == 0
    return out


class TestTrainCommand:
    def test_classifier_run_writes_checkpoint_and_history(self, workspace, tmp_path):
        out = train_classifier(workspace, tmp_path, "clf.ckpt")
        assert out.exists()
        history = json.loads((tmp_path / "clf.ckpt.history.json").read_text())
        assert history["stop_epoch"] >= 1
        assert len(history["epochs"]) == history["stop_epoch"]

    def test_identical_argv_and_seed_reproduce_bytes(self, workspace, tmp_path):
        a = train_classifier(workspace, tmp_path, "a.ckpt")
        b = train_classifier(workspace, tmp_path, "b.ckpt")
        assert a.read_bytes() == b.read_bytes()

    def test_expl_to_label_training(self, workspace, tmp_path):
        out = tmp_path / "e2l.ckpt"
        code = dispatch(
            [
                "train", "--model", "expl-to-label",
                "--train", str(workspace / "train.jsonl"),
                "--val", str(workspace / "validation.jsonl"),
                "--hidden-dim", "8", "--embed-dim", "8", "--mlp-dim", "8",
                "--batch-size", "8", "--max-epochs", "2",
                "--out", str(out),
            ]
        )
        assert code == 0
        assert out.exists()


@pytest.fixture(scope="module")
def explainable_checkpoint(workspace, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("gen")
    out = tmp / "pae.ckpt"
    code = dispatch(
        [
            "train", "--model", "predict-explain",
            "--train", str(workspace / "train.jsonl"),
            "--val", str(workspace / "validation.jsonl"),
            "--features", str(workspace / "features"),
            "--hidden-dim", "8", "--embed-dim", "8",
            "--decoder-embed-dim", "8", "--decoder-hidden-dim", "8",
            "--batch-size", "8", "--max-epochs", "1", "--alpha", "0.4",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


class TestGenerateAndAudit:
    def test_generate_writes_one_line_per_instance(self, workspace, explainable_checkpoint, tmp_path):
        out = tmp_path / "generated.jsonl"
        code = dispatch(
            [
                "generate",
                "--checkpoint", str(explainable_checkpoint),
                "--vocab", str(explainable_checkpoint) + ".vocab",
                "--split", str(workspace / "validation.jsonl"),
                "--name", "validation",
                "--features", str(workspace / "features"),
                "--width", "2", "--max-len", "6",
                "--out", str(out),
            ]
        )
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        split = load_split(workspace / "validation.jsonl", SplitName.VALIDATION)
        assert len(lines) == len(split)
        assert all({"pair_id", "predicted_label", "explanation"} <= set(l) for l in lines)

    def test_audit_sheet_then_score(self, workspace, explainable_checkpoint, tmp_path):
        generated = tmp_path / "generated.jsonl"
        dispatch(
            [
                "generate",
                "--checkpoint", str(explainable_checkpoint),
                "--vocab", str(explainable_checkpoint) + ".vocab",
                "--split", str(workspace / "validation.jsonl"),
                "--name", "validation",
                "--features", str(workspace / "features"),
                "--width", "1", "--max-len", "5",
                "--out", str(generated),
            ]
        )
        sheet = tmp_path / "sheet.tsv"
        code = dispatch(
            [
                "audit",
                "--generated", str(generated),
                "--split", str(workspace / "validation.jsonl"),
                "--name", "validation",
                "--sample-size", "3", "--seed", "1",
                "--out", str(sheet),
            ]
        )
        assert code == 0
        rows = read_relevance_sheet(sheet)
        for i, row in enumerate(rows):
            row["k"], row["n"] = str(i % 2), "1"
        filled = tmp_path / "filled.tsv"
        write_relevance_sheet(rows, filled)
        agg_out = tmp_path / "agg.json"
        assert dispatch(["audit", "--score", str(filled), "--out", str(agg_out)]) == 0
        aggregate = json.loads(agg_out.read_text())
        if rows:
            assert 0.0 <= aggregate["mean_score"] <= 1.0


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_override(self, workspace, tmp_path):
        config = tmp_path / "train.cfg"
        config.write_text(
            "# defaults for desk runs\n"
            "max-epochs = 1\nhidden-dim = 8\nembed-dim = 8\nbatch-size = 8\n",
            encoding="utf-8",
        )

        def run(name, extra=()):
            out = tmp_path / name
            history = tmp_path / (name + ".history.json")
            code = dispatch(
                [
                    "train", "--model", "classifier",
                    "--train", str(workspace / "train.jsonl"),
                    "--val", str(workspace / "validation.jsonl"),
                    "--features", str(workspace / "features"),
                    "--config", str(config),
                    "--out", str(out),
                    "--history", str(history),
                    *extra,
                ]
            )
            assert code == 0
            return json.loads(history.read_text())

        from_config = run("cfg.ckpt")
        assert from_config["stop_epoch"] == 1  # config max-epochs applies
        overridden = run("flag.ckpt", ["--max-epochs", "2"])
        assert overridden["stop_epoch"] == 2  # flag beats config

    def test_malformed_config_is_usage_error(self, tmp_path):
        config = tmp_path / "bad.cfg"
        config.write_text("this is not a key value line\n", encoding="utf-8")
        code = dispatch(
            ["stats", "--split", "whatever.jsonl", "--config", str(config)]
        )
        assert code == 2


class TestEvaluateCommand:
    def test_matrix_emitted(self, workspace, tmp_path, capsys):
        import dataclasses as dc

        ckpt_a = train_classifier(workspace, tmp_path, "sel_orig.ckpt", seed="0", epochs="1")
        ckpt_b = train_classifier(workspace, tmp_path, "sel_corr.ckpt", seed="1", epochs="1")

        # relabel the test split round-robin so every gold class is present
        split = load_split(workspace / "test.jsonl", SplitName.TEST)
        labels = [Label.ENTAILMENT, Label.NEUTRAL, Label.CONTRADICTION]
        relabeled = CorpusSplit(
            SplitName.TEST,
            tuple(
                dc.replace(inst, label=labels[i % 3])
                for i, inst in enumerate(split)
            ),
        )
        test_path = tmp_path / "test_relabel.jsonl"
        save_split(relabeled, test_path)

        out = tmp_path / "matrix.json"
        code = dispatch(
            [
                "evaluate",
                "--checkpoint-original", str(ckpt_a),
                "--checkpoint-corrected", str(ckpt_b),
                "--test-original", str(test_path),
                "--test-corrected", str(test_path),
                "--features", str(workspace / "features"),
                "--out", str(out),
            ]
        )
        assert code == 0
        matrix = json.loads(out.read_text())
        assert matrix["test-original/val-corrected"] is None
        filled = [v for v in matrix.values() if v is not None]
        assert len(filled) == 3
        assert "N/A" in capsys.readouterr().out
