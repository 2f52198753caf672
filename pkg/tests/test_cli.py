"""Command-line interface tests: every subcommand plus error handling."""

import json

import pytest

from synthetic import two_moons_dataset

from confprop.cli import main
from confprop.harness import export_csv


@pytest.fixture()
def moons_csv(tmp_path):
    ds = two_moons_dataset(n=120, seed=9)
    path = tmp_path / "moons.csv"
    export_csv(ds, str(path))
    return ds, path


def run_config_file(tmp_path, data_path, seeds=(0, 1)):
    cfg = {
        "dataset": {"path": str(data_path), "format": "csv"},
        "fractions": [0.05, 0.65, 0.30],
        "seeds": list(seeds),
        "output_dir": str(tmp_path / "results"),
        "regimes": [
            {
                "name": "self",
                "regime": "self_training",
                "n_iterations": 2,
                "learner": {"kind": "mlp", "hidden_sizes": [8, 4], "epochs": 5},
            },
            {
                "name": "conf08",
                "regime": "conf_fixed",
                "tau": 0.8,
                "n_iterations": 2,
                "learner": {"kind": "mlp", "hidden_sizes": [8, 4], "epochs": 5},
                "tsne": {"perplexity": 10.0, "n_iter": 250},
            },
        ],
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSplitCommand:
    def test_writes_index_files(self, tmp_path, moons_csv, capsys):
        ds, data = moons_csv
        out = tmp_path / "split"
        code = main(
            [
                "split",
                str(data),
                "--fractions",
                "0.05,0.65,0.30",
                "--seed",
                "3",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        s = [int(v) for v in (out / "s.txt").read_text().split()]
        u = [int(v) for v in (out / "u.txt").read_text().split()]
        t = [int(v) for v in (out / "t.txt").read_text().split()]
        assert sorted(s + u + t) == list(range(ds.n))
        assert len(s) == 6

    def test_missing_dataset_diagnostic(self, tmp_path, capsys):
        code = main(["split", str(tmp_path / "nope.csv")])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestProjectCommand:
    def test_writes_embedding(self, tmp_path, moons_csv):
        ds, data = moons_csv
        out = tmp_path / "proj"
        code = main(
            [
                "project",
                str(data),
                "--perplexity",
                "10",
                "--iters",
                "250",
                "--seed",
                "0",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = (out / "embedding.csv").read_text().strip().splitlines()
        assert lines[0] == "id,x,y"
        assert len(lines) == ds.n + 1

    def test_oversized_perplexity_rejected(self, tmp_path, moons_csv):
        _, data = moons_csv
        code = main(["project", str(data), "--perplexity", "300", "--out", str(tmp_path / "p")])
        assert code == 2


class TestPropagateCommand:
    def test_forest_output(self, tmp_path, moons_csv, capsys):
        ds, data = moons_csv
        proj = tmp_path / "proj"
        assert (
            main(
                [
                    "project",
                    str(data),
                    "--perplexity",
                    "10",
                    "--iters",
                    "250",
                    "--out",
                    str(proj),
                ]
            )
            == 0
        )
        seeds_path = tmp_path / "seeds.csv"
        chosen = [0, 1, 2, 3]
        rows = ["index,label"] + [f"{i},{int(ds.labels[i])}" for i in chosen]
        seeds_path.write_text("\n".join(rows) + "\n")
        out = tmp_path / "forest"
        code = main(
            [
                "propagate",
                "--embedding",
                str(proj / "embedding.csv"),
                "--seeds",
                str(seeds_path),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = (out / "forest.csv").read_text().strip().splitlines()
        assert lines[0] == "id,label,cost,rival_cost,confidence"
        assert len(lines) == ds.n + 1
        confs = [float(l.split(",")[4]) for l in lines[1:]]
        assert all(0.5 <= c <= 1.0 for c in confs)

    def test_single_class_seeds_rejected(self, tmp_path, moons_csv):
        _, data = moons_csv
        proj = tmp_path / "proj"
        main(["project", str(data), "--perplexity", "10", "--iters", "250", "--out", str(proj)])
        seeds_path = tmp_path / "seeds.csv"
        seeds_path.write_text("index,label\n0,0\n1,0\n")
        code = main(
            [
                "propagate",
                "--embedding",
                str(proj / "embedding.csv"),
                "--seeds",
                str(seeds_path),
                "--out",
                str(tmp_path / "f"),
            ]
        )
        assert code == 2


class TestRunAndReport:
    def test_run_emits_archive(self, tmp_path, moons_csv):
        _, data = moons_csv
        cfg = run_config_file(tmp_path, data)
        code = main(["run", "--config", str(cfg)])
        assert code == 0
        out = tmp_path / "results"
        records = (out / "records.jsonl").read_text().strip().splitlines()
        assert len(records) == 2 * 2 * 2
        assert (out / "aggregate.csv").exists()
        assert (out / "curves" / "conf08_kappa.csv").exists()

    def test_report_rederives_aggregate(self, tmp_path, moons_csv):
        _, data = moons_csv
        cfg = run_config_file(tmp_path, data)
        main(["run", "--config", str(cfg)])
        out = tmp_path / "results"
        report_out = tmp_path / "rereport"
        code = main(
            [
                "report",
                "--records",
                str(out / "records.jsonl"),
                "--out",
                str(report_out),
            ]
        )
        assert code == 0
        assert (report_out / "aggregate.csv").read_bytes() == (
            out / "aggregate.csv"
        ).read_bytes()

    def test_run_deterministic(self, tmp_path, moons_csv):
        _, data = moons_csv
        cfg = run_config_file(tmp_path, data)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r1")]) == 0
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r2")]) == 0
        r1 = (tmp_path / "r1" / "records.jsonl").read_bytes()
        r2 = (tmp_path / "r2" / "records.jsonl").read_bytes()
        assert r1 == r2

    def test_regime_filter_and_overrides(self, tmp_path, moons_csv):
        _, data = moons_csv
        cfg = run_config_file(tmp_path, data)
        out = tmp_path / "filtered"
        code = main(
            [
                "run",
                "--config",
                str(cfg),
                "--regime",
                "conf08",
                "--tau",
                "0.7",
                "--seed",
                "1",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        rows = [
            json.loads(l)
            for l in (out / "records.jsonl").read_text().strip().splitlines()
        ]
        assert {r["regime"] for r in rows} == {"conf08"}
        assert {r["seed"] for r in rows} == {1}
        assert all(r["tau"] == 0.7 for r in rows)
        assert len(rows) == 2  # one seed, one regime, two iterations

    def test_unknown_regime_rejected(self, tmp_path, moons_csv, capsys):
        _, data = moons_csv
        cfg = run_config_file(tmp_path, data)
        code = main(["run", "--config", str(cfg), "--regime", "nope"])
        assert code == 2
        assert "not in config" in capsys.readouterr().err

    def test_bad_config_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        code = main(["run", "--config", str(bad)])
        assert code == 2
        assert "error:" in capsys.readouterr().err
