"""Command-line interface: exit codes, JSON output, determinism, flag docs."""

import argparse
import json
import re
from pathlib import Path

import numpy as np
import pytest

from trajtransfer import cli
from trajtransfer.se3 import Pose


def write_cloud(path, center, n=40, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=0.02, size=(n, 3)) + np.array(center)
    lines = [str(n)] + [" ".join(repr(float(v)) for v in p) for p in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def write_trajectory(path, n=3):
    lines = []
    for i in range(n):
        pose = Pose(translation=np.array([0.3, 0.2, 0.25 - 0.02 * i]))
        row = pose.as_row()
        lines.append(" ".join([str(i)] + [repr(float(v)) for v in row] + ["0"]))
    Path(path).write_text("\n".join(lines) + "\n")


@pytest.fixture
def workdir(tmp_path):
    write_cloud(tmp_path / "cloud.txt", (0.4, 0.2, 0.05))
    write_trajectory(tmp_path / "traj.txt")
    return tmp_path


def ingest_one(workdir, demo_id="d1", description="open bottle"):
    return cli.main(
        [
            "ingest",
            "--dataset", str(workdir / "ds"),
            "--description", description,
            "--cloud", str(workdir / "cloud.txt"),
            "--trajectory", str(workdir / "traj.txt"),
            "--id", demo_id,
        ]
    )


class TestIngest:
    def test_valid_demo(self, workdir, capsys):
        assert ingest_one(workdir) == cli.EXIT_OK
        assert capsys.readouterr().out.strip() == "d1"
        assert (workdir / "ds" / "dataset.json").exists()

    def test_truncated_trajectory(self, workdir):
        (workdir / "traj.txt").write_text("0 0.1 0.2\n")
        assert ingest_one(workdir) == cli.EXIT_INPUT

    def test_duplicate_id(self, workdir):
        assert ingest_one(workdir) == cli.EXIT_OK
        write_cloud(workdir / "cloud.txt", (0.6, 0.3, 0.05), seed=9)
        assert ingest_one(workdir, demo_id="d1") == cli.EXIT_INPUT

    def test_malformed_cloud(self, workdir):
        (workdir / "cloud.txt").write_text("not a number\n")
        assert ingest_one(workdir) == cli.EXIT_INPUT


class TestRetrieve:
    def test_match(self, workdir, capsys):
        ingest_one(workdir)
        capsys.readouterr()
        code = cli.main(
            [
                "retrieve",
                "--dataset", str(workdir / "ds"),
                "--description", "open bottle",
                "--cloud", str(workdir / "cloud.txt"),
            ]
        )
        assert code == cli.EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["demo_id"] == "d1"
        assert out["similarity"] == pytest.approx(1.0, abs=1e-12)

    def test_unknown_skill(self, workdir):
        ingest_one(workdir)
        code = cli.main(
            [
                "retrieve",
                "--dataset", str(workdir / "ds"),
                "--description", "fold towel",
                "--cloud", str(workdir / "cloud.txt"),
            ]
        )
        assert code == cli.EXIT_RETRIEVAL

    def test_top_ranked_descending(self, workdir, capsys):
        ingest_one(workdir, demo_id="d1")
        write_cloud(workdir / "cloud2.txt", (0.55, 0.30, 0.05), seed=4)
        cli.main(
            [
                "ingest",
                "--dataset", str(workdir / "ds"),
                "--description", "open bottle",
                "--cloud", str(workdir / "cloud2.txt"),
                "--trajectory", str(workdir / "traj.txt"),
                "--id", "d2",
            ]
        )
        capsys.readouterr()
        code = cli.main(
            [
                "retrieve",
                "--dataset", str(workdir / "ds"),
                "--description", "open bottle",
                "--cloud", str(workdir / "cloud.txt"),
                "--top", "5",
            ]
        )
        assert code == cli.EXIT_OK
        ranking = json.loads(capsys.readouterr().out)
        assert [r["demo_id"] for r in ranking] == ["d1", "d2"]
        sims = [r["similarity"] for r in ranking]
        assert sims == sorted(sims, reverse=True)

    def test_missing_dataset(self, workdir):
        code = cli.main(
            [
                "retrieve",
                "--dataset", str(workdir / "nowhere"),
                "--description", "open bottle",
                "--cloud", str(workdir / "cloud.txt"),
            ]
        )
        assert code == cli.EXIT_INPUT


class TestRegister:
    def test_self_registration(self, workdir, capsys):
        ingest_one(workdir)
        capsys.readouterr()
        code = cli.main(
            [
                "register",
                "--dataset", str(workdir / "ds"),
                "--demo-id", "d1",
                "--cloud", str(workdir / "cloud.txt"),
            ]
        )
        assert code == cli.EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert abs(out["delta"][0]) < 1e-6 and abs(out["delta"][1]) < 1e-6
        assert out["fitness"] == 1.0

    def test_dump_aligned(self, workdir):
        ingest_one(workdir)
        prefix = str(workdir / "dump")
        code = cli.main(
            [
                "register",
                "--dataset", str(workdir / "ds"),
                "--demo-id", "d1",
                "--cloud", str(workdir / "cloud.txt"),
                "--dump-aligned", prefix,
            ]
        )
        assert code == cli.EXIT_OK
        assert Path(prefix + "_demo_aligned.txt").exists()
        assert Path(prefix + "_test.txt").exists()

    def test_unknown_demo(self, workdir):
        ingest_one(workdir)
        code = cli.main(
            [
                "register",
                "--dataset", str(workdir / "ds"),
                "--demo-id", "nope",
                "--cloud", str(workdir / "cloud.txt"),
            ]
        )
        assert code == cli.EXIT_INPUT


class TestGenScene:
    def test_scene_json(self, workdir, capsys):
        code = cli.main(
            ["gen-scene", "--family", "mug", "--seed", "4", "--cloud-out", str(workdir / "c.txt")]
        )
        assert code == cli.EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["category"] == "mug"
        assert len(out["object_pose"]) == 7
        assert (workdir / "c.txt").exists()


class TestGenAlignData:
    def test_export(self, workdir, capsys):
        ingest_one(workdir)
        capsys.readouterr()
        out_file = workdir / "align.txt"
        code = cli.main(
            [
                "gen-align-data",
                "--dataset", str(workdir / "ds"),
                "--demo-id", "d1",
                "--count", "5",
                "--output", str(out_file),
            ]
        )
        assert code == cli.EXIT_OK
        text = out_file.read_text()
        assert text.count("trajectory ") == 5


def eval_config(path, seed=3):
    cfg = {
        "mode": "dataset_size",
        "seed": seed,
        "repeats": 1,
        "families": ["mug", "tray"],
        "demos_per_task": [1],
    }
    Path(path).write_text(json.dumps(cfg))


class TestEvaluate:
    def test_minimal_run(self, workdir, capsys):
        eval_config(workdir / "cfg.json")
        code = cli.main(
            [
                "evaluate",
                "--config", str(workdir / "cfg.json"),
                "--output", str(workdir / "out"),
                "--jobs", "1",
            ]
        )
        assert code == cli.EXIT_OK
        csv = (workdir / "out" / "report.csv").read_text().splitlines()
        assert csv[0] == "label,k,n,phat,lo,hi"
        assert len(csv) == 3  # seen + unseen rows
        assert (workdir / "out" / "traces.jsonl").exists()

    def test_bad_diversity_config(self, workdir):
        Path(workdir / "cfg.json").write_text(
            json.dumps({"mode": "diversity", "diversity_splits": [[10, 14]]})
        )
        code = cli.main(
            ["evaluate", "--config", str(workdir / "cfg.json"), "--output", str(workdir / "out")]
        )
        assert code == cli.EXIT_INPUT

    def test_seed_determinism(self, workdir):
        eval_config(workdir / "cfg.json")
        for out in ("out1", "out2"):
            code = cli.main(
                [
                    "evaluate",
                    "--config", str(workdir / "cfg.json"),
                    "--output", str(workdir / out),
                    "--seed", "7",
                    "--jobs", "1",
                ]
            )
            assert code == cli.EXIT_OK
        assert (workdir / "out1" / "report.csv").read_bytes() == (
            workdir / "out2" / "report.csv"
        ).read_bytes()
        assert (workdir / "out1" / "traces.jsonl").read_bytes() == (
            workdir / "out2" / "traces.jsonl"
        ).read_bytes()

    def test_report_from_traces(self, workdir, capsys):
        eval_config(workdir / "cfg.json")
        cli.main(
            ["evaluate", "--config", str(workdir / "cfg.json"), "--output", str(workdir / "out")]
        )
        code = cli.main(
            [
                "report",
                "--traces", str(workdir / "out" / "traces.jsonl"),
                "--output", str(workdir / "rep"),
            ]
        )
        assert code == cli.EXIT_OK
        assert (workdir / "rep" / "report.csv").read_bytes() == (
            workdir / "out" / "report.csv"
        ).read_bytes()


def parser_flags() -> dict:
    """Mapping subcommand -> set of long option strings."""
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    out = {}
    for name, p in sub.choices.items():
        flags = set()
        for action in p._actions:
            for opt in action.option_strings:
                if opt.startswith("--") and opt != "--help":
                    flags.add(opt)
        out[name] = flags
    return out


class TestDocs:
    def test_readme_documents_every_flag(self):
        readme = Path(__file__).resolve().parents[1] / "README.md"
        text = readme.read_text()
        documented = set(re.findall(r"--[a-z][a-z-]*", text))
        for name, flags in parser_flags().items():
            assert name in text, f"subcommand {name} missing from README"
            missing = flags - documented
            assert not missing, f"{name}: flags not documented in README: {missing}"

    def test_readme_has_no_phantom_flags(self):
        readme = Path(__file__).resolve().parents[1] / "README.md"
        documented = set(re.findall(r"`--[a-z][a-z-]*", readme.read_text()))
        documented = {d.lstrip("`") for d in documented}
        accepted = set().union(*parser_flags().values()) | {"--jobs", "--help"}
        phantom = documented - accepted
        assert not phantom, f"README documents unknown flags: {phantom}"

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for name in parser_flags():
            assert name in out
