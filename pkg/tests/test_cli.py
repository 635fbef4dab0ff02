import os

import numpy as np
import pytest

from genreg import ingest
from genreg.cli import main


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> register -> eval artifacts shared by the walkthrough tests."""
    root = tmp_path_factory.mktemp("ws")
    pairs = root / "pairs"
    code = run(["synth", "--out", str(pairs), "--n-pairs", "2",
                "--image-size", "32", "--points-per-m2", "200",
                "--n-boxes", "2", "--seed", "3"])
    assert code == 0
    return root, pairs


class TestSynth:
    def test_writes_manifest(self, workspace):
        _, pairs = workspace
        assert (pairs / "manifest.json").exists()
        assert (pairs / "pair_0000" / "cloud_p.ply").exists()

    def test_invalid_config_value_exits_2(self, tmp_path):
        code = run(["synth", "--out", str(tmp_path / "x"),
                    "--fusion-weight", "2.0"])
        assert code == 2


class TestRegisterEval:
    def test_register_then_eval(self, workspace):
        root, pairs = workspace
        out = root / "reg"
        code = run(["register", "--manifest", str(pairs / "manifest.json"),
                    "--mode", "geo-only", "--out", str(out),
                    "--image-size", "32", "--ransac-iters", "2000",
                    "--seed", "3"])
        assert code == 0
        assert (out / "report.csv").exists()

        code = run(["eval", "--manifest", str(pairs / "manifest.json"),
                    "--poses", str(out), "--image-size", "32",
                    "--out", str(root / "eval.csv")])
        assert code == 0
        assert (root / "eval.csv").exists()

    def test_missing_manifest_exits_3(self, tmp_path):
        code = run(["register", "--manifest", str(tmp_path / "no.json")])
        assert code == 3

    def test_missing_poses_exit_3(self, workspace):
        root, pairs = workspace
        empty = root / "no_poses"
        os.makedirs(empty, exist_ok=True)
        code = run(["eval", "--manifest", str(pairs / "manifest.json"),
                    "--poses", str(empty), "--image-size", "32"])
        assert code == 3

    def test_generative_mode_without_checkpoint_exits_3(self, workspace):
        _, pairs = workspace
        code = run(["register", "--manifest", str(pairs / "manifest.json"),
                    "--mode", "generative-fused", "--image-size", "32"])
        assert code == 3

    def test_workers_env_var(self, workspace, monkeypatch, tmp_path):
        root, pairs = workspace
        monkeypatch.setenv("GENREG_WORKERS", "2")
        code = run(["register", "--manifest", str(pairs / "manifest.json"),
                    "--mode", "geo-only", "--out", str(tmp_path / "w2"),
                    "--image-size", "32", "--ransac-iters", "2000",
                    "--seed", "3"])
        assert code == 0
        baseline = root / "reg" / "report.csv"
        if baseline.exists():
            assert (tmp_path / "w2" / "report.csv").read_bytes() == \
                baseline.read_bytes()


class TestProject:
    def test_round_trip(self, workspace, tmp_path):
        _, pairs = workspace
        depth_out = tmp_path / "d.pgm"
        code = run(["project", "cloud-to-depth",
                    "--input", str(pairs / "pair_0000" / "cloud_p.ply"),
                    "--out", str(depth_out), "--image-size", "32"])
        assert code == 0
        cloud_out = tmp_path / "c.ply"
        code = run(["project", "depth-to-cloud", "--input", str(depth_out),
                    "--out", str(cloud_out), "--image-size", "32"])
        assert code == 0
        assert cloud_out.exists()


class TestExtractFuse:
    def test_extract_and_fuse(self, workspace, tmp_path):
        _, pairs = workspace
        cloud = str(pairs / "pair_0000" / "cloud_p.ply")
        geo = tmp_path / "geo.fmap"
        code = run(["extract", "--input", cloud, "--out", str(geo)])
        assert code == 0
        # reuse the geometric file as a stand-in color descriptor input
        fused = tmp_path / "fused.fmap"
        code = run(["fuse", "--cloud", cloud, "--geo", str(geo),
                    "--rgb", str(geo), "--out", str(fused),
                    "--color-dim", "8"])
        assert code == 0
        loaded = ingest.load_external_descriptors(
            fused, ingest.load_ply(cloud))
        assert loaded.dim == 33 + 8


class TestReport:
    def test_report_from_csv(self, workspace, capsys):
        root, _ = workspace
        csv_path = root / "reg" / "report.csv"
        if not csv_path.exists():
            pytest.skip("register test has not produced a report yet")
        code = run(["report", "--csv", str(csv_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "rotation" in out or "geodesic" in out

    def test_missing_csv_exits_3(self, tmp_path):
        code = run(["report", "--csv", str(tmp_path / "no.csv")])
        assert code == 3


class TestTrainCli:
    def test_train_on_tiny_corpus(self, tmp_path):
        corpus = tmp_path / "corpus"
        code = run(["synth", "--out", str(corpus), "--corpus",
                    "--n-pairs", "2", "--image-size", "16",
                    "--points-per-m2", "200", "--n-boxes", "1", "--seed", "4"])
        assert code == 0
        ck = tmp_path / "ck.grdm"
        code = run(["train", "--corpus-dir", str(corpus), "--out", str(ck),
                    "--image-size", "16", "--latent-channels", "2",
                    "--train-steps", "3", "--batch-size", "2", "--seed", "4",
                    "--log", str(tmp_path / "train.log")])
        assert code == 0
        assert ck.exists()
        assert (tmp_path / "train.log").exists()
