"""The command line front end, driven through main(argv)."""

import json

import numpy as np
import pytest

from guidepth import DepthMap, read_pfm, synth_scene, write_pfm
from guidepth.cli import main


def write_config(tmp_path, **overrides):
    cfg = {
        "network": {
            "base_channels": 2,
            "max_channels": 4,
            "num_units": 1,
            "repetitions": 1,
            "semantic_planes": 3,
            "spn_kind": "raspn",
            "spn_iterations": 1,
        },
        "data": {
            "train_scenes": 2,
            "eval_scenes": 1,
            "height": 16,
            "width": 16,
            "objects": 1,
            "pattern": "uniform:24",
        },
        "optimizer": {"epochs": 1, "batch_size": 2},
        "output": {"root": str(tmp_path / "runs")},
        "seed": 5,
    }
    for dotted, value in overrides.items():
        section, name = dotted.split(".")
        cfg[section][name] = value
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p, cfg


class TestTrainEval:
    def test_round_trip(self, tmp_path, capsys):
        cfg_path, cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "checkpoint" in out and "loss" in out
        ckpt = out.strip().splitlines()[-1].split()[-1]

        assert main(["eval", "--ckpt", ckpt, "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "aggregate: rmse" in out
        csv_path = out.strip().splitlines()[-1].split()[-1]
        assert "metrics.csv" in csv_path

    def test_bad_config_exits_2(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"learning_rate": 0.1}))
        assert main(["train", "--config", str(p)]) == 2
        assert "error:" in capsys.readouterr().err


class TestMemreport:
    def test_prints_three_methods(self, capsys):
        assert main(["memreport"]) == 0
        out = capsys.readouterr().out
        for token in ("DC", "CF", "EG", "42.75"):
            assert token in out

    def test_csv_output(self, tmp_path, capsys):
        dest = tmp_path / "mem.csv"
        assert main(["memreport", "--C", "8", "--H", "8", "--W", "8", "--csv", str(dest)]) == 0
        lines = dest.read_text().strip().splitlines()
        assert lines[0].startswith("method,")
        assert len(lines) == 4


class TestGradcheck:
    def test_empty_scope_is_usage_error(self, capsys):
        assert main(["gradcheck"]) == 2
        err = capsys.readouterr().err
        assert "primitives, modules, full" in err

    def test_modules_scope_passes(self, capsys):
        assert main(["gradcheck", "--scope", "modules"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert out.strip().splitlines()[-1].endswith("checks passed")


class TestSample:
    def test_sparsifies_pfm(self, tmp_path, capsys):
        scene = synth_scene(3, 16, 16, 1)
        src = tmp_path / "dense.pfm"
        dst = tmp_path / "sparse.pfm"
        write_pfm(src, scene.depth)
        rc = main([
            "sample", "--pattern", "uniform:30",
            "--in", str(src), "--out", str(dst), "--seed", "4",
        ])
        assert rc == 0
        assert "kept 30 of 256" in capsys.readouterr().out
        sparse = read_pfm(dst)
        assert sparse.valid_count() == 30
        kept = sparse.depth[sparse.valid]
        dense = scene.depth.depth[sparse.valid]
        np.testing.assert_allclose(kept, dense, rtol=1e-6)

    def test_sparse_input_rejected(self, tmp_path, capsys):
        holes = DepthMap(
            np.array([[1.0, 0.0], [2.0, 3.0]]),
            np.array([[True, False], [True, True]]),
        )
        src = tmp_path / "holes.pfm"
        write_pfm(src, holes)
        rc = main([
            "sample", "--pattern", "uniform:2",
            "--in", str(src), "--out", str(tmp_path / "o.pfm"),
        ])
        assert rc == 2
        assert "dense" in capsys.readouterr().err

    def test_bad_pattern_exits_2(self, tmp_path, capsys):
        scene = synth_scene(3, 16, 16, 1)
        src = tmp_path / "dense.pfm"
        write_pfm(src, scene.depth)
        rc = main([
            "sample", "--pattern", "hexgrid:9",
            "--in", str(src), "--out", str(tmp_path / "o.pfm"),
        ])
        assert rc == 2
