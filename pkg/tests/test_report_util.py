import json
from pathlib import Path

import numpy as np

from idlab.cli import main
from idlab.report import atomic_write_bytes, mark_failed, write_csv, write_json
from idlab.util import git_blob_hash, ordered_map, resolve_threads


class TestWriters:
    def test_atomic_write_replaces(self, tmp_path):
        p = tmp_path / "x.txt"
        atomic_write_bytes(p, b"one")
        atomic_write_bytes(p, b"two")
        assert p.read_bytes() == b"two"
        assert list(tmp_path.iterdir()) == [p]  # no temp leftovers

    def test_csv_float_repr_roundtrips(self, tmp_path):
        p = tmp_path / "r.csv"
        val = 0.1 + 0.2
        write_csv(p, ["a", "b"], [{"a": val, "b": True}])
        line = p.read_text().splitlines()[1]
        text, flag = line.split(",")
        assert float(text) == val
        assert flag == "true"

    def test_json_handles_numpy(self, tmp_path):
        p = tmp_path / "m.json"
        write_json(p, {"x": np.float64(1.5), "n": np.int32(2), "arr": np.arange(3)})
        data = json.loads(p.read_text())
        assert data == {"x": 1.5, "n": 2, "arr": [0, 1, 2]}

    def test_failed_marker(self, tmp_path):
        out = tmp_path / "report.csv"
        mark_failed(out, "diverged at step 3")
        marker = Path(str(out) + ".FAILED")
        assert marker.read_text().strip() == "diverged at step 3"


class TestGitBlobHash:
    def test_matches_git_convention(self):
        # sha1("blob 0\0") for empty content, a well-known value
        assert git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"

    def test_content_sensitivity(self):
        assert git_blob_hash(b"a") != git_blob_hash(b"b")


class TestThreads:
    def test_resolve_priority(self, monkeypatch):
        monkeypatch.delenv("IDLAB_THREADS", raising=False)
        assert resolve_threads(None) == 1
        assert resolve_threads(4) == 4
        monkeypatch.setenv("IDLAB_THREADS", "3")
        assert resolve_threads(None) == 3
        assert resolve_threads(2) == 2

    def test_ordered_map_preserves_order(self):
        import time as _time

        def slow_square(x):
            _time.sleep(0.01 * (5 - x))  # later items finish first
            return x * x

        assert ordered_map(slow_square, range(5), workers=4) == [0, 1, 4, 9, 16]

    def test_threaded_sweep_matches_serial(self, tmp_path):
        cfg = {
            "domain": {"eps0": 0.25},
            "pair": {
                "side1": {"preset": "constant", "params": {"k": 2.0}},
                "side2": {"preset": "constant", "params": {"k": 1.0}},
                "eps_factors": [0.125, 0.0625],
            },
        }
        cfg_path = tmp_path / "pair.json"
        cfg_path.write_text(json.dumps(cfg))
        payloads = []
        for threads in ("1", "2"):
            out = tmp_path / f"r{threads}.csv"
            rc = main([
                "discriminate", "--config", str(cfg_path), "--out", str(out),
                "--manifest", str(tmp_path / f"m{threads}.json"),
                "--threads", threads, "--no-plot",
            ])
            assert rc == 0
            payloads.append(out.read_bytes())
        assert payloads[0] == payloads[1]


class TestNumericalFailureExit:
    def test_exit_3_leaves_marker(self, tmp_path, capsys):
        # schema-valid config whose grid cannot resolve the measurement patch
        cfg = {
            "domain": {"eps0": 0.01, "xbar": [0.5, 0.0], "n_cells": 10},
            "coefficients": {"preset": "constant", "params": {"k": 1.0}},
            "solve": {"n_steps": 4},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "field.bin"
        rc = main(["solve", "--config", str(cfg_path), "--out", str(out), "--trace", str(tmp_path / "t.csv")])
        assert rc == 3
        assert Path(str(out) + ".FAILED").exists()
        assert "failure" in capsys.readouterr().err
