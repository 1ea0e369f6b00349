import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relu_stability import cli
from relu_stability.dataset import write_idx
from relu_stability.experiments import (OUT_ENV, InitScaleConfig, SweepConfig, detect_crossover,
                                        run_init_scale, run_synthetic_sweep)
from relu_stability.reporting import (COLUMNS, config_hash, emit_report, format_float,
                                      parse_report)

TINY = ["--n", "6", "--d", "2", "--k", "3", "--max-steps", "3000"]


def sample_row(i=0):
    row = {c: None for c in COLUMNS}
    row.update(run_id=f"abc:{i}:0", eta=0.1 * (i + 1), seed=i, init_scale=1.0, batch=0,
               status="Converged", steps=100 + i, final_loss=1e-9, certified=True,
               lambda_max=1.0 / 3.0, two_over_eta=20.0 / (i + 1), s_theta=math.pi,
               verdict_thm1=True, verdict_lemma1=False, val_accuracy=None)
    return row


class TestReport:
    def test_empty_csv(self):
        assert emit_report([], "csv") == (",".join(COLUMNS) + "\n").encode()

    @pytest.mark.parametrize("fmt", ["csv", "jsonl"])
    def test_roundtrip(self, fmt):
        row = sample_row()
        back = parse_report(emit_report([row], fmt), fmt)
        assert back == [row]

    def test_seventeen_digits(self):
        assert format_float(1.0 / 3.0) == "0.33333333333333331"
        assert float(format_float(0.1)) == 0.1

    @settings(max_examples=50)
    @given(st.floats(allow_nan=False))
    def test_float_roundtrip(self, x):
        assert float(format_float(x)) == x

    def test_non_finite(self):
        row = sample_row()
        row["lambda_max"] = math.inf
        for fmt in ("csv", "jsonl"):
            assert parse_report(emit_report([row], fmt), fmt)[0]["lambda_max"] == math.inf

    def test_bytes_stable(self):
        rows = [sample_row(i % 7) for i in range(1000)]
        assert emit_report(rows, "csv") == emit_report([dict(r) for r in rows], "csv")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report([], "xml")

    def test_config_hash(self):
        assert config_hash(SweepConfig()) == config_hash(SweepConfig())
        assert config_hash(SweepConfig()) != config_hash(SweepConfig(n=31))


class TestExperiments:
    def test_empty_grid(self):
        out = run_synthetic_sweep(SweepConfig(etas=()))
        assert out.rows == []
        assert emit_report(out.rows) == (",".join(COLUMNS) + "\n").encode()

    def test_rows_and_ids(self):
        cfg = SweepConfig(n=6, d=2, k=3, etas=(0.01, 0.1), seeds=(0, 1), max_steps=2000)
        out = run_synthetic_sweep(cfg)
        h = config_hash(cfg)
        assert [r["run_id"] for r in out.rows] == [f"{h}:{i}:{s}" for i in (0, 1) for s in (0, 1)]

    def test_identical_config_identical_bytes(self):
        cfg = SweepConfig(n=6, d=2, k=3, etas=(0.05,), seeds=(2,), max_steps=2000)
        assert emit_report(run_synthetic_sweep(cfg).rows) == emit_report(run_synthetic_sweep(cfg).rows)

    def test_writes_files(self, tmp_path):
        cfg = SweepConfig(n=6, d=2, k=3, etas=(0.05,), seeds=(0,), max_steps=2000)
        out = run_synthetic_sweep(cfg, tmp_path, "jsonl")
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["sweep.jsonl", "sweep_manifest.json"]
        man = json.loads((tmp_path / "sweep_manifest.json").read_text())
        assert man["config_hash"] == out.summary["config_hash"]
        assert man["columns"] == list(COLUMNS)

    def test_crossover(self):
        assert detect_crossover([0.1], [20.0]) is None
        assert detect_crossover([0.01, 0.1, 0.2], [15.0, 15.0, 10.0]) == 2
        assert detect_crossover([0.01, 0.1], [15.0, 15.0]) is None

    def test_init_scale_tables(self):
        cfg = InitScaleConfig(scales=(1.0, 5.0, 10.0, 15.0), n=6, d=2, k=3, etas=(0.01,),
                              seeds=(0,), max_steps=500)
        tables = run_init_scale(cfg).summary["tables"]
        assert [t["init_scale"] for t in tables] == [1.0, 5.0, 10.0, 15.0]
        assert all(t["crossover_eta"] is None for t in tables)


class TestCli:
    def test_train_stdout(self, capsysbinary):
        assert cli.main(["train", "--eta", "0.05", *TINY]) == 0
        rows = parse_report(capsysbinary.readouterr().out)
        assert len(rows) == 1 and rows[0]["eta"] == 0.05

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_ENV, str(tmp_path))
        assert cli.main(["sweep", "--etas", "0.05", "--seeds", "0-1", *TINY]) == 0
        assert len(parse_report((tmp_path / "sweep.csv").read_bytes())) == 2

    def test_flag_beats_file(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"n": 5, "d": 2, "k": 3, "etas": [0.05], "seeds": [0],
                                    "max_steps": 1000}))
        assert cli.main(["sweep", "--config", str(conf), "--n", "7", "--out", str(tmp_path)]) == 0
        man = json.loads((tmp_path / "sweep_manifest.json").read_text())
        assert man["config"]["n"] == 7 and man["config"]["k"] == 3

    @pytest.mark.parametrize("argv", [
        ["sweep", "--etas", "0"],
        ["sweep", "--k", "0"],
        ["train", "--eta", "-0.1"],
        ["mnist"],
    ])
    def test_config_errors(self, argv):
        assert cli.main(argv) == 2

    def test_unknown_config_key(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text('{"bogus": 1}')
        assert cli.main(["sweep", "--config", str(conf)]) == 2

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["sweep", "--format", "xml"])
        assert exc.value.code == 2

    def test_missing_mnist(self, tmp_path):
        assert cli.main(["mnist", "--mnist-images", str(tmp_path / "x"),
                         "--mnist-labels", str(tmp_path / "y")]) == 3

    def test_corrupt_mnist(self, tmp_path):
        images, labels = tmp_path / "img", tmp_path / "lab"
        images.write_bytes(b"\x00\x00\x08\x02" + bytes(12))
        labels.write_bytes(write_idx(np.zeros(4, dtype=np.uint8)))
        assert cli.main(["mnist", "--mnist-images", str(images), "--mnist-labels", str(labels)]) == 3

    def test_too_few_mnist_samples(self, tmp_path):
        images, labels = tmp_path / "img", tmp_path / "lab"
        images.write_bytes(write_idx(np.zeros((6, 2, 2), dtype=np.uint8)))
        labels.write_bytes(write_idx(np.array([0, 1, 0, 1, 0, 1], dtype=np.uint8)))
        assert cli.main(["mnist", "--mnist-images", str(images), "--mnist-labels", str(labels)]) == 3

    def test_tiny_mnist(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1], 20).astype(np.uint8)
        imgs = np.zeros((40, 3, 3), dtype=np.uint8)
        imgs[labels == 0, 0, 0] = 200
        imgs[labels == 1, 2, 2] = 200
        imgs += rng.integers(0, 20, size=imgs.shape, dtype=np.uint8)
        (tmp_path / "img").write_bytes(write_idx(imgs))
        (tmp_path / "lab").write_bytes(write_idx(labels))
        argv = ["mnist", "--mnist-images", str(tmp_path / "img"), "--mnist-labels", str(tmp_path / "lab"),
                "--etas", "0.05", "--k", "4", "--batch", "4", "--max-steps", "20000", "--out",
                str(tmp_path / "out")]
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"n_train": 16, "n_val": 20}))
        assert cli.main(argv + ["--config", str(conf)]) == 0
        rows = parse_report((tmp_path / "out" / "mnist.csv").read_bytes())
        assert rows[0]["val_accuracy"] >= 0.9

    def test_analytic_weights(self, tmp_path):
        assert cli.main(["analytic-weights", "--out", str(tmp_path)]) == 0
        g_lines = (tmp_path / "weights_g.csv").read_text().splitlines()
        assert g_lines[0] == "b,gaussian_g,two_point_g_v1"
        assert float(g_lines[1].split(",")[1]) == pytest.approx(0.25518, abs=1e-5)

    def test_selftest_subset(self, capsys):
        assert cli.main(["selftest", "--only", "6"]) == 0
        assert "[PASS] criterion  6" in capsys.readouterr().out
