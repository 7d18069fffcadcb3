import json
from pathlib import Path

import numpy as np
import pytest

from broadcastreg.cli import main, sha256_file, verify_manifest, write_pgm
from broadcastreg.dataset import load_dataset
from broadcastreg.model import load_model
from broadcastreg.tensor_ops import read_tensor, write_tensor


SIM_ARGS = ["simulate", "--case", "2", "--dims", "8,8", "--n", "60", "--seed", "7"]
FIT_ARGS = [
    "fit", "--rank", "1", "--lambda1", "0.5", "--lambda2", "0.5",
    "--n-basis", "5", "--spline-order", "3", "--max-iters", "30", "--seed", "3",
]


def run(args):
    return main([str(a) for a in args])


def tree_bytes(directory, skip=("manifest.json",)):
    directory = Path(directory)
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name not in skip
    }


def manifest_without_wall_time(directory):
    payload = json.loads((Path(directory) / "manifest.json").read_text())
    payload.pop("wall_time_s")
    # output paths differ across directories; keep only their checksums
    payload["outputs"] = sorted(payload["outputs"].values())
    payload["inputs"] = sorted(payload["inputs"].values())
    return payload


@pytest.fixture
def sim_dir(tmp_path):
    out = tmp_path / "d"
    assert run(SIM_ARGS + ["--out", out]) == 0
    return out


class TestSimulate:
    def test_writes_dataset_truth_and_manifest(self, sim_dir):
        for name in ("data.bin", "y.csv", "meta.json", "truth.json", "manifest.json"):
            assert (sim_dir / name).is_file()
        data, meta = load_dataset(sim_dir)
        assert data.n == 60 and data.dims == (8, 8)
        assert meta["seed"] == 7
        assert verify_manifest(sim_dir / "manifest.json") == []

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(SIM_ARGS + ["--out", a]) == 0
        assert run(SIM_ARGS + ["--out", b]) == 0
        assert tree_bytes(a) == tree_bytes(b)
        assert manifest_without_wall_time(a) == manifest_without_wall_time(b)

    def test_mask_override(self, tmp_path):
        mask = np.zeros((8, 8))
        mask[2:5, 2:5] = 1.0
        mask_path = tmp_path / "mask.bin"
        write_tensor(mask_path, mask)
        out = tmp_path / "d"
        args = ["simulate", "--case", "3", "--dims", "8,8", "--n", "10",
                "--seed", "1", "--masks", mask_path, "--out", out]
        assert run(args) == 0
        truth = json.loads((out / "truth.json").read_text())
        np.testing.assert_array_equal(truth["components"][0]["mask"], mask.astype(int))

    def test_bad_case_exits_2(self, tmp_path):
        assert run(["simulate", "--case", "9", "--out", tmp_path / "x"]) == 2


class TestFit:
    def test_fit_writes_model_trace_metrics(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        assert run(FIT_ARGS + ["--data", sim_dir, "--out", out]) == 0
        model = load_model(out / "model.json")
        assert model.dims == (8, 8)
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "iter,LG,L,G"
        assert len(trace) >= 3
        metrics = json.loads((out / "metrics.json").read_text())
        assert {"converged", "iterations", "objective", "train_mse"} <= metrics.keys()
        assert verify_manifest(out / "manifest.json") == []

    def test_missing_data_exits_2(self, tmp_path, capsys):
        assert run(FIT_ARGS + ["--data", tmp_path / "nope", "--out", tmp_path / "o"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_flag_exits_2(self, sim_dir, tmp_path):
        assert run(["fit", "--data", sim_dir, "--out", tmp_path / "o", "--bogus"]) == 2

    def test_strict_nonconvergence_exits_1(self, sim_dir, tmp_path):
        args = [
            "fit", "--data", sim_dir, "--out", tmp_path / "o", "--strict",
            "--rank", "1", "--lambda1", "0.5", "--n-basis", "5", "--spline-order", "3",
            "--max-iters", "2", "--epsilon", "1e-14", "--seed", "0",
        ]
        assert run(args) == 1

    def test_byte_identical_rerun(self, sim_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(FIT_ARGS + ["--data", sim_dir, "--out", a]) == 0
        assert run(FIT_ARGS + ["--data", sim_dir, "--out", b]) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_config_file_with_flag_override(self, sim_dir, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"rank": 1, "lambda1": 0.5, "lambda2": 0.5,
                                      "n_basis": 5, "spline_order": 3,
                                      "max_iters": 30, "seed": 3}))
        out_cfg = tmp_path / "via_config"
        assert run(["fit", "--data", sim_dir, "--config", config, "--out", out_cfg]) == 0
        out_flags = tmp_path / "via_flags"
        assert run(FIT_ARGS + ["--data", sim_dir, "--out", out_flags]) == 0
        assert (out_cfg / "model.json").read_bytes() == (out_flags / "model.json").read_bytes()
        # a flag wins over the config value
        out_override = tmp_path / "override"
        assert run(["fit", "--data", sim_dir, "--config", config,
                    "--n-basis", "4", "--out", out_override]) == 0
        overridden = load_model(out_override / "model.json")
        assert overridden.basis.size == 4

    def test_progress_stream_is_json_lines(self, sim_dir, tmp_path, capsys):
        assert run(FIT_ARGS + ["--data", sim_dir, "--out", tmp_path / "o", "--progress"]) == 0
        lines = [l for l in capsys.readouterr().err.splitlines() if l.strip()]
        records = [json.loads(line) for line in lines]
        assert records and set(records[0]) == {"iter", "LG", "L", "G"}


class TestTuneRoundTrip:
    def test_tune_then_fit_reproduces_validation_error(self, sim_dir, tmp_path):
        tune_out = tmp_path / "tune"
        tune_args = [
            "tune", "--data", sim_dir, "--out", tune_out,
            "--ranks", "1", "--lambda1s", "0.1,1.0", "--lambda2s", "0,1",
            "--split-fraction", "0.2", "--n-basis", "5", "--spline-order", "3",
            "--max-iters", "25", "--seed", "11",
        ]
        assert run(tune_args) == 0
        best = json.loads((tune_out / "best_cell.json").read_text())
        table = (tune_out / "tuning.csv").read_text().splitlines()
        assert len(table) == 1 + 4

        path_values = [v for v in (0.1, 1.0) if v <= best["lambda1"]]
        fit_out = tmp_path / "refit"
        fit_args = [
            "fit", "--data", sim_dir, "--out", fit_out,
            "--rank", best["rank"], "--lambda1", best["lambda1"],
            "--lambda2", best["lambda2"],
            "--lambda1-path", ",".join(str(v) for v in path_values),
            "--validation-fraction", "0.2",
            "--n-basis", "5", "--spline-order", "3", "--max-iters", "25", "--seed", "11",
        ]
        assert run(fit_args) == 0
        metrics = json.loads((fit_out / "metrics.json").read_text())
        assert metrics["validation_error"] == pytest.approx(
            best["validation_error"], abs=1e-12
        )
        assert (fit_out / "model.json").read_bytes() == (tune_out / "model.json").read_bytes()


class TestPredictAndEval:
    @pytest.fixture
    def fitted(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        assert run(FIT_ARGS + ["--data", sim_dir, "--out", out]) == 0
        return out / "model.json"

    def test_predict_writes_csv(self, fitted, sim_dir, tmp_path):
        out_csv = tmp_path / "preds.csv"
        assert run(["predict", "--model", fitted, "--data", sim_dir, "--out", out_csv]) == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "prediction"
        assert len(lines) == 61
        model = load_model(fitted)
        data, _ = load_dataset(sim_dir)
        np.testing.assert_allclose(
            [float(v) for v in lines[1:]], model.predict(data.covariates), atol=0
        )

    def test_eval_ise_writes_json(self, fitted, sim_dir, tmp_path):
        out_json = tmp_path / "ise.json"
        args = ["eval-ise", "--model", fitted, "--truth", sim_dir / "truth.json",
                "--mc-points", "1000", "--seed", "5", "--out", out_json]
        assert run(args) == 0
        payload = json.loads(out_json.read_text())
        assert payload["mc_points"] == 1000
        assert payload["ise"] >= 0.0
        assert payload["stderr"] >= 0.0

    def test_norm_tensor_csv_and_pgm(self, fitted, tmp_path):
        out_csv = tmp_path / "norms.csv"
        out_pgm = tmp_path / "norms.pgm"
        assert run(["norm-tensor", "--model", fitted, "--out", out_csv,
                    "--pgm", out_pgm]) == 0
        rows = [line.split(",") for line in out_csv.read_text().splitlines()]
        assert len(rows) == 8 and len(rows[0]) == 8
        assert all(float(v) >= 0 for row in rows for v in row)
        header = out_pgm.read_bytes()[:15]
        assert header.startswith(b"P5\n8 8\n255\n")

    def test_norm_tensor_binary_output(self, fitted, tmp_path):
        out_bin = tmp_path / "norms.bin"
        assert run(["norm-tensor", "--model", fitted, "--out", out_bin]) == 0
        norms = read_tensor(out_bin)
        assert norms.shape == (8, 8)

    def test_predict_missing_model_exits_2(self, sim_dir, tmp_path):
        assert run(["predict", "--model", tmp_path / "nope.json",
                    "--data", sim_dir, "--out", tmp_path / "p.csv"]) == 2


class TestIngest:
    def test_range_spanning_values_unchanged(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.uniform(size=(4, 4, 10))
        values[0, 0, 0], values[1, 1, 1] = 0.0, 1.0
        raw = tmp_path / "raw.bin"
        write_tensor(raw, values)
        y = tmp_path / "y.csv"
        y.write_text("y\n" + "\n".join(repr(float(v)) for v in range(10)) + "\n")
        out = tmp_path / "ds"
        assert run(["ingest", "--values", raw, "--responses", y, "--out", out]) == 0
        data, meta = load_dataset(out)
        np.testing.assert_allclose(data.covariates, np.moveaxis(values, -1, 0), atol=1e-15)
        assert meta["extrema"] == [0.0, 1.0]

    def test_affine_mapping_and_extrema_reuse(self, tmp_path):
        values = np.linspace(-2.75, 2.85, 24).reshape(2, 3, 4)
        raw = tmp_path / "raw.bin"
        write_tensor(raw, values)
        y = tmp_path / "y.csv"
        y.write_text("y\n" + "\n".join("0.0" for _ in range(4)) + "\n")
        out = tmp_path / "train"
        assert run(["ingest", "--values", raw, "--responses", y, "--out", out]) == 0
        data, meta = load_dataset(out)
        assert meta["extrema"] == [-2.75, 2.85]
        expected = (np.moveaxis(values, -1, 0) + 2.75) / (2.85 + 2.75)
        np.testing.assert_allclose(data.covariates, expected, atol=1e-15)

        # apply the training extrema to new data
        test_values = np.full((2, 3, 2), 0.05)
        raw2 = tmp_path / "raw2.bin"
        write_tensor(raw2, test_values)
        y2 = tmp_path / "y2.csv"
        y2.write_text("y\n0.0\n0.0\n")
        out2 = tmp_path / "test"
        assert run(["ingest", "--values", raw2, "--responses", y2, "--out", out2,
                    "--apply-extrema", out / "meta.json"]) == 0
        data2, _ = load_dataset(out2)
        np.testing.assert_allclose(data2.covariates, (0.05 + 2.75) / 5.6, atol=1e-15)

    def test_constant_input_fills_half_with_warning(self, tmp_path):
        values = np.full((2, 2, 3), 7.0)
        raw = tmp_path / "raw.bin"
        write_tensor(raw, values)
        y = tmp_path / "y.csv"
        y.write_text("y\n1.0\n2.0\n3.0\n")
        out = tmp_path / "ds"
        with pytest.warns(UserWarning):
            assert run(["ingest", "--values", raw, "--responses", y, "--out", out]) == 0
        data, _ = load_dataset(out)
        np.testing.assert_array_equal(data.covariates, np.full((3, 2, 2), 0.5))

    def test_csv_rows_need_dims(self, tmp_path):
        raw = tmp_path / "raw.csv"
        raw.write_text("0.0,0.5,1.0,0.25\n1.0,0.5,0.0,0.75\n")
        y = tmp_path / "y.csv"
        y.write_text("y\n1.0\n2.0\n")
        assert run(["ingest", "--values", raw, "--responses", y,
                    "--out", tmp_path / "d"]) == 2
        out = tmp_path / "d2"
        assert run(["ingest", "--values", raw, "--responses", y, "--dims", "2,2",
                    "--out", out]) == 0
        data, _ = load_dataset(out)
        assert data.dims == (2, 2)
        np.testing.assert_array_equal(
            data.covariates[0], np.array([[0.0, 1.0], [0.5, 0.25]])
        )

    def test_nonfinite_values_exit_2(self, tmp_path):
        values = np.full((2, 2, 2), np.nan)
        raw = tmp_path / "raw.bin"
        write_tensor(raw, values)
        y = tmp_path / "y.csv"
        y.write_text("y\n0.0\n0.0\n")
        assert run(["ingest", "--values", raw, "--responses", y,
                    "--out", tmp_path / "d"]) == 2


class TestManifest:
    def test_checksum_detects_tampering(self, sim_dir):
        assert verify_manifest(sim_dir / "manifest.json") == []
        (sim_dir / "y.csv").write_text("y\n0.0\n")
        problems = verify_manifest(sim_dir / "manifest.json")
        assert any("y.csv" in p for p in problems)

    def test_sha256_matches_known_value(self, tmp_path):
        path = tmp_path / "x"
        path.write_bytes(b"abc")
        assert sha256_file(path) == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )

    def test_pgm_writer_deterministic(self, tmp_path):
        mat = np.arange(6.0).reshape(2, 3)
        write_pgm(tmp_path / "a.pgm", mat)
        write_pgm(tmp_path / "b.pgm", mat)
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
