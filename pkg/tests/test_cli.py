import json

import numpy as np
import pytest

from nimatrix.cli import main
from nimatrix.oracles import Dataset, save_dataset


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestTraceCheck:
    def test_trace_writes_matrix_and_reports(self, capsys, tmp_path):
        out = tmp_path / "m.json"
        code, stdout, stderr = run(capsys, "trace", "--sampler", "ddim",
                                   "--steps", "6", "--out", str(out))
        assert code == 0
        assert out.exists()
        assert stdout.splitlines()[0].startswith("time,equivalent_signal")
        assert "max deviation" in stderr

    def test_check_preset_by_name(self, capsys):
        code, stdout, _ = run(capsys, "check", "ddim-18")
        assert code == 0
        assert len(stdout.splitlines()) == 20  # header + 19 rows

    def test_check_missing_file_is_io_error(self, capsys, tmp_path):
        code, _, stderr = run(capsys, "check", str(tmp_path / "none.json"))
        assert code == 4
        assert "error" in stderr

    def test_check_malformed_file_is_io_error(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        code, _, _ = run(capsys, "check", str(p))
        assert code == 4

    def test_unknown_sampler_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["trace", "--sampler", "heun"])
        assert exc.value.code == 2


class TestSample:
    def test_sample_with_gmm(self, capsys, tmp_path, gmm16):
        g = tmp_path / "g.json"
        g.write_text(json.dumps({"weights": gmm16.weights.tolist(),
                                 "means": gmm16.means.tolist(),
                                 "variances": gmm16.variances.tolist()}))
        m = tmp_path / "m.json"
        assert run(capsys, "trace", "--sampler", "ddim", "--steps", "6",
                   "--out", str(m))[0] == 0
        code, stdout, _ = run(capsys, "sample", "--matrix", str(m),
                              "--predictor", f"gmm:{g}", "--n", "3",
                              "--seed", "1")
        assert code == 0
        rows = [r.split(",") for r in stdout.strip().splitlines()]
        assert len(rows) == 3 and len(rows[0]) == 16

    def test_sample_to_dataset_file(self, capsys, tmp_path, small_dataset):
        d = tmp_path / "d.bin"
        save_dataset(small_dataset, d)
        m = tmp_path / "m.json"
        run(capsys, "trace", "--sampler", "ddim", "--steps", "6",
            "--out", str(m))
        out = tmp_path / "samples.bin"
        code, _, _ = run(capsys, "sample", "--matrix", str(m),
                         "--predictor", f"dataset:{d}", "--n", "4",
                         "--out", str(out))
        assert code == 0
        from nimatrix.oracles import load_dataset
        assert load_dataset(out).atoms.shape == (4, 4)


class TestDegrade:
    def test_csv_output(self, capsys, tmp_path, small_dataset):
        d = tmp_path / "d.bin"
        save_dataset(small_dataset, d)
        code, stdout, _ = run(capsys, "degrade", "--data", str(d),
                              "--family", "vp", "--times", "100,600",
                              "--trials", "50")
        assert code == 0
        lines = stdout.strip().splitlines()
        assert lines[0].startswith("family,t,")
        assert len(lines) == 3


class TestGuidance:
    def test_classifies_preset(self, capsys):
        code, stdout, _ = run(capsys, "guidance", "deis3-18")
        assert code == 0
        assert "has-Fore" in stdout


class TestSpectrum:
    def test_profile_from_csv_image(self, capsys, tmp_path):
        img = np.random.default_rng(0).standard_normal((16, 16))
        p = tmp_path / "img.csv"
        np.savetxt(p, img, delimiter=",")
        code, stdout, stderr = run(capsys, "spectrum", "--image", str(p),
                                   "--family", "flow", "--t", "0.5")
        assert code == 0
        assert stdout.splitlines()[0] == "band,snr"
        assert "submerged fraction" in stderr


class TestPresets:
    def test_list(self, capsys):
        code, stdout, _ = run(capsys, "presets", "list")
        assert code == 0
        assert "ddim-18" in stdout

    def test_export(self, capsys, tmp_path):
        out = tmp_path / "p.json"
        code, _, _ = run(capsys, "presets", "export", "ddim-18",
                         "--out", str(out))
        assert code == 0
        assert json.loads(out.read_text())["format"] == "nimatrix/1"

    def test_unknown_name_is_usage_error(self, capsys):
        code, _, _ = run(capsys, "presets", "export", "nope")
        assert code == 2


class TestSearchCommand:
    def test_short_search_runs(self, capsys, tmp_path, ring_gmm):
        g = tmp_path / "g.json"
        g.write_text(json.dumps({"weights": ring_gmm.weights.tolist(),
                                 "means": ring_gmm.means.tolist(),
                                 "variances": ring_gmm.variances.tolist()}))
        out = tmp_path / "best.json"
        code, stdout, _ = run(capsys, "search", "--steps", "5",
                              "--predictor", f"gmm:{g}", "--budget", "20",
                              "--out", str(out))
        assert code == 0
        assert out.exists()
        assert stdout.splitlines()[0] == "evaluation,best_objective"
