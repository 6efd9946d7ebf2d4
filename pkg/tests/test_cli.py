import os
import subprocess
import sys

from thzq.cli import run


def thzq(*args, env=None):
    """Run the CLI in a fresh interpreter, returning (code, stdout, stderr)."""
    full_env = dict(os.environ)
    full_env.pop("THZQ_THREADS", None)
    full_env.update(env or {})
    proc = subprocess.run(
        [sys.executable, "-m", "thzq.cli", *args],
        capture_output=True, text=True, env=full_env,
    )
    return proc.returncode, proc.stdout, proc.stderr


def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"pixels_per_side": 4, "scans_per_pixel_side": 5}')
    return str(path)


class TestUsage:
    def test_params(self, capsys):
        assert run(["params", "--model", "qml-dnn"]) == 0
        assert capsys.readouterr().out.strip() == "vqc=28 head=26101 total=26129"

    def test_zero_epochs_is_usage_error(self, capsys):
        assert run(["train", "--model", "dnn", "--data", "x", "--out", "y", "--epochs", "0"]) == 2

    def test_unknown_flag(self, capsys):
        assert run(["params", "--model", "dnn", "--bogus"]) == 2

    def test_unknown_model(self, capsys):
        assert run(["params", "--model", "cnn"]) == 2

    def test_bad_env_threads(self, capsys, monkeypatch):
        monkeypatch.setenv("THZQ_THREADS", "zero")
        assert run(["params", "--model", "dnn"]) == 2

    def test_env_threads_echoed(self, capsys, monkeypatch):
        monkeypatch.setenv("THZQ_THREADS", "3")
        assert run(["params", "--model", "dnn"]) == 0
        assert '"threads": 3' in capsys.readouterr().err

    def test_missing_data_is_runtime_error(self, tmp_path, capsys):
        code = run(["eval", "--ckpt", str(tmp_path / "a"), "--data", str(tmp_path / "b")])
        assert code == 1


class TestCommands:
    def test_synth_is_reproducible(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        a, b = tmp_path / "a.thz", tmp_path / "b.thz"
        assert run(["synth", "--seed", "4", "--config", cfg, "--out", str(a)]) == 0
        assert run(["--threads", "2", "synth", "--seed", "4", "--config", cfg, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert "wrote 400 samples" in capsys.readouterr().out

    def test_train_eval(self, tmp_path, capsys):
        data = tmp_path / "d.thz"
        ckpt = tmp_path / "m.json"
        assert run(["synth", "--config", small_config(tmp_path), "--out", str(data)]) == 0
        assert run(["train", "--model", "logreg", "--data", str(data), "--out", str(ckpt),
                    "--epochs", "3", "--batch", "32"]) == 0
        assert (tmp_path / "m.json.history.csv").read_text().count("\n") == 4
        capsys.readouterr()
        assert run(["eval", "--ckpt", str(ckpt), "--data", str(data),
                    "--heatmaps", str(tmp_path / "h"), "--report", str(tmp_path / "r.txt")]) == 0
        out = capsys.readouterr().out
        assert "model=logreg" in out and "split=test" in out
        assert (tmp_path / "r.txt").read_text() == out
        assert (tmp_path / "h_L3_back.pgm").read_text().startswith("P2\n4 4\n255\n")

    def test_gradcheck(self, capsys):
        assert run(["gradcheck", "--instances", "3"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 4 and all(line.startswith("PASS") for line in lines)
