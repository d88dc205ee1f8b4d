import os
import runpy


def test_benchmark_runs(capsys):
    path = os.path.join(os.path.dirname(__file__), "..", "benchmarks", "bench_kernels.py")
    module = runpy.run_path(path)
    module["main"](["--repeat", "1", "--batch", "1"])
    out = capsys.readouterr().out
    assert "maxpool 2x2 backward" in out and "selected at import" in out
