import json
from pathlib import Path

import pytest

from gptpu.cli import main

FIXTURES = Path(__file__).parent / "fixtures"


def test_characterize_json(capsys):
    assert main(["characterize", "--op", "conv2d", "--rows", "128", "--cols", "128", "--json"]) == 0
    row = json.loads(capsys.readouterr().out)
    assert row["ops"] == pytest.approx(10268.80, rel=1e-3)
    assert row["clock"] == "simulated"


def test_characterize_table(capsys):
    assert main(["characterize", "--op", "add", "--rows", "4", "--cols", "4"]) == 0
    out = capsys.readouterr().out
    assert "rps" in out and "data_exchange_mb_per_s" in out


def test_run_writes_report(tmp_path, capsys):
    report = tmp_path / "gemm.csv"
    assert main(["run", "--app", "gemm", "--size", "64", "--devices", "2", "--report", str(report)]) == 0
    assert "error.mape" in capsys.readouterr().out
    assert report.read_text().startswith("metric,value,unit,provenance\n")


def test_run_with_config_after_subcommand(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[device]\ncount = 3\n")
    assert main(["run", "--app", "hotspot", "--size", "8", "--config", str(cfg)]) == 0
    assert "makespan.d3" in capsys.readouterr().out


def test_errors_exit_2(capsys):
    assert main(["run", "--app", "gemm", "--size", "100000"]) == 2
    assert "bench: error:" in capsys.readouterr().err
    assert main(["run", "--app", "lud", "--size", "8", "--range", "0:1"]) == 2
    assert main(["characterize", "--op", "fft", "--rows", "2", "--cols", "2"]) == 2
    assert main(["inspect-model", "/nonexistent/blob.bin"]) == 2


def test_bad_range_syntax():
    with pytest.raises(SystemExit):
        main(["run", "--app", "gemm", "--range", "oops"])


def test_inspect_model(capsys):
    assert main(["inspect-model", str(FIXTURES / "padded_130x5.bin")]) == 0
    out = capsys.readouterr().out
    assert "conv2d" in out and "checksum" in out and "value_range" in out
