import json
import subprocess
import sys

import pytest

from nucmix.cli import main
from nucmix.datasets import genome_like_fasta, random_acgt

FAST = ["--t", "4", "--bs", "8"]


@pytest.fixture
def sample(tmp_path):
    p = tmp_path / "sample.fa"
    p.write_bytes(genome_like_fasta(4000, seed=0))
    return p


def test_round_trip(tmp_path, sample, capsys):
    c, d = tmp_path / "s.pmkl", tmp_path / "s.out"
    assert main(["compress", "-i", str(sample), "-o", str(c), *FAST]) == 0
    assert "CR" in capsys.readouterr().out
    assert main(["decompress", "-i", str(c), "-o", str(d), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["restored_bytes"] == sample.stat().st_size
    assert d.read_bytes() == sample.read_bytes()


def test_workers_give_same_content(tmp_path, sample):
    c4, out = tmp_path / "w4.pmkl", tmp_path / "w4.out"
    assert main(["compress", "-i", str(sample), "-o", str(c4), "--workers", "4", "--t", "4", "--bs", "1"]) == 0
    assert main(["decompress", "-i", str(c4), "-o", str(out), "--workers", "2"]) == 0
    assert out.read_bytes() == sample.read_bytes()


def test_usage_errors_leave_no_output(tmp_path, sample, capsys):
    out = tmp_path / "never.pmkl"
    assert main(["compress", "-i", str(sample), "-o", str(out), "--s", "4", "--k", "3"]) == 1
    assert "ConfigInvalid" in capsys.readouterr().err
    assert not out.exists()
    with pytest.raises(SystemExit) as exc:
        main(["compress", "-i", str(sample)])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["compress", "-i", str(sample), "-o", str(out), "--t", "x"])
    assert exc.value.code == 1
    assert not out.exists()


def test_io_error(tmp_path, capsys):
    assert main(["compress", "-i", str(tmp_path / "missing"), "-o", str(tmp_path / "x")]) == 2
    assert "I/O error" in capsys.readouterr().err


def test_spum_errors(tmp_path, sample, spum_path, capsys):
    c, out = tmp_path / "s.pmkl", tmp_path / "s.out"
    spum = spum_path(2, 8)
    args = ["compress", "-i", str(sample), "-o", str(c), "--s", "2", "--k", "2", "--t", "8", "--bs", "8"]
    assert main([*args, "--spum", str(spum)]) == 0
    capsys.readouterr()
    assert main(["decompress", "-i", str(c), "-o", str(out)]) == 3
    assert "SpumMissing" in capsys.readouterr().err
    assert main(["decompress", "-i", str(c), "-o", str(out), "--spum", str(spum_path(2, 4))]) == 3
    assert "ChecksumMismatch" in capsys.readouterr().err
    assert not out.exists()
    assert main(["decompress", "-i", str(c), "-o", str(out), "--spum", str(spum)]) == 0
    assert out.read_bytes() == sample.read_bytes()


def test_corrupt_container_exit_code(tmp_path, sample, capsys):
    c = tmp_path / "s.pmkl"
    main(["compress", "-i", str(sample), "-o", str(c), *FAST])
    data = bytearray(c.read_bytes())
    data[60] ^= 0xFF
    c.write_bytes(bytes(data))
    assert main(["decompress", "-i", str(c), "-o", str(tmp_path / "o")]) == 3
    assert "ChecksumMismatch" in capsys.readouterr().err


def test_verify(sample, capsys):
    assert main(["verify", "-i", str(sample), *FAST, "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["identical"] is True
    assert main(["verify", "-i", str(sample), *FAST, "--workers", "2", "--no-smp"]) == 0
    assert capsys.readouterr().out.startswith("OK")


def test_help_lists_defaults():
    for cmd, flags in {
        "compress": ["--s", "--k", "--t", "--bs", "--workers", "--spum", "--selector-threshold",
                     "--smp-fraction", "--seed", "--scale-factor", "--json"],
        "decompress": ["--spum", "--workers"],
        "verify": ["--bs", "--workers"],
        "pretrain-spum": ["--epochs", "--seed", "--scale-factor"],
        "bench": ["--csv", "--workers"],
    }.items():
        out = subprocess.run([sys.executable, "-m", "nucmix.cli", cmd, "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        text = " ".join(out.stdout.split())
        for f in flags:
            assert f in text, (cmd, f)
        assert "(default:" in text
    out = subprocess.run([sys.executable, "-m", "nucmix.cli", "compress", "--help"], capture_output=True, text=True)
    text = " ".join(out.stdout.split())
    for default in ("default: 3", "default: 32", "default: 320", "default: 1", "default: 500000000",
                    "default: 0.05", "default: 42", "default: 4"):
        assert default in text


def test_pretrain_and_bench(tmp_path, capsys):
    corpus = tmp_path / "c.fa"
    corpus.write_bytes(genome_like_fasta(3000, seed=2))
    model = tmp_path / "m.nmw"
    args = ["pretrain-spum", "-i", str(corpus), "-o", str(model), "--s", "1", "--k", "2", "--t", "8",
            "--bs", "16", "--epochs", "1", "--json"]
    assert main(args) == 0
    info = json.loads(capsys.readouterr().out)
    assert model.stat().st_size == info["bytes"] and len(info["losses"]) == 1

    data = tmp_path / "d.fa"
    data.write_bytes(random_acgt(3000, seed=3))
    report = tmp_path / "r.csv"
    assert main(["bench", str(data), "--csv", str(report), "--s", "1", "--k", "2", "--t", "8", "--bs", "8",
                 "--spum", str(model)]) == 0
    lines = report.read_text().splitlines()
    assert lines[0].startswith("dataset,") and lines[1].startswith("d.fa,") and lines[1].endswith(",ok")
    assert lines[2].startswith("AGGREGATE,")
    assert main(["bench"]) == 0
    assert capsys.readouterr().out.startswith("dataset,")
