import filecmp
import glob
import json
import os

import pytest

from critchaos import cli
from critchaos.harness import RunRecord
from critchaos.stats import FAIL, INCONCLUSIVE

HERE = os.path.dirname(__file__)
QUICK = os.path.join(HERE, "..", "manifests", "quick.json")


def _manifest(tmp_path, **over):
    with open(QUICK) as fh:
        doc = json.load(fh)
    doc.update(over)
    p = tmp_path / "m.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_simulate_writes_files_deterministically(tmp_path):
    m = _manifest(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--manifest", m, "--out", str(a), "--threads", "1"]) == 0
    assert cli.main(["simulate", "--manifest", m, "--out", str(b), "--threads", "1"]) == 0
    files = sorted(os.listdir(a))
    assert "snapshot_seed11_rep00000_t4.csv" in files
    assert files == sorted(os.listdir(b))
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert not mismatch and not errors


def test_simulate_npy_and_seed_override(tmp_path):
    m = _manifest(tmp_path, snapshot_output={"format": "npy", "replicates": 1})
    out = tmp_path / "n"
    assert cli.main(["simulate", "--manifest", m, "--out", str(out), "--seed-override", "5"]) == 0
    assert glob.glob(str(out / "snapshot_seed5_rep00000_t*.npy"))


def test_simulate_unresolvable_mollifier(tmp_path, capsys):
    doc = dict(families={"eps": [2 ** -10]}, schedule={"t_max": 4.0})
    m = _manifest(tmp_path, **doc)
    assert cli.main(["simulate", "--manifest", m, "--out", str(tmp_path / "x")]) == 2
    assert "UnresolvableMollifier" in capsys.readouterr().err


def test_manifest_strictness(tmp_path, capsys):
    assert cli.main(["simulate", "--manifest", _manifest(tmp_path, bogus=1)]) == 2
    assert cli.main(["simulate", "--manifest", _manifest(tmp_path, version="0")]) == 2
    assert cli.main(["simulate", "--manifest", str(tmp_path / "missing.json")]) == 2


def test_numerical_error_exit_code(tmp_path, monkeypatch):
    from critchaos.errors import NegativeSpectrum

    def boom(*a, **k):
        raise NegativeSpectrum("NegativeSpectrum: test")
    monkeypatch.setattr(cli, "lattice_model", boom)
    assert cli.main(["simulate", "--manifest", _manifest(tmp_path), "--out", str(tmp_path / "y")]) == 3


def test_experiment_unknown_name(tmp_path):
    assert cli.main(["experiment", "nope", "--manifest", _manifest(tmp_path)]) == 2


@pytest.mark.parametrize("verdict,code", [(FAIL, 1), (INCONCLUSIVE, 4)])
def test_experiment_verdict_exit_codes(tmp_path, monkeypatch, verdict, code):
    import numpy as np

    def fake(cfg, names):
        return {n: RunRecord(n, {}, "h", [], np.zeros((2, 0)), np.zeros((2, 0)), [], verdict) for n in names}
    monkeypatch.setattr(cli, "run_experiments", fake)
    assert cli.main(["experiment", "all", "--manifest", _manifest(tmp_path), "--out", str(tmp_path / "o")]) == code


def test_experiment_then_report(tmp_path):
    m = _manifest(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["experiment", "all", "--manifest", m, "--out", str(out), "--threads", "1"]) == 0
    assert cli.main(["report", str(out)]) == 0
    svgs = sorted(glob.glob(str(out / "*.svg")))
    assert [os.path.basename(s) for s in svgs] == ["measure_identities.svg", "tail_diagnostic.svg"]
    first = {p: open(p, "rb").read() for p in svgs + [str(out / "summary.md")]}
    assert cli.main(["report", str(out)]) == 0
    assert all(open(p, "rb").read() == b for p, b in first.items())


def test_report_empty_or_missing(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["report", str(empty)]) == 2
    assert cli.main(["report", str(tmp_path / "none")]) == 2
