import json
import os

from critchaos import cli

MANIFEST = os.path.join(os.path.dirname(__file__), "..", "manifests", "smoke_d2.json")


def test_d2_smoke_suite(tmp_path):
    out = tmp_path / "d2"
    # report-only: nothing is gated, so the run succeeds whatever the numbers
    assert cli.main(["experiment", "all", "--manifest", MANIFEST, "--out", str(out), "--threads", "1"]) == 0
    for name in ("field_statistics", "measure_identities", "tail_diagnostic"):
        with open(out / f"{name}_verdict.json") as fh:
            doc = json.load(fh)
        assert doc["replicates"] == 40
        assert not any(c["gated"] for c in doc["criteria"])
    assert cli.main(["report", str(out)]) == 0
