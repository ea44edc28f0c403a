from __future__ import annotations

from pathlib import Path

import pytest

from tubespoof.acoustics import REFERENCE_TUBES, Environment, TubeSpec
from tubespoof.run_log import RunLog
from tubespoof.schema_check import load_schema, validate
from tubespoof.validation import chirp_validation

TUBE = TubeSpec(*REFERENCE_TUBES[2][:2])


def test_chirp_finds_every_harmonic(tmp_path: Path) -> None:
    log = RunLog(tmp_path / "events.jsonl")
    report = chirp_validation(TUBE, Environment(), log=log)
    assert validate(load_schema("validation_report"), report) == []
    assert report["status"] == "PASS"
    assert report["f0_hz"] == pytest.approx(report["model_f0_hz"])
    # Harmonics of a ~270 Hz tube below the 3.7 kHz end of the sweep.
    assert len(report["peaks"]) == 13
    assert report["max_relative_error"] < 0.01
    assert 0.0 < report["band_energy_ratio"] < 1.0

    check = report["end_correction_check"]
    assert check["xcorr_peak"] > 0.5
    assert check["dtw_distance"] >= 0.0
    events = log.read_events()
    assert events[-1]["type"] == "validation_result"
    assert events[-1]["payload"]["status"] == "PASS"


def test_temperature_mismatch_fails() -> None:
    report = chirp_validation(TUBE, Environment(303.0), model_env=Environment(250.0), duration_s=2.0)
    assert report["status"] == "FAIL"
    assert report["model_f0_hz"] < report["f0_hz"]
    assert any("off" in line for line in report["diagnostics"])


def test_sweep_below_fundamental_reports_no_harmonic() -> None:
    report = chirp_validation(TubeSpec(1.5, 0.05), Environment(), f_end_hz=100.0, f_start_hz=50.0, duration_s=1.0)
    assert report["status"] == "FAIL"
    assert report["peaks"] == []
    assert report["max_relative_error"] is None
    assert report["diagnostics"] == ["No theoretical harmonic below 100.0 Hz."]


def test_bad_sweep_raises() -> None:
    with pytest.raises(ValueError):
        chirp_validation(TUBE, Environment(), f_end_hz=5000.0)
