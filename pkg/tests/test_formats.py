import io
import json

import numpy as np
import pytest

from conftest import straight_log
from crashsim.bev_motion import encode_motion
from crashsim.evaluate import scenario_batch
from crashsim.formats import (
    DataError,
    DatasetManifest,
    ManifestEntry,
    logs_equal,
    read_field,
    read_log,
    read_manifest,
    read_report,
    write_field,
    write_log,
    write_manifest,
    write_report,
)


@pytest.fixture(scope="module")
def real_logs():
    return [log for _, log in scenario_batch(3, collision_only=False)]


def _roundtrip(log):
    buf = io.StringIO()
    write_log(log, buf)
    return buf.getvalue(), read_log(io.StringIO(buf.getvalue()))


def test_log_roundtrip_is_exact(real_logs):
    for log in real_logs:
        text, back = _roundtrip(log)
        assert logs_equal(log, back)
        # second write is byte-identical
        assert _roundtrip(back)[0] == text


def test_floats_survive_exactly():
    log = straight_log({1: (0.1 + 0.2, 1 / 3, 1e-7, 7.123456789012345)}, n_frames=3)
    _, back = _roundtrip(log)
    assert back.frames[2].agents[0].pose == log.frames[2].agents[0].pose


def test_ten_second_log_has_101_frame_lines():
    log = straight_log({1: (0, 0, 1, 0)}, n_frames=101)
    text, _ = _roundtrip(log)
    lines = text.splitlines()
    assert len(lines) == 1 + 101 + 1
    assert sum('"k":' in line for line in lines) == 101


def test_truncated_log_reports_line():
    log = straight_log({1: (0, 0, 1, 0)}, n_frames=10)
    text, _ = _roundtrip(log)
    lines = text.splitlines()
    with pytest.raises(DataError, match=r"line 12: missing termination"):
        read_log(io.StringIO("\n".join(lines[:-1]) + "\n"))
    cut = "\n".join(lines[:5]) + "\n" + lines[5][: len(lines[5]) // 2] + "\n"
    with pytest.raises(DataError, match=r"line 6"):
        read_log(io.StringIO(cut))
    skipped = "\n".join(lines[:3] + lines[4:]) + "\n"
    with pytest.raises(DataError, match=r"line 4: expected frame 2, found 3"):
        read_log(io.StringIO(skipped))
    with pytest.raises(DataError, match="line 1"):
        read_log(io.StringIO(""))


def test_bad_agent_record():
    log = straight_log({1: (0, 0, 1, 0)}, n_frames=3)
    text, _ = _roundtrip(log)
    lines = text.splitlines()
    rec = json.loads(lines[2])
    rec["agents"][0] = rec["agents"][0][:5]
    lines[2] = json.dumps(rec)
    with pytest.raises(DataError, match="line 3: agent record"):
        read_log(io.StringIO("\n".join(lines) + "\n"))


def test_field_roundtrip(real_logs):
    log = real_logs[0]
    field, _ = encode_motion(log, 1.5)
    buf = io.BytesIO()
    write_field(field, buf)
    back = read_field(io.BytesIO(buf.getvalue()))
    assert back.grid == field.grid
    for name in ("segmentation", "centerness", "offset", "flow"):
        assert np.array_equal(getattr(back, name), getattr(field, name))
    with pytest.raises(DataError, match="truncated"):
        read_field(io.BytesIO(buf.getvalue()[:-8]))
    with pytest.raises(DataError, match="magic"):
        read_field(io.BytesIO(b"XXXX" + buf.getvalue()))


def test_manifest_roundtrip(tmp_path):
    (tmp_path / "logs").mkdir()
    (tmp_path / "logs" / "a.jsonl").write_text("")
    entries = [ManifestEntry("a", 3, 17, "train", "logs/a.jsonl", "collision", 4.2)]
    m = DatasetManifest("0.1.0", entries, seed=5)
    write_manifest(m, tmp_path / "manifest.json")
    back = read_manifest(tmp_path / "manifest.json")
    assert back.entries == entries and back.seed == 5 and back.split_counts() == {"train": 1, "val": 0, "test": 0}
    (tmp_path / "logs" / "a.jsonl").unlink()
    with pytest.raises(DataError, match="missing log file"):
        read_manifest(tmp_path / "manifest.json")
    with pytest.raises(DataError, match="duplicate"):
        DatasetManifest("0", entries * 2)


def test_report_roundtrip(tmp_path):
    rep = {"format": "crashsim-report/1", "accident": {"apa": 0.5, "per_threshold": [0.4, 0.5, 0.6]}}
    write_report(rep, tmp_path / "r.json")
    assert read_report(tmp_path / "r.json") == rep
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(DataError):
        read_report(tmp_path / "bad.json")
