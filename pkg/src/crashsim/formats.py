"""On-disk formats: JSON-lines scenario logs, binary motion grids, dataset manifests and metric reports."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .bev_motion import MotionField
from .geometry import GridSpec, Pose2
from .scenario_gen import ScenarioConfig
from .sim_kernel import AgentState, CollisionRecord, Frame, ScenarioLog

LOG_FORMAT = "crashsim-log/1"
MANIFEST_FORMAT = "crashsim-manifest/1"
REPORT_FORMAT = "crashsim-report/1"
FIELD_MAGIC = b"CSMF1\n"
FIELD_CHANNELS = ("segmentation", "centerness", "offset", "flow")

PathLike = Union[str, os.PathLike]


class DataError(ValueError):
    """Malformed or inconsistent data on disk."""


# --------------------------------------------------------------------------- scenario logs


def _dumps(obj) -> str:
    # json writes floats with repr(), i.e. shortest round-tripping form (up to 17 digits)
    return json.dumps(obj, separators=(",", ":"), sort_keys=True, allow_nan=False)


def _agent_record(a: AgentState) -> list:
    return [a.id, a.cls, a.role, a.pose.x, a.pose.y, a.pose.yaw, a.speed, a.length, a.width, a.s]


def write_log(log: ScenarioLog, path_or_file) -> None:
    lines = [_dumps({"format": LOG_FORMAT, "config": log.config.to_dict(), "meta": log.meta})]
    for f in log.frames:
        lines.append(_dumps({"k": f.k, "t": f.t, "agents": [_agent_record(a) for a in f.agents]}))
    col = None
    if log.collision is not None:
        col = {"ids": list(log.collision.ids), "point": list(log.collision.point), "t": log.collision.t}
    lines.append(_dumps({"termination": log.termination_reason, "collision": col}))
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        Path(path_or_file).write_text(text, encoding="utf-8")


def _parse_agent(rec, lineno: int) -> AgentState:
    if not isinstance(rec, list) or len(rec) != 10:
        raise DataError(f"line {lineno}: agent record must have 10 fields")
    aid, cls, role, x, y, yaw, v, length, width, s = rec
    return AgentState(int(aid), str(cls), str(role), Pose2(x, y, yaw), float(v), float(length), float(width), float(s))


def read_log(path_or_file) -> ScenarioLog:
    """Parse a log; any malformed or missing line raises DataError naming the line."""
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        text = Path(path_or_file).read_text(encoding="utf-8")
    raw = text.split("\n")
    if raw and raw[-1] == "":
        raw.pop()
    if not raw:
        raise DataError("line 1: empty log")
    records = []
    for n, line in enumerate(raw, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"line {n}: {exc.msg}") from None
    head = records[0]
    if not isinstance(head, dict) or head.get("format") != LOG_FORMAT:
        raise DataError(f"line 1: not a {LOG_FORMAT} header")
    try:
        config = ScenarioConfig.from_dict(head["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line 1: bad config ({exc})") from None
    frames = []
    tail = None
    for n, rec in enumerate(records[1:], start=2):
        if not isinstance(rec, dict):
            raise DataError(f"line {n}: expected an object")
        if "termination" in rec:
            if n != len(records):
                raise DataError(f"line {n}: termination record before end of file")
            tail = rec
            break
        try:
            k = int(rec["k"])
            agents = tuple(_parse_agent(a, n) for a in rec["agents"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"line {n}: bad frame ({exc})") from None
        if k != len(frames):
            raise DataError(f"line {n}: expected frame {len(frames)}, found {k}")
        frames.append(Frame(k, agents))
    if tail is None:
        raise DataError(f"line {len(records) + 1}: missing termination record (truncated log)")
    if not frames:
        raise DataError("line 2: log has no frames")
    col = tail.get("collision")
    collision = None
    if col is not None:
        collision = CollisionRecord(tuple(int(i) for i in col["ids"]), tuple(float(v) for v in col["point"]), float(col["t"]))
    return ScenarioLog(config, tuple(frames), collision, str(tail["termination"]), head.get("meta", {}))


def logs_equal(a: ScenarioLog, b: ScenarioLog) -> bool:
    if a.config != b.config or a.termination_reason != b.termination_reason or a.collision != b.collision:
        return False
    if a.meta != b.meta or len(a.frames) != len(b.frames):
        return False
    return all(fa.k == fb.k and fa.agents == fb.agents for fa, fb in zip(a.frames, b.frames))


# --------------------------------------------------------------------------- motion field grids


def write_field(mf: MotionField, path_or_file) -> None:
    """Magic line, little-endian u32 header length, JSON header, then float64 arrays in C (x-major) order."""
    header = {
        "format": "crashsim-field/1",
        "grid": mf.grid.to_dict(),
        "timesteps": mf.timesteps,
        "channels": list(FIELD_CHANNELS),
        "dtype": "<f8",
    }
    hb = _dumps(header).encode("utf-8")
    parts = [FIELD_MAGIC, struct.pack("<I", len(hb)), hb]
    for name in FIELD_CHANNELS:
        parts.append(np.ascontiguousarray(getattr(mf, name), dtype="<f8").tobytes(order="C"))
    blob = b"".join(parts)
    if hasattr(path_or_file, "write"):
        path_or_file.write(blob)
    else:
        Path(path_or_file).write_bytes(blob)


def read_field(path_or_file) -> MotionField:
    blob = path_or_file.read() if hasattr(path_or_file, "read") else Path(path_or_file).read_bytes()
    if not blob.startswith(FIELD_MAGIC):
        raise DataError("not a motion-field file (bad magic)")
    pos = len(FIELD_MAGIC)
    if len(blob) < pos + 4:
        raise DataError("truncated motion-field header")
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    try:
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"bad motion-field header: {exc}") from None
    pos += hlen
    grid = GridSpec.from_dict(header["grid"])
    T = int(header["timesteps"])
    shapes = {
        "segmentation": (T,) + grid.shape,
        "centerness": (T,) + grid.shape,
        "offset": (T,) + grid.shape + (2,),
        "flow": (T,) + grid.shape + (2,),
    }
    arrays = {}
    for name in header["channels"]:
        shape = shapes[name]
        n = int(np.prod(shape)) * 8
        if len(blob) < pos + n:
            raise DataError(f"truncated motion-field data in channel {name}")
        arrays[name] = np.frombuffer(blob, dtype=header["dtype"], count=n // 8, offset=pos).reshape(shape).astype(float)
        pos += n
    if pos != len(blob):
        raise DataError("trailing bytes after motion-field data")
    return MotionField(grid, arrays["segmentation"], arrays["centerness"], arrays["offset"], arrays["flow"])


# --------------------------------------------------------------------------- manifests and reports


@dataclass
class ManifestEntry:
    id: str
    type: int
    seed: int
    split: str
    path: str
    termination_reason: str
    collision_time: Optional[float]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DatasetManifest:
    version: str
    entries: List[ManifestEntry]
    ratios: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0
    extra: Dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate scenario ids in manifest")

    def split(self, name: str) -> List[ManifestEntry]:
        if name == "all":
            return list(self.entries)
        return [e for e in self.entries if e.split == name]

    def split_counts(self) -> Dict[str, int]:
        out = {"train": 0, "val": 0, "test": 0}
        for e in self.entries:
            out[e.split] = out.get(e.split, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": self.version,
            "seed": self.seed,
            "ratios": list(self.ratios),
            "split_counts": self.split_counts(),
            "scenarios": [e.to_dict() for e in self.entries],
            **({"extra": self.extra} if self.extra else {}),
        }


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path: PathLike, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"no manifest at {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if d.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a {MANIFEST_FORMAT} document")
    entries = [ManifestEntry(**e) for e in d["scenarios"]]
    if check_paths:
        for e in entries:
            if not (path.parent / e.path).exists():
                raise DataError(f"{path}: missing log file {e.path}")
    return DatasetManifest(d["version"], entries, tuple(d["ratios"]), d.get("seed", 0), d.get("extra", {}))


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: dict, path: PathLike) -> None:
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def read_report(path: PathLike) -> dict:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if d.get("format") != REPORT_FORMAT:
        raise DataError(f"{path}: not a {REPORT_FORMAT} document")
    return d
