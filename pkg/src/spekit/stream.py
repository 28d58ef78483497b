"""Time-tag streams and the ETT1 binary format.

ETT1 layout (little-endian throughout)::

    header  16 bytes  magic b"ETT1" | version u16 | channel count u16 | record count u64
    record   9 bytes  timestamp u64 (ps) | channel u8 (0=A, 1=B, 2=SYNC)

The stream duration is not part of the binary; it travels in the JSON sidecar
written next to the ``.ett`` file (``<file>.json``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

CH_A = 0
CH_B = 1
CH_SYNC = 2
CHANNEL_NAMES = {CH_A: "A", CH_B: "B", CH_SYNC: "SYNC"}

MAGIC = b"ETT1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1")])
assert HEADER.size == 16 and RECORD_DTYPE.itemsize == 9


@dataclass
class TimeTagStream:
    timestamps: np.ndarray  # uint64 picoseconds, non-decreasing
    channels: np.ndarray  # uint8
    duration: int  # picoseconds
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.uint64)
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.duration = int(self.duration)

    def validate(self):
        t = self.timestamps
        if t.shape != self.channels.shape:
            raise ValidationError("timestamps and channels differ in length")
        if t.size and np.any(t[1:] < t[:-1]):
            raise ValidationError("timestamps must be non-decreasing")
        if t.size and int(t[-1]) >= self.duration:
            raise ValidationError("timestamps must lie below the stream duration")
        if np.any(self.channels > CH_SYNC):
            raise ValidationError("channel codes must be 0 (A), 1 (B) or 2 (SYNC)")
        return self

    def __len__(self):
        return int(self.timestamps.size)

    def channel(self, ch):
        """Timestamps (int64 ps) of one channel, in order."""
        return self.timestamps[self.channels == ch].astype(np.int64)

    @property
    def duration_s(self):
        return self.duration * 1e-12

    def count(self, ch):
        return int(np.count_nonzero(self.channels == ch))

    def swapped(self):
        """Copy with channels A and B exchanged."""
        ch = self.channels.copy()
        ch[self.channels == CH_A] = CH_B
        ch[self.channels == CH_B] = CH_A
        order = np.lexsort((ch, self.timestamps))
        return TimeTagStream(self.timestamps[order], ch[order], self.duration, dict(self.metadata))

    def to_bytes(self):
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["timestamp"] = self.timestamps
        rec["channel"] = self.channels
        return HEADER.pack(MAGIC, FORMAT_VERSION, 3, len(self)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data, duration=None, metadata=None):
        if len(data) < HEADER.size:
            raise ValidationError("file too short for an ETT1 header")
        magic, version, _nch, n = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ValidationError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported ETT1 version {version}")
        expected = HEADER.size + n * RECORD_DTYPE.itemsize
        if len(data) != expected:
            raise ValidationError(f"ETT1 size mismatch: {len(data)} bytes, expected {expected}")
        rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=n, offset=HEADER.size)
        ts = rec["timestamp"].copy()
        if duration is None:
            duration = int(ts[-1]) + 1 if n else 0
        return cls(ts, rec["channel"].copy(), duration, dict(metadata or {})).validate()


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_ett(stream: TimeTagStream, path, write_sidecar=True):
    path = Path(path)
    path.write_bytes(stream.to_bytes())
    if write_sidecar:
        side = {"schema_version": 1, "format": "ETT1", "duration_ps": stream.duration,
                "n_records": len(stream), **stream.metadata}
        sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def read_ett(path):
    path = Path(path)
    data = path.read_bytes()
    side = sidecar_path(path)
    duration, meta = None, {}
    if side.exists():
        meta = json.loads(side.read_text())
        duration = meta.get("duration_ps")
    return TimeTagStream.from_bytes(data, duration=duration, metadata=meta)


def merge_sorted(parts, duration, metadata=None):
    """Concatenate (timestamps, channels) pairs and sort by (timestamp, channel)."""
    if parts:
        ts = np.concatenate([p[0].astype(np.uint64) for p in parts])
        ch = np.concatenate([p[1].astype(np.uint8) for p in parts])
    else:
        ts = np.empty(0, np.uint64)
        ch = np.empty(0, np.uint8)
    order = np.lexsort((ch, ts))
    return TimeTagStream(ts[order], ch[order], duration, metadata or {})
