"""PTAG time-tag file format and CSV fallback.

Binary layout (little-endian, fixed width for constant-time seeking):

    offset 0   magic  "PTAG" (4 bytes)
    offset 4   version  u16, currently 1
    offset 6   resolution_ps  u64 (timestamp unit; 1 = picoseconds)
    offset 14  records: { timestamp u64, channel u8 } repeated

Timestamps must be nondecreasing per channel.  Files ending in .csv are
read/written as `timestamp_ps,channel` text instead; parse errors carry the
byte offset (binary) or line number (CSV).
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import TagFileError, ValidationError

__all__ = ["TagFile", "PhotonRecord", "read_timetags", "write_timetags", "merge_channels"]

from .simulate import PhotonRecord

MAGIC = b"PTAG"
VERSION = 1
HEADER = struct.Struct("<4sHQ")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1")])


@dataclass(frozen=True)
class TagFile:
    """Parsed time-tag file: resolution and per-channel timestamp arrays."""

    resolution_ps: int
    channels: dict  # channel id -> int64 ps array, nondecreasing

    def stream(self, channel: int) -> np.ndarray:
        return self.channels[channel]


def merge_channels(channels: dict) -> np.ndarray:
    """Interleave per-channel streams into one time-sorted record array."""
    parts = []
    for ch, ts in sorted(channels.items()):
        ts = np.asarray(ts, dtype=np.int64)
        if ts.size and np.any(np.diff(ts) < 0):
            raise ValidationError(f"channel {ch} timestamps must be nondecreasing")
        if np.any(ts < 0):
            raise ValidationError(f"channel {ch} has negative timestamps")
        rec = np.empty(ts.size, dtype=RECORD_DTYPE)
        rec["timestamp"] = ts.astype(np.uint64)
        rec["channel"] = ch
        parts.append(rec)
    merged = np.concatenate(parts) if parts else np.empty(0, dtype=RECORD_DTYPE)
    # stable sort keeps channel order deterministic for equal timestamps
    return merged[np.argsort(merged["timestamp"], kind="stable")]


def write_timetags(path, channels: dict, resolution_ps: int = 1):
    """Write per-channel ps streams as PTAG (or CSV when path ends in .csv)."""
    merged = merge_channels(channels)
    if str(path).endswith(".csv"):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("timestamp_ps,channel\n")
            for rec in merged:
                fh.write(f"{int(rec['timestamp'])},{int(rec['channel'])}\n")
        return
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, resolution_ps))
        fh.write(merged.tobytes())


def _split_by_channel(timestamps, channels_col) -> dict:
    out = {}
    for ch in np.unique(channels_col):
        out[int(ch)] = timestamps[channels_col == ch].astype(np.int64)
    return out


def _read_binary(path) -> TagFile:
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        if len(head) < HEADER.size:
            raise TagFileError("truncated header", offset=len(head))
        magic, version, resolution = HEADER.unpack(head)
        if magic != MAGIC:
            raise TagFileError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
        if version != VERSION:
            raise TagFileError(f"unsupported version {version}", offset=4)
        body = fh.read()
    if len(body) % RECORD_DTYPE.itemsize != 0:
        raise TagFileError(
            "record section is not a whole number of 9-byte records",
            offset=HEADER.size + len(body) - len(body) % RECORD_DTYPE.itemsize,
        )
    records = np.frombuffer(body, dtype=RECORD_DTYPE)
    channels = {}
    for ch in np.unique(records["channel"]):
        sel = records["channel"] == ch
        ts = records["timestamp"][sel].astype(np.int64)
        bad = np.nonzero(np.diff(ts) < 0)[0]
        if bad.size:
            rec_index = int(np.nonzero(sel)[0][bad[0] + 1])
            raise TagFileError(
                f"non-monotone timestamps on channel {int(ch)}",
                offset=HEADER.size + rec_index * RECORD_DTYPE.itemsize,
            )
        channels[int(ch)] = ts
    return TagFile(resolution_ps=int(resolution), channels=channels)


def _read_csv(path) -> TagFile:
    timestamps = []
    channel_col = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.lower().startswith("timestamp_ps"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TagFileError("expected `timestamp_ps,channel`", line=lineno)
            try:
                timestamps.append(int(parts[0]))
                channel_col.append(int(parts[1]))
            except ValueError:
                raise TagFileError(f"non-integer field in {line!r}", line=lineno) from None
            if timestamps[-1] < 0:
                raise TagFileError("negative timestamp", line=lineno)
    ts = np.asarray(timestamps, dtype=np.int64)
    ch = np.asarray(channel_col, dtype=np.int64)
    channels = {}
    for c in np.unique(ch):
        sel_idx = np.nonzero(ch == c)[0]
        stream = ts[sel_idx]
        bad = np.nonzero(np.diff(stream) < 0)[0]
        if bad.size:
            raise TagFileError(
                f"non-monotone timestamps on channel {int(c)}",
                line=int(sel_idx[bad[0] + 1]) + 2,  # +1 header line, 1-based
            )
        channels[int(c)] = stream
    return TagFile(resolution_ps=1, channels=channels)


def read_timetags(path) -> TagFile:
    """Parse a PTAG file (CSV fallback by .csv extension) into per-channel
    streams, validated for per-channel monotonicity."""
    if not os.path.exists(path):
        raise TagFileError(f"no such file: {path}")
    if str(path).endswith(".csv"):
        return _read_csv(path)
    return _read_binary(path)
