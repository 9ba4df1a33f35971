"""Time-tag records: binary format, raw-bit mapping, windowed rates and start-stop tuples.

A record is 16 bytes: a little-endian u64 channel word (0 = A, transmitted
arm; 1 = B, reflected arm) followed by a little-endian u64 timestamp in
picoseconds.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

RECORD_SIZE = 16
RECORD_DTYPE = np.dtype([("channel", "<u8"), ("t_ps", "<u8")])
DEFAULT_CHUNK_RECORDS = 1 << 20


class Channel(IntEnum):
    A = 0
    B = 1


class TagFormatError(ValueError):
    """Malformed record: truncated or with an unknown channel word."""


class TagOrderError(ValueError):
    def __init__(self, index: int, previous: int, current: int):
        super().__init__(
            f"timestamp decreases at record {index}: {current} ps after {previous} ps"
        )
        self.index = index


class TagIOError(OSError):
    def __init__(self, offset: int, cause: Exception):
        super().__init__(f"write failed at byte offset {offset}: {cause}")
        self.offset = offset


class TimeTag(NamedTuple):
    channel: Channel
    t_ps: int


@dataclass
class TagStream:
    """Column-wise tag stream. `duration_ps` is the observation span, if known."""

    channels: np.ndarray  # uint8, 0 = A, 1 = B
    times_ps: np.ndarray  # int64
    duration_ps: int | None = None

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.times_ps = np.asarray(self.times_ps, dtype=np.int64)
        if self.channels.shape != self.times_ps.shape or self.channels.ndim != 1:
            raise ValueError("channels and times must be 1-D arrays of equal length")

    @classmethod
    def empty(cls, duration_ps: int | None = None) -> "TagStream":
        return cls(np.zeros(0, np.uint8), np.zeros(0, np.int64), duration_ps)

    @classmethod
    def from_tags(cls, tags: Iterable[TimeTag], duration_ps: int | None = None) -> "TagStream":
        tags = list(tags)
        return cls(
            np.array([int(t.channel) for t in tags], dtype=np.uint8),
            np.array([int(t.t_ps) for t in tags], dtype=np.int64),
            duration_ps,
        )

    def __len__(self) -> int:
        return len(self.times_ps)

    def __iter__(self) -> Iterator[TimeTag]:
        for c, t in zip(self.channels.tolist(), self.times_ps.tolist()):
            yield TimeTag(Channel(c), t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return np.array_equal(self.channels, other.channels) and np.array_equal(
            self.times_ps, other.times_ps
        )

    @property
    def span_s(self) -> float:
        """Observation time in seconds: the recorded duration, else first-to-last tag."""
        if self.duration_ps is not None:
            return self.duration_ps * 1e-12
        if len(self) < 2:
            return 0.0
        return float(self.times_ps[-1] - self.times_ps[0]) * 1e-12

    def channel_times(self, channel: Channel) -> np.ndarray:
        return self.times_ps[self.channels == int(channel)]

    def singles_rates(self) -> tuple[float, float]:
        span = self.span_s
        if span <= 0:
            return 0.0, 0.0
        n_b = int(np.count_nonzero(self.channels))
        return (len(self) - n_b) / span, n_b / span

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.times_ps) >= 0))


def _to_records(stream: TagStream) -> np.ndarray:
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["channel"] = stream.channels
    rec["t_ps"] = stream.times_ps
    return rec


def encode_tags(stream: TagStream, sink: BinaryIO, chunk_records: int = DEFAULT_CHUNK_RECORDS) -> int:
    """Write the stream to a binary sink; returns the number of records written."""
    if len(stream) and stream.times_ps[0] < 0:
        raise ValueError("timestamps must be non-negative")
    if not stream.is_sorted():
        i = _first_disorder(stream.times_ps)
        raise TagOrderError(i, int(stream.times_ps[i - 1]), int(stream.times_ps[i]))
    offset = 0
    for start in range(0, len(stream), chunk_records):
        part = TagStream(
            stream.channels[start : start + chunk_records],
            stream.times_ps[start : start + chunk_records],
        )
        payload = _to_records(part).tobytes()
        try:
            sink.write(payload)
        except Exception as exc:  # any sink failure is reported with its position
            raise TagIOError(offset, exc) from exc
        offset += len(payload)
    return len(stream)


def tags_to_bytes(stream: TagStream) -> bytes:
    buf = io.BytesIO()
    encode_tags(stream, buf)
    return buf.getvalue()


def _first_disorder(times: np.ndarray) -> int:
    bad = np.flatnonzero(np.diff(times) < 0)
    return int(bad[0]) + 1


def _decode_block(raw: bytes, first_index: int, last_t: int | None) -> TagStream:
    if len(raw) % RECORD_SIZE:
        n_full = len(raw) // RECORD_SIZE
        raise TagFormatError(
            f"truncated record {first_index + n_full}: {len(raw) % RECORD_SIZE} trailing bytes"
        )
    rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
    ch = rec["channel"]
    bad = np.flatnonzero(ch > 1)
    if bad.size:
        i = int(bad[0])
        raise TagFormatError(f"unknown channel code {int(ch[i])} in record {first_index + i}")
    t = rec["t_ps"]
    if np.any(t > np.iinfo(np.int64).max):
        raise TagFormatError("timestamp exceeds the signed 64-bit range")
    t = t.astype(np.int64)
    if last_t is not None and t.size and t[0] < last_t:
        raise TagOrderError(first_index, last_t, int(t[0]))
    if t.size > 1 and np.any(np.diff(t) < 0):
        i = _first_disorder(t)
        raise TagOrderError(first_index + i, int(t[i - 1]), int(t[i]))
    return TagStream(ch.astype(np.uint8), t)


def iter_tag_chunks(source: BinaryIO, chunk_records: int = DEFAULT_CHUNK_RECORDS) -> Iterator[TagStream]:
    """Decode a binary source chunk by chunk, validating format and order across chunks."""
    index = 0
    last_t = None
    while True:
        raw = source.read(chunk_records * RECORD_SIZE)
        if not raw:
            return
        block = _decode_block(raw, index, last_t)
        if len(block):
            last_t = int(block.times_ps[-1])
        index += len(block)
        yield block


def decode_tags(source: BinaryIO | bytes, chunk_records: int = DEFAULT_CHUNK_RECORDS) -> Iterator[TimeTag]:
    """Lazily yield tags from bytes or a binary file object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(bytes(source))
    for block in iter_tag_chunks(source, chunk_records):
        yield from block


def read_tags(path: str | os.PathLike, duration_ps: int | None = None) -> TagStream:
    with open(path, "rb") as fh:
        blocks = list(iter_tag_chunks(fh))
    if not blocks:
        return TagStream.empty(duration_ps)
    return TagStream(
        np.concatenate([b.channels for b in blocks]),
        np.concatenate([b.times_ps for b in blocks]),
        duration_ps,
    )


def write_tags(stream: TagStream, path: str | os.PathLike) -> int:
    with open(path, "wb") as fh:
        return encode_tags(stream, fh)


@dataclass(frozen=True, eq=False)
class RawBits:
    """Unpacked 0/1 outcomes, one uint8 per bit."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1 or np.any(b > 1):
            raise ValueError("raw bits must be a 1-D array of 0/1 values")
        object.__setattr__(self, "bits", b)

    @classmethod
    def from_string(cls, text: str) -> "RawBits":
        return cls(np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0"))

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RawBits):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None

    def __str__(self) -> str:
        return (self.bits + ord("0")).tobytes().decode("ascii")

    def packed(self) -> bytes:
        return np.packbits(self.bits).tobytes()


def bits_from_tags(stream: TagStream) -> RawBits:
    """One bit per click: A (transmitted) -> 0, B (reflected) -> 1."""
    return RawBits(stream.channels.copy())


@dataclass(frozen=True)
class RateWindow:
    t_start_s: float
    r_a_cps: float
    r_b_cps: float


def windowed_rates(stream: TagStream, window_s: float) -> list[RateWindow]:
    """Per-channel click rates in consecutive windows starting at t = 0.

    The final window is divided by its actual length, so a partial window
    does not read low.
    """
    if window_s <= 0:
        raise ValueError("window must be positive")
    if len(stream) == 0:
        return []
    end_ps = stream.duration_ps if stream.duration_ps is not None else int(stream.times_ps[-1]) + 1
    width_ps = window_s * 1e12
    n_win = max(1, int(np.ceil(end_ps / width_ps)))
    idx = np.minimum((stream.times_ps / width_ps).astype(np.int64), n_win - 1)
    counts = np.zeros((2, n_win))
    np.add.at(counts, (stream.channels.astype(np.intp), idx), 1)
    starts = np.arange(n_win) * window_s
    lengths = np.full(n_win, window_s)
    lengths[-1] = end_ps * 1e-12 - starts[-1]
    return [
        RateWindow(float(s), float(a / w), float(b / w))
        for s, a, b, w in zip(starts, counts[0], counts[1], lengths)
    ]


RATES_HEADER = ("t_start_s", "r_a_cps", "r_b_cps")


def write_rates_csv(windows: list[RateWindow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RATES_HEADER)
    for row in windows:
        w.writerow([repr(row.t_start_s), repr(row.r_a_cps), repr(row.r_b_cps)])


def read_rates_csv(fh) -> list[RateWindow]:
    reader = csv.reader(fh)
    header = next(reader)
    if tuple(header) != RATES_HEADER:
        raise TagFormatError(f"unexpected rates header {header}")
    return [RateWindow(float(a), float(b), float(c)) for a, b, c in reader]


@dataclass(frozen=True)
class TupleWindow:
    """Largest start-stop separation (ns) accepted as an anti-bunched pair."""

    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"tuple window must be positive, got {self.t}")


def _select_pairs(channels: np.ndarray, times: np.ndarray, limit_ps: float) -> np.ndarray:
    """Start indices of the non-overlapping start-stop pairs, scanning left to right."""
    if len(times) < 2:
        return np.zeros(0, dtype=np.int64)
    cand = (channels[1:] != channels[:-1]) & (np.diff(times) <= limit_ps)
    # A greedy scan over a run of consecutive candidate pairs takes every
    # other pair starting with the first; a non-candidate ends the run.
    pos = np.arange(len(cand))
    is_start = cand & np.concatenate(([True], ~cand[:-1]))
    run_start = np.maximum.accumulate(np.where(is_start, pos, 0))
    chosen = cand & ((pos - run_start) % 2 == 0)
    return np.flatnonzero(chosen)


def antibunched_tuples(stream: TagStream, window: TupleWindow) -> RawBits:
    """Bold bits from consecutive opposite-detector pairs closer than the window.

    AB -> 0 and BA -> 1; each click belongs to at most one pair.
    """
    idx = _select_pairs(stream.channels, stream.times_ps, window.t * 1e3)
    return RawBits(stream.channels[idx].copy())


class TupleScanner:
    """Chunked tuple selection that carries the last unconsumed click across chunks."""

    def __init__(self, window: TupleWindow):
        self.limit_ps = window.t * 1e3
        self._carry: tuple[np.ndarray, np.ndarray] | None = None
        self._parts: list[np.ndarray] = []

    def feed(self, chunk: TagStream) -> None:
        ch, t = chunk.channels, chunk.times_ps
        if self._carry is not None:
            ch = np.concatenate((self._carry[0], ch))
            t = np.concatenate((self._carry[1], t))
        if len(t) == 0:
            return
        idx = _select_pairs(ch, t, self.limit_ps)
        self._parts.append(ch[idx].copy())
        # The last click stays available unless it was consumed as a stop.
        consumed_last = idx.size and idx[-1] == len(t) - 2
        if consumed_last:
            self._carry = None
        else:
            self._carry = (ch[-1:].copy(), t[-1:].copy())

    def result(self) -> RawBits:
        if not self._parts:
            return RawBits(np.zeros(0, np.uint8))
        return RawBits(np.concatenate(self._parts))
