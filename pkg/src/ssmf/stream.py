"""Event ingestion, time binning, and the sliding one-season frame queue.

The stream side of the package turns timestamped event tuples
(row key, column key, timestamp, count) into a sequence of sparse
nonnegative matrices, one per time bin, and maintains the most recent
season of frames for the online cost evaluations.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .validation import check_at_least, check_positive

_CACHE_MAGIC = b"SSMF"
_CACHE_VERSION = 1
_TRIPLE_DTYPE = np.dtype([("row", "<u4"), ("col", "<u4"), ("val", "<f8")])

_FREQUENCIES = {"hourly": 3600, "daily": 86400, "weekly": 604800}


class EventRecord(NamedTuple):
    """One accepted event after id assignment and time binning."""

    row_id: int
    col_id: int
    time: int
    count: float


@dataclass(frozen=True)
class EventSchema:
    """Column names mapping a delimited file onto event fields.

    ``count_col`` may be None, in which case every row counts as one event.
    """

    row_col: str
    col_col: str
    time_col: str
    count_col: str | None = None


@dataclass
class StreamConfig:
    """Shared stream and model settings.

    m, n        matrix dimensions
    s           season length (time bins per period)
    k           number of latent components
    eta         learning rate for the online gradient updates
    float_cost  bits charged per stored nonzero float in description costs
    sigma_floor lower bound on the residual coder's standard deviation
    bin_width   residual quantization width used by the encoding cost
    """

    m: int
    n: int
    s: int
    k: int = 15
    eta: float = 0.2
    float_cost: float = 32.0
    sigma_floor: float = 1e-6
    bin_width: float = 1.0

    def __post_init__(self):
        check_at_least(self.m, 1, "m")
        check_at_least(self.n, 1, "n")
        check_at_least(self.s, 1, "s")
        check_at_least(self.k, 1, "k")
        check_positive(self.eta, "eta")
        check_positive(self.float_cost, "float_cost")
        check_positive(self.sigma_floor, "sigma_floor")
        check_positive(self.bin_width, "bin_width")


class MatrixFrame:
    """One time step of the stream: a sparse nonnegative (m, n) matrix.

    Entries are stored as sorted coordinate triples; absent cells are true
    zeros. Frames are immutable once constructed.
    """

    __slots__ = ("t", "shape", "rows", "cols", "vals")

    def __init__(self, t: int, shape: tuple[int, int], rows, cols, vals):
        m, n = int(shape[0]), int(shape[1])
        rows = np.asarray(rows, dtype=np.uint32)
        cols = np.asarray(cols, dtype=np.uint32)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, vals must be 1-d arrays of equal length")
        if rows.size:
            if int(rows.max()) >= m or int(cols.max()) >= n:
                raise ValueError("entry index out of bounds for frame shape")
            if float(vals.min()) < 0.0:
                raise ValueError("frame entries must be nonnegative")
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            # merge duplicate coordinates by summing their counts
            flat = rows.astype(np.int64) * n + cols.astype(np.int64)
            keep = np.empty(flat.size, dtype=bool)
            keep[0] = True
            np.not_equal(flat[1:], flat[:-1], out=keep[1:])
            if not keep.all():
                starts = np.flatnonzero(keep)
                vals = np.add.reduceat(vals, starts)
                rows, cols = rows[starts], cols[starts]
        for a in (rows, cols, vals):
            a.setflags(write=False)
        object.__setattr__(self, "t", int(t))
        object.__setattr__(self, "shape", (m, n))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)

    def __setattr__(self, name, value):
        raise AttributeError("MatrixFrame is immutable")

    @classmethod
    def from_entries(cls, t: int, shape: tuple[int, int], entries: dict) -> "MatrixFrame":
        if entries:
            rows, cols = zip(*entries.keys())
            vals = list(entries.values())
        else:
            rows, cols, vals = (), (), ()
        return cls(t, shape, rows, cols, vals)

    @classmethod
    def from_dense(cls, t: int, matrix) -> "MatrixFrame":
        a = np.asarray(matrix, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("dense frame must be a 2-d matrix")
        rows, cols = np.nonzero(a)
        return cls(t, a.shape, rows, cols, a[rows, cols])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        out[self.rows, self.cols] = self.vals
        return out

    @property
    def entries(self) -> dict:
        return {
            (int(r), int(c)): float(v)
            for r, c, v in zip(self.rows, self.cols, self.vals)
        }

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    @property
    def total(self) -> float:
        return float(self.vals.sum())

    def __eq__(self, other):
        if not isinstance(other, MatrixFrame):
            return NotImplemented
        return (
            self.t == other.t
            and self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
        )

    def __repr__(self):
        return f"MatrixFrame(t={self.t}, shape={self.shape}, nnz={self.nnz})"


class SeasonQueue:
    """Sliding buffer of the most recent season of frames.

    Holds at most ``season_length`` frames with consecutive time indices
    ending at the current frontier. Dense copies of the buffered frames are
    cached for the repeated cost evaluations of a step.
    """

    def __init__(self, season_length: int):
        self.season_length = check_at_least(int(season_length), 1, "season_length")
        self._frames: list[MatrixFrame] = []
        self._dense: list[np.ndarray] = []
        self._stack: np.ndarray | None = None

    def push(self, frame: MatrixFrame) -> None:
        if self._frames:
            expected = self._frames[-1].t + 1
            if frame.t != expected:
                raise ValueError(
                    f"non-consecutive frame: expected t={expected}, got t={frame.t}"
                )
            if frame.shape != self._frames[0].shape:
                raise ValueError("frame shape changed mid-stream")
        self._frames.append(frame)
        self._dense.append(frame.to_dense())
        if len(self._frames) > self.season_length:
            self._frames.pop(0)
            self._dense.pop(0)
        self._stack = None

    @property
    def frames(self) -> tuple[MatrixFrame, ...]:
        return tuple(self._frames)

    @property
    def frontier(self) -> int | None:
        return self._frames[-1].t if self._frames else None

    def dense_stack(self) -> np.ndarray:
        if not self._frames:
            raise ValueError("queue is empty")
        if self._stack is None:
            self._stack = np.stack(self._dense)
        return self._stack

    def phases(self) -> np.ndarray:
        return np.array([f.t % self.season_length for f in self._frames], dtype=np.int64)

    def float_count(self) -> int:
        return sum(d.size for d in self._dense)

    def __len__(self) -> int:
        return len(self._frames)


@dataclass
class IngestResult:
    """Events plus the id maps and error log produced while reading a file."""

    events: list[EventRecord]
    row_keys: list[str]
    col_keys: list[str]
    skipped: list[tuple[int, str]] = field(default_factory=list)
    epoch: float = 0.0
    frequency_seconds: int = 1

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


def parse_frequency(value) -> int:
    """Resolve 'hourly'/'daily'/'weekly' or a seconds count to bin seconds."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key in _FREQUENCIES:
            return _FREQUENCIES[key]
        value = key
    try:
        seconds = int(value)
    except (TypeError, ValueError):
        raise ValueError(
            f"frequency must be hourly, daily, weekly, or a seconds count, got {value!r}"
        ) from None
    return check_at_least(seconds, 1, "frequency seconds")


def parse_timestamp(text) -> float:
    """Parse an ISO-8601 timestamp or a numeric seconds value."""
    if isinstance(text, (int, float)):
        return float(text)
    raw = str(text).strip()
    try:
        return float(raw)
    except ValueError:
        pass
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def ingest_events(
    path,
    schema: EventSchema,
    frequency,
    epoch=None,
) -> IngestResult:
    """Read a delimited event file and assign dense ids and time bins.

    Row and column ids are assigned in first-seen order. Malformed rows are
    skipped and recorded with their line number; a header that cannot be
    resolved against the schema is fatal. When ``epoch`` is None the epoch
    defaults to the earliest parseable timestamp floored to the bin width.
    """
    freq = parse_frequency(frequency)
    with open(path, "r", newline="", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise ValueError(f"{path}: empty input file")
        delimiter = "\t" if "\t" in header_line else ","
        header = next(csv.reader([header_line], delimiter=delimiter))
        columns = {name.strip(): i for i, name in enumerate(header)}

        def resolve(name, required=True):
            if name is None:
                return None
            if name not in columns:
                if required:
                    raise ValueError(f"{path}: column {name!r} not found in header {header}")
                return None
            return columns[name]

        i_row = resolve(schema.row_col)
        i_col = resolve(schema.col_col)
        i_time = resolve(schema.time_col)
        i_count = resolve(schema.count_col) if schema.count_col else None

        raw: list[tuple[int, str, str, float, float]] = []
        skipped: list[tuple[int, str]] = []
        for line_no, record in enumerate(csv.reader(fh, delimiter=delimiter), start=2):
            if not record or all(not f.strip() for f in record):
                continue
            try:
                row_key = record[i_row].strip()
                col_key = record[i_col].strip()
                ts = parse_timestamp(record[i_time])
                count = float(record[i_count]) if i_count is not None else 1.0
            except (IndexError, ValueError) as exc:
                skipped.append((line_no, f"malformed row: {exc}"))
                continue
            if count < 0:
                skipped.append((line_no, f"negative count {count}"))
                continue
            raw.append((line_no, row_key, col_key, ts, count))

    if epoch is None:
        if raw:
            t_min = min(r[3] for r in raw)
            epoch_s = float(np.floor(t_min / freq) * freq)
        else:
            epoch_s = 0.0
    else:
        epoch_s = parse_timestamp(epoch)

    row_ids: dict[str, int] = {}
    col_ids: dict[str, int] = {}
    events: list[EventRecord] = []
    for line_no, row_key, col_key, ts, count in raw:
        t_bin = int(np.floor((ts - epoch_s) / freq))
        if t_bin < 0:
            skipped.append((line_no, f"timestamp {ts} before epoch"))
            continue
        rid = row_ids.setdefault(row_key, len(row_ids))
        cid = col_ids.setdefault(col_key, len(col_ids))
        events.append(EventRecord(rid, cid, t_bin, count))

    skipped.sort(key=lambda item: item[0])
    return IngestResult(
        events=events,
        row_keys=list(row_ids),
        col_keys=list(col_ids),
        skipped=skipped,
        epoch=epoch_s,
        frequency_seconds=freq,
    )


def bin_to_frames(
    events: Iterable[EventRecord],
    cfg: StreamConfig,
    reorder_window: int = 0,
) -> Iterator[MatrixFrame]:
    """Accumulate events into one frame per time bin, in increasing t.

    Bins with no events yield explicit all-zero frames so the season phase
    stays aligned. Events may arrive out of order within ``reorder_window``
    bins of the newest one seen; anything older than the emitted frontier is
    a late arrival and raises.
    """
    check_at_least(reorder_window, 0, "reorder_window")
    shape = (cfg.m, cfg.n)
    pending: dict[int, dict[tuple[int, int], float]] = {}
    frontier = 0  # next time bin to emit
    max_seen = -1

    def flush_until(limit: int) -> Iterator[MatrixFrame]:
        nonlocal frontier
        while frontier < limit:
            cells = pending.pop(frontier, None)
            if cells is None:
                yield MatrixFrame.from_entries(frontier, shape, {})
            else:
                yield MatrixFrame.from_entries(frontier, shape, cells)
            frontier += 1

    for ev in events:
        if ev.row_id >= cfg.m or ev.col_id >= cfg.n:
            raise ValueError(f"event id out of bounds for ({cfg.m}, {cfg.n}): {ev}")
        if ev.count < 0:
            raise ValueError(f"negative event count: {ev}")
        if ev.time < frontier:
            raise ValueError(
                f"late arrival: event at t={ev.time} behind emitted frontier t={frontier}"
            )
        cells = pending.setdefault(ev.time, {})
        key = (ev.row_id, ev.col_id)
        cells[key] = cells.get(key, 0.0) + ev.count
        if ev.time > max_seen:
            max_seen = ev.time
            yield from flush_until(max_seen - reorder_window)
    yield from flush_until(max_seen + 1)


def write_frame_record(fh, frame: MatrixFrame) -> None:
    """One length-prefixed record: ``t u64, nnz u64`` then ``nnz``
    interleaved ``(row u32, col u32, val f64)`` triples."""
    fh.write(struct.pack("<QQ", frame.t, frame.nnz))
    if frame.nnz:
        triples = np.empty(frame.nnz, dtype=_TRIPLE_DTYPE)
        triples["row"] = frame.rows
        triples["col"] = frame.cols
        triples["val"] = frame.vals
        fh.write(triples.tobytes())


def read_frame_record(fh, m: int, n: int) -> MatrixFrame | None:
    head = fh.read(16)
    if not head:
        return None
    if len(head) < 16:
        raise ValueError("truncated frame record")
    t, nnz = struct.unpack("<QQ", head)
    triples = np.frombuffer(fh.read(_TRIPLE_DTYPE.itemsize * nnz), dtype=_TRIPLE_DTYPE)
    if triples.size != nnz:
        raise ValueError(f"truncated frame payload at t={t}")
    return MatrixFrame(t, (m, n), triples["row"], triples["col"], triples["val"])


def write_frame_cache(path, frames: Sequence[MatrixFrame], m: int, n: int, s: int = 0) -> None:
    """Write frames to the binary cache format.

    Layout (little-endian): header (magic ``SSMF``, version u32, m u32,
    n u32, s u32), then one frame record per frame. ``s`` may be 0 when the
    season length is not yet decided.
    """
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIII", _CACHE_MAGIC, _CACHE_VERSION, m, n, s))
        for frame in frames:
            if frame.shape != (m, n):
                raise ValueError(f"frame shape {frame.shape} does not match cache ({m}, {n})")
            write_frame_record(fh, frame)


def read_frame_cache(path) -> tuple[list[MatrixFrame], int, int, int]:
    """Read a binary frame cache; returns (frames, m, n, s)."""
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20:
            raise ValueError(f"{path}: truncated cache header")
        magic, version, m, n, s = struct.unpack("<4sIIII", head)
        if magic != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a frame cache (bad magic {magic!r})")
        if version != _CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        frames: list[MatrixFrame] = []
        while True:
            frame = read_frame_record(fh, m, n)
            if frame is None:
                break
            frames.append(frame)
    return frames, m, n, s


def write_id_map(path, keys: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "key"])
        for i, key in enumerate(keys):
            writer.writerow([i, key])


def frames_total(frames: Iterable[MatrixFrame]) -> float:
    """Sum of all entries across frames; pairs with event-count conservation."""
    return float(sum(f.total for f in frames))
