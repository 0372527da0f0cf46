"""Event streams: representation, segmentation, encodings, and simulation.

An event is a (t, x, y, p) record emitted when the log intensity at a pixel
changes by a fixed threshold. Streams are stored as flat arrays sorted by
timestamp. Two synchronous encodings are provided: a temporal voxel grid
(tent-kernel deposit over bins) and a per-pixel polarity accumulation frame.
A deterministic threshold simulator converts log-intensity frame pairs back
into events.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_BINS = 5
DEFAULT_SEGMENTS = 201
DEFAULT_THRESHOLD = 0.2


@dataclass(frozen=True)
class Event:
    """One sensor record: nanosecond timestamp, pixel, polarity (+1/-1)."""

    t: int
    x: int
    y: int
    p: int

    def __post_init__(self):
        if self.p not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.t < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.t}")


@dataclass(frozen=True)
class EventStream:
    """Timestamp-sorted events over a half-open window [t_begin, t_end).

    Arrays share one length: t (int64 ns, non-decreasing), x/y (int32 pixel
    coordinates inside ``resolution``), p (int8, +1/-1).
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    resolution: tuple[int, int]
    t_begin: int
    t_end: int

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        x = np.ascontiguousarray(self.x, dtype=np.int32)
        y = np.ascontiguousarray(self.y, dtype=np.int32)
        p = np.ascontiguousarray(self.p, dtype=np.int8)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        n = t.shape[0]
        if not (x.shape[0] == y.shape[0] == p.shape[0] == n):
            raise ValueError("event arrays must share one length")
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise ValueError(f"bad resolution {self.resolution}")
        if self.t_begin > self.t_end:
            raise ValueError("t_begin must not exceed t_end")
        if n:
            if np.any(np.diff(t) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if t[0] < self.t_begin or t[-1] >= self.t_end:
                raise ValueError("event timestamps must lie in [t_begin, t_end)")
            if x.min() < 0 or x.max() >= w or y.min() < 0 or y.max() >= h:
                raise ValueError("event coordinates outside resolution")
            if not np.all(np.abs(p) == 1):
                raise ValueError("polarities must be +1 or -1")

    def __len__(self) -> int:
        return self.t.shape[0]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    @property
    def duration(self) -> int:
        return self.t_end - self.t_begin

    @classmethod
    def empty(cls, resolution, t_begin=0, t_end=0) -> EventStream:
        z = np.zeros(0)
        return cls(z, z, z, z, resolution, t_begin, t_end)

    @classmethod
    def from_events(cls, events, resolution, t_begin, t_end) -> EventStream:
        t = np.array([e.t for e in events], dtype=np.int64)
        x = np.array([e.x for e in events], dtype=np.int32)
        y = np.array([e.y for e in events], dtype=np.int32)
        p = np.array([e.p for e in events], dtype=np.int8)
        return cls(t, x, y, p, resolution, t_begin, t_end)


@dataclass(frozen=True)
class VoxelGrid:
    """Temporal event encoding: data has shape (bins, H, W), float64."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ValueError(f"voxel grid must be (bins, H, W), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("voxel grid must be finite")

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[1]


@dataclass(frozen=True)
class AccumFrame:
    """Per-pixel event statistics, shape (3, H, W).

    Channel 0 counts positive events, channel 1 counts negative events,
    channel 2 is the signed polarity sum (channel 0 - channel 1).
    """

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"accum frame must be (3, H, W), got {self.data.shape}")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[1]


@dataclass(frozen=True)
class SimulatorState:
    """Carry-over state of the threshold simulator.

    ``residual`` is the per-pixel log-intensity change not yet emitted as
    events; its magnitude stays below ``threshold`` after every step.
    """

    residual: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if not np.all(np.isfinite(self.residual)):
            raise ValueError("residual must be finite")

    @classmethod
    def zeros(cls, resolution, threshold=DEFAULT_THRESHOLD) -> SimulatorState:
        w, h = resolution
        return cls(np.zeros((h, w)), threshold)


def voxelize(stream: EventStream, bins: int = DEFAULT_BINS) -> VoxelGrid:
    """Deposit event polarities into ``bins`` temporal slices with a tent kernel.

    An event at time t maps to the fractional bin t* = (bins-1)(t - t_begin)/dt
    and adds p * max(0, 1 - |n - t*|) to each integer bin n. The tent kernels
    form a partition of unity on [0, bins-1], so the per-pixel sum over bins
    equals the signed polarity sum of the deposited events.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    w, h = stream.resolution
    grid = np.zeros((bins, h, w))
    if len(stream) == 0:
        return VoxelGrid(grid)
    dt = stream.t_end - stream.t_begin
    if dt <= 0:
        raise ValueError("degenerate window: t_end must exceed t_begin")
    tstar = (bins - 1) * ((stream.t - stream.t_begin) / dt)
    lo = np.floor(tstar).astype(np.int64)
    frac = tstar - lo
    pol = stream.p.astype(np.float64)
    flat = grid.reshape(-1)
    base = stream.y.astype(np.int64) * w + stream.x
    np.add.at(flat, lo * (h * w) + base, pol * (1.0 - frac))
    hi_ok = lo + 1 < bins
    np.add.at(flat, (lo[hi_ok] + 1) * (h * w) + base[hi_ok], pol[hi_ok] * frac[hi_ok])
    return VoxelGrid(grid)


def accumulate_frames(stream: EventStream) -> AccumFrame:
    """Count positive/negative events per pixel and their signed sum."""
    w, h = stream.resolution
    pos = np.zeros((h, w))
    neg = np.zeros((h, w))
    up = stream.p > 0
    np.add.at(pos, (stream.y[up], stream.x[up]), 1.0)
    np.add.at(neg, (stream.y[~up], stream.x[~up]), 1.0)
    return AccumFrame(np.stack([pos, neg, pos - neg]))


def integrate_events(stream: EventStream, threshold: float) -> np.ndarray:
    """Recover the per-pixel log-intensity change: threshold times the polarity sum."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    w, h = stream.resolution
    total = np.zeros((h, w))
    np.add.at(total, (stream.y, stream.x), stream.p.astype(np.float64))
    return threshold * total


def simulate_events(
    log_prev: np.ndarray,
    log_next: np.ndarray,
    t_prev: int,
    t_next: int,
    state: SimulatorState,
) -> tuple[EventStream, SimulatorState]:
    """Emit threshold-crossing events for one log-intensity frame pair.

    Per pixel, with d = log_next - log_prev + residual and threshold C,
    floor(|d| / C) events of sign(d) are emitted and the remainder d - n*sign*C
    becomes the new residual. Timestamps are spread evenly over the open
    interval (t_prev, t_next) and the result is globally time-sorted.
    Fully deterministic.
    """
    log_prev = np.asarray(log_prev, dtype=np.float64)
    log_next = np.asarray(log_next, dtype=np.float64)
    if log_prev.shape != log_next.shape or log_prev.shape != state.residual.shape:
        raise ValueError("frame and residual shapes must match")
    if not (np.all(np.isfinite(log_prev)) and np.all(np.isfinite(log_next))):
        raise ValueError("log-intensity maps must be finite")
    if t_next <= t_prev:
        raise ValueError("t_next must exceed t_prev")

    c = state.threshold
    h, w = log_prev.shape
    diff = log_next - log_prev + state.residual
    sign = np.sign(diff)
    count = np.floor(np.abs(diff) / c).astype(np.int64)
    residual = diff - sign * count * c
    new_state = SimulatorState(residual, c)

    total = int(count.sum())
    if total == 0:
        return EventStream.empty((w, h), t_prev, t_next), new_state

    ys, xs = np.nonzero(count)
    reps = count[ys, xs]
    ex = np.repeat(xs.astype(np.int32), reps)
    ey = np.repeat(ys.astype(np.int32), reps)
    ep = np.repeat(sign[ys, xs].astype(np.int8), reps)
    n_px = np.repeat(reps, reps)
    offsets = np.concatenate([[0], np.cumsum(reps)[:-1]])
    j = np.arange(total, dtype=np.int64) - np.repeat(offsets, reps)

    span = t_next - t_prev
    if span >= 2:
        off = (j + 1) * span // (n_px + 1)
        off = np.clip(off, 1, span - 1)
    else:
        off = np.zeros(total, dtype=np.int64)
    et = t_prev + off

    order = np.argsort(et, kind="stable")
    stream = EventStream(et[order], ex[order], ey[order], ep[order], (w, h), t_prev, t_next)
    return stream, new_state


def segment_stream(stream: EventStream, n: int) -> list[EventStream]:
    """Split a stream into n contiguous equal-duration half-open windows.

    Every event lands in exactly one segment; concatenating the segments
    reproduces the input sequence. Boundary events belong to the later
    segment.
    """
    if n < 1:
        raise ValueError("segment count must be >= 1")
    span = stream.t_end - stream.t_begin
    bounds = stream.t_begin + (np.arange(n + 1, dtype=np.int64) * span) // n
    starts = np.searchsorted(stream.t, bounds, side="left")
    out = []
    for k in range(n):
        a, b = starts[k], starts[k + 1]
        out.append(
            EventStream(
                stream.t[a:b],
                stream.x[a:b],
                stream.y[a:b],
                stream.p[a:b],
                stream.resolution,
                int(bounds[k]),
                int(bounds[k + 1]),
            )
        )
    return out


def concatenate_streams(streams: list[EventStream]) -> EventStream:
    """Join time-adjacent streams (each window must abut the next)."""
    if not streams:
        raise ValueError("need at least one stream")
    res = streams[0].resolution
    for a, b in zip(streams, streams[1:]):
        if a.resolution != res or b.resolution != res:
            raise ValueError("resolution mismatch")
        if a.t_end != b.t_begin:
            raise ValueError("streams must cover adjacent windows")
    return EventStream(
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.p for s in streams]),
        res,
        streams[0].t_begin,
        streams[-1].t_end,
    )
