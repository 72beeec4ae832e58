"""Mobility trace ingestion, presence timelines and time-allocation profiles.

Traces are CDR-style CSV files with header ``user_id,timestamp,region_id``.
Timestamps are stored internally as integer seconds since the Unix epoch
(UTC); days are aligned on UTC midnight.
"""

from __future__ import annotations

import io
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import IO, Iterable, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

DAY = 86400
HEADER = "user_id,timestamp,region_id"

_ROW_RE = re.compile(
    r"^([A-Za-z0-9_-]+),(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2})Z,([A-Za-z0-9_-]+)$"
)
_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")

Source = Union[str, os.PathLike, IO[bytes], IO[str]]
UserRef = Union[str, int, np.integer]


class TraceFormatError(ValueError):
    """Fatal problem with a trace or registry file."""


class UnknownUserError(KeyError):
    pass


class NoEventsError(ValueError):
    """The user exists but has no events usable for the request."""


@dataclass(frozen=True)
class ParseReport:
    rows: int = 0
    accepted: int = 0
    malformed: int = 0
    unknown_region: int = 0
    out_of_span: int = 0
    users: int = 0
    regions: int = 0

    @property
    def rejected(self) -> int:
        return self.malformed + self.unknown_region + self.out_of_span


@dataclass(frozen=True, eq=False)
class TraceSet:
    """Per-user sorted event sequences over fixed region and user registries.

    Events are stored flat, grouped by user index (CSR layout): the events of
    user ``u`` occupy ``offsets[u]:offsets[u + 1]`` in ``user``, ``time`` and
    ``region``.
    """

    regions: tuple[str, ...]
    users: tuple[str, ...]
    user: np.ndarray
    time: np.ndarray
    region: np.ndarray
    offsets: np.ndarray
    start: int
    end: int
    report: ParseReport = field(default_factory=ParseReport)

    def __post_init__(self):
        for arr in (self.user, self.time, self.region, self.offsets):
            arr.flags.writeable = False
        object.__setattr__(
            self, "_user_lookup", {u: i for i, u in enumerate(self.users)}
        )
        object.__setattr__(
            self, "_region_lookup", {r: i for i, r in enumerate(self.regions)}
        )

    @classmethod
    def from_indices(
        cls,
        regions: Sequence[str],
        users: Sequence[str],
        user: np.ndarray,
        time: np.ndarray,
        region: np.ndarray,
        span: tuple[int, int] | None = None,
        report: ParseReport | None = None,
    ) -> "TraceSet":
        """Build a TraceSet from per-event index arrays in input order.

        Events are sorted by (user, time, region), so the result does not depend
        on input order. Of several events at the same instant, the one with the
        highest region index is the one that determines presence.
        """
        regions = tuple(regions)
        users = tuple(users)
        if len(set(regions)) != len(regions) or len(set(users)) != len(users):
            raise ValueError("registries must be duplicate-free")
        user = np.asarray(user, dtype=np.int64)
        time = np.asarray(time, dtype=np.int64)
        region = np.asarray(region, dtype=np.int64)
        if not (len(user) == len(time) == len(region)):
            raise ValueError("event arrays must have equal length")
        if len(user) and (user.min() < 0 or user.max() >= len(users)):
            raise ValueError("user index out of registry range")
        if len(region) and (region.min() < 0 or region.max() >= len(regions)):
            raise ValueError("region index out of registry range")
        order = np.lexsort((region, time, user))
        user, time, region = user[order], time[order], region[order]
        if span is None:
            if len(time):
                start = int(time.min()) // DAY * DAY
                end = int(time.max()) // DAY * DAY + DAY
            else:
                start = end = 0
        else:
            start, end = int(span[0]), int(span[1])
            if len(time) and (time.min() < start or time.max() >= end):
                raise ValueError("event outside the declared time span")
        offsets = np.zeros(len(users) + 1, dtype=np.int64)
        np.cumsum(np.bincount(user, minlength=len(users)), out=offsets[1:])
        if report is None:
            report = ParseReport(
                rows=len(user), accepted=len(user), users=len(users), regions=len(regions)
            )
        return cls(
            regions=regions,
            users=users,
            user=user.astype(np.int32),
            time=time,
            region=region.astype(np.int32),
            offsets=offsets,
            start=start,
            end=end,
            report=report,
        )

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_events(self) -> int:
        return len(self.time)

    @property
    def n_days(self) -> int:
        return (self.end - self.start) // DAY

    def user_index(self, user: UserRef) -> int:
        if isinstance(user, (int, np.integer)):
            if not 0 <= user < len(self.users):
                raise UnknownUserError(user)
            return int(user)
        try:
            return self._user_lookup[user]
        except KeyError:
            raise UnknownUserError(user) from None

    def region_index(self, region: str) -> int:
        try:
            return self._region_lookup[region]
        except KeyError:
            raise KeyError(f"unknown region {region!r}") from None

    def events_of(self, user: UserRef) -> tuple[np.ndarray, np.ndarray]:
        """Return (times, region indices) of one user's events."""
        u = self.user_index(user)
        sl = slice(self.offsets[u], self.offsets[u + 1])
        return self.time[sl], self.region[sl]

    def day_start(self, day: int) -> int:
        """Timestamp of midnight starting day ``day`` counted from ``start``."""
        return self.start + day * DAY


# ---------------------------------------------------------------------------
# Parsing


def _open_text(source: Source) -> str:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceFormatError(f"input is not valid UTF-8: {exc}") from None
    return data.lstrip("﻿")


def parse_timestamp(text: str) -> int:
    """``YYYY-MM-DDTHH:MM:SSZ`` -> epoch seconds."""
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(seconds: int) -> str:
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


def _to_epoch(stamps: list[str]) -> np.ndarray:
    """Vectorised timestamp conversion; invalid calendar dates map to -2**62."""
    if not stamps:
        return np.zeros(0, dtype=np.int64)
    try:
        return np.array(stamps, dtype="datetime64[s]").astype(np.int64)
    except ValueError:
        out = np.empty(len(stamps), dtype=np.int64)
        for j, s in enumerate(stamps):
            try:
                out[j] = np.datetime64(s, "s").astype(np.int64)
            except ValueError:
                out[j] = -(2**62)
        return out


def read_region_registry(source: Source) -> tuple[str, ...]:
    """Read a region registry file: optional ``region_id`` header, one id per line."""
    lines = [ln.strip() for ln in _open_text(source).splitlines()]
    lines = [ln for ln in lines if ln]
    if lines and lines[0] == "region_id":
        lines = lines[1:]
    for ln in lines:
        if not _ID_RE.match(ln):
            raise TraceFormatError(f"invalid region identifier {ln!r}")
    if len(set(lines)) != len(lines):
        raise TraceFormatError("duplicate region identifier in registry")
    return tuple(lines)


def write_region_registry(regions: Iterable[str], stream: IO[str]) -> None:
    stream.write("region_id\n")
    for r in regions:
        stream.write(f"{r}\n")


def parse_traces(
    source: Source,
    regions: Sequence[str] | None = None,
    span: tuple[int, int] | None = None,
    strict: bool = False,
) -> TraceSet:
    """Parse a trace CSV into a :class:`TraceSet`.

    Without a pre-declared ``regions`` registry, regions are registered in
    sorted order so that the result does not depend on row order; users are
    always registered in sorted order.

    A malformed header raises :class:`TraceFormatError`. Malformed rows, rows
    naming a region outside a pre-declared registry and rows outside ``span``
    are skipped and counted in ``TraceSet.report``; with ``strict=True`` the
    first such row raises instead.
    """
    text = _open_text(source)
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        head = lines[0] if lines else ""
        raise TraceFormatError(f"expected header {HEADER!r}, got {head!r}")

    user_ids: list[str] = []
    stamps: list[str] = []
    region_ids: list[str] = []
    line_nos: list[int] = []
    malformed = 0
    rows = 0
    match = _ROW_RE.match
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rows += 1
        m = match(line.rstrip("\r"))
        if m is None:
            if strict:
                raise TraceFormatError(f"line {lineno}: malformed row {line!r}")
            malformed += 1
            continue
        u, ts, r = m.groups()
        user_ids.append(u)
        stamps.append(ts)
        region_ids.append(r)
        line_nos.append(lineno)

    times = _to_epoch(stamps)
    keep = times != -(2**62)
    if not keep.all():
        if strict:
            bad = line_nos[int(np.flatnonzero(~keep)[0])]
            raise TraceFormatError(f"line {bad}: invalid timestamp")
        malformed += int((~keep).sum())

    unknown_region = 0
    if regions is not None:
        registry = tuple(regions)
        lookup = {r: i for i, r in enumerate(registry)}
        known = np.fromiter((r in lookup for r in region_ids), dtype=bool, count=len(region_ids))
        bad_region = keep & ~known
        if bad_region.any():
            if strict:
                bad = line_nos[int(np.flatnonzero(bad_region)[0])]
                raise TraceFormatError(f"line {bad}: unknown region")
            unknown_region = int(bad_region.sum())
        keep &= known
    else:
        registry = tuple(sorted({r for r, k in zip(region_ids, keep) if k}))
        lookup = {r: i for i, r in enumerate(registry)}

    out_of_span = 0
    if span is not None:
        inside = (times >= span[0]) & (times < span[1])
        bad_span = keep & ~inside
        if bad_span.any():
            if strict:
                bad = line_nos[int(np.flatnonzero(bad_span)[0])]
                raise TraceFormatError(f"line {bad}: timestamp outside declared span")
            out_of_span = int(bad_span.sum())
        keep &= inside

    idx = np.flatnonzero(keep)
    kept_users = [user_ids[j] for j in idx]
    user_registry = tuple(sorted(set(kept_users)))
    ulookup = {u: i for i, u in enumerate(user_registry)}
    user_idx = np.fromiter((ulookup[u] for u in kept_users), dtype=np.int64, count=len(idx))
    region_idx = np.fromiter(
        (lookup[region_ids[j]] for j in idx), dtype=np.int64, count=len(idx)
    )
    report = ParseReport(
        rows=rows,
        accepted=len(idx),
        malformed=malformed,
        unknown_region=unknown_region,
        out_of_span=out_of_span,
        users=len(user_registry),
        regions=len(registry),
    )
    logger.info(
        "parsed %d rows: %d accepted, %d rejected, %d users, %d regions",
        report.rows, report.accepted, report.rejected, report.users, report.regions,
    )
    return TraceSet.from_indices(
        registry, user_registry, user_idx, times[idx], region_idx, span=span, report=report
    )


def write_traces(trace: TraceSet, stream: IO[str]) -> None:
    """Write ``trace`` in the CSV trace format, events grouped by user."""
    stream.write(HEADER + "\n")
    if trace.n_events == 0:
        return
    users = np.asarray(trace.users, dtype=object)[trace.user]
    regions = np.asarray(trace.regions, dtype=object)[trace.region]
    # Format each distinct timestamp once.
    uniq, inv = np.unique(trace.time, return_inverse=True)
    stamps = np.asarray([format_timestamp(t) for t in uniq], dtype=object)[inv]
    buf = io.StringIO()
    for u, t, r in zip(users, stamps, regions):
        buf.write(f"{u},{t},{r}\n")
    stream.write(buf.getvalue())


# ---------------------------------------------------------------------------
# Presence timelines


@dataclass(frozen=True, eq=False)
class PresenceTimeline:
    """Piecewise-constant location of one user over ``[start, end)``.

    ``region[j]`` is occupied during ``[starts[j], ends[j])``; segments are
    contiguous and adjacent segments never share a region.
    """

    user: str
    region: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    registry: tuple[str, ...]

    @property
    def start(self) -> int:
        return int(self.starts[0])

    @property
    def end(self) -> int:
        return int(self.ends[-1])

    @property
    def segments(self) -> list[tuple[str, int, int]]:
        return [
            (self.registry[r], int(a), int(b))
            for r, a, b in zip(self.region, self.starts, self.ends)
        ]

    def durations(self) -> np.ndarray:
        """Total occupancy seconds per region, in registry order."""
        return np.bincount(
            self.region, weights=(self.ends - self.starts), minlength=len(self.registry)
        )


def _check_window(trace: TraceSet, window: tuple[int, int]) -> tuple[int, int]:
    ws, we = int(window[0]), int(window[1])
    if we <= ws:
        raise ValueError("empty window")
    if ws < trace.start or we > trace.end:
        raise ValueError("window outside the trace time span")
    return ws, we


def build_presence(trace: TraceSet, user: UserRef, window: tuple[int, int]) -> PresenceTimeline:
    """Presence of ``user`` over ``window``.

    The user is in the region of their latest event at or before each instant;
    before their first event they are placed in the first event's region.
    """
    ws, we = _check_window(trace, window)
    u = trace.user_index(user)
    times, regions = trace.events_of(u)
    if len(times) == 0:
        raise NoEventsError(f"user {trace.users[u]!r} has no events")
    last_before = np.searchsorted(times, ws, side="right") - 1
    first_region = regions[max(last_before, 0)]
    inside = (times > ws) & (times < we)
    starts = np.concatenate(([ws], times[inside]))
    region = np.concatenate(([first_region], regions[inside]))
    # Of simultaneous events the last in sort order wins.
    ends = np.append(starts[1:], we)
    nonzero = ends > starts
    starts, ends, region = starts[nonzero], ends[nonzero], region[nonzero]
    change = np.ones(len(region), dtype=bool)
    change[1:] = region[1:] != region[:-1]
    keep = np.flatnonzero(change)
    ends = np.append(starts[keep[1:]], we)
    return PresenceTimeline(
        user=trace.users[u],
        region=region[keep].astype(np.int32),
        starts=starts[keep].astype(np.int64),
        ends=ends.astype(np.int64),
        registry=trace.regions,
    )


def _epoch_day(day: Union[int, date]) -> int:
    if isinstance(day, date):
        return (day - date(1970, 1, 1)).days
    return int(day)


def modal_region(timeline: PresenceTimeline, day: Union[int, date]) -> str:
    """Region occupied longest on ``day`` (a date or epoch-day number).

    Ties go to the lowest registry index. Only the part of the day inside the
    timeline window counts.
    """
    d0 = _epoch_day(day) * DAY
    lo, hi = max(d0, timeline.start), min(d0 + DAY, timeline.end)
    if hi <= lo:
        raise ValueError("day outside the timeline window")
    overlap = np.clip(np.minimum(timeline.ends, hi) - np.maximum(timeline.starts, lo), 0, None)
    occ = np.bincount(timeline.region, weights=overlap, minlength=len(timeline.registry))
    return timeline.registry[int(np.argmax(occ))]


# ---------------------------------------------------------------------------
# Profiles


@dataclass(frozen=True, eq=False)
class MobilityProfile:
    user: str
    allocation: np.ndarray
    registry: tuple[str, ...]

    def __post_init__(self):
        self.allocation.flags.writeable = False


@dataclass(frozen=True, eq=False)
class ProfileSet:
    """Time-allocation profiles for many users.

    Row ``j`` of ``matrix`` belongs to user index ``users[j]`` of the trace's
    user registry. ``excluded`` lists user indices that have no usable events.
    """

    user_ids: tuple[str, ...]
    users: np.ndarray
    matrix: np.ndarray
    registry: tuple[str, ...]
    excluded: np.ndarray

    def __post_init__(self):
        self.matrix.flags.writeable = False
        self.users.flags.writeable = False
        object.__setattr__(self, "_row", {u: j for j, u in enumerate(self.user_ids)})

    def __len__(self) -> int:
        return len(self.user_ids)

    def __contains__(self, user: str) -> bool:
        return user in self._row

    def __getitem__(self, user: str) -> MobilityProfile:
        return MobilityProfile(user, self.matrix[self._row[user]].copy(), self.registry)

    def row_of(self, user: str) -> int:
        return self._row[user]


def _segment_bounds(trace: TraceSet) -> tuple[np.ndarray, np.ndarray]:
    """Open-ended occupancy segment of every event under last-observation fill."""
    n = trace.n_events
    seg_start = trace.time.astype(np.int64).copy()
    seg_end = np.empty(n, dtype=np.int64)
    if n:
        seg_end[:-1] = trace.time[1:]
        seg_end[-1] = np.iinfo(np.int64).max
        last = trace.offsets[1:][np.diff(trace.offsets) > 0] - 1
        seg_end[last] = np.iinfo(np.int64).max
        first = trace.offsets[:-1][np.diff(trace.offsets) > 0]
        seg_start[first] = np.iinfo(np.int64).min
    return seg_start, seg_end


def build_profiles(trace: TraceSet, window: tuple[int, int]) -> ProfileSet:
    """Profiles of every user with at least one event before the window ends."""
    ws, we = _check_window(trace, window)
    seg_start, seg_end = _segment_bounds(trace)
    dur = np.clip(np.minimum(seg_end, we) - np.maximum(seg_start, ws), 0, None)
    m = trace.n_regions
    occ = np.bincount(
        trace.user.astype(np.int64) * m + trace.region,
        weights=dur.astype(np.float64),
        minlength=trace.n_users * m,
    ).reshape(trace.n_users, m)
    counts = np.diff(trace.offsets)
    first_time = np.full(trace.n_users, np.iinfo(np.int64).max)
    has = counts > 0
    first_time[has] = trace.time[trace.offsets[:-1][has]]
    usable = first_time < we
    users = np.flatnonzero(usable)
    matrix = occ[users] / float(we - ws)
    return ProfileSet(
        user_ids=tuple(trace.users[u] for u in users),
        users=users,
        matrix=matrix,
        registry=trace.regions,
        excluded=np.flatnonzero(~usable),
    )


def build_profile(trace: TraceSet, user: UserRef, window: tuple[int, int]) -> MobilityProfile:
    """Fraction of ``window`` the user spends in each region."""
    ws, we = _check_window(trace, window)
    u = trace.user_index(user)
    times, _ = trace.events_of(u)
    if len(times) == 0 or times[0] >= we:
        raise NoEventsError(f"user {trace.users[u]!r} has no events within or before the window")
    timeline = build_presence(trace, u, (ws, we))
    return MobilityProfile(trace.users[u], timeline.durations() / float(we - ws), trace.regions)


def daily_locations(trace: TraceSet, first_day: int, n_days: int) -> np.ndarray:
    """Modal region of every user on each of ``n_days`` days.

    ``first_day`` counts days from ``trace.start``. Returns an int32 array of
    shape ``(n_days, n_users)``; users without events get -1.
    """
    ws = trace.day_start(first_day)
    we = ws + n_days * DAY
    _check_window(trace, (ws, we))
    n_users, m = trace.n_users, trace.n_regions
    out = np.full((n_days, n_users), -1, dtype=np.int32)
    if trace.n_events == 0:
        return out
    seg_start, seg_end = _segment_bounds(trace)
    a = np.maximum(seg_start, ws)
    b = np.minimum(seg_end, we)
    live = b > a
    a, b = a[live], b[live]
    user = trace.user[live].astype(np.int64)
    region = trace.region[live].astype(np.int64)
    d_first = (a - ws) // DAY
    d_last = (b - 1 - ws) // DAY
    n_pieces = d_last - d_first + 1
    rep = np.repeat(np.arange(len(a)), n_pieces)
    offset = np.arange(len(rep)) - np.repeat(np.cumsum(n_pieces) - n_pieces, n_pieces)
    day = d_first[rep] + offset
    lo = np.maximum(a[rep], ws + day * DAY)
    hi = np.minimum(b[rep], ws + (day + 1) * DAY)
    key = (user[rep] * n_days + day) * m + region[rep]
    uniq, inv = np.unique(key, return_inverse=True)
    occ = np.bincount(inv, weights=(hi - lo).astype(np.float64))
    ud = uniq // m
    reg = uniq % m
    order = np.lexsort((reg, -occ, ud))
    ud, reg = ud[order], reg[order]
    first = np.ones(len(ud), dtype=bool)
    first[1:] = ud[1:] != ud[:-1]
    ud, reg = ud[first], reg[first]
    out[ud % n_days, ud // n_days] = reg
    return out
