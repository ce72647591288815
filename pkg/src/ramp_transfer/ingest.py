"""Raw loop-detector / probe-vehicle CSV parsing and 15-minute aggregation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Optional

from .core import (
    Period,
    RampTransferError,
    SegmentPosition,
    SiteMap,
    TimeKey,
    TrafficSample,
    encode_time_key,
)

LOOP_COLUMNS = ("ID", "TimeStamp", "DetectorstationID", "SlotNumber",
                "Volume", "Speed", "Occupancy")
PROBE_COLUMNS = ("timestamp", "SegmentID", "speed", "travelTimeMinutes")

# 20-second loop reporting means 45 records per lane per 15-minute slot.
LOOP_RECORDS_PER_SLOT = 45
PROBE_MINUTES_PER_SLOT = 15

SAMPLES_CSV_HEADER = ("section,position,period,week,dow,hod,moh,"
                      "mean_speed,occupancy,flow_rate,density,coverage")


class MalformedHeader(RampTransferError):
    """A required CSV column is absent."""


@dataclass(frozen=True)
class LoopRecord:
    timestamp: datetime
    station_id: str
    slot_number: int
    volume: int
    speed: float
    occupancy: float


@dataclass(frozen=True)
class ProbeRecord:
    timestamp: datetime
    segment_id: str
    speed: float
    travel_time: float
    confidence: float = 0.0


@dataclass
class SkipReport:
    """Per-file account of rows that did not become records."""

    malformed: list[tuple[int, str]] = field(default_factory=list)
    unmapped: int = 0
    excluded: int = 0

    @property
    def malformed_count(self) -> int:
        return len(self.malformed)


@dataclass
class CoverageReport:
    """Slots dropped by the coverage thresholds during aggregation."""

    insufficient_loop: int = 0
    insufficient_probe: int = 0
    kept: int = 0


@dataclass
class AggregationConfig:
    """Filters and thresholds applied while building 15-minute samples."""

    min_loop_coverage: float = 0.8
    min_probe_minutes: int = 10
    # Metering operates 6-9 am and 3-7 pm; data restricted to Tue/Wed/Thu.
    operating_hours: tuple[int, ...] = (6, 7, 8, 15, 16, 17, 18)
    weekdays: tuple[int, ...] = (3, 4, 5)


def parse_timestamp(text: str) -> datetime:
    """Accept the raw feeds' M/D/YYYY H:MM stamps as well as ISO-8601."""
    text = text.strip()
    for fmt in ("%m/%d/%Y %H:%M", "%m/%d/%Y %H:%M:%S"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            pass
    return datetime.fromisoformat(text)


def _reader(stream) -> csv.reader:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    return csv.reader(stream)


def _header_index(header: list[str], required: tuple[str, ...]) -> dict[str, int]:
    index = {}
    for name in required:
        if name not in header:
            raise MalformedHeader(f"required column {name!r} absent from header")
        index[name] = header.index(name)
    return index


def parse_loop_csv(stream, site_map: SiteMap) -> tuple[list[LoopRecord], SkipReport]:
    """Parse loop-detector CSV lines into records mapped by the site map.

    Rows whose slot is unmapped or on the exclusion list are counted in the
    skip report; malformed rows are recorded with their line number. Only a
    missing header column aborts the parse.
    """
    reader = _reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedHeader("empty stream, no header row")
    idx = _header_index([h.strip() for h in header], LOOP_COLUMNS)

    records = []
    report = SkipReport()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            station = row[idx["DetectorstationID"]].strip()
            slot = int(row[idx["SlotNumber"]])
            record = LoopRecord(
                timestamp=parse_timestamp(row[idx["TimeStamp"]]),
                station_id=station,
                slot_number=slot,
                volume=int(row[idx["Volume"]]),
                speed=float(row[idx["Speed"]]),
                occupancy=float(row[idx["Occupancy"]]),
            )
        except (ValueError, IndexError) as exc:
            report.malformed.append((lineno, str(exc)))
            continue
        resolved = site_map.lookup_slot(station, slot)
        if resolved == "excluded":
            report.excluded += 1
        elif resolved is None:
            report.unmapped += 1
        else:
            records.append(record)
    return records, report


def parse_probe_csv(stream, site_map: SiteMap) -> tuple[list[ProbeRecord], SkipReport]:
    """Parse probe-vehicle CSV lines; rows for unmapped segments are skipped."""
    reader = _reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedHeader("empty stream, no header row")
    stripped = [h.strip() for h in header]
    idx = _header_index(stripped, PROBE_COLUMNS)
    conf_idx = stripped.index("confidenceValue") if "confidenceValue" in stripped else None

    records = []
    report = SkipReport()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            segment = row[idx["SegmentID"]].strip()
            record = ProbeRecord(
                timestamp=parse_timestamp(row[idx["timestamp"]]),
                segment_id=segment,
                speed=float(row[idx["speed"]]),
                travel_time=float(row[idx["travelTimeMinutes"]]),
                confidence=float(row[conf_idx]) if conf_idx is not None else 0.0,
            )
        except (ValueError, IndexError) as exc:
            report.malformed.append((lineno, str(exc)))
            continue
        if site_map.lookup_probe_segment(segment) is None:
            report.unmapped += 1
        else:
            records.append(record)
    return records, report


def _week_anchor(timestamps: Iterable[datetime]) -> datetime:
    """Midnight of the Sunday on or before the earliest timestamp."""
    earliest = min(timestamps)
    midnight = earliest.replace(hour=0, minute=0, second=0, microsecond=0)
    # weekday(): Monday=0 .. Sunday=6; step back to Sunday.
    return midnight - timedelta(days=(earliest.weekday() + 1) % 7)


def week_index_of(timestamp: datetime, anchor: datetime) -> int:
    return (timestamp - anchor).days // 7 + 1


def aggregate(
    loops: list[LoopRecord],
    probes: list[ProbeRecord],
    site_map: SiteMap,
    period: Period,
    config: Optional[AggregationConfig] = None,
) -> tuple[list[TrafficSample], CoverageReport]:
    """Aggregate raw records into per-slot TrafficSamples.

    Flow is the slot's summed volume over mapped lanes scaled to veh/hr/ln,
    occupancy the mean of per-record occupancies, speed the mean of probe
    speeds, and density (before period only) flow divided by speed. Slots
    failing either coverage threshold are omitted and counted.
    """
    config = config or AggregationConfig()
    all_stamps = [r.timestamp for r in loops] + [r.timestamp for r in probes]
    if not all_stamps:
        return [], CoverageReport()
    anchor = _week_anchor(all_stamps)

    def slot_id(ts: datetime):
        return week_index_of(ts, anchor), encode_time_key(ts)

    # (section, position, week, key) -> accumulators
    loop_acc: dict[tuple, dict] = {}
    for rec in loops:
        resolved = site_map.lookup_slot(rec.station_id, rec.slot_number)
        if not isinstance(resolved, tuple):
            continue
        section, position = resolved
        week, key = slot_id(rec.timestamp)
        acc = loop_acc.setdefault((section, position, week, key),
                                  {"volume": 0, "occ_sum": 0.0, "count": 0})
        acc["volume"] += rec.volume
        acc["occ_sum"] += rec.occupancy
        acc["count"] += 1

    probe_acc: dict[tuple, dict] = {}
    for rec in probes:
        resolved = site_map.lookup_probe_segment(rec.segment_id)
        if resolved is None:
            continue
        section, position = resolved
        week, key = slot_id(rec.timestamp)
        acc = probe_acc.setdefault((section, position, week, key),
                                   {"speed_sum": 0.0, "count": 0, "minutes": set()})
        acc["speed_sum"] += rec.speed
        acc["count"] += 1
        acc["minutes"].add(rec.timestamp.minute)

    samples = []
    report = CoverageReport()
    for slot_key in sorted(set(loop_acc) & set(probe_acc),
                           key=lambda k: (k[0], int(k[1]), k[2], k[3])):
        section, position, week, key = slot_key
        if key.dow not in config.weekdays or key.hod not in config.operating_hours:
            continue
        seg = site_map.sections[section].positions[position]
        la = loop_acc[slot_key]
        pa = probe_acc[slot_key]
        expected_loops = LOOP_RECORDS_PER_SLOT * seg.lanes
        loop_coverage = la["count"] / expected_loops
        probe_minutes = len(pa["minutes"])
        if loop_coverage < config.min_loop_coverage:
            report.insufficient_loop += 1
            continue
        if probe_minutes < config.min_probe_minutes:
            report.insufficient_probe += 1
            continue

        mean_speed = pa["speed_sum"] / pa["count"]
        occupancy = la["occ_sum"] / la["count"]
        flow_rate = la["volume"] * 4.0 / seg.lanes
        density = None
        if period is Period.BEFORE and mean_speed > 0:
            density = flow_rate / mean_speed
        expected_probe = PROBE_MINUTES_PER_SLOT * len(seg.probe_segment_ids)
        coverage = min(1.0, (la["count"] + pa["count"])
                       / (expected_loops + expected_probe))
        report.kept += 1
        samples.append(TrafficSample(
            section=section,
            position=position,
            period=period,
            week_index=week,
            key=key,
            mean_speed=mean_speed,
            occupancy=occupancy,
            flow_rate=flow_rate,
            density=density,
            coverage=coverage,
        ))
    return samples, report


def samples_to_csv(samples: list[TrafficSample]) -> str:
    """Serialize samples to the canonical CSV (density empty when absent)."""
    lines = [SAMPLES_CSV_HEADER]
    for s in samples:
        density = "" if s.density is None else repr(s.density)
        lines.append(",".join([
            s.section, str(int(s.position)), s.period.value, str(s.week_index),
            str(s.key.dow), str(s.key.hod), str(s.key.moh),
            repr(s.mean_speed), repr(s.occupancy), repr(s.flow_rate),
            density, repr(s.coverage),
        ]))
    return "\n".join(lines) + "\n"


def samples_from_csv(text: str) -> list[TrafficSample]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if ",".join(header) != SAMPLES_CSV_HEADER:
        raise MalformedHeader("unexpected samples CSV header")
    samples = []
    for row in reader:
        if not row:
            continue
        samples.append(TrafficSample(
            section=row[0],
            position=SegmentPosition(int(row[1])),
            period=Period(row[2]),
            week_index=int(row[3]),
            key=TimeKey(dow=int(row[4]), hod=int(row[5]), moh=int(row[6])),
            mean_speed=float(row[7]),
            occupancy=float(row[8]),
            flow_rate=float(row[9]),
            density=float(row[10]) if row[10] else None,
            coverage=float(row[11]),
        ))
    return samples
