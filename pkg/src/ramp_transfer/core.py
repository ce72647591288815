"""Shared domain types: time-of-week keys, segment roles, samples, site metadata."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum, IntEnum
from typing import Optional


class RampTransferError(Exception):
    """Base class for all errors raised by this package."""


class SiteMapError(RampTransferError):
    """Site metadata is malformed or incomplete."""


class SegmentPosition(IntEnum):
    """Role of a segment within a metered section."""

    UPSTREAM = 1
    DOWNSTREAM = 2
    ONRAMP = 3

    @classmethod
    def from_name(cls, name: str) -> "SegmentPosition":
        return _POSITION_NAMES[name.lower()]

    @property
    def short_name(self) -> str:
        return {1: "up", 2: "down", 3: "ramp"}[int(self)]


_POSITION_NAMES = {
    "upstream": SegmentPosition.UPSTREAM,
    "downstream": SegmentPosition.DOWNSTREAM,
    "onramp": SegmentPosition.ONRAMP,
}


class Period(str, Enum):
    """Observation window relative to the metering-strategy change."""

    BEFORE = "before"
    AFTER = "after"


@dataclass(frozen=True, order=True)
class TimeKey:
    """A 15-minute slot of the week.

    ``dow`` runs 1 (Sunday) through 7 (Saturday), ``hod`` 0 through 23 and
    ``moh`` indexes the quarter hour 1 through 4.  Lexicographic ordering of
    (dow, hod, moh) is a strict total order over the 672 weekly slots.
    """

    dow: int
    hod: int
    moh: int

    def __post_init__(self):
        if not 1 <= self.dow <= 7:
            raise ValueError(f"dow out of range: {self.dow}")
        if not 0 <= self.hod <= 23:
            raise ValueError(f"hod out of range: {self.hod}")
        if not 1 <= self.moh <= 4:
            raise ValueError(f"moh out of range: {self.moh}")


def encode_time_key(timestamp: datetime) -> TimeKey:
    """Map a calendar datetime to its 15-minute time-of-week slot."""
    # datetime.weekday(): Monday=0 .. Sunday=6; we need Sunday=1 .. Saturday=7.
    dow = (timestamp.weekday() + 1) % 7 + 1
    return TimeKey(dow=dow, hod=timestamp.hour, moh=timestamp.minute // 15 + 1)


@dataclass(frozen=True)
class TrafficSample:
    """Aggregated traffic state of one segment over one 15-minute slot."""

    section: str
    position: SegmentPosition
    period: Period
    week_index: int
    key: TimeKey
    mean_speed: float  # mph
    occupancy: float  # percent, 0..100
    flow_rate: float  # vehicles/hour/lane
    density: Optional[float] = None  # vehicles/mile/lane, before period only
    coverage: float = 1.0  # fraction of expected raw records present


def validate_sample(s: TrafficSample) -> list[str]:
    """Return every violated invariant of ``s``; empty list means ok."""
    violations = []
    if not s.section:
        violations.append("section empty")
    if s.week_index < 1:
        violations.append("week_index < 1")
    if s.mean_speed < 0:
        violations.append("mean_speed negative")
    if not 0 <= s.occupancy <= 100:
        violations.append("occupancy range")
    if s.flow_rate < 0:
        violations.append("flow_rate negative")
    if s.density is not None:
        if s.density < 0:
            violations.append("density negative")
        if s.period is Period.AFTER:
            violations.append("density only in Before")
    if not 0 <= s.coverage <= 1:
        violations.append("coverage range")
    return violations


@dataclass(frozen=True)
class SegmentInfo:
    """Physical description of one segment of a section."""

    lanes: int
    length_miles: float
    slots: tuple[int, ...]
    probe_segment_ids: tuple[str, ...]


@dataclass(frozen=True)
class SectionInfo:
    section_id: str
    station_id: str
    positions: dict[SegmentPosition, SegmentInfo]


@dataclass(frozen=True)
class SiteMap:
    """Detector-station and probe-segment metadata for a corridor.

    Maps raw loop slot numbers and probe segment ids onto (section, position)
    pairs; slots on the exclusion list (HOV lanes) are dropped at parse time.
    """

    sections: dict[str, SectionInfo]
    excluded_slots: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        for sec in self.sections.values():
            for pos, seg in sec.positions.items():
                if seg.lanes < 1:
                    raise SiteMapError(
                        f"section {sec.section_id} {pos.name}: lanes < 1"
                    )
                if seg.length_miles <= 0:
                    raise SiteMapError(
                        f"section {sec.section_id} {pos.name}: length <= 0"
                    )

    def lookup_slot(self, station_id: str, slot: int):
        """Resolve (section_id, position) for a loop slot, or None if unmapped.

        Excluded slots resolve to the string "excluded" so callers can count
        them separately from unmapped ones.
        """
        if slot in self.excluded_slots:
            return "excluded"
        for sec in self.sections.values():
            if sec.station_id != station_id:
                continue
            for pos, seg in sec.positions.items():
                if slot in seg.slots:
                    return sec.section_id, pos
        return None

    def lookup_probe_segment(self, segment_id: str):
        """Resolve (section_id, position) for a probe segment id, or None."""
        for sec in self.sections.values():
            for pos, seg in sec.positions.items():
                if segment_id in seg.probe_segment_ids:
                    return sec.section_id, pos
        return None

    @classmethod
    def from_dict(cls, doc: dict) -> "SiteMap":
        sections = {}
        for entry in doc["sections"]:
            positions = {}
            for name, seg in entry["positions"].items():
                positions[SegmentPosition.from_name(name)] = SegmentInfo(
                    lanes=int(seg["lanes"]),
                    length_miles=float(seg["length_miles"]),
                    slots=tuple(int(s) for s in seg["slots"]),
                    probe_segment_ids=tuple(
                        str(p) for p in seg["probe_segment_ids"]
                    ),
                )
            sec = SectionInfo(
                section_id=str(entry["section_id"]),
                station_id=str(entry["station_id"]),
                positions=positions,
            )
            if sec.section_id in sections:
                raise SiteMapError(f"duplicate section id {sec.section_id}")
            sections[sec.section_id] = sec
        return cls(
            sections=sections,
            excluded_slots=frozenset(
                int(s) for s in doc.get("excluded_slots", [])
            ),
        )

    @classmethod
    def from_json(cls, text: str) -> "SiteMap":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SiteMapError(f"site map is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "sections": [
                {
                    "section_id": sec.section_id,
                    "station_id": sec.station_id,
                    "positions": {
                        pos.name.lower(): {
                            "lanes": seg.lanes,
                            "length_miles": seg.length_miles,
                            "slots": list(seg.slots),
                            "probe_segment_ids": list(seg.probe_segment_ids),
                        }
                        for pos, seg in sec.positions.items()
                    },
                }
                for sec in self.sections.values()
            ],
            "excluded_slots": sorted(self.excluded_slots),
        }
