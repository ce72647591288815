"""Time-of-week averaging across weeks and before/after feature-row pairing."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    Period,
    RampTransferError,
    SegmentPosition,
    TimeKey,
    TrafficSample,
)

# Input roster of the before->after mapping; names follow the
# Before/After_<position>_<variable> convention used in reports.
INPUT_COLUMNS = (
    "DOW", "HOD", "MOH",
    "Before_up_mean_speed", "Before_ramp_mean_speed", "Before_down_mean_speed",
    "Before_up_occupancy", "Before_ramp_occupancy",
    "Before_up_flow", "Before_ramp_flow", "Before_down_flow",
    "Before_up_density", "Before_ramp_density", "Before_down_density",
)

TARGET_COLUMNS = (
    "After_up_mean_speed", "After_ramp_mean_speed", "After_down_mean_speed",
    "After_up_occupancy", "After_ramp_occupancy",
    "After_up_flow", "After_ramp_flow", "After_down_flow",
)

BOOKKEEPING_COLUMNS = ("section", "dow", "hod", "moh")


class EmptyInput(RampTransferError):
    """No samples were given to temporal correction."""


@dataclass(frozen=True)
class ProfileEntry:
    mean_speed: float
    occupancy: float
    flow_rate: float
    density: Optional[float] = None


@dataclass
class CorrectedProfile:
    """Time-of-week means of one section/position/period across weeks."""

    section: str
    position: SegmentPosition
    period: Period
    entries: dict[TimeKey, ProfileEntry] = field(default_factory=dict)
    weeks_used: dict[TimeKey, int] = field(default_factory=dict)


def temporal_correct(samples: Sequence[TrafficSample]) -> CorrectedProfile:
    """Average each time-of-week slot across the weeks where it is present.

    Density is averaged only over weeks where it is present; ``weeks_used``
    records how many weeks contributed to each slot.
    """
    if not samples:
        raise EmptyInput("temporal_correct requires at least one sample")
    first = samples[0]
    for s in samples:
        if (s.section, s.position, s.period) != (first.section, first.position,
                                                 first.period):
            raise ValueError("samples must share section, position and period")

    by_key: dict[TimeKey, list[TrafficSample]] = {}
    for s in samples:
        by_key.setdefault(s.key, []).append(s)

    profile = CorrectedProfile(section=first.section, position=first.position,
                               period=first.period)
    for key, group in by_key.items():
        speeds = [s.mean_speed for s in group]
        occs = [s.occupancy for s in group]
        flows = [s.flow_rate for s in group]
        densities = [s.density for s in group if s.density is not None]
        profile.entries[key] = ProfileEntry(
            mean_speed=sum(speeds) / len(speeds),
            occupancy=sum(occs) / len(occs),
            flow_rate=sum(flows) / len(flows),
            density=sum(densities) / len(densities) if densities else None,
        )
        profile.weeks_used[key] = len(group)
    return profile


@dataclass(frozen=True)
class FeatureRow:
    """One paired before/after observation for a section and time key."""

    section: str
    key: TimeKey
    inputs: dict[str, float]
    targets: dict[str, float]


class Dataset:
    """Ordered collection of FeatureRows sharing one column roster."""

    def __init__(self, rows: Sequence[FeatureRow],
                 input_columns: Sequence[str] = INPUT_COLUMNS,
                 target_columns: Sequence[str] = TARGET_COLUMNS):
        self.input_columns = tuple(input_columns)
        self.target_columns = tuple(target_columns)
        for row in rows:
            if tuple(row.inputs) != self.input_columns:
                raise ValueError("row input roster mismatch")
            if tuple(row.targets) != self.target_columns:
                raise ValueError("row target roster mismatch")
        self.rows = list(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def sections(self) -> list[str]:
        seen = {}
        for row in self.rows:
            seen.setdefault(row.section, None)
        return list(seen)

    def X(self) -> np.ndarray:
        return np.array([[row.inputs[c] for c in self.input_columns]
                         for row in self.rows], dtype=float)

    def y(self, target: str) -> np.ndarray:
        if target not in self.target_columns:
            raise KeyError(f"unknown target column {target!r}")
        return np.array([row.targets[target] for row in self.rows], dtype=float)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.rows[i] for i in indices],
                       self.input_columns, self.target_columns)

    def split_by_section(self, section: str) -> tuple["Dataset", "Dataset"]:
        """Return (rows of ``section``, rows of every other section)."""
        inside = [r for r in self.rows if r.section == section]
        outside = [r for r in self.rows if r.section != section]
        return (Dataset(inside, self.input_columns, self.target_columns),
                Dataset(outside, self.input_columns, self.target_columns))

    def column_stats(self) -> dict[str, tuple[float, float]]:
        """Per-column (mean, sample standard deviation) over all rows."""
        stats = {}
        X = self.X()
        for j, name in enumerate(self.input_columns):
            col = X[:, j]
            sd = float(col.std(ddof=1)) if len(col) > 1 else 0.0
            stats[name] = (float(col.mean()), sd)
        for name in self.target_columns:
            col = self.y(name)
            sd = float(col.std(ddof=1)) if len(col) > 1 else 0.0
            stats[name] = (float(col.mean()), sd)
        return stats

    def to_csv(self) -> str:
        header = (list(BOOKKEEPING_COLUMNS) + list(self.input_columns)
                  + list(self.target_columns))
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        for row in self.rows:
            writer.writerow(
                [row.section, row.key.dow, row.key.hod, row.key.moh]
                + [repr(row.inputs[c]) for c in self.input_columns]
                + [repr(row.targets[c]) for c in self.target_columns])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        n_book = len(BOOKKEEPING_COLUMNS)
        if tuple(header[:n_book]) != BOOKKEEPING_COLUMNS:
            raise ValueError("unexpected feature CSV bookkeeping columns")
        names = header[n_book:]
        input_cols = tuple(c for c in names if not c.startswith("After_"))
        target_cols = tuple(c for c in names if c.startswith("After_"))
        rows = []
        for raw in reader:
            if not raw:
                continue
            key = TimeKey(dow=int(raw[1]), hod=int(raw[2]), moh=int(raw[3]))
            values = [float(v) for v in raw[n_book:]]
            named = dict(zip(names, values))
            rows.append(FeatureRow(
                section=raw[0], key=key,
                inputs={c: named[c] for c in input_cols},
                targets={c: named[c] for c in target_cols}))
        return cls(rows, input_cols, target_cols)


PROFILE_CSV_HEADER = ("section,position,period,dow,hod,moh,"
                      "mean_speed,occupancy,flow_rate,density,weeks_used")


def profiles_to_csv(profiles: Sequence[CorrectedProfile]) -> str:
    lines = [PROFILE_CSV_HEADER]
    for p in profiles:
        for key in sorted(p.entries):
            e = p.entries[key]
            density = "" if e.density is None else repr(e.density)
            lines.append(",".join([
                p.section, str(int(p.position)), p.period.value,
                str(key.dow), str(key.hod), str(key.moh),
                repr(e.mean_speed), repr(e.occupancy), repr(e.flow_rate),
                density, str(p.weeks_used[key])]))
    return "\n".join(lines) + "\n"


def profiles_from_csv(text: str) -> list[CorrectedProfile]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if ",".join(header) != PROFILE_CSV_HEADER:
        raise ValueError("unexpected profile CSV header")
    by_group: dict[tuple, CorrectedProfile] = {}
    for row in reader:
        if not row:
            continue
        group = (row[0], SegmentPosition(int(row[1])), Period(row[2]))
        profile = by_group.setdefault(group, CorrectedProfile(
            section=group[0], position=group[1], period=group[2]))
        key = TimeKey(dow=int(row[3]), hod=int(row[4]), moh=int(row[5]))
        profile.entries[key] = ProfileEntry(
            mean_speed=float(row[6]), occupancy=float(row[7]),
            flow_rate=float(row[8]),
            density=float(row[9]) if row[9] else None)
        profile.weeks_used[key] = int(row[10])
    return list(by_group.values())


_POSITIONS = (SegmentPosition.UPSTREAM, SegmentPosition.ONRAMP,
              SegmentPosition.DOWNSTREAM)


def pair_before_after(
    before: dict[SegmentPosition, CorrectedProfile],
    after: dict[SegmentPosition, CorrectedProfile],
    section: str,
    include_down_occupancy: bool = False,
) -> tuple[list[FeatureRow], int]:
    """Join before and after profiles on time-of-week keys.

    Emits one FeatureRow per key present in all three before profiles (with
    density) and carrying all target variables in the after profiles; returns
    the rows and the count of keys dropped for missing components.
    ``include_down_occupancy`` adds an After_down_occupancy target; it is off
    by default to match the standard eight-target roster.
    """
    for pos in _POSITIONS:
        if pos not in before or pos not in after:
            raise ValueError(f"missing profile for position {pos.name}")

    target_columns = list(TARGET_COLUMNS)
    if include_down_occupancy:
        target_columns.append("After_down_occupancy")

    all_keys = set()
    for profiles in (before, after):
        for pos in _POSITIONS:
            all_keys |= set(profiles[pos].entries)

    rows = []
    dropped = 0
    for key in sorted(all_keys):
        before_entries = {}
        after_entries = {}
        ok = True
        for pos in _POSITIONS:
            be = before[pos].entries.get(key)
            ae = after[pos].entries.get(key)
            if be is None or ae is None or be.density is None:
                ok = False
                break
            before_entries[pos] = be
            after_entries[pos] = ae
        if not ok:
            dropped += 1
            continue
        up, ramp, down = (before_entries[p] for p in _POSITIONS)
        aup, aramp, adown = (after_entries[p] for p in _POSITIONS)
        inputs = {
            "DOW": float(key.dow), "HOD": float(key.hod), "MOH": float(key.moh),
            "Before_up_mean_speed": up.mean_speed,
            "Before_ramp_mean_speed": ramp.mean_speed,
            "Before_down_mean_speed": down.mean_speed,
            "Before_up_occupancy": up.occupancy,
            "Before_ramp_occupancy": ramp.occupancy,
            "Before_up_flow": up.flow_rate,
            "Before_ramp_flow": ramp.flow_rate,
            "Before_down_flow": down.flow_rate,
            "Before_up_density": up.density,
            "Before_ramp_density": ramp.density,
            "Before_down_density": down.density,
        }
        targets = {
            "After_up_mean_speed": aup.mean_speed,
            "After_ramp_mean_speed": aramp.mean_speed,
            "After_down_mean_speed": adown.mean_speed,
            "After_up_occupancy": aup.occupancy,
            "After_ramp_occupancy": aramp.occupancy,
            "After_up_flow": aup.flow_rate,
            "After_ramp_flow": aramp.flow_rate,
            "After_down_flow": adown.flow_rate,
        }
        if include_down_occupancy:
            targets["After_down_occupancy"] = adown.occupancy
        rows.append(FeatureRow(section=section, key=key,
                               inputs=inputs, targets=targets))
    return rows, dropped
