"""Seeded synthetic before/after corpus with known ground-truth relations.

The generator produces the same raw CSV families the ingest module parses,
plus direct sample/feature views that bypass CSV rendering for fast
model-level testing. All noise is drawn at 15-minute-slot granularity, so
aggregating the rendered raw streams reproduces the direct views exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import Optional

import numpy as np

from .core import Period, SegmentPosition, SiteMap, TimeKey, TrafficSample
from .correction import Dataset, pair_before_after, temporal_correct
from .ingest import AggregationConfig

# Documented "moderate" setting of the domain-shift knob: the held-out
# section's latent means sit 1.5 latent standard deviations away from the
# training sections' means.
MODERATE_DOMAIN_SHIFT = 0.5

_POSITIONS = (SegmentPosition.UPSTREAM, SegmentPosition.DOWNSTREAM,
              SegmentPosition.ONRAMP)

_LANES = {SegmentPosition.UPSTREAM: 3, SegmentPosition.DOWNSTREAM: 4,
          SegmentPosition.ONRAMP: 1}
_LENGTHS = {SegmentPosition.UPSTREAM: 0.6, SegmentPosition.DOWNSTREAM: 0.4,
            SegmentPosition.ONRAMP: 0.3}


@dataclass
class SynthConfig:
    seed: int = 0
    n_sections: int = 14
    weeks: int = 4
    weekdays: tuple[int, ...] = (3, 4, 5)  # Tue/Wed/Thu
    operating_hours: tuple[int, ...] = (6, 7, 8, 15, 16, 17, 18)
    regime: str = "linear"  # or "piecewise"
    noise_speed: float = 0.0
    noise_occupancy: float = 0.0
    noise_flow: float = 0.0
    domain_shift: float = 0.0
    before_start: date = date(2019, 4, 14)  # a Sunday

    def __post_init__(self):
        if self.n_sections < 2:
            raise ValueError("n_sections must be >= 2")
        if min(self.noise_speed, self.noise_occupancy, self.noise_flow) < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.regime not in ("linear", "piecewise"):
            raise ValueError("regime must be 'linear' or 'piecewise'")


# Latent distribution: (mean, sd, shifted-under-domain-knob?)
_LATENT_SPEC = {
    "free_speed_up": (65.0, 2.0, True),
    "free_speed_down": (63.0, 2.0, True),
    "free_speed_ramp": (32.0, 1.5, True),
    "speed_drop_up": (11.0, 1.5, False),
    "speed_drop_down": (9.0, 1.5, False),
    "speed_drop_ramp": (6.0, 1.0, False),
    "occ_base_up": (9.0, 1.0, True),
    "occ_base_down": (8.0, 1.0, True),
    "occ_base_ramp": (7.0, 1.0, False),
    "occ_amp_up": (5.0, 0.7, False),
    "occ_amp_down": (4.5, 0.7, False),
    "occ_amp_ramp": (4.0, 0.6, False),
    "base_flow_up": (1300.0, 130.0, True),
    "base_flow_down": (1250.0, 130.0, True),
    "base_flow_ramp": (360.0, 50.0, False),
}

# How far (in latent sds) the held-out section's means move per unit of the
# domain-shift knob.
_SHIFT_SDS = 3.0

# Linear-regime ground truth: target -> (intercept, {input: coefficient}).
_LINEAR_TRUTH = {
    "After_up_mean_speed": (2.0, {"Before_up_mean_speed": 0.95,
                                  "Before_up_occupancy": -0.8}),
    "After_ramp_mean_speed": (1.0, {"Before_ramp_mean_speed": 0.9,
                                    "Before_ramp_occupancy": -0.5}),
    "After_down_mean_speed": (3.0, {"Before_down_mean_speed": 0.85,
                                    "Before_down_flow": 0.006}),
    "After_up_occupancy": (0.5, {"Before_up_occupancy": 0.9,
                                 "Before_up_density": 0.3}),
    "After_ramp_occupancy": (0.3, {"Before_ramp_occupancy": 0.85,
                                   "Before_ramp_density": 0.4}),
    "After_up_flow": (50.0, {"Before_up_flow": 0.9,
                             "Before_up_occupancy": 40.0}),
    "After_ramp_flow": (20.0, {"Before_ramp_flow": 0.85,
                               "Before_ramp_occupancy": 50.0}),
    "After_down_flow": (80.0, {"Before_down_flow": 0.9,
                               "Before_up_flow": 0.5}),
}

# Piecewise-regime congestion split on upstream occupancy.
_OCC_SPLIT = 11.0


def _peak(key: TimeKey) -> float:
    h = key.hod + (key.moh - 1) / 4.0 + 0.125
    return (math.exp(-(((h - 7.5) / 1.3) ** 2))
            + math.exp(-(((h - 16.8) / 1.7) ** 2)))


def section_id(index: int) -> str:
    return f"S{index + 1:02d}"


def draw_latents(cfg: SynthConfig) -> dict[str, dict[str, float]]:
    """Per-section latent parameters; the last section is the held-out one
    and its shiftable latents move by the domain-shift knob."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_sections)
    latents = {}
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        held_out = i == cfg.n_sections - 1
        values = {}
        for name, (mean, sd, shiftable) in _LATENT_SPEC.items():
            z = rng.standard_normal()
            if held_out and shiftable:
                z += _SHIFT_SDS * cfg.domain_shift
            values[name] = mean + sd * z
        # Metering benefit derives from the section's own latents so that
        # sections with similar observable levels respond similarly; every
        # term has the same sign as the domain-shift displacement, which is
        # what makes level-similar source rows informative about a shifted
        # section's response.
        values["meter_speed_gain"] = (
            1.5
            + 0.35 * (values["free_speed_up"] - 65.0)
            + 0.35 * (values["free_speed_down"] - 63.0)
            + 0.4 * (values["free_speed_ramp"] - 32.0)
            + 0.4 * (values["occ_base_up"] - 9.0)
            + 0.3 * (values["occ_base_down"] - 8.0)
            + 0.005 * (values["base_flow_up"] - 1300.0)
            + 0.005 * (values["base_flow_down"] - 1250.0))
        values["meter_flow_gain"] = (
            30.0
            + 0.1 * (values["base_flow_up"] - 1300.0)
            + 0.1 * (values["base_flow_down"] - 1250.0)
            + 3.0 * (values["free_speed_up"] - 65.0)
            + 3.0 * (values["free_speed_down"] - 63.0)
            + 2.0 * (values["occ_base_up"] - 9.0))
        latents[section_id(i)] = values
    return latents


def _before_latent(latents: dict[str, float], position: SegmentPosition,
                   key: TimeKey) -> tuple[float, float, float]:
    """Noise-free (speed, occupancy, raw flow) for one slot."""
    short = position.short_name
    peak = _peak(key)
    dow_factor = 1.0 + 0.015 * (key.dow - 4)
    speed = latents[f"free_speed_{short}"] - latents[f"speed_drop_{short}"] * peak
    occ = latents[f"occ_base_{short}"] + latents[f"occ_amp_{short}"] * peak
    flow = latents[f"base_flow_{short}"] * (0.5 + 0.5 * peak) * dow_factor
    return speed, occ, flow


def _quantize_flow(flow: float, lanes: int) -> tuple[int, float]:
    """Slot vehicle count and the flow it implies (veh/hr/ln)."""
    volume = max(0, int(round(flow * lanes / 4.0)))
    return volume, volume * 4.0 / lanes


def _after_latent(cfg: SynthConfig, latents: dict[str, float],
                  before_q: dict[SegmentPosition, tuple[float, float, float]]
                  ) -> dict[SegmentPosition, tuple[float, float, float]]:
    """Ground-truth after (speed, occupancy, flow) per position, computed
    from quantized before values."""
    up_s, up_o, up_f = before_q[SegmentPosition.UPSTREAM]
    down_s, down_o, down_f = before_q[SegmentPosition.DOWNSTREAM]
    ramp_s, ramp_o, ramp_f = before_q[SegmentPosition.ONRAMP]
    inputs = {
        "Before_up_mean_speed": up_s, "Before_up_occupancy": up_o,
        "Before_up_flow": up_f, "Before_up_density": up_f / up_s,
        "Before_down_mean_speed": down_s, "Before_down_occupancy": down_o,
        "Before_down_flow": down_f, "Before_down_density": down_f / down_s,
        "Before_ramp_mean_speed": ramp_s, "Before_ramp_occupancy": ramp_o,
        "Before_ramp_flow": ramp_f, "Before_ramp_density": ramp_f / ramp_s,
    }
    if cfg.regime == "linear":
        out = {t: intercept + sum(c * inputs[v] for v, c in coeffs.items())
               for t, (intercept, coeffs) in _LINEAR_TRUTH.items()}
    else:
        congested = up_o > _OCC_SPLIT
        gain = latents["meter_speed_gain"]
        fgain = latents["meter_flow_gain"]
        out = {
            "After_up_mean_speed": up_s + (gain if congested else 0.5 * gain),
            "After_ramp_mean_speed": ramp_s - (4.0 if ramp_o > 9.0
                                               else 1.0) + 0.3 * gain,
            "After_down_mean_speed": down_s + (0.8 * gain if congested
                                               else 0.2 * gain),
            "After_up_occupancy": up_o * (0.82 if congested else 0.97),
            "After_ramp_occupancy": ramp_o * 1.1 + (1.5 if congested
                                                    else 0.0),
            "After_up_flow": up_f * (1.06 if congested else 1.0) + fgain,
            "After_ramp_flow": ramp_f * (0.9 if ramp_o > 9.0
                                         else 1.0) + 0.5 * fgain,
            "After_down_flow": down_f * (1.05 if congested else 1.0) + fgain,
        }
    return {
        SegmentPosition.UPSTREAM: (out["After_up_mean_speed"],
                                   out["After_up_occupancy"],
                                   out["After_up_flow"]),
        SegmentPosition.DOWNSTREAM: (out["After_down_mean_speed"],
                                     # down occupancy is generated but not a
                                     # standard target; keep it plausible
                                     down_o,
                                     out["After_down_flow"]),
        SegmentPosition.ONRAMP: (out["After_ramp_mean_speed"],
                                 out["After_ramp_occupancy"],
                                 out["After_ramp_flow"]),
    }


@dataclass
class SlotValue:
    """Observed (noisy, quantized) state of one slot of one week."""

    speed: float
    occupancy: float
    volume: int  # summed vehicle count over the slot and all lanes
    flow: float  # volume * 4 / lanes


@dataclass
class SynthCorpus:
    config: SynthConfig
    site_map: SiteMap
    manifest: dict
    # (section, position, period, week, key) -> SlotValue
    slots: dict[tuple, SlotValue] = field(default_factory=dict)
    week_dates: dict[tuple[Period, int, int], date] = field(default_factory=dict)

    def samples(self, period: Period) -> list[TrafficSample]:
        out = []
        for (section, position, per, week, key), sv in sorted(
                self.slots.items(),
                key=lambda item: (item[0][0], int(item[0][1]),
                                  item[0][2].value, item[0][3], item[0][4])):
            if per is not period:
                continue
            density = None
            if period is Period.BEFORE and sv.speed > 0:
                density = sv.flow / sv.speed
            out.append(TrafficSample(
                section=section, position=position, period=period,
                week_index=week, key=key, mean_speed=sv.speed,
                occupancy=sv.occupancy, flow_rate=sv.flow, density=density,
                coverage=1.0))
        return out

    def feature_dataset(self) -> Dataset:
        """Temporal-correct and pair both periods into a feature dataset."""
        rows = []
        sections = sorted({k[0] for k in self.slots})
        by_group: dict[tuple, list[TrafficSample]] = {}
        for period in (Period.BEFORE, Period.AFTER):
            for sample in self.samples(period):
                by_group.setdefault((sample.section, sample.position, period),
                                    []).append(sample)
        for section in sections:
            before = {pos: temporal_correct(by_group[(section, pos,
                                                      Period.BEFORE)])
                      for pos in _POSITIONS}
            after = {pos: temporal_correct(by_group[(section, pos,
                                                     Period.AFTER)])
                     for pos in _POSITIONS}
            section_rows, _ = pair_before_after(before, after, section)
            rows.extend(section_rows)
        return Dataset(rows)

    @property
    def held_out_section(self) -> str:
        return self.manifest["held_out_section"]

    def loop_csv(self, period: Period) -> str:
        """Render the 20-second loop stream for one period."""
        lines = ["ID,TimeStamp,DetectorstationID,SlotNumber,Volume,Speed,"
                 "Occupancy"]
        record_id = 853000000
        for (section, position, per, week, key), sv in sorted(
                self.slots.items(),
                key=lambda item: (item[0][0], int(item[0][1]),
                                  item[0][2].value, item[0][3], item[0][4])):
            if per is not period:
                continue
            sec = self.site_map.sections[section]
            seg = sec.positions[position]
            day = self.week_dates[(period, week, key.dow)]
            base = datetime.combine(day, time(key.hod, (key.moh - 1) * 15))
            cells = len(seg.slots) * 45
            previous = 0
            for c in range(cells):
                cumulative = int(round((c + 1) * sv.volume / cells))
                volume = cumulative - previous
                previous = cumulative
                lane_slot = seg.slots[c // 45]
                tick = c % 45
                stamp = base + timedelta(seconds=20 * tick)
                lines.append(
                    f"{record_id},{_fmt_ts(stamp)},{sec.station_id},"
                    f"{lane_slot},{volume},{int(round(sv.speed))},"
                    f"{sv.occupancy!r}")
                record_id += 1
        return "\n".join(lines) + "\n"

    def probe_csv(self, period: Period) -> str:
        """Render the 1-minute probe stream for one period."""
        lines = ["timestamp,SegmentID,type,speed,travelTimeMinutes"]
        for (section, position, per, week, key), sv in sorted(
                self.slots.items(),
                key=lambda item: (item[0][0], int(item[0][1]),
                                  item[0][2].value, item[0][3], item[0][4])):
            if per is not period:
                continue
            seg = self.site_map.sections[section].positions[position]
            day = self.week_dates[(period, week, key.dow)]
            base = datetime.combine(day, time(key.hod, (key.moh - 1) * 15))
            travel = seg.length_miles / max(sv.speed, 1.0) * 60.0
            for minute in range(15):
                stamp = base + timedelta(minutes=minute)
                for segment_id in seg.probe_segment_ids:
                    lines.append(f"{_fmt_ts(stamp)},{segment_id},XDS,"
                                 f"{sv.speed!r},{travel:.4f}")
        return "\n".join(lines) + "\n"


def _fmt_ts(ts: datetime) -> str:
    return f"{ts.month}/{ts.day}/{ts.year} {ts.hour}:{ts.minute:02d}"


def _build_site_map(cfg: SynthConfig) -> SiteMap:
    sections = []
    for i in range(cfg.n_sections):
        sid = section_id(i)
        positions = {}
        slot_base = {SegmentPosition.UPSTREAM: 1,
                     SegmentPosition.DOWNSTREAM: 11,
                     SegmentPosition.ONRAMP: 21}
        for pos in _POSITIONS:
            lanes = _LANES[pos]
            positions[pos.name.lower()] = {
                "lanes": lanes,
                "length_miles": _LENGTHS[pos],
                "slots": list(range(slot_base[pos], slot_base[pos] + lanes)),
                "probe_segment_ids": [f"{sid}-{pos.short_name}"],
            }
        sections.append({"section_id": sid, "station_id": str(100 + i),
                         "positions": positions})
    return SiteMap.from_dict({"sections": sections, "excluded_slots": []})


def _operating_keys(cfg: SynthConfig) -> list[TimeKey]:
    return [TimeKey(dow=d, hod=h, moh=q)
            for d in sorted(cfg.weekdays)
            for h in sorted(cfg.operating_hours)
            for q in (1, 2, 3, 4)]


def generate(cfg: SynthConfig) -> SynthCorpus:
    """Build the full corpus: site map, per-slot observed values for both
    periods, week calendar and the ground-truth manifest."""
    site_map = _build_site_map(cfg)
    latents = draw_latents(cfg)
    keys = _operating_keys(cfg)

    # Calendar: before starts at cfg.before_start (a Sunday); after starts
    # four weeks after the before period ends.
    week_dates = {}
    starts = {Period.BEFORE: cfg.before_start,
              Period.AFTER: cfg.before_start + timedelta(
                  weeks=cfg.weeks + 4)}
    for period, start in starts.items():
        for week in range(1, cfg.weeks + 1):
            for dow in cfg.weekdays:
                week_dates[(period, week, dow)] = (
                    start + timedelta(weeks=week - 1, days=dow - 1))

    noise_children = np.random.SeedSequence(
        (cfg.seed, 1)).spawn(cfg.n_sections)
    shape_children = np.random.SeedSequence(
        (cfg.seed, 2)).spawn(cfg.n_sections)
    # Per-slot latent wiggle, independent across variables; without it every
    # before column is a function of the same peak curve and the columns are
    # too collinear to attribute coefficients to.
    shape_sds = (2.0, 1.5, 80.0)
    slots = {}
    truth_rows = {}
    for i in range(cfg.n_sections):
        sid = section_id(i)
        lat = latents[sid]
        rng = np.random.default_rng(noise_children[i])
        shape_rng = np.random.default_rng(shape_children[i])
        for key in keys:
            before_q = {}
            for pos in _POSITIONS:
                speed, occ, flow = _before_latent(lat, pos, key)
                speed = max(speed + shape_sds[0] * shape_rng.standard_normal(),
                            5.0)
                occ = max(occ + shape_sds[1] * shape_rng.standard_normal(),
                          0.5)
                flow = max(flow + shape_sds[2] * shape_rng.standard_normal(),
                           0.0)
                _, flow_q = _quantize_flow(flow, _LANES[pos])
                before_q[pos] = (speed, occ, flow_q)
            after = _after_latent(cfg, lat, before_q)
            truth_rows[(sid, key)] = {"before": {p.short_name: before_q[p]
                                                 for p in _POSITIONS},
                                      "after": {p.short_name: after[p]
                                                for p in _POSITIONS}}
            for period, curve in ((Period.BEFORE, before_q),
                                  (Period.AFTER, after)):
                for week in range(1, cfg.weeks + 1):
                    for pos in _POSITIONS:
                        speed, occ, flow = curve[pos]
                        # slot-level observation noise
                        speed = speed + cfg.noise_speed * rng.standard_normal()
                        occ = occ + cfg.noise_occupancy * rng.standard_normal()
                        flow = flow + cfg.noise_flow * rng.standard_normal()
                        speed = max(speed, 1.0)
                        occ = min(max(occ, 0.1), 100.0)
                        volume, flow_q = _quantize_flow(max(flow, 0.0),
                                                        _LANES[pos])
                        slots[(sid, pos, period, week, key)] = SlotValue(
                            speed=speed, occupancy=occ, volume=volume,
                            flow=flow_q)

    manifest = {
        "seed": cfg.seed,
        "n_sections": cfg.n_sections,
        "weeks": cfg.weeks,
        "regime": cfg.regime,
        "domain_shift": cfg.domain_shift,
        "domain_shift_moderate": MODERATE_DOMAIN_SHIFT,
        "held_out_section": section_id(cfg.n_sections - 1),
        "noise": {"speed": cfg.noise_speed, "occupancy": cfg.noise_occupancy,
                  "flow": cfg.noise_flow},
        "latents": latents,
        "linear_truth": {t: {"intercept": intercept, "coefficients": coeffs}
                         for t, (intercept, coeffs) in _LINEAR_TRUTH.items()},
        "piecewise_occupancy_split": _OCC_SPLIT,
    }
    return SynthCorpus(config=cfg, site_map=site_map, manifest=manifest,
                       slots=slots, week_dates=week_dates)


def linear_truth_coefficients() -> dict[str, dict[str, float]]:
    """Raw-unit ground-truth coefficients of the linear regime, with zeros
    for every input the truth does not use."""
    from .correction import INPUT_COLUMNS
    out = {}
    for target, (_, coeffs) in _LINEAR_TRUTH.items():
        out[target] = {name: coeffs.get(name, 0.0) for name in INPUT_COLUMNS}
    return out


def manifest_json(corpus: SynthCorpus) -> str:
    return json.dumps(corpus.manifest, indent=2, sort_keys=True)


def default_aggregation_config(cfg: SynthConfig) -> AggregationConfig:
    return AggregationConfig(operating_hours=tuple(sorted(cfg.operating_hours)),
                             weekdays=tuple(sorted(cfg.weekdays)))
