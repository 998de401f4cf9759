"""ADS-B state-vector records, CSV I/O, trajectory grouping and a synthetic generator."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, SchemaError

CSV_COLUMNS = ("time", "icao24", "lat", "lon", "baroaltitude", "velocity", "heading", "vertrate", "callsign", "hour")
DEFAULT_GAP_THRESHOLD = 900.0

_ICAO_RE = re.compile(r"^[0-9a-f]{6}$")

# knots -> degrees of latitude per second (1 kt = 1 nm/h, 1 nm = 1/60 deg)
_KT_TO_DEG_PER_S = 1.0 / 3600.0 / 60.0


@dataclass(frozen=True, slots=True)
class AdsbRecord:
    timestamp: int
    icao24: str
    lat: float
    lon: float
    altitude: float  # feet
    velocity: float  # knots
    heading: float  # degrees, [0, 360)
    vertical_rate: float  # feet/min
    callsign: str
    hour: int

    def validate(self) -> str | None:
        """Return the first violated invariant as a reason string, else None."""
        if not _ICAO_RE.match(self.icao24):
            return f"icao24 {self.icao24!r} is not 6 lowercase hex digits"
        for name in ("lat", "lon", "altitude", "velocity", "heading", "vertical_rate"):
            if not math.isfinite(getattr(self, name)):
                return f"{name} is not finite"
        if not -90.0 <= self.lat <= 90.0:
            return f"lat {self.lat} outside [-90, 90]"
        if not -180.0 <= self.lon <= 180.0:
            return f"lon {self.lon} outside [-180, 180]"
        if self.velocity < 0:
            return f"velocity {self.velocity} is negative"
        if not 0.0 <= self.heading < 360.0:
            return f"heading {self.heading} outside [0, 360)"
        if not self.hour <= self.timestamp < self.hour + 3600:
            return f"hour {self.hour} does not contain timestamp {self.timestamp}"
        return None


@dataclass
class Trajectory:
    icao24: str
    callsign: str
    records: list[AdsbRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records], dtype=np.int64)

    def check(self) -> None:
        if len(self.records) < 2:
            raise ValueError("trajectory needs at least 2 records")
        if any(r.icao24 != self.icao24 for r in self.records):
            raise ValueError("trajectory mixes aircraft")


@dataclass
class ParseResult:
    records: list[AdsbRecord]
    rejected: list[tuple[int, str]]  # (1-based file line, reason)


def _parse_int(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"{text!r} is not an integer") from None
        return int(value)


def parse_row(row: dict[str, str]) -> AdsbRecord:
    """Convert one CSV row; raises ValueError with a reason on malformed input."""
    values = {}
    for col, conv in (("time", _parse_int), ("hour", _parse_int)):
        try:
            values[col] = conv(row[col])
        except (ValueError, TypeError):
            raise ValueError(f"bad integer in {col}: {row[col]!r}") from None
    for col in ("lat", "lon", "baroaltitude", "velocity", "heading", "vertrate"):
        try:
            values[col] = float(row[col])
        except (ValueError, TypeError):
            raise ValueError(f"bad number in {col}: {row[col]!r}") from None
    return AdsbRecord(
        timestamp=values["time"],
        icao24=(row["icao24"] or "").strip().lower(),
        lat=values["lat"],
        lon=values["lon"],
        altitude=values["baroaltitude"],
        velocity=values["velocity"],
        heading=values["heading"],
        vertical_rate=values["vertrate"],
        callsign=(row["callsign"] or "").strip(),
        hour=values["hour"],
    )


def parse_csv(path) -> ParseResult:
    """Parse an ADS-B state-vector CSV.

    Malformed or out-of-range rows are returned in ``rejected`` together
    with their line number, never dropped silently.
    """
    path = Path(path)
    records: list[AdsbRecord] = []
    rejected: list[tuple[int, str]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        for col in CSV_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        for row in reader:
            line_no = reader.line_num
            if None in row or any(row.get(c) is None for c in CSV_COLUMNS):
                rejected.append((line_no, f"expected {len(header)} fields"))
                continue
            try:
                rec = parse_row(row)
            except ValueError as exc:
                rejected.append((line_no, str(exc)))
                continue
            reason = rec.validate()
            if reason is not None:
                rejected.append((line_no, f"range violation: {reason}"))
                continue
            records.append(rec)
    return ParseResult(records, rejected)


def format_record(r: AdsbRecord) -> list[str]:
    # repr() round-trips floats exactly
    return [
        str(r.timestamp), r.icao24, repr(r.lat), repr(r.lon), repr(r.altitude), repr(r.velocity),
        repr(r.heading), repr(r.vertical_rate), r.callsign, str(r.hour),
    ]


def write_csv(records: Iterable[AdsbRecord], path, extra: dict[str, list[str]] | None = None) -> None:
    """Write records in the canonical column order.

    ``extra`` prepends additional columns (used by the trajectory store).
    """
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(extra) + list(CSV_COLUMNS))
        for i, r in enumerate(records):
            writer.writerow([col[i] for col in extra.values()] + format_record(r))


def write_rejects(rejected: Iterable[tuple[int, str]], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for line_no, reason in rejected:
            fh.write(f"{line_no}\t{reason}\n")


# ---------------------------------------------------------------------------
# grouping


@dataclass
class Grouping:
    trajectories: list[Trajectory]
    discarded: list[AdsbRecord] = field(default_factory=list)

    @property
    def discarded_count(self) -> int:
        return len(self.discarded)


def group_into_trajectories(records: Iterable[AdsbRecord], gap_threshold: float = DEFAULT_GAP_THRESHOLD) -> Grouping:
    """Partition by aircraft, order by time, split on gaps above ``gap_threshold`` seconds.

    Segments with fewer than two records are reported in ``discarded``.
    Output order is by (icao24, first timestamp), so it does not depend on
    input order.
    """
    by_aircraft: dict[str, list[AdsbRecord]] = {}
    for r in records:
        by_aircraft.setdefault(r.icao24, []).append(r)

    trajectories: list[Trajectory] = []
    discarded: list[AdsbRecord] = []
    for icao in sorted(by_aircraft):
        recs = sorted(by_aircraft[icao], key=lambda r: r.timestamp)
        segment = [recs[0]]
        segments = []
        for prev, cur in zip(recs, recs[1:]):
            if cur.timestamp - prev.timestamp > gap_threshold:
                segments.append(segment)
                segment = []
            segment.append(cur)
        segments.append(segment)
        for seg in segments:
            if len(seg) < 2:
                discarded.extend(seg)
                continue
            callsign = next((r.callsign for r in seg if r.callsign), "")
            trajectories.append(Trajectory(icao, callsign, seg))
    return Grouping(trajectories, discarded)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    count: int = 200
    duration: float = 1500.0  # s
    period: float = 5.0  # s between reports
    cruise_speed: float = 250.0  # kt
    climb_amplitude: float = 3000.0  # ft, half of the total altitude change
    climb_time_constant: float = 240.0  # s
    turn_amplitude: float = 45.0  # deg
    turn_period: float = 900.0  # s
    noise_lat: float = 2e-5  # deg
    noise_lon: float = 2e-5  # deg
    noise_altitude: float = 10.0  # ft
    noise_velocity: float = 1.0  # kt
    noise_heading: float = 0.5  # deg
    noise_vertical_rate: float = 20.0  # ft/min
    gap_probability: float = 0.05
    duplicate_probability: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.count < 1:
            raise ConfigError(f"synth.count must be positive, got {self.count}")
        for name in ("duration", "period", "cruise_speed", "climb_time_constant", "turn_period"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"synth.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.gap_probability <= 0.5:
            raise ConfigError(f"synth.gap_probability must be in [0, 0.5], got {self.gap_probability}")
        if not 0.0 <= self.duplicate_probability <= 0.5:
            raise ConfigError(f"synth.duplicate_probability must be in [0, 0.5], got {self.duplicate_probability}")
        for name in ("noise_lat", "noise_lon", "noise_altitude", "noise_velocity", "noise_heading", "noise_vertical_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"synth.{name} must be >= 0")


SYNTH_EPOCH = 1478872800  # start of the first synthetic flight, Unix seconds
_AIRLINES = ("DAL", "AAL", "SWA", "UAL", "EJA", "FFT")
_ATL = (33.6407, -84.4277)


def _flight_profile(cfg: SynthConfig, rng: np.random.Generator, t: np.ndarray) -> dict[str, np.ndarray]:
    """Noise-free state on the time grid ``t`` (seconds from departure)."""
    lat0 = _ATL[0] + rng.uniform(-1.0, 1.0)
    lon0 = _ATL[1] + rng.uniform(-1.0, 1.0)
    h0 = rng.uniform(0.0, 360.0)
    speed = cfg.cruise_speed * rng.uniform(0.85, 1.15)
    speed_wobble = rng.uniform(0.0, 0.05) * speed
    turn_amp = cfg.turn_amplitude * rng.uniform(-1.0, 1.0)
    turn_phase = rng.uniform(0.0, 2 * np.pi)
    alt_mid = rng.uniform(8000.0, 30000.0)
    climb = cfg.climb_amplitude * rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
    t_climb = rng.uniform(0.2, 0.8) * cfg.duration
    tau = cfg.climb_time_constant

    w = 2 * np.pi / cfg.turn_period
    heading = h0 + turn_amp * np.sin(w * t + turn_phase)
    velocity = speed + speed_wobble * np.sin(0.5 * w * t)
    s = np.tanh((t - t_climb) / tau)
    altitude = alt_mid + climb * s
    vertical_rate = climb * (1.0 - s**2) / tau * 60.0  # ft/min

    # integrate position on a 1 s grid, then sample
    fine = np.arange(0.0, t[-1] + 1.0, 1.0)
    h_f = np.radians(h0 + turn_amp * np.sin(w * fine + turn_phase))
    v_f = speed + speed_wobble * np.sin(0.5 * w * fine)
    dlat = v_f * np.cos(h_f) * _KT_TO_DEG_PER_S
    lat_f = lat0 + np.concatenate([[0.0], np.cumsum(0.5 * (dlat[1:] + dlat[:-1]))])
    dlon = v_f * np.sin(h_f) * _KT_TO_DEG_PER_S / np.cos(np.radians(lat_f))
    lon_f = lon0 + np.concatenate([[0.0], np.cumsum(0.5 * (dlon[1:] + dlon[:-1]))])
    return {
        "lat": np.interp(t, fine, lat_f),
        "lon": np.interp(t, fine, lon_f),
        "altitude": altitude,
        "velocity": velocity,
        "heading": heading,
        "vertical_rate": vertical_rate,
    }


def _wrap_heading(h: np.ndarray) -> np.ndarray:
    h = np.mod(h, 360.0)
    return np.where(h >= 360.0, 0.0, h)


def synth_generate(cfg: SynthConfig) -> list[Trajectory]:
    """Smooth turning/climbing flights with Gaussian noise, dropped and repeated samples.

    Deterministic for a given config (including ``seed``).
    """
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    used: set[str] = set()
    trajectories = []
    n_steps = int(np.floor(cfg.duration / cfg.period)) + 1
    for idx, child in enumerate(root.spawn(cfg.count)):
        rng = np.random.default_rng(child)
        while True:
            icao = f"{int(rng.integers(0, 2**24)):06x}"
            if icao not in used:
                used.add(icao)
                break
        callsign = f"{_AIRLINES[int(rng.integers(len(_AIRLINES)))]}{int(rng.integers(1, 10000))}"
        start = SYNTH_EPOCH + idx * 600
        offsets = np.round(np.arange(n_steps) * cfg.period).astype(np.int64)
        state = _flight_profile(cfg, rng, offsets.astype(np.float64))
        noise = {
            "lat": cfg.noise_lat, "lon": cfg.noise_lon, "altitude": cfg.noise_altitude,
            "velocity": cfg.noise_velocity, "heading": cfg.noise_heading, "vertical_rate": cfg.noise_vertical_rate,
        }
        for key, std in noise.items():
            if std > 0:
                state[key] = state[key] + rng.normal(0.0, std, n_steps)
        state["velocity"] = np.maximum(state["velocity"], 0.0)
        state["heading"] = _wrap_heading(state["heading"])
        keep = rng.random(n_steps) >= cfg.gap_probability
        dup = rng.random(n_steps) < cfg.duplicate_probability
        records = []
        for i in range(n_steps):
            if not keep[i]:
                continue
            ts = int(start + offsets[i])
            rec = AdsbRecord(
                timestamp=ts,
                icao24=icao,
                lat=float(state["lat"][i]),
                lon=float(state["lon"][i]),
                altitude=float(state["altitude"][i]),
                velocity=float(state["velocity"][i]),
                heading=float(state["heading"][i]),
                vertical_rate=float(state["vertical_rate"][i]),
                callsign=callsign,
                hour=ts - ts % 3600,
            )
            records.append(rec)
            if dup[i]:
                records.append(rec)
        trajectories.append(Trajectory(icao, callsign, records))
    return trajectories


# ---------------------------------------------------------------------------
# trajectory store: the canonical CSV with a leading traj_id column

STORE_ID_COLUMN = "traj_id"


def write_store(trajectories: Sequence[Trajectory], path) -> None:
    ids, records = [], []
    for i, t in enumerate(trajectories):
        ids.extend([str(i)] * len(t.records))
        records.extend(t.records)
    write_csv(records, path, extra={STORE_ID_COLUMN: ids})


def read_store(path) -> list[Trajectory]:
    parsed = parse_csv(path)
    if parsed.rejected:
        line_no, reason = parsed.rejected[0]
        raise FormatError(f"{path}: trajectory store line {line_no} is invalid ({reason})")
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if STORE_ID_COLUMN not in (reader.fieldnames or []):
            raise SchemaError(f"{path}: missing column {STORE_ID_COLUMN!r}")
        ids = [row[STORE_ID_COLUMN] for row in reader]
    groups: dict[str, list[AdsbRecord]] = {}
    for tid, r in zip(ids, parsed.records):
        groups.setdefault(tid, []).append(r)
    out = []
    for tid, recs in groups.items():
        callsign = next((r.callsign for r in recs if r.callsign), "")
        traj = Trajectory(recs[0].icao24, callsign, recs)
        try:
            traj.check()
        except ValueError as exc:
            raise FormatError(f"{path}: trajectory {tid}: {exc}") from None
        out.append(traj)
    return out
