"""Sensor-stream data model, file/wire ingestion, and time alignment.

A deployment is a set of named sensors reporting timestamped frequency,
voltage phase angle, and voltage magnitude samples.  Streams arrive as CSV
files or line-delimited wire records and are aligned by a concentrator
into matrix form (`TimeSeriesGrid`) for the analysis pipelines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

SensorId = str

CSV_HEADER = ["sensor_id", "utc_seconds", "frequency_hz", "angle_deg", "voltage_pu"]
WIRE_SEP = "|"

CHANNELS = ("freq", "angle", "volt")


class IngestError(Exception):
    """File-level ingestion failure (missing file, bad header)."""


class AlignmentError(Exception):
    """Frames cannot be aligned (non-monotonic timestamps, bad policy)."""


class WireError(Exception):
    """A wire record cannot be decoded."""


def wrap_angle_deg(a):
    """Wrap angles to [-180, 180)."""
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class SensorMeta:
    """Static sensor description: id, planar site coordinates, nominal frequency."""

    id: SensorId
    x_km: float
    y_km: float
    nominal_hz: float = 60.0

    def __post_init__(self):
        if not self.id:
            raise ValueError("sensor id must be non-empty")
        if not (np.isfinite(self.x_km) and np.isfinite(self.y_km)):
            raise ValueError(f"sensor {self.id}: coordinates must be finite")
        if self.nominal_hz not in (50.0, 60.0, 50, 60):
            raise ValueError(f"sensor {self.id}: nominal_hz must be 50 or 60")


@dataclass(frozen=True)
class MeasurementFrame:
    """One timestamped sample from one sensor."""

    sensor: SensorId
    t: float
    freq_hz: float
    angle_deg: float
    volt_pu: float


@dataclass(frozen=True)
class RowError:
    """Row-level ingestion failure; the stream continues past it."""

    line: int
    field: str
    raw: str


@dataclass
class TimeSeriesGrid:
    """Aligned sensors x samples matrices, one per channel.

    Masked cells (mask False) hold NaN and carry no meaning.  Sample k of
    sensor row i is at time ``t0 + k * dt_s``.
    """

    sensors: list[SensorId]
    t0: float
    dt_s: float
    freq: np.ndarray
    angle: np.ndarray
    volt: np.ndarray
    mask: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.dt_s <= 0:
            raise ValueError("dt_s must be positive")
        if self.mask is None:
            self.mask = np.isfinite(self.freq)

    @property
    def n_samples(self) -> int:
        return self.freq.shape[1]

    def times(self) -> np.ndarray:
        return self.t0 + self.dt_s * np.arange(self.n_samples)

    def row(self, sensor: SensorId) -> int:
        return self.sensors.index(sensor)

    def index_of_time(self, t: float) -> int:
        return int(round((t - self.t0) / self.dt_s))

    def select(self, rows) -> "TimeSeriesGrid":
        """Row-subset view (new grid) with the same time base."""
        rows = list(rows)
        return TimeSeriesGrid([self.sensors[i] for i in rows], self.t0,
                              self.dt_s, self.freq[rows], self.angle[rows],
                              self.volt[rows], self.mask[rows])

    def frames(self) -> list[MeasurementFrame]:
        """Unmasked cells as frames, in time-major order (inverse of align)."""
        out = []
        times = self.times()
        for k in range(self.n_samples):
            for i, sid in enumerate(self.sensors):
                if self.mask[i, k]:
                    out.append(MeasurementFrame(
                        sid, float(times[k]), float(self.freq[i, k]),
                        float(self.angle[i, k]), float(self.volt[i, k])))
        return out


def _parse_row(parts: list[str], line_no: int, raw: str):
    if len(parts) != 5:
        return RowError(line_no, "record", raw)
    sensor = parts[0].strip()
    if not sensor:
        return RowError(line_no, "sensor_id", raw)
    values = {}
    for name, text in zip(CSV_HEADER[1:], parts[1:]):
        try:
            values[name] = float(text)
        except ValueError:
            return RowError(line_no, name, raw)
    if not np.isfinite(list(values.values())).all():
        return RowError(line_no, "record", raw)
    if values["utc_seconds"] < 0:
        return RowError(line_no, "utc_seconds", raw)
    return MeasurementFrame(
        sensor,
        values["utc_seconds"],
        values["frequency_hz"],
        float(wrap_angle_deg(values["angle_deg"])),
        values["voltage_pu"],
    )


def ingest_csv(path):
    """Yield MeasurementFrame or RowError per data row, in file order."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise IngestError(f"{path}: header mismatch, expected {','.join(CSV_HEADER)}")
        for line_no, parts in enumerate(reader, start=2):
            if not parts:
                continue
            yield _parse_row(parts, line_no, ",".join(parts))


def write_csv(frames, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for f in frames:
            writer.writerow([f.sensor, repr(f.t), repr(f.freq_hz),
                             repr(f.angle_deg), repr(f.volt_pu)])


def encode_wire(frame: MeasurementFrame) -> str:
    """Line-delimited wire record; floats kept at full round-trip precision."""
    return WIRE_SEP.join([frame.sensor, repr(frame.t), repr(frame.freq_hz),
                          repr(frame.angle_deg), repr(frame.volt_pu)])


def decode_wire(line: str) -> MeasurementFrame:
    parsed = _parse_row(line.strip().split(WIRE_SEP), 1, line)
    if isinstance(parsed, RowError):
        raise WireError(f"bad wire record (field {parsed.field}): {line!r}")
    return parsed


def align(frames, dt_s: float, policy: str = "nearest") -> TimeSeriesGrid:
    """Concentrate frames into a TimeSeriesGrid on a fixed dt_s raster.

    Each frame claims the bin nearest its timestamp; bins no frame claims
    stay masked, so gaps (anything longer than ~2*dt_s between frames)
    surface as masked cells rather than fabricated data.  When several
    frames of one sensor land in a bin, the latest timestamp wins.  Under
    ``linear-interp`` a claimed bin's value is interpolated at the bin
    center from the two bracketing frames when they are within 2*dt_s of
    each other; ``nearest`` keeps the claiming frame's raw value.
    """
    if dt_s <= 0:
        raise AlignmentError("dt_s must be positive")
    if policy not in ("nearest", "linear-interp"):
        raise AlignmentError(f"unknown policy {policy!r}")
    frames = list(frames)
    if not frames:
        empty = np.zeros((0, 0))
        return TimeSeriesGrid([], 0.0, dt_s, empty, empty.copy(), empty.copy(),
                              np.zeros((0, 0), dtype=bool))

    sensors: list[SensorId] = []
    per_sensor: dict[SensorId, list[MeasurementFrame]] = {}
    for f in frames:
        if f.sensor not in per_sensor:
            sensors.append(f.sensor)
            per_sensor[f.sensor] = []
        per_sensor[f.sensor].append(f)
    for sid, fl in per_sensor.items():
        ts = np.array([f.t for f in fl])
        if len(ts) > 1 and not (np.diff(ts) > 0).all():
            raise AlignmentError(f"sensor {sid}: timestamps not strictly increasing")

    all_t = np.array([f.t for f in frames])
    k0 = int(round(all_t.min() / dt_s))
    t0 = k0 * dt_s
    n = int(round((all_t.max() - t0) / dt_s)) + 1

    shape = (len(sensors), n)
    freq = np.full(shape, np.nan)
    angle = np.full(shape, np.nan)
    volt = np.full(shape, np.nan)
    mask = np.zeros(shape, dtype=bool)

    for i, sid in enumerate(sensors):
        fl = per_sensor[sid]
        ts = np.array([f.t for f in fl])
        bins = np.rint((ts - t0) / dt_s).astype(int)
        for k in np.unique(bins):
            claim = np.nonzero(bins == k)[0]
            j = claim[-1]  # latest timestamp wins inside a bin
            t_bin = t0 + k * dt_s
            value = fl[j]
            if policy == "linear-interp":
                value = _interp_at(fl, j, t_bin, dt_s)
            freq[i, k] = value.freq_hz
            angle[i, k] = value.angle_deg
            volt[i, k] = value.volt_pu
            mask[i, k] = True

    return TimeSeriesGrid(sensors, t0, dt_s, freq, angle, volt, mask)


def _interp_at(fl, j, t_bin, dt_s):
    """Value at the bin center, interpolated from the frames bracketing it."""
    a = fl[j]
    b = None
    if a.t <= t_bin and j + 1 < len(fl):
        b = fl[j + 1]
    elif a.t > t_bin and j > 0:
        b = fl[j - 1]
    if b is None or abs(b.t - a.t) > 2.0 * dt_s or b.t == a.t:
        return a
    w = (t_bin - a.t) / (b.t - a.t)
    if not 0.0 <= w <= 1.0:
        return a
    return MeasurementFrame(
        a.sensor, t_bin,
        a.freq_hz + w * (b.freq_hz - a.freq_hz),
        a.angle_deg + w * (b.angle_deg - a.angle_deg),
        a.volt_pu + w * (b.volt_pu - a.volt_pu),
    )
