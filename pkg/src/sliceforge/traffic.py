"""Device profiles, synthetic request streams, dataset ingestion and feature encoding."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import (
    LOSS_LEVELS,
    PREDICTED_KINDS,
    DeviceClass,
    RequestRecord,
    SliceKind,
    Weather,
    loss_level_index,
)
from .errors import ConfigError, EncodingError, SchemaError, ValidationError
from .slicing import NEED_TO_SLICE, need_from_kpis

log = logging.getLogger(__name__)

LOW_DELAY_QCIS: tuple[int, ...] = (1, 2, 3)
HIGH_DELAY_QCIS: tuple[int, ...] = (4, 5, 6, 7, 8, 9)


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    device_class: DeviceClass
    loss_rates: tuple[float, ...]
    delays_ms: tuple[int, ...]
    durations_s: tuple[int, ...]
    expected_slices: frozenset[SliceKind]
    ue_categories: tuple[int, ...] = (1, 2, 3, 4)
    # None: pick from LOW_DELAY_QCIS / HIGH_DELAY_QCIS by the sampled delay budget
    qcis: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        for attr in ("loss_rates", "delays_ms", "durations_s", "expected_slices", "ue_categories"):
            if not getattr(self, attr):
                raise ConfigError(f"profile {self.name!r}: {attr} must be nonempty")
        if SliceKind.MASTER in self.expected_slices:
            raise ConfigError(f"profile {self.name!r}: Master is not a request slice")
        if self.qcis is not None and not self.qcis:
            raise ConfigError(f"profile {self.name!r}: qcis must be nonempty when given")

    def qci_choices(self, delay_ms: int) -> tuple[int, ...]:
        if self.qcis is not None:
            return self.qcis
        return LOW_DELAY_QCIS if delay_ms <= 50 else HIGH_DELAY_QCIS

    def admissible(self, kind: SliceKind) -> list[tuple[float, int]]:
        """(loss, delay) pairs from this profile that the rule oracle files under ``kind``."""
        return [
            (loss, delay)
            for loss in self.loss_rates
            for delay in self.delays_ms
            if NEED_TO_SLICE.get(need_from_kpis(self.device_class, loss, delay)) is kind
        ]


_E, _M, _U = SliceKind.EMBB, SliceKind.MMTC, SliceKind.URLLC


def profile_table() -> list[DeviceProfile]:
    """The seven device rows used for traffic generation, in table order."""
    return [
        DeviceProfile("healthcare", DeviceClass.HEALTHCARE, (1e-6,), (15,), (200,), frozenset({_U}), (3, 4)),
        DeviceProfile(
            "intelligent transportation", DeviceClass.INTELLIGENT_TRANSPORT, (1e-6,), (15,), (50,), frozenset({_U}), (4, 6)
        ),
        DeviceProfile("smart cities", DeviceClass.SMART_CITY, (1e-3,), (60, 300), (90,), frozenset({_M}), (1, 2)),
        DeviceProfile("IoT devices", DeviceClass.IOT, (1e-3,), (60, 300), (50,), frozenset({_M}), (1, 2)),
        DeviceProfile(
            "smartphones",
            DeviceClass.SMARTPHONE,
            (1e-3, 1e-6),
            (50, 75, 100, 130, 300),
            (250,),
            frozenset({_E}),
            (4, 6, 9, 12),
        ),
        DeviceProfile(
            "Industry 4.0", DeviceClass.INDUSTRY40, (1e-3, 1e-6), (15, 50), (160,), frozenset({_M, _U}), (3, 4, 6)
        ),
        DeviceProfile(
            "unknown devices",
            DeviceClass.UNKNOWN,
            (1e-3, 1e-6),
            (15, 50, 60, 75, 110, 150, 300),
            (40, 110, 190),
            frozenset({_E, _M, _U}),
            (1, 2, 3, 4, 6, 9, 12),
        ),
    ]


class ArrivalProcess(str, Enum):
    UNIFORM = "uniform"
    POISSON = "poisson"


def _as_fraction(value: object, name: str) -> Fraction:
    try:
        # str() first so 0.45 becomes 9/20 rather than its binary expansion
        frac = Fraction(str(value)) if isinstance(value, float) else Fraction(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a number: {value!r}") from exc
    if frac < 0:
        raise ConfigError(f"{name}: must be nonnegative, got {value}")
    return frac


@dataclass(frozen=True)
class TrafficMixConfig:
    fraction_embb: Fraction = Fraction(9, 20)
    fraction_mmtc: Fraction = Fraction(1, 5)
    fraction_urllc: Fraction = Fraction(7, 20)
    total_requests: int = 500_000
    duration_hours: float = 20.0
    arrival_process: ArrivalProcess = ArrivalProcess.UNIFORM
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("fraction_embb", "fraction_mmtc", "fraction_urllc"):
            object.__setattr__(self, name, _as_fraction(getattr(self, name), name))
        total = self.fraction_embb + self.fraction_mmtc + self.fraction_urllc
        if total != 1:
            raise ConfigError(f"traffic fractions must sum to 1, got {total}")
        if isinstance(self.total_requests, bool) or int(self.total_requests) != self.total_requests:
            raise ConfigError(f"total_requests must be an integer, got {self.total_requests!r}")
        object.__setattr__(self, "total_requests", int(self.total_requests))
        if self.total_requests < 0:
            raise ConfigError(f"total_requests must be nonnegative, got {self.total_requests}")
        if not (isinstance(self.duration_hours, (int, float)) and math.isfinite(self.duration_hours)):
            raise ConfigError(f"duration_hours must be a number, got {self.duration_hours!r}")
        if self.duration_hours <= 0:
            raise ConfigError(f"duration_hours must be positive, got {self.duration_hours}")
        try:
            object.__setattr__(self, "arrival_process", ArrivalProcess(self.arrival_process))
        except ValueError as exc:
            raise ConfigError(f"arrival_process must be one of {[a.value for a in ArrivalProcess]}") from exc
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def duration_s(self) -> float:
        return float(self.duration_hours) * 3600.0

    @property
    def fractions(self) -> dict[SliceKind, Fraction]:
        return {_E: self.fraction_embb, _M: self.fraction_mmtc, _U: self.fraction_urllc}


@dataclass
class _ClassMenu:
    profiles: list[DeviceProfile]
    combos: list[list[tuple[float, int]]]


def _menus(profiles: Sequence[DeviceProfile]) -> dict[SliceKind, _ClassMenu]:
    menus: dict[SliceKind, _ClassMenu] = {}
    for kind in PREDICTED_KINDS:
        menu = _ClassMenu([], [])
        for profile in profiles:
            if kind not in profile.expected_slices:
                continue
            combos = profile.admissible(kind)
            if combos:
                menu.profiles.append(profile)
                menu.combos.append(combos)
        menus[kind] = menu
    return menus


def generate_stream(
    config: TrafficMixConfig,
    profiles: Sequence[DeviceProfile] | None = None,
    first_id: int = 0,
    start_s: float = 0.0,
) -> list[RequestRecord]:
    """Draw ``config.total_requests`` requests over the configured duration.

    Each request first draws its slice class from the mix, then a profile
    that serves that class, then KPI values from that profile's choice sets
    restricted to combinations the rule oracle assigns to the drawn class.
    Arrival times are offset by ``start_s``; ids count up from ``first_id``.
    """
    profiles = list(profile_table() if profiles is None else profiles)
    n = config.total_requests
    fractions = config.fractions
    menus = _menus(profiles)
    for kind in PREDICTED_KINDS:
        if fractions[kind] > 0 and not menus[kind].profiles:
            raise ConfigError(f"no device profile can produce {kind.value} traffic")
    if n == 0:
        return []

    rng = np.random.default_rng(int(config.seed))
    probs = np.array([float(fractions[k]) for k in PREDICTED_KINDS])
    classes = rng.choice(len(PREDICTED_KINDS), size=n, p=probs / probs.sum())
    # one uniform per sampled attribute, drawn as a block for determinism
    u = rng.random((n, 6))
    days = rng.integers(0, 7, size=n)
    hours = rng.integers(0, 24, size=n)
    weather = rng.integers(0, 2, size=n)

    duration = config.duration_s
    if config.arrival_process is ArrivalProcess.UNIFORM:
        times = np.arange(n, dtype=np.float64) * (duration / n)
    else:
        # a Poisson process conditioned on n arrivals places them as sorted uniforms
        times = np.sort(rng.uniform(0.0, duration, size=n))
    times = times + start_s

    # flatten (class, profile) pairs so the per-record picks vectorize
    options: list[tuple[SliceKind, DeviceProfile, list[tuple[float, int]]]] = []
    offsets = np.zeros(len(PREDICTED_KINDS), dtype=np.int64)
    widths = np.ones(len(PREDICTED_KINDS), dtype=np.int64)
    for ci, kind in enumerate(PREDICTED_KINDS):
        menu = menus[kind]
        offsets[ci] = len(options)
        widths[ci] = max(len(menu.profiles), 1)
        options.extend((kind, prof, combos) for prof, combos in zip(menu.profiles, menu.combos))

    def pick(col: int, sizes: np.ndarray) -> list[int]:
        return np.minimum((u[:, col] * sizes).astype(np.int64), sizes - 1).tolist()

    opt = (offsets[classes] + np.minimum((u[:, 0] * widths[classes]).astype(np.int64), widths[classes] - 1))
    combo_idx = pick(1, np.array([len(o[2]) for o in options])[opt])
    ue_idx = pick(2, np.array([len(o[1].ue_categories) for o in options])[opt])
    ttl_idx = pick(4, np.array([len(o[1].durations_s) for o in options])[opt])
    u_qci = u[:, 3].tolist()
    opt_list = opt.tolist()
    times_list = times.tolist()
    days_list = days.tolist()
    hours_list = hours.tolist()
    weather_list = weather.tolist()

    weathers = (Weather.NORMAL, Weather.HARSH)
    records: list[RequestRecord] = []
    append = records.append
    for i in range(n):
        kind, profile, combos = options[opt_list[i]]
        loss, delay = combos[combo_idx[i]]
        qcis = profile.qci_choices(delay)
        append(
            RequestRecord(
                first_id + i,
                times_list[i],
                profile.device_class,
                profile.ue_categories[ue_idx[i]],
                qcis[min(int(u_qci[i] * len(qcis)), len(qcis) - 1)],
                loss,
                delay,
                days_list[i],
                hours_list[i],
                weathers[weather_list[i]],
                profile.durations_s[ttl_idx[i]],
                kind,
            )
        )
    return records


def class_counts(records: Iterable[RequestRecord]) -> dict[SliceKind, int]:
    counts = {k: 0 for k in PREDICTED_KINDS}
    for record in records:
        if record.label is not None:
            counts[record.label] += 1
    return counts


# dataset CSV schema, in column order
COLUMNS: tuple[str, ...] = (
    "id",
    "arrival_time",
    "device_class",
    "ue_category",
    "qci",
    "packet_loss_rate",
    "packet_delay_budget",
    "day_of_week",
    "hour_of_day",
    "weather",
    "ttl",
)
LABEL_COLUMN = "slice_type"


def write_dataset(records: Iterable[RequestRecord], path: str | Path, with_labels: bool = True) -> int:
    header = list(COLUMNS) + ([LABEL_COLUMN] if with_labels else [])
    n = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            row = [
                r.id,
                repr(r.arrival_time),
                r.device_class.value,
                r.ue_category,
                r.qci,
                repr(r.packet_loss_rate),
                r.packet_delay_budget_ms,
                r.day_of_week,
                r.hour_of_day,
                r.weather.value,
                r.ttl_s,
            ]
            if with_labels:
                row.append(r.label.value if r.label is not None else "")
            writer.writerow(row)
            n += 1
    return n


@dataclass(frozen=True)
class RowIssue:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def _parse_row(row: dict[str, str]) -> RequestRecord:
    def integer(col: str) -> int:
        raw = row[col].strip()
        try:
            return int(raw)
        except ValueError:
            value = float(raw)
            if not value.is_integer():
                raise ValueError(f"{col}: expected an integer, got {raw!r}") from None
            return int(value)

    def number(col: str) -> float:
        raw = row[col].strip()
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{col}: expected a number, got {raw!r}") from None

    def enum(col: str, cls):
        raw = row[col].strip()
        try:
            return cls(raw.lower()) if cls is not SliceKind else SliceKind.parse(raw)
        except ValueError:
            raise ValueError(f"{col}: unknown value {raw!r}") from None

    label = None
    if LABEL_COLUMN in row and row[LABEL_COLUMN] is not None and row[LABEL_COLUMN].strip():
        label = enum(LABEL_COLUMN, SliceKind)
    return RequestRecord(
        id=integer("id"),
        arrival_time=number("arrival_time"),
        device_class=enum("device_class", DeviceClass),
        ue_category=integer("ue_category"),
        qci=integer("qci"),
        packet_loss_rate=number("packet_loss_rate"),
        packet_delay_budget_ms=integer("packet_delay_budget"),
        day_of_week=integer("day_of_week"),
        hour_of_day=integer("hour_of_day"),
        weather=enum("weather", Weather),
        ttl_s=integer("ttl"),
        label=label,
    )


def load_dataset(path: str | Path, issues: list[RowIssue] | None = None) -> list[RequestRecord]:
    """Parse a dataset CSV; bad rows are skipped and reported with their line numbers.

    Pass a list as ``issues`` to collect the rejected rows; they are also
    logged as warnings. A missing column raises SchemaError.
    """
    records: list[RequestRecord] = []
    seen: set[int] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in COLUMNS:
            if col not in header:
                raise SchemaError(col, path)
        for row in reader:
            line = reader.line_num
            try:
                record = _parse_row(row)
                if record.id in seen:
                    raise ValueError(f"duplicate id {record.id}")
            except (ValueError, ValidationError) as exc:
                issue = RowIssue(line, str(exc))
                log.warning("%s: %s", path, issue)
                if issues is not None:
                    issues.append(issue)
                continue
            seen.add(record.id)
            records.append(record)
    return records


@dataclass(frozen=True)
class FeatureBounds:
    """Min-max bounds for the numeric features; frozen, never fitted to data."""

    delay_ms: tuple[float, float] = (0.0, 300.0)
    ttl_s: tuple[float, float] = (0.0, 300.0)
    hour: tuple[float, float] = (0.0, 23.0)
    ue_category: tuple[float, float] = (1.0, 20.0)

    def __post_init__(self) -> None:
        for name in ("delay_ms", "ttl_s", "hour", "ue_category"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ConfigError(f"feature bounds {name}: upper {hi} must exceed lower {lo}")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def as_dict(self) -> dict[str, list[float]]:
        return {name: list(getattr(self, name)) for name in ("delay_ms", "ttl_s", "hour", "ue_category")}


DEFAULT_BOUNDS = FeatureBounds()

# feature layout:
#   0 delay budget, 1 ttl, 2 hour of day, 3 UE category (min-max scaled)
#   4..10 device class (DeviceClass order), 11..12 weather, 13..19 day of week,
#   20..28 QCI 1..9, 29..31 loss rate (1e-2, 1e-3, 1e-6)
FEATURE_DIM = 32
_DEVICE_INDEX = {d: i for i, d in enumerate(DeviceClass)}
_WEATHER_INDEX = {w: i for i, w in enumerate(Weather)}


def _scale(value: float, bounds: tuple[float, float], name: str, record_id: int) -> float:
    lo, hi = bounds
    if not lo <= value <= hi:
        raise EncodingError(f"request {record_id}: {name}={value} outside [{lo}, {hi}]")
    return (value - lo) / (hi - lo)


def encode_features(record: RequestRecord, bounds: FeatureBounds = DEFAULT_BOUNDS) -> np.ndarray:
    vec = np.zeros(FEATURE_DIM)
    vec[0] = _scale(record.packet_delay_budget_ms, bounds.delay_ms, "packet_delay_budget", record.id)
    vec[1] = _scale(record.ttl_s, bounds.ttl_s, "ttl", record.id)
    vec[2] = _scale(record.hour_of_day, bounds.hour, "hour_of_day", record.id)
    vec[3] = _scale(record.ue_category, bounds.ue_category, "ue_category", record.id)
    vec[4 + _DEVICE_INDEX[record.device_class]] = 1.0
    vec[11 + _WEATHER_INDEX[record.weather]] = 1.0
    vec[13 + record.day_of_week] = 1.0
    vec[20 + record.qci - 1] = 1.0
    level = loss_level_index(record.packet_loss_rate)
    if level < 0:
        raise EncodingError(f"request {record.id}: loss rate {record.packet_loss_rate} is not one of {LOSS_LEVELS}")
    vec[29 + level] = 1.0
    return vec


def encode_batch(records: Sequence[RequestRecord], bounds: FeatureBounds = DEFAULT_BOUNDS) -> np.ndarray:
    out = np.empty((len(records), FEATURE_DIM))
    for i, record in enumerate(records):
        out[i] = encode_features(record, bounds)
    return out
