"""Enumerations and the request record shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import ValidationError


class SliceKind(str, Enum):
    EMBB = "eMBB"
    MMTC = "mMTC"
    URLLC = "URLLC"
    MASTER = "Master"

    @classmethod
    def parse(cls, token: str) -> "SliceKind":
        key = token.strip().lower()
        for kind in cls:
            if kind.value.lower() == key or kind.name.lower() == key:
                return kind
        raise ValueError(f"unknown slice kind {token!r}")


# Order matters: it is the predictor's output layout and its argmax tie-break.
PREDICTED_KINDS: tuple[SliceKind, ...] = (SliceKind.EMBB, SliceKind.MMTC, SliceKind.URLLC)


class DeviceClass(str, Enum):
    HEALTHCARE = "healthcare"
    INTELLIGENT_TRANSPORT = "intelligent_transport"
    SMART_CITY = "smart_city"
    IOT = "iot"
    SMARTPHONE = "smartphone"
    INDUSTRY40 = "industry40"
    UNKNOWN = "unknown"


class Weather(str, Enum):
    NORMAL = "normal"
    HARSH = "harsh"


LOSS_LEVELS: tuple[float, ...] = (1e-2, 1e-3, 1e-6)


def loss_level_index(rate: float) -> int:
    """Index of ``rate`` within LOSS_LEVELS, or -1 when it is not one of them."""
    for i, level in enumerate(LOSS_LEVELS):
        if math.isclose(rate, level, rel_tol=1e-9):
            return i
    return -1


@dataclass(frozen=True, slots=True)
class RequestRecord:
    """One connection request with its KPI features.

    ``label`` is the slice class the request was generated for (or the
    label column of an ingested dataset); the admission path never reads it.
    """

    id: int
    arrival_time: float
    device_class: DeviceClass
    ue_category: int
    qci: int
    packet_loss_rate: float
    packet_delay_budget_ms: int
    day_of_week: int
    hour_of_day: int
    weather: Weather
    ttl_s: int
    label: SliceKind | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.arrival_time) and self.arrival_time >= 0):
            raise ValidationError(f"arrival_time must be a finite nonnegative number, got {self.arrival_time}")
        if not (math.isfinite(self.packet_loss_rate) and 0 < self.packet_loss_rate < 1):
            raise ValidationError(f"packet_loss_rate must lie in (0, 1), got {self.packet_loss_rate}")
        if self.packet_delay_budget_ms <= 0:
            raise ValidationError(f"packet_delay_budget_ms must be positive, got {self.packet_delay_budget_ms}")
        if self.ttl_s <= 0:
            raise ValidationError(f"ttl_s must be positive, got {self.ttl_s}")
        if not 1 <= self.qci <= 9:
            raise ValidationError(f"qci must lie in 1..9, got {self.qci}")
        if self.ue_category < 1:
            raise ValidationError(f"ue_category must be >= 1, got {self.ue_category}")
        if not 0 <= self.day_of_week <= 6:
            raise ValidationError(f"day_of_week must lie in 0..6, got {self.day_of_week}")
        if not 0 <= self.hour_of_day <= 23:
            raise ValidationError(f"hour_of_day must lie in 0..23, got {self.hour_of_day}")
        if self.label is SliceKind.MASTER:
            raise ValidationError("the master slice is not a request label")
