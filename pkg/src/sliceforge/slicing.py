"""Per-slice live state, utilization accounting and threshold admission.

Connections are unit-cost slots. Utilization is compared against the
overload threshold in exact integer arithmetic (``active * 100`` versus
``threshold * capacity``) so the boundary is reproducible bit for bit.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping

from .domain import DeviceClass, RequestRecord, SliceKind
from .errors import ConfigError, InvalidTargetError, RejectedNoCapacity, ValidationError

DEFAULT_THRESHOLD = 92
DEFAULT_CAPACITIES: dict[SliceKind, int] = {
    SliceKind.EMBB: 250,
    SliceKind.MMTC: 120,
    SliceKind.URLLC: 200,
    SliceKind.MASTER: 400,
}


class ServiceNeed(str, Enum):
    HIGH_THROUGHPUT = "high_throughput"
    RELIABLE_LOW_LATENCY = "reliable_low_latency"
    LOW_THROUGHPUT_HIGH_DENSITY = "low_throughput_high_density"
    UNMATCHED = "unmatched"


NEED_TO_SLICE: dict[ServiceNeed, SliceKind] = {
    ServiceNeed.HIGH_THROUGHPUT: SliceKind.EMBB,
    ServiceNeed.RELIABLE_LOW_LATENCY: SliceKind.URLLC,
    ServiceNeed.LOW_THROUGHPUT_HIGH_DENSITY: SliceKind.MMTC,
}
SLICE_TO_NEED: dict[SliceKind, ServiceNeed] = {v: k for k, v in NEED_TO_SLICE.items()}


class Reason(str, Enum):
    PRIMARY_FIT = "primary_fit"
    OVERFLOW_REDIRECT = "overflow_redirect"
    FAILURE_REDIRECT = "failure_redirect"
    UNMATCHED_FALLBACK = "unmatched_fallback"
    REJECTED_NO_CAPACITY = "rejected_no_capacity"


@dataclass
class SliceState:
    kind: SliceKind
    capacity: int
    healthy: bool = True
    active: dict[int, float] = field(default_factory=dict)
    # min-heap of (expiry, connection id); stale entries are skipped on pop
    _expiries: list[tuple[float, int]] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ConfigError(f"{self.kind.value}: capacity must be positive, got {self.capacity}")

    @property
    def count(self) -> int:
        return len(self.active)

    @property
    def full(self) -> bool:
        return len(self.active) >= self.capacity

    def add(self, conn_id: int, now: float, expiry: float) -> None:
        if conn_id in self.active:
            raise ValidationError(f"{self.kind.value}: connection {conn_id} already active")
        if not expiry > now:
            raise ValidationError(f"connection {conn_id}: expiry {expiry} is not after admission time {now}")
        if self.full:
            raise RejectedNoCapacity(conn_id, f"{self.kind.value} full")
        self.active[conn_id] = expiry
        heapq.heappush(self._expiries, (expiry, conn_id))

    def release_until(self, now: float) -> int:
        released = 0
        heap = self._expiries
        while heap and heap[0][0] <= now:
            expiry, conn_id = heapq.heappop(heap)
            if self.active.get(conn_id) == expiry:
                del self.active[conn_id]
                released += 1
        return released

    def clear(self) -> dict[int, float]:
        dropped = self.active
        self.active = {}
        self._expiries = []
        return dropped


def utilization(state: SliceState) -> Fraction:
    """Percentage of capacity in use, as an exact fraction in [0, 100]."""
    if state.capacity <= 0:
        raise ConfigError(f"{state.kind.value}: capacity must be positive")
    return Fraction(state.count * 100, state.capacity)


def exceeds_threshold(active: int, capacity: int, threshold: Fraction | int) -> bool:
    """True when ``active / capacity`` is strictly above ``threshold`` percent."""
    threshold = Fraction(threshold)
    return active * 100 * threshold.denominator > threshold.numerator * capacity


@dataclass
class NetworkState:
    slices: dict[SliceKind, SliceState]
    threshold: Fraction = Fraction(DEFAULT_THRESHOLD)

    def __post_init__(self) -> None:
        self.threshold = Fraction(self.threshold)
        if set(self.slices) != set(SliceKind):
            missing = sorted(k.value for k in set(SliceKind) - set(self.slices))
            raise ConfigError(f"network needs exactly one state per slice kind; missing {missing}")
        for kind, state in self.slices.items():
            if state.kind is not kind:
                raise ConfigError(f"slice state for {kind.value} is labelled {state.kind.value}")
        if not 0 < self.threshold <= 100:
            raise ConfigError(f"overload threshold must lie in (0, 100], got {self.threshold}")

    @classmethod
    def build(
        cls,
        capacities: Mapping[SliceKind, int] | None = None,
        threshold: Fraction | int | float = DEFAULT_THRESHOLD,
    ) -> "NetworkState":
        caps = dict(DEFAULT_CAPACITIES)
        if capacities:
            caps.update(capacities)
        return cls({kind: SliceState(kind, int(caps[kind])) for kind in SliceKind}, Fraction(threshold))

    def counts(self) -> dict[SliceKind, int]:
        return {kind: state.count for kind, state in self.slices.items()}

    def health(self) -> dict[SliceKind, bool]:
        return {kind: state.healthy for kind, state in self.slices.items()}


@dataclass(frozen=True, slots=True)
class AdmissionDecision:
    """Outcome of one admission.

    ``target`` is the slice whose utilization was evaluated (the need's
    primary slice, or Master for unmatched requests) and ``target_active``
    its pre-admission connection count. ``assigned`` is None only for
    rejected requests.
    """

    request_id: int
    time: float
    need: ServiceNeed
    target: SliceKind
    target_active: int
    target_capacity: int
    assigned: SliceKind | None
    reason: Reason

    @property
    def pre_utilization(self) -> Fraction:
        return Fraction(self.target_active * 100, self.target_capacity)


_LOW_DELAY_MS = 50
_MMTC_MIN_DELAY_MS = 60
_MMTC_LONG_DELAY_MS = 300
_MAX_DELAY_MS = 300
_MACHINE_TYPE = frozenset({DeviceClass.SMART_CITY, DeviceClass.IOT, DeviceClass.INDUSTRY40})


def need_from_kpis(device_class: DeviceClass, loss: float, delay_ms: int) -> ServiceNeed:
    """Map KPIs (and the device class where KPIs alone are ambiguous) to a service need.

    Rules, first match wins:

    * loss <= 1e-6 and delay <= 50 ms: reliable low latency.
    * low throughput, high density when loss >= 1e-3 on a non-smartphone and
      one of: loss >= 1e-2 with delay in 60..300 ms; a machine-type device
      (smart city, IoT, Industry 4.0) with delay in 60..300 ms; delay at the
      300 ms budget; an Industry 4.0 device on a <= 50 ms budget.
    * delay within 50..300 ms: high throughput.
    * anything else is unmatched.
    """
    if loss <= 1e-6 * (1 + 1e-9) and delay_ms <= _LOW_DELAY_MS:
        return ServiceNeed.RELIABLE_LOW_LATENCY
    if loss >= 1e-3 * (1 - 1e-9) and device_class is not DeviceClass.SMARTPHONE:
        in_band = _MMTC_MIN_DELAY_MS <= delay_ms <= _MAX_DELAY_MS
        if in_band and (loss >= 1e-2 * (1 - 1e-9) or device_class in _MACHINE_TYPE):
            return ServiceNeed.LOW_THROUGHPUT_HIGH_DENSITY
        if delay_ms == _MMTC_LONG_DELAY_MS:
            return ServiceNeed.LOW_THROUGHPUT_HIGH_DENSITY
        if device_class is DeviceClass.INDUSTRY40 and delay_ms <= _LOW_DELAY_MS:
            return ServiceNeed.LOW_THROUGHPUT_HIGH_DENSITY
    if _LOW_DELAY_MS <= delay_ms <= _MAX_DELAY_MS:
        return ServiceNeed.HIGH_THROUGHPUT
    return ServiceNeed.UNMATCHED


def classify_need(request: RequestRecord) -> ServiceNeed:
    loss = getattr(request, "packet_loss_rate", None)
    delay = getattr(request, "packet_delay_budget_ms", None)
    if loss is None or delay is None:
        raise ValidationError(f"request {getattr(request, 'id', '?')}: packet loss rate and delay budget are required")
    if not math.isfinite(loss):
        raise ValidationError(f"request {request.id}: non-finite loss rate")
    return need_from_kpis(request.device_class, loss, delay)


def admit(net: NetworkState, request: RequestRecord, need: ServiceNeed, now: float) -> AdmissionDecision:
    """Place ``request`` on its primary slice or fall back to Master.

    Raises RejectedNoCapacity when the request is headed for Master and
    Master is full; the caller records it as lost.
    """
    if request.ttl_s <= 0:
        raise ValidationError(f"request {request.id}: ttl must be positive")
    expiry = now + request.ttl_s

    if need is ServiceNeed.UNMATCHED:
        target = SliceKind.MASTER
        reason = Reason.UNMATCHED_FALLBACK
    else:
        target = NEED_TO_SLICE[need]
        state = net.slices[target]
        if not state.healthy:
            reason = Reason.FAILURE_REDIRECT
        elif state.full or exceeds_threshold(state.count, state.capacity, net.threshold):
            reason = Reason.OVERFLOW_REDIRECT
        else:
            reason = Reason.PRIMARY_FIT

    evaluated = net.slices[target]
    snapshot = (evaluated.count, evaluated.capacity)
    if reason is Reason.PRIMARY_FIT:
        evaluated.add(request.id, now, expiry)
        assigned = target
    else:
        master = net.slices[SliceKind.MASTER]
        if master.full:
            raise RejectedNoCapacity(request.id, reason)
        master.add(request.id, now, expiry)
        assigned = SliceKind.MASTER
    return AdmissionDecision(request.id, now, need, target, snapshot[0], snapshot[1], assigned, reason)


def release_expired(net: NetworkState, now: float) -> int:
    """Drop every connection whose expiry is <= ``now``; returns how many went."""
    return sum(state.release_until(now) for state in net.slices.values())


def set_health(
    net: NetworkState,
    kind: SliceKind,
    healthy: bool,
    now: float,
    rehome: bool = False,
) -> int:
    """Flip a slice's health flag and return the number of dropped connections.

    Going down empties the slice. With ``rehome`` the connections move to
    Master while it has room (keeping their expiry) and only the remainder
    counts as dropped.
    """
    if kind is SliceKind.MASTER:
        raise InvalidTargetError("master slice health cannot be changed")
    state = net.slices[kind]
    if state.healthy == healthy:
        return 0
    state.healthy = healthy
    if healthy:
        return 0
    lost = state.clear()
    if not rehome:
        return len(lost)
    master = net.slices[SliceKind.MASTER]
    dropped = 0
    for conn_id, expiry in sorted(lost.items(), key=lambda item: (item[1], item[0])):
        if master.full or expiry <= now:
            dropped += 1
        else:
            master.add(conn_id, now, expiry)
    return dropped
