"""Discrete-event simulation of slice admission over a generated request stream.

Events sit in one priority queue keyed by (time, rank, sequence). At equal
timestamps expiries run first, then health transitions, then arrivals,
then samples.
"""

from __future__ import annotations

import csv
import heapq
import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .domain import PREDICTED_KINDS, RequestRecord, SliceKind
from .errors import CompatibilityError, ConfigError, RejectedNoCapacity
from .learned.forecaster import ForecasterModel, forecast_load
from .learned.oracle import oracle_label
from .learned.predictor import SlicePredictorModel, predict_batch
from .slicing import (
    DEFAULT_CAPACITIES,
    DEFAULT_THRESHOLD,
    NEED_TO_SLICE,
    SLICE_TO_NEED,
    AdmissionDecision,
    NetworkState,
    Reason,
    ServiceNeed,
    admit,
    classify_need,
    release_expired,
    set_health,
)
from .traffic import DEFAULT_BOUNDS, FEATURE_DIM, FeatureBounds, TrafficMixConfig, encode_batch, generate_stream

log = logging.getLogger(__name__)

HOUR = 3600.0
ORACLE = "oracle"


class EventRank(IntEnum):
    EXPIRY = 0
    HEALTH = 1
    ARRIVAL = 2
    SAMPLE = 3


@dataclass(frozen=True)
class FailureEvent:
    slice: SliceKind
    start: float
    end: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "slice", SliceKind(self.slice))
        if self.slice is SliceKind.MASTER:
            raise ConfigError("master slice failures are not modelled")
        if not self.start < self.end:
            raise ConfigError(f"failure on {self.slice.value}: start {self.start} must precede end {self.end}")
        if self.start < 0:
            raise ConfigError(f"failure on {self.slice.value}: negative start {self.start}")

    def covers(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class Surge:
    """Extra arrivals of one slice class: the class's base rate times ``multiplier`` inside the window."""

    slice: SliceKind
    start: float
    end: float
    multiplier: float = 5.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "slice", SliceKind(self.slice))
        if self.slice is SliceKind.MASTER:
            raise ConfigError("surges apply to request classes, not Master")
        if not 0 <= self.start < self.end:
            raise ConfigError(f"surge window [{self.start}, {self.end}) is empty or negative")
        if self.multiplier < 1:
            raise ConfigError(f"surge multiplier must be >= 1, got {self.multiplier}")


@dataclass(frozen=True)
class Scenario:
    traffic: TrafficMixConfig = field(default_factory=TrafficMixConfig)
    name: str = "custom"
    capacities: Mapping[SliceKind, int] = field(default_factory=lambda: dict(DEFAULT_CAPACITIES))
    overload_threshold: Fraction = Fraction(DEFAULT_THRESHOLD)
    failures: tuple[FailureEvent, ...] = ()
    surges: tuple[Surge, ...] = ()
    sample_interval_s: float = 600.0
    predictor: str = ORACLE
    rehome_on_failure: bool = False
    bounds: FeatureBounds = DEFAULT_BOUNDS

    def __post_init__(self) -> None:
        caps = dict(DEFAULT_CAPACITIES)
        caps.update({SliceKind(k): v for k, v in self.capacities.items()})
        for kind, cap in caps.items():
            if isinstance(cap, bool) or int(cap) != cap or cap <= 0:
                raise ConfigError(f"capacities.{kind.value}: must be a positive integer, got {cap!r}")
        object.__setattr__(self, "capacities", {k: int(v) for k, v in caps.items()})
        threshold = Fraction(str(self.overload_threshold)) if isinstance(self.overload_threshold, float) else Fraction(self.overload_threshold)
        if not 0 < threshold <= 100:
            raise ConfigError(f"overload_threshold must lie in (0, 100], got {self.overload_threshold}")
        object.__setattr__(self, "overload_threshold", threshold)
        object.__setattr__(self, "failures", tuple(self.failures))
        object.__setattr__(self, "surges", tuple(self.surges))
        if not self.sample_interval_s > 0:
            raise ConfigError(f"sample_interval_s must be positive, got {self.sample_interval_s}")
        by_slice: dict[SliceKind, list[FailureEvent]] = {}
        for event in self.failures:
            by_slice.setdefault(event.slice, []).append(event)
        for kind, events in by_slice.items():
            events.sort(key=lambda e: e.start)
            for a, b in zip(events, events[1:]):
                if b.start < a.end:
                    raise ConfigError(f"failures on {kind.value} overlap: [{a.start}, {a.end}) and [{b.start}, {b.end})")

    @property
    def duration_s(self) -> float:
        return self.traffic.duration_s

    @property
    def sample_times(self) -> list[float]:
        # the final partial interval, if any, gets no sample
        n = int(self.duration_s // self.sample_interval_s)
        return [k * self.sample_interval_s for k in range(n)]

    def scaled(self, factor: float) -> "Scenario":
        """Same scenario with ``factor`` times the request volume (surges scale with it)."""
        if not factor > 0:
            raise ConfigError(f"scale factor must be positive, got {factor}")
        total = int(round(self.traffic.total_requests * factor))
        return replace(self, traffic=replace(self.traffic, total_requests=total))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, traffic=replace(self.traffic, seed=int(seed)))


@dataclass(frozen=True)
class SampleRow:
    time: float
    active: dict[SliceKind, int]
    utilization: dict[SliceKind, float]
    healthy: dict[SliceKind, bool]
    counters: dict[str, int]

    @property
    def total_active(self) -> int:
        return sum(self.active.values())


COUNTER_NAMES: tuple[str, ...] = (
    "arrivals",
    "admitted",
    "overflow_redirected",
    "failure_redirected",
    "unmatched_fallback",
    "rejected",
    "dropped",
    "rehomed",
    "released",
)

_REASON_COUNTER = {
    Reason.PRIMARY_FIT: "admitted",
    Reason.OVERFLOW_REDIRECT: "overflow_redirected",
    Reason.FAILURE_REDIRECT: "failure_redirected",
    Reason.UNMATCHED_FALLBACK: "unmatched_fallback",
    Reason.REJECTED_NO_CAPACITY: "rejected",
}


@dataclass(frozen=True)
class LoadWarning:
    time: float
    slice: SliceKind
    predicted_utilization: float


@dataclass
class SimulationResult:
    scenario: Scenario
    samples: list[SampleRow]
    decisions: list[AdmissionDecision]
    totals: dict[str, int]
    requests: list[RequestRecord] = field(repr=False)
    # (predicted, oracle) per arrival when a trained model drove admission
    pairs: list[tuple[SliceKind, SliceKind]] = field(default_factory=list, repr=False)
    warnings: list[LoadWarning] = field(default_factory=list)

    @property
    def arrivals(self) -> int:
        return self.totals["arrivals"]


def fold_decisions(decisions: Iterable[AdmissionDecision]) -> dict[str, int]:
    """Per-reason decision counts, keyed like the result counters."""
    counts = {name: 0 for name in _REASON_COUNTER.values()}
    n = 0
    for d in decisions:
        counts[_REASON_COUNTER[d.reason]] += 1
        n += 1
    counts["arrivals"] = n
    return counts


def build_requests(scenario: Scenario) -> list[RequestRecord]:
    """Base stream plus any surge streams, ordered by arrival time."""
    base = generate_stream(scenario.traffic)
    if not scenario.surges:
        return base
    streams = [base]
    next_id = len(base)
    traffic = scenario.traffic
    for j, surge in enumerate(scenario.surges):
        window = min(surge.end, scenario.duration_s) - surge.start
        if window <= 0:
            continue
        share = traffic.fractions[surge.slice]
        extra = int(round((surge.multiplier - 1) * traffic.total_requests * float(share) * window / scenario.duration_s))
        if extra == 0:
            continue
        fractions = {f"fraction_{k.name.lower()}": Fraction(int(k is surge.slice)) for k in PREDICTED_KINDS}
        config = TrafficMixConfig(
            **fractions,
            total_requests=extra,
            duration_hours=window / HOUR,
            arrival_process=traffic.arrival_process,
            seed=(int(traffic.seed) + 1 + j) % 2**64,
        )
        streams.append(generate_stream(config, first_id=next_id, start_s=surge.start))
        next_id += extra
    # stable: equal times keep base-stream order first
    merged = [r for stream in streams for r in stream]
    merged.sort(key=lambda r: r.arrival_time)
    return merged


def resolve_model(scenario: Scenario, model: SlicePredictorModel | None) -> SlicePredictorModel | None:
    if model is None and scenario.predictor != ORACLE:
        try:
            model = SlicePredictorModel.load(scenario.predictor)
        except OSError as exc:
            raise ConfigError(f"cannot read predictor checkpoint {scenario.predictor}: {exc}") from exc
    if model is not None and model.input_dim != FEATURE_DIM:
        raise CompatibilityError(f"checkpoint expects {model.input_dim} features; scenarios encode {FEATURE_DIM}")
    return model


def run(
    scenario: Scenario,
    model: SlicePredictorModel | None = None,
    forecasters: Mapping[SliceKind, ForecasterModel] | None = None,
    requests: Sequence[RequestRecord] | None = None,
) -> SimulationResult:
    """Execute ``scenario`` and return its samples, decision log and totals.

    ``model`` (or a checkpoint path in ``scenario.predictor``) switches slice
    selection from the rule oracle to the trained predictor. ``forecasters``
    add advisory overload warnings at sample times; they never change an
    admission. ``requests`` replaces the generated stream.
    """
    model = resolve_model(scenario, model)
    if requests is None:
        requests = build_requests(scenario)
    duration = scenario.duration_s
    for r in requests:
        if r.arrival_time >= duration:
            raise ConfigError(f"request {r.id} arrives at {r.arrival_time}, after the {duration}s horizon")

    predicted: list[SliceKind] | None = None
    if model is not None and requests:
        idx = predict_batch(model, encode_batch(requests, model.bounds))
        predicted = [PREDICTED_KINDS[i] for i in idx.tolist()]

    net = NetworkState.build(scenario.capacities, scenario.overload_threshold)
    counters = {name: 0 for name in COUNTER_NAMES}
    decisions: list[AdmissionDecision] = []
    samples: list[SampleRow] = []
    pairs: list[tuple[SliceKind, SliceKind]] = []
    warnings: list[LoadWarning] = []
    history: dict[SliceKind, list[float]] = {k: [] for k in SliceKind}

    heap: list[tuple] = []
    seq = 0

    def push(t: float, rank: EventRank, payload: object) -> None:
        nonlocal seq
        heapq.heappush(heap, (t, int(rank), seq, payload))
        seq += 1

    for event in scenario.failures:
        push(event.start, EventRank.HEALTH, (event.slice, False))
        push(event.end, EventRank.HEALTH, (event.slice, True))
    for i in range(len(requests)):
        push(requests[i].arrival_time, EventRank.ARRIVAL, i)
    for t in scenario.sample_times:
        push(t, EventRank.SAMPLE, None)

    while heap:
        t, rank, _, payload = heapq.heappop(heap)
        if t >= duration:
            break
        if rank == EventRank.EXPIRY:
            counters["released"] += release_expired(net, t)
        elif rank == EventRank.HEALTH:
            kind, healthy = payload
            before = net.slices[kind].count
            dropped = set_health(net, kind, healthy, t, rehome=scenario.rehome_on_failure)
            counters["dropped"] += dropped
            if not healthy and scenario.rehome_on_failure:
                counters["rehomed"] += before - dropped
        elif rank == EventRank.ARRIVAL:
            request = requests[payload]
            counters["arrivals"] += 1
            if predicted is None:
                need = classify_need(request)
            else:
                choice = predicted[payload]
                need = SLICE_TO_NEED[choice]
                pairs.append((choice, oracle_label(request)))
            try:
                decision = admit(net, request, need, t)
            except RejectedNoCapacity:
                target = SliceKind.MASTER if need is ServiceNeed.UNMATCHED else NEED_TO_SLICE[need]
                st = net.slices[target]
                decision = AdmissionDecision(
                    request.id, t, need, target, st.count, st.capacity, None, Reason.REJECTED_NO_CAPACITY
                )
            decisions.append(decision)
            counters[_REASON_COUNTER[decision.reason]] += 1
            expiry = t + request.ttl_s
            if decision.assigned is not None and expiry < duration:
                push(expiry, EventRank.EXPIRY, None)
        else:
            samples.append(_sample(t, net, counters))
            if forecasters:
                _advise(t, net, samples[-1], forecasters, history, warnings)

    totals = dict(counters)
    totals["still_active"] = sum(net.counts().values())
    return SimulationResult(scenario, samples, decisions, totals, list(requests), pairs, warnings)


def _sample(t: float, net: NetworkState, counters: Mapping[str, int]) -> SampleRow:
    active = net.counts()
    util = {k: 100.0 * s.count / s.capacity for k, s in net.slices.items()}
    return SampleRow(t, active, util, net.health(), dict(counters))


def _advise(
    t: float,
    net: NetworkState,
    row: SampleRow,
    forecasters: Mapping[SliceKind, ForecasterModel],
    history: dict[SliceKind, list[float]],
    warnings: list[LoadWarning],
) -> None:
    windows = {}
    for kind, model in forecasters.items():
        series = history[kind]
        series.append(row.utilization[kind])
        if len(series) >= model.window:
            windows[kind] = series[-model.window :]
    ready = {k: m for k, m in forecasters.items() if k in windows}
    for kind, value in forecast_load(ready, windows).items():
        if value > float(net.threshold):
            warnings.append(LoadWarning(t, kind, value))


# scenario presets


def paper_scenarios() -> dict[str, Scenario]:
    base = TrafficMixConfig(total_requests=500_000, duration_hours=20.0)
    mmtc_windows = ((2.5, 4.75), (13.0, 17.0))
    return {
        "baseline-20h": Scenario(base, name="baseline-20h"),
        "mmtc-outage": Scenario(
            base,
            name="mmtc-outage",
            failures=tuple(FailureEvent(SliceKind.MMTC, a * HOUR, b * HOUR) for a, b in mmtc_windows),
        ),
        "urllc-outage": Scenario(
            base,
            name="urllc-outage",
            failures=tuple(FailureEvent(SliceKind.URLLC, a * HOUR, b * HOUR) for a, b in mmtc_windows),
        ),
        "mmtc-overload": Scenario(
            base,
            name="mmtc-overload",
            surges=(Surge(SliceKind.MMTC, 8.0 * HOUR, 10.0 * HOUR, 5.0),),
        ),
    }


# scenario files (YAML)

_SCENARIO_KEYS = {
    "name",
    "traffic",
    "capacities",
    "overload_threshold",
    "failures",
    "surges",
    "sample_interval_s",
    "predictor",
    "rehome_on_failure",
    "feature_bounds",
}
_TRAFFIC_KEYS = {
    "fraction_embb",
    "fraction_mmtc",
    "fraction_urllc",
    "total_requests",
    "duration_hours",
    "arrival_process",
    "seed",
}
_WINDOW_KEYS = {"slice", "start_hours", "end_hours"}


def _check_keys(section: str, doc: object, allowed: set[str]) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(doc).__name__}")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown field(s) {', '.join(map(str, unknown))}")
    return doc


def _slice(section: str, token: object) -> SliceKind:
    try:
        return SliceKind.parse(str(token))
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def scenario_from_dict(doc: dict) -> Scenario:
    doc = _check_keys("scenario", doc, _SCENARIO_KEYS)
    traffic_doc = _check_keys("traffic", doc.get("traffic", {}), _TRAFFIC_KEYS)
    try:
        traffic = TrafficMixConfig(**traffic_doc)
    except ConfigError as exc:
        raise ConfigError(f"traffic: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"traffic: {exc}") from exc

    kwargs: dict = {"traffic": traffic, "name": str(doc.get("name", "custom"))}
    if "capacities" in doc:
        caps = _check_keys("capacities", doc["capacities"], {k.value for k in SliceKind} | {k.name.lower() for k in SliceKind})
        kwargs["capacities"] = {_slice("capacities", k): v for k, v in caps.items()}
    if "overload_threshold" in doc:
        kwargs["overload_threshold"] = doc["overload_threshold"]
    for key, cls in (("failures", FailureEvent), ("surges", Surge)):
        items = []
        for i, entry in enumerate(doc.get(key) or []):
            section = f"{key}[{i}]"
            allowed = _WINDOW_KEYS | ({"multiplier"} if cls is Surge else set())
            entry = _check_keys(section, entry, allowed)
            missing = sorted(_WINDOW_KEYS - set(entry))
            if missing:
                raise ConfigError(f"{section}: missing field(s) {', '.join(missing)}")
            extra = {"multiplier": float(entry["multiplier"])} if "multiplier" in entry else {}
            try:
                items.append(
                    cls(_slice(section, entry["slice"]), float(entry["start_hours"]) * HOUR, float(entry["end_hours"]) * HOUR, **extra)
                )
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}: {exc}") from exc
        kwargs[key] = tuple(items)
    if "sample_interval_s" in doc:
        kwargs["sample_interval_s"] = float(doc["sample_interval_s"])
    if "predictor" in doc:
        kwargs["predictor"] = str(doc["predictor"])
    if "rehome_on_failure" in doc:
        if not isinstance(doc["rehome_on_failure"], bool):
            raise ConfigError("rehome_on_failure: expected true or false")
        kwargs["rehome_on_failure"] = doc["rehome_on_failure"]
    if "feature_bounds" in doc:
        fb = _check_keys("feature_bounds", doc["feature_bounds"], {"delay_ms", "ttl_s", "hour", "ue_category"})
        try:
            kwargs["bounds"] = FeatureBounds(**{k: tuple(v) for k, v in fb.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"feature_bounds: {exc}") from exc
    try:
        return Scenario(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def scenario_to_dict(scenario: Scenario) -> dict:
    t = scenario.traffic

    def num(x: Fraction) -> float | int:
        return int(x) if x.denominator == 1 else float(x)

    def window(e) -> dict:
        return {"slice": e.slice.value, "start_hours": e.start / HOUR, "end_hours": e.end / HOUR}

    return {
        "name": scenario.name,
        "traffic": {
            "fraction_embb": num(t.fraction_embb),
            "fraction_mmtc": num(t.fraction_mmtc),
            "fraction_urllc": num(t.fraction_urllc),
            "total_requests": t.total_requests,
            "duration_hours": t.duration_hours,
            "arrival_process": t.arrival_process.value,
            "seed": int(t.seed),
        },
        "capacities": {k.value: v for k, v in scenario.capacities.items()},
        "overload_threshold": num(scenario.overload_threshold),
        "failures": [window(e) for e in scenario.failures],
        "surges": [{**window(s), "multiplier": s.multiplier} for s in scenario.surges],
        "sample_interval_s": scenario.sample_interval_s,
        "predictor": scenario.predictor,
        "rehome_on_failure": scenario.rehome_on_failure,
        "feature_bounds": scenario.bounds.as_dict(),
    }


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    if doc is None:
        doc = {}
    return scenario_from_dict(doc)


def resolve_scenario(name_or_path: str) -> Scenario:
    presets = paper_scenarios()
    if name_or_path in presets:
        return presets[name_or_path]
    path = Path(name_or_path)
    if path.suffix.lower() in (".yaml", ".yml", ".json") or path.exists():
        return load_scenario(path)
    raise ConfigError(f"unknown scenario {name_or_path!r}; presets: {', '.join(sorted(presets))}")


# result files

_KINDS = tuple(SliceKind)


def sample_header() -> list[str]:
    header = ["time_s"]
    header += [f"active_{k.value}" for k in _KINDS]
    header += [f"utilization_{k.value}" for k in _KINDS]
    header += [f"healthy_{k.value}" for k in _KINDS]
    header += list(COUNTER_NAMES)
    return header


def write_samples(samples: Sequence[SampleRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sample_header())
        for row in samples:
            w.writerow(
                [repr(row.time)]
                + [row.active[k] for k in _KINDS]
                + [repr(row.utilization[k]) for k in _KINDS]
                + [int(row.healthy[k]) for k in _KINDS]
                + [row.counters[name] for name in COUNTER_NAMES]
            )


def read_samples(path: str | Path) -> list[SampleRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in sample_header() if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"{path}: not a samples file (missing {missing[0]!r})")
        for rec in reader:
            rows.append(
                SampleRow(
                    float(rec["time_s"]),
                    {k: int(rec[f"active_{k.value}"]) for k in _KINDS},
                    {k: float(rec[f"utilization_{k.value}"]) for k in _KINDS},
                    {k: rec[f"healthy_{k.value}"] == "1" for k in _KINDS},
                    {name: int(rec[name]) for name in COUNTER_NAMES},
                )
            )
    return rows


DECISION_HEADER = (
    "request_id",
    "time_s",
    "need",
    "target",
    "target_active",
    "target_capacity",
    "assigned",
    "reason",
)


def write_decisions(decisions: Sequence[AdmissionDecision], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DECISION_HEADER)
        for d in decisions:
            w.writerow(
                [
                    d.request_id,
                    repr(d.time),
                    d.need.value,
                    d.target.value,
                    d.target_active,
                    d.target_capacity,
                    d.assigned.value if d.assigned is not None else "",
                    d.reason.value,
                ]
            )


def check_conservation(result: SimulationResult) -> None:
    """Assert the counter identities every run must satisfy."""
    t = result.totals
    redirects = t["overflow_redirected"] + t["failure_redirected"]
    assert t["admitted"] + redirects + t["unmatched_fallback"] + t["rejected"] == t["arrivals"], t
    assert t["dropped"] <= t["admitted"] + redirects, t
    folded = fold_decisions(result.decisions)
    for name, value in folded.items():
        assert t[name] == value, (name, t[name], value)
    for a, b in zip(result.samples, result.samples[1:]):
        for name in COUNTER_NAMES:
            assert a.counters[name] <= b.counters[name], name


def active_from_log(result: SimulationResult, t: float) -> dict[SliceKind, int]:
    """Active connections per slice at sample time ``t``, rebuilt from the decision log.

    Assumes rehoming is off: a failure at time f drops every connection on
    the slice admitted strictly before f.
    """
    ttl = {r.id: r.ttl_s for r in result.requests}
    failures: dict[SliceKind, list[float]] = {}
    for e in result.scenario.failures:
        failures.setdefault(e.slice, []).append(e.start)
    counts = {k: 0 for k in SliceKind}
    for d in result.decisions:
        if d.time > t:
            break
        if d.assigned is None or d.time + ttl[d.request_id] <= t:
            continue
        if any(d.time < f <= t for f in failures.get(d.assigned, ())):
            continue
        counts[d.assigned] += 1
    return counts
