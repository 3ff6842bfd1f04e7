"""The nine acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line; conftest prints them in the
terminal summary.
"""

from __future__ import annotations

import itertools
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from sliceforge import sim
from sliceforge.cli import main as cli_main
from sliceforge.domain import LOSS_LEVELS, PREDICTED_KINDS, DeviceClass, SliceKind
from sliceforge.errors import RejectedNoCapacity
from sliceforge.learned.forecaster import ForecasterModel
from sliceforge.learned.gradcheck import grad_check
from sliceforge.learned.predictor import ConvSpec, SlicePredictorModel, TrainConfig, labels_for, train_predictor
from sliceforge.metrics import confusion, metrics
from sliceforge.slicing import NetworkState, Reason, admit, classify_need
from sliceforge.traffic import TrafficMixConfig, class_counts, generate_stream

from .conftest import ACCEPTANCE_LINES, make_request


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# Every simulation run by this module, for the conservation criterion.
_RUNS: dict[str, sim.SimulationResult] = {}


def _run(name: str, scale: float) -> sim.SimulationResult:
    key = f"{name}@{scale}"
    if key not in _RUNS:
        _RUNS[key] = sim.run(sim.paper_scenarios()[name].scaled(scale))
    return _RUNS[key]


# 1. admission oracle equivalence ------------------------------------------

DELAYS = (10, 15, 50, 60, 75, 100, 110, 130, 150, 300, 400)
UTILIZATIONS = (0, 45, 46, 47, 50)


def reference_need(device: DeviceClass, loss: float, delay: int) -> str | None:
    """Slice a request needs, written out case by case from the KPI table.

    Returns None for requests no guard matches.
    """
    machine = device in (DeviceClass.SMART_CITY, DeviceClass.IOT, DeviceClass.INDUSTRY40)
    if loss == 1e-6 and delay in (10, 15, 50):
        return "URLLC"
    lossy = loss in (1e-3, 1e-2)
    if lossy and device != DeviceClass.SMARTPHONE:
        if delay in (60, 75, 100, 110, 130, 150, 300) and (loss == 1e-2 or machine):
            return "mMTC"
        if delay == 300:
            return "mMTC"
        if device == DeviceClass.INDUSTRY40 and delay in (10, 15, 50):
            return "mMTC"
    if delay in (50, 60, 75, 100, 110, 130, 150, 300):
        return "eMBB"
    return None


def reference_admit(need: str | None, counts: dict[str, int], sizes: dict[str, int], healthy: bool) -> tuple[str, str]:
    """(assigned slice or 'lost', reason) following the algorithm's if/else chain.

    s = used / size * 100; a functioning slice takes the request while
    s <= 92, otherwise the master file does. A full master loses it.
    """

    def to_master(reason: str) -> tuple[str, str]:
        if counts["Master"] >= sizes["Master"]:
            return "lost", "rejected_no_capacity"
        return "Master", reason

    if need is None:
        return to_master("unmatched_fallback")
    if not healthy:
        return to_master("failure_redirect")
    s = Fraction(counts[need] * 100, sizes[need])
    if s <= 92 and counts[need] < sizes[need]:
        return need, "primary_fit"
    return to_master("overflow_redirect")


def test_criterion_1_admission_oracle_equivalence():
    start = time.perf_counter()
    mismatches = 0
    cases = 0
    for device, loss, delay, util, healthy, master_full in itertools.product(
        DeviceClass, LOSS_LEVELS, DELAYS, UTILIZATIONS, (True, False), (False, True)
    ):
        caps = {k: 50 for k in SliceKind}
        net = NetworkState.build(caps)
        for kind in PREDICTED_KINDS:
            for j in range(util):
                net.slices[kind].add(1000 * (PREDICTED_KINDS.index(kind) + 1) + j, 0.0, 1e9)
            net.slices[kind].healthy = healthy
        for j in range(50 if master_full else 0):
            net.slices[SliceKind.MASTER].add(90_000 + j, 0.0, 1e9)
        req = make_request(id=1, device_class=device, loss=loss, delay=delay, ttl=10)
        try:
            d = admit(net, req, classify_need(req), 1.0)
            got = (d.assigned.value, d.reason.value)
        except RejectedNoCapacity:
            got = ("lost", "rejected_no_capacity")
        counts = {k.value: (util if k in PREDICTED_KINDS else (50 if master_full else 0)) for k in SliceKind}
        want = reference_admit(reference_need(device, loss, delay), counts, {k.value: 50 for k in SliceKind}, healthy)
        cases += 1
        mismatches += got != want
    elapsed = time.perf_counter() - start
    record(1, "admit() equals brute-force reference", mismatches == 0 and elapsed < 10, f"{cases} cases, {mismatches} mismatches, {elapsed:.2f}s")


# 2. failure-window exclusion ----------------------------------------------


def test_criterion_2_failure_window_exclusion():
    start = time.perf_counter()
    result = _run("mmtc-outage", 0.1)
    elapsed = time.perf_counter() - start
    windows = [(e.start, e.end) for e in result.scenario.failures]
    assert result.arrivals == 50_000
    inside = [d for d in result.decisions if any(a <= d.time < b for a, b in windows)]
    on_mmtc = [d for d in inside if d.assigned is SliceKind.MMTC]
    mmtc_class = [d for d in inside if d.target is SliceKind.MMTC]
    bad = [d for d in mmtc_class if not (d.reason is Reason.FAILURE_REDIRECT and d.assigned is SliceKind.MASTER)]
    idle = all(s.active[SliceKind.MMTC] == 0 for s in result.samples if any(a <= s.time < b for a, b in windows))
    ok = not on_mmtc and not bad and len(mmtc_class) > 0 and idle and elapsed < 30
    record(
        2,
        "no mMTC assignment inside outage windows",
        ok,
        f"{len(inside)} decisions in windows, {len(mmtc_class)} mMTC-class all FailureRedirect: {not bad}, {len(on_mmtc)} on mMTC, {elapsed:.2f}s",
    )


# 3. overload redirect -----------------------------------------------------


def test_criterion_3_overload_redirect():
    result = _run("mmtc-overload", 1.0)
    cap = result.scenario.capacities[SliceKind.MMTC]
    on_mmtc = [d for d in result.decisions if d.target is SliceKind.MMTC]
    over = [d for d in on_mmtc if d.pre_utilization > 92]
    first_ok = bool(over) and over[0].reason is Reason.OVERFLOW_REDIRECT
    # once Master itself is full an overflow becomes a rejection; never a PrimaryFit
    redirected = sum(d.reason is Reason.OVERFLOW_REDIRECT for d in over)
    rejected = sum(d.reason is Reason.REJECTED_NO_CAPACITY for d in over)
    all_ok = redirected + rejected == len(over)
    primary_max = max(d.target_active for d in on_mmtc if d.reason is Reason.PRIMARY_FIT)
    ceiling = Fraction(92) + Fraction(100, cap)
    peak = max(Fraction(s.active[SliceKind.MMTC] * 100, cap) for s in result.samples)
    ok = first_ok and all_ok and peak <= ceiling and Fraction(primary_max * 100, cap) <= 92
    record(
        3,
        "overflow redirect once mMTC passes 92%",
        ok,
        f"first over-threshold decision OverflowRedirect: {first_ok}; of {len(over)}, {redirected} redirected "
        f"and {rejected} rejected with Master full; "
        f"largest pre-count for a PrimaryFit {primary_max}/{cap}; sample peak {float(peak):.2f}% <= {float(ceiling):.2f}%",
    )


# 4. traffic mix -----------------------------------------------------------


def test_criterion_4_traffic_mix():
    start = time.perf_counter()
    records = generate_stream(TrafficMixConfig(total_requests=500_000, seed=0))
    elapsed = time.perf_counter() - start
    counts = class_counts(records)
    target = {SliceKind.EMBB: 0.45, SliceKind.MMTC: 0.20, SliceKind.URLLC: 0.35}
    gaps = {k: abs(counts[k] / len(records) - target[k]) for k in target}
    ok = len(records) == 500_000 and max(gaps.values()) <= 0.01 and elapsed < 10
    shares = ", ".join(f"{k.value} {counts[k] / len(records):.4f}" for k in target)
    record(4, "500k mix within 1% of 45/20/35", ok, f"{shares}; {elapsed:.2f}s")


# 5. gradient correctness --------------------------------------------------


def test_criterion_5_gradient_checks():
    start = time.perf_counter()
    pred_worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        dim = int(rng.integers(6, 12))
        conv = ConvSpec(2, 3) if trial % 2 else None
        model = SlicePredictorModel(dim, tuple(int(w) for w in rng.integers(3, 7, size=5)), conv, seed=trial)
        for j in range(1, len(model.params), 2):
            model.params[j] = rng.normal(0.0, 0.5, model.params[j].shape)
        X = rng.normal(size=(8, dim))
        y = rng.integers(0, 3, 8)
        pred_worst = max(pred_worst, grad_check(model, (X, y)))
    fc_worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        model = ForecasterModel(int(rng.integers(2, 6)), 5, seed=trial)
        for j in range(len(model.params)):
            model.params[j] = model.params[j] + rng.normal(0.0, 0.3, model.params[j].shape)
        X = rng.uniform(0.0, 1.0, (6, 5))
        y = rng.uniform(0.0, 1.0, 6)
        fc_worst = max(fc_worst, grad_check(model, (X, y)))
    elapsed = time.perf_counter() - start
    ok = pred_worst < 1e-4 and fc_worst < 1e-4 and elapsed < 60
    record(5, "analytic gradients match finite differences", ok, f"predictor {pred_worst:.2e}, forecaster {fc_worst:.2e}, {elapsed:.1f}s")


# 6. classifier accuracy ---------------------------------------------------


@pytest.mark.slow
def test_criterion_6_classifier_accuracy():
    start = time.perf_counter()
    records = generate_stream(TrafficMixConfig(total_requests=10_000, seed=100))
    clean = train_predictor(records, TrainConfig(seed=0))
    y = labels_for(records)
    rng = np.random.default_rng(0)
    flip = rng.random(len(y)) < 0.05
    noisy = y.copy()
    noisy[flip] = (y[flip] + rng.integers(1, 3, int(flip.sum()))) % 3
    dirty = train_predictor(records, TrainConfig(seed=0), labels=noisy)
    elapsed = time.perf_counter() - start
    a, b = clean.test_accuracy(), dirty.test_accuracy()
    ok = a >= 0.99 and b >= 0.93 and elapsed < 300
    record(6, "held-out accuracy on 10k synthetic records", ok, f"clean {a:.4f} >= 0.99, 5% noise {b:.4f} >= 0.93, {elapsed:.1f}s")


# 7. metrics oracle --------------------------------------------------------

FIXTURE = [[8, 1, 1], [0, 9, 1], [1, 0, 9]]
# worked by hand: row sums 10/10/10, column sums 9/10/11
FIX_RECALL = (Fraction(8, 10), Fraction(9, 10), Fraction(9, 10))
FIX_PRECISION = (Fraction(8, 9), Fraction(9, 10), Fraction(9, 11))
FIX_F = (Fraction(16, 19), Fraction(9, 10), Fraction(6, 7))
FIX_ACCURACY = Fraction(26, 30)


def brute_force(pairs: list[tuple[SliceKind, SliceKind]]) -> dict[str, float]:
    """Percent metrics straight from the pair list, no matrix."""
    per = []
    for k in PREDICTED_KINDS:
        tp = sum(1 for t, p in pairs if t is k and p is k)
        present = sum(1 for t, _ in pairs if t is k)
        predicted = sum(1 for _, p in pairs if p is k)
        r = tp / present if present else 0.0
        p = tp / predicted if predicted else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        per.append((r, p, f))
    return {
        "accuracy": 100 * sum(1 for t, p in pairs if t is p) / len(pairs),
        "recall": 100 * sum(x[0] for x in per) / 3,
        "precision": 100 * sum(x[1] for x in per) / 3,
        "f_score": 100 * sum(x[2] for x in per) / 3,
    }


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1e-300) or a == b


def test_criterion_7_metrics_oracle():
    pairs = [(PREDICTED_KINDS[i], PREDICTED_KINDS[j]) for i, row in enumerate(FIXTURE) for j, n in enumerate(row) for _ in range(n)]
    rep = metrics(confusion(pairs))
    frozen = {
        "accuracy": float(100 * FIX_ACCURACY),
        "recall": float(100 * sum(FIX_RECALL) / 3),
        "precision": float(100 * sum(FIX_PRECISION) / 3),
        "f_score": float(100 * sum(FIX_F) / 3),
    }
    fixture_ok = all(_close(getattr(rep, k), v) for k, v in frozen.items())
    for i, k in enumerate(PREDICTED_KINDS):
        s = rep.per_class[k]
        fixture_ok &= _close(s.recall, float(100 * FIX_RECALL[i]))
        fixture_ok &= _close(s.precision, float(100 * FIX_PRECISION[i]))
        fixture_ok &= _close(s.f_score, float(100 * FIX_F[i]))

    rng = random.Random(7)
    random_ok = 0
    for _ in range(1000):
        n = rng.randint(1, 60)
        pl = [(rng.choice(PREDICTED_KINDS), rng.choice(PREDICTED_KINDS)) for _ in range(n)]
        got = metrics(confusion(pl))
        want = brute_force(pl)
        random_ok += all(_close(getattr(got, k), v) for k, v in want.items())
    ok = fixture_ok and random_ok == 1000
    record(7, "metrics match hand fixture and brute force", ok, f"fixture {'exact' if fixture_ok else 'off'}, {random_ok}/1000 random lists agree")


# 8. determinism -----------------------------------------------------------


def test_criterion_8_determinism(tmp_path, capsys):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = cli_main(["simulate", "--scenario", "baseline-20h", "--seed", "7", "--scale", "0.1", "--out-dir", str(out)])
        assert code == 0
        outs.append(out)
    capsys.readouterr()
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in ("decisions.csv", "samples.csv", "totals.json"))
    rows = len((outs[0] / "decisions.csv").read_text().splitlines()) - 1
    record(8, "simulate baseline-20h --seed 7 is byte-reproducible", same and rows == 50_000, f"{rows} decisions, identical: {same}")


# 9. conservation ----------------------------------------------------------


def test_criterion_9_conservation():
    for name in ("baseline-20h", "mmtc-outage", "urllc-outage"):
        _run(name, 0.1)
    _run("mmtc-overload", 1.0)
    rng = random.Random(9)
    failures = []
    for key, result in sorted(_RUNS.items()):
        try:
            sim.check_conservation(result)
        except AssertionError as exc:
            failures.append(f"{key}: {exc}")
            continue
        for s in rng.sample(result.samples, 10):
            if sim.active_from_log(result, s.time) != s.active:
                failures.append(f"{key}: sample at {s.time}s does not reconcile")
    record(9, "conservation and sample reconciliation", not failures, f"{len(_RUNS)} runs checked" + (f"; {failures}" if failures else ""))
