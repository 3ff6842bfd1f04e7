from __future__ import annotations

import pytest

from sliceforge.domain import DeviceClass, RequestRecord, Weather

# filled by test_acceptance; echoed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_request(
    id: int = 0,
    arrival_time: float = 0.0,
    device_class: DeviceClass = DeviceClass.SMARTPHONE,
    loss: float = 1e-3,
    delay: int = 100,
    ttl: int = 60,
    **overrides,
) -> RequestRecord:
    fields = dict(
        id=id,
        arrival_time=arrival_time,
        device_class=device_class,
        ue_category=3,
        qci=6,
        packet_loss_rate=loss,
        packet_delay_budget_ms=delay,
        day_of_week=2,
        hour_of_day=10,
        weather=Weather.NORMAL,
        ttl_s=ttl,
    )
    fields.update(overrides)
    return RequestRecord(**fields)


@pytest.fixture
def request_factory():
    return make_request
