import os
import threading

import pytest
from hypothesis import HealthCheck, settings

from besteffort.transport import LoopbackHub, ProcessComm, SocketTransport, local_addresses

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def _socket_pair(n):
    addrs = local_addresses(n)
    transports = [SocketTransport(r, addrs) for r in range(n)]
    for t in transports:
        t.listen()
    errors = []

    def connect(t):
        try:
            t.connect(timeout=10)
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=connect, args=(t,)) for t in transports]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return transports


@pytest.fixture(params=["loopback", "socket"])
def comm_pair(request):
    """Two connected ProcessComms, over the in-memory hub or real TCP."""
    if request.param == "loopback":
        transports = LoopbackHub().endpoints(2)
    else:
        transports = _socket_pair(2)
    comms = [ProcessComm(t) for t in transports]
    yield comms
    for t in transports:
        t.close()


@pytest.fixture
def loopback_pair():
    transports = LoopbackHub().endpoints(2)
    yield [ProcessComm(t) for t in transports]
    for t in transports:
        t.close()


def pump_until(comm, cond, timeout=5.0):
    import time

    deadline = time.monotonic() + timeout
    while not cond():
        comm.pump()
        if time.monotonic() > deadline:
            raise AssertionError("condition not reached")
        time.sleep(0.001)


_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    n, title = marker
    if report.when == "call" or report.outcome != "passed":
        prev = _criteria.get(n)
        if prev is None or prev[1] == "PASS":
            _criteria[n] = (title, "PASS" if report.outcome == "passed" else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = m.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}")
