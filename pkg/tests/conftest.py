import contextlib
import socket
import time

import hypothesis
import pytest

from p1451sec.broker import Broker, BrokerConfig
from p1451sec.passwords import write_password_file
from p1451sec.teds import SecurityLevel
from p1451sec.tls import client_context, generate_self_signed

hypothesis.settings.register_profile("default", deadline=None)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.load_profile("default")

USERS = {
    "app01": "app-secret",
    "ncap01": "ncap-secret",
    "acs": "acs-secret",
    "nobody": "nobody-secret",
}

# criterion number -> (description, passed)
_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def record(number, description):
        try:
            yield
        except BaseException:
            _ACCEPTANCE[number] = (description, False)
            raise
        # parametrized criteria pass only if every case passes
        _ACCEPTANCE.setdefault(number, (description, True))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        description, passed = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {description}")


@pytest.fixture(scope="session")
def tls_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("tls")
    return generate_self_signed(d / "cert.pem", d / "key.pem")


@pytest.fixture(scope="session")
def client_tls(tls_files):
    return client_context(tls_files[0])


@pytest.fixture
def password_file(tmp_path):
    return write_password_file(tmp_path / "passwords", USERS)


@pytest.fixture
def make_broker(tmp_path, tls_files, password_file):
    """Factory: ``make_broker(level, acl_text=None, **config_overrides)``."""
    started = []

    def make(level=SecurityLevel.N, acl_text=None, **overrides):
        acl_path = None
        if acl_text is not None:
            acl_path = tmp_path / "acl"
            acl_path.write_text(acl_text)
        kwargs = dict(host="127.0.0.1", port=0, level=level, acl_file=acl_path)
        if level in (SecurityLevel.A, SecurityLevel.C, SecurityLevel.E):
            kwargs.update(tls_cert=tls_files[0], tls_key=tls_files[1])
        if level not in (SecurityLevel.N, SecurityLevel.A):
            kwargs.update(password_file=password_file)
        kwargs.update(overrides)
        broker = Broker(BrokerConfig(**kwargs)).start()
        started.append(broker)
        return broker

    yield make
    for broker in started:
        broker.stop()


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_until(predicate, timeout=5.0, interval=0.02):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()
