import threading
import time
import uuid

import pytest

from conftest import free_port
from p1451sec import cli, netsvc
from p1451sec.app import (
    FlowTimeout,
    PendingTable,
    ReplyError,
    RequestOutstanding,
    make_command,
    pretty_print,
    read_teds_flow,
)
from p1451sec.client import MqttClient
from p1451sec.ncap import NcapConfig, NcapService, repository_for
from p1451sec.netsvc import ReadTedsReply, TimeDuration
from p1451sec.teds import GOLDEN_TEDS, SecurityLevel, SecurityTeds, encode_security_teds, format_description

NCAP = uuid.UUID("11111111-2222-3333-4444-555555555555")
APP = uuid.UUID("aaaaaaaa-bbbb-cccc-dddd-eeeeeeeeeeee")

GOLDEN_SUMMARY = """\
TEDS ID: 1 6 16 2 1
Level: E (encryption, authentication, authorization)
Number of standards: 3
TLS (10) TLS 1.3
Username/Password (12) V1.0
MQTT-ACL (128) V1.0
"""


def test_pretty_print_golden():
    assert pretty_print(GOLDEN_TEDS) == GOLDEN_SUMMARY


def test_pretty_print_level_n():
    assert "Level: N (no security)" in pretty_print(SecurityTeds(SecurityLevel.N))


def test_pretty_print_deterministic():
    assert pretty_print(GOLDEN_TEDS).encode() == pretty_print(GOLDEN_TEDS).encode()


def test_pending_table_one_per_pair():
    table = PendingTable()
    cmd = make_command(NCAP, APP)
    table.add(cmd)
    with pytest.raises(RequestOutstanding):
        table.add(cmd)
    table.add(make_command(NCAP, uuid.uuid4()))
    assert table.match(ReadTedsReply(0, uuid.uuid4(), NCAP)) is None
    assert table.match(ReadTedsReply(0, APP, NCAP)).command == cmd
    assert len(table) == 1


def test_expired_pending_can_be_replaced():
    table = PendingTable()
    table.add(make_command(NCAP, APP, timeout=0))
    table.add(make_command(NCAP, APP))


def test_make_command_defaults():
    cmd = make_command(NCAP)
    assert cmd.teds_access_code == 16 and cmd.teds_offset == 0
    assert cmd.timeout == TimeDuration(2, 0)
    assert cmd.app_id != make_command(NCAP).app_id


@pytest.mark.parametrize("text,seconds", [("2s", 2.0), ("2", 2.0), ("500ms", 0.5), ("1.5s", 1.5)])
def test_parse_duration(text, seconds):
    assert cli.parse_duration(text) == seconds


# -- read flow against a live broker -------------------------------------------------

@pytest.fixture
def level_n(make_broker):
    return make_broker(SecurityLevel.N)


def fake_ncap(broker, replies):
    """Answer the first command with each reply factory in turn."""
    host, port = broker.address
    client = MqttClient(host, port, "fake-ncap")
    client.connect()
    client.subscribe([netsvc.command_topic(NCAP)])

    def run():
        cmd = netsvc.decode_command(client.messages.get(timeout=5).payload)
        for make in replies:
            client.publish(netsvc.reply_topic(cmd.app_id), netsvc.encode_reply(make(cmd)), qos=1)
            time.sleep(0.05)
        client.disconnect()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return thread


def test_read_flow_ignores_uncorrelated_reply(level_n):
    block = encode_security_teds(GOLDEN_TEDS)
    thread = fake_ncap(level_n, [
        lambda c: ReadTedsReply(0, uuid.uuid4(), c.ncap_id, raw_teds_block=b"junk"),
        lambda c: ReadTedsReply(0, c.app_id, uuid.uuid4(), raw_teds_block=b"junk"),
        lambda c: ReadTedsReply(0, c.app_id, c.ncap_id, raw_teds_block=block),
    ])
    host, port = level_n.address
    with MqttClient(host, port, "app") as client:
        client.connect()
        result = read_teds_flow(client, make_command(NCAP, APP))
    thread.join(5)
    assert result.teds == GOLDEN_TEDS and result.reply.error_code == 0


def test_read_flow_error_code(level_n):
    fake_ncap(level_n, [lambda c: ReadTedsReply(3, c.app_id, c.ncap_id)])
    host, port = level_n.address
    with MqttClient(host, port, "app") as client:
        client.connect()
        with pytest.raises(ReplyError) as info:
            read_teds_flow(client, make_command(NCAP, APP))
    assert info.value.reply.error_code == 3


def test_read_flow_deadline(level_n):
    host, port = level_n.address
    with MqttClient(host, port, "app") as client:
        client.connect()
        start = time.monotonic()
        with pytest.raises(FlowTimeout):
            read_teds_flow(client, make_command(NCAP, APP, timeout=0.5))
        assert time.monotonic() - start < 0.5 + 0.1


# -- CLI ----------------------------------------------------------------------------

@pytest.fixture
def description(tmp_path):
    path = tmp_path / "security.teds.txt"
    path.write_text(format_description(GOLDEN_TEDS))
    return path


def test_encode_decode_teds_cli(tmp_path, description, capsys):
    out = tmp_path / "security.teds"
    assert cli.main(["encode-teds", str(description), str(out)]) == 0
    assert out.read_bytes() == encode_security_teds(GOLDEN_TEDS)
    capsys.readouterr()
    assert cli.main(["decode-teds", str(out)]) == 0
    assert capsys.readouterr().out == GOLDEN_SUMMARY


def test_decode_truncated_file(tmp_path, capsys):
    path = tmp_path / "cut.teds"
    path.write_bytes(encode_security_teds(GOLDEN_TEDS)[:-3])
    assert cli.main(["decode-teds", str(path)]) == cli.EXIT_DECODE
    assert "decode error" in capsys.readouterr().err


def test_encode_bad_description(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("level=E\nstandard=50,1\n")
    assert cli.main(["encode-teds", str(path), str(tmp_path / "out")]) == cli.EXIT_FAILURE
    assert "line 2" in capsys.readouterr().err


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["read-teds"])
    assert info.value.code == cli.EXIT_USAGE


def test_exit_codes_distinct():
    codes = [cli.EXIT_OK, cli.EXIT_FAILURE, cli.EXIT_USAGE, cli.EXIT_TIMEOUT, cli.EXIT_AUTH,
             cli.EXIT_PROTOCOL, cli.EXIT_DECODE, cli.EXIT_REPLY_ERROR, cli.EXIT_DENIED, cli.EXIT_INVALID]
    assert len(set(codes)) == len(codes)


def test_read_teds_cli_against_service(level_n, capsys):
    host, port = level_n.address
    with NcapService(NcapConfig(NCAP, host, port), repository_for(GOLDEN_TEDS)).start() as service:
        assert service.ready.wait(5)
        code = cli.main(["read-teds", "--broker", f"{host}:{port}", "--ncap-id", str(NCAP)])
    assert code == 0
    assert capsys.readouterr().out == GOLDEN_SUMMARY


def test_read_teds_cli_reply_error(level_n, capsys):
    host, port = level_n.address
    with NcapService(NcapConfig(NCAP, host, port), repository_for(GOLDEN_TEDS)).start() as service:
        assert service.ready.wait(5)
        code = cli.main(["read-teds", "--broker", f"{host}:{port}", "--ncap-id", str(NCAP),
                         "--access-code", "99"])
    assert code == cli.EXIT_REPLY_ERROR


def test_read_teds_cli_auth_failure(make_broker):
    host, port = make_broker(SecurityLevel.B).address
    code = cli.main(["read-teds", "--broker", f"{host}:{port}", "--ncap-id", str(NCAP),
                     "--username", "app01", "--password", "wrong"])
    assert code == cli.EXIT_AUTH


def test_read_teds_cli_no_broker():
    code = cli.main(["read-teds", "--broker", f"127.0.0.1:{free_port()}", "--ncap-id", str(NCAP)])
    assert code == cli.EXIT_PROTOCOL


def test_acl_update_without_acs_times_out(level_n):
    host, port = level_n.address
    start = time.monotonic()
    code = cli.main(["acl-update", "--broker", f"{host}:{port}", "--token", "x" * 16, "--op", "add",
                     "--user", "ncap01", "--topic", "a/b", "--timeout", "300ms"])
    assert code == cli.EXIT_TIMEOUT
    assert time.monotonic() - start < 1.5
