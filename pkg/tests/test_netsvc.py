import uuid

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p1451sec import netsvc
from p1451sec.netsvc import (
    NetSvcError,
    ReadTedsCommand,
    ReadTedsReply,
    TimeDuration,
    command_topic,
    correlate,
    decode_command,
    decode_reply,
    encode_command,
    encode_reply,
    id_from_topic,
    reply_topic,
)
from p1451sec.teds import GOLDEN_TEDS, encode_security_teds

# appId, ncapId, timId, channelId, tedsAccessCode, tedsOffset, timeout(sec, nsec)
COMMAND_FIELD_WIDTHS = [16, 16, 16, 2, 1, 4, 4 + 4]
# errorCode, appId, ncapId, timId, channelId, tedsOffset
REPLY_FIELD_WIDTHS = [2, 16, 16, 16, 2, 4]

APP = uuid.UUID("00112233-4455-6677-8899-aabbccddeeff")
NCAP = uuid.UUID("0f0e0d0c-0b0a-0908-0706-050403020100")


def test_command_field_widths():
    assert sum(COMMAND_FIELD_WIDTHS) == 63 == netsvc.COMMAND_BODY_LENGTH
    assert sum(REPLY_FIELD_WIDTHS) == 56 == netsvc.REPLY_FIXED_LENGTH


def test_security_teds_command_layout():
    raw = encode_command(ReadTedsCommand(APP, NCAP, teds_access_code=16, teds_offset=0,
                                         timeout=TimeDuration(2, 0)))
    assert len(raw) == 68
    assert raw[:5] == bytes.fromhex("030201003f")
    assert raw[5:21] == APP.bytes and raw[21:37] == NCAP.bytes
    assert raw[-13:] == bytes.fromhex("10" "00000000" "00000002" "00000000")


def test_default_command_matches_use_case():
    cmd = ReadTedsCommand(APP, NCAP)
    assert (cmd.teds_access_code, cmd.teds_offset, cmd.timeout) == (16, 0, TimeDuration(2, 0))


def test_zero_uuids_accepted():
    nil = uuid.UUID(int=0)
    raw = encode_command(ReadTedsCommand(nil, nil, nil))
    assert decode_command(raw).app_id == nil


def test_decode_rejects_reply_as_command():
    raw = bytearray(encode_command(ReadTedsCommand(APP, NCAP)))
    raw[2] = 2
    with pytest.raises(NetSvcError, match="not a command"):
        decode_command(bytes(raw))


@pytest.mark.parametrize("index,value", [(0, 4), (1, 3)])
def test_decode_rejects_other_services(index, value):
    raw = bytearray(encode_command(ReadTedsCommand(APP, NCAP)))
    raw[index] = value
    with pytest.raises(NetSvcError):
        decode_command(bytes(raw))


def test_decode_truncated_command():
    with pytest.raises(NetSvcError, match="truncated"):
        decode_command(bytes.fromhex("03020100"))
    raw = encode_command(ReadTedsCommand(APP, NCAP))
    with pytest.raises(NetSvcError, match="truncated"):
        decode_command(raw[:-1])


def test_command_length_must_be_63():
    raw = encode_command(ReadTedsCommand(APP, NCAP)) + b"\x00"
    fixed = raw[:3] + (64).to_bytes(2, "big") + raw[5:]
    with pytest.raises(NetSvcError, match="63"):
        decode_command(fixed)
    with pytest.raises(NetSvcError):
        decode_command(raw)


def test_command_bad_nanoseconds():
    raw = bytearray(encode_command(ReadTedsCommand(APP, NCAP)))
    raw[-4:] = (1_000_000_000).to_bytes(4, "big")
    with pytest.raises(NetSvcError):
        decode_command(bytes(raw))


def test_success_reply_with_golden_block():
    block = encode_security_teds(GOLDEN_TEDS)
    rep = ReadTedsReply(0, APP, NCAP, netsvc.NIL_UUID, 0, 0, block)
    raw = encode_reply(rep)
    assert raw[:5] == bytes([3, 2, 2]) + (56 + len(block)).to_bytes(2, "big")
    assert raw[5:7] == b"\x00\x00"
    assert raw[-len(block):] == block
    assert decode_reply(raw) == rep


def test_error_reply_length():
    raw = encode_reply(ReadTedsReply(3, APP, NCAP))
    assert int.from_bytes(raw[3:5], "big") == 56 == sum(REPLY_FIELD_WIDTHS)
    assert len(raw) == 61


def test_reply_too_short():
    raw = encode_reply(ReadTedsReply(3, APP, NCAP))
    short = raw[:3] + (55).to_bytes(2, "big") + raw[5:-1]
    with pytest.raises(NetSvcError, match="at least 56"):
        decode_reply(short)


def test_decode_reply_rejects_command():
    with pytest.raises(NetSvcError, match="not a reply"):
        decode_reply(encode_command(ReadTedsCommand(APP, NCAP)))


def test_topics():
    nil = uuid.UUID(int=0)
    assert command_topic(nil) == "1451.1.6/cmd/" + "0" * 32
    assert reply_topic(APP) == "1451.1.6/reply/00112233445566778899aabbccddeeff"
    assert command_topic(APP) != command_topic(NCAP)


@given(st.uuids())
def test_topic_hex_round_trip(value):
    assert id_from_topic(command_topic(value)) == value
    assert id_from_topic(reply_topic(value)) == value
    assert bytes.fromhex(command_topic(value).rsplit("/", 1)[1]) == value.bytes


@given(st.uuids(), st.uuids())
def test_topics_injective(a, b):
    assert (command_topic(a) == command_topic(b)) == (a == b)


def test_id_from_topic_rejects_garbage():
    for topic in ["1451.1.6/cmd/xyz", "other/" + "0" * 32, "1451.1.6/cmd/" + "A" * 32]:
        with pytest.raises(NetSvcError):
            id_from_topic(topic)


def test_correlate():
    cmd = ReadTedsCommand(APP, NCAP, tim_id=uuid.uuid4())
    assert correlate(cmd, ReadTedsReply(0, APP, NCAP))
    assert not correlate(cmd, ReadTedsReply(0, uuid.uuid4(), NCAP))
    assert not correlate(cmd, ReadTedsReply(0, APP, uuid.uuid4()))
    # timId 0 in the reply still correlates
    assert correlate(cmd, ReadTedsReply(0, APP, NCAP, netsvc.NIL_UUID))


def test_time_duration_from_seconds():
    assert TimeDuration.from_seconds(2) == TimeDuration(2, 0)
    assert TimeDuration.from_seconds(1.5) == TimeDuration(1, 500_000_000)
    assert TimeDuration.from_seconds(1.9999999999) == TimeDuration(2, 0)
    with pytest.raises(ValueError):
        TimeDuration(0, 1_000_000_000)


u16 = st.integers(0, 0xFFFF)
u32 = st.integers(0, 0xFFFFFFFF)
durations = st.builds(TimeDuration, u32, st.integers(0, 999_999_999))
commands = st.builds(ReadTedsCommand, st.uuids(), st.uuids(), st.uuids(), u16, st.integers(0, 255), u32, durations)
replies = st.builds(ReadTedsReply, u16, st.uuids(), st.uuids(), st.uuids(), u16, u32, st.binary(max_size=300))


@settings(max_examples=1000)
@given(commands)
def test_command_round_trip(cmd):
    raw = encode_command(cmd)
    assert raw[:3] == b"\x03\x02\x01"
    assert int.from_bytes(raw[3:5], "big") == len(raw) - 5 == 63
    assert decode_command(raw) == cmd


@settings(max_examples=1000)
@given(replies)
def test_reply_round_trip(rep):
    raw = encode_reply(rep)
    assert raw[:3] == b"\x03\x02\x02"
    assert int.from_bytes(raw[3:5], "big") == len(raw) - 5
    assert decode_reply(raw) == rep


@given(replies, st.integers(-3, 3).filter(bool))
def test_reply_length_mismatch_rejected(rep, delta):
    raw = encode_reply(rep)
    declared = int.from_bytes(raw[3:5], "big") + delta
    if not 0 <= declared <= 0xFFFF:
        return
    with pytest.raises(NetSvcError):
        decode_reply(raw[:3] + declared.to_bytes(2, "big") + raw[5:])
