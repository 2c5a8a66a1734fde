import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import filter_universe, match_masks, naive_filter_matches, topic_universe
from p1451sec.acl import (
    Access,
    AclDocument,
    AclParseError,
    AclRule,
    RuleNotFound,
    add_rule,
    check_publish,
    check_read,
    check_subscribe,
    filter_covers,
    is_within_scope,
    parse_acl,
    remove_rule,
    serialize_acl,
)


def doc(*rules):
    return AclDocument(tuple(AclRule(u, Access(a), f) for u, a, f in rules))


def test_parse_single_rule():
    parsed = parse_acl("user alice\ntopic read 1451.1.6/reply/#\n")
    assert parsed == doc(("alice", "read", "1451.1.6/reply/#"))


def test_parse_empty():
    assert parse_acl("") == AclDocument()


def test_topic_before_user_is_error():
    with pytest.raises(AclParseError):
        parse_acl("topic read x\n")


def test_parse_defaults_comments_and_anonymous():
    text = """
# greenhouse policy
user
topic public/#

user ncap01
topic write 1451.1.6/cmd/#
topic readwrite a b/c
"""
    assert parse_acl(text) == doc(
        ("", "readwrite", "public/#"),
        ("ncap01", "write", "1451.1.6/cmd/#"),
        ("ncap01", "readwrite", "a b/c"),
    )


@pytest.mark.parametrize("text", [
    "user a\ntopic read a/#/b\n",
    "user a\npattern read %u/#\n",
    "user a\ntopic\n",
])
def test_parse_errors(text):
    with pytest.raises(AclParseError):
        parse_acl(text)


def test_serialize_empty():
    assert serialize_acl(AclDocument()) == ""


def test_serialize_two_users():
    d = doc(("alice", "read", "a/#"), ("alice", "write", "b"), ("bob", "readwrite", "c/+"))
    assert serialize_acl(d) == (
        "user alice\n"
        "topic read a/#\n"
        "topic write b\n"
        "\n"
        "user bob\n"
        "topic readwrite c/+\n"
    )


def test_publish_checks():
    d = doc(("n", "write", "1451.1.6/cmd/#"), ("r", "read", "1451.1.6/cmd/#"))
    assert check_publish(d, "n", "1451.1.6/cmd/abc")
    assert not check_publish(d, "r", "1451.1.6/cmd/abc")
    assert not check_publish(d, "other", "1451.1.6/cmd/abc")
    assert not check_publish(AclDocument(), "n", "x")


def test_subscribe_checks():
    assert check_subscribe(doc(("n", "read", "a/#")), "n", "a/+")
    assert not check_subscribe(doc(("n", "read", "a/b")), "n", "a/#")
    assert check_subscribe(doc(("n", "readwrite", "a/+/c")), "n", "a/+/c")
    assert not check_subscribe(doc(("n", "write", "a/#")), "n", "a/b")


def test_anonymous_matches_only_empty_username():
    d = doc(("", "read", "pub/#"))
    assert check_subscribe(d, "", "pub/x")
    assert not check_subscribe(d, "someone", "pub/x")


@pytest.mark.parametrize("general,specific,expected", [
    ("#", "a/b/c", True),
    ("#", "+/#", True),
    ("a/+", "a/b", True),
    ("a/b", "a/+", False),
    ("a/#", "a", True),
    ("a/#", "a/+/#", True),
    ("a/+/#", "a/#", False),
    ("+", "$SYS", False),
    ("$SYS/#", "$SYS/x", True),
    # a topic always has one level, so '+/#' is as wide as '#'
    ("+/#", "#", True),
    ("+/+/#", "#", False),
    ("+/+/#", "/#", True),
    ("+/+/#", "+/#", False),
])
def test_filter_covers_examples(general, specific, expected):
    assert filter_covers(general, specific) is expected


@pytest.fixture(scope="module")
def universe():
    filters = filter_universe()
    topics = topic_universe(alphabet=("a", "b", "c", ""))
    return filters, match_masks(filters, topics)


def test_filter_covers_matches_brute_force(universe):
    filters, masks = universe
    mismatches = []
    for g in filters:
        mg = masks[g]
        for s in filters:
            expected = masks[s] & ~mg == 0
            if filter_covers(g, s) != expected:
                mismatches.append((g, s))
    assert mismatches == []


def test_filter_covers_reflexive_and_transitive(universe):
    filters, _ = universe
    sample = filters[::7]
    for f in filters:
        assert filter_covers(f, f)
    for a in sample:
        for b in sample:
            if not filter_covers(a, b):
                continue
            for c in sample:
                if filter_covers(b, c):
                    assert filter_covers(a, c), (a, b, c)


def test_add_remove():
    base = doc(("a", "read", "x"))
    rule = AclRule("b", Access.WRITE, "y/#")
    added = add_rule(base, rule)
    assert added.rules[-1] == rule
    assert remove_rule(added, rule) == base
    assert add_rule(added, rule) == added
    with pytest.raises(RuleNotFound):
        remove_rule(base, rule)


def test_remove_deletes_every_copy():
    rule = AclRule("a", Access.READ, "x")
    assert remove_rule(AclDocument((rule, rule)), rule) == AclDocument()


@pytest.mark.parametrize("scope,topic_filter,expected", [
    ("1451.1.6/greenhouse", "1451.1.6/greenhouse/temp/#", True),
    ("1451.1.6/greenhouse", "1451.1.6/greenhouse", False),
    ("a", "#", False),
    ("a", "a/+", True),
    ("a", "ab/c", False),
    ("a", "a/", False),
    ("a/+", "a/b/c", False),
])
def test_is_within_scope(scope, topic_filter, expected):
    assert is_within_scope(scope, topic_filter) is expected


# -- randomized ------------------------------------------------------------------

level = st.sampled_from(["a", "b", "c", "x y", "+"])
filters = st.builds(lambda ls, tail: "/".join(ls + tail),
                    st.lists(level, min_size=1, max_size=3), st.sampled_from([[], ["#"]]))
usernames = st.sampled_from(["", "alice", "bob", "ncap01", "app 7"])
rules = st.builds(AclRule, usernames, st.sampled_from(list(Access)), filters)
documents = st.lists(rules, max_size=12).map(lambda rs: AclDocument(tuple(rs)))


@settings(max_examples=500)
@given(documents)
def test_parse_serialize_round_trip(d):
    assert parse_acl(serialize_acl(d)) == d


@given(usernames, filters, st.sampled_from(["a", "a/b", "b/c/a", "x y/a"]))
def test_default_deny(user, topic_filter, topic):
    assert not check_subscribe(AclDocument(), user, topic_filter)
    assert not check_publish(AclDocument(), user, topic)


topics_small = topic_universe(max_depth=4, alphabet=("a", "b", "c"))


@settings(max_examples=200)
@given(documents, usernames, filters)
def test_subscribe_cover_soundness(d, user, requested):
    if not check_subscribe(d, user, requested):
        return
    for topic in topics_small:
        if naive_filter_matches(requested, topic):
            assert check_read(d, user, topic), topic
