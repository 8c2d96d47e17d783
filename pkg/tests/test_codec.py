import pytest
from hypothesis import given, settings, strategies as st

from minimr import _backend
from minimr.codec import decode_entries, encode_entries
from minimr.errors import DecodeError

entries_st = st.lists(
    st.tuples(st.binary(max_size=40), st.integers(-(2**63), 2**63 - 1)), max_size=50
)


def test_empty_roundtrip(impl):
    assert impl.encode_entries([]) == b""
    assert impl.decode_entries(b"") == []


def test_single_entry_layout(impl):
    data = impl.encode_entries([(b"a", 1)])
    assert len(data) == 4 + 1 + 8
    assert data == b"\x01\x00\x00\x00" + b"a" + b"\x01" + b"\x00" * 7


def test_negative_value_is_twos_complement(impl):
    assert impl.encode_entries([(b"", -1)]) == b"\x00" * 4 + b"\xff" * 8


@pytest.mark.parametrize("cut", [1, 3, 4, 5, 12])
def test_truncated_payload_rejected(impl, cut):
    data = impl.encode_entries([(b"a", 1)])
    with pytest.raises(DecodeError):
        impl.decode_entries(data[:cut])


def test_overlong_payload_rejected(impl):
    data = impl.encode_entries([(b"a", 1)]) + b"\x00\x00"
    with pytest.raises(DecodeError):
        impl.decode_entries(data)


def test_thousand_random_entries_roundtrip(impl):
    import random

    rng = random.Random(7)
    entries = [
        (rng.randbytes(rng.randrange(0, 20)), rng.randrange(-(2**63), 2**63))
        for _ in range(1000)
    ]
    assert impl.decode_entries(impl.encode_entries(entries)) == entries


@settings(max_examples=500)
@given(entries_st)
def test_roundtrip_fuzz(entries):
    blob = encode_entries(entries)
    assert decode_entries(blob) == entries
    for name in _backend.available():
        impl = _backend.get(name)
        assert impl.encode_entries(entries) == blob
        assert impl.decode_entries(blob) == entries


@settings(max_examples=300)
@given(st.binary(max_size=64))
def test_decoders_agree_on_arbitrary_bytes(blob):
    outcomes = []
    for name in _backend.available():
        try:
            outcomes.append(_backend.get(name).decode_entries(blob))
        except DecodeError:
            outcomes.append("error")
    assert all(o == outcomes[0] for o in outcomes)
