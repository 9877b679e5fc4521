"""Fragmentation, reassembly, demux, and assembler lifecycle."""

import itertools
import random

import pytest

from conftest import wait_until

from netstack import addr, errors, wire
from netstack.csp import MessageQueue
from netstack.ipv4 import FragmentKey, fragment_payload

A_IP = addr.parse_ip("10.0.0.1")
B_IP = addr.parse_ip("10.0.0.2")

# 253 is reserved for experiments, so nothing else in the stack grabs it
TEST_PROTO = 253


def _bind_test_proto(s) -> MessageQueue:
    q = MessageQueue(64)
    s.ipv4.registry.bind(TEST_PROTO, q)
    return q


def _encoded_fragments(payload, mtu, src=B_IP, dst=A_IP, ident=41):
    packets = []
    for offset_units, more, chunk in fragment_payload(payload, mtu):
        packets.append(wire.Ipv4Packet(src_ip=src, dst_ip=dst, protocol=TEST_PROTO,
                                       payload=chunk, identification=ident,
                                       mf=more, fragment_offset=offset_units))
    return packets


def test_fragment_plan_matches_the_8_byte_rule():
    plan = fragment_payload(bytes(4000), 1500)
    assert [(o, m, len(c)) for o, m, c in plan] == [
        (0, True, 1480), (185, True, 1480), (370, False, 1040)]
    plan = fragment_payload(bytes(100), 1500)
    assert [(o, m, len(c)) for o, m, c in plan] == [(0, False, 100)]
    plan = fragment_payload(bytes(1200), 576)
    assert [(o, m, len(c)) for o, m, c in plan] == [
        (0, True, 552), (69, True, 552), (138, False, 96)]


def test_oversize_send_rejected(rig):
    a, _b = rig()
    with pytest.raises(errors.LengthError):
        a.ipv4.send(B_IP, TEST_PROTO, bytes(65516))


def test_unfragmented_delivery_between_stacks(rig):
    a, b = rig()
    q = _bind_test_proto(b)
    a.ipv4.send(B_IP, TEST_PROTO, b"direct payload")
    d = q.recv(timeout=2.0)
    assert (d.src, d.dst, d.protocol, d.payload) == (A_IP, B_IP, TEST_PROTO,
                                                     b"direct payload")


def test_large_send_fragments_and_reassembles(rig):
    a, b = rig()
    q = _bind_test_proto(b)
    payload = bytes(random.Random(5).randbytes(4000))
    a.ipv4.send(B_IP, TEST_PROTO, payload)
    assert q.recv(timeout=2.0).payload == payload
    assert b.counters.get("ip.reassembly.completed") == 1
    assert wait_until(lambda: b.ipv4.assembler_count() == 0)


@pytest.mark.parametrize("order", list(itertools.permutations(range(3))))
def test_every_fragment_arrival_order_reassembles(rig, order):
    a, b = rig()
    q = _bind_test_proto(a)
    payload = bytes(random.Random(6).randbytes(4000))
    fragments = _encoded_fragments(payload, 1500)
    for i in order:
        a.ipv4.inbound.send(("packet", fragments[i]))
    assert q.recv(timeout=2.0).payload == payload


def test_duplicate_fragments_deliver_once(rig):
    a, _b = rig()
    q = _bind_test_proto(a)
    payload = bytes(random.Random(7).randbytes(3000))
    fragments = _encoded_fragments(payload, 1500)
    for pkt in fragments + fragments[:2]:
        a.ipv4.inbound.send(("packet", pkt))
    assert q.recv(timeout=2.0).payload == payload
    with pytest.raises(errors.Timeout):
        q.recv(timeout=0.3)


def test_conflicting_overlap_is_dropped(rig):
    a, _b = rig()
    q = _bind_test_proto(a)
    payload = bytes(random.Random(8).randbytes(3000))
    fragments = _encoded_fragments(payload, 1500)
    evil = wire.Ipv4Packet(src_ip=B_IP, dst_ip=A_IP, protocol=TEST_PROTO,
                           payload=bytes(len(fragments[0].payload)),
                           identification=41, mf=True, fragment_offset=0)
    a.ipv4.inbound.send(("packet", fragments[0]))
    a.ipv4.inbound.send(("packet", evil))  # disagrees with fragment 0's bytes
    for pkt in fragments[1:]:
        a.ipv4.inbound.send(("packet", pkt))
    assert q.recv(timeout=2.0).payload == payload
    assert a.counters.get("ip.drop.fragment_conflict") == 1


def test_incomplete_reassembly_expires_without_delivery(rig):
    a, _b = rig()
    q = _bind_test_proto(a)
    fragments = _encoded_fragments(bytes(3000), 1500)
    for pkt in fragments[:2]:
        a.ipv4.inbound.send(("packet", pkt))
    assert wait_until(lambda: a.ipv4.assembler_count() == 1)
    # reassembly_timeout_ms is 800 in the test rig
    assert wait_until(lambda: a.ipv4.assembler_count() == 0, timeout=2.0)
    assert a.counters.get("ip.reassembly.timeout") == 1
    with pytest.raises(errors.Timeout):
        q.recv(timeout=0.2)


def test_abandoned_keys_all_clean_up(rig):
    a, _b = rig()
    _bind_test_proto(a)
    for ident in range(100):
        fragments = _encoded_fragments(bytes(3000), 1500, ident=ident)
        a.ipv4.inbound.send(("packet", fragments[0]))
    assert wait_until(lambda: a.ipv4.assembler_count() == 100)
    assert wait_until(lambda: a.ipv4.assembler_count() == 0, timeout=3.0)


def test_packets_not_for_us_are_dropped(rig):
    a, _b = rig()
    stray = wire.Ipv4Packet(src_ip=B_IP, dst_ip=addr.parse_ip("10.0.0.77"),
                            protocol=TEST_PROTO, payload=b"misdelivered")
    a.ipv4.inbound.send(("packet", stray))
    assert wait_until(lambda: a.counters.get("ip.drop.not_ours") == 1)


def test_unbound_protocol_counts_drop(rig):
    a, b = rig()
    a.ipv4.send(B_IP, 199, b"no such protocol")
    assert wait_until(lambda: b.counters.get("ip.drop.unbound") == 1)


def test_send_reassemble_identity_under_random_orders(rig):
    a, _b = rig()
    q = _bind_test_proto(a)
    rng = random.Random(99)
    for trial, size in enumerate([1, 8, 1480, 1481, 4000, 16384]):
        payload = bytes(rng.randbytes(size))
        fragments = _encoded_fragments(payload, 576, ident=100 + trial)
        rng.shuffle(fragments)
        for pkt in fragments:
            a.ipv4.inbound.send(("packet", pkt))
        assert q.recv(timeout=3.0).payload == payload


def test_loopback_send_to_own_address(rig):
    a, _b = rig()
    q = _bind_test_proto(a)
    a.ipv4.send(A_IP, TEST_PROTO, b"to myself")
    d = q.recv(timeout=2.0)
    assert d.payload == b"to myself" and d.src == A_IP


def test_off_subnet_without_gateway_is_no_route(rig):
    a, _b = rig()
    with pytest.raises(errors.NoRoute):
        a.ipv4.send(addr.parse_ip("192.168.9.9"), TEST_PROTO, b"x")
