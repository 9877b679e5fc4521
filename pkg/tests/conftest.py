"""Shared rigs: linked stack pairs with short timers, plus a scripted peer."""

import time

import pytest

from netstack import errors, link, stack, wire
from netstack.config import StackConfig

A_IP, B_IP = "10.0.0.1", "10.0.0.2"


def fast_config(ip: str, mac: str, **overrides) -> StackConfig:
    """Stack settings with timers cut down to test scale."""
    values = dict(
        ip=ip, mac=mac,
        arp_timeout_ms=200,
        reassembly_timeout_ms=800,
        tcp_rto_ms=200,
        tcp_time_wait_ms=300,
        tcp_handshake_timeout_ms=1500,
        isn_seed=7,
    )
    values.update(overrides)
    return StackConfig(**values)


@pytest.fixture
def rig():
    """Factory for linked stack pairs; tears every stack down afterwards."""
    built = []

    def build(loss=0.0, reorder=0.0, delay=0.0, seed=1, a_over=None, b_over=None):
        profile = link.ImpairmentProfile(loss_rate=loss, reorder_rate=reorder,
                                         delay=delay, seed=seed)
        cfg_a = fast_config(A_IP, "02:00:00:00:00:01", **(a_over or {}))
        cfg_b = fast_config(B_IP, "02:00:00:00:00:02", **(b_over or {}))
        pair = stack.linked_stacks(profile, cfg_a, cfg_b)
        built.extend(pair)
        return pair

    yield build
    for s in reversed(built):
        try:
            s.down()
        except errors.NotRunning:
            pass


@pytest.fixture
def solo():
    """One full stack on a bare wire; the far end stays in the test's hands."""
    built = []

    def build(**overrides):
        end_a, end_b = link.create_wire_pair(link.ImpairmentProfile())
        cfg = fast_config(A_IP, "02:00:00:00:00:01", **overrides)
        s = stack.Stack(cfg, device=end_a)
        s.up()
        built.append((s, end_b))
        return s, end_b

    yield build
    for s, end in built:
        end.close()
        try:
            s.down()
        except errors.NotRunning:
            pass


def wait_until(predicate, timeout: float = 2.0, interval: float = 0.01) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


class ScriptedPeer:
    """Hand-driven endpoint on a bare wire end.

    Lets tests speak raw segments against a full stack while answering
    the stack's ARP requests so its sends keep flowing.
    """

    def __init__(self, device, ip: bytes, mac: bytes = b"\x02\x00\x00\x00\x00\x02"):
        self.device = device
        self.ip = ip
        self.mac = mac

    def announce(self, target_ip: bytes) -> None:
        """Gratuitous-style ARP so the stack learns us without asking."""
        pkt = wire.ArpPacket(opcode=wire.ARP_REPLY, sender_mac=self.mac,
                             sender_ip=self.ip, target_mac=b"\xff" * 6,
                             target_ip=target_ip)
        frame = wire.EthernetFrame(dst_mac=b"\xff" * 6, src_mac=self.mac,
                                   ethertype=wire.ETHERTYPE_ARP, payload=pkt.encode())
        self.device.write_frame(frame.encode())

    def _answer_arp(self, frame: wire.EthernetFrame) -> None:
        pkt = wire.decode("arp", frame.payload)
        if pkt.opcode == wire.ARP_REQUEST and pkt.target_ip == self.ip:
            reply = wire.ArpPacket(opcode=wire.ARP_REPLY, sender_mac=self.mac,
                                   sender_ip=self.ip, target_mac=pkt.sender_mac,
                                   target_ip=pkt.sender_ip)
            out = wire.EthernetFrame(dst_mac=pkt.sender_mac, src_mac=self.mac,
                                     ethertype=wire.ETHERTYPE_ARP,
                                     payload=reply.encode())
            self.device.write_frame(out.encode())

    def expect_tcp(self, pred=None, timeout: float = 3.0) -> wire.TcpSegment:
        """Next TCP segment from the stack matching pred; ARP answered en route."""
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise AssertionError("expected tcp segment never arrived")
            frame = wire.decode("ethernet", self.device.read_frame(timeout=remaining))
            if frame.ethertype == wire.ETHERTYPE_ARP:
                self._answer_arp(frame)
                continue
            if frame.ethertype != wire.ETHERTYPE_IPV4:
                continue
            packet = wire.decode("ipv4", frame.payload)
            if packet.protocol != wire.PROTO_TCP:
                continue
            seg = wire.decode("tcp", packet.payload,
                              src_ip=packet.src_ip, dst_ip=packet.dst_ip)
            if pred is None or pred(seg):
                return seg

    def send_tcp(self, dst_ip: bytes, dst_mac: bytes, **fields) -> None:
        seg = wire.TcpSegment(**fields)
        packet = wire.Ipv4Packet(src_ip=self.ip, dst_ip=dst_ip,
                                 protocol=wire.PROTO_TCP,
                                 payload=seg.encode(self.ip, dst_ip))
        frame = wire.EthernetFrame(dst_mac=dst_mac, src_mac=self.mac,
                                   ethertype=wire.ETHERTYPE_IPV4,
                                   payload=packet.encode())
        self.device.write_frame(frame.encode())
