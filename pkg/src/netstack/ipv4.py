"""IPv4: protocol demux through a reader pool, fragmentation on send,
and one assembler task per in-progress reassembly.

The dealer owns the assembler map.  Assemblers never touch it
themselves; they announce completion or expiry by sending a control
message back to the dealer's inbox, which also carries reassembled
packets through the exact same path as fresh arrivals.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

from netstack import addr, wire
from netstack.csp import BindingRegistry, Counters, MessageQueue, TaskSet
from netstack.errors import Closed, LengthError, NoRoute, Timeout, WireError

BROADCAST_IP = b"\xff\xff\xff\xff"


@dataclass
class IpDatagram:
    """What the layers above receive: a payload with its addressing."""
    src: bytes
    dst: bytes
    protocol: int
    payload: bytes


@dataclass(frozen=True)
class FragmentKey:
    src_ip: bytes
    dst_ip: bytes
    protocol: int
    identification: int


def fragment_payload(payload: bytes, mtu: int) -> list[tuple[int, bool, bytes]]:
    """Split payload into (offset_units, more_fragments, chunk) triples.

    Every chunk except the last is the largest multiple of 8 that fits
    in mtu - 20, because offsets are carried in 8-byte units.
    """
    limit = ((mtu - wire.IP_HEADER) // 8) * 8
    if len(payload) <= mtu - wire.IP_HEADER:
        return [(0, False, payload)]
    out = []
    pos = 0
    while pos < len(payload):
        chunk = payload[pos:pos + limit]
        more = pos + len(chunk) < len(payload)
        out.append((pos // 8, more, chunk))
        pos += len(chunk)
    return out


class _Assembler:
    """Collects one datagram's fragments until coverage is complete."""

    def __init__(self, key: FragmentKey, inbox: MessageQueue, dealer_inbox: MessageQueue,
                 timeout_s: float, counters: Counters):
        self.key = key
        self.inbox = inbox
        self.dealer_inbox = dealer_inbox
        self.timeout_s = timeout_s
        self.counters = counters
        self.buffer = bytearray()
        self.intervals = []  # merged, sorted (start, end) byte ranges
        self.total = None

    def run(self) -> None:
        while True:
            try:
                fragment = self.inbox.recv(timeout=self.timeout_s)
            except Timeout:
                self.counters.incr("ip.reassembly.timeout")
                self._notify(("timeout", self.key))
                return
            except Closed:
                return
            done = self._insert(fragment)
            if done is not None:
                self._notify(("complete", self.key, done))
                return

    def _notify(self, msg) -> None:
        try:
            self.dealer_inbox.send(msg)
        except Closed:
            pass

    def _insert(self, fragment: wire.Ipv4Packet):
        start = fragment.fragment_offset * 8
        end = start + len(fragment.payload)
        if end > 65535:
            self.counters.incr("ip.drop.fragment_conflict")
            return None
        if not fragment.mf:
            if self.total is not None and self.total != end:
                self.counters.incr("ip.drop.fragment_conflict")
                return None
            self.total = end
        if len(self.buffer) < end:
            self.buffer.extend(bytes(end - len(self.buffer)))
        # a fragment disagreeing with bytes already in place is discarded whole
        for s, e in self.intervals:
            lo, hi = max(s, start), min(e, end)
            if lo < hi and self.buffer[lo:hi] != fragment.payload[lo - start:hi - start]:
                self.counters.incr("ip.drop.fragment_conflict")
                return None
        self.buffer[start:end] = fragment.payload
        self._merge(start, end)
        if self.total is not None and self.intervals == [(0, self.total)]:
            whole = wire.Ipv4Packet(
                src_ip=self.key.src_ip, dst_ip=self.key.dst_ip,
                protocol=self.key.protocol, payload=bytes(self.buffer[:self.total]),
                identification=self.key.identification,
            )
            self.counters.incr("ip.reassembly.completed")
            return whole
        return None

    def _merge(self, start: int, end: int) -> None:
        merged = []
        for s, e in self.intervals + [(start, end)]:
            merged.append((s, e))
        merged.sort()
        out = [merged[0]]
        for s, e in merged[1:]:
            ls, le = out[-1]
            if s <= le:
                out[-1] = (ls, max(le, e))
            else:
                out.append((s, e))
        self.intervals = out


class Ipv4Layer:
    def __init__(self, eth, arp, config, counters: Counters, tasks: TaskSet):
        self.eth = eth
        self.arp = arp
        self.counters = counters
        self.tasks = tasks
        self.our_ip = config.ip_bytes
        self.netmask = config.netmask_bytes
        self.gateway = config.gateway_bytes
        self.mtu = config.mtu
        self.reader_count = config.ip_readers
        self.reassembly_timeout_s = config.reassembly_timeout_ms / 1000.0
        self.inbound = MessageQueue(config.queue_capacity)
        self.dispatch_q = MessageQueue(config.queue_capacity)
        self.registry = BindingRegistry("ip", counters)  # protocol number -> queue
        self._assemblers = {}  # FragmentKey -> MessageQueue, dealer-owned
        self._ident = itertools.count(1)
        self._ident_lock = threading.Lock()

    def start(self) -> None:
        self.eth.registry.bind(wire.ETHERTYPE_IPV4, self.inbound)
        self.tasks.spawn("ip-dealer", self._dealer_loop)
        for i in range(self.reader_count):
            self.tasks.spawn(f"ip-reader-{i}", self._reader_loop)

    def assembler_count(self) -> int:
        return len(self._assemblers)

    # --- inbound ---

    def _dealer_loop(self) -> None:
        while True:
            try:
                msg = self.inbound.recv()
            except Closed:
                for q in self._assemblers.values():
                    q.close()
                self._assemblers.clear()
                self.dispatch_q.close()
                return
            if isinstance(msg, wire.EthernetFrame):
                try:
                    packet = wire.decode("ipv4", msg.payload)
                except WireError:
                    self.counters.incr("ip.drop.decode")
                    continue
                self._accept(packet)
            elif isinstance(msg, tuple) and msg[0] == "packet":
                self._accept(msg[1])
            elif isinstance(msg, tuple) and msg[0] == "complete":
                self._assemblers.pop(msg[1], None)
                self._forward(msg[2])
            elif isinstance(msg, tuple) and msg[0] == "timeout":
                self._assemblers.pop(msg[1], None)

    def _accept(self, packet: wire.Ipv4Packet) -> None:
        if packet.dst_ip not in (self.our_ip, BROADCAST_IP,
                                 addr.subnet_broadcast(self.our_ip, self.netmask)):
            self.counters.incr("ip.drop.not_ours")
            return
        if packet.ttl == 0:
            self.counters.incr("ip.drop.ttl")
            return
        if packet.is_fragment:
            self._to_assembler(packet)
        else:
            self._forward(packet)

    def _forward(self, packet: wire.Ipv4Packet) -> None:
        try:
            self.dispatch_q.send(packet)
        except Closed:
            pass

    def _to_assembler(self, packet: wire.Ipv4Packet) -> None:
        key = FragmentKey(packet.src_ip, packet.dst_ip,
                          packet.protocol, packet.identification)
        inbox = self._assemblers.get(key)
        if inbox is None:
            inbox = MessageQueue(self.inbound.capacity)
            self._assemblers[key] = inbox
            assembler = _Assembler(key, inbox, self.inbound,
                                   self.reassembly_timeout_s, self.counters)
            self.tasks.spawn(f"ip-assembler-{key.identification}", assembler.run)
        try:
            inbox.send(packet)
        except Closed:
            pass

    def _reader_loop(self) -> None:
        while True:
            try:
                packet = self.dispatch_q.recv()
            except Closed:
                return
            self.registry.dispatch(
                packet.protocol,
                IpDatagram(src=packet.src_ip, dst=packet.dst_ip,
                           protocol=packet.protocol, payload=packet.payload))

    # --- outbound ---

    def next_identification(self) -> int:
        with self._ident_lock:
            return next(self._ident) & 0xFFFF

    def send(self, dst: bytes, protocol: int, payload: bytes) -> None:
        """Route, resolve, fragment if needed, and emit one datagram."""
        if len(payload) > 65515:
            raise LengthError(f"ip payload of {len(payload)} bytes exceeds 65515")
        dst = bytes(dst)
        if dst == self.our_ip:
            # loopback: straight back into our own inbound path
            packet = wire.Ipv4Packet(src_ip=self.our_ip, dst_ip=dst,
                                     protocol=protocol, payload=payload,
                                     identification=self.next_identification())
            try:
                self.inbound.send(("packet", packet))
            except Closed:
                pass
            return
        dst_mac = self._resolve_next_hop(dst)
        ident = self.next_identification()
        for offset_units, more, chunk in fragment_payload(payload, self.mtu):
            packet = wire.Ipv4Packet(src_ip=self.our_ip, dst_ip=dst,
                                     protocol=protocol, payload=chunk,
                                     identification=ident, mf=more,
                                     fragment_offset=offset_units)
            self.eth.send(dst_mac, wire.ETHERTYPE_IPV4, packet.encode())

    def _resolve_next_hop(self, dst: bytes) -> bytes:
        if dst in (BROADCAST_IP, addr.subnet_broadcast(self.our_ip, self.netmask)):
            return b"\xff" * 6
        if addr.same_subnet(dst, self.our_ip, self.netmask):
            next_hop = dst
        elif self.gateway is not None:
            next_hop = self.gateway
        else:
            raise NoRoute(f"{addr.format_ip(dst)} is off-subnet and no gateway is set")
        return self.arp.resolve(next_hop)
