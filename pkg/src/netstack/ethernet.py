"""Ethernet: ethertype demux inbound, framing outbound.

The link reader pumps raw frames into the dealer's inbox with a
non-blocking send, modelling a NIC ring that overflows rather than
stalling the wire.  Everything above this layer blocks instead.
"""

from __future__ import annotations

from netstack import wire
from netstack.csp import BindingRegistry, Counters, MessageQueue, TaskSet
from netstack.errors import Closed, FrameTooLarge, WireError


class EthernetLayer:
    def __init__(self, device, mac: bytes, counters: Counters, tasks: TaskSet,
                 queue_capacity: int):
        self.device = device
        self.mac = mac
        self.counters = counters
        self.tasks = tasks
        self.registry = BindingRegistry("eth", counters)  # ethertype -> queue
        self.inbound = MessageQueue(queue_capacity)

    def start(self) -> None:
        self.tasks.spawn("link-reader", self._read_loop)
        self.tasks.spawn("eth-dealer", self._dealer_loop)

    def _read_loop(self) -> None:
        while True:
            try:
                frame = self.device.read_frame()
            except Closed:
                self.inbound.close()
                return
            try:
                if not self.inbound.send_nowait(frame):
                    self.counters.incr("link.drop.overflow")
            except Closed:
                return

    def _dealer_loop(self) -> None:
        while True:
            try:
                raw = self.inbound.recv()
            except Closed:
                return
            try:
                frame = wire.decode("ethernet", raw)
            except WireError:
                self.counters.incr("eth.drop.decode")
                continue
            if frame.dst_mac != self.mac and frame.dst_mac != b"\xff" * 6:
                self.counters.incr("eth.drop.foreign")
                continue
            self.registry.dispatch(frame.ethertype, frame)

    def send(self, dst_mac: bytes, ethertype: int, payload: bytes) -> None:
        """Frame payload with our source MAC and put it on the wire."""
        if len(payload) > self.device.mtu:
            raise FrameTooLarge(f"{len(payload)} bytes exceeds mtu {self.device.mtu}")
        raw = wire.EthernetFrame(dst_mac=dst_mac, src_mac=self.mac,
                                 ethertype=ethertype, payload=payload).encode()
        try:
            self.device.write_frame(raw)
        except Closed:
            # the stack is coming down around us; nothing useful to do
            self.counters.incr("eth.drop.device_closed")
