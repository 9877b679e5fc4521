"""ICMP echo: a responder pool for requests, matched waiters for replies."""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field

from netstack import addr, wire
from netstack.csp import Counters, MessageQueue, TaskSet
from netstack.errors import Closed, NetstackError, Timeout, WireError


@dataclass
class PingStats:
    sent: int
    received: int
    loss: float
    min_ms: float
    avg_ms: float
    max_ms: float
    rtts_ms: list = field(default_factory=list)


class IcmpPing:
    def __init__(self, ipv4, config, counters: Counters, tasks: TaskSet):
        self.ipv4 = ipv4
        self.counters = counters
        self.tasks = tasks
        self.responders = config.icmp_responders
        self.inbound = MessageQueue(config.queue_capacity)
        self.respond_q = MessageQueue(config.queue_capacity)
        self._waiters = {}  # (identifier, sequence) -> reply queue
        self._waiters_lock = threading.Lock()
        self._ident = itertools.count(1)

    def start(self) -> None:
        self.ipv4.registry.bind(wire.PROTO_ICMP, self.inbound)
        self.tasks.spawn("ping-dealer", self._dealer_loop)
        for i in range(self.responders):
            self.tasks.spawn(f"ping-responder-{i}", self._responder_loop)

    def waiter_count(self) -> int:
        with self._waiters_lock:
            return len(self._waiters)

    # --- inbound ---

    def _dealer_loop(self) -> None:
        while True:
            try:
                datagram = self.inbound.recv()
            except Closed:
                self.respond_q.close()
                return
            try:
                echo = wire.decode("icmp", datagram.payload)
            except WireError:
                self.counters.incr("icmp.drop.decode")
                continue
            if echo.icmp_type == wire.ICMP_ECHO_REQUEST:
                try:
                    self.respond_q.send((datagram.src, echo))
                except Closed:
                    return
            else:
                self._route_reply(echo)

    def _route_reply(self, echo: wire.IcmpEcho) -> None:
        with self._waiters_lock:
            reply_q = self._waiters.pop((echo.identifier, echo.sequence), None)
        if reply_q is None:
            self.counters.incr("icmp.drop.late")
            return
        try:
            reply_q.send_nowait((time.perf_counter(), echo))
        except Closed:
            self.counters.incr("icmp.drop.late")

    def _responder_loop(self) -> None:
        while True:
            try:
                src, request = self.respond_q.recv()
            except Closed:
                return
            reply = wire.IcmpEcho(icmp_type=wire.ICMP_ECHO_REPLY,
                                  identifier=request.identifier,
                                  sequence=request.sequence,
                                  data=request.data)
            try:
                self.ipv4.send(src, wire.PROTO_ICMP, reply.encode())
            except NetstackError:
                self.counters.incr("icmp.drop.reply_unroutable")

    # --- outbound ---

    def ping(self, dst, count: int = 4, interval: float = 1.0,
             size: int = 56, timeout: float = 1.0) -> PingStats:
        """Send count echo requests and gather round-trip statistics.

        An unanswered request counts as loss after the per-request
        timeout; resolution failures count the same way rather than
        aborting the run.
        """
        dst = addr.as_ip(dst)
        identifier = next(self._ident) & 0xFFFF
        data = bytes(i & 0xFF for i in range(size))
        rtts = []
        for sequence in range(count):
            started = time.perf_counter()
            rtt = self._one_ping(dst, identifier, sequence, data, timeout)
            if rtt is not None:
                rtts.append(rtt * 1000.0)
            if sequence + 1 < count:
                remaining = interval - (time.perf_counter() - started)
                if remaining > 0:
                    time.sleep(remaining)
        received = len(rtts)
        return PingStats(
            sent=count, received=received,
            loss=1.0 - received / count if count else 0.0,
            min_ms=min(rtts) if rtts else 0.0,
            avg_ms=sum(rtts) / received if rtts else 0.0,
            max_ms=max(rtts) if rtts else 0.0,
            rtts_ms=rtts,
        )

    def _one_ping(self, dst, identifier, sequence, data, timeout) -> float | None:
        reply_q = MessageQueue(1)
        key = (identifier, sequence)
        with self._waiters_lock:
            self._waiters[key] = reply_q
        request = wire.IcmpEcho(icmp_type=wire.ICMP_ECHO_REQUEST,
                                identifier=identifier, sequence=sequence, data=data)
        sent_at = time.perf_counter()
        try:
            self.ipv4.send(dst, wire.PROTO_ICMP, request.encode())
        except NetstackError:
            with self._waiters_lock:
                self._waiters.pop(key, None)
            return None
        try:
            arrived_at, _echo = reply_q.recv(timeout=timeout)
        except (Timeout, Closed):
            with self._waiters_lock:
                self._waiters.pop(key, None)
            return None
        return arrived_at - sent_at
