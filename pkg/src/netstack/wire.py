"""Header codecs and the Internet checksum.

Everything here is a pure function over bytes: encoding computes length
and checksum fields itself rather than trusting the caller, decoding
verifies them and never reads past the end of its input.  All layouts
are network byte order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from netstack.errors import (
    ChecksumMismatch,
    LengthError,
    TruncatedFrame,
    Unsupported,
)

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

ARP_REQUEST = 1
ARP_REPLY = 2

ICMP_ECHO_REPLY = 0
ICMP_ECHO_REQUEST = 8

ETH_HEADER = 14
IP_HEADER = 20

_FIN = 0x01
_SYN = 0x02
_RST = 0x04
_PSH = 0x08
_ACK = 0x10
_URG = 0x20


def internet_checksum(data: bytes) -> int:
    """One's-complement checksum over big-endian 16-bit words.

    Odd-length input is padded with a zero byte for summation only.
    Placing the result in the checksum field makes a re-run over the
    same region yield 0.
    """
    if len(data) % 2:
        data = data + b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    total = (total & 0xFFFF) + (total >> 16)
    total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def transport_checksum(src_ip: bytes, dst_ip: bytes, protocol: int, segment: bytes) -> int:
    """Checksum over the IPv4 pseudo-header followed by the segment."""
    if len(segment) > 0xFFFF:
        raise LengthError(f"segment of {len(segment)} bytes exceeds 65535")
    pseudo = struct.pack("!4s4sBBH", bytes(src_ip), bytes(dst_ip), 0, protocol, len(segment))
    return internet_checksum(pseudo + segment)


def _need(data: bytes, n: int, what: str) -> None:
    if len(data) < n:
        raise TruncatedFrame(f"{what}: have {len(data)} bytes, need {n}")


@dataclass
class EthernetFrame:
    dst_mac: bytes
    src_mac: bytes
    ethertype: int
    payload: bytes = b""

    def encode(self) -> bytes:
        return struct.pack("!6s6sH", self.dst_mac, self.src_mac, self.ethertype) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "EthernetFrame":
        _need(data, ETH_HEADER, "ethernet header")
        dst, src, etype = struct.unpack_from("!6s6sH", data)
        return cls(dst_mac=dst, src_mac=src, ethertype=etype, payload=bytes(data[ETH_HEADER:]))


@dataclass
class ArpPacket:
    opcode: int
    sender_mac: bytes
    sender_ip: bytes
    target_mac: bytes
    target_ip: bytes

    def encode(self) -> bytes:
        return struct.pack(
            "!HHBBH6s4s6s4s",
            1, ETHERTYPE_IPV4, 6, 4, self.opcode,
            self.sender_mac, self.sender_ip, self.target_mac, self.target_ip,
        )

    @classmethod
    def decode(cls, data: bytes) -> "ArpPacket":
        _need(data, 28, "arp packet")
        hw, proto, hlen, plen, op, smac, sip, tmac, tip = struct.unpack_from("!HHBBH6s4s6s4s", data)
        if hw != 1 or proto != ETHERTYPE_IPV4 or hlen != 6 or plen != 4:
            raise Unsupported(f"arp for hw={hw} proto={proto:#x}")
        if op not in (ARP_REQUEST, ARP_REPLY):
            raise Unsupported(f"arp opcode {op}")
        return cls(opcode=op, sender_mac=smac, sender_ip=sip, target_mac=tmac, target_ip=tip)


@dataclass
class Ipv4Packet:
    src_ip: bytes
    dst_ip: bytes
    protocol: int
    payload: bytes = b""
    identification: int = 0
    ttl: int = 64
    df: bool = False
    mf: bool = False
    fragment_offset: int = 0  # in 8-byte units
    dscp_ecn: int = 0

    @property
    def is_fragment(self) -> bool:
        return self.mf or self.fragment_offset != 0

    def encode(self) -> bytes:
        if len(self.payload) > 65515:
            raise LengthError(f"ipv4 payload of {len(self.payload)} bytes exceeds 65515")
        if self.fragment_offset > 0x1FFF:
            raise LengthError(f"fragment offset {self.fragment_offset} exceeds 13 bits")
        flags_frag = (self.df << 14) | (self.mf << 13) | self.fragment_offset
        head = struct.pack(
            "!BBHHHBBH4s4s",
            0x45, self.dscp_ecn, IP_HEADER + len(self.payload),
            self.identification, flags_frag, self.ttl, self.protocol, 0,
            self.src_ip, self.dst_ip,
        )
        head = head[:10] + struct.pack("!H", internet_checksum(head)) + head[12:]
        return head + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Ipv4Packet":
        _need(data, IP_HEADER, "ipv4 header")
        ver_ihl, dscp, total, ident, flags_frag, ttl, proto, _csum, src, dst = \
            struct.unpack_from("!BBHHHBBH4s4s", data)
        if ver_ihl >> 4 != 4:
            raise Unsupported(f"ip version {ver_ihl >> 4}")
        if ver_ihl & 0x0F != 5:
            raise Unsupported("ipv4 options")
        if total < IP_HEADER:
            raise TruncatedFrame(f"ipv4 total_length {total} below header size")
        _need(data, total, "ipv4 packet")
        if internet_checksum(data[:IP_HEADER]) != 0:
            raise ChecksumMismatch("ipv4 header checksum")
        return cls(
            src_ip=src, dst_ip=dst, protocol=proto,
            payload=bytes(data[IP_HEADER:total]),
            identification=ident, ttl=ttl,
            df=bool(flags_frag & 0x4000), mf=bool(flags_frag & 0x2000),
            fragment_offset=flags_frag & 0x1FFF, dscp_ecn=dscp,
        )


@dataclass
class IcmpEcho:
    icmp_type: int  # 8 request, 0 reply
    identifier: int
    sequence: int
    data: bytes = b""
    code: int = 0

    def encode(self) -> bytes:
        head = struct.pack("!BBHHH", self.icmp_type, self.code, 0,
                           self.identifier, self.sequence)
        c = internet_checksum(head + self.data)
        return head[:2] + struct.pack("!H", c) + head[4:] + self.data

    @classmethod
    def decode(cls, data: bytes) -> "IcmpEcho":
        _need(data, 8, "icmp header")
        if internet_checksum(data) != 0:
            raise ChecksumMismatch("icmp checksum")
        itype, code, _csum, ident, seq = struct.unpack_from("!BBHHH", data)
        if itype not in (ICMP_ECHO_REQUEST, ICMP_ECHO_REPLY) or code != 0:
            raise Unsupported(f"icmp type {itype} code {code}")
        return cls(icmp_type=itype, identifier=ident, sequence=seq, data=bytes(data[8:]))


@dataclass
class UdpDatagram:
    src_port: int
    dst_port: int
    payload: bytes = b""

    def encode(self, src_ip: bytes, dst_ip: bytes) -> bytes:
        if len(self.payload) > 65507:
            raise LengthError(f"udp payload of {len(self.payload)} bytes exceeds 65507")
        head = struct.pack("!HHHH", self.src_port, self.dst_port, 8 + len(self.payload), 0)
        c = transport_checksum(src_ip, dst_ip, PROTO_UDP, head + self.payload)
        if c == 0:  # 0 means "unchecked" on the wire, so send its alias instead
            c = 0xFFFF
        return head[:6] + struct.pack("!H", c) + self.payload

    @classmethod
    def decode(cls, data: bytes, src_ip: bytes = None, dst_ip: bytes = None) -> "UdpDatagram":
        _need(data, 8, "udp header")
        sport, dport, length, csum = struct.unpack_from("!HHHH", data)
        if length < 8:
            raise TruncatedFrame(f"udp length field {length} below header size")
        _need(data, length, "udp datagram")
        if csum != 0 and src_ip is not None and dst_ip is not None:
            if transport_checksum(src_ip, dst_ip, PROTO_UDP, data[:length]) != 0:
                raise ChecksumMismatch("udp checksum")
        return cls(src_port=sport, dst_port=dport, payload=bytes(data[8:length]))


@dataclass
class TcpSegment:
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    window: int = 65535
    flag_fin: bool = False
    flag_syn: bool = False
    flag_rst: bool = False
    flag_ack: bool = False
    flag_psh: bool = False
    flag_urg: bool = False
    mss: int | None = None  # the only option emitted; carried on SYNs
    payload: bytes = b""

    def flags_byte(self) -> int:
        return ((self.flag_fin and _FIN) | (self.flag_syn and _SYN)
                | (self.flag_rst and _RST) | (self.flag_psh and _PSH)
                | (self.flag_ack and _ACK) | (self.flag_urg and _URG))

    def seq_span(self) -> int:
        """Sequence numbers this segment occupies (SYN and FIN count as one each)."""
        return len(self.payload) + bool(self.flag_syn) + bool(self.flag_fin)

    def encode(self, src_ip: bytes, dst_ip: bytes) -> bytes:
        options = b"" if self.mss is None else struct.pack("!BBH", 2, 4, self.mss)
        offset_words = 5 + len(options) // 4
        head = struct.pack(
            "!HHIIBBHHH",
            self.src_port, self.dst_port, self.seq, self.ack,
            offset_words << 4, self.flags_byte(), self.window, 0, 0,
        )
        seg = head + options + self.payload
        if len(seg) > 65535:
            raise LengthError(f"tcp segment of {len(seg)} bytes exceeds 65535")
        c = transport_checksum(src_ip, dst_ip, PROTO_TCP, seg)
        return seg[:16] + struct.pack("!H", c) + seg[18:]

    @classmethod
    def decode(cls, data: bytes, src_ip: bytes = None, dst_ip: bytes = None) -> "TcpSegment":
        _need(data, 20, "tcp header")
        sport, dport, seq, ack, off_byte, flags, window, _csum, _urgp = \
            struct.unpack_from("!HHIIBBHHH", data)
        offset = (off_byte >> 4) * 4
        if offset < 20:
            raise Unsupported(f"tcp data offset {offset}")
        _need(data, offset, "tcp options")
        if src_ip is not None and dst_ip is not None:
            if transport_checksum(src_ip, dst_ip, PROTO_TCP, data) != 0:
                raise ChecksumMismatch("tcp checksum")
        mss = None
        i = 20
        while i < offset:
            kind = data[i]
            if kind == 0:  # end of options
                break
            if kind == 1:  # nop
                i += 1
                continue
            if i + 1 >= offset:
                raise TruncatedFrame("tcp option length missing")
            olen = data[i + 1]
            if olen < 2 or i + olen > offset:
                raise TruncatedFrame("tcp option overruns header")
            if kind == 2 and olen == 4:
                mss = struct.unpack_from("!H", data, i + 2)[0]
            i += olen
        return cls(
            src_port=sport, dst_port=dport, seq=seq, ack=ack, window=window,
            flag_fin=bool(flags & _FIN), flag_syn=bool(flags & _SYN),
            flag_rst=bool(flags & _RST), flag_ack=bool(flags & _ACK),
            flag_psh=bool(flags & _PSH), flag_urg=bool(flags & _URG),
            mss=mss, payload=bytes(data[offset:]),
        )


_LAYERS = {
    "ethernet": EthernetFrame,
    "arp": ArpPacket,
    "ipv4": Ipv4Packet,
    "icmp": IcmpEcho,
    "udp": UdpDatagram,
    "tcp": TcpSegment,
}

_NEEDS_ADDRESSES = (UdpDatagram, TcpSegment)


def decode(layer: str, data: bytes, src_ip: bytes = None, dst_ip: bytes = None):
    """Decode data as the named layer's unit, checking its invariants."""
    cls = _LAYERS[layer]
    if cls in _NEEDS_ADDRESSES:
        return cls.decode(data, src_ip=src_ip, dst_ip=dst_ip)
    return cls.decode(data)


def encode(unit, src_ip: bytes = None, dst_ip: bytes = None) -> bytes:
    """Encode any protocol unit; UDP and TCP need addresses for their checksum."""
    if isinstance(unit, _NEEDS_ADDRESSES):
        return unit.encode(src_ip, dst_ip)
    return unit.encode()
