"""Encapsulation codecs for the three tunneling schemes.

Header layouts (network byte order):

    Ipv4Header            20 bytes  ver/ihl, tos, total_len, id, frag, ttl, proto, csum, src, dst
    CompactOuterIpHeader  12 bytes  src, dst, proto, reserved, payload_len
    UdpHeader              8 bytes  src_port, dst_port, length, checksum
    GtpUHeader             8 bytes  flags, msg_type, length, teid
    GreHeader              8 bytes  flags (K bit set), protocol_type, key

Only sizes and named fields matter to the models; every other field is zero.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Iterator, Optional, Union


class CodecError(ValueError):
    pass


class InvalidSchemeError(CodecError):
    pass


class IncompleteAddressingError(CodecError):
    pass


class MalformedFrameError(CodecError):
    pass


class SchemeMismatchError(CodecError):
    pass


class Protocol(IntEnum):
    IP_IN_IP = 4
    UDP = 17
    GRE = 47
    OTHER = 253  # RFC 3692 experimental; marks user payload


class Scheme(str, Enum):
    GTP_4G = "GTP_4G"
    IPINIP_ICNA = "IPINIP_ICNA"
    GRE_HANDOVER = "GRE_HANDOVER"
    NONE = "NONE"


OUTER_COMPACT = "compact"
OUTER_STANDARD = "standard"

GTPU_PORT = 2152
GTPU_FLAGS = 0x30  # version 1, PT=1
GTPU_GPDU = 0xFF
GRE_KEY_PRESENT = 0x2000
ETHERTYPE_IPV4 = 0x0800

_U32 = 0xFFFFFFFF


def _check_u32(name: str, value: int) -> None:
    if not 0 <= value <= _U32:
        raise ValueError(f"{name} out of 32-bit range: {value}")


@dataclass(frozen=True)
class Ipv4Header:
    src: int
    dst: int
    protocol: Protocol = Protocol.OTHER
    total_length_bytes: int = 20

    SIZE = 20
    _FMT = struct.Struct("!BBHHHBBHII")

    @property
    def version(self) -> int:
        return 4

    @property
    def header_length_bytes(self) -> int:
        return self.SIZE

    def encode(self) -> bytes:
        return self._FMT.pack(0x45, 0, self.total_length_bytes, 0, 0, 0,
                              int(self.protocol), 0, self.src, self.dst)

    @classmethod
    def decode(cls, data: bytes) -> "Ipv4Header":
        if len(data) < cls.SIZE:
            raise MalformedFrameError(f"IPv4 header needs {cls.SIZE} bytes, got {len(data)}")
        vihl, _, total, _, _, _, proto, _, src, dst = cls._FMT.unpack_from(data)
        if vihl != 0x45:
            raise MalformedFrameError(f"bad IPv4 version/IHL byte 0x{vihl:02x}")
        return cls(src, dst, _protocol(proto), total)


@dataclass(frozen=True)
class CompactOuterIpHeader:
    src: int
    dst: int
    protocol: Protocol = Protocol.IP_IN_IP
    payload_length_bytes: int = 0

    SIZE = 12
    _FMT = struct.Struct("!IIBBH")

    def encode(self) -> bytes:
        return self._FMT.pack(self.src, self.dst, int(self.protocol), 0,
                              self.payload_length_bytes)

    @classmethod
    def decode(cls, data: bytes) -> "CompactOuterIpHeader":
        if len(data) < cls.SIZE:
            raise MalformedFrameError(f"compact outer header needs {cls.SIZE} bytes, got {len(data)}")
        src, dst, proto, _, plen = cls._FMT.unpack_from(data)
        return cls(src, dst, _protocol(proto), plen)


@dataclass(frozen=True)
class UdpHeader:
    src_port: int = GTPU_PORT
    dst_port: int = GTPU_PORT
    length_bytes: int = 8
    checksum: int = 0

    SIZE = 8
    _FMT = struct.Struct("!HHHH")

    def encode(self) -> bytes:
        return self._FMT.pack(self.src_port, self.dst_port, self.length_bytes, self.checksum)

    @classmethod
    def decode(cls, data: bytes) -> "UdpHeader":
        if len(data) < cls.SIZE:
            raise MalformedFrameError(f"UDP header needs {cls.SIZE} bytes, got {len(data)}")
        return cls(*cls._FMT.unpack_from(data))


@dataclass(frozen=True)
class GtpUHeader:
    teid: int
    message_type: int = GTPU_GPDU
    length_bytes: int = 0
    flags: int = GTPU_FLAGS

    SIZE = 8
    _FMT = struct.Struct("!BBHI")

    def encode(self) -> bytes:
        return self._FMT.pack(self.flags, self.message_type, self.length_bytes, self.teid)

    @classmethod
    def decode(cls, data: bytes) -> "GtpUHeader":
        if len(data) < cls.SIZE:
            raise MalformedFrameError(f"GTP-U header needs {cls.SIZE} bytes, got {len(data)}")
        flags, mtype, length, teid = cls._FMT.unpack_from(data)
        return cls(teid, mtype, length, flags)


@dataclass(frozen=True)
class GreHeader:
    key: int
    protocol_type: int = ETHERTYPE_IPV4
    flags: int = GRE_KEY_PRESENT

    SIZE = 8
    _FMT = struct.Struct("!HHI")

    def encode(self) -> bytes:
        return self._FMT.pack(self.flags | GRE_KEY_PRESENT, self.protocol_type, self.key)

    @classmethod
    def decode(cls, data: bytes) -> "GreHeader":
        if len(data) < cls.SIZE:
            raise MalformedFrameError(f"GRE header needs {cls.SIZE} bytes, got {len(data)}")
        flags, ptype, key = cls._FMT.unpack_from(data)
        if not flags & GRE_KEY_PRESENT:
            raise MalformedFrameError("GRE header without key-present flag")
        return cls(key, ptype, flags)


Header = Union[Ipv4Header, CompactOuterIpHeader, UdpHeader, GtpUHeader, GreHeader]


def _protocol(value: int) -> Protocol:
    try:
        return Protocol(value)
    except ValueError:
        return Protocol.OTHER


@dataclass(frozen=True)
class Addressing:
    """Addresses and tunnel ids for one frame.

    ``src``/``dst`` are the outermost (locator or delivery) addresses.
    ``inner_src``/``inner_dst`` are only used by IP-in-IP; ``teid`` by GTP;
    ``key`` by GRE.
    """

    src: Optional[int] = None
    dst: Optional[int] = None
    inner_src: Optional[int] = None
    inner_dst: Optional[int] = None
    teid: Optional[int] = None
    key: Optional[int] = None


_REQUIRED = {
    Scheme.GTP_4G: ("src", "dst", "teid"),
    Scheme.IPINIP_ICNA: ("src", "dst", "inner_src", "inner_dst"),
    Scheme.GRE_HANDOVER: ("src", "dst", "key"),
    Scheme.NONE: (),
}


def required_fields(scheme: Scheme) -> tuple:
    return _REQUIRED[_scheme(scheme)]


def _scheme(scheme) -> Scheme:
    try:
        return Scheme(scheme)
    except ValueError:
        raise InvalidSchemeError(f"unknown scheme {scheme!r}") from None


def _outer_types(outer_header: str) -> tuple:
    if outer_header == OUTER_COMPACT:
        return (CompactOuterIpHeader,)
    if outer_header == OUTER_STANDARD:
        return (Ipv4Header,)
    raise ValueError(f"unknown outer header mode {outer_header!r}")


def header_layout(scheme, outer_header: str = OUTER_COMPACT) -> tuple:
    """Header classes, outermost first, for ``scheme``."""
    scheme = _scheme(scheme)
    if scheme is Scheme.GTP_4G:
        return (Ipv4Header, UdpHeader, GtpUHeader)
    if scheme is Scheme.IPINIP_ICNA:
        return _outer_types(outer_header) + (Ipv4Header,)
    if scheme is Scheme.GRE_HANDOVER:
        return (Ipv4Header, GreHeader)
    return ()


def header_bytes(scheme, outer_header: str = OUTER_COMPACT) -> int:
    return sum(h.SIZE for h in header_layout(scheme, outer_header))


@dataclass(frozen=True)
class EncapsulatedFrame:
    scheme: Scheme
    headers: tuple
    payload_bytes: bytes = b""

    def __post_init__(self):
        got = tuple(type(h) for h in self.headers)
        allowed = {header_layout(self.scheme, OUTER_COMPACT),
                   header_layout(self.scheme, OUTER_STANDARD)}
        if got not in allowed:
            names = ",".join(t.__name__ for t in got)
            raise SchemeMismatchError(f"header order [{names}] does not match {self.scheme.value}")

    @property
    def header_bytes(self) -> int:
        return sum(h.SIZE for h in self.headers)

    @property
    def size(self) -> int:
        return self.header_bytes + len(self.payload_bytes)

    @property
    def outer_header(self) -> str:
        if self.scheme is Scheme.IPINIP_ICNA and isinstance(self.headers[0], Ipv4Header):
            return OUTER_STANDARD
        return OUTER_COMPACT

    def encode(self) -> bytes:
        return b"".join(h.encode() for h in self.headers) + self.payload_bytes

    def hex(self) -> str:
        return self.encode().hex()


@dataclass(frozen=True)
class Decapsulated:
    scheme: Scheme
    addressing: Addressing
    payload: bytes


def encapsulate(scheme, addressing: Addressing, payload: bytes = b"",
                outer_header: str = OUTER_COMPACT) -> EncapsulatedFrame:
    scheme = _scheme(scheme)
    payload = bytes(payload)
    missing = [f for f in _REQUIRED[scheme] if getattr(addressing, f) is None]
    if missing:
        raise IncompleteAddressingError(f"{scheme.value} needs {', '.join(missing)}")
    for f in _REQUIRED[scheme]:
        _check_u32(f, getattr(addressing, f))
    n = len(payload)
    if header_bytes(scheme, outer_header) + n > 0xFFFF:
        raise CodecError(f"{n}-byte payload overflows the 16-bit length fields")
    a = addressing

    if scheme is Scheme.GTP_4G:
        gtp = GtpUHeader(teid=a.teid, length_bytes=n)
        udp = UdpHeader(length_bytes=UdpHeader.SIZE + GtpUHeader.SIZE + n)
        ip = Ipv4Header(a.src, a.dst, Protocol.UDP, Ipv4Header.SIZE + udp.length_bytes)
        headers = (ip, udp, gtp)
    elif scheme is Scheme.IPINIP_ICNA:
        inner = Ipv4Header(a.inner_src, a.inner_dst, Protocol.OTHER, Ipv4Header.SIZE + n)
        if outer_header == OUTER_STANDARD:
            outer = Ipv4Header(a.src, a.dst, Protocol.IP_IN_IP,
                               Ipv4Header.SIZE + inner.total_length_bytes)
        elif outer_header == OUTER_COMPACT:
            outer = CompactOuterIpHeader(a.src, a.dst, Protocol.IP_IN_IP, inner.total_length_bytes)
        else:
            raise ValueError(f"unknown outer header mode {outer_header!r}")
        headers = (outer, inner)
    elif scheme is Scheme.GRE_HANDOVER:
        ip = Ipv4Header(a.src, a.dst, Protocol.GRE, Ipv4Header.SIZE + GreHeader.SIZE + n)
        headers = (ip, GreHeader(key=a.key))
    else:
        headers = ()
    return EncapsulatedFrame(scheme, headers, payload)


def decode_frame(data: bytes, scheme, outer_header: str = OUTER_COMPACT) -> EncapsulatedFrame:
    """Parse raw bytes claimed to be a frame of ``scheme``."""
    scheme = _scheme(scheme)
    data = bytes(data)
    layout = header_layout(scheme, outer_header)
    need = sum(h.SIZE for h in layout)
    if len(data) < need:
        raise MalformedFrameError(
            f"{scheme.value} frame needs at least {need} bytes, got {len(data)}")
    headers = []
    off = 0
    for cls in layout:
        headers.append(cls.decode(data[off:off + cls.SIZE]))
        off += cls.SIZE
    payload = data[off:]
    _check_chain(scheme, headers, len(payload))
    return EncapsulatedFrame(scheme, tuple(headers), payload)


def _check_chain(scheme: Scheme, headers: list, payload_len: int) -> None:
    if scheme is Scheme.GTP_4G:
        ip, udp, gtp = headers
        if ip.protocol is not Protocol.UDP:
            raise SchemeMismatchError(f"GTP_4G outer IP carries {ip.protocol.name}, not UDP")
        if udp.dst_port != GTPU_PORT:
            raise SchemeMismatchError(f"UDP port {udp.dst_port} is not GTP-U")
        expected = ip.total_length_bytes - Ipv4Header.SIZE - UdpHeader.SIZE - GtpUHeader.SIZE
    elif scheme is Scheme.IPINIP_ICNA:
        outer, inner = headers
        if outer.protocol is not Protocol.IP_IN_IP:
            raise SchemeMismatchError(f"outer header carries {outer.protocol.name}, not IP-in-IP")
        expected = inner.total_length_bytes - Ipv4Header.SIZE
    elif scheme is Scheme.GRE_HANDOVER:
        ip, _ = headers
        if ip.protocol is not Protocol.GRE:
            raise SchemeMismatchError(f"delivery IP carries {ip.protocol.name}, not GRE")
        expected = ip.total_length_bytes - Ipv4Header.SIZE - GreHeader.SIZE
    else:
        return
    if expected != payload_len:
        raise MalformedFrameError(
            f"length fields announce {expected} payload bytes, frame has {payload_len}")


def decapsulate(frame: Union[EncapsulatedFrame, bytes], scheme=None,
                outer_header: str = OUTER_COMPACT) -> Decapsulated:
    if not isinstance(frame, EncapsulatedFrame):
        if scheme is None:
            raise InvalidSchemeError("raw bytes need an explicit scheme")
        frame = decode_frame(frame, scheme, outer_header)
    elif scheme is not None and _scheme(scheme) is not frame.scheme:
        raise SchemeMismatchError(f"frame is {frame.scheme.value}, expected {Scheme(scheme).value}")

    h = frame.headers
    s = frame.scheme
    if s is Scheme.GTP_4G:
        addr = Addressing(src=h[0].src, dst=h[0].dst, teid=h[2].teid)
    elif s is Scheme.IPINIP_ICNA:
        addr = Addressing(src=h[0].src, dst=h[0].dst, inner_src=h[1].src, inner_dst=h[1].dst)
    elif s is Scheme.GRE_HANDOVER:
        addr = Addressing(src=h[0].src, dst=h[0].dst, key=h[1].key)
    else:
        addr = Addressing()
    return Decapsulated(s, addr, frame.payload_bytes)


def tunneling_overhead_percent(scheme, payload_bytes: int,
                               outer_header: str = OUTER_COMPACT) -> float:
    """Share of the frame taken by tunnel headers, in percent."""
    if payload_bytes < 0:
        raise ValueError(f"payload size must be >= 0, got {payload_bytes}")
    hdr = header_bytes(scheme, outer_header)
    total = hdr + payload_bytes
    if total == 0:
        raise ValueError("overhead undefined for an empty frame with no headers")
    return hdr / total * 100.0


def measured_overhead_percent(frame: EncapsulatedFrame) -> float:
    """Overhead counted from the encoded bytes of an actual frame."""
    raw = frame.encode()
    return (len(raw) - len(frame.payload_bytes)) / len(raw) * 100.0


# -- golden vectors ---------------------------------------------------------

def golden_frames() -> list:
    """Fixed frames pinned by the repository's golden hex file."""
    pay = bytes(range(16))
    return [
        encapsulate(Scheme.GTP_4G, Addressing(src=0xC0A80001, dst=0xC0A80002, teid=7), pay),
        encapsulate(Scheme.GTP_4G, Addressing(src=0xC0A80003, dst=0xC0A80004, teid=0xDEADBEEF), b""),
        encapsulate(Scheme.IPINIP_ICNA,
                    Addressing(src=0xC0A80001, dst=0xC0A80064, inner_src=0x0A000001, inner_dst=0x08080808),
                    pay),
        encapsulate(Scheme.IPINIP_ICNA,
                    Addressing(src=0xC0A80001, dst=0xC0A80064, inner_src=0x0A000001, inner_dst=0x08080808),
                    pay, outer_header=OUTER_STANDARD),
        encapsulate(Scheme.GRE_HANDOVER, Addressing(src=0xC0A80001, dst=0xC0A80002, key=1), pay),
        encapsulate(Scheme.NONE, Addressing(), pay),
    ]


def format_vectors(frames: Iterable[EncapsulatedFrame]) -> str:
    return "".join(f"{f.scheme.value} {f.hex()}\n" for f in frames)


def parse_vectors(text: str) -> Iterator[tuple]:
    """Yield ``(scheme, raw_bytes)`` from ``<scheme> <hex>`` lines."""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) == 1:
            parts.append("")
        if len(parts) != 2:
            raise MalformedFrameError(f"line {lineno}: expected '<scheme> <hex>'")
        try:
            raw = bytes.fromhex(parts[1])
        except ValueError:
            raise MalformedFrameError(f"line {lineno}: bad hex") from None
        yield _scheme(parts[0]), raw


def decode_vector(scheme: Scheme, raw: bytes) -> EncapsulatedFrame:
    """Decode a golden vector, detecting the outer header mode for IP-in-IP."""
    if scheme is Scheme.IPINIP_ICNA and raw[:1] == b"\x45" and len(raw) >= 40:
        try:
            return decode_frame(raw, scheme, OUTER_STANDARD)
        except (MalformedFrameError, SchemeMismatchError):
            pass
    return decode_frame(raw, scheme)
