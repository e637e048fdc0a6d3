"""Classic pcap parsing and bidirectional TCP flow assembly.

Supports the classic (non-pcapng) file format in both endiannesses with
microsecond timestamps, link types Ethernet (1) and raw IPv4 (101).  Only
TCP-over-IPv4 records are kept; everything else is skipped and counted.
Flows are keyed by the unordered 4-tuple, oriented by the first SYN sender,
and cut at FIN-in-both-directions, RST, or an idle gap.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101

FIN, SYN, RST, PSH, ACK, URG = 0x01, 0x02, 0x04, 0x08, 0x10, 0x20
_FLAG_NAMES = ((SYN, "SYN"), (ACK, "ACK"), (FIN, "FIN"), (RST, "RST"), (PSH, "PSH"), (URG, "URG"))

DEFAULT_IDLE_TIMEOUT = 120.0  # seconds

BENIGN = "benign"
MALICIOUS = "malicious"
UNLABELED = "unlabeled"


class PcapFormatError(ValueError):
    """The byte stream is not a classic microsecond pcap we can read."""


class PcapTruncationError(ValueError):
    """A record header or body extends past the end of the file."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Packet:
    """One captured TCP/IPv4 segment."""

    ts_sec: int
    ts_usec: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    tcp_flags: frozenset[str]
    seq: int
    ack_num: int
    payload_len: int
    ttl: int
    window: int
    raw_offset: int
    payload_head: bytes = b""

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec / 1e6

    @property
    def ts_us(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec

    def has(self, flag: str) -> bool:
        return flag in self.tcp_flags


@dataclass
class ParseStats:
    """Counters for skipped records, reported in run manifests."""

    tcp_packets: int = 0
    skipped_ipv6: int = 0
    skipped_non_ip: int = 0
    skipped_non_tcp: int = 0
    skipped_fragments: int = 0
    link_type: int = 0

    def as_dict(self) -> dict:
        return {
            "tcp_packets": self.tcp_packets,
            "skipped_ipv6": self.skipped_ipv6,
            "skipped_non_ip": self.skipped_non_ip,
            "skipped_non_tcp": self.skipped_non_tcp,
            "skipped_fragments": self.skipped_fragments,
            "link_type": self.link_type,
        }


def read_global_header(data: bytes) -> tuple[str, int]:
    """Return (struct endian prefix, link type) or raise PcapFormatError."""
    if len(data) < GLOBAL_HEADER_LEN:
        raise PcapFormatError("file shorter than the 24-byte pcap global header")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    magic_be = struct.unpack_from(">I", data, 0)[0]
    if magic_le == MAGIC_US:
        endian = "<"
    elif magic_be == MAGIC_US:
        endian = ">"
    elif MAGIC_NS in (magic_le, magic_be):
        raise PcapFormatError(
            "nanosecond-timestamp pcap is not supported; re-save with microsecond resolution"
        )
    else:
        raise PcapFormatError(f"bad pcap magic 0x{magic_le:08X}")
    link_type = struct.unpack_from(endian + "I", data, 20)[0]
    return endian, link_type


def _ipv4_str(raw: bytes) -> str:
    return f"{raw[0]}.{raw[1]}.{raw[2]}.{raw[3]}"


def _flags_set(bits: int) -> frozenset[str]:
    return frozenset(name for bit, name in _FLAG_NAMES if bits & bit)


def parse_pcap(data: bytes, stats: ParseStats | None = None) -> list[Packet]:
    """Parse classic pcap bytes into TCP/IPv4 packets in file order.

    Non-TCP and non-IPv4 records are skipped silently (counted in `stats`
    when given).  Raises PcapFormatError for a bad global header and
    PcapTruncationError naming the byte offset for a cut-off record.
    """
    endian, link_type = read_global_header(data)
    if link_type not in (LINKTYPE_ETHERNET, LINKTYPE_RAW_IP):
        raise PcapFormatError(f"unsupported link type {link_type}")
    if stats is not None:
        stats.link_type = link_type

    packets: list[Packet] = []
    offset = GLOBAL_HEADER_LEN
    rec_fmt = endian + "IIII"
    n = len(data)
    while offset < n:
        if offset + RECORD_HEADER_LEN > n:
            raise PcapTruncationError(offset, "truncated record header")
        ts_sec, ts_usec, incl_len, _orig_len = struct.unpack_from(rec_fmt, data, offset)
        body = offset + RECORD_HEADER_LEN
        if body + incl_len > n:
            raise PcapTruncationError(offset, f"record body of {incl_len} bytes truncated")
        pkt = _parse_record(data, body, incl_len, link_type, ts_sec, ts_usec, offset, stats)
        if pkt is not None:
            packets.append(pkt)
        offset = body + incl_len
    return packets


def _parse_record(data, body, incl_len, link_type, ts_sec, ts_usec, rec_offset, stats):
    ip_off = body
    if link_type == LINKTYPE_ETHERNET:
        if incl_len < 14:
            return None
        ethertype = struct.unpack_from("!H", data, body + 12)[0]
        if ethertype == 0x86DD:
            if stats is not None:
                stats.skipped_ipv6 += 1
            return None
        if ethertype != 0x0800:
            if stats is not None:
                stats.skipped_non_ip += 1
            return None
        ip_off = body + 14
    else:  # raw IP: version nibble decides
        if incl_len < 1:
            return None
        version = data[body] >> 4
        if version == 6:
            if stats is not None:
                stats.skipped_ipv6 += 1
            return None
        if version != 4:
            if stats is not None:
                stats.skipped_non_ip += 1
            return None

    end = body + incl_len
    if ip_off + 20 > end:
        return None
    ver_ihl = data[ip_off]
    if ver_ihl >> 4 != 4:
        if stats is not None:
            stats.skipped_non_ip += 1
        return None
    ihl = (ver_ihl & 0x0F) * 4
    total_len = struct.unpack_from("!H", data, ip_off + 2)[0]
    frag = struct.unpack_from("!H", data, ip_off + 6)[0]
    ttl = data[ip_off + 8]
    proto = data[ip_off + 9]
    if proto != 6:
        if stats is not None:
            stats.skipped_non_tcp += 1
        return None
    if frag & 0x1FFF:  # non-first fragment carries no TCP header
        if stats is not None:
            stats.skipped_fragments += 1
        return None

    tcp_off = ip_off + ihl
    if tcp_off + 20 > end:
        return None
    src_port, dst_port = struct.unpack_from("!HH", data, tcp_off)
    seq, ack_num = struct.unpack_from("!II", data, tcp_off + 4)
    data_off = (data[tcp_off + 12] >> 4) * 4
    flag_bits = data[tcp_off + 13]
    window = struct.unpack_from("!H", data, tcp_off + 14)[0]
    payload_len = max(0, total_len - ihl - data_off)
    pl_off = tcp_off + data_off
    head = bytes(data[pl_off : min(pl_off + 2, end)]) if payload_len > 0 else b""

    if stats is not None:
        stats.tcp_packets += 1
    return Packet(
        ts_sec=ts_sec,
        ts_usec=ts_usec,
        src_ip=_ipv4_str(data[ip_off + 12 : ip_off + 16]),
        dst_ip=_ipv4_str(data[ip_off + 16 : ip_off + 20]),
        src_port=src_port,
        dst_port=dst_port,
        tcp_flags=_flags_set(flag_bits),
        seq=seq,
        ack_num=ack_num,
        payload_len=payload_len,
        ttl=ttl,
        window=window,
        raw_offset=rec_offset,
        payload_head=head,
    )


@dataclass
class Flow:
    """A bidirectional TCP conversation oriented client -> server."""

    client_ip: str
    client_port: int
    server_ip: str
    server_port: int
    packets: list[Packet]
    dirs: list[str]  # "c2s" / "s2c", parallel to packets
    complete: bool
    occurrence: int = 0
    label: str = UNLABELED

    @property
    def key(self) -> tuple[str, int, str, int]:
        return (self.client_ip, self.client_port, self.server_ip, self.server_port)

    @property
    def first_ts_us(self) -> int:
        return self.packets[0].ts_us

    @property
    def last_ts_us(self) -> int:
        return self.packets[-1].ts_us

    @property
    def first_ts(self) -> float:
        return self.packets[0].timestamp

    @property
    def last_ts(self) -> float:
        return self.packets[-1].timestamp

    @property
    def duration_us(self) -> int:
        return self.last_ts_us - self.first_ts_us

    def key_str(self) -> str:
        return f"{self.client_ip}:{self.client_port}-{self.server_ip}:{self.server_port}"

    def uid(self, prefix: str = "") -> str:
        base = f"{self.key_str()}#{self.occurrence}"
        return f"{prefix}:{base}" if prefix else base


class _Accumulator:
    __slots__ = ("entries", "syn_senders", "synack_senders", "fin_senders",
                 "rst_seen", "ended", "last_ts_us", "start_index")

    def __init__(self, start_index: int):
        self.entries: list[tuple[int, Packet]] = []
        self.syn_senders: set = set()
        self.synack_senders: set = set()
        self.fin_senders: set = set()
        self.rst_seen = False
        self.ended = False
        self.last_ts_us = 0
        self.start_index = start_index

    def add(self, index: int, pkt: Packet) -> None:
        self.entries.append((index, pkt))
        src = (pkt.src_ip, pkt.src_port)
        if pkt.has("SYN"):
            (self.synack_senders if pkt.has("ACK") else self.syn_senders).add(src)
        if pkt.has("FIN"):
            self.fin_senders.add(src)
        if pkt.has("RST"):
            self.rst_seen = True
        if self.rst_seen or len(self.fin_senders) >= 2:
            self.ended = True
        self.last_ts_us = max(self.last_ts_us, pkt.ts_us) if len(self.entries) > 1 else pkt.ts_us


def _finalize(acc: _Accumulator, occurrence: int) -> Flow:
    # Stable sort by timestamp keeps file order on ties.
    entries = sorted(acc.entries, key=lambda e: e[1].ts_us)
    first = entries[0][1]
    client = server = None
    for _, pkt in entries:
        if pkt.has("SYN"):
            src = (pkt.src_ip, pkt.src_port)
            dst = (pkt.dst_ip, pkt.dst_port)
            # The SYN-ACK names the *server* as its sender.
            client, server = (dst, src) if pkt.has("ACK") else (src, dst)
            break
    if client is None:
        client = (first.src_ip, first.src_port)
        server = (first.dst_ip, first.dst_port)
    packets = [pkt for _, pkt in entries]
    dirs = ["c2s" if (p.src_ip, p.src_port) == client else "s2c" for p in packets]
    complete = (
        client in acc.syn_senders
        and server in acc.synack_senders
        and (acc.rst_seen or len(acc.fin_senders) >= 1)
    )
    return Flow(
        client_ip=client[0], client_port=client[1],
        server_ip=server[0], server_port=server[1],
        packets=packets, dirs=dirs, complete=complete, occurrence=occurrence,
    )


def assemble_flows(packets: list[Packet], idle_timeout: float | None = DEFAULT_IDLE_TIMEOUT) -> list[Flow]:
    """Group packets into bidirectional flows.

    A flow ends at FIN seen from both endpoints, at RST, or when the idle
    gap exceeds `idle_timeout` (None disables the idle cut).  A fresh SYN on
    the same 4-tuple after the flow ended starts a new flow.  Flows that
    never saw a handshake still come back, flagged incomplete.
    """
    idle_us = None if idle_timeout is None else int(idle_timeout * 1_000_000)
    open_accs: dict[frozenset, _Accumulator] = {}
    done: list[tuple[_Accumulator, frozenset]] = []
    occurrence: dict[frozenset, int] = {}

    for index, pkt in enumerate(packets):
        key = frozenset(((pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port)))
        acc = open_accs.get(key)
        if acc is not None:
            idle_split = idle_us is not None and pkt.ts_us - acc.last_ts_us > idle_us
            new_syn = acc.ended and pkt.has("SYN") and not pkt.has("ACK")
            if idle_split or new_syn:
                done.append((acc, key))
                acc = None
        if acc is None:
            acc = _Accumulator(index)
            open_accs[key] = acc
        acc.add(index, pkt)
    for key, acc in open_accs.items():
        done.append((acc, key))

    done.sort(key=lambda item: item[0].start_index)
    flows = []
    for acc, key in done:
        occ = occurrence.get(key, 0)
        occurrence[key] = occ + 1
        flows.append(_finalize(acc, occ))
    return flows


def filter_complete(flows: list[Flow]) -> list[Flow]:
    """Keep flows with a client SYN, a server SYN-ACK, and a FIN or RST."""
    return [f for f in flows if f.complete]


def flow_is_tls(flow: Flow) -> bool:
    """Heuristic: first client payload starts with a TLS record header (0x16 0x03)."""
    for pkt, d in zip(flow.packets, flow.dirs):
        if d == "c2s" and pkt.payload_len > 0:
            head = pkt.payload_head
            return len(head) >= 2 and head[0] == 0x16 and head[1] == 0x03
    return False


def load_labels(path) -> dict[frozenset, str]:
    """Read a label CSV keyed by the unordered 4-tuple (case-insensitive)."""
    expected = ["client_ip", "client_port", "server_ip", "server_port", "label"]
    labels: dict[frozenset, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        got = [name.strip().lower() for name in (reader.fieldnames or [])]
        if got != expected:
            raise ValueError(f"label file header must be {','.join(expected)}")
        for row in reader:
            row = {k.strip().lower(): v.strip() for k, v in row.items()}
            label = row["label"].lower()
            if label not in (BENIGN, MALICIOUS):
                raise ValueError(f"unknown label {row['label']!r}")
            key = frozenset((
                (row["client_ip"].lower(), int(row["client_port"])),
                (row["server_ip"].lower(), int(row["server_port"])),
            ))
            labels[key] = label
    return labels


def apply_labels(flows: list[Flow], labels: dict[frozenset, str]) -> int:
    """Tag flows in place from the label map; returns the matched count."""
    matched = 0
    for flow in flows:
        key = frozenset((
            (flow.client_ip.lower(), flow.client_port),
            (flow.server_ip.lower(), flow.server_port),
        ))
        label = labels.get(key)
        if label is not None:
            flow.label = label
            matched += 1
        else:
            flow.label = UNLABELED
    return matched
