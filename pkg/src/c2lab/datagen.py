"""Deterministic synthetic data: scripted TCP flows rendered to pcap bytes,
plus feature-space datasets with controllable class separation.

A FlowScript fully determines the packet sequence (timestamps in integer
microseconds, sequence numbers, flags), so generated captures double as
ground truth.  `script_features` walks the expanded script directly and
recomputes the feature vector without touching the pcap/flow machinery,
giving the pipeline an independent oracle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import schema
from .features import BENIGN, MALICIOUS, RawFeatureVector


class ScriptError(ValueError):
    """A FlowScript violates basic TCP progression rules."""


@dataclass(frozen=True)
class Seg:
    """One scripted post-handshake packet; payload_len 0 means a pure ACK."""

    direction: str  # "c2s" | "s2c"
    payload_len: int = 0
    gap_us: int = 1000
    push: bool = False
    seq_abs: int | None = None  # override to script retransmits / reordering
    ttl: int | None = None


@dataclass
class FlowScript:
    client: tuple[str, int]
    server: tuple[str, int] = ("203.0.113.10", 443)
    label: str = BENIGN
    base_ts_us: int = 1_600_000_000_000_000
    segments: list[Seg] = field(default_factory=list)
    teardown: str = "fin"  # "fin" | "rst" | "none"
    closer: str = "client"
    with_syn: bool = True
    with_synack: bool = True
    with_handshake_ack: bool = True
    hs_gap_us: tuple[int, int] = (200, 150)
    teardown_gap_us: int = 2000        # idle before the first teardown packet
    teardown_inter_gap_us: int = 500   # between the remaining teardown packets
    client_isn: int = 10_000
    server_isn: int = 50_000
    ttl_c2s: int = 64
    ttl_s2c: int = 60
    window: int = 65535
    first_payload_head: bytes = b"\x16\x03"


@dataclass(frozen=True)
class ScriptPacket:
    ts_us: int
    direction: str
    flags: frozenset[str]
    seq: int
    ack: int
    payload_len: int
    ttl: int
    window: int


def _validate(script: FlowScript) -> None:
    if script.teardown not in ("fin", "rst", "none"):
        raise ScriptError(f"unknown teardown {script.teardown!r}")
    if script.closer not in ("client", "server"):
        raise ScriptError(f"unknown closer {script.closer!r}")
    if script.hs_gap_us[0] < 0 or script.hs_gap_us[1] < 0 or script.teardown_gap_us < 0:
        raise ScriptError("gaps must be non-negative")
    if script.teardown == "fin" and not (script.with_syn and script.with_synack):
        # An orderly close presupposes an established connection; scripts may
        # still drop handshake packets to model partial captures, but then
        # must tear down with RST or not at all.
        raise ScriptError("FIN teardown requires a full SYN/SYN-ACK handshake")
    for seg in script.segments:
        if seg.direction not in ("c2s", "s2c"):
            raise ScriptError(f"bad segment direction {seg.direction!r}")
        if seg.payload_len < 0 or seg.gap_us < 0:
            raise ScriptError("segment payload and gap must be non-negative")


def expand_script(script: FlowScript) -> list[ScriptPacket]:
    """Unroll handshake, data segments, and teardown into concrete packets."""
    _validate(script)
    ttl = {"c2s": script.ttl_c2s, "s2c": script.ttl_s2c}
    next_seq = {"c2s": script.client_isn, "s2c": script.server_isn}
    pkts: list[ScriptPacket] = []
    t = script.base_ts_us

    def emit(direction, flags, payload_len=0, seq=None, ttl_override=None):
        d = direction
        opp = "s2c" if d == "c2s" else "c2s"
        use_seq = next_seq[d] if seq is None else seq
        ack = next_seq[opp] if "ACK" in flags else 0
        pkts.append(ScriptPacket(
            ts_us=t, direction=d, flags=frozenset(flags), seq=use_seq, ack=ack,
            payload_len=payload_len, ttl=ttl_override if ttl_override is not None else ttl[d],
            window=script.window,
        ))
        consumed = payload_len + (1 if ("SYN" in flags or "FIN" in flags) else 0)
        if consumed:
            next_seq[d] = max(next_seq[d], use_seq + consumed)

    if script.with_syn:
        emit("c2s", {"SYN"})
        t += script.hs_gap_us[0]
    elif not script.with_synack:
        next_seq["c2s"] += 1  # pretend the unseen SYN consumed its byte
    if script.with_synack:
        if not script.with_syn:
            next_seq["c2s"] += 1
        emit("s2c", {"SYN", "ACK"})
        t += script.hs_gap_us[1]
    if script.with_handshake_ack and script.with_syn:
        emit("c2s", {"ACK"})

    for seg in script.segments:
        t += seg.gap_us
        flags = {"ACK", "PSH"} if (seg.payload_len > 0 and seg.push) else {"ACK"}
        emit(seg.direction, flags, seg.payload_len, seq=seg.seq_abs, ttl_override=seg.ttl)

    if script.teardown == "fin":
        a, b = (("c2s", "s2c") if script.closer == "client" else ("s2c", "c2s"))
        sequence = ((a, {"FIN", "ACK"}), (b, {"ACK"}), (b, {"FIN", "ACK"}), (a, {"ACK"}))
        for k, (direction, flags) in enumerate(sequence):
            t += script.teardown_gap_us if k == 0 else script.teardown_inter_gap_us
            emit(direction, flags)
    elif script.teardown == "rst":
        t += script.teardown_gap_us
        emit("c2s" if script.closer == "client" else "s2c", {"RST"})
    if not pkts:
        raise ScriptError("script produces no packets")
    return pkts


# ---------------------------------------------------------------------------
# pcap serialization

_MAC_CLIENT = bytes.fromhex("020000000001")
_MAC_SERVER = bytes.fromhex("020000000002")


def _checksum16(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _ip_bytes(ip: str) -> bytes:
    return bytes(int(p) for p in ip.split("."))


_FLAG_BITS = {"FIN": 0x01, "SYN": 0x02, "RST": 0x04, "PSH": 0x08, "ACK": 0x10, "URG": 0x20}


def _frame(script: FlowScript, pkt: ScriptPacket, ip_id: int, payload: bytes,
           link_type: int) -> bytes:
    src, dst = (script.client, script.server) if pkt.direction == "c2s" else (script.server, script.client)
    flag_bits = 0
    for name in pkt.flags:
        flag_bits |= _FLAG_BITS[name]
    tcp_wo_ck = struct.pack(
        "!HHIIBBHHH", src[1], dst[1], pkt.seq, pkt.ack, 5 << 4, flag_bits,
        pkt.window, 0, 0,
    ) + payload
    pseudo = _ip_bytes(src[0]) + _ip_bytes(dst[0]) + struct.pack("!BBH", 0, 6, len(tcp_wo_ck))
    tcp_ck = _checksum16(pseudo + tcp_wo_ck)
    tcp = tcp_wo_ck[:16] + struct.pack("!H", tcp_ck) + tcp_wo_ck[18:]

    total_len = 20 + len(tcp)
    ip_wo_ck = struct.pack(
        "!BBHHHBBH", 0x45, 0, total_len, ip_id, 0x4000, pkt.ttl, 6, 0,
    ) + _ip_bytes(src[0]) + _ip_bytes(dst[0])
    ip_ck = _checksum16(ip_wo_ck)
    ip = ip_wo_ck[:10] + struct.pack("!H", ip_ck) + ip_wo_ck[12:]

    if link_type == 101:
        return ip + tcp
    macs = (_MAC_SERVER + _MAC_CLIENT) if pkt.direction == "c2s" else (_MAC_CLIENT + _MAC_SERVER)
    return macs + struct.pack("!H", 0x0800) + ip + tcp


def _payload_bytes(script: FlowScript, pkt: ScriptPacket, first_data_c2s: bool) -> bytes:
    if pkt.payload_len == 0:
        return b""
    head = script.first_payload_head if (pkt.direction == "c2s" and first_data_c2s) else b"\x17\x03"
    body = head + bytes((i * 7 + 3) % 251 for i in range(max(0, pkt.payload_len - len(head))))
    return body[: pkt.payload_len]


def gen_pcap(scripts: list[FlowScript], endian: str = "<", link_type: int = 1) -> bytes:
    """Serialize scripts to classic microsecond pcap bytes (file order = time order)."""
    expanded: list[tuple[int, int, int, FlowScript, ScriptPacket]] = []
    for si, script in enumerate(scripts):
        for pi, pkt in enumerate(expand_script(script)):
            expanded.append((pkt.ts_us, si, pi, script, pkt))
    expanded.sort(key=lambda e: (e[0], e[1], e[2]))

    out = bytearray()
    out += struct.pack(endian + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, link_type)
    ip_id = 1
    seen_first_data = set()
    for ts_us, si, _pi, script, pkt in expanded:
        first_data = pkt.payload_len > 0 and pkt.direction == "c2s" and si not in seen_first_data
        if first_data:
            seen_first_data.add(si)
        frame = _frame(script, pkt, ip_id & 0xFFFF, _payload_bytes(script, pkt, first_data), link_type)
        ip_id += 1
        out += struct.pack(endian + "IIII", ts_us // 1_000_000, ts_us % 1_000_000,
                           len(frame), len(frame))
        out += frame
    return bytes(out)


# ---------------------------------------------------------------------------
# Script-walk feature oracle (independent of the pcap/flow pipeline)

def script_features(script: FlowScript) -> np.ndarray:
    """Compute the 86-slot raw feature vector straight from the script.

    Walks the expanded packet list with plain loops; shares nothing with the
    parse/assemble/compute path beyond the schema and numpy reductions.
    """
    pkts = expand_script(script)
    values = np.zeros(schema.N_SLOTS, dtype=np.float64)

    def put(fid: int, v: float) -> None:
        values[schema.SLOT_OF[fid]] = v

    first_us = min(p.ts_us for p in pkts)
    last_us = max(p.ts_us for p in pkts)
    put(31, (last_us - first_us) / 1000.0)

    base = {"c2s": 0, "s2c": 14}
    for d in ("c2s", "s2c"):
        side = [p for p in pkts if p.direction == d]
        other = [p for p in pkts if p.direction != d]
        b = base[d]
        put(3 + b, len(side))
        put(4 + b, sum(1 for p in side if "RST" in p.flags))
        put(5 + b, sum(1 for p in side if "ACK" in p.flags))
        put(6 + b, sum(1 for p in side if "ACK" in p.flags and p.payload_len == 0
                       and not ({"SYN", "FIN", "RST"} & p.flags)))
        data = [p for p in side if p.payload_len > 0]
        if data:
            put(7 + b, max(p.seq + p.payload_len for p in data) - min(p.seq for p in data))
        put(8 + b, len(data))
        put(9 + b, sum(p.payload_len for p in data))

        seen: list[tuple[int, int]] = []
        expected = None
        rexmit_n = rexmit_bytes = oos = 0
        retransmitted = []
        for p in data:
            s, e = p.seq, p.seq + p.payload_len
            overlap = any(s < e0 and e > s0 for s0, e0 in seen)
            if overlap:
                rexmit_n += 1
                rexmit_bytes += p.payload_len
            elif expected is not None and s < expected:
                oos += 1
            retransmitted.append(overlap)
            seen.append((s, e))
            expected = e if expected is None else max(expected, e)
        put(10 + b, rexmit_n)
        put(11 + b, rexmit_bytes)
        put(12 + b, oos)
        put(13 + b, sum(1 for p in side if "SYN" in p.flags))
        put(14 + b, sum(1 for p in side if "FIN" in p.flags))

        rtt_base = 45 if d == "c2s" else 52
        samples = []
        order = {id(p): i for i, p in enumerate(pkts)}
        for p, was_rexmit in zip(data, retransmitted):
            if was_rexmit:
                continue
            end_seq = p.seq + p.payload_len
            for q in other:
                if order[id(q)] > order[id(p)] and "ACK" in q.flags and q.ack >= end_seq:
                    samples.append((q.ts_us - p.ts_us) / 1000.0)
                    break
        if samples:
            arr = np.array(samples)
            put(rtt_base + 0, float(np.mean(arr)))
            put(rtt_base + 1, float(np.min(arr)))
            put(rtt_base + 2, float(np.max(arr)))
            put(rtt_base + 3, float(np.std(arr)))
            put(rtt_base + 4, len(samples))
        ttl_base = 50 if d == "c2s" else 57
        if side:
            put(ttl_base + 0, max(p.ttl for p in side))
            put(ttl_base + 1, min(p.ttl for p in side))

    for d, first_pay, last_pay, first_ack in (("c2s", 32, 34, 36), ("s2c", 33, 35, 37)):
        pays = [p.ts_us for p in pkts if p.direction == d and p.payload_len > 0]
        if pays:
            put(first_pay, (min(pays) - first_us) / 1000.0)
            put(last_pay, (max(pays) - first_us) / 1000.0)
        acks = [p.ts_us for p in pkts if p.direction == d and "ACK" in p.flags
                and p.payload_len == 0 and not ({"SYN", "FIN", "RST"} & p.flags)]
        if acks:
            put(first_ack, (min(acks) - first_us) / 1000.0)
    return values


# ---------------------------------------------------------------------------
# Random corpora

@dataclass
class PcapCorpusConfig:
    n_benign: int = 60
    n_malicious: int = 60
    seed: int = 0
    base_ts_us: int = 1_600_000_000_000_000


def _random_script(i: int, label: str, rng: np.random.Generator, base_ts_us: int) -> FlowScript:
    """Benign sessions burst early then idle before closing; C2 beacons pace
    their few exchanges across a short connection and close quickly.  Packet
    and byte counts overlap across the classes; duration separates them.
    """
    client = (f"10.{(i // 200) % 200}.{(i // 250) % 250}.{2 + i % 250}", 40000 + i)
    server = (f"203.0.113.{1 + i % 200}", 443)
    if label == BENIGN:
        n_exchanges = int(rng.integers(4, 13))
        gap_range = (80_000, 700_000)         # us between exchanges (burst)
        size_range = (150, 900)
        reply_range = (15_000, 90_000)
        idle_tail_us = int(rng.integers(10_000_000, 45_000_000))
        trailing = False
    else:
        n_exchanges = int(rng.integers(3, 11))
        gap_range = (300_000, 1_100_000)
        size_range = (100, 700)
        reply_range = (40_000, 140_000)
        idle_tail_us = int(rng.integers(300_000, 4_000_000))
        # Some beacons push a final server burst whose only covering ACK is
        # the FIN, so crafting the close drags an RTT sample along.
        trailing = bool(rng.random() < 0.4)
    segs: list[Seg] = []
    for _ in range(n_exchanges):
        gap = int(rng.integers(*gap_range))
        up = int(rng.integers(*size_range))
        down = int(rng.integers(*size_range))
        reply = int(rng.integers(*reply_range))
        ackgap = int(rng.integers(5_000, 30_000))
        segs.append(Seg("c2s", up, gap, push=True))
        segs.append(Seg("s2c", 0, ackgap))
        segs.append(Seg("s2c", down, int(rng.integers(2_000, 25_000)), push=True))
        segs.append(Seg("c2s", 0, reply))
    if trailing:
        segs.append(Seg("s2c", int(rng.integers(*size_range)),
                        int(rng.integers(*gap_range)), push=True))
    return FlowScript(
        client=client,
        server=server,
        label=label,
        base_ts_us=base_ts_us + i * 10_000_000,
        segments=segs,
        teardown="rst" if rng.random() < 0.08 else "fin",
        closer="client",
        teardown_gap_us=idle_tail_us,
        teardown_inter_gap_us=int(rng.integers(300, 2_000)),
        hs_gap_us=(int(rng.integers(10_000, 90_000)), int(rng.integers(200, 2_000))),
        ttl_c2s=int(rng.choice((64, 128))),
        ttl_s2c=int(rng.choice((52, 60, 118))),
    )


def random_flow_scripts(cfg: PcapCorpusConfig) -> list[FlowScript]:
    """Seeded per-class scripts; benign flows run longer and carry more data."""
    rng = np.random.default_rng(cfg.seed)
    scripts = []
    for i in range(cfg.n_benign):
        scripts.append(_random_script(i, BENIGN, rng, cfg.base_ts_us))
    for j in range(cfg.n_malicious):
        scripts.append(_random_script(cfg.n_benign + j, MALICIOUS, rng, cfg.base_ts_us))
    return scripts


def labels_csv_text(scripts: list[FlowScript]) -> str:
    lines = ["client_ip,client_port,server_ip,server_port,label"]
    for s in scripts:
        lines.append(f"{s.client[0]},{s.client[1]},{s.server[0]},{s.server[1]},{s.label}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Feature-space dataset generator

@dataclass
class SynthDatasetConfig:
    n_benign: int = 600
    n_malicious: int = 600
    seed: int = 7
    separation: float = 1.0  # 1 = default class gap, 0 = malicious mean on benign mean


# Slots inside a group share one per-sample latent, so packet, byte, and RTT
# families covary the way they do in real flows instead of acting as dozens
# of independent class signals.  Entries: id -> (benign_loc, benign_spread,
# malicious_loc, malicious_spread).
_SIZE_GROUP = {
    3: (42, 16, 24, 7), 17: (38, 15, 20, 6),
    5: (39, 15, 22, 6.5), 19: (35, 14, 18, 5.5),
    6: (14, 6, 7, 2.5), 20: (12, 5, 6, 2.2),
    7: (26000, 11000, 9000, 3200), 21: (120000, 55000, 30000, 11000),
    8: (20, 8, 9, 3), 22: (19, 8, 8, 3),
    9: (26500, 11000, 9200, 3300), 23: (122000, 55000, 30500, 11000),
    49: (18, 7, 8, 2.8), 56: (17, 7, 7, 2.6),
}
_RTT_GROUP = {
    45: (95, 28, 130, 32), 52: (90, 26, 122, 30),
    46: (60, 20, 85, 24), 53: (56, 18, 80, 22),
    47: (150, 45, 200, 52), 54: (142, 42, 188, 48),
    48: (16, 6, 21, 8), 55: (15, 6, 20, 7),
}
_TIME_GROUP = {
    34: (20000, 9000, 12000, 5000), 35: (19000, 8500, 11500, 4800),
}
_INDEPENDENT = {
    31: (28000, 12000, 3500, 900),  # duration dominates the class signal
    32: (55, 25, 55, 25), 33: (70, 30, 70, 30),
    36: (28, 12, 28, 12), 37: (33, 14, 33, 14),
    4: (0.1, 0.35, 0.1, 0.35), 18: (0.1, 0.35, 0.1, 0.35),
    10: (0.4, 0.7, 0.3, 0.6), 24: (0.4, 0.7, 0.3, 0.6),
    11: (250, 420, 90, 200), 25: (260, 430, 95, 210),
    12: (0.2, 0.5, 0.2, 0.5), 26: (0.2, 0.5, 0.2, 0.5),
    13: (1, 0.1, 1, 0.1), 27: (1, 0.1, 1, 0.1),
    14: (1, 0.2, 1, 0.2), 28: (1, 0.2, 1, 0.2),
    50: (64, 2, 64, 2), 51: (60, 2, 60, 2),
    57: (58, 2, 58, 2), 58: (54, 2, 54, 2),
}
_INTEGER_IDS = (set(_SIZE_GROUP) | {4, 18, 10, 24, 11, 25, 12, 26, 13, 27, 14, 28,
                                    50, 51, 57, 58})
_GROUP_NOISE = 0.35  # residual per-slot noise relative to the slot spread


def gen_feature_dataset(cfg: SynthDatasetConfig) -> list[RawFeatureVector]:
    """Seeded truncated location-scale draws with group-correlated slots."""
    rng = np.random.default_rng(cfg.seed)
    rows: list[RawFeatureVector] = []
    groups = ((_SIZE_GROUP, True), (_RTT_GROUP, True), (_TIME_GROUP, True),
              (_INDEPENDENT, False))
    for label, count, tag in ((BENIGN, cfg.n_benign, "synb"), (MALICIOUS, cfg.n_malicious, "synm")):
        block = np.zeros((count, schema.N_SLOTS))
        for table, shared_latent in groups:
            latent = rng.standard_normal(count) if shared_latent else None
            for fid, (loc_b, spread_b, loc_m, spread_m) in table.items():
                if label == BENIGN:
                    loc, spread = loc_b, spread_b
                else:
                    loc = loc_b + (loc_m - loc_b) * cfg.separation
                    spread = spread_m
                noise = rng.standard_normal(count)
                if shared_latent:
                    col = loc + spread * latent + _GROUP_NOISE * spread * noise
                else:
                    col = loc + spread * noise
                col = np.clip(col, 0.0, None)
                if fid in _INTEGER_IDS:
                    col = np.round(col)
                block[:, schema.SLOT_OF[fid]] = col
        for i in range(count):
            rows.append(RawFeatureVector(flow_id=f"{tag}-{i:05d}", label=label,
                                         values=block[i].copy()))
    return rows
