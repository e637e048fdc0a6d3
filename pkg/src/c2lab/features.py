"""Per-flow feature vectors over the 86-slot schema, plus normalization.

Raw values are in natural units (counts, bytes, milliseconds, hops).
Normalization maps slot i to sqrt(f_i / f_max_i) with training-set maxima,
clamping out-of-range test values to 1; denormalization squares and
multiplies back.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import schema
from .pcap import BENIGN, MALICIOUS, UNLABELED, Flow

__all__ = [
    "BENIGN", "MALICIOUS", "UNLABELED",
    "RawFeatureVector", "NormalizationParams", "NormalizedVector",
    "IncompleteFlowError", "compute_features", "fit_normalizer",
    "normalize", "normalize_values", "denormalize",
    "write_feature_csv", "read_feature_csv", "to_matrix",
]


class IncompleteFlowError(ValueError):
    """Features are only defined for complete flows."""


@dataclass
class RawFeatureVector:
    flow_id: str
    label: str
    values: np.ndarray  # (86,) float64, natural units


@dataclass(frozen=True)
class NormalizationParams:
    """Per-slot training-set maxima; immutable once fitted."""

    f_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f_max", np.asarray(self.f_max, dtype=np.float64))
        if self.f_max.shape != (schema.N_SLOTS,):
            raise ValueError(f"f_max must have shape ({schema.N_SLOTS},)")
        self.f_max.setflags(write=False)


@dataclass
class NormalizedVector:
    flow_id: str
    label: str
    values: np.ndarray  # (86,) in [0, 1]
    provenance: str = "measured"  # measured | adversarial | crafted


def _direction_packets(flow: Flow, direction: str):
    return [p for p, d in zip(flow.packets, flow.dirs) if d == direction]


def compute_features(flow: Flow) -> RawFeatureVector:
    """Fill the implemented slots from the flow's packets.

    Covered: per-direction packet/RST/ACK/pure-ACK counts, unique bytes
    (sequence span of payload segments), data segment/byte counts,
    retransmissions (segments overlapping already-seen sequence space,
    full payload counted), out-of-sequence counts, SYN/FIN counts, duration,
    relative payload and first-pure-ACK times, RTT statistics from
    data-to-covering-ACK matching, and TTL extremes.  All other slots are 0.
    """
    if not flow.complete:
        raise IncompleteFlowError(f"flow {flow.key_str()} is not complete")

    values = np.zeros(schema.N_SLOTS, dtype=np.float64)

    def put(fid: int, v: float) -> None:
        values[schema.SLOT_OF[fid]] = v

    first_us = flow.first_ts_us
    put(31, (flow.last_ts_us - first_us) / 1000.0)

    pkts = flow.packets
    dirs = flow.dirs
    for direction, b in (("c2s", 0), ("s2c", 14)):
        side = _direction_packets(flow, direction)
        put(3 + b, len(side))
        put(4 + b, sum(1 for p in side if p.has("RST")))
        put(5 + b, sum(1 for p in side if p.has("ACK")))
        put(6 + b, sum(1 for p in side if _is_pure_ack(p)))
        data = [p for p in side if p.payload_len > 0]
        if data:
            put(7 + b, max(p.seq + p.payload_len for p in data) - min(p.seq for p in data))
        put(8 + b, len(data))
        put(9 + b, sum(p.payload_len for p in data))

        rexmit_flags = _retransmit_flags(data)
        put(10 + b, sum(rexmit_flags))
        put(11 + b, sum(p.payload_len for p, r in zip(data, rexmit_flags) if r))
        put(12 + b, _out_of_sequence_count(data, rexmit_flags))
        put(13 + b, sum(1 for p in side if p.has("SYN")))
        put(14 + b, sum(1 for p in side if p.has("FIN")))

        rtt_base = 45 if direction == "c2s" else 52
        samples = _rtt_samples_ms(pkts, dirs, direction, data, rexmit_flags)
        if samples:
            arr = np.array(samples)
            put(rtt_base + 0, float(np.mean(arr)))
            put(rtt_base + 1, float(np.min(arr)))
            put(rtt_base + 2, float(np.max(arr)))
            put(rtt_base + 3, float(np.std(arr)))  # population form
            put(rtt_base + 4, len(samples))
        ttl_base = 50 if direction == "c2s" else 57
        if side:
            put(ttl_base + 0, max(p.ttl for p in side))
            put(ttl_base + 1, min(p.ttl for p in side))

    for direction, first_pay, last_pay, first_ack in (("c2s", 32, 34, 36), ("s2c", 33, 35, 37)):
        pays = [p.ts_us for p, d in zip(pkts, dirs) if d == direction and p.payload_len > 0]
        if pays:
            put(first_pay, (min(pays) - first_us) / 1000.0)
            put(last_pay, (max(pays) - first_us) / 1000.0)
        acks = [p.ts_us for p, d in zip(pkts, dirs) if d == direction and _is_pure_ack(p)]
        if acks:
            put(first_ack, (min(acks) - first_us) / 1000.0)

    return RawFeatureVector(flow_id=flow.uid(), label=flow.label, values=values)


def _is_pure_ack(p) -> bool:
    return p.has("ACK") and p.payload_len == 0 and not (p.has("SYN") or p.has("FIN") or p.has("RST"))


def _retransmit_flags(data) -> list[bool]:
    """True where [seq, seq+len) overlaps sequence space already seen."""
    seen: list[tuple[int, int]] = []
    flags = []
    for p in data:
        s, e = p.seq, p.seq + p.payload_len
        flags.append(any(s < e0 and e > s0 for s0, e0 in seen))
        seen.append((s, e))
    return flags


def _out_of_sequence_count(data, rexmit_flags) -> int:
    expected = None
    count = 0
    for p, rex in zip(data, rexmit_flags):
        if not rex and expected is not None and p.seq < expected:
            count += 1
        end = p.seq + p.payload_len
        expected = end if expected is None else max(expected, end)
    return count


def _rtt_samples_ms(pkts, dirs, direction, data, rexmit_flags) -> list[float]:
    """One sample per non-retransmitted data segment: time to the first
    opposite-direction ACK whose ack number covers the segment's end."""
    index_of = {id(p): i for i, p in enumerate(pkts)}
    opposite = [(i, p) for i, (p, d) in enumerate(zip(pkts, dirs)) if d != direction and p.has("ACK")]
    samples = []
    for p, rex in zip(data, rexmit_flags):
        if rex:
            continue
        end_seq = p.seq + p.payload_len
        pos = index_of[id(p)]
        for qi, q in opposite:
            if qi > pos and q.ack_num >= end_seq:
                samples.append((q.ts_us - p.ts_us) / 1000.0)
                break
    return samples


def fit_normalizer(train: list[RawFeatureVector]) -> NormalizationParams:
    """Element-wise maxima over the training vectors."""
    if not train:
        raise ValueError("cannot fit normalization on an empty training set")
    stacked = np.stack([rv.values for rv in train])
    return NormalizationParams(f_max=stacked.max(axis=0))


def normalize_values(values: np.ndarray, params: NormalizationParams) -> np.ndarray:
    f_max = params.f_max
    out = np.zeros_like(values, dtype=np.float64)
    nz = f_max > 0
    # min() before the divide implements the clamp without overflow risk
    ratio = np.minimum(values[..., nz], f_max[nz]) / f_max[nz]
    out[..., nz] = np.sqrt(np.clip(ratio, 0.0, 1.0))
    return out


def normalize(raw: RawFeatureVector, params: NormalizationParams,
              provenance: str = "measured") -> NormalizedVector:
    return NormalizedVector(flow_id=raw.flow_id, label=raw.label,
                            values=normalize_values(raw.values, params),
                            provenance=provenance)


def denormalize(feature_id: int, value: float, params: NormalizationParams) -> float:
    """Undo normalization for one slot: value^2 * f_max."""
    return float(value) ** 2 * float(params.f_max[schema.SLOT_OF[feature_id]])


def to_matrix(samples: Iterable[NormalizedVector]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (X, y) with y = 1 for malicious."""
    samples = list(samples)
    X = np.stack([s.values for s in samples]) if samples else np.zeros((0, schema.N_SLOTS))
    y = np.array([1 if s.label == MALICIOUS else 0 for s in samples], dtype=np.int64)
    return X, y


# ---------------------------------------------------------------------------
# Feature CSV interchange (extract -> train)

CSV_HEADER = ["flow_id", "label", *schema.FEATURE_COLUMNS]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def write_feature_csv(path, rows: Iterable[RawFeatureVector]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rv in rows:
            writer.writerow([rv.flow_id, rv.label, *(_fmt(v) for v in rv.values)])
            n += 1
    return n


def read_feature_csv(path) -> list[RawFeatureVector]:
    out: list[RawFeatureVector] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: not a feature CSV (unexpected header)")
        for row in reader:
            out.append(RawFeatureVector(
                flow_id=row[0], label=row[1],
                values=np.array([float(v) for v in row[2:]], dtype=np.float64),
            ))
    return out
