"""Realize adversarial duration targets by editing pcap record timestamps.

The proxy model: hold on to the end of the connection.  We shift the
timestamps of the last (up to) four packets of a flow by a uniform delta so
the recomputed duration hits the denormalized adversarial target.  Only
record-header timestamp fields change; every other byte of the capture is
preserved, which keeps packet/byte-count features fixed while timing and
RTT features move as side effects.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import schema
from .attack import AdversarialSample, AttackSpec
from .features import NormalizationParams, compute_features, denormalize
from .pcap import RECORD_HEADER_LEN, Flow, assemble_flows, parse_pcap, read_global_header

# Count-style slots that a timestamp-only edit must never move.
_COUNT_IDS = frozenset(range(3, 15)) | frozenset(range(17, 29))
_TIMING_IDS = frozenset(range(31, 38)) | frozenset(range(45, 50)) | frozenset(range(52, 57))

ACHIEVED_TOLERANCE_MS = 1.0


class CraftError(ValueError):
    """The flow cannot be crafted as requested."""


class CraftIntegrityError(ValueError):
    """Plan does not match the bytes it is being applied to."""


class CraftToleranceError(ValueError):
    """Recomputed duration missed the target."""


@dataclass
class CraftPlan:
    flow_id: str
    flow_key: tuple[str, int, str, int]
    occurrence: int
    target_duration_ms: float   # denormalized adversarial target
    shift_ms: float             # applied delta, floored at zero
    shifted_packet_indices: list[int]
    record_offsets: list[int]
    original_ts_us: list[int]
    original_duration_ms: float

    @property
    def effective_target_ms(self) -> float:
        """What the crafted duration will be: shifts cannot shrink a flow."""
        return self.original_duration_ms + self.shift_ms


@dataclass
class CraftReport:
    flow_id: str
    target_duration_ms: float
    achieved_duration_ms: float
    slot_deltas: dict[int, float] = field(default_factory=dict)  # id -> crafted - original
    count_slots_unchanged: bool = True
    timing_slots_changed: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "flow_id": self.flow_id,
            "target_duration_ms": self.target_duration_ms,
            "achieved_duration_ms": self.achieved_duration_ms,
            "slot_deltas": {str(k): v for k, v in sorted(self.slot_deltas.items())},
            "count_slots_unchanged": self.count_slots_unchanged,
            "timing_slots_changed": self.timing_slots_changed,
        }


def plan_craft(flow: Flow, adv: AdversarialSample,
               params: NormalizationParams) -> CraftPlan:
    """Turn an increase-only duration target into a timestamp-shift plan.

    shift = max(0, denormalized target - current duration); the shift lands
    on the last min(4, n-1) packets, never the first.
    """
    spec = adv.spec
    if not isinstance(spec, AttackSpec) or spec.mode != "plus_only" or 31 not in spec.mask_ids():
        raise CraftError("crafting needs an increase-only attack whose mask includes the duration slot")
    n = len(flow.packets)
    if n < 2:
        raise CraftError(f"flow {flow.uid()} has a single packet; duration cannot be extended")

    original_ms = flow.duration_us / 1000.0
    target_ms = denormalize(31, float(adv.perturbed.values[schema.SLOT_OF[31]]), params)
    shift_ms = max(0.0, target_ms - original_ms)
    k = min(4, n - 1)
    indices = list(range(n - k, n))
    return CraftPlan(
        flow_id=flow.uid(),
        flow_key=flow.key,
        occurrence=flow.occurrence,
        target_duration_ms=target_ms,
        shift_ms=shift_ms,
        shifted_packet_indices=indices,
        record_offsets=[flow.packets[i].raw_offset for i in indices],
        original_ts_us=[flow.packets[i].ts_us for i in indices],
        original_duration_ms=original_ms,
    )


def apply_craft(data: bytes, plan: CraftPlan) -> bytes:
    """Add the plan's shift to the chosen records' pcap timestamps."""
    endian, _ = read_global_header(data)
    fmt = endian + "II"
    buf = bytearray(data)
    shift_us = round(plan.shift_ms * 1000.0)
    for offset, expect_us in zip(plan.record_offsets, plan.original_ts_us):
        if offset + RECORD_HEADER_LEN > len(buf):
            raise CraftIntegrityError(f"record offset {offset} outside the file")
        sec, usec = struct.unpack_from(fmt, buf, offset)
        if sec * 1_000_000 + usec != expect_us:
            raise CraftIntegrityError(
                f"timestamp at offset {offset} does not match the plan; file changed?"
            )
        total = expect_us + shift_us
        struct.pack_into(fmt, buf, offset, total // 1_000_000, total % 1_000_000)
    return bytes(buf)


def _locate(flows: list[Flow], plan: CraftPlan) -> Flow:
    for f in flows:
        if f.key == plan.flow_key and f.occurrence == plan.occurrence:
            return f
    raise CraftIntegrityError(f"flow {plan.flow_id} not found on re-parse")


def verify_craft(original: bytes, crafted: bytes, plan: CraftPlan) -> CraftReport:
    """Re-ingest both captures and diff the recomputed features.

    Assembles with the idle cut disabled so a large shift cannot split the
    flow it just extended.  Raises CraftToleranceError when the achieved
    duration is more than 1 ms from the plan's effective target.
    """
    flows_orig = assemble_flows(parse_pcap(original), idle_timeout=None)
    flows_new = assemble_flows(parse_pcap(crafted), idle_timeout=None)
    before = compute_features(_locate(flows_orig, plan)).values
    after = compute_features(_locate(flows_new, plan)).values

    achieved = float(after[schema.SLOT_OF[31]])
    if abs(achieved - plan.effective_target_ms) > ACHIEVED_TOLERANCE_MS:
        raise CraftToleranceError(
            f"flow {plan.flow_id}: achieved duration {achieved:.3f} ms misses "
            f"target {plan.effective_target_ms:.3f} ms by more than {ACHIEVED_TOLERANCE_MS} ms"
        )

    deltas = {}
    for fid in schema.TSTAT_IDS:
        d = float(after[schema.SLOT_OF[fid]] - before[schema.SLOT_OF[fid]])
        if d != 0.0:
            deltas[fid] = d
    return CraftReport(
        flow_id=plan.flow_id,
        target_duration_ms=plan.target_duration_ms,
        achieved_duration_ms=achieved,
        slot_deltas=deltas,
        count_slots_unchanged=not any(fid in _COUNT_IDS for fid in deltas),
        timing_slots_changed=sorted(fid for fid in deltas if fid in _TIMING_IDS),
    )


def recompute_crafted_features(crafted: bytes, plans: list[CraftPlan]):
    """Feature vectors of the crafted flows, recomputed from the bytes."""
    flows = assemble_flows(parse_pcap(crafted), idle_timeout=None)
    out = []
    for plan in plans:
        flow = _locate(flows, plan)
        out.append(compute_features(flow))
    return out
