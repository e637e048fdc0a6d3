import numpy as np
import pytest

from c2lab import schema
from c2lab.attack import AdversarialSample, AttackSpec, apply_restrictions
from c2lab.craft import (
    CraftError,
    CraftIntegrityError,
    CraftToleranceError,
    apply_craft,
    plan_craft,
    recompute_crafted_features,
    verify_craft,
)
from c2lab.datagen import Seg, gen_pcap
from c2lab.features import (
    MALICIOUS,
    NormalizationParams,
    NormalizedVector,
    compute_features,
    normalize_values,
)
from c2lab.pcap import Flow, Packet, assemble_flows, parse_pcap
from conftest import simple_script


def _params(duration_max=8000.0):
    f_max = np.ones(86)
    f_max[schema.SLOT_OF[31]] = duration_max
    return NormalizationParams(f_max=f_max)


def _adv_for(flow: Flow, params, target_norm: float) -> AdversarialSample:
    original = NormalizedVector(flow_id=flow.uid(), label=MALICIOUS,
                                values=normalize_values(compute_features(flow).values, params))
    perturbed = original.values.copy()
    perturbed[schema.SLOT_OF[31]] = target_norm
    return apply_restrictions(original, perturbed, AttackSpec("set1", mode="plus_only"))


def _one_flow(script):
    data = gen_pcap([script])
    flows = assemble_flows(parse_pcap(data))
    assert len(flows) == 1
    return data, flows[0]


def test_plan_noop_when_target_equals_original():
    data, flow = _one_flow(simple_script())
    params = _params(100_000.0)
    current_norm = normalize_values(compute_features(flow).values, params)[schema.SLOT_OF[31]]
    plan = plan_craft(flow, _adv_for(flow, params, current_norm), params)
    assert plan.shift_ms == 0.0
    assert apply_craft(data, plan) == data  # byte-identical


def test_plan_applies_the_denormalization_formula():
    data, flow = _one_flow(simple_script())
    original_ms = flow.duration_us / 1000.0
    f_max = original_ms * 8
    params = _params(f_max)
    plan = plan_craft(flow, _adv_for(flow, params, 0.5), params)
    assert plan.target_duration_ms == pytest.approx(0.25 * f_max)
    assert plan.shift_ms == pytest.approx(0.25 * f_max - original_ms)
    assert plan.effective_target_ms == pytest.approx(0.25 * f_max)


def test_short_flows_shift_fewer_packets():
    script = simple_script(segments=[], with_handshake_ack=False, teardown="rst")
    data, flow = _one_flow(script)  # SYN, SYN-ACK, RST
    assert len(flow.packets) == 3
    params = _params(100_000.0)
    plan = plan_craft(flow, _adv_for(flow, params, 0.9), params)
    assert len(plan.shifted_packet_indices) == 2
    assert plan.shifted_packet_indices == [1, 2]  # first packet never shifted


def test_single_packet_flow_cannot_be_crafted():
    pkt = Packet(ts_sec=1, ts_usec=0, src_ip="10.0.0.1", dst_ip="10.0.0.2",
                 src_port=1, dst_port=2, tcp_flags=frozenset({"SYN"}), seq=0,
                 ack_num=0, payload_len=0, ttl=64, window=1, raw_offset=24)
    flow = Flow(client_ip="10.0.0.1", client_port=1, server_ip="10.0.0.2",
                server_port=2, packets=[pkt], dirs=["c2s"], complete=True)
    params = _params()
    adv_values = np.zeros(86)
    adv = AdversarialSample(
        original=NormalizedVector("x", MALICIOUS, adv_values.copy()),
        perturbed=NormalizedVector("x", MALICIOUS, adv_values.copy()),
        spec=AttackSpec("set1", mode="plus_only"),
    )
    with pytest.raises(CraftError, match="single packet"):
        plan_craft(flow, adv, params)


def test_plan_requires_increase_only_duration_attack():
    data, flow = _one_flow(simple_script())
    params = _params()
    original = NormalizedVector(flow_id=flow.uid(), label=MALICIOUS, values=np.zeros(86))
    bad = AdversarialSample(original=original, perturbed=original,
                            spec=AttackSpec("set1", mode="plus_minus"))
    with pytest.raises(CraftError, match="increase-only"):
        plan_craft(flow, bad, params)


def test_shift_lands_exactly_on_the_last_four_packets():
    script = simple_script(segments=[
        Seg("c2s", 100, 50_000, push=True),
        Seg("s2c", 0, 20_000),
        Seg("c2s", 120, 30_000, push=True),
    ])  # handshake 3 + segments 3 + teardown 4 = 10 packets
    data, flow = _one_flow(script)
    assert len(flow.packets) == 10
    params = _params(1_000_000.0)
    original_ms = flow.duration_us / 1000.0
    target = np.sqrt((original_ms + 5000.0) / 1_000_000.0)
    plan = plan_craft(flow, _adv_for(flow, params, target), params)
    crafted = apply_craft(data, plan)
    before = parse_pcap(data)
    after = parse_pcap(crafted)
    for i, (a, b) in enumerate(zip(before, after)):
        if i < 6:
            assert b.ts_us == a.ts_us
        else:
            assert b.ts_us == a.ts_us + 5_000_000  # exactly +5.000000 s


def test_untargeted_flow_bytes_stay_identical():
    s1 = simple_script()
    s2 = simple_script(client=("10.0.0.9", 40999), base_ts_us=s1.base_ts_us + 777)
    data = gen_pcap([s1, s2])
    flows = assemble_flows(parse_pcap(data))
    target_flow = next(f for f in flows if f.client_port == 40999)
    other_flow = next(f for f in flows if f.client_port != 40999)
    params = _params(1_000_000.0)
    plan = plan_craft(target_flow, _adv_for(target_flow, params, 0.9), params)
    crafted = apply_craft(data, plan)
    assert len(crafted) == len(data)
    for pkt in other_flow.packets:
        a = data[pkt.raw_offset : pkt.raw_offset + 16]
        b = crafted[pkt.raw_offset : pkt.raw_offset + 16]
        assert a == b


def test_apply_detects_offset_mismatch():
    data, flow = _one_flow(simple_script())
    params = _params(1_000_000.0)
    plan = plan_craft(flow, _adv_for(flow, params, 0.9), params)
    corrupted = bytearray(data)
    corrupted[plan.record_offsets[0]] ^= 0xFF
    with pytest.raises(CraftIntegrityError):
        apply_craft(bytes(corrupted), plan)


def test_verify_noop_plan_reports_zero_deltas():
    data, flow = _one_flow(simple_script())
    params = _params(1_000_000.0)
    current = normalize_values(compute_features(flow).values, params)[schema.SLOT_OF[31]]
    plan = plan_craft(flow, _adv_for(flow, params, current), params)
    report = verify_craft(data, apply_craft(data, plan), plan)
    assert report.slot_deltas == {}
    assert report.count_slots_unchanged
    assert report.timing_slots_changed == []


def test_verify_reports_rtt_side_effects_and_fixed_counts():
    # the server's final data segment is only covered by the client FIN, so
    # shifting the close drags the S2C max-RTT sample with it
    script = simple_script(segments=[
        Seg("c2s", 100, 10_000, push=True),
        Seg("s2c", 0, 5_000),
        Seg("s2c", 300, 8_000, push=True),
    ], teardown="fin", closer="client")
    data, flow = _one_flow(script)
    params = _params(1_000_000.0)
    before = compute_features(flow).values
    plan = plan_craft(flow, _adv_for(flow, params, 0.9), params)
    assert plan.shift_ms > 0
    report = verify_craft(data, apply_craft(data, plan), plan)
    assert report.count_slots_unchanged
    assert 31 in report.timing_slots_changed
    assert 54 in report.timing_slots_changed  # S2C max RTT grew
    assert report.slot_deltas[54] == pytest.approx(plan.shift_ms)
    assert report.achieved_duration_ms == pytest.approx(
        before[schema.SLOT_OF[31]] + plan.shift_ms, abs=1e-3)


def test_verify_catches_a_missed_target():
    data, flow = _one_flow(simple_script())
    params = _params(1_000_000.0)
    plan = plan_craft(flow, _adv_for(flow, params, 0.9), params)
    plan.shift_ms += 50.0  # pretend the plan wanted more than was applied
    crafted = apply_craft(data, plan)  # applies the inflated shift
    plan.shift_ms -= 100.0
    with pytest.raises(CraftToleranceError):
        verify_craft(data, crafted, plan)


def test_crafted_flow_remains_time_sorted_and_closes_the_loop():
    data, flow = _one_flow(simple_script())
    params = _params(800_000.0)
    adv = _adv_for(flow, params, 0.8)
    plan = plan_craft(flow, adv, params)
    crafted = apply_craft(data, plan)
    [new_flow] = assemble_flows(parse_pcap(crafted), idle_timeout=None)
    ts = [p.ts_us for p in new_flow.packets]
    assert ts == sorted(ts)
    [recomputed] = recompute_crafted_features(crafted, [plan])
    renorm = normalize_values(recomputed.values, params)[schema.SLOT_OF[31]]
    assert renorm == pytest.approx(adv.perturbed.values[schema.SLOT_OF[31]], abs=1e-4)
