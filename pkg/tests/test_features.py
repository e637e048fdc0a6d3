import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from c2lab import schema
from c2lab.datagen import FlowScript, Seg, gen_pcap
from c2lab.features import (
    IncompleteFlowError,
    NormalizationParams,
    RawFeatureVector,
    compute_features,
    denormalize,
    fit_normalizer,
    normalize,
    normalize_values,
    read_feature_csv,
    write_feature_csv,
)
from c2lab.pcap import Flow, assemble_flows, parse_pcap
from conftest import simple_script


def flow_of(script: FlowScript) -> Flow:
    flows = assemble_flows(parse_pcap(gen_pcap([script])))
    assert len(flows) == 1
    return flows[0]


def slot(values: np.ndarray, fid: int) -> float:
    return values[schema.SLOT_OF[fid]]


def test_directional_packet_totals():
    # c2s: SYN, handshake ACK, 2 data segments, FIN, final ACK -> 6
    # s2c: SYN-ACK, server ACK, server FIN -> wait for layout below -> 4
    script = simple_script(segments=[
        Seg("c2s", 200, 1_000, push=True),
        Seg("c2s", 200, 1_000, push=True),
        Seg("s2c", 300, 1_000, push=True),
    ])
    v = compute_features(flow_of(script)).values
    assert slot(v, 3) == 6
    assert slot(v, 17) == 4


def test_zero_duration_flow():
    script = simple_script(segments=[], hs_gap_us=(0, 0), teardown_gap_us=0,
                           teardown_inter_gap_us=0)
    v = compute_features(flow_of(script)).values
    assert slot(v, 31) == 0.0


def _bruteforce_retransmits(data_packets):
    """Independent overlap oracle over (seq, payload_len) pairs."""
    seen = []
    count = 0
    for seq, ln in data_packets:
        if any(seq < e and seq + ln > s for s, e in seen):
            count += 1
        seen.append((seq, seq + ln))
    return count


def test_duplicated_data_packet_counts_as_retransmission():
    dup = Seg("c2s", 200, 1_000, push=True)
    script = simple_script(segments=[
        dup,
        Seg("s2c", 0, 500),
        Seg("c2s", 200, 800, push=True, seq_abs=10_001),  # same seq+len as dup
        Seg("c2s", 150, 700, push=True),
    ])
    flow = flow_of(script)
    v = compute_features(flow).values
    data = [(p.seq, p.payload_len) for p, d in zip(flow.packets, flow.dirs)
            if d == "c2s" and p.payload_len > 0]
    assert slot(v, 10) == _bruteforce_retransmits(data) == 1
    assert slot(v, 11) == 200


def test_out_of_sequence_segment_detected():
    script = simple_script(segments=[
        Seg("c2s", 100, 1_000, push=True),                    # seq 10001..10101
        Seg("c2s", 100, 900, push=True, seq_abs=10_301),      # skips a hole
        Seg("c2s", 100, 800, push=True, seq_abs=10_151),      # fills below expected
    ])
    v = compute_features(flow_of(script)).values
    assert slot(v, 12) == 1
    assert slot(v, 10) == 0


def test_unique_bytes_use_sequence_span():
    script = simple_script(segments=[
        Seg("c2s", 400, 1_000, push=True),
        Seg("c2s", 350, 1_000, push=True),
        Seg("s2c", 0, 500),
    ])
    v = compute_features(flow_of(script)).values
    assert slot(v, 7) == 750
    assert slot(v, 9) == 750
    assert slot(v, 8) == 2


def test_rtt_statistics_match_hand_computation():
    script = simple_script(
        hs_gap_us=(1_000, 1_000),
        segments=[
            Seg("c2s", 100, 10_000, push=True),
            Seg("s2c", 0, 40_000),               # ACK 40 ms after the data
            Seg("c2s", 100, 60_000, push=True),
            Seg("s2c", 0, 70_000),               # ACK 70 ms after
        ],
    )
    v = compute_features(flow_of(script)).values
    samples = [40.0, 70.0]
    assert slot(v, 45) == pytest.approx(np.mean(samples))
    assert slot(v, 46) == 40.0
    assert slot(v, 47) == 70.0
    assert slot(v, 48) == pytest.approx(np.std(samples))
    assert slot(v, 49) == 2


def test_ttl_extremes_per_direction():
    script = simple_script(ttl_c2s=64, ttl_s2c=57, segments=[
        Seg("c2s", 100, 1_000, ttl=120),
        Seg("s2c", 0, 1_000),
    ])
    v = compute_features(flow_of(script)).values
    assert slot(v, 50) == 120 and slot(v, 51) == 64
    assert slot(v, 57) == 57 and slot(v, 58) == 57


def test_relative_payload_and_ack_times():
    script = simple_script(
        hs_gap_us=(1_000, 1_000),
        segments=[
            Seg("c2s", 100, 8_000, push=True),
            Seg("s2c", 0, 2_000),
            Seg("s2c", 100, 3_000, push=True),
            Seg("c2s", 0, 5_000),
        ],
    )
    v = compute_features(flow_of(script)).values
    assert slot(v, 32) == 10.0       # first c2s payload at +10 ms
    assert slot(v, 33) == 15.0       # first s2c payload
    assert slot(v, 34) == 10.0
    assert slot(v, 35) == 15.0
    assert slot(v, 36) == 2.0        # handshake ACK
    assert slot(v, 37) == 12.0       # first s2c pure ACK


def test_unimplemented_slots_are_exactly_zero(small_corpus):
    from c2lab.pcap import filter_complete
    _, data = small_corpus
    for flow in filter_complete(assemble_flows(parse_pcap(data))):
        v = compute_features(flow).values
        for fid in schema.UNIMPLEMENTED_IDS:
            assert v[schema.SLOT_OF[fid]] == 0.0


def test_incomplete_flow_is_rejected():
    script = simple_script(teardown="none")
    flow = flow_of(script)
    assert not flow.complete
    with pytest.raises(IncompleteFlowError):
        compute_features(flow)


def test_direction_symmetry():
    script = simple_script(segments=[
        Seg("c2s", 321, 4_000, push=True),
        Seg("s2c", 0, 2_000),
        Seg("s2c", 222, 3_000, push=True),
        Seg("c2s", 0, 1_000),
        Seg("c2s", 100, 2_500, push=True),
    ])
    flow = flow_of(script)
    v = compute_features(flow).values
    mirrored = Flow(
        client_ip=flow.server_ip, client_port=flow.server_port,
        server_ip=flow.client_ip, server_port=flow.client_port,
        packets=flow.packets,
        dirs=["s2c" if d == "c2s" else "c2s" for d in flow.dirs],
        complete=True,
    )
    w = compute_features(mirrored).values
    assert np.array_equal(w, schema.swap_directions(v))


def test_monotone_duration_when_appending_later_packet():
    script = simple_script()
    flow = flow_of(script)
    before = slot(compute_features(flow).values, 31)
    last = flow.packets[-1]
    extra = type(last)(**{**last.__dict__, "ts_sec": last.ts_sec + 3,
                          "raw_offset": last.raw_offset + 1000})
    longer = Flow(client_ip=flow.client_ip, client_port=flow.client_port,
                  server_ip=flow.server_ip, server_port=flow.server_port,
                  packets=flow.packets + [extra], dirs=flow.dirs + ["c2s"],
                  complete=True)
    after = slot(compute_features(longer).values, 31)
    assert after >= before
    assert after == before + 3000.0


def test_compute_features_is_pure(script):
    flow = flow_of(script)
    assert np.array_equal(compute_features(flow).values, compute_features(flow).values)


# ---------------------------------------------------------------------------
# normalization

def _raw(values) -> RawFeatureVector:
    return RawFeatureVector(flow_id="x", label="benign",
                            values=np.asarray(values, dtype=np.float64))


def test_fit_normalizer_single_vector_is_identity():
    v = np.arange(86, dtype=np.float64)
    params = fit_normalizer([_raw(v)])
    assert np.array_equal(params.f_max, v)


def test_fit_normalizer_elementwise_max():
    a = np.zeros(86); a[0], a[1] = 1, 4
    b = np.zeros(86); b[0], b[1] = 3, 2
    params = fit_normalizer([_raw(a), _raw(b)])
    assert params.f_max[0] == 3 and params.f_max[1] == 4


def test_fit_normalizer_keeps_zero_slots():
    params = fit_normalizer([_raw(np.zeros(86))])
    assert (params.f_max == 0).all()
    out = normalize_values(np.ones(86), params)
    assert (out == 0).all()  # degenerate slots normalize to 0


def test_fit_normalizer_rejects_empty():
    with pytest.raises(ValueError):
        fit_normalizer([])


def test_normalize_examples():
    f_max = np.full(86, 8.0)
    params = NormalizationParams(f_max=f_max)
    assert normalize_values(np.full(86, 8.0), params)[0] == 1.0
    assert normalize_values(np.full(86, 2.0), params)[0] == 0.5   # sqrt(0.25)
    assert normalize_values(np.full(86, 32.0), params)[0] == 1.0  # clamped


def test_denormalize_examples():
    f_max = np.zeros(86)
    f_max[schema.SLOT_OF[31]] = 8000.0
    params = NormalizationParams(f_max=f_max)
    assert denormalize(31, 1.0, params) == 8000.0
    assert denormalize(31, 0.5, params) == 2000.0


@settings(max_examples=100, deadline=None)
@given(
    raw=arrays(np.float64, 86, elements=st.floats(0, 1e6)),
    f_max=arrays(np.float64, 86, elements=st.floats(0, 1e6)),
)
def test_normalization_range_and_roundtrip(raw, f_max):
    params = NormalizationParams(f_max=f_max)
    out = normalize_values(raw, params)
    assert ((out >= 0) & (out <= 1)).all()
    for i in np.nonzero((f_max > 0) & (raw <= f_max))[0]:
        fid = schema.TSTAT_IDS[i]
        back = denormalize(fid, out[i], params)
        assert back == pytest.approx(raw[i], rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    a=arrays(np.float64, 86, elements=st.floats(0, 1e5)),
    b=arrays(np.float64, 86, elements=st.floats(0, 1e5)),
)
def test_normalization_is_monotone(a, b):
    params = NormalizationParams(f_max=np.full(86, 5e4))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert (normalize_values(lo, params) <= normalize_values(hi, params)).all()


def test_normalized_vector_provenance():
    params = NormalizationParams(f_max=np.ones(86))
    nv = normalize(_raw(np.full(86, 0.25)), params, provenance="adversarial")
    assert nv.provenance == "adversarial"
    assert nv.values[0] == 0.5


# ---------------------------------------------------------------------------
# CSV interchange

def test_feature_csv_round_trip(tmp_path):
    rows = [
        RawFeatureVector("f1", "benign", np.linspace(0, 1000, 86)),
        RawFeatureVector("f2", "malicious", np.full(86, 0.123456789)),
    ]
    path = tmp_path / "features.csv"
    assert write_feature_csv(path, rows) == 2
    header = path.read_text().splitlines()[0]
    assert header.startswith("flow_id,label,f3,f4,")
    assert header.endswith("f120,f121,f122")
    back = read_feature_csv(path)
    assert [r.flow_id for r in back] == ["f1", "f2"]
    assert [r.label for r in back] == ["benign", "malicious"]
    for orig, rt in zip(rows, back):
        assert np.allclose(rt.values, orig.values, rtol=1e-5)


def test_feature_csv_header_validation(tmp_path):
    path = tmp_path / "bogus.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="feature CSV"):
        read_feature_csv(path)
