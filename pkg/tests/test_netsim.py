import dataclasses
import io

import numpy as np
import pytest

from dropmark.dsg import PeriodConfig, SharedKey
from dropmark.gilbert import GilbertParams
from dropmark.harness import scale_params
from dropmark.netsim import (
    BottleneckConfig,
    PacketTrace,
    PathConfig,
    effective_throughput,
    read_loss_vector,
    run_bottleneck,
    simulate_bottleneck,
    simulate_exfil_path,
    write_loss_vector,
)

from oracles import md1k_loss

MS = 1_000_000
KEY = SharedKey(b"net", b"x")
PERIOD = PeriodConfig(60 * 10**9, 0, 500_000.0)
NO_DROPS = GilbertParams.bernoulli(0.0, 2)
BURSTY = GilbertParams.from_dict({-2: 0.001, -1: 0.05, 1: 0.3, 2: 0.5})


def small_path(**kw):
    base = dict(flow_bytes=20_000 * 1500)
    base.update(kw)
    return PathConfig(**base)


# -- bottleneck ----------------------------------------------------------------

def test_underloaded_poisson_no_loss():
    cfg = BottleneckConfig(arrival="poisson", arrival_rate=0.2 * 12.5e6, packets=10**6)
    assert simulate_bottleneck(cfg, 1).mean() < 1e-6


def test_lockstep_periodic_no_loss():
    cfg = BottleneckConfig(arrival="periodic", arrival_rate=12.5e6, packets=200_000)
    assert simulate_bottleneck(cfg, 0).sum() == 0


def test_md1k_matches_embedded_chain():
    rho, z = 0.95, 10
    cfg = BottleneckConfig(buffer_size=z, arrival="poisson", arrival_rate=rho * 12.5e6, packets=2_000_000)
    b = simulate_bottleneck(cfg, 7)
    batches = b.reshape(200, -1).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(batches.size)
    assert abs(b.mean() - md1k_loss(rho, z)) < 4 * se


@pytest.mark.parametrize("arrival", ["poisson", "onoff", "periodic"])
def test_conservation(arrival):
    cfg = BottleneckConfig(arrival=arrival, arrival_rate=1.1 * 12.5e6, packets=50_000)
    run = run_bottleneck(cfg, 3)
    assert run.arrivals == run.departures + int(run.losses.sum()) + run.residual
    assert 0 <= run.residual <= cfg.buffer_size


def test_bottleneck_deterministic_and_file_roundtrip():
    cfg = dataclasses.replace(BottleneckConfig(), packets=20_000)
    a, b = simulate_bottleneck(cfg, 5), simulate_bottleneck(cfg, 5)
    assert np.array_equal(a, b)
    buf = io.StringIO()
    write_loss_vector(a, buf)
    assert buf.getvalue().count("\n") == a.size
    assert set(buf.getvalue().split()) <= {"0", "1"}
    assert np.array_equal(read_loss_vector(io.StringIO(buf.getvalue())), a)


def test_bottleneck_config_validation():
    with pytest.raises(ValueError):
        BottleneckConfig(buffer_size=0)
    with pytest.raises(ValueError):
        BottleneckConfig(arrival="bursty")
    with pytest.raises(ValueError):
        BottleneckConfig(service_rate=0)


# -- exfiltration path -----------------------------------------------------------

def post_ramp_ipds(trace, cfg):
    ts = trace.timestamps
    steady = ts >= ts[0] + cfg.ramp_ns + cfg.rtt1_ns
    return np.diff(ts)[steady[1:]]


def test_lossless_ipds_constant():
    cfg = small_path()
    res = simulate_exfil_path(cfg, KEY, PERIOD, NO_DROPS, enable_watermark=False, seed=1)
    ipd = post_ramp_ipds(res.trace, cfg)
    assert ipd.size > 10_000
    assert (ipd == cfg.packet_time_ns).all()
    assert res.watermark_dropped.sum() == 0 and res.apd_dropped.sum() == 0


def test_ramp_accelerates():
    cfg = small_path()
    ts = simulate_exfil_path(cfg, KEY, PERIOD, NO_DROPS, False, 1).trace.timestamps
    ipd = np.diff(ts)
    assert ipd[0] > 5 * cfg.packet_time_ns
    assert (np.diff(ipd[ts[1:] < ts[0] + cfg.ramp_ns]) <= 0).all()


def test_single_drop_gap_and_burst_release():
    cfg = small_path(rate=500_000.0, rtts_ns=(80 * MS, 60 * MS, 40 * MS))
    j = 5000
    res = simulate_exfil_path(cfg, KEY, PERIOD, NO_DROPS, False, 2, forced_drops=[j])
    ts = res.trace.timestamps
    ipd = np.diff(ts)
    gap = ipd[j - 2]  # gap before packet j arrives
    assert gap >= cfg.rtt1_ns
    assert ipd.argmax() == j - 2
    # the buffered packets behind the hole are released back to back
    ser = round(cfg.packet_size * 1e9 / cfg.link_rate)
    assert (ipd[j - 1 : j + 10] <= ser).all()


def test_destination_seq_complete_and_strictly_increasing():
    cfg = small_path(loss_rate=5e-3)
    params = scale_params(BURSTY, 2e-3)
    res = simulate_exfil_path(cfg, KEY, PERIOD, params, True, 11)
    assert res.trace.seq.tolist() == list(range(1, cfg.packets + 1))
    assert (np.diff(res.trace.timestamps) > 0).all()
    assert res.watermark_dropped.sum() > 0 and res.apd_dropped.sum() > 0


def test_every_isolated_drop_yields_one_gap():
    cfg = small_path()
    dt = cfg.packet_time_ns
    spacing = 2 * cfg.rtt1_ns // dt + 50
    drops = list(range(1000, cfg.packets - 500, spacing))
    res = simulate_exfil_path(cfg, KEY, PERIOD, NO_DROPS, False, 0, forced_drops=drops)
    ipd = np.diff(res.trace.timestamps)
    big = np.flatnonzero(ipd >= cfg.rtt1_ns - 2 * dt)
    assert (big + 2).tolist() == drops


def test_burst_drop_yields_single_gap():
    cfg = small_path()
    drops = list(range(3000, 3008))
    ipd = np.diff(simulate_exfil_path(cfg, KEY, PERIOD, NO_DROPS, False, 0, forced_drops=drops).trace.timestamps)
    assert (ipd >= cfg.rtt1_ns - 2 * cfg.packet_time_ns).sum() == 1


def test_decision_log_matches_drops():
    cfg = small_path()
    params = scale_params(BURSTY, 2e-3)
    res = simulate_exfil_path(cfg, KEY, PERIOD, params, True, 4)
    first = [d for d in res.decisions if d.dropped]
    assert len(first) >= int(res.watermark_dropped.sum())
    assert all(d.interval_index is not None for d in first)
    assert len(res.decisions) >= cfg.packets
    assert res.decisions.drops == len(first)


def test_deterministic():
    cfg = small_path(loss_rate=1e-3, jitter_ns=0.3 * MS)
    params = scale_params(BURSTY, 1e-3)
    a = simulate_exfil_path(cfg, KEY, PERIOD, params, True, 99).trace
    b = simulate_exfil_path(cfg, KEY, PERIOD, params, True, 99).trace
    c = simulate_exfil_path(cfg, KEY, PERIOD, params, True, 100).trace
    assert a == b and a != c


def test_path_config_validation():
    with pytest.raises(ValueError):
        PathConfig(flow_bytes=0)
    with pytest.raises(ValueError):
        PathConfig(loss_rate=1.5)
    with pytest.raises(ValueError):
        PathConfig(rtts_ns=(80 * MS, 0, 40 * MS))
    with pytest.raises(ValueError):
        PathConfig(rtts_ns=(80 * MS, 60 * MS))
    assert PathConfig(rtts_ns=(50 * MS,), stepping_stones=3).rtts_ns == (50 * MS,) * 4
    with pytest.raises(ValueError):
        simulate_exfil_path(small_path(), KEY, PERIOD, NO_DROPS, False, 0, forced_drops=[0])


# -- throughput and trace files -------------------------------------------------

def test_throughput_arithmetic():
    ts = np.linspace(0, 10**9, 1000).astype(np.int64)
    trace = PacketTrace(np.arange(1, 1001), ts, np.full(1000, 1500))
    assert effective_throughput(trace) == pytest.approx(1.5e6)
    with pytest.raises(ValueError):
        effective_throughput(trace[:1])


def test_lossless_throughput_close_to_rate():
    cfg = PathConfig(flow_bytes=100_000 * 1500, ramp_ns=0)
    res = simulate_exfil_path(cfg, KEY, PERIOD, NO_DROPS, False, 0)
    assert effective_throughput(res.trace) == pytest.approx(cfg.rate, rel=0.01)


def test_loss_response_lowers_throughput():
    cfg = PathConfig(flow_bytes=50_000 * 1500, loss_response=True)
    tput = {}
    for p in (1e-4, 1e-2):
        tput[p] = effective_throughput(
            simulate_exfil_path(dataclasses.replace(cfg, loss_rate=p), KEY, PERIOD, NO_DROPS, False, 3).trace)
    assert tput[1e-2] < tput[1e-4]


def test_trace_csv_roundtrip():
    trace = PacketTrace([1, 2, 3], [10, 25, 40], [1500, 1500, 40])
    buf = io.StringIO()
    trace.to_csv(buf)
    assert buf.getvalue() == "seq,timestamp_ns,size_bytes\n1,10,1500\n2,25,1500\n3,40,40\n"
    assert PacketTrace.from_csv(io.StringIO(buf.getvalue())) == trace
    assert trace.total_bytes == 3040 and len(trace[1:]) == 2
