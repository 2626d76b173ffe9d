import copy
import math

import pytest
from hypothesis import given, settings, strategies as st

from dpsim import Simulation, aggregate
from dpsim.content import ReplicaState
from dpsim.metrics import CSV_COLUMNS, aggregate_table, bucket_index, percentile

from helpers import scenario

RICH_THREATS = {
    "media_crash": {"annual_hazard": 0.2}, "media_bit_error": {"latent_rate": 0.05},
    "hardware_transient": {"rate": 1.0, "mean_outage_years": 0.2}, "software_bug": {"rate": 0.3},
    "comm_error": {"probability": 0.05}, "natural_disaster": {"rate": 0.05},
    "network_service_failure": {"rate": 0.5, "affected_fraction": 0.2},
    "operator_error": {"rate": 0.3}, "organizational_failure": {"rate": 0.05},
}


def test_percentile_nearest_rank():
    assert math.isnan(percentile([], 0.5))
    assert percentile([1.0, 2.0, 3.0, 4.0], 0.5) == 2.0
    assert percentile([1.0, 2.0, 3.0, 4.0], 0.9) == 4.0


def test_bucket_index_edges():
    bounds = [0.01, 0.1, 1.0]
    assert [bucket_index(x, bounds) for x in (0.0, 0.01, 0.05, 1.0, 2.0)] == [0, 0, 1, 2, 3]


def test_fraction_lost_counts_items():
    s = scenario(items={"count": 100, "publisher_available": False}, sites=3, horizon=2.0,
                 inject=[{"at": 1.0, "kind": "lose", "items": [f"i{k}" for k in range(10)]}])
    res = Simulation(s, 0).run()
    assert res.final.fraction_irrecoverably_lost == pytest.approx(0.10)
    assert res.lost_items == 10


def test_csv_has_documented_columns():
    res = Simulation(scenario(horizon=3.0), 0).run()
    lines = res.csv_text().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 1 + len(res.snapshots) == 1 + 4


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_snapshot_invariants(seed):
    s = scenario(items={"count": 40, "publisher_available": True}, sites={"count": 6, "zones": 2}, horizon=8.0,
                 snapshot_interval=0.5, access_rate=0.5, threats=RICH_THREATS,
                 audit={"third_party": True, "third_party_interval": 0.5})
    res = Simulation(s, seed).run()
    lost = [snap.fraction_irrecoverably_lost for snap in res.snapshots]
    assert lost == sorted(lost)
    times = [snap.time for snap in res.snapshots]
    assert times == sorted(times) and times[-1] == 8.0
    for snap in res.snapshots:
        for f in (snap.fraction_irrecoverably_lost, snap.fraction_impaired_recoverable,
                  snap.undetected_forgery_fraction):
            assert 0.0 <= f <= 1.0
        assert sum(snap.impaired_delay_histogram) == round(snap.fraction_impaired_recoverable * 40)
        assert sum(n for _, n in snap.replica_count_histogram) == snap.items_ingested


def summary(seed=0, n=3, horizon=5.0):
    s = scenario(items=20, sites=5, horizon=horizon, strategy={"replication": {"n": n}},
                 threats={"media_crash": {"annual_hazard": 0.3}}, audit={"third_party": True})
    out = Simulation(s, seed).run().summary()
    out["point"] = f"n={n}"
    return out


def test_aggregate_single_run_equals_run():
    one = summary()
    agg = aggregate([one])
    p = agg["points"][0]
    assert p["runs"] == 1 and p["seeds"] == [0]
    for m in agg["metrics"]:
        v = one["final"][m]
        if v is None:
            assert math.isnan(p["mean"][m])
        else:
            assert p["mean"][m] == v and p["se"][m] == 0.0


def test_aggregate_identical_runs_have_zero_variance():
    runs = [copy.deepcopy(summary(seed=4)) for _ in range(5)]
    p = aggregate(runs)["points"][0]
    assert all(v == 0.0 for k, v in p["se"].items() if not math.isnan(v))


def test_aggregate_pairs_seeds_against_first_point():
    runs = [summary(seed=k, n=n) for n in (1, 3) for k in range(4)]
    agg = aggregate(runs)
    base, other = agg["points"]
    assert agg["baseline"] == "n=1"
    assert base["diff_mean"]["fraction_irrecoverably_lost"] == 0.0
    m = "fraction_irrecoverably_lost"
    assert other["diff_mean"][m] == pytest.approx(other["mean"][m] - base["mean"][m])
    table = aggregate_table(agg).splitlines()
    assert table[0].startswith("point,runs,") and len(table) == 3


def test_aggregate_rejects_mismatched_schemas():
    a, b = summary(), summary(seed=1)
    del b["final"]["alarms"]
    with pytest.raises(ValueError):
        aggregate([a, b])
    with pytest.raises(ValueError):
        aggregate([])


def test_ground_truth_forgery_fraction():
    s = scenario(items=10, sites=3, horizon=3.0, algorithms={"sha1": {"broken_at": 0.0}},
                 inject=[{"at": 1.0, "kind": "forge", "items": ["i0", "i1"], "site": "s0"}])
    res = Simulation(s, 0).run()
    assert res.final.undetected_forgery_fraction == pytest.approx(0.2)


def test_no_faults_means_no_impairment():
    res = Simulation(scenario(items=50, horizon=10.0, access_rate=1.0), 0).run()
    assert res.access["accesses"] > 0 and res.access["impaired"] == 0 and res.access["failed"] == 0
    assert all(s.fraction_impaired_recoverable == 0 for s in res.snapshots)


def test_replica_histogram_reflects_losses():
    s = scenario(items=4, sites=3, horizon=1.0, strategy={"repair": False},
                 inject=[{"at": 0.5, "kind": "lose", "item": "i0", "site": "s0"}])
    res = Simulation(s, 0).run()
    assert dict(res.final.replica_count_histogram) == {2: 1, 3: 3}
    sim = Simulation(s, 0)
    sim.run()
    assert sim.world.items["i0"].state_counts()[ReplicaState.LOST] == 1
