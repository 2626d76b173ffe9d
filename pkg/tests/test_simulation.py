import time

from dpsim import Simulation
from dpsim.scenario import load_scenario

from helpers import scenario

RICH = {"media_bit_error": {"latent_rate": 0.2}, "media_crash": {}, "software_bug": {"rate": 0.2},
        "natural_disaster": {"rate": 0.02}, "operator_error": {"rate": 0.05}}


def test_identical_runs_are_identical():
    s = scenario(items=40, sites=5, horizon=10.0, threats=RICH, audit={"third_party": True, "mutual": True})
    a, b = Simulation(s, 3).run(), Simulation(s, 3).run()
    assert a.summary_json() == b.summary_json() and a.csv_text() == b.csv_text()
    assert a.incident_text() == b.incident_text()


def test_seeds_differ():
    s = scenario(items=40, sites=5, horizon=10.0, threats=RICH)
    assert Simulation(s, 1).run().summary_json() != Simulation(s, 2).run().summary_json()


def test_summary_carries_provenance():
    s = scenario(items=5, sites=3)
    summary = Simulation(s, 11).run().summary()
    assert summary["seed"] == 11 and summary["scenario_hash"] == s.scenario_hash
    assert summary["schema_version"].startswith("dpsim.")


def test_run_until_then_run_matches_straight_run():
    s = scenario(items=20, sites=4, horizon=8.0, threats=RICH)
    sim = Simulation(s, 5)
    sim.run_until(3.3)
    assert sim.run().summary_json() == Simulation(s, 5).run().summary_json()


def test_desk_scale_run_time():
    s = load_scenario("scenarios/desk_scale.toml")
    start = time.process_time()
    res = Simulation(s, 0).run()
    elapsed = time.process_time() - start
    assert res.final.time == s.horizon_years
    assert elapsed < 10.0, f"desk-scale run took {elapsed:.1f}s of CPU"
