from pathlib import Path

import pytest
import tomli
from hypothesis import given, settings, strategies as st

from dpsim import ScenarioError, load_scenario, parse_scenario
from dpsim.scenario import THREATS, TAXONOMY, effective_interval, set_path, validate

from helpers import raw_scenario, to_toml

ROOT = Path(__file__).resolve().parents[1]
SHIPPED = sorted((ROOT / "scenarios").glob("*.toml"))


def errors(raw) -> list[str]:
    with pytest.raises(ScenarioError) as exc:
        validate(raw, "x.toml", to_toml(raw))
    return [str(d) for d in exc.value.diagnostics]


def test_taxonomy_covers_thirteen_headings():
    assert len(TAXONOMY) == 13
    assert len(THREATS) == len(set(THREATS)) == 15


@pytest.mark.parametrize("path", SHIPPED + [ROOT / "tests/data/valid_minimal.toml"], ids=lambda p: p.name)
def test_shipped_scenarios_validate(path):
    s = load_scenario(path)
    assert s.horizon_years > 0 and all(name in s.threats.threats for name in THREATS)


def test_missing_disposition_names_the_threat():
    raw = raw_scenario()
    del raw["threats"]["internal_attack"]
    msgs = errors(raw)
    assert any("internal_attack" in m for m in msgs)


def test_landslide_out_of_range():
    raw = raw_scenario(audit={"landslide_fraction": 1.5})
    assert any("landslide_fraction" in m for m in errors(raw))


def test_every_violation_is_reported():
    raw = raw_scenario(audit={"landslide_fraction": 1.5, "quorum": 0})
    del raw["threats"]["comm_error"]
    raw["bogus"] = 1
    msgs = errors(raw)
    for needle in ("landslide_fraction", "quorum", "comm_error", "bogus"):
        assert any(needle in m for m in msgs), needle


def test_diagnostics_carry_line_numbers():
    text = to_toml(raw_scenario(audit={"quorum": -3}))
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text, "q.toml")
    d = exc.value.diagnostics[0]
    assert d.file == "q.toml" and text.splitlines()[d.line - 1].startswith("quorum")


def test_excluded_threat_keeps_reason():
    raw = raw_scenario()
    raw["threats"]["natural_disaster"] = {"excluded": True, "reason": "single building"}
    s = validate(raw)
    assert not s.threats.enabled("natural_disaster")
    assert s.threats.threats["natural_disaster"].reason == "single building"
    assert s.threats.rate("natural_disaster") == 0.0


def test_overrides_apply_dotted_keys():
    text = to_toml(raw_scenario())
    s = parse_scenario(text, overrides={"strategy.replication.n": 5, "audit.quorum": 4})
    assert s.strategy.fixed_n == 5 and s.audit.quorum == 4
    raw = {}
    set_path(raw, "a.b.c", 1)
    assert raw == {"a": {"b": {"c": 1}}}


def test_rate_limit_infeasible_interval_warns():
    raw = raw_scenario(items=100, sites=1, audit={"third_party": True, "third_party_interval": 1.0},
                       strategy={"rate_limits": {"audit_polls": 50.0}, "replication": {"n": 1}})
    s = validate(raw)
    assert s.audit.effective_third_party_interval == pytest.approx(2.0)
    assert any("effective interval 2y" in w for w in s.warnings)
    feasible = validate(raw_scenario(items=100, sites=1, audit={"third_party": True},
                                     strategy={"rate_limits": {"audit_polls": 200.0}, "replication": {"n": 1}}))
    assert feasible.warnings == [] and feasible.audit.effective_third_party_interval == 1.0


def test_effective_interval_arithmetic():
    assert effective_interval(1.0, 100, float("inf")) == 1.0
    assert effective_interval(1.0, 100, 200.0) == 1.0
    assert effective_interval(1.0, 100, 50.0) == 2.0


def test_p2p_thresholds_must_be_ordered():
    raw = raw_scenario(sites=10, strategy={"replication": {"mode": "p2p", "target_min": 3, "repair_threshold": 5}})
    assert errors(raw)


def test_scenario_hash_tracks_content():
    a = validate(raw_scenario())
    b = validate(raw_scenario())
    c = validate(raw_scenario(horizon=11.0))
    assert a.scenario_hash == b.scenario_hash != c.scenario_hash


def test_unreadable_file_is_a_diagnostic(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        load_scenario(tmp_path / "nope.toml")
    assert "cannot read" in str(exc.value)


def test_toml_helper_round_trips():
    raw = raw_scenario(audit={"algorithms": ["sha1", "sha256"]}, algorithms={"sha1": {"broken_at": 3.0}},
                       inject=[{"at": 1.0, "kind": "corrupt", "item": "i0"}])
    assert tomli.loads(to_toml(raw)) == raw


junk = st.recursive(
    st.one_of(st.none(), st.booleans(), st.integers(-5, 5), st.floats(allow_nan=False, width=32), st.text(max_size=5)),
    lambda inner: st.one_of(st.lists(inner, max_size=3), st.dictionaries(st.text(max_size=6), inner, max_size=3)),
    max_leaves=8)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["items", "sites", "strategy", "audit", "threats", "costs", "budgets", "formats",
                        "algorithms", "horizon_years", "inject", "strategy.replication", "threats.media_crash",
                        "audit.algorithms", "sites.count", "budgets.streams"]), junk)
def test_validation_is_total(section, value):
    raw = raw_scenario()
    set_path(raw, section, value)
    try:
        validate(raw, "fuzz.toml")
    except ScenarioError as exc:
        assert exc.diagnostics and all(str(d).startswith("fuzz.toml:") for d in exc.diagnostics)


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=200))
def test_parser_never_crashes_on_text(text):
    try:
        parse_scenario(text, "t.toml")
    except ScenarioError as exc:
        assert exc.diagnostics
