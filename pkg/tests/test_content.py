import pytest
from hypothesis import given, settings, strategies as st

from dpsim import Simulation
from dpsim.content import (ConfigurationError, ContentItem, ContentState, DigestAlgorithm, Format, MediaUnit,
                           Origin, ReplicaState, World)

from helpers import scenario


def world(**algs) -> World:
    return World({k: DigestAlgorithm(k, **v) for k, v in (algs or {"sha1": {}}).items()})


def test_digest_is_deterministic_and_distinguishes_states():
    w = world()
    s = ContentState("i0", 0)
    bad = s.damaged(("x", "s0", 0))
    assert w.digest_of(s, "sha1") == w.digest_of(s, "sha1")
    assert w.digest_of(s, "sha1") != w.digest_of(bad, "sha1")


def test_unknown_algorithm_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        world().digest_of(ContentState("i0", 0), "md5")


def test_forgery_collides_only_under_broken_algorithms():
    w = world(sha1={"broken_at": 1.0}, sha256={})
    s = ContentState("i0", 0)
    forged = s.damaged(("forge", "s0", 0))
    assert w.register_forgery(forged, s, 0.5) == []
    assert w.register_forgery(forged, s, 2.0) == ["sha1"]
    assert w.digest_of(forged, "sha1") == w.digest_of(s, "sha1")
    assert w.digest_of(forged, "sha256") != w.digest_of(s, "sha256")
    # a nonced digest never reuses the forgery table
    assert w.digest_of(forged, "sha1", nonce=7) != w.digest_of(s, "sha1", nonce=7)


def test_latent_break_is_still_trusted():
    alg = DigestAlgorithm("sha1", broken_at=1.0, break_public_at=3.0)
    assert alg.broken(2.0) and alg.trusted(2.0)
    assert not alg.trusted(3.0)


def test_emulated_format_is_always_readable():
    assert Format("f", obsolete_at=1.0, emulated=True).readable(100.0)
    assert not Format("f", obsolete_at=1.0).readable(1.0)
    assert Format("f").readable(1e9)


def test_size_and_media_ranges_are_checked():
    with pytest.raises(ValueError):
        ContentItem("i", 0, "f", Origin.PUSH)
    with pytest.raises(ValueError):
        MediaUnit("u", "s", 1.0, 1.5, 0.0, 1.0, 0.0, "consumer")
    with pytest.raises(ValueError):
        MediaUnit("u", "s", 1.0, 0.0, -0.1, 1.0, 0.0, "consumer")


def test_true_state_starts_pristine():
    item = ContentItem("i", 10, "f", Origin.PUSH)
    assert item.true_state == ContentState("i", 0) and item.current_variant == 0


def built(n_items=3, n_sites=4, **kw):
    sim = Simulation(scenario(items={"count": n_items, "publisher_available": False}, sites=n_sites, **kw), 0)
    sim.run_until(0.0)
    return sim


def test_loss_predicate_requires_no_intact_and_no_publisher():
    sim = built()
    w = sim.world
    item = w.items["i0"]
    reps = list(item.replicas.values())
    for r in reps[:-1]:
        w.set_state(r, ReplicaState.LOST)
    assert item.lost_at is None
    w.set_state(reps[-1], ReplicaState.CORRUPT, reps[-1].content.damaged(("t", "s", 0)))
    assert item.lost_at is not None and w.irrecoverably_lost(item)
    assert w.losses == [(item.lost_at, "i0")]


def test_publisher_keeps_an_item_recoverable():
    sim = built()
    item = sim.world.items["i1"]
    item.publisher_available = True
    for r in list(item.replicas.values()):
        sim.world.set_state(r, ReplicaState.LOST)
    assert not sim.world.irrecoverably_lost(item) and item.lost_at is None


def test_lost_replica_cannot_be_revived():
    sim = built()
    r = next(iter(sim.world.items["i0"].replicas.values()))
    sim.world.set_state(r, ReplicaState.LOST)
    with pytest.raises(ValueError):
        sim.world.set_state(r, ReplicaState.INTACT)


def test_replica_index_walks_units():
    sim = built(n_items=5, n_sites={"count": 3, "units_per_site": 2})
    w = sim.world
    held = w.replicas_at("s0")
    assert [w.replica_at_index("s0", k) for k in range(len(held))] == held
    assert w.replica_at_index("s0", len(held)) is None


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2),
                          st.sampled_from([ReplicaState.INTACT, ReplicaState.CORRUPT, ReplicaState.LOST,
                                           ReplicaState.FORGED, None])), max_size=40))
def test_counters_track_states(ops):
    sim = built(n_items=3, n_sites=6, strategy={"replication": {"n": 6}})
    w = sim.world
    for item_k, rep_k, state in ops:
        item = w.items[f"i{item_k % 3}"]
        reps = list(item.replicas.values())
        if not reps:
            continue
        r = reps[rep_k % len(reps)]
        if state is None:
            w.decommission(r)
        elif r.state is not ReplicaState.LOST:
            content = w.reference_state(r) if state is ReplicaState.INTACT else r.content.damaged(("t", "x", rep_k))
            w.set_state(r, state, content)
    for item in w.items.values():
        counts = item.state_counts()
        assert sum(counts.values()) == len(item.replicas)
        assert item.n_intact == counts[ReplicaState.INTACT]
        assert item.created - item.lost - item.decommissioned == item.current_count
        if w.irrecoverably_lost(item):
            assert item.lost_at is not None
    for site in w.sites.values():
        assert site.n_replicas == sum(1 for r in w.replicas_at(site.id))
