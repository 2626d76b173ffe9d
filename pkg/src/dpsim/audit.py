"""Integrity auditing: third-party digest checks, digest-algorithm rollover,
mutual (peer-voting) audit, and the audit scheduler."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .content import ContentItem, ContentState, DigestRecord, Replica, ReplicaState, StoredIn, World
from .kernel import Event

if TYPE_CHECKING:
    from .simulation import Simulation

ROLLOVER_RETRIES = 10
AUDIT_SLOTS = 1000  # audit events per interval; larger collections share slots
_TP_PASS = ("third_party", "pass")
LOST, INTACT = ReplicaState.LOST, ReplicaState.INTACT


@dataclass(frozen=True)
class AuditOutcome:
    """``verdict`` is what the system sees; ``truth`` adds ground-truth labels for metrics only."""

    item_id: str
    mechanism: str
    verdict: str
    latency: float | None
    site_id: str
    truth: str
    detail: str = ""


def _truth(verdict: str, replica: Replica) -> str:
    if verdict == "pass" and replica.state is not ReplicaState.INTACT:
        return "undetected_forgery" if replica.state is ReplicaState.FORGED else "undetected_corruption"
    return verdict


def _mismatched(world: World, content: ContentState, records: list[DigestRecord], now: float) -> list[str] | None:
    """Algorithms whose trusted stored digest disagrees with ``content``; None when nothing is trusted."""
    algs, forgeries = world.algorithms, world.forgeries
    bad: list[str] = []
    trusted = False
    for rec in records:
        aid = rec.algorithm_id
        if not algs[aid].trusted(now):
            continue
        trusted = True
        v = rec.value
        # inline digest_of(content, aid): unsalted digests see the forgery table
        state = forgeries.get((content, aid), content) if forgeries else content
        if v.state != state or v.nonce is not None or v.algorithm_id != aid:
            bad.append(aid)
    return bad if trusted else None


def third_party_audit(world: World, replica: Replica, records: list[DigestRecord], now: float) -> AuditOutcome:
    """Recompute digests of the replica's current content and compare with every trusted stored record."""
    bad = _mismatched(world, replica.content, records, now)
    if bad is None:
        return AuditOutcome(replica.item_id, "third_party", "alarm", None, replica.site_id, "alarm",
                            "no trusted digest on record")
    verdict = "mismatch" if bad else "pass"
    latency = None
    if bad and replica.damaged_at is not None:
        latency = now - replica.damaged_at
    detail = f"mismatch under {', '.join(bad)}" if bad else ""
    return AuditOutcome(replica.item_id, "third_party", verdict, latency, replica.site_id,
                        _truth(verdict, replica), detail)


class Auditor:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.spec = sim.scenario.audit
        self.external = self.spec.digest_placement == StoredIn.EXTERNAL_STORE.value
        self.outcomes: Counter = Counter()
        self.truths: Counter = Counter()
        self._trust_at = math.nan
        self._trust_cache: frozenset = frozenset()
        self._clean_passes = 0  # third-party passes of intact replicas, folded in by verdict_counts()
        self.assurance_gap: set[str] = set()
        self._poll_seq = 0
        self._polls_limited = math.isfinite(sim.scenario.strategy.rate_limits["audit_polls"])

    def register(self, handlers: dict) -> None:
        handlers.update({
            "audit_third_party": self._on_third_party, "audit_replica": self._on_audit_replica,
            "audit_mutual": self._on_mutual, "rollover": self._on_rollover,
            "rollover_retry": self._on_rollover_retry, "quarantine": self._on_quarantine,
        })

    @property
    def world(self) -> World:
        return self.sim.world

    @property
    def now(self) -> float:
        return self.sim.kernel.now

    # --------------------------------------------------------------- records

    def _fresh(self, content: ContentState, stored_in: StoredIn) -> list[DigestRecord]:
        world = self.world
        return [DigestRecord(a, world.digest_of(content, a), self.now, stored_in) for a in world.active_algorithms]

    def attach_records(self, item: ContentItem, replica: Replica) -> None:
        """Same-system placement recomputes a replica's digests from whatever it now holds."""
        if not self.external:
            replica.digest_records = self._fresh(replica.content, StoredIn.SAME_SYSTEM)

    def attach_store_records(self, item: ContentItem, variant: int, content: ContentState) -> None:
        if self.external:
            self.world.digest_store[(item.id, variant)] = self._fresh(content, StoredIn.EXTERNAL_STORE)

    def records_for(self, replica: Replica) -> list[DigestRecord]:
        if self.external:
            return self.world.digest_store.get((replica.item_id, replica.variant), [])
        return replica.digest_records

    def verdict_counts(self) -> Counter:
        out = Counter(self.outcomes)
        if self._clean_passes:
            out[_TP_PASS] += self._clean_passes
        return out

    def truth_counts(self) -> Counter:
        out = Counter(self.truths)
        if self._clean_passes:
            out[_TP_PASS] += self._clean_passes
        return out

    def record(self, outcome: AuditOutcome) -> None:
        self.outcomes[(outcome.mechanism, outcome.verdict)] += 1
        self.truths[(outcome.mechanism, outcome.truth)] += 1
        self.sim.metrics.record_outcome(outcome)

    # -------------------------------------------------------------- schedule

    def start(self) -> None:
        if self.spec.third_party:
            self.schedule_audits("audit_third_party", self.spec.effective_third_party_interval)
        if self.spec.mutual:
            self.schedule_audits("audit_mutual", self.spec.effective_mutual_interval)
        for at, old, new in self.spec.rollovers:
            if at <= self.sim.horizon:
                self.sim.kernel.schedule(at, "rollover", old=old, new=new)

    def schedule_audits(self, kind: str, interval: float) -> list[Event]:
        """Spread items evenly over one interval in a random order behind a random phase.

        Each item then recurs exactly ``interval`` apart, so the wait from any
        instant to an item's next audit is uniform on (0, interval].  Past
        ``AUDIT_SLOTS`` items, consecutive items in the shuffled order share a
        slot; each item's phase is still uniform over the interval.
        """
        if not interval > 0:
            raise ValueError("audit interval must be positive")
        rng = self.sim.streams(f"audit:{kind}")
        order = list(self.world.items)
        rng.shuffle(order)
        n_slots = max(1, min(len(order), AUDIT_SLOTS))
        slot = interval / n_slots
        phase = rng.uniform(0.0, slot)
        events = []
        for j in range(n_slots):
            t = phase + j * slot
            batch = tuple(order[j * len(order) // n_slots:(j + 1) * len(order) // n_slots])
            if t <= self.sim.horizon and batch:
                events.append(self.sim.kernel.schedule(t, kind, items=batch, interval=interval))
        return events

    def _again(self, ev: Event) -> list[ContentItem]:
        t = self.now + ev.payload["interval"]
        if t <= self.sim.horizon:
            ev.time = t  # the popped event is recycled for the next cycle
            self.sim.kernel.schedule(ev)
        items = self.world.items
        out = []
        for item_id in ev.payload["items"]:
            item = items[item_id]
            if item.ingested_at is not None and item.lost_at is None:
                out.append(item)
        return out

    # ------------------------------------------------------------ third party

    def _on_third_party(self, ev: Event) -> None:
        for item in self._again(ev):
            self.audit_item(item)

    def audit_item(self, item: ContentItem) -> None:
        """Third-party audit of every live replica of one item."""
        sim, world, now = self.sim, self.world, self.now
        sites, read = world.sites, sim.threats.read
        deferred = sim.economy._audits_off
        charge = sim.economy.charge_poll if sim.economy.costs.preservation["audit_per_poll"] > 0 else None
        store = world.digest_store if self.external else None
        distrusted = self._distrusted(now)
        plain = not world.forgeries
        size = item.size_bytes
        th = sim.threats
        coupled, uber_fixed, units = th._read_coupled, th._uber_override, world.units
        exposure, hazards = th._exposure, th._read_hazard
        for r in list(item.replicas.values()):
            if r.state is LOST:
                continue
            site = sites[r.site_id]
            if self._polls_limited or not site.active or now < site.offline_until or site.id in deferred:
                self.audit_replica(item, r)  # slow path does the bookkeeping
                continue
            # fast path: the same steps as audit_replica for an unhindered clean pass
            if charge is not None:
                charge(site.id)
            if coupled and r.medium_id is not None:
                # inlined non-firing case of ThreatEngine.read; anything else takes the full call
                uber = uber_fixed if uber_fixed is not None else units[r.medium_id].uber_per_bit
                h = hazards.get((uber, size))
                slot = exposure.get("bitread:" + r.site_id)
                if h is not None and slot is not None and slot[0] + h < slot[1]:
                    slot[0] += h
                else:
                    read(r, size)
            records = store.get((r.item_id, r.variant), ()) if store is not None else r.digest_records
            content = r.content
            clean = False
            if plain:
                for rec in records:
                    v = rec.value
                    if distrusted and rec.algorithm_id in distrusted:
                        continue
                    if v.state != content or v.nonce is not None or v.algorithm_id != rec.algorithm_id:
                        clean = False
                        break
                    clean = True
            elif _mismatched(world, content, records, now) == []:
                clean = True
            if clean:
                r.last_audited = now
                r.last_verdict = "pass"
                if r.state is INTACT:
                    self._clean_passes += 1
                else:
                    self.outcomes[_TP_PASS] += 1
                    self.truths[("third_party", _truth("pass", r))] += 1
            else:
                self._conclude(item, r, records)

    def _distrusted(self, now: float) -> frozenset:
        if now != self._trust_at:
            self._trust_at = now
            self._trust_cache = frozenset(a for a, alg in self.world.algorithms.items() if not alg.trusted(now))
        return self._trust_cache

    def _on_audit_replica(self, ev: Event) -> None:
        item = self.world.items[ev.payload["item"]]
        r = item.replicas.get((ev.payload["site"], ev.payload["variant"]))
        if r is not None and r.state is not ReplicaState.LOST:
            self.audit_replica(item, r)

    def audit_replica(self, item: ContentItem, r: Replica) -> AuditOutcome | None:
        sim, now = self.sim, self.now
        site = self.world.sites[r.site_id]
        if not site.online(now):
            sim.counters["audits_skipped_offline"] += 1
            return None
        if sim.economy.audits_deferred(site.id):
            sim.counters["audits_deferred_budget"] += 1
            return None
        if self._polls_limited:
            wait = sim.strategy.limiter.acquire("audit_polls", site.id, now)
            if wait is not None:
                sim.counters["audits_rate_limited"] += 1
                if wait <= sim.horizon:
                    sim.kernel.schedule(wait, "audit_replica", item=item.id, site=r.site_id, variant=r.variant)
                return None
        sim.economy.charge_poll(site.id)
        sim.threats.read(r, item.size_bytes)
        records = self.world.digest_store.get((r.item_id, r.variant), ()) if self.external else r.digest_records
        return self._conclude(item, r, records)

    def _conclude(self, item: ContentItem, r: Replica, records) -> AuditOutcome:
        now = self.now
        r.last_audited = now
        outcome = third_party_audit(self.world, r, records, now)
        r.last_verdict = outcome.verdict
        self.record(outcome)
        if outcome.verdict == "mismatch":
            self._mismatch(item, r, outcome)
        elif outcome.verdict == "alarm":
            self.sim.incident("audit", r.site_id, item.id, outcome.detail)
        return outcome

    def _mismatch(self, item: ContentItem, r: Replica, outcome: AuditOutcome) -> None:
        sim = self.sim
        ref = item.versions[r.variant]
        if item.publisher_available and r.content == ref:
            # the publisher's copy hashes like ours: the stored digest is what went bad
            if self.external:
                self.attach_store_records(item, r.variant, ref)
            else:
                self.attach_records(item, r)
            r.last_verdict = "pass"
            sim.counters["digest_rebaselines"] += 1
            sim.incident("audit", r.site_id, item.id, f"{outcome.detail}; publisher copy matches, stored digest re-baselined")
            return
        r.known_bad = True
        sim.counters["detections"] += 1
        sim.incident("audit", r.site_id, item.id, f"{outcome.detail}; content or stored digest corrupt (cause ambiguous)")
        sim.strategy.request_repair(item, r.site_id, r.variant, "audit mismatch")

    # --------------------------------------------------------------- rollover

    def _on_rollover(self, ev: Event) -> None:
        old, new = ev.payload["old"], ev.payload["new"]
        world = self.world
        if new not in world.active_algorithms:
            world.active_algorithms.append(new)
        alg = world.algorithms[old]
        gap = alg.break_public_at is not None and self.now >= alg.break_public_at
        if gap:
            self.sim.counters["assurance_gaps"] += 1
            self.sim.incident("rollover", None, None, f"{old} already publicly broken: {new} digests inherit no assurance")
        for item in world.items.values():
            if item.ingested_at is not None and item.lost_at is None:
                self.rollover(item, old, new, gap)

    def _on_rollover_retry(self, ev: Event) -> None:
        p = ev.payload
        self.rollover(self.world.items[p["item"]], p["old"], p["new"], p["gap"], p["attempt"])

    def rollover(self, item: ContentItem, old: str, new: str, assurance_gap: bool = False,
                 attempt: int = 0) -> list[DigestRecord] | None:
        """Verify against ``old`` then append a ``new`` digest; on any mismatch repair first and retry."""
        world, sim, now = self.world, self.sim, self.now
        if assurance_gap:
            self.assurance_gap.add(item.id)
        appended: list[DigestRecord] = []
        bad: list[Replica] = []
        plans: list[tuple[list[DigestRecord], ContentState, StoredIn]] = []
        for v in sorted({r.variant for r in item.live_replicas()}):
            replicas = [r for r in item.live_replicas(v) if world.sites[r.site_id].online(now)]
            for r in replicas:
                sim.threats.read(r)
            if self.external:
                records = world.digest_store.get((item.id, v), [])
                if any(rec.algorithm_id == new for rec in records):
                    continue
                old_recs = [rec for rec in records if rec.algorithm_id == old]
                if not old_recs:
                    continue
                ok = [r for r in replicas if world.digest_of(r.content, old) == old_recs[0].value]
                bad += [r for r in replicas if r not in ok]
                if ok:
                    plans.append((records, ok[0].content, StoredIn.EXTERNAL_STORE))
            else:
                for r in replicas:
                    if any(rec.algorithm_id == new for rec in r.digest_records):
                        continue
                    old_recs = [rec for rec in r.digest_records if rec.algorithm_id == old]
                    if not old_recs:
                        continue
                    if world.digest_of(r.content, old) == old_recs[0].value:
                        plans.append((r.digest_records, r.content, StoredIn.SAME_SYSTEM))
                    else:
                        bad.append(r)
        if bad:
            for r in bad:
                r.known_bad = True
                r.last_verdict = "mismatch"
                sim.strategy.request_repair(item, r.site_id, r.variant, "rollover verification failed")
            sim.counters["rollover_aborts"] += 1
            sim.incident("rollover", None, item.id, f"rollover {old}->{new} aborted: {len(bad)} replicas failed verification")
            t = now + self.spec.repair_transfer_delay + sim.scenario.strategy.operator_delay_years + 0.01
            if attempt < ROLLOVER_RETRIES and t <= sim.horizon:
                sim.kernel.schedule(t, "rollover_retry", item=item.id, old=old, new=new, gap=assurance_gap,
                                    attempt=attempt + 1)
            return None
        for records, content, stored_in in plans:
            rec = DigestRecord(new, world.digest_of(content, new), now, stored_in)
            records.append(rec)
            appended.append(rec)
        sim.counters["rollovers"] += 1 if appended else 0
        return appended

    # ----------------------------------------------------------------- mutual

    def _on_mutual(self, ev: Event) -> None:
        for item in self._again(ev):
            self.mutual_audit_item(item)

    def mutual_audit_item(self, item: ContentItem) -> None:
        """Every live replica of one item polls its peers once, in shuffled order."""
        rng = self.sim.streams("audit:mutual:order")
        for v in sorted({r.variant for r in item.live_replicas()}):
            pollers = item.live_replicas(v)
            rng.shuffle(pollers)
            sites, now, economy = self.world.sites, self.now, self.sim.economy
            for poller in pollers:
                if poller.state is ReplicaState.LOST or item.replicas.get(poller.key) is not poller:
                    continue
                site = sites[poller.site_id]
                if not site.online(now) or economy.audits_deferred(site.id):
                    continue
                self.mutual_audit_round(item, poller)
        self.sim.strategy.p2p_check(item)

    def mutual_audit_round(self, item: ContentItem, poller: Replica, quorum: int | None = None,
                           landslide: float | None = None) -> AuditOutcome | None:
        """One poll: sample peers, compare nonced digest votes, then pass, repair or raise an alarm."""
        sim, world, now = self.sim, self.world, self.now
        quorum = self.spec.quorum if quorum is None else quorum
        landslide = self.spec.landslide_fraction if landslide is None else landslide
        variant, sites = poller.variant, world.sites
        holders = [r for r in item.replicas.values()
                   if r is not poller and r.variant == variant and r.state is not ReplicaState.LOST]
        q = min(quorum, len(holders))
        if q == 0:
            return None
        reachable = [r for r in holders if sites[r.site_id].online(now)]
        if len(reachable) < q:
            sim.counters["polls_deferred"] += 1
            sim.incident("audit", poller.site_id, item.id, "poll deferred: fewer than quorum peers reachable")
            return None
        if self._polls_limited and sim.strategy.limiter.acquire("audit_polls", poller.site_id, now) is not None:
            sim.counters["polls_rate_limited"] += 1
            return None
        rng = sim.streams(f"mutual:{poller.site_id}")
        sample = rng.sample(reachable, q) if q < len(reachable) else reachable
        sim.economy.charge_poll(poller.site_id)
        threats = sim.threats
        size = item.size_bytes
        threats.read(poller, size)
        self._poll_seq += 1
        # Votes are digests salted with a fresh poll nonce, so two votes agree
        # exactly when the underlying content states are equal; forgeries made
        # against unsalted digests never collide here.  Comparing states
        # directly is the same test without building digest objects.
        own = poller.content
        agree = 0
        by_vote: dict = {}
        for peer in sample:
            threats.read(peer, size)
            vote = peer.content
            if threats.garbled(peer.site_id):
                vote = vote.damaged(("garbled", self._poll_seq, peer.site_id))
            if vote == own:
                agree += 1
            else:
                by_vote.setdefault(vote, []).append(peer)
        poller.last_audited = now
        latency = None
        if agree / q >= landslide:
            verdict, detail = "pass", f"{agree}/{q} agree"
        elif (q - agree) / q >= landslide:
            verdict = "repaired"
            winner = max(by_vote, key=lambda v: len(by_vote[v]))  # first-seen wins ties
            source = rng.choice(by_vote[winner])
            detail = f"{q - agree}/{q} disagree; repairing"
            if poller.damaged_at is not None:
                latency = now - poller.damaged_at
            truth = _truth(verdict, poller) if poller.state is not ReplicaState.INTACT else "false_repair"
            poller.known_bad = True
            outcome = AuditOutcome(item.id, "mutual", verdict, latency, poller.site_id, truth, detail)
            poller.last_verdict = verdict
            self.record(outcome)
            sim.counters["detections"] += 1
            sim.incident("audit", poller.site_id, item.id, f"mutual audit: {detail}")
            sim.strategy.request_repair(item, poller.site_id, poller.variant, "mutual audit", source=source)
            return outcome
        else:
            verdict, detail = "alarm", f"{agree}/{q} agree: no landslide"
            sim.counters["alarms"] += 1
            sim.incident("alarm", poller.site_id, item.id, f"mutual audit {detail}")
            self.raise_alarm(item)
        poller.last_verdict = verdict
        outcome = AuditOutcome(item.id, "mutual", verdict, latency, poller.site_id, _truth(verdict, poller), detail)
        self.record(outcome)
        return outcome

    def raise_alarm(self, item: ContentItem) -> None:
        t = self.now + self.spec.alarm_response_delay
        if self.spec.alarm_quarantine_years <= 0:
            return
        if t <= self.now:
            self._quarantine(item)
        elif t <= self.sim.horizon:
            self.sim.kernel.schedule(t, "quarantine", item=item.id)

    def _on_quarantine(self, ev: Event) -> None:
        self._quarantine(self.world.items[ev.payload["item"]])

    def _quarantine(self, item: ContentItem) -> None:
        until = self.now + self.spec.alarm_quarantine_years
        if until > item.quarantined_until:
            item.quarantined_until = until
            self.sim.incident("alarm", None, item.id, f"repairs quarantined until {until:.6f}")
            if until <= self.sim.horizon and math.isfinite(until):
                self.sim.kernel.schedule(until, "quarantine_end", item=item.id)
