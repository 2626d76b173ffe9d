"""Survival strategies: ingest, reconciliation, replication and repair, migration,
media refresh, rolling replacement, and rate limiting."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .content import ContentItem, ContentState, MediaUnit, Replica, ReplicaState, Site
from .kernel import Event

if TYPE_CHECKING:
    from .simulation import Simulation

RATE_WINDOW = 1.0  # years; rate limits are counted per fixed window
RECONCILE_PASSES = 5


def rate_limit_check(activity: str, count_in_window: int, limit: float) -> str:
    """Return "allow" while ``count_in_window`` is below ``limit``, else "defer"."""
    if not limit > 0:
        raise ValueError(f"rate limit for {activity} must be > 0")
    return "allow" if count_in_window < limit else "defer"


class RateLimiter:
    def __init__(self, limits: dict[str, float], window: float = RATE_WINDOW):
        self.limits = limits
        self.window = window
        self._counts: dict[tuple[str, str], tuple[int, int]] = {}

    def acquire(self, activity: str, scope: str, now: float) -> float | None:
        """Consume one slot; return None when allowed, else the start of the next window."""
        limit = self.limits.get(activity, math.inf)
        if math.isinf(limit):
            return None
        w = int(math.floor(now / self.window))
        win, n = self._counts.get((activity, scope), (w, 0))
        if win != w:
            n = 0
        if rate_limit_check(activity, n, limit) == "defer":
            return (w + 1) * self.window
        self._counts[(activity, scope)] = (w, n + 1)
        return None


def balanced_classes(n_sites: int, n_classes: int) -> list[str]:
    """Class per site so each class covers floor or ceil of sites/classes."""
    return [f"c{k % n_classes}" for k in range(n_sites)]


@dataclass(frozen=True)
class MigrationRecord:
    item_id: str
    time: float
    mode: str
    from_format: str
    to_format: str
    replicas_created: int
    source: str


class StrategyEngine:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.spec = sim.scenario.strategy
        self.limiter = RateLimiter(self.spec.rate_limits)
        self.deferred: dict[str, dict[tuple[str, int], str]] = {}
        self.migration_trigger: dict[str, float] = {}

    def register(self, handlers: dict) -> None:
        handlers.update({
            "ingest": self._on_ingest, "reconcile": self._on_reconcile,
            "repair_complete": self._on_repair_complete, "repair_retry": self._on_repair_retry,
            "unit_replace": self._on_unit_replace, "rolling_replace": self._on_rolling_replace,
            "migration": self._on_migration, "quarantine_end": self._on_quarantine_end,
        })

    @property
    def world(self):
        return self.sim.world

    @property
    def now(self) -> float:
        return self.sim.kernel.now

    def start(self) -> None:
        """Schedule the recurring maintenance work: unit replacement, rolling refresh, batch migration."""
        for unit in list(self.world.units.values()):
            self._schedule_replacement(unit)
        frac = self.spec.rolling_replacement
        if frac > 0:
            for site in self.world.sites.values():
                interval = 1.0 / (frac * len(site.media_units))
                if interval <= self.sim.horizon:
                    self.sim.kernel.schedule(interval, "rolling_replace", site=site.id, interval=interval)
        if self.spec.migration_mode == "batch":
            threats = self.sim.scenario.threats
            if threats.enabled("software_format_obsolescence"):
                for fid, t in sorted(threats.get("software_format_obsolescence", "obsolete_at").items()):
                    if self.world.formats[fid].migration_target is None:
                        continue
                    trigger = max(0.0, t - self.spec.migration_lead_years)
                    self.migration_trigger[fid] = trigger
                    if trigger <= self.sim.horizon:
                        self.sim.kernel.schedule(trigger, "migration", format=fid)

    # -------------------------------------------------------------- placement

    def _unit_with_room(self, site_id: str, size: float) -> MediaUnit | None:
        for unit in self.world.site_units(site_id):
            if unit.free_bytes >= size:
                return unit
        return None

    def create_replica(self, item: ContentItem, site_id: str, variant: int, state: ReplicaState,
                       content: ContentState) -> Replica | None:
        unit = self._unit_with_room(site_id, item.size_bytes)
        if unit is None:
            return None
        replica = Replica(item.id, site_id, variant, state, content, None, self.now)
        self.world.add_replica(replica)
        self.world.move_replica(replica, unit)
        self.sim.auditor.attach_records(item, replica)
        return replica

    def replacement_site(self, item: ContentItem, variant: int) -> str | None:
        """Next active site in placement order that holds no copy of this variant."""
        order = self.sim.site_order
        start = order.index(item.roster[-1]) + 1 if item.roster else 0
        for k in range(len(order)):
            sid = order[(start + k) % len(order)]
            site = self.world.sites[sid]
            r = item.replicas.get((sid, variant))
            if site.active and (r is None or r.state is ReplicaState.LOST) and (sid, variant) not in item.in_flight:
                if sid not in item.roster:
                    item.roster.append(sid)
                return sid
        return None

    # ------------------------------------------------------------------ ingest

    def _on_ingest(self, ev: Event) -> None:
        item = self.world.items[ev.payload["item"]]
        sites = ev.payload.get("sites")
        self.ingest(item, sites)

    def ingest(self, item: ContentItem, sites: list[str] | None = None) -> list[Replica]:
        """Create the initial replicas of ``item`` at its roster sites."""
        world, spec, sim = self.world, self.spec, self.sim
        first = item.ingested_at is None
        if first:
            item.ingested_at = self.now
            sim.economy.charge_ingest(item)
            fmt = world.formats[item.format_id]
            if spec.migration_mode == "normalize_on_ingest" and fmt.migration_target is not None:
                self._new_version(item, fmt.migration_target, "normalize_on_ingest")
                sim.auditor.attach_store_records(item, 1, item.versions[1])
            sim.auditor.attach_store_records(item, 0, item.versions[0])
        variants = [item.current_variant]
        if item.current_variant > 0 and spec.preserve_original:
            variants.insert(0, 0)
        created, deferred = [], []
        for sid in sites or item.roster:
            site = world.sites[sid]
            if not site.active:
                continue
            for v in variants:
                existing = item.replicas.get((sid, v))
                if existing is not None and existing.state is not ReplicaState.LOST:
                    continue
                content, state = item.versions[v], ReplicaState.INTACT
                if item.origin.value == "pull":
                    wait = self.limiter.acquire("crawls", sid, self.now)
                    if wait is not None:
                        deferred.append(sid)
                        continue
                    if sim.streams(f"crawl:{sid}").random() < spec.miss_probability:
                        content = content.damaged(world.fresh_nonce(sid, "incomplete"))
                        state = ReplicaState.CORRUPT
                        sim.counters["incomplete_crawls"] += 1
                state, content = sim.threats.transfer(state, content, sid)
                replica = self.create_replica(item, sid, v, state, content)
                if replica is None:
                    sim.incident("ingest", sid, item.id, "ingest deferred: no unit with capacity")
                    sim.counters["ingest_deferred"] += 1
                    continue
                created.append(replica)
        if deferred:
            when = self.limiter.window * (math.floor(self.now / self.limiter.window) + 1)
            if when <= sim.horizon:
                sim.kernel.schedule(when, "ingest", item=item.id, sites=sorted(set(deferred)))
        if first:
            if not created and not deferred:
                sim.incident("ingest", None, item.id, "ingest deferred: no site with capacity")
            if item.origin.value == "pull":
                t = self.now + spec.reconcile_delay_years
                if t <= sim.horizon:
                    sim.kernel.schedule(t, "reconcile", item=item.id)
            trigger = self.migration_trigger.get(item.format_id)
            if trigger is not None and self.now >= trigger:
                self.migrate_format(item, "batch")
        world.check_loss(item, self.now)
        return created

    def _on_reconcile(self, ev: Event) -> None:
        self.reconcile_ingest(self.world.items[ev.payload["item"]])

    def reconcile_ingest(self, item: ContentItem) -> int:
        """Bring crawled copies into agreement; return the number of re-fetches or repairs started."""
        world, sim = self.world, self.sim
        actions = 0
        for v in sorted({r.variant for r in item.live_replicas()}):
            replicas = item.live_replicas(v)
            ref = item.versions[v]
            if item.publisher_available:
                wait = None
                for r in replicas:
                    for _ in range(RECONCILE_PASSES):
                        if r.content == ref:
                            break
                        wait = self.limiter.acquire("crawls", r.site_id, self.now)
                        if wait is not None:
                            break
                        state, content = sim.threats.transfer(ReplicaState.INTACT, ref, r.site_id)
                        world.set_state(r, state, content)
                        r.known_bad = False
                        sim.auditor.attach_records(item, r)
                        actions += 1
                        sim.incident("reconcile", r.site_id, item.id, f"re-fetched from publisher ({state.value})")
                    if wait is not None:
                        break
                if wait is not None and wait <= sim.horizon:
                    sim.kernel.schedule(wait, "reconcile", item=item.id)
                continue
            counts = Counter(r.content for r in replicas)
            if not counts:
                continue
            token, n = counts.most_common(1)[0]
            if 2 * n > len(replicas):
                winners = [r for r in replicas if r.content == token]
                rng = sim.streams(f"reconcile:{item.id}")
                for r in replicas:
                    if r.content != token:
                        r.known_bad = True
                        if self.request_repair(item, r.site_id, v, "reconcile", source=rng.choice(winners)):
                            actions += 1
            else:
                item.impaired_flag = True
                sim.counters["impaired_items"] += 1
                sim.incident("reconcile", None, item.id, "impaired: publisher unavailable and copies disagree")
        return actions

    # ------------------------------------------------------------------ repair

    def _defer(self, site_id: str, item: ContentItem, variant: int, reason: str) -> None:
        self.deferred.setdefault(site_id, {})[(item.id, variant)] = reason

    def pick_source(self, item: ContentItem, site_id: str, variant: int) -> Replica | None:
        """A replica believed good: not lost, not known bad, last audit passed, site reachable."""
        now = self.now
        cands = [r for r in item.live_replicas(variant)
                 if r.site_id != site_id and not r.known_bad and r.last_verdict in (None, "pass")
                 and self.world.sites[r.site_id].online(now)]
        if not cands:
            return None
        return self.sim.streams(f"repair:{site_id}").choice(cands)

    def request_repair(self, item: ContentItem, site_id: str, variant: int, reason: str,
                       source: Replica | None = None) -> bool:
        """Start (or defer) restoring a good copy of ``variant`` at ``site_id``; True if a transfer began."""
        sim, world, spec = self.sim, self.world, self.spec
        now = self.now
        if not spec.repair:
            sim.counters["repairs_disabled"] += 1
            return False
        if item.lost_at is not None:
            return False
        site = world.sites[site_id]
        if not site.active:
            if spec.replication_mode != "fixed":
                return False
            alt = self.replacement_site(item, variant)
            if alt is None:
                sim.incident("repair", site_id, item.id, "no active site left to host a replacement replica")
                return False
            site_id, site = alt, world.sites[alt]
        key = (site_id, variant)
        if key in item.in_flight:
            return False
        if now < item.quarantined_until:
            sim.counters["repairs_quarantined"] += 1
            sim.incident("repair", site_id, item.id, "repair blocked by alarm quarantine")
            return False
        if not site.online(now) or sim.economy.maintenance_deferred(site_id):
            self._defer(site_id, item, variant, reason)
            return False
        publisher = item.publisher_available
        if not publisher:
            if source is None or source.state is ReplicaState.LOST or source.site_id == site_id:
                source = self.pick_source(item, site_id, variant)
            if source is None:
                if not item.impaired_flag:
                    sim.incident("repair", site_id, item.id, "no repair source: publisher gone, no believed-good replica")
                item.impaired_flag = True
                return False
        wait = self.limiter.acquire("repairs", site_id, now)
        if wait is not None:
            sim.counters["repairs_rate_limited"] += 1
            if wait <= sim.horizon:
                sim.kernel.schedule(wait, "repair_retry", item=item.id, site=site_id, variant=variant, reason=reason)
            return False
        if publisher:
            state, content, src = ReplicaState.INTACT, item.versions[variant], "publisher"
        else:
            sim.threats.read(source)
            state, content, src = source.state, source.content, source.site_id
        delay = sim.scenario.audit.repair_transfer_delay
        if spec.repair_mode == "operator":
            delay += spec.operator_delay_years
            if sim.streams(f"operator_repair:{site.admin_domain_id}").random() < spec.operator_error_probability:
                state = ReplicaState.CORRUPT
                content = content.damaged(world.fresh_nonce(site_id, "operator_repair"))
                sim.incident("operator_error", site_id, item.id, "repair botched by operator")
        item.in_flight[key] = (now + delay, state)
        item.impaired_flag = False
        sim.counters["repairs_started"] += 1
        sim.kernel.schedule(now + delay, "repair_complete", item=item.id, site=site_id, variant=variant,
                            state=state, content=content, source=src, reason=reason)
        return True

    def _on_repair_retry(self, ev: Event) -> None:
        p = ev.payload
        item = self.world.items[p["item"]]
        r = item.replicas.get((p["site"], p["variant"]))
        if r is not None and r.state is not ReplicaState.LOST and not r.known_bad:
            return
        self.request_repair(item, p["site"], p["variant"], p["reason"])

    def _on_repair_complete(self, ev: Event) -> None:
        p = ev.payload
        sim, world = self.sim, self.world
        item = world.items[p["item"]]
        key = (p["site"], p["variant"])
        item.in_flight.pop(key, None)
        site = world.sites[p["site"]]
        if not site.active:
            sim.incident("repair_complete", site.id, item.id, "no-op: site removed")
            world.check_loss(item, self.now)
            return
        state, content = sim.threats.transfer(p["state"], p["content"], site.id)
        replica = item.replicas.get(key)
        if replica is not None and replica.state is not ReplicaState.LOST:
            was_intact = replica.state is ReplicaState.INTACT
            world.set_state(replica, state, content)
            sim.auditor.attach_records(item, replica)
        else:
            was_intact = False
            replica = self.create_replica(item, site.id, p["variant"], state, content)
            if replica is None:
                sim.incident("repair_complete", site.id, item.id, "repair failed: no unit with capacity")
                world.check_loss(item, self.now)
                return
        replica.known_bad = False
        replica.last_verdict = None
        sim.counters["repairs"] += 1
        if state is not ReplicaState.INTACT:
            sim.counters["bad_repairs"] += 1
            if was_intact:
                sim.counters["good_replicas_overwritten"] += 1
        sim.incident("repair", site.id, item.id, f"replica restored from {p['source']} ({state.value}; {p['reason']})")
        world.check_loss(item, self.now)

    def on_replicas_lost(self, replicas: list[Replica]) -> None:
        by_item: dict[str, list[Replica]] = {}
        for r in replicas:
            by_item.setdefault(r.item_id, []).append(r)
        for item_id, group in by_item.items():
            item = self.world.items[item_id]
            if self.spec.replication_mode == "fixed":
                for r in group:
                    self.request_repair(item, r.site_id, r.variant, "replica lost")
            else:
                self.p2p_check(item)

    def p2p_check(self, item: ContentItem) -> int:
        """Top a variant back up to target_min once believed-good copies fall below the threshold."""
        if self.spec.replication_mode != "p2p" or item.lost_at is not None:
            return 0
        started = 0
        for v in sorted({r.variant for r in item.replicas.values()}):
            good = sum(1 for r in item.live_replicas(v) if not r.known_bad)
            pending = sum(1 for (_, vv) in item.in_flight if vv == v)
            if good + pending >= self.spec.repair_threshold:
                continue
            need = self.spec.target_min - good - pending
            targets = [r.site_id for r in item.replicas.values()
                       if r.variant == v and (r.state is ReplicaState.LOST or r.known_bad)
                       and self.world.sites[r.site_id].active and (r.site_id, v) not in item.in_flight]
            while len(targets) < need:
                sid = self.replacement_site(item, v)
                if sid is None or sid in targets:
                    break
                targets.append(sid)
            for sid in targets[:need]:
                if self.request_repair(item, sid, v, "below repair threshold"):
                    started += 1
        return started

    def on_site_removed(self, site: Site) -> None:
        self.deferred.pop(site.id, None)

    def on_site_online(self, site: Site) -> None:
        self.flush(site.id)

    def flush(self, site_id: str) -> int:
        pending = self.deferred.pop(site_id, {})
        n = 0
        for (item_id, variant), reason in pending.items():
            item = self.world.items[item_id]
            r = item.replicas.get((site_id, variant))
            if r is not None and r.state is not ReplicaState.LOST and not r.known_bad:
                continue
            if self.request_repair(item, site_id, variant, reason):
                n += 1
        return n

    def maintain(self) -> int:
        """Release deferred work at sites that are reachable and funded again."""
        n = 0
        for site_id in list(self.deferred):
            site = self.world.sites[site_id]
            if site.online(self.now) and not self.sim.economy.maintenance_deferred(site_id):
                n += self.flush(site_id)
        return n

    def _on_quarantine_end(self, ev: Event) -> None:
        item = self.world.items[ev.payload["item"]]
        if self.now < item.quarantined_until:
            return
        for r in list(item.replicas.values()):
            if r.state is ReplicaState.LOST or r.known_bad:
                self.request_repair(item, r.site_id, r.variant, "after quarantine")
        self.p2p_check(item)

    # ------------------------------------------------------------------ media

    def current_medium_class(self) -> str:
        now = self.now
        threats = self.sim.scenario.threats
        dead = threats.get("media_hw_obsolescence", "reader_unavailable_at") if threats.enabled("media_hw_obsolescence") else {}
        usable = [(t, m) for m, t in self.sim.scenario.media_classes.items()
                  if t <= now and dead.get(m, math.inf) > now]
        if not usable:
            return self.sim.scenario.sites["medium_class"]
        return max(usable)[1]

    def deploy_unit(self, site: Site) -> MediaUnit:
        unit = self.sim.new_unit(site, self.current_medium_class())
        self.sim.threats.on_unit_deployed(unit)
        self._schedule_replacement(unit)
        return unit

    def _schedule_replacement(self, unit: MediaUnit) -> None:
        life = min(unit.service_life_years, self.spec.media_refresh_interval)
        t = unit.deployed_at + life
        if math.isfinite(t) and t <= self.sim.horizon:
            self.sim.kernel.schedule(t, "unit_replace", unit=unit.id, reason="service life")

    def on_unit_failed(self, unit: MediaUnit) -> None:
        site = self.world.sites[unit.site_id]
        if site.active:
            self.deploy_unit(site)

    def replace_unit(self, unit: MediaUnit, reason: str) -> MediaUnit | None:
        """Copy every replica on ``unit`` to a fresh unit, exposing each to read and transfer errors."""
        sim, world = self.sim, self.world
        site = world.sites[unit.site_id]
        new = self.deploy_unit(site)
        moved = 0
        for r in world.replicas_on(unit):
            sim.threats.read(r)
            if r.state is ReplicaState.LOST:
                continue
            state, content = sim.threats.transfer(r.state, r.content, site.id)
            if content != r.content:
                world.set_state(r, state, content)
            world.move_replica(r, new)
            moved += 1
        unit.alive = False
        sim.threats.on_unit_retired(unit)
        sim.counters["media_replacements"] += 1
        sim.incident("maintenance", site.id, None, f"unit {unit.id} replaced by {new.id} ({reason}), {moved} replicas copied")
        return new

    def _maintenance_blocked(self, site: Site) -> bool:
        return not site.online(self.now) or self.sim.economy.maintenance_deferred(site.id)

    def _on_unit_replace(self, ev: Event) -> None:
        unit = self.world.units.get(ev.payload["unit"])
        if unit is None or not unit.alive:
            return
        site = self.world.sites[unit.site_id]
        if not site.active:
            return
        if self._maintenance_blocked(site):
            self.sim.incident("maintenance", site.id, None, f"unit {unit.id} replacement deferred")
            self.sim.counters["maintenance_deferred"] += 1
            t = self.now + self.sim.scenario.budgets.accounting_interval
            if t <= self.sim.horizon:
                self.sim.kernel.schedule(t, "unit_replace", unit=unit.id, reason=ev.payload["reason"])
            return
        self.replace_unit(unit, ev.payload["reason"])

    def _on_rolling_replace(self, ev: Event) -> None:
        interval = ev.payload["interval"]
        t = self.now + interval
        if t <= self.sim.horizon:
            self.sim.kernel.schedule(t, "rolling_replace", site=ev.payload["site"], interval=interval)
        site = self.world.sites[ev.payload["site"]]
        if not site.active:
            return
        if self._maintenance_blocked(site):
            self.sim.counters["maintenance_deferred"] += 1
            return
        units = self.world.site_units(site.id)
        if units:
            oldest = min(units, key=lambda u: (u.deployed_at, u.id))
            self.replace_unit(oldest, "rolling replacement")

    # --------------------------------------------------------------- migration

    def _new_version(self, item: ContentItem, target: str, mode: str) -> int:
        source_format = item.format_id
        item.versions.append(ContentState(item.id, len(item.versions)))
        item.version_formats.append(target)
        item.format_id = target
        item.migrations.append((self.now, source_format, target))
        self.sim.counters["migrations"] += 1
        return item.current_variant

    def _on_migration(self, ev: Event) -> None:
        fid = ev.payload["format"]
        for item in list(self.world.items.values()):
            if item.format_id == fid and item.ingested_at is not None:
                self.migrate_format(item, "batch")

    def migrate_format(self, item: ContentItem, mode: str) -> MigrationRecord | None:
        """Convert ``item`` to its format's migration target and distribute the result."""
        sim, world = self.sim, self.world
        fmt = world.formats[item.format_id]
        if fmt.migration_target is None:
            return None
        if mode in ("on_access", "emulation", "none"):
            return MigrationRecord(item.id, self.now, mode, fmt.id, fmt.migration_target, 0, "none")
        old_v = item.current_variant
        holders = [r for r in item.live_replicas(old_v) if world.sites[r.site_id].active]
        if item.publisher_available:
            src_ok, src = True, "publisher"
        else:
            source = self.pick_source(item, "", old_v)
            if source is None:
                sim.incident("migration", None, item.id, "migration skipped: no believed-good source")
                return None
            sim.threats.read(source)
            src_ok, src = source.content == item.versions[old_v], source.site_id
        new_v = self._new_version(item, fmt.migration_target, mode)
        output, out_state = item.versions[new_v], ReplicaState.INTACT
        if not src_ok:
            output = output.damaged(world.fresh_nonce("migration", "bad-source"))
            out_state = ReplicaState.CORRUPT
        sim.auditor.attach_store_records(item, new_v, output)
        sim.economy.charge_migration(item, "batch")
        created = 0
        for r in holders:
            state, content = sim.threats.transfer(out_state, output, r.site_id)
            if self.create_replica(item, r.site_id, new_v, state, content) is not None:
                created += 1
            if not self.spec.preserve_original:
                world.decommission(r)
        sim.incident("migration", None, item.id, f"{fmt.id} -> {fmt.migration_target}: {created} replicas")
        return MigrationRecord(item.id, self.now, mode, fmt.id, fmt.migration_target, created, src)

    def on_format_obsolete(self, fid: str) -> None:
        world, sim = self.world, self.sim
        on_access = self.spec.migration_mode == "on_access"
        for item in world.items.values():
            if item.format_id != fid or item.ingested_at is None:
                continue
            if self.spec.migration_mode == "batch" and world.formats[fid].migration_target is not None:
                if self.migrate_format(item, "batch") is not None:
                    continue
            if not world.format_readable(fid, self.now, on_access) and item.unreadable_at is None:
                item.unreadable_at = self.now
                sim.counters["unreadable_items"] += 1
                sim.incident("software_format_obsolescence", None, item.id, f"format {fid} unreadable")
