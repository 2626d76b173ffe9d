"""Threat processes: arrival generation, cross-threat coupling, and application to the world.

Each threat runs as one or more independent Poisson processes keyed by the
entity it strikes (unit, site, zone, admin domain, vulnerability class), each
with its own RNG stream so that toggling one process never shifts another's
draws.  In generation-only mode the same handlers run but skip every world
mutation, which is what :func:`draw_threat_events` uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .content import MediaUnit, Replica, ReplicaState, Site, StoredIn
from .kernel import Event, exp_draw

if TYPE_CHECKING:
    from .simulation import Simulation


@dataclass
class StressState:
    """Active incidents per admin domain; each incident expires after the stress window."""

    expiries: dict[str, list[float]] = field(default_factory=dict)

    def add(self, domain: str, until: float) -> None:
        self.expiries.setdefault(domain, []).append(until)

    def active(self, domain: str, now: float) -> int:
        live = [t for t in self.expiries.get(domain, ()) if t > now]
        self.expiries[domain] = live
        return len(live)

    def multiplier(self, domain: str, now: float, k: float) -> float:
        n = self.active(domain, now)
        return k ** n if n else 1.0


def operator_rate(base: float, k: float, active_incidents: int) -> float:
    return base * k ** active_incidents


class ThreatEngine:
    KINDS = ("media_bit_error", "media_crash", "hardware_transient", "hardware_fatal", "software_bug",
             "network_service_failure", "media_hw_obsolescence", "software_format_obsolescence",
             "operator_error", "natural_disaster", "natural_disaster_unit", "media_damage",
             "external_attack", "attack_step", "internal_attack", "economic_failure",
             "organizational_failure", "site_online", "stress_expire", "digest_store_corruption")

    def __init__(self, sim: "Simulation", apply: bool = True):
        self.sim = sim
        self.spec = sim.scenario.threats
        self.apply = apply
        self.emitted: list[Event] = []
        self.stress = StressState()
        self._crash: dict[str, Event] = {}
        self._operator: dict[str, Event] = {}
        self._attacks: dict[int, list[tuple[str, str, int]]] = {}
        self._attack_seq = 0
        self._read_hazard: dict[tuple[float, float], float] = {}
        self.placement = sim.scenario.audit.digest_placement
        # per-site latent-error dominating rate: one slot per (item, variant)
        variants = 2 if sim.scenario.strategy.migration_mode in ("batch", "normalize_on_ingest") else 1
        self._latent_slots = max(1, sim.scenario.items["count"] * variants)
        spec = self.spec
        bit = spec.threats["media_bit_error"]
        self._read_coupled = not bit.excluded and bit.params["read_coupled"]
        self._uber_override = bit.params["uber_per_bit"]
        comm = spec.threats["comm_error"]
        self._comm_p = 0.0 if comm.excluded else comm.params["probability"]
        self._comm_h = -math.log1p(-self._comm_p) if self._comm_p < 1 else math.inf
        self._site_rngs: dict[str, object] = {}
        self._exposure: dict[str, list[float]] = {}

    # ------------------------------------------------------------------ setup

    def register(self, handlers: dict) -> None:
        for kind in self.KINDS:
            handlers[kind] = getattr(self, f"_on_{kind}")

    def start(self) -> None:
        sim, spec = self.sim, self.spec
        world = sim.world
        sites = list(world.sites.values())
        for unit in list(world.units.values()):
            self.on_unit_deployed(unit)
        if spec.enabled("media_bit_error") and spec.get("media_bit_error", "latent_rate") > 0:
            for site in sites:
                self._next(f"latent:{site.id}", spec.get("media_bit_error", "latent_rate") * self._latent_slots,
                           "media_bit_error", site=site.id)
        for name in ("hardware_transient", "hardware_fatal", "software_bug", "organizational_failure"):
            for site in sites:
                self._next(f"{name}:{site.id}", spec.rate(name), name, site=site.id)
        self._next("network_service_failure", spec.rate("network_service_failure"), "network_service_failure")
        self._next("economic_failure", spec.rate("economic_failure"), "economic_failure")
        if spec.enabled("media_hw_obsolescence"):
            for cls, t in sorted(spec.get("media_hw_obsolescence", "reader_unavailable_at").items()):
                sim.kernel.schedule(max(t, 0.0), "media_hw_obsolescence", medium_class=cls)
        if spec.enabled("software_format_obsolescence"):
            for fid, t in sorted(spec.get("software_format_obsolescence", "obsolete_at").items()):
                sim.kernel.schedule(max(t, 0.0), "software_format_obsolescence", format=fid)
        for domain in self.domains():
            self._reschedule_operator(domain)
            self._next(f"internal_attack:{domain}", spec.rate("internal_attack"), "internal_attack", domain=domain)
        rate = spec.rate("natural_disaster")
        if rate > 0:
            if spec.get("natural_disaster", "correlated"):
                for zone in self.zones():
                    self._next(f"natural_disaster:{zone}", rate, "natural_disaster", zone=zone)
            else:
                for site in sites:
                    for slot in range(sim.scenario.sites["units_per_site"]):
                        self._next(f"natural_disaster:{site.id}:{slot}", rate, "natural_disaster_unit",
                                   site=site.id, slot=slot)
        for cls in self.classes():
            self._next(f"external_attack:{cls}", spec.rate("external_attack"), "external_attack", cls=cls)
        store_rate = sim.scenario.audit.digest_store_corruption_rate
        if store_rate > 0 and self.placement == "external_store":
            self._next("digest_store", store_rate * max(1, len(world.items)), "digest_store_corruption")

    def domains(self) -> list[str]:
        return sorted({s.admin_domain_id for s in self.sim.world.sites.values()})

    def zones(self) -> list[str]:
        return sorted({s.location_id for s in self.sim.world.sites.values()})

    def classes(self) -> list[str]:
        return sorted({c for s in self.sim.world.sites.values() for c in s.vulnerability_classes})

    def _rng(self, label: str):
        return self.sim.streams(f"threat:{label}")

    def _next(self, label: str, rate: float, kind: str, **payload) -> Event | None:
        dt = exp_draw(self._rng(label), rate)
        t = self.sim.kernel.now + dt
        if math.isinf(t) or t > self.sim.horizon:
            return None
        return self.sim.kernel.schedule(t, kind, label=label, **payload)

    def _emit(self, event: Event) -> None:
        if not self.apply:
            self.emitted.append(event)

    # ------------------------------------------------------------- unit hooks

    def on_unit_deployed(self, unit: MediaUnit) -> None:
        if not self.spec.enabled("media_crash") or unit.annual_hazard <= 0:
            return
        rng = self._rng(f"media_crash:{unit.id}")
        t = self.sim.kernel.now + exp_draw(rng, unit.annual_hazard)
        if t <= self.sim.horizon:
            self._crash[unit.id] = self.sim.kernel.schedule(t, "media_crash", unit=unit.id)

    def on_unit_retired(self, unit: MediaUnit) -> None:
        ev = self._crash.pop(unit.id, None)
        if ev is not None:
            ev.cancelled = True

    # --------------------------------------------------------- transfer/read

    def transfer(self, state: ReplicaState, content, scope: str) -> tuple[ReplicaState, object]:
        """Pass a payload through one network transfer; comm errors corrupt it without signaling."""
        p = self._comm_p
        if p <= 0 or state is ReplicaState.LOST:
            return state, content
        if self._site_rng("comm:", scope).random() < p:
            self.sim.counters["comm_errors"] += 1
            return ReplicaState.CORRUPT, content.damaged(self.sim.world.fresh_nonce(scope, "comm"))
        return state, content

    def _site_rng(self, prefix: str, scope: str):
        key = prefix + scope
        rng = self._site_rngs.get(key)
        if rng is None:
            rng = self._site_rngs[key] = self.sim.streams(key)
        return rng

    def _strike(self, prefix: str, scope: str, hazard: float) -> bool:
        """Bernoulli trial with probability 1 - exp(-hazard), drawn by exposure accumulation.

        Each (prefix, scope) keeps an Exp(1) threshold and the hazard spent
        against it; a trial fires when the running total crosses the
        threshold.  By memorylessness every trial is an independent event of
        the stated probability, but only firings consume random draws.
        """
        key = prefix + scope
        slot = self._exposure.get(key)
        if slot is None:
            slot = self._exposure[key] = [0.0, self._site_rng(prefix, scope).expovariate(1.0)]
        slot[0] += hazard
        if slot[0] < slot[1]:
            return False
        slot[0] = 0.0
        slot[1] = self._site_rng(prefix, scope).expovariate(1.0)
        return True

    def garbled(self, scope: str) -> bool:
        return self._comm_h > 0 and self._strike("garble:", scope, self._comm_h)

    def read(self, replica: Replica, size: float | None = None) -> bool:
        """Expose a full read of ``replica`` to unrecoverable bit errors; return True if it was damaged."""
        if not self._read_coupled or replica.state is ReplicaState.LOST or replica.medium_id is None:
            return False
        uber = self._uber_override
        if uber is None:
            uber = self.sim.world.units[replica.medium_id].uber_per_bit
        if uber <= 0:
            return False
        if size is None:
            size = self.sim.world.items[replica.item_id].size_bytes
        h = self._read_hazard.get((uber, size))
        if h is None:
            h = size * 8 * -math.log1p(-uber) if uber < 1 else math.inf
            self._read_hazard[(uber, size)] = h
        slot = self._exposure.get("bitread:" + replica.site_id)
        if slot is not None and slot[0] + h < slot[1]:
            slot[0] += h  # inlined non-firing case of _strike
            return False
        if self._strike("bitread:", replica.site_id, h):
            self.corrupt(replica, "media_bit_error", "unrecoverable read error")
            return True
        return False

    # ---------------------------------------------------------------- damage

    def corrupt(self, replica: Replica, cause: str, detail: str = "", rewrite_digests: bool = False) -> None:
        world = self.sim.world
        nonce = world.fresh_nonce(replica.site_id, cause)
        world.set_state(replica, ReplicaState.CORRUPT, replica.content.damaged(nonce))
        self.sim.counters["corruptions"] += 1
        if rewrite_digests:
            self.rewrite_digests(replica)
        self.sim.incident(cause, replica.site_id, replica.item_id, detail or "replica silently corrupted")

    def rewrite_digests(self, replica: Replica) -> None:
        """Same-system digest records follow the content when the attacker or bug controls the system."""
        if self.placement != StoredIn.SAME_SYSTEM.value:
            return
        world = self.sim.world
        for rec in replica.digest_records:
            rec.value = world.digest_of(replica.content, rec.algorithm_id)

    def lose(self, replicas: list[Replica], cause: str, detail: str = "") -> None:
        world = self.sim.world
        lost = []
        for r in replicas:
            if r.state is ReplicaState.LOST:
                continue
            world.set_state(r, ReplicaState.LOST)
            lost.append(r)
            self.sim.incident(cause, r.site_id, r.item_id, detail or "replica lost")
        if lost:
            self.sim.strategy.on_replicas_lost(lost)

    def crash_unit(self, unit: MediaUnit, cause: str) -> None:
        if not unit.alive:
            self.sim.incident(cause, unit.site_id, None, f"no-op: unit {unit.id} already removed")
            return
        replicas = self.sim.world.replicas_on(unit)
        unit.alive = False
        self.on_unit_retired(unit)
        self.sim.incident(cause, unit.site_id, None, f"unit {unit.id} failed, {len(replicas)} replicas")
        self.lose(replicas, cause, f"on failed unit {unit.id}")
        self.sim.strategy.on_unit_failed(unit)

    def set_offline(self, site: Site, duration: float, cause: str) -> None:
        now = self.sim.kernel.now
        until = now + duration
        if until > site.offline_until:
            site.offline_until = until
            self.sim.incident(cause, site.id, None, f"site offline until {until:.6f}")
            if until <= self.sim.horizon:
                self.sim.kernel.schedule(until, "site_online", site=site.id)

    def incident(self, domain: str, duration: float | None = None) -> None:
        """An incident raises operator stress in its admin domain for the stress window."""
        if duration is None:
            if not self.spec.enabled("operator_error"):
                return
            duration = self.spec.get("operator_error", "stress_window_years")
        w = duration
        if w <= 0:
            return
        now = self.sim.kernel.now
        self.stress.add(domain, now + w)
        if now + w <= self.sim.horizon:
            self.sim.kernel.schedule(now + w, "stress_expire", domain=domain)
        self._reschedule_operator(domain)

    def _reschedule_operator(self, domain: str) -> None:
        old = self._operator.pop(domain, None)
        if old is not None:
            old.cancelled = True
        base = self.spec.rate("operator_error")
        if base <= 0:
            return
        k = self.spec.get("operator_error", "stress_multiplier")
        rate = operator_rate(base, k, self.stress.active(domain, self.sim.kernel.now))
        ev = self._next(f"operator_error:{domain}", rate, "operator_error", domain=domain)
        if ev is not None:
            self._operator[domain] = ev

    def _site(self, event: Event) -> Site | None:
        site = self.sim.world.sites.get(event.payload["site"])
        if site is None or not site.active:
            if self.apply:
                self.sim.incident(event.kind, event.payload["site"], None, "no-op: site removed")
            return None
        return site

    def _live_at(self, site: Site) -> list[Replica]:
        return self.sim.world.replicas_at(site.id)

    def _sample(self, rng, population: list, fraction: float) -> list:
        if not population or fraction <= 0:
            return []
        k = max(1, round(fraction * len(population)))
        return rng.sample(population, min(k, len(population)))

    # ---------------------------------------------------------------- handlers

    def _on_media_crash(self, ev: Event) -> None:
        self._crash.pop(ev.payload["unit"], None)
        self._emit(ev)
        unit = self.sim.world.units.get(ev.payload["unit"])
        if unit is not None:
            self.incident(self.sim.world.sites[unit.site_id].admin_domain_id)
        if not self.apply:
            return
        if unit is None or not unit.alive:
            self.sim.incident("media_crash", None, None, f"no-op: unit {ev.payload['unit']} removed")
            return
        self.crash_unit(unit, "media_crash")

    def _on_media_bit_error(self, ev: Event) -> None:
        site_id = ev.payload["site"]
        rate = self.spec.get("media_bit_error", "latent_rate") * self._latent_slots
        self._next(ev.payload["label"], rate, "media_bit_error", site=site_id)
        site = self.sim.world.sites[site_id]
        if not site.active:
            return
        rng = self._rng(ev.payload["label"])
        slot = int(rng.random() * self._latent_slots)
        if slot >= site.n_replicas:
            return  # thinned: the slot drawn holds no replica
        self._emit(ev)
        if not self.apply:
            return
        victim = self.sim.world.replica_at_index(site_id, slot)
        if victim is not None and victim.state is not ReplicaState.LOST:
            self.corrupt(victim, "media_bit_error", "latent sector error")

    def _on_hardware_transient(self, ev: Event) -> None:
        self._next(ev.payload["label"], self.spec.rate("hardware_transient"), "hardware_transient", site=ev.payload["site"])
        site = self._site(ev)
        if site is None:
            return
        self._emit(ev)
        self.incident(site.admin_domain_id)
        self._maybe_trigger_bug(site)
        if not self.apply:
            return
        rng = self._rng(ev.payload["label"])
        self.set_offline(site, exp_draw(rng, 1.0 / self.spec.get("hardware_transient", "mean_outage_years")),
                         "hardware_transient")

    def _on_hardware_fatal(self, ev: Event) -> None:
        self._next(ev.payload["label"], self.spec.rate("hardware_fatal"), "hardware_fatal", site=ev.payload["site"])
        site = self._site(ev)
        if site is None:
            return
        self._emit(ev)
        self.incident(site.admin_domain_id)
        self._maybe_trigger_bug(site)
        if not self.apply:
            return
        rng = self._rng(ev.payload["label"])
        self.set_offline(site, self.spec.get("hardware_fatal", "replacement_years"), "hardware_fatal")
        units = self.sim.world.site_units(site.id)
        if units and self.spec.get("hardware_fatal", "destroys_unit"):
            self.crash_unit(rng.choice(units), "hardware_fatal")

    def _maybe_trigger_bug(self, site: Site) -> None:
        if not self.spec.enabled("software_bug"):
            return
        p = self.spec.get("software_bug", "hw_trigger_probability")
        if p > 0 and self._rng(f"software_bug:hw:{site.id}").random() < p:
            self.sim.kernel.schedule(self.sim.kernel.now, "software_bug", site=site.id, label=None)

    def _on_software_bug(self, ev: Event) -> None:
        if ev.payload.get("label"):
            self._next(ev.payload["label"], self.spec.rate("software_bug"), "software_bug", site=ev.payload["site"])
        site = self._site(ev)
        if site is None:
            return
        self._emit(ev)
        if not self.apply:
            return
        rng = self._rng(f"software_bug:{site.id}")
        victims = self._sample(rng, self._live_at(site), self.spec.get("software_bug", "scope"))
        rewrite = rng.random() < self.spec.get("software_bug", "digest_rewrite_probability")
        for r in victims:
            self.corrupt(r, "software_bug", "corrupted by software fault", rewrite_digests=rewrite)

    def _on_network_service_failure(self, ev: Event) -> None:
        self._next("network_service_failure", self.spec.rate("network_service_failure"), "network_service_failure")
        self._emit(ev)
        if not self.apply:
            return
        rng = self._rng("network_service_failure")
        frac = self.spec.get("network_service_failure", "affected_fraction")
        world = self.sim.world
        hit = 0
        for item in world.items.values():
            if item.publisher_available and rng.random() < frac:
                item.publisher_available = False
                hit += 1
                world.check_loss(item, self.sim.kernel.now)
        self.sim.incident("network_service_failure", None, None, f"{hit} publisher references unresolvable")

    def _on_media_hw_obsolescence(self, ev: Event) -> None:
        self._emit(ev)
        if not self.apply:
            return
        cls = ev.payload["medium_class"]
        self.sim.incident("media_hw_obsolescence", None, None, f"no readers remain for media class {cls}")
        for unit in [u for u in self.sim.world.units.values() if u.alive and u.medium_class == cls]:
            self.crash_unit(unit, "media_hw_obsolescence")

    def _on_software_format_obsolescence(self, ev: Event) -> None:
        self._emit(ev)
        if not self.apply:
            return
        self.sim.strategy.on_format_obsolete(ev.payload["format"])

    def _on_stress_expire(self, ev: Event) -> None:
        self._reschedule_operator(ev.payload["domain"])

    def _on_operator_error(self, ev: Event) -> None:
        domain = ev.payload["domain"]
        self._operator.pop(domain, None)
        self._reschedule_operator(domain)
        self._emit(ev)
        if not self.apply:
            return
        rng = self._rng(f"operator_error:{domain}:apply")
        sites = [s for s in self.sim.world.sites.values() if s.admin_domain_id == domain and s.active]
        if not sites:
            self.sim.incident("operator_error", None, None, f"no-op: admin domain {domain} has no active site")
            return
        site = rng.choice(sites)
        spec = self.spec
        if rng.random() < spec.get("operator_error", "recoverable_fraction"):
            self.set_offline(site, exp_draw(rng, 1.0 / spec.get("operator_error", "mean_outage_years")),
                             "operator_error")
            return
        victims = self._sample(rng, self._live_at(site), spec.get("operator_error", "scope"))
        self.lose(victims, "operator_error", "deleted by operator mistake")

    def _on_natural_disaster(self, ev: Event) -> None:
        zone = ev.payload["zone"]
        self._next(ev.payload["label"], self.spec.rate("natural_disaster"), "natural_disaster", zone=zone)
        self._emit(ev)
        world = self.sim.world
        now = self.sim.kernel.now
        for site in [s for s in world.sites.values() if s.location_id == zone and s.active]:
            self.incident(site.admin_domain_id)
            if self.apply:
                self.set_offline(site, self.spec.get("natural_disaster", "outage_years"), "natural_disaster")
            for unit in world.site_units(site.id):
                self.sim.kernel.schedule(now, "media_damage", unit=unit.id, zone=zone)

    def _on_natural_disaster_unit(self, ev: Event) -> None:
        p = ev.payload
        self._next(p["label"], self.spec.rate("natural_disaster"), "natural_disaster_unit", site=p["site"], slot=p["slot"])
        site = self._site(ev)
        if site is None:
            return
        self._emit(ev)
        units = self.sim.world.site_units(site.id)
        if p["slot"] >= len(units):
            return
        self.incident(site.admin_domain_id)
        if self.apply:
            self.set_offline(site, self.spec.get("natural_disaster", "outage_years"), "natural_disaster")
        self.sim.kernel.schedule(self.sim.kernel.now, "media_damage", unit=units[p["slot"]].id, zone=site.location_id)

    def _on_media_damage(self, ev: Event) -> None:
        self._emit(ev)
        if not self.apply:
            return
        unit = self.sim.world.units.get(ev.payload["unit"])
        if unit is None or not unit.alive:
            self.sim.incident("media_damage", None, None, f"no-op: unit {ev.payload['unit']} removed")
            return
        rng = self._rng(f"natural_disaster:damage:{unit.site_id}")
        if rng.random() < self.spec.get("natural_disaster", "destroy_probability"):
            self.crash_unit(unit, "natural_disaster")
            return
        victims = self._sample(rng, self.sim.world.replicas_on(unit), self.spec.get("natural_disaster", "damage_fraction"))
        for r in victims:
            self.corrupt(r, "natural_disaster", f"damaged on unit {unit.id}")

    def _on_external_attack(self, ev: Event) -> None:
        cls = ev.payload["cls"]
        self._next(ev.payload["label"], self.spec.rate("external_attack"), "external_attack", cls=cls)
        self._emit(ev)
        if not self.apply:
            return
        rng = self._rng(f"external_attack:{cls}:apply")
        comp = self.spec.get("external_attack", "compromise_probability")
        p = comp.get(cls, comp.get("default", 1.0))
        if rng.random() >= p:
            self.sim.incident("external_attack", None, None, f"attack on class {cls} failed to compromise")
            return
        sites = [s for s in self.sim.world.sites.values() if cls in s.vulnerability_classes and s.active]
        self.launch_attack(sites, rng, "external_attack", self.spec.get("external_attack", "damage_fraction"),
                           self.spec.get("external_attack", "forge"), self.spec.get("external_attack", "speed"),
                           label=f"class {cls}")

    def _on_internal_attack(self, ev: Event) -> None:
        domain = ev.payload["domain"]
        self._next(ev.payload["label"], self.spec.rate("internal_attack"), "internal_attack", domain=domain)
        self._emit(ev)
        if not self.apply:
            return
        rng = self._rng(f"internal_attack:{domain}:apply")
        sites = [s for s in self.sim.world.sites.values() if s.admin_domain_id == domain and s.active]
        self.launch_attack(sites, rng, "internal_attack", self.spec.get("internal_attack", "damage_fraction"),
                           self.spec.get("internal_attack", "forge"), math.inf, label=f"domain {domain}")

    def launch_attack(self, sites: list[Site], rng, cause: str, fraction: float, forge: bool, speed: float,
                      label: str = "") -> None:
        """Damage a common item selection at every site; all victims of one item get one bad token."""
        world = self.sim.world
        held: dict[str, None] = {}
        for site in sites:
            for r in world.replicas_at(site.id):
                held.setdefault(r.item_id, None)
        chosen = set(self._sample(rng, list(held), fraction)) if fraction < 1 else set(held)
        targets = []
        for site in sites:
            for r in world.replicas_at(site.id):
                if r.item_id in chosen:
                    targets.append((site.id, r.item_id, r.variant))
        self._attack_seq += 1
        aid = self._attack_seq
        self.sim.incident(cause, None, None, f"attack {aid} on {label}: {len(sites)} sites, {len(targets)} replicas")
        self._attacks[aid] = targets
        if math.isinf(speed):
            for k in range(len(targets)):
                self._attack_one(aid, k, cause, forge)
            self._attacks.pop(aid, None)
        else:
            rng.shuffle(targets)
            now = self.sim.kernel.now
            for k in range(len(targets)):
                self.sim.kernel.schedule(now + k / speed, "attack_step", attack=aid, index=k, cause=cause, forge=forge)

    def _on_attack_step(self, ev: Event) -> None:
        p = ev.payload
        self._attack_one(p["attack"], p["index"], p["cause"], p["forge"])

    def _attack_one(self, aid: int, index: int, cause: str, forge: bool) -> None:
        world = self.sim.world
        site_id, item_id, variant = self._attacks[aid][index]
        item = world.items[item_id]
        replica = item.replicas.get((site_id, variant))
        if replica is None or replica.state is ReplicaState.LOST or not world.sites[site_id].active:
            return
        original = item.versions[variant]
        bad = original.damaged(("attack", aid))
        state = ReplicaState.CORRUPT
        if forge:
            if world.register_forgery(bad, original, self.sim.kernel.now):
                state = ReplicaState.FORGED
        world.set_state(replica, state, bad)
        self.sim.counters["attack_damage"] += 1
        self.rewrite_digests(replica)
        self.sim.incident(cause, site_id, item_id, f"replica {state.value} by attack {aid}")

    def _on_economic_failure(self, ev: Event) -> None:
        self._next("economic_failure", self.spec.rate("economic_failure"), "economic_failure")
        self._emit(ev)
        if not self.apply:
            return
        rng = self._rng("economic_failure:apply")
        spec = self.spec
        streams = self.sim.economy.stream_ids()
        target = spec.get("economic_failure", "target")
        sid = rng.choice(streams) if target == "random" or target not in streams else target
        factor = rng.uniform(spec.get("economic_failure", "factor_min"), spec.get("economic_failure", "factor_max"))
        self.sim.economy.apply_shock(sid, factor)

    def _on_organizational_failure(self, ev: Event) -> None:
        self._next(ev.payload["label"], self.spec.rate("organizational_failure"), "organizational_failure",
                   site=ev.payload["site"])
        site = self._site(ev)
        if site is None:
            return
        self._emit(ev)
        if not self.apply:
            return
        rng = self._rng(f"organizational_failure:{site.id}:apply")
        if rng.random() < self.spec.get("organizational_failure", "handoff_probability"):
            site.handoffs += 1
            old = site.admin_domain_id
            site.admin_domain_id = f"{old}~h{site.handoffs}"
            self.sim.incident("organizational_failure", site.id, None,
                              f"organization failed; holdings handed to successor {site.admin_domain_id}")
            return
        self.sim.incident("organizational_failure", site.id, None, "organization failed; site removed")
        self.remove_site(site, "organizational_failure")

    def remove_site(self, site: Site, cause: str) -> None:
        replicas = self._live_at(site)
        site.active = False
        for unit in self.sim.world.site_units(site.id):
            unit.alive = False
            self.on_unit_retired(unit)
        self.lose(replicas, cause, "site removed")
        self.sim.strategy.on_site_removed(site)

    def _on_site_online(self, ev: Event) -> None:
        site = self.sim.world.sites[ev.payload["site"]]
        if site.online(self.sim.kernel.now):
            self.sim.strategy.on_site_online(site)

    def _on_digest_store_corruption(self, ev: Event) -> None:
        world = self.sim.world
        self._next("digest_store", self.sim.scenario.audit.digest_store_corruption_rate * max(1, len(world.items)),
                   "digest_store_corruption")
        self._emit(ev)
        if not self.apply or not world.digest_store:
            return
        rng = self._rng("digest_store:apply")
        key = rng.choice(list(world.digest_store))
        records = world.digest_store[key]
        if not records:
            return
        rec = rng.choice(records)
        rec.value = world.digest_of(world.items[key[0]].versions[key[1]].damaged(
            world.fresh_nonce("digest_store", "store")), rec.algorithm_id)
        rec.corrupted = True
        self.sim.incident("digest_store_corruption", None, key[0], f"stored {rec.algorithm_id} digest corrupted")


def draw_threat_events(scenario, seed: int, window: tuple[float, float] | None = None) -> list[Event]:
    """Generate the threat event stream for ``scenario`` without applying it to any replica."""
    from .simulation import Simulation

    sim = Simulation(scenario, seed, threats_only=True)
    lo, hi = window if window is not None else (0.0, scenario.horizon_years)
    if not 0.0 <= lo <= hi <= scenario.horizon_years:
        raise ValueError("window must lie within the scenario horizon")
    sim.run_until(hi)
    return [e for e in sim.threats.emitted if lo <= e.time <= hi]
