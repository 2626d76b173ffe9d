"""One simulation run: build the world from a scenario, wire the engines, run to the horizon."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .audit import Auditor
from .content import (ContentItem, DigestAlgorithm, Format, MediaUnit, Origin, ReplicaState, Site, World)
from .economics import SHARED, Economy
from .kernel import Event, Kernel, Streams
from .metrics import CSV_COLUMNS, SCHEMA_VERSION, MetricsCollector, MetricsSnapshot
from .scenario import Scenario
from .strategy import StrategyEngine, balanced_classes
from .threats import ThreatEngine


class Incident(NamedTuple):
    time: float
    kind: str
    site: str | None
    item: str | None
    detail: str

    def line(self) -> str:
        return f"t={self.time:.6f}\t{self.kind}\tsite={self.site or '-'}\titem={self.item or '-'}\t{self.detail}"


class Simulation:
    def __init__(self, scenario: Scenario, seed: int, threats_only: bool = False):
        self.scenario = scenario
        self.seed = int(seed)
        self.horizon = scenario.horizon_years
        self.threats_only = threats_only
        self.streams = Streams(self.seed)
        self.kernel = Kernel()
        self.counters: Counter = Counter()
        self.incidents: list[Incident] = []
        self.handlers: dict = {"inject": self._on_inject}
        self.world = self._build_world()
        self.item_list = list(self.world.items.values())
        self.threats = ThreatEngine(self, apply=not threats_only)
        self.strategy = StrategyEngine(self)
        self.auditor = Auditor(self)
        self.economy = Economy(self)
        self.metrics = MetricsCollector(self)
        for part in (self.threats, self.strategy, self.auditor, self.economy, self.metrics):
            part.register(self.handlers)
        self._started = False

    # ----------------------------------------------------------------- world

    def _build_world(self) -> World:
        sc = self.scenario
        threats = sc.threats
        obsolete = threats.get("software_format_obsolescence", "obsolete_at") \
            if threats.enabled("software_format_obsolescence") else {}
        emulate = sc.strategy.migration_mode == "emulation"
        formats = {fid: Format(fid, obsolete.get(fid), body.get("migration_target"), bool(body.get("emulated")) or emulate)
                   for fid, body in sc.formats.items()}
        algorithms = {aid: DigestAlgorithm(aid, body.get("broken_at"), body.get("break_public_at"))
                      for aid, body in sc.algorithms.items()}
        world = World(algorithms, formats)
        world.active_algorithms = list(sc.audit.algorithms)

        s = sc.sites
        n_sites = s["count"]
        ad = s["admin_domains"]
        if sc.strategy.diversity_policy == "balanced":
            classes = balanced_classes(n_sites, sc.strategy.diversity_classes)
        else:
            rng = self.streams("diversity")
            classes = [f"c{rng.randrange(sc.strategy.diversity_classes)}" for _ in range(n_sites)]
        for k in range(n_sites):
            sid = f"s{k}"
            domain = f"d{k}" if ad == "per_site" else "d0" if ad == "shared" else f"d{k % int(ad)}"
            site = Site(sid, f"z{k % s['zones']}", domain, frozenset([classes[k]]), [],
                        sid if s["budget"] == "per_site" else SHARED, s["grade"])
            world.sites[sid] = site
        world.now = 0.0
        self._unit_template = self._unit_params()
        for site in world.sites.values():
            for _ in range(s["units_per_site"]):
                self._add_unit(world, site, s["medium_class"])

        rng = self.streams("placement")
        order = list(world.sites)
        rng.shuffle(order)
        self.site_order = order
        items = sc.items
        irng = self.streams("items")
        mix = items["format_mix"]
        fids, weights = list(mix), list(mix.values())
        n_rep = sc.strategy.initial_replicas
        origin = Origin.PULL if sc.strategy.ingest_mode == "pull_crawl" else Origin.PUSH
        lo, hi = items["size_bytes"], items.get("size_max_bytes")
        for k in range(items["count"]):
            size = lo if hi is None or hi == lo else math.exp(irng.uniform(math.log(lo), math.log(hi)))
            fid = fids[0] if len(fids) == 1 else irng.choices(fids, weights)[0]
            item = ContentItem(f"i{k}", int(round(size)), fid, origin, items["publisher_available"],
                               f"p{k % items['publishers']}")
            item.roster = [order[(k + j) % n_sites] for j in range(min(n_rep, n_sites))]
            world.items[item.id] = item
        return world

    def _unit_params(self) -> dict:
        sc = self.scenario
        s, threats = sc.sites, sc.threats
        hazard = s["annual_hazard"]
        if threats.enabled("media_crash") and threats.get("media_crash", "annual_hazard") is not None:
            hazard = threats.get("media_crash", "annual_hazard")
        uber = s["uber_per_bit"]
        if threats.enabled("media_bit_error") and threats.get("media_bit_error", "uber_per_bit") is not None:
            uber = threats.get("media_bit_error", "uber_per_bit")
        return {"capacity_bytes": s["unit_capacity_bytes"], "uber_per_bit": uber, "annual_hazard": hazard,
                "service_life_years": s["service_life_years"]}

    def _add_unit(self, world: World, site: Site, medium_class: str) -> MediaUnit:
        uid = f"{site.id}/u{site.unit_counter}"
        site.unit_counter += 1
        unit = MediaUnit(uid, site.id, deployed_at=world.now, grade=site.grade, medium_class=medium_class,
                         **self._unit_template)
        world.units[uid] = unit
        site.media_units.append(uid)
        return unit

    def new_unit(self, site: Site, medium_class: str) -> MediaUnit:
        return self._add_unit(self.world, site, medium_class)

    # --------------------------------------------------------------- running

    def incident(self, kind: str, site: str | None, item: str | None, detail: str) -> None:
        self.incidents.append(Incident(self.kernel.now, kind, site, item, detail))

    def dispatch(self, event: Event) -> None:
        self.world.now = event.time
        self.handlers[event.kind](event)

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        sc = self.scenario
        if self.threats_only:
            self.threats.start()
            for inj in sc.injections:
                if inj["kind"] == "incident":
                    self.kernel.schedule(inj["at"], "inject", spec=inj)
            return
        spread = sc.items["ingest_spread_years"]
        if spread > 0:
            rng = self.streams("items:ingest")
            for item in self.world.items.values():
                t = rng.uniform(0.0, min(spread, self.horizon))
                self.kernel.schedule(t, "ingest", item=item.id)
        else:
            for item in self.world.items.values():
                self.strategy.ingest(item)
        self.threats.start()
        self.strategy.start()
        self.auditor.start()
        self.economy.start()
        self.metrics.start()
        for inj in sc.injections:
            self.kernel.schedule(inj["at"], "inject", spec=inj)

    def run_until(self, t: float) -> None:
        self.start()
        self.kernel.run(min(t, self.horizon), self.dispatch)
        self.world.now = self.kernel.now

    def run(self) -> "RunResult":
        self.run_until(self.horizon)
        self.economy.finish(self.horizon)
        self.metrics.snapshots.append(self.metrics.snapshot(self.horizon))
        return self.result()

    def result(self) -> "RunResult":
        sc = self.scenario
        ledger = self.economy.ledger
        costs = {
            "total": float(ledger.total()),
            "by_category": {k: float(v) for k, v in ledger.by_category().items()},
            "by_account": {k: float(v) for k, v in ledger.by("account").items()},
            "by_component": {k: float(v) for k, v in ledger.by("component").items()},
        }
        verdicts = {f"{m}:{v}": n for (m, v), n in sorted(self.auditor.verdict_counts().items())}
        truths = {f"{m}:{v}": n for (m, v), n in sorted(self.auditor.truth_counts().items())}
        return RunResult(
            scenario_id=sc.name, scenario_hash=sc.scenario_hash, seed=self.seed, horizon=self.horizon,
            snapshots=list(self.metrics.snapshots), event_counts=dict(sorted(self.kernel.counts.items())),
            incidents=list(self.incidents), counters=dict(sorted(self.counters.items())),
            verdicts=verdicts, truths=truths, costs=costs, access=self.metrics.access_summary(),
            lost_items=len(self.world.losses), warnings=list(sc.warnings),
        )

    # ------------------------------------------------------------- injection

    def _items(self, spec: dict) -> list[ContentItem]:
        ids = ([spec["item"]] if spec.get("item") else []) + list(spec.get("items") or [])
        if "all" in ids or not ids:
            return list(self.world.items.values())
        return [self.world.items[i] for i in ids]

    def _sites(self, spec: dict) -> list[str]:
        ids = ([spec["site"]] if spec.get("site") else []) + list(spec.get("sites") or [])
        return ids or list(self.world.sites)

    def _targets(self, spec: dict):
        sites = set(self._sites(spec))
        for item in self._items(spec):
            for r in list(item.replicas.values()):
                if r.site_id in sites and r.state is not ReplicaState.LOST:
                    yield item, r

    def _on_inject(self, ev: Event) -> None:
        spec = ev.payload["spec"]
        kind = spec["kind"]
        threats, now = self.threats, self.kernel.now
        self.counters[f"inject_{kind}"] += 1
        if kind == "incident":
            domains = [spec["domain"]] if spec.get("domain") else \
                sorted({self.world.sites[s].admin_domain_id for s in self._sites(spec)})
            for d in domains:
                threats.incident(d, spec["duration"] or None)
            return
        if kind == "corrupt":
            for _, r in list(self._targets(spec)):
                threats.corrupt(r, "injected", "injected corruption")
        elif kind == "forge":
            for item, r in list(self._targets(spec)):
                original = item.versions[r.variant]
                bad = original.damaged(("forged", item.id))
                state = ReplicaState.FORGED if self.world.register_forgery(bad, original, now) else ReplicaState.CORRUPT
                self.world.set_state(r, state, bad)
                threats.rewrite_digests(r)
                self.incident("injected", r.site_id, item.id, f"replica {state.value} by injection")
        elif kind == "lose":
            threats.lose([r for _, r in self._targets(spec)], "injected", "injected loss")
        elif kind == "crash_unit":
            unit = self.world.units.get(spec.get("unit") or "")
            if unit is None:
                self.incident("injected", spec.get("site"), None, f"no-op: unit {spec.get('unit')} unknown")
            else:
                threats.crash_unit(unit, "injected")
        elif kind == "publisher_down":
            for item in self._items(spec):
                item.publisher_available = False
                self.world.check_loss(item, now)
            self.incident("injected", None, None, "publisher made unavailable")
        elif kind == "site_offline":
            for sid in self._sites(spec):
                threats.set_offline(self.world.sites[sid], spec["duration"], "injected")
        elif kind == "external_attack":
            t = self.scenario.threats
            on = t.enabled("external_attack")
            if spec.get("vulnerability_class"):
                sites = [s for s in self.world.sites.values() if spec["vulnerability_class"] in s.vulnerability_classes]
            else:
                sites = [self.world.sites[s] for s in self._sites(spec)]
            sites = [s for s in sites if s.active]
            threats.launch_attack(
                sites, self.streams("inject:attack"), "external_attack",
                t.get("external_attack", "damage_fraction") if on else 1.0,
                t.get("external_attack", "forge") if on else False,
                t.get("external_attack", "speed") if on else math.inf, label="injected")
        elif kind == "defund":
            targets = [spec["site"]] if spec.get("site") else (spec.get("sites") or [SHARED])
            for sid in targets:
                stream = self.world.sites[sid].budget_stream_id if sid in self.world.sites else sid
                self.economy.defund(stream, now)
                self.economy.enforce_budget(stream)


@dataclass
class RunResult:
    scenario_id: str
    scenario_hash: str
    seed: int
    horizon: float
    snapshots: list[MetricsSnapshot]
    event_counts: dict[str, int]
    incidents: list[Incident]
    counters: dict[str, int]
    verdicts: dict[str, int]
    truths: dict[str, int]
    costs: dict
    access: dict
    lost_items: int
    warnings: list[str] = field(default_factory=list)

    @property
    def final(self) -> MetricsSnapshot:
        return self.snapshots[-1]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for snap in self.snapshots:
            w.writerow(snap.row())
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario_id,
            "scenario_hash": self.scenario_hash,
            "seed": self.seed,
            "horizon_years": self.horizon,
            "final": self.final.as_dict(),
            "event_counts": self.event_counts,
            "counters": self.counters,
            "audit_verdicts": self.verdicts,
            "audit_ground_truth": self.truths,
            "costs": self.costs,
            "access": self.access,
            "lost_items": self.lost_items,
            "incidents": len(self.incidents),
            "warnings": self.warnings,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def incident_text(self) -> str:
        return "".join(i.line() + "\n" for i in self.incidents)

    def site_log(self, site_id: str) -> str:
        return "".join(i.line() + "\n" for i in self.incidents if i.site == site_id)

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in (("snapshots.csv", self.csv_text()), ("summary.json", self.summary_json()),
                           ("incidents.log", self.incident_text())):
            p = out / name
            p.write_text(text)
            paths.append(p)
        return paths


def run(scenario: Scenario, seed: int) -> RunResult:
    """Run ``scenario`` to its horizon with master seed ``seed``."""
    return Simulation(scenario, seed).run()
