"""Cost accrual and budget-driven triage.

Amounts are kept as exact fractions so category totals always reconcile with
the grand total; they are converted to floats only for output.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

from .content import ReplicaState
from .kernel import Event

if TYPE_CHECKING:
    from .simulation import Simulation

GB = 1e9
SHARED = "shared"


@dataclass(frozen=True)
class LedgerEntry:
    time: float
    account: str  # site id or "shared"
    category: str  # ingest | preservation | dissemination
    component: str
    amount: Fraction
    count: float


class Ledger:
    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def add(self, entry: LedgerEntry) -> None:
        if entry.amount < 0:
            raise ValueError("ledger amounts must be non-negative")
        if entry.amount:
            self.entries.append(entry)

    def total(self) -> Fraction:
        return sum((e.amount for e in self.entries), Fraction(0))

    def by(self, attr: str) -> dict[str, Fraction]:
        out: dict[str, Fraction] = {}
        for e in self.entries:
            key = getattr(e, attr)
            out[key] = out.get(key, Fraction(0)) + e.amount
        return dict(sorted(out.items()))

    def by_category(self) -> dict[str, Fraction]:
        base = {c: Fraction(0) for c in ("ingest", "preservation", "dissemination")}
        base.update(self.by("category"))
        return base


def accrue(economy: "Economy", window_end: float) -> list[LedgerEntry]:
    """Close the accounting window ending at ``window_end`` and return its ledger entries."""
    return economy.close_window(window_end)


class Economy:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.costs = sim.scenario.costs
        self.budgets = sim.scenario.budgets
        self.ledger = Ledger()
        self._pending: dict[tuple[str, str, str, float], float] = {}
        self._publishers: set[str] = set()
        self._marks: dict[str, tuple[float, float]] = {}
        self._last_close = 0.0
        self.shock: dict[str, float] = {}
        self.overrides: dict[str, list[tuple[float, float]]] = {}
        self._audits_off: set[str] = set()
        self._maint_off: set[str] = set()
        self.per_site = sim.scenario.sites["budget"] == "per_site"

    def register(self, handlers: dict) -> None:
        handlers["budget_change"] = self._on_tick

    def start(self) -> None:
        dt = self.budgets.accounting_interval
        if dt <= self.sim.horizon:
            self.sim.kernel.schedule(dt, "budget_change", interval=dt)
        # streams that start underfunded are triaged before anything is spent
        for stream in self.stream_ids():
            self.enforce_budget(stream)

    # ---------------------------------------------------------------- streams

    def stream_ids(self) -> list[str]:
        ids = [SHARED]
        if self.per_site:
            ids += list(self.sim.world.sites)
        return ids

    def funded_sites(self, stream: str) -> list[str]:
        sites = self.sim.world.sites.values()
        return [s.id for s in sites if s.budget_stream_id == stream]

    def funds(self, stream: str, t: float) -> float:
        spec = self.budgets.streams.get(stream)
        base = spec.funds_at(t) if spec is not None else self.budgets.default_funds
        for start, level in self.overrides.get(stream, ()):
            if start <= t:
                base = level
        factor = self.shock.get(stream, 1.0)
        if base == 0 or factor == 0:
            return 0.0
        return base * factor

    def apply_shock(self, stream: str, factor: float) -> None:
        self.shock[stream] = self.shock.get(stream, 1.0) * factor
        self.sim.incident("economic_failure", stream if stream != SHARED else None, None,
                          f"budget stream {stream} scaled by {factor:.6f}")

    def defund(self, stream: str, t: float) -> None:
        self.overrides.setdefault(stream, []).append((t, 0.0))
        self.sim.incident("economic_failure", stream if stream != SHARED else None, None,
                          f"budget stream {stream} defunded")

    def audits_deferred(self, site_id: str) -> bool:
        return site_id in self._audits_off

    def maintenance_deferred(self, site_id: str) -> bool:
        return site_id in self._maint_off

    # ---------------------------------------------------------------- charges

    def charge(self, account: str, category: str, component: str, unit_cost: float, count: float = 1) -> None:
        if unit_cost <= 0 or count <= 0:
            return
        key = (account, category, component, unit_cost)
        self._pending[key] = self._pending.get(key, 0) + count

    def charge_ingest(self, item) -> None:
        c = self.costs.ingest
        if item.publisher_id not in self._publishers:
            self._publishers.add(item.publisher_id)
            self.charge(SHARED, "ingest", "permission_per_publisher", c["permission_per_publisher"])
        self.charge(SHARED, "ingest", "permission_per_item", c["permission_per_item"])
        mode = "automated" if item.origin.value == "pull" else "manual"
        self.charge(SHARED, "ingest", f"ingest_per_item_{mode}", c[f"ingest_per_item_{mode}"])
        self.charge(SHARED, "ingest", "metadata_per_item", c["metadata_per_item"])

    def charge_poll(self, site_id: str) -> None:
        cost = self.costs.preservation["audit_per_poll"]
        if cost > 0:
            self.charge(site_id, "preservation", "audit_per_poll", cost)

    def charge_migration(self, item, mode: str) -> None:
        key = "migration_batch_per_item" if mode == "batch" else "migration_on_access_per_item"
        self.charge(SHARED, "preservation", key, self.costs.preservation[key])

    def charge_access(self) -> None:
        self.charge(SHARED, "dissemination", "serving_per_access", self.costs.dissemination["serving_per_access"])

    # ------------------------------------------------------------- accounting

    def close_window(self, now: float) -> list[LedgerEntry]:
        entries: list[LedgerEntry] = []
        pres = self.costs.preservation
        hw_rates = pres["hardware_per_gb_year"]
        for site in self.sim.world.sites.values():
            site.integrate(now)
            ry0, by0 = self._marks.get(site.id, (0.0, 0.0))
            dry, dby = site.replica_years - ry0, site.byte_years - by0
            self._marks[site.id] = (site.replica_years, site.byte_years)
            rate = hw_rates.get(site.grade, 0.0)
            if rate > 0 and dby > 0:
                amount = Fraction(rate) * Fraction(dby) / Fraction(GB)
                entries.append(LedgerEntry(now, site.id, "preservation", "hardware", amount, dby / GB))
            if pres["ops_per_replica_year"] > 0 and dry > 0:
                amount = Fraction(pres["ops_per_replica_year"]) * Fraction(dry)
                entries.append(LedgerEntry(now, site.id, "preservation", "ops", amount, dry))
        dt = now - self._last_close
        auth = self.costs.dissemination["auth_system_per_year"]
        if auth > 0 and dt > 0:
            entries.append(LedgerEntry(now, SHARED, "dissemination", "auth_system", Fraction(auth) * Fraction(dt), dt))
        for (account, category, component, unit), count in sorted(self._pending.items()):
            entries.append(LedgerEntry(now, account, category, component, Fraction(unit) * Fraction(count), count))
        self._pending.clear()
        self._last_close = now
        for e in entries:
            self.ledger.add(e)
        return entries

    def _on_tick(self, ev: Event) -> None:
        now = self.sim.kernel.now
        dt = ev.payload["interval"]
        if now + dt <= self.sim.horizon:
            self.sim.kernel.schedule(now + dt, "budget_change", interval=dt)
        self.close_window(now)
        for stream in self.stream_ids():
            self.enforce_budget(stream)
        self.sim.strategy.maintain()

    def finish(self, now: float) -> None:
        self.close_window(now)

    # ----------------------------------------------------------------- triage

    def _site_rates(self, site_id: str) -> tuple[float, float]:
        """Projected (storage+ops, audit) cost per year of one site's current holdings."""
        site = self.sim.world.sites[site_id]
        pres = self.costs.preservation
        store = site.stored_bytes / GB * pres["hardware_per_gb_year"].get(site.grade, 0.0)
        store += site.n_replicas * pres["ops_per_replica_year"]
        return store, site.n_replicas * self._polls_per_replica_year() * pres["audit_per_poll"]

    def _polls_per_replica_year(self) -> float:
        a = self.sim.scenario.audit
        polls = 0.0
        if a.third_party:
            polls += 1.0 / a.effective_third_party_interval
        if a.mutual:
            polls += 1.0 / a.effective_mutual_interval
        return polls

    def _shared_rate(self) -> float:
        sc = self.sim.scenario
        d = self.costs.dissemination
        return d["auth_system_per_year"] + sc.access_rate * len(self.sim.world.items) * d["serving_per_access"]

    def enforce_budget(self, stream: str) -> list[str]:
        """Apply the triage policy until the projected run-rate fits the stream's funds."""
        sim = self.sim
        now = sim.kernel.now
        funds = self.funds(stream, now)
        sites = [s for s in self.funded_sites(stream) if sim.world.sites[s].active]
        rates = {s: self._site_rates(s) for s in sites}
        total = sum(a + b for a, b in rates.values()) + (self._shared_rate() if stream == SHARED else 0.0)
        want_audits_off = want_maint_off = False
        actions: list[str] = []
        # with no funds at all nothing can be paid for, whatever the cost model says
        if total > funds or funds <= 0:
            for step in self.budgets.triage:
                if funds > 0 and total <= funds:
                    break
                if step == "defer_audits":
                    want_audits_off = True
                    total -= sum(b for _, b in rates.values())
                elif step == "defer_maintenance":
                    want_maint_off = True
                elif step == "decommission":
                    total = self._decommission(sites, total, funds, audits_on=not want_audits_off, actions=actions)
            if total > funds * (1 + 1e-9):
                sim.counters["budget_deficits"] += 1
                who = stream if stream != SHARED else None
                sim.incident("budget", who, None, f"stream {stream}: deficit persists after triage")
        for s in sites:
            actions += self._toggle(s, self._audits_off, want_audits_off, "audits")
            actions += self._toggle(s, self._maint_off, want_maint_off, "maintenance")
        return actions

    def _toggle(self, site_id: str, flagged: set, want: bool, what: str) -> list[str]:
        if want and site_id not in flagged:
            flagged.add(site_id)
            self.sim.counters[f"{what}_deferred_budget"] += 1
            self.sim.incident("budget", site_id, None, f"{what} deferred: funds below run-rate")
            return [f"defer_{what}:{site_id}"]
        if not want and site_id in flagged:
            flagged.discard(site_id)
            self.sim.incident("budget", site_id, None, f"{what} resumed")
            if what == "maintenance":
                self.sim.strategy.flush(site_id)
            return [f"resume_{what}:{site_id}"]
        return []

    def _decommission(self, sites: list[str], total: float, funds: float, audits_on: bool,
                      actions: list[str]) -> float:
        world = self.sim.world
        pres = self.costs.preservation
        polls = self._polls_per_replica_year() * pres["audit_per_poll"] if audits_on else 0.0
        victims = []
        for s in sites:
            victims += [r for r in world.replicas_at(s) if r.state is not ReplicaState.LOST]
        victims.sort(key=lambda r: (-r.created_at, r.item_id, r.site_id, r.variant))
        for r in victims:
            if funds > 0 and total <= funds:
                break
            site = world.sites[r.site_id]
            size = world.items[r.item_id].size_bytes
            saved = size / GB * pres["hardware_per_gb_year"].get(site.grade, 0.0) + pres["ops_per_replica_year"] + polls
            world.decommission(r)
            total -= saved
            self.sim.counters["decommissioned"] += 1
            self.sim.incident("budget", r.site_id, r.item_id, "replica decommissioned for lack of funds")
            actions.append(f"decommission:{r.item_id}@{r.site_id}")
        return total
