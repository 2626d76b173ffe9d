"""Degradation metrics, snapshot series, run outputs and cross-run aggregation."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING, Any

from .content import ContentItem, ReplicaState

if TYPE_CHECKING:
    from .audit import AuditOutcome
    from .simulation import Simulation

SCHEMA_VERSION = "dpsim.summary/1"

CSV_COLUMNS = (
    "time", "items_ingested", "fraction_irrecoverably_lost", "fraction_impaired_recoverable",
    "impaired_delay_histogram", "undetected_forgery_fraction", "detections", "detection_latency_mean",
    "detection_latency_p50", "detection_latency_p90", "replica_count_histogram", "cost_ingest",
    "cost_preservation", "cost_dissemination", "cost_total", "events", "repairs", "alarms",
)


def fmt(x: Any) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return f"{x:.10g}"
    return str(x)


@dataclass(frozen=True)
class MetricsSnapshot:
    time: float
    items_ingested: int
    fraction_irrecoverably_lost: float
    fraction_impaired_recoverable: float
    impaired_delay_histogram: tuple[int, ...]
    undetected_forgery_fraction: float
    detections: int
    detection_latency_mean: float
    detection_latency_p50: float
    detection_latency_p90: float
    replica_count_histogram: tuple[tuple[int, int], ...]
    cost_ingest: float
    cost_preservation: float
    cost_dissemination: float
    cost_total: float
    events: int
    repairs: int
    alarms: int

    def row(self) -> list[str]:
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            if name == "impaired_delay_histogram":
                v = ";".join(str(n) for n in v)
            elif name == "replica_count_histogram":
                v = ";".join(f"{k}:{n}" for k, n in v)
            out.append(fmt(v))
        return out

    def as_dict(self) -> dict:
        d = asdict(self)
        d["impaired_delay_histogram"] = list(self.impaired_delay_histogram)
        d["replica_count_histogram"] = {str(k): n for k, n in self.replica_count_histogram}
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile of an already sorted list; NaN when empty."""
    if not sorted_values:
        return math.nan
    k = max(0, math.ceil(q * len(sorted_values)) - 1)
    return sorted_values[min(k, len(sorted_values) - 1)]


def bucket_index(delay: float, bounds: list[float]) -> int:
    for k, b in enumerate(bounds):
        if delay <= b:
            return k
    return len(bounds)


class MetricsCollector:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.latencies: list[float] = []
        self._sorted = True
        self.snapshots: list[MetricsSnapshot] = []
        self.access = Counter()
        self.access_delays: list[float] = []
        self.buckets = list(sim.scenario.delay_buckets)

    def register(self, handlers: dict) -> None:
        handlers["snapshot"] = self._on_snapshot
        handlers["access"] = self._on_access

    def start(self) -> None:
        sim = self.sim
        self.snapshots.append(self.snapshot(0.0))
        dt = sim.scenario.snapshot_interval
        if dt < sim.horizon:
            sim.kernel.schedule(dt, "snapshot", k=1)
        rate = sim.scenario.access_rate * len(sim.world.items)
        if rate > 0:
            t = sim.streams("access").expovariate(rate)
            if t <= sim.horizon:
                sim.kernel.schedule(t, "access", rate=rate)

    def record_outcome(self, outcome: "AuditOutcome") -> None:
        if outcome.latency is not None:
            self.latencies.append(outcome.latency)
            self._sorted = False

    def _on_snapshot(self, ev) -> None:
        sim = self.sim
        k = ev.payload["k"]
        self.snapshots.append(self.snapshot(sim.kernel.now))
        t = (k + 1) * sim.scenario.snapshot_interval
        if t < sim.horizon:
            sim.kernel.schedule(t, "snapshot", k=k + 1)

    # ------------------------------------------------------------------ status

    def status(self, item: ContentItem, t: float, readable: dict | None = None) -> tuple[str, float]:
        """("ok"|"impaired"|"lost"|"pending", recovery delay) as a simulated access at ``t`` would see it."""
        world = self.sim.world
        if item.ingested_at is None:
            return "pending", 0.0
        if item.lost_at is not None:
            return "lost", math.inf
        if item.unreadable_at is None:
            fid = item.format_id
            ok = readable.get(fid) if readable is not None else None
            if ok is None:
                ok = world.format_readable(fid, t, self.sim.scenario.strategy.migration_mode == "on_access")
                if readable is not None:
                    readable[fid] = ok
            if not ok:
                item.unreadable_at = t
        if item.unreadable_at is not None:
            return "lost", math.inf
        best = math.inf
        if item.n_intact:
            for r in item.replicas.values():
                if r.state is ReplicaState.INTACT:
                    site = world.sites[r.site_id]
                    if site.online(t):
                        return "ok", 0.0
                    if site.active:
                        best = min(best, site.offline_until - t)
        if item.publisher_available:
            best = min(best, self.sim.scenario.audit.publisher_fetch_delay)
        for done, state in item.in_flight.values():
            if state is ReplicaState.INTACT:
                best = min(best, max(0.0, done - t))
        if math.isinf(best):
            return "lost", math.inf
        return "impaired", best

    def snapshot(self, t: float) -> MetricsSnapshot:
        sim = self.sim
        world = sim.world
        n = max(1, len(world.items))
        lost = impaired = ingested = forged = 0
        hist = [0] * (len(self.buckets) + 1)
        counts: Counter = Counter()
        readable: dict = {}
        any_forgery = bool(world.forgeries)
        for item in world.items.values():
            if item.ingested_at is None:
                continue
            ingested += 1
            counts[item.created - item.lost - item.decommissioned] += 1
            st, delay = self.status(item, t, readable)
            if st == "lost":
                lost += 1
            elif st == "impaired":
                impaired += 1
                hist[bucket_index(delay, self.buckets)] += 1
            if any_forgery and any(r.state is ReplicaState.FORGED and not r.known_bad for r in item.replicas.values()):
                forged += 1
        if not self._sorted:
            self.latencies.sort()
            self._sorted = True
        lat = self.latencies
        costs = sim.economy.ledger.by_category()
        pending = sim.economy._pending
        for (_, category, _, unit), count in pending.items():
            costs[category] += type(costs[category])(unit) * type(costs[category])(count)
        return MetricsSnapshot(
            time=t, items_ingested=ingested,
            fraction_irrecoverably_lost=lost / n, fraction_impaired_recoverable=impaired / n,
            impaired_delay_histogram=tuple(hist), undetected_forgery_fraction=forged / n,
            detections=len(lat), detection_latency_mean=(math.fsum(lat) / len(lat)) if lat else math.nan,
            detection_latency_p50=percentile(lat, 0.5), detection_latency_p90=percentile(lat, 0.9),
            replica_count_histogram=tuple(sorted(counts.items())),
            cost_ingest=float(costs["ingest"]), cost_preservation=float(costs["preservation"]),
            cost_dissemination=float(costs["dissemination"]),
            cost_total=float(sum(costs.values())), events=sum(sim.kernel.counts.values()),
            repairs=sim.counters["repairs"], alarms=sim.counters["alarms"],
        )

    # ------------------------------------------------------------------ access

    def _on_access(self, ev) -> None:
        sim = self.sim
        rate = ev.payload["rate"]
        rng = sim.streams("access")
        t = sim.kernel.now + rng.expovariate(rate)
        if t <= sim.horizon:
            sim.kernel.schedule(t, "access", rate=rate)
        items = sim.item_list
        item = items[rng.randrange(len(items))]
        st, delay = self.status(item, sim.kernel.now)
        if st == "pending":
            return
        self.access[st] += 1
        if st != "lost":
            self.access_delays.append(delay)
            sim.economy.charge_access()
            fmt_ = sim.world.formats[item.format_id]
            if (sim.scenario.strategy.migration_mode == "on_access" and not fmt_.readable(sim.kernel.now)
                    and fmt_.migration_target is not None):
                sim.economy.charge_migration(item, "on_access")

    def access_summary(self) -> dict:
        d = self.access_delays
        return {
            "accesses": sum(self.access.values()), "ok": self.access["ok"], "impaired": self.access["impaired"],
            "failed": self.access["lost"], "mean_delay": (math.fsum(d) / len(d)) if d else 0.0,
            "histogram": self._hist(d),
        }

    def _hist(self, delays: list[float]) -> list[int]:
        hist = [0] * (len(self.buckets) + 1)
        for x in delays:
            if x > 0:
                hist[bucket_index(x, self.buckets)] += 1
        return hist


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class PointSummary:
    point: str
    runs: int
    seeds: list[int]
    mean: dict[str, float]
    se: dict[str, float]
    diff_mean: dict[str, float]
    diff_se: dict[str, float]


NUMERIC_FINAL = tuple(f.name for f in fields(MetricsSnapshot)
                      if f.type in ("float", "int") and f.name not in ("time",))


def _mean_se(xs: list[float]) -> tuple[float, float]:
    xs = [x for x in xs if x is not None and not (isinstance(x, float) and math.isnan(x))]
    if not xs:
        return math.nan, math.nan
    m = math.fsum(xs) / len(xs)
    if len(xs) < 2:
        return m, 0.0
    var = math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1)
    return m, math.sqrt(var / len(xs))


def aggregate(summaries: list[dict], point_key: str = "point") -> dict:
    """Per-point means and standard errors, plus paired-seed differences against the first point."""
    if not summaries:
        raise ValueError("nothing to aggregate")
    schema = summaries[0].get("schema_version")
    keys = set(summaries[0]["final"])
    for s in summaries:
        if s.get("schema_version") != schema or set(s["final"]) != keys:
            raise ValueError("cannot aggregate runs with mismatched metric schemas")
    points: dict[str, list[dict]] = {}
    for s in summaries:
        points.setdefault(str(s.get(point_key, "")), []).append(s)
    metrics = [k for k in NUMERIC_FINAL if k in keys]
    base_label = next(iter(points))
    base = {s["seed"]: s for s in points[base_label]}
    out = []
    for label, runs in points.items():
        mean, se, dmean, dse = {}, {}, {}, {}
        for m in metrics:
            mean[m], se[m] = _mean_se([r["final"][m] for r in runs])
            paired = [r["final"][m] - base[r["seed"]]["final"][m] for r in runs
                      if r["seed"] in base and r["final"][m] is not None and base[r["seed"]]["final"][m] is not None]
            dmean[m], dse[m] = _mean_se(paired)
        out.append(PointSummary(label, len(runs), sorted(r["seed"] for r in runs), mean, se, dmean, dse))
    return {"schema_version": "dpsim.sweep/1", "baseline": base_label, "metrics": metrics,
            "points": [asdict(p) for p in out]}


def aggregate_table(agg: dict, metrics: list[str] | None = None) -> str:
    metrics = metrics or ["fraction_irrecoverably_lost", "fraction_impaired_recoverable",
                          "undetected_forgery_fraction", "cost_total"]
    head = ["point", "runs"] + [f"{m}_{s}" for m in metrics for s in ("mean", "se", "diff", "diff_se")]
    lines = [",".join(head)]
    for p in agg["points"]:
        row = [p["point"], str(p["runs"])]
        for m in metrics:
            row += [fmt(p["mean"][m]), fmt(p["se"][m]), fmt(p["diff_mean"][m]), fmt(p["diff_se"][m])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
