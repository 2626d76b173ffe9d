"""Preserved items, their replicas, and the sites and media holding them.

Content is never stored as bytes.  Each representation of an item has a
:class:`ContentState` token; corruption swaps the token for one carrying a
fresh nonce.  Digests are symbolic (:class:`Digest`), so two states collide
only when the forgery table says so.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple


class ConfigurationError(ValueError):
    """A scenario refers to something that does not exist."""


class ReplicaState(str, enum.Enum):
    INTACT = "intact"
    CORRUPT = "silently_corrupt"
    LOST = "lost"
    FORGED = "forged"


class ContentState(NamedTuple):
    """Opaque content token: item, representation version, damage nonce (None when pristine)."""

    item_id: str
    version: int
    nonce: tuple | None = None

    def damaged(self, nonce: tuple) -> "ContentState":
        return ContentState(self.item_id, self.version, nonce)


class Digest(NamedTuple):
    algorithm_id: str
    state: ContentState
    nonce: object = None


class Origin(str, enum.Enum):
    PUSH = "push"
    PULL = "pull"


class StoredIn(str, enum.Enum):
    SAME_SYSTEM = "same_system"
    EXTERNAL_STORE = "external_store"


@dataclass(slots=True)
class Format:
    id: str
    obsolete_at: float | None = None
    migration_target: str | None = None
    emulated: bool = False

    def readable(self, now: float) -> bool:
        if self.emulated or self.obsolete_at is None:
            return True
        return now < self.obsolete_at


@dataclass(slots=True)
class DigestRecord:
    algorithm_id: str
    value: Digest
    computed_at: float
    stored_in: StoredIn
    corrupted: bool = False  # ground truth only


@dataclass(slots=True)
class DigestAlgorithm:
    id: str
    broken_at: float | None = None
    break_public_at: float | None = None

    def broken(self, now: float) -> bool:
        return self.broken_at is not None and now >= self.broken_at

    def trusted(self, now: float) -> bool:
        return self.break_public_at is None or now < self.break_public_at


@dataclass(slots=True, eq=False)
class Replica:
    item_id: str
    site_id: str
    variant: int
    state: ReplicaState
    content: ContentState
    medium_id: str | None
    created_at: float
    digest_records: list[DigestRecord] = field(default_factory=list)
    last_audited: float | None = None
    last_verdict: str | None = None
    known_bad: bool = False
    damaged_at: float | None = None  # ground truth: when it stopped being intact

    @property
    def key(self) -> tuple[str, int]:
        return (self.site_id, self.variant)


@dataclass(slots=True, eq=False)
class ContentItem:
    id: str
    size_bytes: int
    format_id: str
    origin: Origin
    publisher_available: bool = True
    publisher_id: str = "p0"
    versions: list[ContentState] = field(default_factory=list)
    version_formats: list[str] = field(default_factory=list)
    replicas: dict[tuple[str, int], Replica] = field(default_factory=dict)
    roster: list[str] = field(default_factory=list)
    ingested_at: float | None = None
    lost_at: float | None = None
    unreadable_at: float | None = None
    impaired_flag: bool = False
    n_intact: int = 0
    created: int = 0
    lost: int = 0
    decommissioned: int = 0
    migrations: list[tuple[float, str, str]] = field(default_factory=list)
    in_flight: dict[tuple[str, int], tuple[float, ReplicaState]] = field(default_factory=dict)
    quarantined_until: float = -math.inf

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError(f"item {self.id}: size_bytes must be positive")
        if not self.versions:
            self.versions.append(ContentState(self.id, 0))
            self.version_formats.append(self.format_id)

    @property
    def true_state(self) -> ContentState:
        return self.versions[-1]

    @property
    def current_variant(self) -> int:
        return len(self.versions) - 1

    def live_replicas(self, variant: int | None = None) -> list[Replica]:
        return [
            r for r in self.replicas.values()
            if r.state is not ReplicaState.LOST and (variant is None or r.variant == variant)
        ]

    def state_counts(self) -> dict[ReplicaState, int]:
        counts = dict.fromkeys(ReplicaState, 0)
        for r in self.replicas.values():
            counts[r.state] += 1
        return counts

    @property
    def current_count(self) -> int:
        return sum(1 for r in self.replicas.values() if r.state is not ReplicaState.LOST)


@dataclass(slots=True, eq=False)
class MediaUnit:
    id: str
    site_id: str
    capacity_bytes: float
    uber_per_bit: float
    annual_hazard: float
    service_life_years: float
    deployed_at: float
    grade: str
    medium_class: str = "default"
    used_bytes: float = 0.0
    alive: bool = True
    replicas: dict = field(default_factory=dict)  # (item_id, variant) -> None, insertion ordered

    def __post_init__(self):
        if not 0.0 <= self.uber_per_bit <= 1.0:
            raise ValueError(f"unit {self.id}: uber_per_bit must be in [0, 1]")
        if self.annual_hazard < 0:
            raise ValueError(f"unit {self.id}: annual_hazard must be >= 0")

    @property
    def free_bytes(self) -> float:
        return self.capacity_bytes - self.used_bytes


@dataclass(slots=True, eq=False)
class Site:
    id: str
    location_id: str
    admin_domain_id: str
    vulnerability_classes: frozenset[str]
    media_units: list[str]
    budget_stream_id: str
    grade: str = "consumer"
    active: bool = True
    offline_until: float = -math.inf
    unit_counter: int = 0
    handoffs: int = 0
    n_replicas: int = 0
    stored_bytes: float = 0.0
    replica_years: float = 0.0
    byte_years: float = 0.0
    integrated_to: float = 0.0

    def integrate(self, now: float) -> None:
        dt = now - self.integrated_to
        if dt > 0:
            self.replica_years += self.n_replicas * dt
            self.byte_years += self.stored_bytes * dt
            self.integrated_to = now

    def online(self, now: float) -> bool:
        return self.active and now >= self.offline_until

    def shares_vulnerability(self, other: "Site") -> bool:
        return bool(self.vulnerability_classes & other.vulnerability_classes)


class World:
    """All mutable state of one run.

    Every replica state change goes through :meth:`set_state` so the per-item
    intact counters and the loss latch stay consistent.
    """

    def __init__(self, algorithms: dict[str, DigestAlgorithm] | None = None,
                 formats: dict[str, Format] | None = None):
        self.now = 0.0
        self.items: dict[str, ContentItem] = {}
        self.sites: dict[str, Site] = {}
        self.units: dict[str, MediaUnit] = {}
        self.formats: dict[str, Format] = formats or {}
        self.algorithms: dict[str, DigestAlgorithm] = algorithms or {}
        self.active_algorithms: list[str] = list(self.algorithms)
        self.digest_store: dict[tuple[str, int], list[DigestRecord]] = {}
        self.forgeries: dict[tuple[ContentState, str], ContentState] = {}
        self.losses: list[tuple[float, str]] = []
        self._nonce_counters: dict[str, int] = {}

    # digests -----------------------------------------------------------

    def digest_of(self, state: ContentState, algorithm_id: str, nonce: object = None) -> Digest:
        if algorithm_id not in self.algorithms:
            raise ConfigurationError(f"unknown digest algorithm {algorithm_id!r}")
        if nonce is None:
            original = self.forgeries.get((state, algorithm_id))
            if original is not None:
                return Digest(algorithm_id, original, None)
        return Digest(algorithm_id, state, nonce)

    def register_forgery(self, forged: ContentState, original: ContentState, now: float) -> list[str]:
        """Make ``forged`` collide with ``original`` under every algorithm broken at ``now``."""
        broken = [a.id for a in self.algorithms.values() if a.broken(now)]
        for alg in broken:
            self.forgeries[(forged, alg)] = original
        return broken

    def fresh_nonce(self, scope: str, tag: str) -> tuple:
        # per-scope counters so damage at one site never renumbers another's
        k = self._nonce_counters.get(scope, 0)
        self._nonce_counters[scope] = k + 1
        return (tag, scope, k)

    def trusted_algorithms(self, now: float | None = None) -> list[str]:
        now = self.now if now is None else now
        return [a for a in self.active_algorithms if self.algorithms[a].trusted(now)]

    def current_algorithm(self, now: float | None = None) -> str:
        trusted = self.trusted_algorithms(now)
        return trusted[-1] if trusted else self.active_algorithms[-1]

    # state ---------------------------------------------------------------

    def reference_state(self, replica: Replica) -> ContentState:
        return self.items[replica.item_id].versions[replica.variant]

    def add_replica(self, replica: Replica) -> None:
        item = self.items[replica.item_id]
        old = item.replicas.get(replica.key)
        if old is not None and old.state is not ReplicaState.LOST:
            raise ValueError(f"replica {replica.item_id}@{replica.key} already exists")
        item.replicas[replica.key] = replica
        item.created += 1
        if replica.state is ReplicaState.INTACT:
            item.n_intact += 1
        if replica.medium_id is not None:
            self._attach(replica, item, self.units[replica.medium_id])

    def set_state(self, replica: Replica, state: ReplicaState, content: ContentState | None = None,
                  now: float | None = None) -> None:
        now = self.now if now is None else now
        item = self.items[replica.item_id]
        before = replica.state
        if before is ReplicaState.LOST and state is not ReplicaState.LOST:
            raise ValueError("a lost replica has no recoverable content; recreate it instead")
        if before is ReplicaState.INTACT:
            item.n_intact -= 1
        if state is ReplicaState.INTACT:
            item.n_intact += 1
            replica.damaged_at = None
        elif before is ReplicaState.INTACT:
            replica.damaged_at = now
        if content is not None:
            replica.content = content
        replica.state = state
        if state is ReplicaState.LOST and before is not ReplicaState.LOST:
            item.lost += 1
            self._release(replica, item)
        self.check_loss(item, now)

    def decommission(self, replica: Replica) -> None:
        item = self.items[replica.item_id]
        if replica.state is ReplicaState.INTACT:
            item.n_intact -= 1
        if replica.state is not ReplicaState.LOST:
            item.decommissioned += 1
            self._release(replica, item)
        del item.replicas[replica.key]
        self.check_loss(item, self.now)

    def _attach(self, replica: Replica, item: ContentItem, unit: MediaUnit) -> None:
        replica.medium_id = unit.id
        unit.used_bytes += item.size_bytes
        unit.replicas[(item.id, replica.variant)] = None
        site = self.sites[unit.site_id]
        site.integrate(self.now)
        site.n_replicas += 1
        site.stored_bytes += item.size_bytes

    def _release(self, replica: Replica, item: ContentItem) -> None:
        if replica.medium_id is not None and replica.medium_id in self.units:
            unit = self.units[replica.medium_id]
            unit.used_bytes -= item.size_bytes
            unit.replicas.pop((item.id, replica.variant), None)
            site = self.sites[unit.site_id]
            site.integrate(self.now)
            site.n_replicas -= 1
            site.stored_bytes -= item.size_bytes
        replica.medium_id = None

    def move_replica(self, replica: Replica, unit: MediaUnit) -> None:
        item = self.items[replica.item_id]
        self._release(replica, item)
        self._attach(replica, item, unit)

    def replicas_on(self, unit: MediaUnit) -> list[Replica]:
        return [self.items[i].replicas[(unit.site_id, v)] for i, v in unit.replicas]

    def replica_at_index(self, site_id: str, k: int) -> Replica | None:
        """The ``k``-th replica held at a site, counting through its live units in order."""
        for uid in self.sites[site_id].media_units:
            unit = self.units[uid]
            if not unit.alive:
                continue
            if k < len(unit.replicas):
                item_id, variant = next(itertools.islice(unit.replicas, k, None))
                return self.items[item_id].replicas[(unit.site_id, variant)]
            k -= len(unit.replicas)
        return None

    def replicas_at(self, site_id: str) -> list[Replica]:
        out = []
        for uid in self.sites[site_id].media_units:
            unit = self.units[uid]
            if unit.alive:
                out.extend(self.replicas_on(unit))
        return out

    # loss predicate --------------------------------------------------------

    def irrecoverably_lost(self, item: ContentItem) -> bool:
        """Zero intact replicas, no publisher, and no intact copy in transit."""
        if item.n_intact > 0 or item.publisher_available:
            return False
        return not any(st is ReplicaState.INTACT for _, st in item.in_flight.values())

    def check_loss(self, item: ContentItem, now: float) -> bool:
        if item.lost_at is None and item.ingested_at is not None and self.irrecoverably_lost(item):
            item.lost_at = now
            self.losses.append((now, item.id))
            return True
        return item.lost_at is not None

    def format_readable(self, format_id: str, now: float, on_access: bool = False) -> bool:
        fmt = self.formats[format_id]
        if fmt.readable(now):
            return True
        if on_access and fmt.migration_target is not None:
            return self.format_readable(fmt.migration_target, now, on_access)
        return False

    def site_units(self, site_id: str) -> list[MediaUnit]:
        return [self.units[u] for u in self.sites[site_id].media_units if self.units[u].alive]
