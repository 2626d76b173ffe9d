"""Scenario files: TOML in, a fully resolved :class:`Scenario` (or every violation) out.

The grammar is documented in ``docs/scenario-format.md``.  Validation never
stops at the first problem; each diagnostic carries ``file:line`` and the
dotted key path it concerns.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .relcalc import hazard_from_service_prob

INF = math.inf
REQUIRED = object()

# ThreatSpec keys grouped under the thirteen taxonomy headings.
TAXONOMY: dict[str, tuple[str, ...]] = {
    "Media Failure": ("media_bit_error", "media_crash"),
    "Hardware Failure": ("hardware_transient", "hardware_fatal"),
    "Software Failure": ("software_bug",),
    "Communication Errors": ("comm_error",),
    "Failure of Network Services": ("network_service_failure",),
    "Media & Hardware Obsolescence": ("media_hw_obsolescence",),
    "Software Obsolescence": ("software_format_obsolescence",),
    "Operator Error": ("operator_error",),
    "Natural Disaster": ("natural_disaster",),
    "External Attack": ("external_attack",),
    "Internal Attack": ("internal_attack",),
    "Economic Failure": ("economic_failure",),
    "Organizational Failure": ("organizational_failure",),
}
THREATS: tuple[str, ...] = tuple(k for keys in TAXONOMY.values() for k in keys)

TRIAGE_STEPS = ("defer_audits", "defer_maintenance", "decommission")
INJECT_KINDS = ("corrupt", "forge", "lose", "crash_unit", "incident", "publisher_down",
                "site_offline", "external_attack", "defund")
MIGRATION_MODES = ("none", "normalize_on_ingest", "batch", "on_access", "emulation")


class ScenarioError(Exception):
    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: int
    path: str
    message: str

    def __str__(self):
        where = f" [{self.path}]" if self.path else ""
        return f"{self.file}:{self.line}:{where} {self.message}"


@dataclass(frozen=True)
class F:
    """One scalar field: kind is float|int|bool|str|floatmap|floatlist|strlist."""

    kind: str
    default: Any = REQUIRED
    lo: float | None = None
    hi: float | None = None
    lo_open: bool = False
    choices: tuple | None = None
    allow_inf: bool = True


def _prob(default=0.0):
    return F("float", default, 0.0, 1.0)


def _rate(default=0.0):
    return F("float", default, 0.0)


THREAT_FIELDS: dict[str, dict[str, F]] = {
    "media_bit_error": {"uber_per_bit": F("float", None, 0.0, 1.0), "latent_rate": _rate(),
                        "read_coupled": F("bool", True)},
    "media_crash": {"annual_hazard": F("float", None, 0.0)},
    "hardware_transient": {"rate": _rate(), "mean_outage_years": F("float", 0.01, 0.0, lo_open=True)},
    "hardware_fatal": {"rate": _rate(), "replacement_years": F("float", 0.05, 0.0),
                       "destroys_unit": F("bool", True)},
    "software_bug": {"rate": _rate(), "scope": _prob(0.01), "hw_trigger_probability": _prob(),
                     "digest_rewrite_probability": _prob()},
    "comm_error": {"probability": _prob()},
    "network_service_failure": {"rate": _rate(), "affected_fraction": _prob(0.01)},
    "media_hw_obsolescence": {"reader_unavailable_at": F("floatmap", {}, 0.0)},
    "software_format_obsolescence": {"obsolete_at": F("floatmap", {}, 0.0)},
    "operator_error": {"rate": _rate(), "recoverable_fraction": _prob(0.9),
                       "stress_multiplier": F("float", 1.0, 1.0), "stress_window_years": F("float", 0.1, 0.0),
                       "scope": F("float", 0.05, 0.0, 1.0, lo_open=True),
                       "mean_outage_years": F("float", 0.01, 0.0, lo_open=True)},
    "natural_disaster": {"rate": _rate(), "correlated": F("bool", True), "destroy_probability": _prob(1.0),
                         "damage_fraction": _prob(0.5), "outage_years": F("float", 0.1, 0.0)},
    "external_attack": {"rate": _rate(), "compromise_probability": F("floatmap", {}, 0.0, 1.0),
                        "speed": F("float", INF, 0.0, lo_open=True), "damage_fraction": _prob(1.0),
                        "forge": F("bool", False)},
    "internal_attack": {"rate": _rate(), "damage_fraction": _prob(0.1), "forge": F("bool", False)},
    "economic_failure": {"rate": _rate(), "factor_min": F("float", 0.0, 0.0),
                         "factor_max": F("float", 1.0, 0.0, allow_inf=False), "target": F("str", "random")},
    "organizational_failure": {"rate": _rate(), "handoff_probability": _prob(0.5)},
}

TOP_FIELDS = {
    "name": F("str"),
    "description": F("str", ""),
    "horizon_years": F("float", REQUIRED, 0.0, lo_open=True, allow_inf=False),
    "snapshot_interval": F("float", 1.0, 0.0, lo_open=True, allow_inf=False),
    "access_rate": F("float", 0.1, 0.0, allow_inf=False),
    "delay_buckets": F("floatlist", [0.01, 0.1, 1.0], 0.0, lo_open=True),
}
TOP_SECTIONS = ("items", "formats", "media_classes", "sites", "threats", "strategy", "audit",
                "algorithms", "costs", "budgets", "inject")

ITEM_FIELDS = {
    "count": F("int", REQUIRED, 1),
    "size_bytes": F("float", 1e9, 1.0, allow_inf=False),
    "size_max_bytes": F("float", None, 1.0, allow_inf=False),
    "format": F("str", None),
    "formats": F("floatmap", None, 0.0),
    "publisher_available": F("bool", True),
    "publishers": F("int", 1, 1),
    "ingest_spread_years": F("float", 0.0, 0.0, allow_inf=False),
}
FORMAT_FIELDS = {"migration_target": F("str", None), "emulated": F("bool", False)}
MEDIA_CLASS_FIELDS = {"available_from": F("float", 0.0, 0.0, allow_inf=False)}
SITE_FIELDS = {
    "count": F("int", REQUIRED, 1),
    "zones": F("int", 1, 1),
    "admin_domains": F("str", "per_site"),
    "grade": F("str", "consumer", choices=("consumer", "enterprise")),
    "budget": F("str", "shared", choices=("shared", "per_site")),
    "units_per_site": F("int", 1, 1),
    "unit_capacity_bytes": F("float", 1e16, 0.0, lo_open=True),
    "uber_per_bit": F("float", 1e-14, 0.0, 1.0),
    "annual_hazard": F("float", hazard_from_service_prob(0.07, 5.0), 0.0, allow_inf=False),
    "service_life_years": F("float", INF, 0.0, lo_open=True),
    "medium_class": F("str", None),
}
STRATEGY_FIELDS = {
    "repair": F("bool", True),
    "repair_mode": F("str", "automatic", choices=("automatic", "operator")),
    "operator_error_probability": _prob(),
    "operator_delay_years": F("float", 0.05, 0.0, allow_inf=False),
    "ingest_mode": F("str", "push", choices=("push", "pull_crawl")),
    "miss_probability": _prob(),
    "reconcile_delay_years": F("float", 0.1, 0.0, lo_open=True, allow_inf=False),
    "migration_mode": F("str", "none", choices=MIGRATION_MODES),
    "migration_lead_years": F("float", 1.0, 0.0, allow_inf=False),
    "preserve_original": F("bool", True),
    "media_refresh_interval": F("float", INF, 0.0, lo_open=True),
    "rolling_replacement": F("float", 0.0, 0.0, allow_inf=False),
}
REPLICATION_FIELDS = {"mode": F("str", "fixed", choices=("fixed", "p2p")), "n": F("int", 3, 1),
                      "target_min": F("int", 7, 1), "repair_threshold": F("int", 5, 1)}
DIVERSITY_FIELDS = {"classes": F("int", 1, 1), "policy": F("str", "balanced", choices=("balanced", "random"))}
RATE_LIMIT_FIELDS = {k: F("float", INF, 0.0, lo_open=True) for k in ("audit_polls", "repairs", "crawls")}
AUDIT_FIELDS = {
    "third_party": F("bool", False),
    "third_party_interval": F("float", 1.0, 0.0, lo_open=True, allow_inf=False),
    "mutual": F("bool", False),
    "mutual_interval": F("float", 1.0, 0.0, lo_open=True, allow_inf=False),
    "quorum": F("int", 10, 1),
    "landslide_fraction": F("float", 0.75, 0.5, 1.0, lo_open=True),
    "digest_placement": F("str", "external_store", choices=("external_store", "same_system")),
    "digest_store_corruption_rate": _rate(),
    "algorithms": F("strlist", ["sha1"]),
    "repair_transfer_delay": F("float", 0.01, 0.0, allow_inf=False),
    "publisher_fetch_delay": F("float", 0.01, 0.0, lo_open=True, allow_inf=False),
    "alarm_quarantine_years": F("float", 1.0, 0.0),
    "alarm_response_delay": F("float", 0.0, 0.0, allow_inf=False),
}
ROLLOVER_FIELDS = {"at": F("float", REQUIRED, 0.0, allow_inf=False), "from": F("str"), "to": F("str")}
ALGORITHM_FIELDS = {"broken_at": F("float", None, 0.0, allow_inf=False),
                    "break_public_at": F("float", None, 0.0, allow_inf=False)}
COST_FIELDS = {
    "ingest": {k: _rate() for k in ("permission_per_publisher", "permission_per_item",
                                     "ingest_per_item_automated", "ingest_per_item_manual",
                                     "metadata_per_item")},
    "preservation": {"hardware_per_gb_year": F("floatmap", {"consumer": 0.0, "enterprise": 0.0}, 0.0),
                     **{k: _rate() for k in ("ops_per_replica_year", "audit_per_poll",
                                             "migration_batch_per_item", "migration_on_access_per_item")}},
    "dissemination": {k: _rate() for k in ("auth_system_per_year", "serving_per_access")},
}
BUDGET_FIELDS = {"accounting_interval": F("float", 1.0, 0.0, lo_open=True, allow_inf=False),
                 "triage": F("strlist", list(TRIAGE_STEPS)),
                 "default_funds": F("float", INF, 0.0)}
INJECT_FIELDS = {
    "at": F("float", REQUIRED, 0.0, allow_inf=False),
    "kind": F("str", REQUIRED, choices=INJECT_KINDS),
    "item": F("str", None), "items": F("strlist", None),
    "site": F("str", None), "sites": F("strlist", None),
    "unit": F("str", None), "domain": F("str", None), "vulnerability_class": F("str", None),
    "duration": F("float", 0.0, 0.0),
}


# ----------------------------------------------------------------------------
# resolved scenario types


@dataclass
class ThreatConfig:
    name: str
    excluded: bool
    params: dict[str, Any]
    reason: str = ""


@dataclass
class ThreatSpec:
    threats: dict[str, ThreatConfig]

    def enabled(self, name: str) -> bool:
        cfg = self.threats[name]
        return not cfg.excluded

    def get(self, name: str, key: str):
        return self.threats[name].params[key]

    def rate(self, name: str) -> float:
        if not self.enabled(name):
            return 0.0
        return self.threats[name].params.get("rate", 0.0)


@dataclass
class StrategySpec:
    replication_mode: str = "fixed"
    fixed_n: int = 3
    target_min: int = 7
    repair_threshold: int = 5
    repair: bool = True
    repair_mode: str = "automatic"
    operator_error_probability: float = 0.0
    operator_delay_years: float = 0.05
    ingest_mode: str = "push"
    miss_probability: float = 0.0
    reconcile_delay_years: float = 0.1
    migration_mode: str = "none"
    migration_lead_years: float = 1.0
    preserve_original: bool = True
    media_refresh_interval: float = INF
    rolling_replacement: float = 0.0
    diversity_classes: int = 1
    diversity_policy: str = "balanced"
    rate_limits: dict[str, float] = field(default_factory=lambda: dict.fromkeys(RATE_LIMIT_FIELDS, INF))

    @property
    def initial_replicas(self) -> int:
        return self.fixed_n if self.replication_mode == "fixed" else self.target_min


@dataclass
class AuditSpec:
    third_party: bool = False
    third_party_interval: float = 1.0
    mutual: bool = False
    mutual_interval: float = 1.0
    quorum: int = 10
    landslide_fraction: float = 0.75
    digest_placement: str = "external_store"
    digest_store_corruption_rate: float = 0.0
    algorithms: list[str] = field(default_factory=lambda: ["sha1"])
    repair_transfer_delay: float = 0.01
    publisher_fetch_delay: float = 0.01
    alarm_quarantine_years: float = 1.0
    alarm_response_delay: float = 0.0
    rollovers: list[tuple[float, str, str]] = field(default_factory=list)
    effective_third_party_interval: float = 1.0
    effective_mutual_interval: float = 1.0


@dataclass
class CostModel:
    ingest: dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in COST_FIELDS["ingest"]})
    preservation: dict[str, Any] = field(default_factory=lambda: {
        "hardware_per_gb_year": {"consumer": 0.0, "enterprise": 0.0},
        **{k: 0.0 for k in COST_FIELDS["preservation"] if k != "hardware_per_gb_year"}})
    dissemination: dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in COST_FIELDS["dissemination"]})


@dataclass
class BudgetStream:
    id: str
    trajectory: list[tuple[float, float]]

    def funds_at(self, t: float) -> float:
        level = self.trajectory[0][1] if self.trajectory and self.trajectory[0][0] <= t else INF
        for start, funds in self.trajectory:
            if start <= t:
                level = funds
            else:
                break
        return level


@dataclass
class BudgetSpec:
    accounting_interval: float = 1.0
    triage: list[str] = field(default_factory=lambda: list(TRIAGE_STEPS))
    default_funds: float = INF
    streams: dict[str, BudgetStream] = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    horizon_years: float
    items: dict[str, Any]
    sites: dict[str, Any]
    threats: ThreatSpec
    strategy: StrategySpec
    audit: AuditSpec
    costs: CostModel
    budgets: BudgetSpec
    formats: dict[str, dict[str, Any]]
    media_classes: dict[str, float]
    algorithms: dict[str, dict[str, Any]]
    injections: list[dict[str, Any]] = field(default_factory=list)
    snapshot_interval: float = 1.0
    access_rate: float = 0.1
    delay_buckets: list[float] = field(default_factory=lambda: [0.01, 0.1, 1.0])
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)
    source: str = "<memory>"
    warnings: list[str] = field(default_factory=list)

    @property
    def scenario_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()

    def site_ids(self) -> list[str]:
        return [f"s{k}" for k in range(self.sites["count"])]

    def item_ids(self) -> list[str]:
        return [f"i{k}" for k in range(self.items["count"])]


# ----------------------------------------------------------------------------
# line locator


_HEADER = re.compile(r"^\s*(\[\[?)\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-\"'.]+)\s*=")


def _split_key(text: str) -> list[str]:
    parts = re.findall(r'"[^"]*"|\'[^\']*\'|[^.]+', text)
    return [p.strip().strip("\"'") for p in parts if p.strip()]


def line_index(text: str) -> dict[str, int]:
    """Map dotted key paths (list entries as ``name.N``) to 1-based source lines."""
    index: dict[str, int] = {}
    arrays: dict[str, int] = {}
    table: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            parts = _split_key(m.group(2))
            if m.group(1) == "[[":
                base = ".".join(parts)
                arrays[base] = arrays.get(base, -1) + 1
                table = parts + [str(arrays[base])]
            else:
                table = parts
            index.setdefault(".".join(table), lineno)
            # [a.b] also locates a and a.b for parent-missing diagnostics
            for k in range(1, len(table)):
                index.setdefault(".".join(table[:k]), lineno)
            continue
        m = _KEY.match(line)
        if m:
            path = ".".join(table + _split_key(m.group(1)))
            index.setdefault(path, lineno)
    return index


# ----------------------------------------------------------------------------
# validation


class _Checker:
    def __init__(self, source: str, text: str):
        self.source = source
        self.lines = line_index(text) if text else {}
        self.diagnostics: list[Diagnostic] = []

    def line_for(self, path: str) -> int:
        parts = path.split(".") if path else []
        while parts:
            key = ".".join(parts)
            if key in self.lines:
                return self.lines[key]
            parts.pop()
        return 1

    def error(self, path: str, message: str) -> None:
        self.diagnostics.append(Diagnostic(self.source, self.line_for(path), path, message))

    def table(self, data: dict, key: str, path: str, required: bool = False) -> dict:
        value = data.get(key)
        full = f"{path}.{key}" if path else key
        if value is None:
            if required:
                self.error(path, f"missing required table [{full}]")
            return {}
        if not isinstance(value, dict):
            self.error(full, f"[{full}] must be a table")
            return {}
        return value

    def fields(self, data: dict, schema: dict[str, F], path: str, extra: tuple = ()) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for key in data:
            if key not in schema and key not in extra:
                self.error(f"{path}.{key}" if path else key, f"unknown key {key!r}")
        for key, spec in schema.items():
            full = f"{path}.{key}" if path else key
            if key not in data:
                if spec.default is REQUIRED:
                    self.error(full, f"missing required key {key!r}")
                    out[key] = None
                else:
                    out[key] = copy.deepcopy(spec.default)
                continue
            out[key] = self.value(data[key], spec, full)
        return out

    def value(self, raw: Any, spec: F, path: str) -> Any:
        kind = spec.kind
        if kind == "str":
            if not isinstance(raw, str):
                return self._type(path, "a string", raw)
            if spec.choices and raw not in spec.choices:
                self.error(path, f"{raw!r} is not one of {', '.join(spec.choices)}")
            return raw
        if kind == "bool":
            if not isinstance(raw, bool):
                return self._type(path, "a boolean", raw)
            return raw
        if kind == "int":
            if isinstance(raw, bool) or not isinstance(raw, int):
                return self._type(path, "an integer", raw)
            self._range(raw, spec, path)
            return raw
        if kind == "float":
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                return self._type(path, "a number", raw)
            raw = float(raw)
            self._range(raw, spec, path)
            return raw
        if kind == "floatmap":
            if not isinstance(raw, dict):
                return self._type(path, "a table of numbers", raw)
            out = {}
            for k, v in raw.items():
                sub = F("float", None, spec.lo, spec.hi, spec.lo_open, allow_inf=spec.allow_inf)
                out[k] = self.value(v, sub, f"{path}.{k}")
            return out
        if kind == "floatlist":
            if not isinstance(raw, list):
                return self._type(path, "a list of numbers", raw)
            sub = F("float", None, spec.lo, spec.hi, spec.lo_open, allow_inf=spec.allow_inf)
            return [self.value(v, sub, path) for v in raw]
        if kind == "strlist":
            if not isinstance(raw, list) or not all(isinstance(v, str) for v in raw):
                return self._type(path, "a list of strings", raw)
            return list(raw)
        raise AssertionError(kind)

    def _type(self, path: str, expected: str, raw: Any) -> None:
        self.error(path, f"expected {expected}, got {type(raw).__name__} {raw!r}")
        return None

    def _range(self, v: float, spec: F, path: str) -> None:
        if isinstance(v, float) and math.isnan(v):
            self.error(path, "value is NaN")
            return
        if not spec.allow_inf and isinstance(v, float) and math.isinf(v):
            self.error(path, "value must be finite")
            return
        if spec.lo is not None and (v < spec.lo or (spec.lo_open and v == spec.lo)):
            op = ">" if spec.lo_open else ">="
            self.error(path, f"value {v!r} out of range: must be {op} {spec.lo!r}")
        if spec.hi is not None and v > spec.hi:
            self.error(path, f"value {v!r} out of range: must be <= {spec.hi!r}")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([Diagnostic(str(path), 0, "", f"cannot read scenario: {exc}")]) from None
    return parse_scenario(text, source=str(path))


def parse_scenario(text: str, source: str = "<string>", overrides: dict[str, Any] | None = None) -> Scenario:
    """Parse and validate TOML text; raise :class:`ScenarioError` with every violation found."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else 1
        raise ScenarioError([Diagnostic(source, line, "", f"syntax error: {exc}")]) from None
    for key, value in (overrides or {}).items():
        set_path(raw, key, value)
    return validate(raw, source=source, text=text)


def set_path(raw: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot set {dotted}: {p} is not a table")
    node[parts[-1]] = value


def validate(raw: dict, source: str = "<memory>", text: str = "") -> Scenario:
    c = _Checker(source, text)
    for key in raw:
        if key not in TOP_FIELDS and key not in TOP_SECTIONS:
            c.error(key, f"unknown top-level key {key!r}")
    top = c.fields({k: v for k, v in raw.items() if k in TOP_FIELDS}, TOP_FIELDS, "")
    buckets = top.get("delay_buckets")
    if buckets and None not in buckets and buckets != sorted(buckets):
        c.error("delay_buckets", "delay bucket bounds must be increasing")

    # formats / media classes / algorithms --------------------------------
    formats_raw = c.table(raw, "formats", "")
    formats = {fid: c.fields(body if isinstance(body, dict) else {}, FORMAT_FIELDS, f"formats.{fid}")
               for fid, body in formats_raw.items()} or {"default": {"migration_target": None, "emulated": False}}
    for fid, body in formats.items():
        tgt = body.get("migration_target")
        if tgt is not None and tgt not in formats:
            c.error(f"formats.{fid}.migration_target", f"dangling reference: no format {tgt!r}")
        if tgt == fid:
            c.error(f"formats.{fid}.migration_target", "a format cannot migrate to itself")

    classes_raw = c.table(raw, "media_classes", "")
    media_classes = {mid: c.fields(body if isinstance(body, dict) else {}, MEDIA_CLASS_FIELDS,
                                   f"media_classes.{mid}")["available_from"]
                     for mid, body in classes_raw.items()} or {"default": 0.0}

    algs_raw = c.table(raw, "algorithms", "")
    algorithms = {aid: c.fields(body if isinstance(body, dict) else {}, ALGORITHM_FIELDS, f"algorithms.{aid}")
                  for aid, body in algs_raw.items()} or {"sha1": {"broken_at": None, "break_public_at": None}}
    for aid, body in algorithms.items():
        b, p = body.get("broken_at"), body.get("break_public_at")
        if b is not None and p is not None and p < b:
            c.error(f"algorithms.{aid}.break_public_at", "break_public_at must be >= broken_at")
        if b is None and p is not None:
            c.error(f"algorithms.{aid}.break_public_at", "break_public_at given without broken_at")

    # items -----------------------------------------------------------------
    items = c.fields(c.table(raw, "items", "", required=True), ITEM_FIELDS, "items")
    if items.get("format") is not None and items.get("formats") is not None:
        c.error("items.formats", "give either items.format or items.formats, not both")
    mix = items.get("formats") or {items.get("format") or next(iter(formats)): 1.0}
    for fid in mix:
        if fid not in formats:
            path = "items.formats" if items.get("formats") else "items.format"
            c.error(path, f"dangling reference: no format {fid!r}")
    if mix and sum(v for v in mix.values() if v is not None) <= 0:
        c.error("items.formats", "format weights must sum to a positive number")
    items["format_mix"] = mix
    smax = items.get("size_max_bytes")
    if smax is not None and items.get("size_bytes") is not None and smax < items["size_bytes"]:
        c.error("items.size_max_bytes", "size_max_bytes must be >= size_bytes")

    # sites -----------------------------------------------------------------
    sites = c.fields(c.table(raw, "sites", "", required=True), SITE_FIELDS, "sites")
    ad = sites.get("admin_domains")
    if isinstance(ad, str) and ad not in ("per_site", "shared"):
        if ad.isdigit() and int(ad) >= 1:
            sites["admin_domains"] = int(ad)
        else:
            c.error("sites.admin_domains", "admin_domains must be 'per_site', 'shared' or a positive integer string")
    if sites.get("medium_class") is None:
        sites["medium_class"] = min(media_classes, key=lambda m: (media_classes[m], m))
    elif sites["medium_class"] not in media_classes:
        c.error("sites.medium_class", f"dangling reference: no media class {sites['medium_class']!r}")
    site_ids = [f"s{k}" for k in range(sites["count"] or 0)]

    # strategy ----------------------------------------------------------------
    strat_raw = c.table(raw, "strategy", "", required=True)
    strat_fields = c.fields(strat_raw, STRATEGY_FIELDS, "strategy", extra=("replication", "diversity", "rate_limits"))
    repl = c.fields(c.table(strat_raw, "replication", "strategy"), REPLICATION_FIELDS, "strategy.replication")
    div = c.fields(c.table(strat_raw, "diversity", "strategy"), DIVERSITY_FIELDS, "strategy.diversity")
    limits = c.fields(c.table(strat_raw, "rate_limits", "strategy"), RATE_LIMIT_FIELDS, "strategy.rate_limits")
    if repl.get("mode") == "p2p":
        tm, rt = repl.get("target_min"), repl.get("repair_threshold")
        if tm is not None and rt is not None and rt > tm:
            c.error("strategy.replication.repair_threshold", "repair_threshold must be <= target_min")
    strategy = StrategySpec(
        replication_mode=repl["mode"], fixed_n=repl["n"], target_min=repl["target_min"],
        repair_threshold=repl["repair_threshold"], diversity_classes=div["classes"],
        diversity_policy=div["policy"], rate_limits=limits, **strat_fields)
    need = strategy.initial_replicas if strategy.replication_mode in ("fixed", "p2p") else None
    if need and sites.get("count") and need > sites["count"]:
        key = "n" if strategy.replication_mode == "fixed" else "target_min"
        c.error(f"strategy.replication.{key}", f"{need} replicas requested but only {sites['count']} sites exist")

    # threats -----------------------------------------------------------------
    threats_raw = c.table(raw, "threats", "", required=True)
    threat_cfgs: dict[str, ThreatConfig] = {}
    for key in threats_raw:
        if key not in THREATS:
            c.error(f"threats.{key}", f"unknown threat {key!r}")
    for name in THREATS:
        body = threats_raw.get(name)
        if body is None:
            c.error("threats", f"threat {name!r} has no disposition: parameterize it or set "
                               f"[threats.{name}] excluded = true")
            threat_cfgs[name] = ThreatConfig(name, True, {k: s.default for k, s in THREAT_FIELDS[name].items()})
            continue
        if not isinstance(body, dict):
            c.error(f"threats.{name}", "threat disposition must be a table")
            body = {"excluded": True}
        excluded = body.get("excluded", False)
        if not isinstance(excluded, bool):
            c.error(f"threats.{name}.excluded", "excluded must be a boolean")
            excluded = True
        reason = body.get("reason", "")
        params_raw = {k: v for k, v in body.items() if k not in ("excluded", "reason")}
        if excluded and params_raw:
            c.error(f"threats.{name}", "an excluded threat must not carry parameters")
        params = c.fields(params_raw, THREAT_FIELDS[name], f"threats.{name}")
        threat_cfgs[name] = ThreatConfig(name, excluded, params, reason if isinstance(reason, str) else "")
    threats = ThreatSpec(threat_cfgs)
    _check_threat_refs(c, threats, formats, media_classes, strategy)
    eco = threat_cfgs["economic_failure"].params
    if eco.get("factor_min") is not None and eco.get("factor_max") is not None and eco["factor_min"] > eco["factor_max"]:
        c.error("threats.economic_failure.factor_min", "factor_min must be <= factor_max")

    # audit -------------------------------------------------------------------
    audit_raw = c.table(raw, "audit", "")
    audit_fields = c.fields(audit_raw, AUDIT_FIELDS, "audit", extra=("rollover",))
    rollovers = []
    roll_raw = audit_raw.get("rollover", [])
    if not isinstance(roll_raw, list):
        c.error("audit.rollover", "rollover must be an array of tables ([[audit.rollover]])")
        roll_raw = []
    for k, body in enumerate(roll_raw):
        r = c.fields(body if isinstance(body, dict) else {}, ROLLOVER_FIELDS, f"audit.rollover.{k}")
        for end in ("from", "to"):
            if r.get(end) is not None and r[end] not in algorithms:
                c.error(f"audit.rollover.{k}.{end}", f"dangling reference: no algorithm {r[end]!r}")
        rollovers.append((r["at"], r["from"], r["to"]))
    for aid in audit_fields.get("algorithms") or []:
        if aid not in algorithms:
            c.error("audit.algorithms", f"dangling reference: no algorithm {aid!r}")
    if audit_fields.get("algorithms") == []:
        c.error("audit.algorithms", "at least one digest algorithm is required")
    audit = AuditSpec(rollovers=rollovers, **audit_fields)

    # costs / budgets ----------------------------------------------------------
    costs_raw = c.table(raw, "costs", "")
    for key in costs_raw:
        if key not in COST_FIELDS:
            c.error(f"costs.{key}", f"unknown cost section {key!r}")
    costs = CostModel(**{sec: c.fields(c.table(costs_raw, sec, "costs"), schema, f"costs.{sec}")
                         for sec, schema in COST_FIELDS.items()})
    hw = costs.preservation.get("hardware_per_gb_year") or {}
    for grade in ("consumer", "enterprise"):
        hw.setdefault(grade, 0.0)

    budgets_raw = c.table(raw, "budgets", "")
    bfields = c.fields(budgets_raw, BUDGET_FIELDS, "budgets", extra=("streams",))
    for step in bfields.get("triage") or []:
        if step not in TRIAGE_STEPS:
            c.error("budgets.triage", f"unknown triage step {step!r}")
    streams = {}
    for sid, body in c.table(budgets_raw, "streams", "budgets").items():
        path = f"budgets.streams.{sid}"
        valid_ids = ["shared"] + (site_ids if sites.get("budget") == "per_site" else [])
        if sid not in valid_ids:
            c.error(path, f"dangling reference: budget stream {sid!r} matches no site stream (have {_short(valid_ids)})")
        traj = body.get("trajectory") if isinstance(body, dict) else None
        if isinstance(body, dict):
            for key in body:
                if key != "trajectory":
                    c.error(f"{path}.{key}", f"unknown key {key!r}")
        points = []
        if not isinstance(traj, list) or not traj:
            c.error(f"{path}.trajectory", "trajectory must be a non-empty list of [time, funds_per_year] pairs")
        else:
            last = -INF
            for pt in traj:
                ok = (isinstance(pt, list) and len(pt) == 2
                      and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pt))
                if not ok:
                    c.error(f"{path}.trajectory", f"bad trajectory point {pt!r}")
                    continue
                t, funds = float(pt[0]), float(pt[1])
                if t < last:
                    c.error(f"{path}.trajectory", "trajectory times must be non-decreasing")
                if funds < 0 or math.isnan(funds):
                    c.error(f"{path}.trajectory", f"funds must be >= 0 (got {funds!r})")
                last = t
                points.append((t, funds))
        streams[sid] = BudgetStream(sid, points)
    budgets = BudgetSpec(accounting_interval=bfields["accounting_interval"], triage=bfields["triage"] or [],
                         default_funds=bfields["default_funds"], streams=streams)

    # injections ------------------------------------------------------------------
    inj_raw = raw.get("inject", [])
    if not isinstance(inj_raw, list):
        c.error("inject", "inject must be an array of tables ([[inject]])")
        inj_raw = []
    item_ids = {f"i{k}" for k in range(items.get("count") or 0)}
    injections = []
    for k, body in enumerate(inj_raw):
        path = f"inject.{k}"
        inj = c.fields(body if isinstance(body, dict) else {}, INJECT_FIELDS, path)
        for ref in [inj.get("item")] + (inj.get("items") or []):
            if ref is not None and ref != "all" and ref not in item_ids:
                c.error(f"{path}.item", f"dangling reference: no item {ref!r}")
        for ref in [inj.get("site")] + (inj.get("sites") or []):
            if ref is not None and ref not in site_ids:
                c.error(f"{path}.site", f"dangling reference: no site {ref!r}")
        if top.get("horizon_years") is not None and inj.get("at") is not None and inj["at"] > top["horizon_years"]:
            c.error(f"{path}.at", "injection time is beyond the horizon")
        injections.append(inj)

    if c.diagnostics:
        raise ScenarioError(c.diagnostics)

    scenario = Scenario(
        name=top["name"], horizon_years=top["horizon_years"], items=items, sites=sites,
        threats=threats, strategy=strategy, audit=audit, costs=costs, budgets=budgets,
        formats=formats, media_classes=media_classes, algorithms=algorithms, injections=injections,
        snapshot_interval=top["snapshot_interval"], access_rate=top["access_rate"],
        delay_buckets=top["delay_buckets"], description=top["description"], raw=raw, source=source,
    )
    scenario.warnings.extend(_audit_feasibility(scenario))
    return scenario


def _short(ids: list[str]) -> str:
    return ", ".join(ids) if len(ids) <= 4 else f"{ids[0]}, {ids[1]}, ..., {ids[-1]}"


def _check_threat_refs(c: _Checker, threats: ThreatSpec, formats, media_classes, strategy) -> None:
    fmt_obs = threats.threats["software_format_obsolescence"].params.get("obsolete_at") or {}
    for fid in fmt_obs:
        if fid not in formats:
            c.error(f"threats.software_format_obsolescence.obsolete_at.{fid}", f"dangling reference: no format {fid!r}")
    media_obs = threats.threats["media_hw_obsolescence"].params.get("reader_unavailable_at") or {}
    for mid in media_obs:
        if mid not in media_classes:
            c.error(f"threats.media_hw_obsolescence.reader_unavailable_at.{mid}",
                    f"dangling reference: no media class {mid!r}")
    comp = threats.threats["external_attack"].params.get("compromise_probability") or {}
    known = {f"c{k}" for k in range(strategy.diversity_classes or 1)} | {"default"}
    for cls in comp:
        if cls not in known:
            c.error(f"threats.external_attack.compromise_probability.{cls}",
                    f"dangling reference: no vulnerability class {cls!r}")


def site_load(scenario: Scenario) -> int:
    """Largest number of items any one site holds under balanced placement."""
    n = min(scenario.strategy.initial_replicas, scenario.sites["count"])
    return math.ceil(scenario.items["count"] * n / scenario.sites["count"])


def effective_interval(interval: float, items_per_site: int, polls_per_year: float) -> float:
    """Audit interval achievable when each site may run at most ``polls_per_year`` polls."""
    if math.isinf(polls_per_year):
        return interval
    return max(interval, items_per_site / polls_per_year)


def _audit_feasibility(s: Scenario) -> list[str]:
    warnings = []
    load = site_load(s)
    limit = s.strategy.rate_limits["audit_polls"]
    polls_needed = 0.0
    for enabled, attr in ((s.audit.third_party, "third_party_interval"), (s.audit.mutual, "mutual_interval")):
        interval = getattr(s.audit, attr)
        setattr(s.audit, f"effective_{attr}", interval)
        if enabled:
            polls_needed += load / interval
    if polls_needed > limit:
        scale = polls_needed / limit
        for enabled, attr in ((s.audit.third_party, "third_party_interval"), (s.audit.mutual, "mutual_interval")):
            if enabled:
                eff = getattr(s.audit, attr) * scale
                setattr(s.audit, f"effective_{attr}", eff)
                warnings.append(
                    f"audit.{attr}: {getattr(s.audit, attr):g}y is infeasible under "
                    f"strategy.rate_limits.audit_polls={limit:g}/y with {load} items per site; "
                    f"effective interval {eff:g}y")
    return warnings
