"""Scenario builders shared by the test modules."""

from __future__ import annotations

import copy

from dpsim.scenario import THREATS, Scenario, validate


def raw_scenario(items: int | dict = 10, sites: int | dict = 5, horizon: float = 10.0, threats: dict | None = None,
                 **sections) -> dict:
    """A valid raw scenario with every threat excluded unless given in ``threats``."""
    raw = {
        "name": "test",
        "horizon_years": horizon,
        "access_rate": 0.0,
        "items": dict(items) if isinstance(items, dict) else {"count": items},
        "sites": dict(sites) if isinstance(sites, dict) else {"count": sites},
        "threats": {},
    }
    raw["strategy"] = {"replication": {"mode": "fixed", "n": min(3, raw["sites"]["count"])}}
    for name in THREATS:
        raw["threats"][name] = copy.deepcopy((threats or {}).get(name, {"excluded": True}))
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            merge(raw[key], value)
        else:
            raw[key] = copy.deepcopy(value)
    return raw


def merge(into: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(into.get(k), dict):
            merge(into[k], v)
        else:
            into[k] = copy.deepcopy(v)
    return into


def scenario(**kw) -> Scenario:
    return validate(raw_scenario(**kw))


def zero_rate_threats() -> dict:
    """Every threat included with all rates and probabilities at zero."""
    return {
        "media_bit_error": {"uber_per_bit": 0.0, "latent_rate": 0.0},
        "media_crash": {"annual_hazard": 0.0},
        "hardware_transient": {"rate": 0.0},
        "hardware_fatal": {"rate": 0.0},
        "software_bug": {"rate": 0.0},
        "comm_error": {"probability": 0.0},
        "network_service_failure": {"rate": 0.0},
        "media_hw_obsolescence": {},
        "software_format_obsolescence": {},
        "operator_error": {"rate": 0.0},
        "natural_disaster": {"rate": 0.0},
        "external_attack": {"rate": 0.0},
        "internal_attack": {"rate": 0.0},
        "economic_failure": {"rate": 0.0},
        "organizational_failure": {"rate": 0.0},
    }


def to_toml(raw: dict) -> str:
    """Minimal TOML writer for test fixtures (tables, scalars, flat lists, inline tables)."""
    lines: list[str] = []

    def scalar(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, float):
            if v != v:
                return "nan"
            if v in (float("inf"), float("-inf")):
                return "inf" if v > 0 else "-inf"
            return repr(v)
        if isinstance(v, list):
            return "[" + ", ".join(scalar(x) for x in v) + "]"
        if isinstance(v, dict):
            return "{ " + ", ".join(f"{k} = {scalar(x)}" for k, x in v.items()) + " }"
        return str(v)

    def emit(table: dict, path: list[str]) -> None:
        subs, arrays = [], []
        for k, v in table.items():
            if isinstance(v, dict) and (len(path) < 2 or any(isinstance(x, dict) for x in v.values())):
                subs.append((k, v))
            elif isinstance(v, list) and v and all(isinstance(x, dict) for x in v):
                arrays.append((k, v))
            else:
                lines.append(f"{k} = {scalar(v)}")
        for k, v in subs:
            lines.append("")
            lines.append(f"[{'.'.join(path + [k])}]")
            emit(v, path + [k])
        for k, v in arrays:
            for entry in v:
                lines.append("")
                lines.append(f"[[{'.'.join(path + [k])}]]")
                emit(entry, path + [k])

    emit(raw, [])
    return "\n".join(lines) + "\n"
