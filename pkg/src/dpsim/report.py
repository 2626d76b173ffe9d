"""Disclosure report: what a scenario's system claims to protect against and how."""

from __future__ import annotations

import math

from .scenario import TAXONOMY, Scenario

OUT_OF_SCOPE = "organizational \u2014 outside simulator scope"  # exact marker text of the report contract

SECTIONS = (
    "Threat model",
    "Replica creation, administration, damage detection and repair",
    "Intellectual property policies",
    "External interfaces (submission and dissemination packages)",
    "Source code access and preservation",
    "Who audits, how, and who receives the results",
    "Handling and reporting of data-loss incidents",
)


def _detection(s: Scenario) -> str:
    mech = []
    if s.audit.third_party:
        where = "an external digest store" if s.audit.digest_placement == "external_store" else "the same system"
        mech.append(f"third-party digest audit every {s.audit.effective_third_party_interval:g}y "
                    f"(digests held in {where}; algorithms {', '.join(s.audit.algorithms)})")
    if s.audit.mutual:
        mech.append(f"mutual audit among peers every {s.audit.effective_mutual_interval:g}y "
                    f"(quorum {s.audit.quorum}, landslide {s.audit.landslide_fraction:g})")
    return "; ".join(mech) if mech else "none configured: damage is only noticed when a replica is lost outright"


def _replication(s: Scenario) -> str:
    st = s.strategy
    if st.replication_mode == "fixed":
        return f"a fixed {st.fixed_n} replicas per item"
    return (f"peer-to-peer replication keeping at least {st.repair_threshold} believed-good replicas "
            f"and topping up to {st.target_min}")


def _repair(s: Scenario) -> str:
    st = s.strategy
    if not st.repair:
        return "disabled"
    how = "automatic" if st.repair_mode == "automatic" else (
        f"operator-mediated (delay {st.operator_delay_years:g}y, error probability {st.operator_error_probability:g})")
    return f"{how}; source is the original publisher when reachable, otherwise a replica that passed its last audit"


def handling(s: Scenario, threat: str) -> str:
    st, a = s.strategy, s.audit
    detect = _detection(s)
    limits = ", ".join(f"{k} {v:g}/y" for k, v in st.rate_limits.items() if math.isfinite(v)) or "none"
    text = {
        "media_bit_error": f"latent damage found by {detect}; repaired ({_repair(s)})",
        "media_crash": f"{_replication(s)}; lost replicas recreated ({_repair(s)})",
        "hardware_transient": "site outage tolerated by holding replicas at other sites",
        "hardware_fatal": f"failed unit replaced; its replicas recreated ({_repair(s)})",
        "software_bug": f"corruption found by {detect}",
        "comm_error": f"every transfer is exposed; damaged copies found by {detect}",
        "network_service_failure": "publisher may vanish; repair falls back to replicas that passed audit",
        "media_hw_obsolescence": (f"media refresh every {st.media_refresh_interval:g}y"
                                  if math.isfinite(st.media_refresh_interval) else "unit replacement at end of service life")
                                 + (f", rolling replacement of {st.rolling_replacement:g} of units per year"
                                    if st.rolling_replacement else ""),
        "software_format_obsolescence": f"migration mode {st.migration_mode}"
                                        + (", originals preserved" if st.preserve_original else ""),
        "operator_error": "damage bounded by admin-domain separation; lost replicas repaired",
        "natural_disaster": f"sites spread over {s.sites['zones']} zone(s)",
        "external_attack": f"{st.diversity_classes} vulnerability class(es) ({st.diversity_policy} assignment); "
                           f"detection by {detect}; rate limits: {limits}",
        "internal_attack": f"admin domains: {s.sites['admin_domains']}; detection by {detect}",
        "economic_failure": f"budget streams {s.sites['budget']}; triage order {', '.join(s.budgets.triage) or 'none'}",
        "organizational_failure": "successor hand-off or replica recreation at remaining sites",
    }[threat]
    if threat in ("software_bug", "internal_attack", "external_attack") and a.digest_placement == "same_system":
        text += "; digests stored with the content can be rewritten along with it"
    return text


def disclosure_report(s: Scenario) -> str:
    lines = [f"# Disclosure report: {s.name}", ""]
    if s.description:
        lines += [s.description, ""]
    lines += [f"## 1. {SECTIONS[0]}", ""]
    included, excluded = [], []
    for heading, keys in TAXONOMY.items():
        for key in keys:
            cfg = s.threats.threats[key]
            if cfg.excluded:
                reason = f" ({cfg.reason})" if cfg.reason else ""
                excluded.append(f"- {heading} [{key}]{reason}")
            else:
                params = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(cfg.params.items()) if v is not None)
                included.append(f"- {heading} [{key}]: {params or 'defaults'}\n  handling: {handling(s, key)}")
    lines += ["### Included threats", ""] + (included or ["- none"]) + [""]
    lines += ["### Explicitly excluded", ""] + (excluded or ["- none"]) + [""]
    st = s.strategy
    lines += [f"## 2. {SECTIONS[1]}", "",
              f"- Creation: {st.ingest_mode} ingest"
              + (f" (miss probability {st.miss_probability:g}, reconciled after {st.reconcile_delay_years:g}y)"
                 if st.ingest_mode == "pull_crawl" else "")
              + f"; {_replication(s)} across {s.sites['count']} sites",
              f"- Administration: admin domains {s.sites['admin_domains']}, {s.sites['zones']} zone(s), "
              f"{st.diversity_classes} vulnerability class(es), {s.sites['grade']} hardware, "
              f"budget {s.sites['budget']}",
              f"- Damage detection: {_detection(s)}",
              f"- Repair: {_repair(s)}", ""]
    for k, title in enumerate(SECTIONS[2:], start=3):
        lines += [f"## {k}. {title}", "", OUT_OF_SCOPE, ""]
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in sorted(v.items())) + "}"
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)
