from dpsim.report import OUT_OF_SCOPE, SECTIONS, disclosure_report

from helpers import scenario


def sections(text):
    return [line for line in text.splitlines() if line.startswith("## ")]


def test_seven_sections_in_order():
    text = disclosure_report(scenario())
    assert sections(text) == [f"## {k}. {t}" for k, t in enumerate(SECTIONS, start=1)]
    assert text.count(OUT_OF_SCOPE) == 5


def test_excluded_threat_listed_with_reason():
    s = scenario(threats={"natural_disaster": {"excluded": True, "reason": "single building"}})
    text = disclosure_report(s)
    excluded = text.split("### Explicitly excluded")[1].split("## 2.")[0]
    assert "[natural_disaster] (single building)" in excluded
    assert "[natural_disaster]" not in text.split("### Explicitly excluded")[0]


def test_p2p_names_mutual_audit():
    s = scenario(sites=8, strategy={"replication": {"mode": "p2p"}}, audit={"third_party": False, "mutual": True})
    item2 = text_of_section(disclosure_report(s), 2)
    assert "Damage detection: mutual audit among peers" in item2


def test_no_detection_is_stated():
    s = scenario(audit={"third_party": False, "mutual": False})
    assert "none configured" in text_of_section(disclosure_report(s), 2)


def test_same_system_digest_caveat():
    s = scenario(audit={"third_party": True, "digest_placement": "same_system"}, threats={"software_bug": {"rate": 0.1}})
    assert "rewritten along with it" in disclosure_report(s)


def text_of_section(text, k):
    return text.split(f"## {k}. ")[1].split("\n## ")[0]
