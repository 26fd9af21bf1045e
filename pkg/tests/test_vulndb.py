import json
from datetime import date
from itertools import product

import pytest

from coorddelay.vulndb import (
    AccessComplexity,
    AccessVector,
    Authentication,
    CveRecord,
    CvssV2,
    Impact,
    exploit_flags,
    impact_flags,
    is_rejected,
    load_records,
    parse_cvss,
    recode_impact,
    reference_count,
)


def _record(summary="", urls=(), cvss=None):
    return CveRecord(
        cve_id="CVE-2008-0001",
        published_at=date(2008, 1, 1),
        summary=summary,
        cvss=cvss,
        reference_urls=list(urls),
    )


# --- loading -------------------------------------------------------------

def test_load_json_fixture(data_dir):
    records = load_records(data_dir / "nvd_fixture.json")
    assert len(records) == 12
    record = records["CVE-2008-4688"]
    assert record.published_at == date(2008, 10, 22)
    assert record.cvss.access_vector is AccessVector.NETWORK
    assert record.cwes == ["CWE-264", "CWE-200"]
    assert reference_count(record) == 6
    assert records["CVE-2008-2000"].cvss.access_vector is AccessVector.ADJACENT


def test_load_record_without_cvss(data_dir):
    records = load_records(data_dir / "nvd_fixture.json")
    assert records["CVE-2008-3000"].cvss is None


def test_load_duplicate_keeps_first(tmp_path, caplog):
    item = {
        "cve": {
            "CVE_data_meta": {"ID": "CVE-2010-0001"},
            "description": {"description_data": [{"value": "first"}]},
        },
        "publishedDate": "2010-01-02T00:00Z",
    }
    second = json.loads(json.dumps(item))
    second["cve"]["description"]["description_data"][0]["value"] = "second"
    feed = tmp_path / "feed.json"
    feed.write_text(json.dumps({"CVE_Items": [item, second]}), encoding="utf-8")
    with caplog.at_level("WARNING"):
        records = load_records(feed)
    assert len(records) == 1
    assert records["CVE-2010-0001"].summary == "first"
    assert any("duplicate" in message for message in caplog.messages)


def test_load_skips_record_without_date(tmp_path):
    feed = tmp_path / "feed.json"
    feed.write_text(
        json.dumps(
            {
                "CVE_Items": [
                    {"cve": {"CVE_data_meta": {"ID": "CVE-2010-0002"}}},
                    {
                        "cve": {"CVE_data_meta": {"ID": "CVE-2010-0003"}},
                        "publishedDate": "2010-05-06T00:00Z",
                    },
                ]
            }
        ),
        encoding="utf-8",
    )
    records = load_records(feed)
    assert set(records) == {"CVE-2010-0003"}


def test_load_gzipped_json_feed(tmp_path, data_dir):
    import gzip as gz

    packed = tmp_path / "feed.json.gz"
    packed.write_bytes(gz.compress((data_dir / "nvd_fixture.json").read_bytes()))
    records = load_records(packed)
    assert len(records) == 12


def test_load_csv_feed(tmp_path):
    feed = tmp_path / "feed.csv"
    feed.write_text(
        "cve_id,published,summary,av,ac,au,c,i,a,cwes,references\n"
        "CVE-2011-1000,2011-06-01,desc,NETWORK,LOW,NONE,PARTIAL,NONE,NONE,CWE-79;CWE-89,http://a;http://b\n"
        "CVE-2011-1001,2011-07-01,no vector,,,,,,,,\n",
        encoding="utf-8",
    )
    records = load_records(feed)
    assert records["CVE-2011-1000"].cwes == ["CWE-79", "CWE-89"]
    assert reference_count(records["CVE-2011-1000"]) == 2
    assert records["CVE-2011-1001"].cvss is None


# --- rejection -----------------------------------------------------------

def test_rejected_banner():
    assert is_rejected(_record("** REJECT ** duplicate of CVE-2009-2222"))


def test_not_rejected():
    assert not is_rejected(_record("Buffer overflow in foopkg."))
    assert not is_rejected(_record(""))


def test_reject_is_case_sensitive():
    assert not is_rejected(_record("the maintainer chose to reject the patch"))


# --- CVSS recodes --------------------------------------------------------

def test_recode_levels():
    assert recode_impact(Impact.NONE) == 0
    assert recode_impact(Impact.PARTIAL) == 1
    assert recode_impact(Impact.COMPLETE) == 1


def test_recode_unknown_errors():
    with pytest.raises(ValueError):
        recode_impact("TOTAL")


def test_recode_meltdown_style_vector():
    cvss = parse_cvss("LOCAL", "LOW", "NONE", "COMPLETE", "NONE", "NONE")
    assert impact_flags(cvss) == (1, 0, 0)


def test_impact_recode_27_case_grid():
    expected = {Impact.NONE: 0, Impact.PARTIAL: 1, Impact.COMPLETE: 1}
    for c, i, a in product(Impact, Impact, Impact):
        cvss = CvssV2(
            AccessVector.LOCAL, AccessComplexity.LOW, Authentication.NONE, c, i, a
        )
        assert impact_flags(cvss) == (expected[c], expected[i], expected[a])


def test_exploit_flags_examples():
    assert exploit_flags(parse_cvss("NETWORK", "LOW", "NONE", "NONE", "NONE", "NONE")) == (1, 0, 0)
    assert exploit_flags(parse_cvss("LOCAL", "HIGH", "SINGLE", "NONE", "NONE", "NONE")) == (0, 1, 1)
    assert exploit_flags(parse_cvss("ADJACENT_NETWORK", "MEDIUM", "NONE", "NONE", "NONE", "NONE")) == (0, 1, 0)


def test_exploit_flags_exhaustive_grid():
    net = {AccessVector.LOCAL: 0, AccessVector.ADJACENT: 0, AccessVector.NETWORK: 1}
    cplx = {AccessComplexity.LOW: 0, AccessComplexity.MEDIUM: 1, AccessComplexity.HIGH: 1}
    auth = {Authentication.NONE: 0, Authentication.SINGLE: 1, Authentication.MULTIPLE: 1}
    for av, ac, au in product(AccessVector, AccessComplexity, Authentication):
        cvss = CvssV2(av, ac, au, Impact.NONE, Impact.NONE, Impact.NONE)
        assert exploit_flags(cvss) == (net[av], cplx[ac], auth[au])


# --- reference counting --------------------------------------------------

def test_reference_counts():
    assert reference_count(_record(urls=[f"u{i}" for i in range(6)])) == 6
    assert reference_count(_record()) == 0
    assert reference_count(_record(urls=["http://x", "http://x"])) == 2
