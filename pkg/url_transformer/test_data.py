import logging
from collections import Counter

import numpy as np
import pytest

from url_transformer.config import DataSection
from url_transformer.conftest import benign_urls, labelled, malicious_urls
from url_transformer.data import (
    BENIGN,
    MALICIOUS,
    LabeledUrl,
    balance_and_sample,
    dedup,
    fisher_yates,
    load_benign_list,
    load_malicious_csv,
    prepare_dataset,
    read_dataset_tsv,
    sample_holdout,
    split,
    write_dataset_tsv,
)
from url_transformer.errors import DataError, FormatError, ParameterError
from url_transformer.tensor import make_rng


def test_labeled_url_validation():
    with pytest.raises(DataError):
        LabeledUrl("", BENIGN)
    with pytest.raises(DataError):
        LabeledUrl("http://x", 2)


def test_load_malicious_csv(tmp_path):
    path = tmp_path / "feed.csv"
    path.write_text(
        'phish_id,url,verified\n'
        '1,http://a.example/login,yes\n'
        '2,"http://b.example/x?a=1,2",yes\n'
        '3,http://c.example/,yes\n',
        encoding="utf-8",
    )
    records = load_malicious_csv(path)
    assert [r.label for r in records] == [MALICIOUS] * 3
    assert records[1].url == "http://b.example/x?a=1,2"
    assert records[0].source == "phishtank"


def test_load_malicious_csv_header_only_and_empty_urls(tmp_path, caplog):
    path = tmp_path / "feed.csv"
    path.write_text("phish_id,url\n", encoding="utf-8")
    assert load_malicious_csv(path) == []

    path.write_text("phish_id,url\n1,\n2,http://ok.example/\n", encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        records = load_malicious_csv(path)
    assert [r.url for r in records] == ["http://ok.example/"]
    assert "Skipped 1 row" in caplog.text


def test_load_malicious_csv_errors(tmp_path):
    no_url = tmp_path / "no_url.csv"
    no_url.write_text("phish_id,target\n1,x\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_malicious_csv(no_url)
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(FormatError):
        load_malicious_csv(empty)
    with pytest.raises(OSError):
        load_malicious_csv(tmp_path / "missing.csv")


def test_load_benign_list(tmp_path):
    path = tmp_path / "benign.txt"
    path.write_bytes(b"a.example\r\n\r\n  b.example/x  \n\nc.example\nd.example\ne.example\n")
    records = load_benign_list(path)
    assert [r.url for r in records] == ["a.example", "b.example/x", "c.example", "d.example", "e.example"]
    assert {r.label for r in records} == {BENIGN}
    with pytest.raises(OSError):
        load_benign_list(tmp_path / "missing.txt")


def test_fisher_yates_matches_reference_draws():
    items = list(range(10))
    rng = make_rng(99)
    expected = list(items)
    for i in range(len(expected) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        expected[i], expected[j] = expected[j], expected[i]
    assert fisher_yates(items, make_rng(99)) == expected
    assert items == list(range(10))


def test_balance_and_sample_full_pools():
    benign = [LabeledUrl(f"b{i}", BENIGN) for i in range(10000)]
    malicious = [LabeledUrl(f"m{i}", MALICIOUS) for i in range(10000)]
    picked = balance_and_sample(benign, malicious, 10000, seed=1)
    assert sorted(r.url for r in picked) == sorted(r.url for r in benign + malicious)
    assert picked != benign + malicious
    assert picked == balance_and_sample(benign, malicious, 10000, seed=1)


def test_balance_and_sample_counts_and_errors():
    records = labelled(30)
    benign = [r for r in records if r.label == BENIGN]
    malicious = [r for r in records if r.label == MALICIOUS]
    assert balance_and_sample(benign, malicious, 0, seed=3) == []
    picked = balance_and_sample(benign, malicious, 12, seed=3)
    assert Counter(r.label for r in picked) == {BENIGN: 12, MALICIOUS: 12}
    with pytest.raises(DataError) as excinfo:
        balance_and_sample(benign, malicious[:5], 12, seed=3)
    assert "short by 7" in str(excinfo.value)


def test_split_sizes_and_partition():
    records = [LabeledUrl(f"u{i}", i % 2) for i in range(20000)]
    result = split(records, 0.8, seed=4)
    assert (len(result.train), len(result.test)) == (16000, 4000)
    small = split(records[:10], 0.8, seed=4)
    assert (len(small.train), len(small.test)) == (8, 2)
    assert Counter(small.train + small.test) == Counter(records[:10])


def test_split_partition_property():
    rng = np.random.default_rng(5)
    for case in range(1000):
        n = int(rng.integers(1, 40))
        fraction = float(rng.uniform(0.05, 0.95))
        records = [LabeledUrl(f"u{case}-{i}", i % 2) for i in range(n)]
        result = split(records, fraction, seed=case)
        assert len(result.train) == int(np.floor(n * fraction))
        assert Counter(result.train + result.test) == Counter(records)
        assert not set(result.train) & set(result.test)


def test_split_rejects_bad_fraction():
    for fraction in (0.0, 1.0, 1.2):
        with pytest.raises(ParameterError):
            split(labelled(2), fraction)


def test_dedup_keeps_first_occurrence():
    records = [LabeledUrl("a", 0, "x"), LabeledUrl("b", 1), LabeledUrl("a", 1, "y")]
    assert dedup(records) == [LabeledUrl("a", 0, "x"), LabeledUrl("b", 1)]


def test_sample_holdout_excludes_used_urls():
    records = labelled(20)
    benign = [r for r in records if r.label == BENIGN]
    malicious = [r for r in records if r.label == MALICIOUS]
    used = balance_and_sample(benign, malicious, 10, seed=2)
    holdout = sample_holdout(benign, malicious, used, 10, seed=2)
    assert len(holdout) == 20
    assert not {r.url for r in holdout} & {r.url for r in used}


def test_dataset_tsv_round_trip(tmp_path):
    records = [LabeledUrl("http://a.example/ü?x=1", 1, "s"), LabeledUrl("b.example", 0, "s")]
    path = tmp_path / "data.tsv"
    write_dataset_tsv(records, path)
    assert path.read_bytes() == "1\thttp://a.example/ü?x=1\n0\tb.example\n".encode("utf-8")
    assert read_dataset_tsv(path, source="s") == records
    with pytest.raises(DataError):
        write_dataset_tsv([LabeledUrl("bad\turl", 0)], tmp_path / "bad.tsv")


def test_read_dataset_tsv_rejects_bad_rows(tmp_path):
    path = tmp_path / "data.tsv"
    path.write_text("1\tok.example\n2\tbad.example\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_dataset_tsv(path)


@pytest.mark.parametrize("reader,content", [
    (read_dataset_tsv, b"0\tok.example\n1\thttp://\xff\xfe.example/\n"),
    (load_benign_list, b"ok.example\nhttp://\xff\xfe.example/\n"),
    (load_malicious_csv, b"phish_id,url\n1,http://\xff\xfe.example/\n"),
])
def test_invalid_utf8_is_a_data_error_naming_the_line(tmp_path, reader, content):
    path = tmp_path / "feed"
    path.write_bytes(content)
    with pytest.raises(DataError) as excinfo:
        reader(path)
    assert f"{path}:2:" in str(excinfo.value)


def test_prepare_dataset_from_feeds(feed_files):
    csv_path, list_path = feed_files
    section = DataSection(malicious_csv=str(csv_path), benign_list=str(list_path), per_class=20,
                          holdout_per_class=5)
    result = prepare_dataset(section, seed=7)
    assert (len(result.train), len(result.test), len(result.holdout)) == (32, 8, 10)
    assert Counter(r.label for r in result.train + result.test) == {BENIGN: 20, MALICIOUS: 20}
    assert not {r.url for r in result.holdout} & {r.url for r in result.train + result.test}
    again = prepare_dataset(section, seed=7)
    assert again.train == result.train and again.holdout == result.holdout


def test_prepare_dataset_from_cache(tmp_path):
    path = tmp_path / "cached.tsv"
    write_dataset_tsv(labelled(5), path)
    result = prepare_dataset(DataSection(dataset_tsv=str(path)), seed=1)
    assert (len(result.train), len(result.test)) == (8, 2)
    assert {r.url for r in result.train + result.test} == set(benign_urls(5) + malicious_urls(5))
