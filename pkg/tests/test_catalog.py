from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autolib.catalog import (
    BadLength,
    BookRecord,
    BookState,
    Catalog,
    ChecksumMismatch,
    DuplicateBarcodeOnInsertOnly,
    KEY_SEPARATOR,
    NonDigit,
    SeqGap,
    ShelfAddress,
    SortPolicy,
    TransactionEntry,
    TransactionLog,
    checksum_digit,
    normalize,
    replay,
    sort_key,
    validate_barcode,
)

from conftest import make_barcode, make_record


class TestBarcode:
    def test_known_valid(self):
        # Weighted checksum worked by hand: odd positions 4+0+3+1+3+9 = 20,
        # even positions (0+6+8+3+3+3)*3 = 69, total 89 -> check digit 1.
        assert validate_barcode("4006381333931") == "4006381333931"

    def test_perturbed_check_digit(self):
        with pytest.raises(ChecksumMismatch):
            validate_barcode("4006381333932")

    def test_empty_is_bad_length(self):
        with pytest.raises(BadLength):
            validate_barcode("")

    def test_length_checked_before_digits(self):
        with pytest.raises(BadLength):
            validate_barcode("abc")

    def test_non_digit(self):
        with pytest.raises(NonDigit):
            validate_barcode("40063813339a1")

    def test_unicode_digits_rejected(self):
        with pytest.raises(NonDigit):
            validate_barcode("400638133393١")

    @given(st.integers(min_value=0, max_value=10**12 - 1))
    def test_exactly_one_check_digit_validates(self, n):
        prefix = f"{n:012d}"
        valid = [d for d in "0123456789" if _is_valid(prefix + d)]
        assert valid == [str(checksum_digit(prefix))]


def _is_valid(raw: str) -> bool:
    try:
        validate_barcode(raw)
        return True
    except Exception:
        return False


class TestNormalize:
    def test_case_folds_and_collapses(self):
        assert normalize("  The   QUICK\tFox\n") == "the quick fox"

    @given(st.text(max_size=60))
    def test_idempotent(self, text):
        once = normalize(text)
        assert normalize(once) == once

    @given(st.text(max_size=60))
    def test_output_never_sorts_below_separator(self, text):
        assert all(ch > KEY_SEPARATOR for ch in normalize(text))


class TestSortKey:
    def test_composite_key(self):
        record = BookRecord(
            barcode=make_barcode(1),
            title="Foundation",
            author="Asimov, Isaac",
            genre="SciFi",
            width_mm=30,
        )
        policy = SortPolicy(fields=("genre", "author", "title"))
        assert sort_key(record, policy) == "scifi\x1fasimov, isaac\x1ffoundation"

    def test_case_insensitive(self):
        a = make_record(1, author="ASIMOV")
        b = make_record(1, author="asimov")
        policy = SortPolicy()
        assert sort_key(a, policy) == sort_key(b, policy)

    def test_strip_leading_articles(self):
        record = make_record(1, title="The Robots")
        policy = SortPolicy(fields=("title",), strip_leading_articles=True)
        assert sort_key(record, policy) == "robots"

    def test_article_only_title_kept(self):
        record = make_record(1, title="The")
        policy = SortPolicy(fields=("title",), strip_leading_articles=True)
        assert sort_key(record, policy) == "the"

    def test_policy_validation(self):
        with pytest.raises(Exception):
            SortPolicy(fields=())
        with pytest.raises(Exception):
            SortPolicy(fields=("title", "title"))

    @given(st.lists(st.tuples(st.text(max_size=12), st.text(max_size=12)), max_size=12))
    @settings(max_examples=50)
    def test_total_order_permutation_stable(self, rows):
        policy = SortPolicy(fields=("author", "title"))
        records = [
            make_record(i, author=a, title=t) for i, (a, t) in enumerate(rows)
        ]
        keyed = sorted((sort_key(r, policy), r.barcode) for r in records)
        for perm_seed in (1, 2):
            import random

            shuffled = records[:]
            random.Random(perm_seed).shuffle(shuffled)
            assert sorted((sort_key(r, policy), r.barcode) for r in shuffled) == keyed


class TestCatalog:
    def test_upsert_is_idempotent(self):
        catalog = Catalog()
        record = make_record(7)
        catalog.upsert(record)
        catalog.upsert(record)
        assert len(catalog) == 1

    def test_insert_only_rejects_duplicates(self):
        catalog = Catalog()
        catalog.upsert(make_record(7))
        with pytest.raises(DuplicateBarcodeOnInsertOnly):
            catalog.upsert(make_record(7), insert_only=True)

    def test_query_substring_under_normalization(self):
        catalog = Catalog()
        catalog.upsert(make_record(1, title="Foundation"))
        catalog.upsert(make_record(2, title="Dune"))
        hits = catalog.query(title="found")
        assert [r.title for r in hits] == ["Foundation"]

    def test_query_empty_catalog(self):
        assert Catalog().query(title="x") == []

    def test_query_sorted_by_key(self):
        catalog = Catalog(SortPolicy(fields=("title",)))
        catalog.upsert(make_record(1, title="zebra"))
        catalog.upsert(make_record(2, title="apple"))
        catalog.upsert(make_record(3, title="mango"))
        assert [r.title for r in catalog.query()] == ["apple", "mango", "zebra"]

    def test_roundtrip_jsonl(self, tmp_path):
        catalog = Catalog()
        catalog.upsert(make_record(1, state=BookState.shelved(ShelfAddress(1, 0, 2))))
        catalog.upsert(make_record(2))
        path = tmp_path / "catalog.jsonl"
        catalog.save(path)
        loaded = Catalog.load(path)
        assert loaded.states() == catalog.states()
        assert len(loaded) == 2


class TestTransactionLog:
    def test_replay_empty(self):
        assert replay([]) == {}

    def test_seq_gap(self):
        log = TransactionLog()
        log.record(0, "ReturnAccepted", make_barcode(1), task_id=1)
        with pytest.raises(SeqGap):
            log.append(
                TransactionEntry(
                    seq=5, time_ms=1, kind="Shelved", barcode=make_barcode(1),
                    address=ShelfAddress(1, 0, 0),
                )
            )

    def test_time_monotonic(self):
        log = TransactionLog()
        log.record(100, "ReturnAccepted", make_barcode(1), task_id=1)
        with pytest.raises(Exception):
            log.record(50, "ReturnAccepted", make_barcode(2), task_id=2)

    def test_replay_full_return(self):
        # Hand-built log of one completed return: accepted, then shelved.
        barcode = make_barcode(9)
        addr = ShelfAddress(1, 0, 0)
        log = TransactionLog()
        log.record(10, "ReturnAccepted", barcode, task_id=1)
        log.record(9866, "Shelved", barcode, address=addr, task_id=1)
        assert replay(log.entries()) == {barcode: BookState.shelved(addr)}

    def test_replay_return_then_retrieve(self):
        barcode = make_barcode(9)
        addr = ShelfAddress(1, 0, 0)
        log = TransactionLog()
        log.record(10, "ReturnAccepted", barcode, task_id=1)
        log.record(9866, "Shelved", barcode, address=addr, task_id=1)
        log.record(20010, "RetrievalRequested", barcode, task_id=2, kiosk_id="kiosk1")
        log.record(27666, "Picked", barcode, task_id=2, arm_id=1, address=addr)
        log.record(42688, "Delivered", barcode, task_id=2, kiosk_id="kiosk1")
        assert replay(log.entries()) == {barcode: BookState.at_kiosk("kiosk1")}

    def test_roundtrip_file(self, tmp_path):
        log = TransactionLog()
        log.record(10, "ReturnAccepted", make_barcode(1), task_id=1)
        log.record(20, "TaskFailed", make_barcode(1), task_id=1, reason="GripFailure")
        path = tmp_path / "log.jsonl"
        log.save(path)
        loaded = TransactionLog.load(path)
        assert loaded.entries() == log.entries()

    @given(st.lists(st.integers(min_value=0, max_value=3), min_size=1, max_size=30))
    @settings(max_examples=60)
    def test_event_sourcing_random_sequences(self, ops):
        """Live state tracked by hand equals replay of the log."""
        log = TransactionLog()
        live: dict[str, BookState] = {}
        t = 0
        task = 0
        for i, op in enumerate(ops):
            barcode = make_barcode(i % 4)
            t += 10
            task += 1
            if op == 0:
                log.record(t, "ReturnAccepted", barcode, task_id=task)
                live[barcode] = BookState.queued(task)
            elif op == 1:
                addr = ShelfAddress(1, 0, i % 12)
                log.record(t, "Shelved", barcode, address=addr, task_id=task)
                live[barcode] = BookState.shelved(addr)
            elif op == 2:
                log.record(t, "Delivered", barcode, task_id=task, kiosk_id="kiosk1")
                live[barcode] = BookState.at_kiosk("kiosk1")
            else:
                log.record(t, "TaskFailed", barcode, task_id=task, reason="GripFailure")
                live[barcode] = BookState.manual_handling()
        assert replay(log.entries()) == live
