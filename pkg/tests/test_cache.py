"""Feed cache: TTL semantics, atomic files, stampede control."""

import threading
import time
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from feedforge.cache import (FRESH, MISS, STALE, FeedCache, fingerprint_for,
                             key_for)

T0 = datetime(2026, 8, 15, 12, 0, 0, tzinfo=timezone.utc)
FP = fingerprint_for("http://ep/sparql", "SELECT ?entity ...", "rss")


@pytest.fixture()
def cache(tmp_path):
    c = FeedCache(tmp_path, ttl=timedelta(hours=1))
    yield c
    c.close()


class TestFingerprint:
    def test_deterministic(self):
        assert fingerprint_for("http://e", "Q", "rss") == \
            fingerprint_for("http://e", "Q", "rss")

    def test_distinguishes_each_component(self):
        base = fingerprint_for("http://e", "Q", "rss")
        assert fingerprint_for("http://other", "Q", "rss") != base
        assert fingerprint_for("http://e", "Q2", "rss") != base
        assert fingerprint_for("http://e", "Q", "atom") != base

    def test_key_is_64_hex(self):
        key = key_for(FP)
        assert len(key) == 64
        assert set(key) <= set("0123456789abcdef")


class TestLookupStore:
    def test_cold_cache_misses(self, cache):
        assert cache.lookup(FP, T0).status == MISS

    def test_fresh_within_ttl(self, cache):
        cache.store(FP, b"<rss/>", "rss", now=T0)
        look = cache.lookup(FP, T0 + timedelta(minutes=59, seconds=59))
        assert look.status == FRESH
        assert look.data == b"<rss/>"

    def test_stale_at_exact_ttl(self, cache):
        cache.store(FP, b"x", "rss", now=T0)
        assert cache.lookup(FP, T0 + timedelta(hours=1)).status == STALE

    def test_zero_ttl_immediately_stale(self, cache):
        cache.store(FP, b"x", "rss", now=T0, ttl=timedelta(0))
        assert cache.lookup(FP, T0).status == STALE

    def test_restore_replaces_bytes(self, cache):
        cache.store(FP, b"first", "rss", now=T0)
        cache.store(FP, b"second", "rss", now=T0)
        assert cache.lookup(FP, T0).data == b"second"

    def test_file_layout(self, cache, tmp_path):
        cache.store(FP, b"x", "rss", now=T0)
        key = key_for(FP)
        assert (tmp_path / key[:2] / f"{key}.rss").read_bytes() == b"x"

    def test_unreadable_file_self_heals_to_miss(self, cache, tmp_path):
        cache.store(FP, b"x", "rss", now=T0)
        key = key_for(FP)
        (tmp_path / key[:2] / f"{key}.rss").unlink()
        assert cache.lookup(FP, T0).status == MISS
        # record purged: storing again recreates both halves
        cache.store(FP, b"y", "rss", now=T0)
        assert cache.lookup(FP, T0).data == b"y"

    def test_records_survive_reopen(self, cache, tmp_path):
        cache.store(FP, b"persisted", "rss", now=T0)
        second = FeedCache(tmp_path, ttl=timedelta(hours=1))
        try:
            assert second.lookup(FP, T0).data == b"persisted"
        finally:
            second.close()

    def test_rejects_unknown_format(self, cache):
        with pytest.raises(ValueError):
            cache.store(FP, b"x", "pdf", now=T0)

    def test_rejects_non_positive_ttl(self, tmp_path):
        with pytest.raises(ValueError):
            FeedCache(tmp_path / "c", ttl=timedelta(0))


class TestPurge:
    def test_empty_cache(self, cache):
        assert cache.purge_expired(T0) == 0

    def test_grace_window_respected(self, cache):
        cache.store(FP, b"x", "rss", now=T0)
        # ttl 1h + grace 1h: still protected at 1h59m
        assert cache.purge_expired(T0 + timedelta(hours=1, minutes=59)) == 0
        assert cache.purge_expired(T0 + timedelta(hours=2)) == 1
        assert cache.lookup(FP, T0).status == MISS

    def test_only_expired_subset_removed(self, cache):
        old = fingerprint_for("http://e", "OLD", "rss")
        fresh = fingerprint_for("http://e", "FRESH", "rss")
        cache.store(old, b"o", "rss", now=T0 - timedelta(days=2))
        cache.store(fresh, b"f", "rss", now=T0)
        assert cache.purge_expired(T0) == 1
        assert cache.lookup(old, T0).status == MISS
        assert cache.lookup(fresh, T0).status == FRESH

    def test_purged_files_deleted(self, cache, tmp_path):
        cache.store(FP, b"x", "rss", now=T0 - timedelta(days=2))
        cache.purge_expired(T0)
        key = key_for(FP)
        assert not (tmp_path / key[:2] / f"{key}.rss").exists()


class TestConcurrency:
    def test_concurrent_stores_leave_one_intact_file(self, cache):
        payloads = [bytes([65 + i]) * 4096 for i in range(8)]

        def writer(data):
            for _ in range(20):
                cache.store(FP, data, "rss", now=T0)

        threads = [threading.Thread(target=writer, args=(p,)) for p in payloads]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        final = cache.lookup(FP, T0).data
        assert final in payloads  # no interleaved/partial content

    def test_readers_never_observe_partial_bytes(self, cache):
        payloads = [bytes([48 + i]) * 8192 for i in range(4)]
        cache.store(FP, payloads[0], "rss", now=T0)
        stop = threading.Event()
        bad = []

        def reader():
            while not stop.is_set():
                data = cache.lookup(FP, T0).data
                if data is not None and data not in payloads:
                    bad.append(data[:32])

        readers = [threading.Thread(target=reader) for _ in range(4)]
        for t in readers:
            t.start()
        for _ in range(25):
            for p in payloads:
                cache.store(FP, p, "rss", now=T0)
        stop.set()
        for t in readers:
            t.join()
        assert bad == []


class TestGetOrRender:
    def test_miss_renders_and_stores(self, cache):
        data, status = cache.get_or_render(FP, "rss", lambda: b"fresh",
                                           now_fn=lambda: T0)
        assert (data, status) == (b"fresh", "MISS")
        assert cache.lookup(FP, T0).status == FRESH

    def test_fresh_hit_skips_render(self, cache):
        cache.store(FP, b"cached", "rss", now=T0)

        def fail():
            raise AssertionError("render must not run on a hit")

        data, status = cache.get_or_render(FP, "rss", fail, now_fn=lambda: T0)
        assert (data, status) == (b"cached", "HIT")

    def test_sixteen_concurrent_expired_requests_one_regeneration(self, cache):
        cache.store(FP, b"old", "rss", now=T0 - timedelta(hours=2))
        render_calls = []
        call_lock = threading.Lock()

        def render():
            with call_lock:
                render_calls.append(1)
            time.sleep(0.05)  # hold the flight open so others pile up
            return b"new"

        results = [None] * 16

        def worker(i):
            results[i] = cache.get_or_render(FP, "rss", render,
                                             now_fn=lambda: T0)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(render_calls) == 1
        assert all(data in (b"old", b"new") for data, _ in results)
        statuses = {status for _, status in results}
        assert "MISS" in statuses  # the leader
        assert statuses <= {"MISS", "STALE"}

    def test_cold_concurrent_followers_wait_for_leader(self, cache):
        render_calls = []
        call_lock = threading.Lock()

        def render():
            with call_lock:
                render_calls.append(1)
            time.sleep(0.05)
            return b"built"

        results = [None] * 8

        def worker(i):
            results[i] = cache.get_or_render(FP, "rss", render,
                                             now_fn=lambda: T0)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(render_calls) == 1
        assert all(data == b"built" for data, _ in results)

    def test_failure_with_stale_serves_stale(self, cache):
        cache.store(FP, b"previous", "rss", now=T0 - timedelta(hours=2))

        def boom():
            raise RuntimeError("endpoint down")

        data, status = cache.get_or_render(FP, "rss", boom, now_fn=lambda: T0)
        assert (data, status) == (b"previous", "STALE")

    def test_cold_failure_propagates_and_caches_nothing(self, cache):
        def boom():
            raise RuntimeError("endpoint down")

        with pytest.raises(RuntimeError):
            cache.get_or_render(FP, "rss", boom, now_fn=lambda: T0)
        assert cache.lookup(FP, T0).status == MISS

    def test_recovers_after_failed_flight(self, cache):
        def boom():
            raise RuntimeError("down")

        with pytest.raises(RuntimeError):
            cache.get_or_render(FP, "rss", boom, now_fn=lambda: T0)
        data, status = cache.get_or_render(FP, "rss", lambda: b"ok",
                                           now_fn=lambda: T0)
        assert (data, status) == (b"ok", "MISS")
