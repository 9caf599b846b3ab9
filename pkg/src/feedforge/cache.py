"""TTL cache for rendered feeds: sqlite record store plus atomic file store.

Layout under cache_dir: `<first 2 hex of key>/<key>.<rss|atom>` with the
record database alongside as records.sqlite3. The key is the sha256 of a
canonical request fingerprint, so requests differing only in parameter
order collapse to one cache slot.

Expiry uses stale-while-revalidate: the first request past the TTL becomes
the regeneration leader; concurrent requests for the same key are served the
stale bytes immediately (or, on a cold miss, wait for the leader). Failures
are never cached, and a failed regeneration falls back to the stale copy
when one exists.
"""

from __future__ import annotations

import hashlib
import json
import os
import sqlite3
import tempfile
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Optional

DEFAULT_TTL = timedelta(hours=24)
DEFAULT_GRACE = timedelta(hours=1)
FLIGHT_WAIT_SECONDS = 60.0

FRESH = "fresh"
STALE = "stale"
MISS = "miss"


def fingerprint_for(endpoint_url: str, query_text: str, fmt: str) -> str:
    """Canonical serialization of what identifies a cached feed."""
    return json.dumps(
        {"endpoint": endpoint_url, "format": fmt, "query": query_text},
        sort_keys=True, separators=(",", ":"))


def key_for(fingerprint: str) -> str:
    return hashlib.sha256(fingerprint.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheRecord:
    key: str
    request_fingerprint: str
    created_at: datetime
    ttl: timedelta
    file_path: str  # relative to cache_dir


@dataclass(frozen=True)
class CacheLookup:
    status: str  # fresh | stale | miss
    data: Optional[bytes]
    record: Optional[CacheRecord]


class CacheError(Exception):
    pass


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class FeedCache:
    """Thread-safe; one instance per service process."""

    def __init__(self, cache_dir, ttl: timedelta = DEFAULT_TTL,
                 grace: timedelta = DEFAULT_GRACE):
        if ttl <= timedelta(0):
            raise ValueError(f"ttl must be positive, got {ttl}")
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.ttl = ttl
        self.grace = grace
        self._db = sqlite3.connect(str(self.cache_dir / "records.sqlite3"),
                                   check_same_thread=False)
        self._db_lock = threading.Lock()
        with self._db_lock:
            self._db.execute(
                "CREATE TABLE IF NOT EXISTS records ("
                " key TEXT PRIMARY KEY,"
                " fingerprint TEXT NOT NULL,"
                " created_at REAL NOT NULL,"
                " ttl_seconds REAL NOT NULL,"
                " file_path TEXT NOT NULL)")
            self._db.commit()
        self._flights: dict[str, threading.Event] = {}
        self._flight_lock = threading.Lock()

    def close(self):
        with self._db_lock:
            self._db.close()

    # record helpers

    def _fetch_record(self, key: str) -> Optional[CacheRecord]:
        with self._db_lock:
            row = self._db.execute(
                "SELECT key, fingerprint, created_at, ttl_seconds, file_path"
                " FROM records WHERE key = ?", (key,)).fetchone()
        if row is None:
            return None
        return CacheRecord(
            key=row[0],
            request_fingerprint=row[1],
            created_at=datetime.fromtimestamp(row[2], tz=timezone.utc),
            ttl=timedelta(seconds=row[3]),
            file_path=row[4],
        )

    def _delete_record(self, key: str):
        with self._db_lock:
            self._db.execute("DELETE FROM records WHERE key = ?", (key,))
            self._db.commit()

    # core operations

    def lookup(self, fingerprint: str,
               now: Optional[datetime] = None) -> CacheLookup:
        now = now or _utcnow()
        key = key_for(fingerprint)
        record = self._fetch_record(key)
        if record is None:
            return CacheLookup(MISS, None, None)
        try:
            data = (self.cache_dir / record.file_path).read_bytes()
        except OSError:
            # record without file: self-heal to a miss
            self._delete_record(key)
            return CacheLookup(MISS, None, None)
        age = now - record.created_at
        status = FRESH if age < record.ttl else STALE
        return CacheLookup(status, data, record)

    def store(self, fingerprint: str, data: bytes, fmt: str,
              now: Optional[datetime] = None,
              ttl: Optional[timedelta] = None) -> CacheRecord:
        if fmt not in ("rss", "atom"):
            raise ValueError(f"fmt must be rss or atom, got {fmt!r}")
        now = now or _utcnow()
        effective_ttl = self.ttl if ttl is None else ttl
        key = key_for(fingerprint)
        rel_path = f"{key[:2]}/{key}.{fmt}"
        target = self.cache_dir / rel_path
        target.parent.mkdir(parents=True, exist_ok=True)
        # write-then-rename so concurrent readers never see partial bytes
        fd, tmp_name = tempfile.mkstemp(dir=str(target.parent),
                                        prefix=f".{key[:8]}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp_name, target)
        except OSError:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
        record = CacheRecord(key, fingerprint, now, effective_ttl, rel_path)
        with self._db_lock:
            self._db.execute(
                "INSERT INTO records (key, fingerprint, created_at, ttl_seconds,"
                " file_path) VALUES (?, ?, ?, ?, ?)"
                " ON CONFLICT(key) DO UPDATE SET fingerprint = excluded.fingerprint,"
                " created_at = excluded.created_at,"
                " ttl_seconds = excluded.ttl_seconds,"
                " file_path = excluded.file_path",
                (key, fingerprint, now.timestamp(), effective_ttl.total_seconds(),
                 rel_path))
            self._db.commit()
        return record

    def purge_expired(self, now: Optional[datetime] = None) -> int:
        """Remove records (and files) expired beyond the grace window."""
        now = now or _utcnow()
        cutoff_count = 0
        with self._db_lock:
            rows = self._db.execute(
                "SELECT key, created_at, ttl_seconds, file_path FROM records"
            ).fetchall()
        for key, created_ts, ttl_seconds, file_path in rows:
            expired_at = datetime.fromtimestamp(created_ts, tz=timezone.utc) \
                + timedelta(seconds=ttl_seconds) + self.grace
            if now >= expired_at:
                try:
                    (self.cache_dir / file_path).unlink(missing_ok=True)
                except OSError:
                    continue  # leave the record; retried next run
                self._delete_record(key)
                cutoff_count += 1
        return cutoff_count

    def get_or_render(self, fingerprint: str, fmt: str,
                      render: Callable[[], bytes],
                      now_fn: Optional[Callable[[], datetime]] = None,
                      ttl: Optional[timedelta] = None) -> tuple[bytes, str]:
        """Serve from cache or regenerate with single-flight stampede control.

        Returns (bytes, cache status header value): HIT for bytes found
        fresh (including those another in-flight request just produced),
        MISS for bytes this call rendered, STALE for an expired copy served
        while regeneration runs elsewhere or after it failed.
        """
        now_fn = now_fn or _utcnow
        key = key_for(fingerprint)
        looked = self.lookup(fingerprint, now_fn())
        if looked.status == FRESH:
            return looked.data, "HIT"

        with self._flight_lock:
            event = self._flights.get(key)
            if event is None:
                self._flights[key] = threading.Event()
                leader = True
            else:
                leader = False

        if not leader:
            if looked.data is not None:
                return looked.data, "STALE"
            event.wait(FLIGHT_WAIT_SECONDS)
            after = self.lookup(fingerprint, now_fn())
            if after.status == FRESH:
                return after.data, "HIT"
            # leader failed (or timed out); surface this request's own attempt
            data = render()
            self.store(fingerprint, data, fmt, now=now_fn(), ttl=ttl)
            return data, "MISS"

        try:
            # another leader may have refreshed while this one queued
            recheck = self.lookup(fingerprint, now_fn())
            if recheck.status == FRESH:
                return recheck.data, "HIT"
            try:
                data = render()
            except Exception:
                if recheck.data is not None:
                    return recheck.data, "STALE"
                raise
            self.store(fingerprint, data, fmt, now=now_fn(), ttl=ttl)
            return data, "MISS"
        finally:
            with self._flight_lock:
                done = self._flights.pop(key, None)
            if done is not None:
                done.set()
