"""Overpass API client used to backfill tags of ways missing from the extract."""

from __future__ import annotations

import json
import logging
import os
import socket
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from typing import Iterable

from .errors import ParseError, RemoteUnavailable
from .network import WayTags

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://overpass-api.de/api/interpreter"
ENDPOINT_ENV = "CYCLETRAIL_OVERPASS_URL"


def build_way_query(way_ids: Iterable[int]) -> str:
    ids = ",".join(str(int(w)) for w in way_ids)
    return f"[out:json];\nway(id:{ids});\nout meta;"


def parse_way_tags(doc: dict) -> dict[int, WayTags]:
    try:
        return {
            int(el["id"]): WayTags.from_osm(el.get("tags", {}))
            for el in doc["elements"]
            if el.get("type") == "way"
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"unexpected Overpass response: {exc!r}") from exc


class OverpassClient:
    """POSTs way-by-id queries; rate limited and retried with backoff."""

    def __init__(self, endpoint: str | None = None, timeout: float = 60.0, max_retries: int = 3,
                 requests_per_minute: float = 30.0, backoff_s: float = 1.0):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT
        self.timeout = timeout
        self.max_retries = max_retries
        self.min_interval = 60.0 / requests_per_minute if requests_per_minute > 0 else 0.0
        self.backoff_s = backoff_s
        self._lock = threading.Lock()
        self._last = 0.0
        self._cache: dict[int, WayTags | None] = {}

    def _throttle(self):
        wait = self._last + self.min_interval - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        self._last = time.monotonic()

    def _post(self, query: str) -> dict:
        data = urllib.parse.urlencode({"data": query}).encode()
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            self._throttle()
            try:
                req = urllib.request.Request(self.endpoint, data=data, method="POST")
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    body = resp.read()
                return json.loads(body)
            except ValueError as exc:
                raise ParseError(f"Overpass returned non-JSON body: {exc}") from exc
            except urllib.error.HTTPError as exc:
                # 429/504 mean "busy"; anything else will not improve on retry
                if exc.code not in (429, 502, 503, 504):
                    raise RemoteUnavailable(f"Overpass HTTP {exc.code}") from exc
                last_exc = exc
            except (urllib.error.URLError, socket.timeout, ConnectionError, OSError) as exc:
                last_exc = exc
            if attempt < self.max_retries:
                time.sleep(self.backoff_s * 2 ** attempt)
        raise RemoteUnavailable(f"Overpass at {self.endpoint} failed: {last_exc}")

    def fetch_way_tags(self, way_ids: Iterable[int]) -> dict[int, WayTags]:
        """Tags per requested way id; ids unknown to Overpass are absent."""
        ids = [int(w) for w in way_ids]
        with self._lock:
            wanted = [w for w in dict.fromkeys(ids) if w not in self._cache]
            if wanted:
                found = parse_way_tags(self._post(build_way_query(wanted)))
                for w in wanted:
                    self._cache[w] = found.get(w)
            return {w: t for w in ids if (t := self._cache.get(w)) is not None}
