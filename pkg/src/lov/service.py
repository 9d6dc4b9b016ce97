"""Read-only HTTP access to the published whitelist snapshot.

The server never opens the private store; it reads ``whitelist.json``, which
the pipeline replaces atomically, and reloads it when the file changes.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from lov.quarantine import export_whitelist_csv, parse_whitelist_json
from lov.rov import Prefix, RouteKey, parse_asn

log = logging.getLogger(__name__)


class StoreUnavailable(Exception):
    pass


class Snapshot:
    def __init__(self, generation, entries):
        self.generation = generation
        self.entries = {e.key: e for e in entries}
        self.ordered = [self.entries[k] for k in sorted(self.entries)]
        self.json_body = json.dumps(
            {
                "generation": generation.isoformat() if generation else None,
                "entries": [
                    {
                        "origin": e.origin,
                        "prefix": str(e.prefix),
                        "added": e.added.isoformat(),
                        "last_seen": e.last_seen.isoformat(),
                        "provenance": e.provenance.value,
                    }
                    for e in self.ordered
                ],
            },
            sort_keys=True,
        ).encode()
        self.csv_body = export_whitelist_csv(self.ordered, generation).encode()

    @property
    def generation_str(self) -> str:
        return self.generation.isoformat() if self.generation else ""


class SnapshotCache:
    """Holds the last complete snapshot; swaps it when the file's identity changes."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._stamp = None
        self._snap: Snapshot | None = None

    def get(self) -> Snapshot:
        try:
            st = os.stat(self.path)
        except FileNotFoundError:
            raise StoreUnavailable(f"{self.path} not published yet") from None
        stamp = (st.st_ino, st.st_mtime_ns, st.st_size)
        snap = self._snap
        if snap is not None and stamp == self._stamp:
            return snap
        with self._lock:
            if self._snap is not None and stamp == self._stamp:
                return self._snap
            try:
                text = self.path.read_text()
                generation, entries = parse_whitelist_json(text)
            except (OSError, ValueError, KeyError) as exc:
                if self._snap is not None:
                    return self._snap
                raise StoreUnavailable(str(exc)) from exc
            self._snap = Snapshot(generation, entries)
            self._stamp = stamp
            return self._snap


class Handler(BaseHTTPRequestHandler):
    server_version = "lov/0.1"
    cache: SnapshotCache  # set on the subclass built by make_server

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, code: int, body: bytes, ctype: str, generation: str | None = None):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        if generation is not None:
            self.send_header("X-Whitelist-Generation", generation)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _json(self, code: int, obj, generation: str | None = None):
        self._send(code, json.dumps(obj, sort_keys=True).encode(), "application/json", generation)

    def do_GET(self):
        url = urlsplit(self.path)
        route = url.path.rstrip("/") or "/"
        if route not in ("/health", "/whitelist", "/whitelist/check"):
            return self._json(404, {"error": f"no such endpoint {url.path}"})
        try:
            snap = self.cache.get()
        except StoreUnavailable as exc:
            return self._json(503, {"error": f"whitelist unavailable: {exc}"})
        gen = snap.generation_str
        if route == "/health":
            return self._json(200, {"status": "ok", "generation": gen, "entries": len(snap.entries)}, gen)
        if route == "/whitelist":
            if "text/csv" in self.headers.get("Accept", ""):
                return self._send(200, snap.csv_body, "text/csv; charset=utf-8", gen)
            return self._send(200, snap.json_body, "application/json", gen)
        query = parse_qs(url.query, keep_blank_values=True)
        try:
            key = parse_check_query(query)
        except ValueError as exc:
            return self._json(400, {"error": str(exc)}, gen)
        entry = snap.entries.get(key)
        return self._json(
            200,
            {
                "origin": key.origin,
                "prefix": str(key.prefix),
                "listed": entry is not None,
                "provenance": entry.provenance.value if entry else None,
                "generation": gen,
            },
            gen,
        )

    do_HEAD = do_GET

    def _not_allowed(self):
        self.send_response(405)
        self.send_header("Allow", "GET")
        self.send_header("Content-Length", "0")
        self.end_headers()

    do_POST = do_PUT = do_DELETE = do_PATCH = _not_allowed


def parse_check_query(query: dict) -> RouteKey:
    origin = query.get("origin")
    prefix = query.get("prefix")
    if not origin or not prefix:
        raise ValueError("origin and prefix are required")
    if len(origin) > 1 or len(prefix) > 1:
        raise ValueError("origin and prefix must be given once")
    try:
        asn = parse_asn(origin[0])
    except ValueError as exc:
        raise ValueError(f"bad origin: {exc}") from None
    try:
        pfx = Prefix.parse(prefix[0])
    except ValueError as exc:
        raise ValueError(f"bad prefix: {exc}") from None
    return RouteKey(asn, pfx)


def make_server(whitelist_path, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    cache = SnapshotCache(whitelist_path)
    handler = type("BoundHandler", (Handler,), {"cache": cache})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve(whitelist_path, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(whitelist_path, host, port)
    log.info("serving %s on http://%s:%d", whitelist_path, *server.server_address[:2])
    try:
        server.serve_forever()
    finally:
        server.server_close()
