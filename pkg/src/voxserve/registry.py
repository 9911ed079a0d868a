"""Announcement service: authenticated registration, TTL liveness, discovery.

The core state machine is separate from the HTTP wrapper so tests can drive
it with an injected clock.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable
from urllib.parse import urlsplit

from . import protocol
from .protocol import (
    AnnounceMessage,
    ProtocolError,
    ServiceRecord,
    decode_announce,
    encode_error,
    encode_records,
)

log = logging.getLogger(__name__)

DEFAULT_TTL_S = 1800


class UnknownKeyError(Exception):
    pass


def service_id_for(api_key: str, prediction_url: str) -> str:
    """Stable hex identifier; one-way, so it leaks nothing about the key."""
    digest = hashlib.sha256(
        api_key.encode("utf-8") + b"\x00" + prediction_url.encode("utf-8")
    )
    return digest.hexdigest()[:16]


def load_key_table(path: Path) -> dict[str, str]:
    """Key file: one `key<TAB>owner` per line; blank lines and # comments ok."""
    table: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, owner = line.partition("\t")
        if not key:
            raise ValueError("%s:%d: empty key" % (path, lineno))
        if key in table:
            raise ValueError("%s:%d: duplicate key" % (path, lineno))
        table[key] = owner.strip()
    return table


@dataclass
class RegistryState:
    """Announce/discover state machine; all mutation goes through a lock."""

    keys: dict[str, str]
    ttl_s: int = DEFAULT_TTL_S
    clock: Callable[[], float] = time.time
    records: dict[str, ServiceRecord] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    def announce(self, msg: AnnounceMessage) -> str:
        """Create or refresh the record for this key+url pair.

        Raises UnknownKeyError for keys absent from the key table; state is
        untouched in that case.
        """
        if msg.api_key not in self.keys:
            raise UnknownKeyError("api key not recognized")
        service_id = service_id_for(msg.api_key, msg.prediction_url)
        record = ServiceRecord(
            service_id=service_id,
            prediction_url=msg.prediction_url,
            name=msg.name,
            description=msg.description,
            modality=msg.modality,
            anatomy=msg.anatomy,
            task=msg.task,
            last_seen=self.clock(),
            ttl_s=self.ttl_s,
        )
        with self._lock:
            self.records[service_id] = record
        return service_id

    def discover(self) -> list[ServiceRecord]:
        """Live records only; read-only, never includes key material."""
        now = self.clock()
        with self._lock:
            return [r for r in self.records.values() if r.is_live(now)]

    # -- persistence --------------------------------------------------------

    def persist(self, path: Path):
        with self._lock:
            body = encode_records(list(self.records.values()), include_liveness=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(body)
        tmp.replace(path)

    def restore(self, path: Path):
        """Load a snapshot; corrupt or missing files leave the state empty."""
        try:
            records = protocol.decode_records(path.read_text())
        except FileNotFoundError:
            return
        except (ProtocolError, OSError, UnicodeDecodeError) as exc:
            log.warning("registry snapshot %s unusable, starting empty: %s", path, exc)
            return
        with self._lock:
            self.records = {r.service_id: r for r in records}


class RegistryServer:
    """HTTP wrapper: POST /announce, GET /discover."""

    def __init__(
        self,
        state: RegistryState,
        host: str = "127.0.0.1",
        port: int = 8001,
        state_file: Path | None = None,
    ):
        self.state = state
        self.state_file = state_file
        if state_file is not None:
            state.restore(state_file)
        self._stop = threading.Event()
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(self))
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None
        self.host = host

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return "http://%s:%d" % (self.host, self.port)

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        self._httpd.shutdown()
        self._httpd.server_close()
        if self.state_file is not None:
            self.state.persist(self.state_file)
        if self._thread:
            self._thread.join(timeout=5)

    def serve_forever(self):
        self.start()
        try:
            while not self._stop.wait(1.0):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def _checkpoint(self):
        if self.state_file is not None:
            try:
                self.state.persist(self.state_file)
            except OSError as exc:  # pragma: no cover
                log.warning("could not persist registry state: %s", exc)


def _make_handler(server: RegistryServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "voxserve-registry"

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.client_address[0], *args)

        def _send(self, status: int, body: bytes):
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_error(self, status: int, code: str, message: str):
            self._send(status, encode_error(code, message).encode("utf-8"))

        def do_GET(self):
            path = urlsplit(self.path).path
            if path == "/discover":
                body = encode_records(server.state.discover())
                self._send(200, body.encode("utf-8"))
            else:
                self._send_error(404, "not_found", "no such path: %s" % path)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_POST(self):
            path = urlsplit(self.path).path
            if path != "/announce":
                self._send_error(404, "not_found", "no such path: %s" % path)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                self._send_error(400, "invalid_request", "bad Content-Length")
                return
            body = self.rfile.read(length)
            try:
                msg = decode_announce(body)
            except ProtocolError as exc:
                self._send_error(400, "invalid_request", str(exc))
                return
            try:
                service_id = server.state.announce(msg)
            except UnknownKeyError:
                self._send_error(401, "unauthorized", "api key not recognized")
                return
            server._checkpoint()
            self._send(200, json.dumps({"service_id": service_id}).encode("utf-8"))

    return Handler
