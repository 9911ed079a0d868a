"""The prediction endpoint: HTTP 1.1 interface over one pipeline.

Requests are admitted, parsed and validated concurrently (one thread per
connection), but pipeline execution is serialized behind an exclusive lock
with FIFO wait order, so at most one inference runs at any instant.

Routes: GET /interface, POST /predict (multipart/form-data), GET /status,
and optionally static files under /console.
"""

from __future__ import annotations

import logging
import mimetypes
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from email.parser import BytesParser
from email.policy import default as default_email_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import urlsplit

import requests

from . import protocol
from .pipeline import Pipeline, PipelineError
from .protocol import (
    AnnounceMessage,
    PredictionRequest,
    PredictionResponse,
    encode_error,
    encode_interface,
    encode_response,
)
from .volume import MhaDecodeError, decode_mha

log = logging.getLogger(__name__)

DEFAULT_MAX_REQUEST_BYTES = 256 * 1024 * 1024
DEFAULT_ANNOUNCE_PERIOD_S = 600


class FifoLock:
    """Mutual exclusion with first-come-first-served wakeup order."""

    def __init__(self):
        self._cond = threading.Condition()
        self._queue: deque[int] = deque()
        self._counter = 0
        self._holder: int | None = None

    def acquire(self):
        with self._cond:
            self._counter += 1
            ticket = self._counter
            self._queue.append(ticket)
            while not (self._holder is None and self._queue[0] == ticket):
                self._cond.wait()
            self._queue.popleft()
            self._holder = ticket

    def release(self):
        with self._cond:
            self._holder = None
            self._cond.notify_all()

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()

    @property
    def busy(self) -> bool:
        with self._cond:
            return self._holder is not None

    @property
    def queue_depth(self) -> int:
        with self._cond:
            return len(self._queue)


@dataclass
class AnnounceConfig:
    registry_url: str
    api_key: str
    period_s: float = DEFAULT_ANNOUNCE_PERIOD_S
    name: str = ""
    description: str = ""
    modality: str = ""
    anatomy: str = ""
    task: str = ""


@dataclass
class EndpointConfig:
    pipeline: Pipeline
    host: str = "127.0.0.1"
    port: int = 8000
    max_request_bytes: int = DEFAULT_MAX_REQUEST_BYTES
    request_timeout_s: int = 300
    announce: AnnounceConfig | None = None
    console_dir: Path | None = None
    # URL advertised to the registry; defaults to http://host:port/predict
    public_url: str | None = None


class PredictionServer:
    """Owns the HTTP server thread, the compute lock and the announce loop."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        self.lock = FifoLock()
        self.served_total = 0
        self._counter_lock = threading.Lock()
        # the interface body is frozen at startup: stable across the process life
        self.interface_body = encode_interface(config.pipeline.interface).encode("utf-8")
        self._stop = threading.Event()
        self._httpd = ThreadingHTTPServer(
            (config.host, config.port), _make_handler(self)
        )
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None
        self._announce_thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return "http://%s:%d" % (self.config.host, self.port)

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        if self.config.announce is not None:
            self._announce_thread = threading.Thread(
                target=self._announce_loop, daemon=True
            )
            self._announce_thread.start()

    def stop(self):
        self._stop.set()
        self._httpd.shutdown()
        self._httpd.server_close()
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

    def count_served(self):
        with self._counter_lock:
            self.served_total += 1

    def status(self) -> dict:
        return {
            "state": "busy" if self.lock.busy else "idle",
            "queue_depth": self.lock.queue_depth,
            "served_total": self.served_total,
        }

    # -- announcement -------------------------------------------------------

    def announce_message(self) -> AnnounceMessage:
        cfg = self.config.announce
        url = self.config.public_url or (self.url + "/predict")
        return AnnounceMessage(
            api_key=cfg.api_key,
            prediction_url=url,
            name=cfg.name or self.config.pipeline.interface.service_name,
            description=cfg.description,
            modality=cfg.modality,
            anatomy=cfg.anatomy,
            task=cfg.task,
        )

    def announce_once(self) -> bool:
        cfg = self.config.announce
        msg = self.announce_message()
        try:
            resp = requests.post(
                cfg.registry_url.rstrip("/") + "/announce",
                data=protocol.encode_announce(msg).encode("utf-8"),
                headers={"Content-Type": "application/json"},
                timeout=10,
            )
        except requests.RequestException as exc:
            log.warning("announce failed: %s", exc)
            return False
        if resp.status_code != 200:
            log.warning("announce rejected: HTTP %d %s", resp.status_code, resp.text)
            return False
        return True

    def _announce_loop(self):
        period = self.config.announce.period_s
        while not self._stop.is_set():
            self.announce_once()
            if self._stop.wait(period):
                break


# ---------------------------------------------------------------------------
# Request handling

def _make_handler(server: PredictionServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "voxserve"

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.client_address[0], *args)

        def _send(self, status: int, body: bytes, content_type="application/json"):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_error(self, status: int, code: str, message: str):
            self._send(status, encode_error(code, message).encode("utf-8"))

        def do_GET(self):
            path = urlsplit(self.path).path  # query parameters are ignored
            if path == "/interface":
                self._send(200, server.interface_body)
            elif path == "/status":
                import json

                self._send(200, json.dumps(server.status()).encode("utf-8"))
            elif path == "/console" or path.startswith("/console/"):
                self._serve_console(path)
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
            if path != "/predict":
                self._send_error(404, "not_found", "no such path: %s" % path)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                self._send_error(400, "invalid_request", "bad Content-Length")
                return
            if length > server.config.max_request_bytes:
                self._send_error(
                    413,
                    "payload_too_large",
                    "request of %d bytes exceeds limit of %d"
                    % (length, server.config.max_request_bytes),
                )
                return

            content_type = self.headers.get("Content-Type", "")
            if "multipart/form-data" not in content_type:
                self._send_error(
                    400, "invalid_request", "expected multipart/form-data body"
                )
                return
            body = self.rfile.read(length)

            try:
                req = _parse_multipart_request(
                    content_type, body, server.config.pipeline.interface
                )
            except _RequestParseError as exc:
                self._send_error(400, "invalid_request", str(exc))
                return

            violations = protocol.validate_request(
                server.config.pipeline.interface, req
            )
            if violations:
                import json

                body_out = json.dumps(
                    {
                        "error": {
                            "code": "invalid_request",
                            "message": "request does not match the declared interface",
                            "violations": [v.to_wire() for v in violations],
                        }
                    }
                )
                self._send(400, body_out.encode("utf-8"))
                return

            try:
                with server.lock:
                    fields, timing = server.config.pipeline.run(req)
            except PipelineError as exc:
                self._send_error(500, "internal", str(exc))
                return
            except Exception as exc:  # pragma: no cover - defensive
                self._send_error(500, "internal", "unexpected failure: %s" % exc)
                return

            server.count_served()
            resp = PredictionResponse(fields=tuple(fields), timing=timing)
            self._send(200, encode_response(resp).encode("utf-8"))

        def _serve_console(self, path: str):
            root = server.config.console_dir
            if root is None:
                self._send_error(404, "not_found", "console not enabled")
                return
            rel = path[len("/console") :].lstrip("/") or "index.html"
            target = (root / rel).resolve()
            if not str(target).startswith(str(root.resolve())) or not target.is_file():
                self._send_error(404, "not_found", "no such file")
                return
            ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
            self._send(200, target.read_bytes(), content_type=ctype)

    return Handler


class _RequestParseError(Exception):
    pass


def _parse_multipart_request(
    content_type: str, body: bytes, desc: protocol.InterfaceDescription
) -> PredictionRequest:
    """Decode multipart parts into typed request values, one per element.

    Part names are element names; volume parts carry raw MHA bytes, all
    other parts UTF-8 text converted per the element kind.
    """
    msg = BytesParser(policy=default_email_policy).parsebytes(
        b"Content-Type: " + content_type.encode("latin-1") + b"\r\nMIME-Version: 1.0\r\n\r\n" + body
    )
    if not msg.is_multipart():
        raise _RequestParseError("could not parse multipart body")

    values: dict = {}
    for part in msg.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if not name:
            continue
        data = part.get_payload(decode=True)
        if data is None:
            data = b""
        element = desc.element(name)
        if element is None:
            values[name] = data.decode("utf-8", "replace")
            continue
        if element.kind == "volume":
            try:
                values[name] = decode_mha(data)
            except MhaDecodeError as exc:
                raise _RequestParseError("element %r: %s" % (name, exc)) from exc
        else:
            text = data.decode("utf-8", "replace")
            values[name] = _coerce_text_value(element.kind, text, name)
    return PredictionRequest(values=values)


def _coerce_text_value(kind: str, text: str, name: str):
    if kind == "scalar_slider":
        try:
            return float(text)
        except ValueError:
            raise _RequestParseError("element %r: %r is not a number" % (name, text))
    if kind == "checkbox":
        lowered = text.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise _RequestParseError("element %r: %r is not a boolean" % (name, text))
    return text
