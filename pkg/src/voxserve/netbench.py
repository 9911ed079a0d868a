"""Latency benchmark: a bandwidth/RTT-shaping TCP proxy plus a driver that
measures end-to-end prediction latency and splits it into transfer and
compute, emitting a per-profile table.

Shaping happens at the byte-stream level so the whole HTTP stack is
measured end to end. The driver is serial: one request in flight, as in a
single-client measurement.
"""

from __future__ import annotations

import json
import logging
import socket
import statistics
import threading
import time
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from . import client as client_mod

log = logging.getLogger(__name__)

CHUNK_BYTES = 16 * 1024
BUCKET_BYTES = 64 * 1024


@dataclass(frozen=True)
class NetworkProfile:
    """Bandwidths in bits/second per direction, round-trip time in ms."""

    name: str
    up_bps: int
    down_bps: int
    rtt_ms: float = 0.0

    def __post_init__(self):
        if self.up_bps <= 0 or self.down_bps <= 0:
            raise ValueError("bandwidths must be positive")
        if self.rtt_ms < 0:
            raise ValueError("rtt must be nonnegative")

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "up_bps": self.up_bps,
            "down_bps": self.down_bps,
            "rtt_ms": self.rtt_ms,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "NetworkProfile":
        return cls(
            name=str(obj["name"]),
            up_bps=int(obj["up_bps"]),
            down_bps=int(obj["down_bps"]),
            rtt_ms=float(obj.get("rtt_ms", 0.0)),
        )


def default_profiles() -> list[NetworkProfile]:
    """LAN / DSL / 4G shaping defaults; configuration, not measured truth.

    Each tier dominates the next in both directions and in RTT, so total
    latency orders LAN < DSL < 4G regardless of whether a workload is
    upload- or download-heavy.
    """
    return [
        NetworkProfile("LAN", up_bps=1_000_000_000, down_bps=1_000_000_000, rtt_ms=1.0),
        NetworkProfile("DSL", up_bps=50_000_000, down_bps=50_000_000, rtt_ms=20.0),
        NetworkProfile("4G", up_bps=20_000_000, down_bps=20_000_000, rtt_ms=50.0),
    ]


def load_profiles(text: str) -> list[NetworkProfile]:
    obj = json.loads(text)
    return [NetworkProfile.from_wire(p) for p in obj["profiles"]]


def dump_profiles(profiles: list[NetworkProfile]) -> str:
    return json.dumps({"profiles": [p.to_wire() for p in profiles]}, indent=2)


class TokenBucket:
    """Paces a byte stream to a bit rate with a small burst allowance."""

    def __init__(self, bps: int, capacity_bytes: int = BUCKET_BYTES):
        self.rate = bps / 8.0  # bytes per second
        self.capacity = capacity_bytes
        self.tokens = float(capacity_bytes)
        self.updated = time.monotonic()
        self._lock = threading.Lock()

    def consume(self, n: int):
        """Block until n bytes worth of tokens are available."""
        while n > 0:
            take = min(n, self.capacity)
            with self._lock:
                now = time.monotonic()
                self.tokens = min(
                    self.capacity, self.tokens + (now - self.updated) * self.rate
                )
                self.updated = now
                if self.tokens >= take:
                    self.tokens -= take
                    n -= take
                    continue
                deficit = take - self.tokens
            time.sleep(deficit / self.rate)


class ShapedProxy:
    """TCP relay in front of one upstream, shaped per a NetworkProfile.

    Connection setup sleeps a full RTT (handshake), then each direction is
    delayed rtt/2 before its first byte and paced by its own token bucket.
    Connections are shaped independently; byte counters are shared.
    """

    def __init__(self, profile: NetworkProfile, upstream: tuple[str, int],
                 host: str = "127.0.0.1", port: int = 0):
        self.profile = profile
        self.upstream = upstream
        self._listener = socket.create_server((host, port))
        self.host = host
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.bytes_up = 0
        self.bytes_down = 0
        self._counter_lock = threading.Lock()

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    @property
    def url(self) -> str:
        return "http://%s:%d" % (self.host, self.port)

    def start(self):
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    def reset_counters(self):
        with self._counter_lock:
            self.bytes_up = 0
            self.bytes_down = 0

    def counters(self) -> tuple[int, int]:
        with self._counter_lock:
            return self.bytes_up, self.bytes_down

    def _accept_loop(self):
        self._listener.settimeout(0.5)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._handle, args=(conn,), daemon=True).start()

    def _handle(self, conn: socket.socket):
        time.sleep(self.profile.rtt_ms / 1000.0)  # handshake round trip
        try:
            upstream = socket.create_connection(self.upstream, timeout=10)
        except OSError:
            conn.close()  # upstream refusal propagates as a dropped connection
            return
        up_thread = threading.Thread(
            target=self._relay,
            args=(conn, upstream, TokenBucket(self.profile.up_bps), "up"),
            daemon=True,
        )
        down_thread = threading.Thread(
            target=self._relay,
            args=(upstream, conn, TokenBucket(self.profile.down_bps), "down"),
            daemon=True,
        )
        up_thread.start()
        down_thread.start()

    def _relay(self, src: socket.socket, dst: socket.socket, bucket: TokenBucket, direction: str):
        first = True
        try:
            while not self._stop.is_set():
                chunk = src.recv(CHUNK_BYTES)
                if not chunk:
                    break
                if first:
                    time.sleep(self.profile.rtt_ms / 2000.0)
                    first = False
                bucket.consume(len(chunk))
                dst.sendall(chunk)
                with self._counter_lock:
                    if direction == "up":
                        self.bytes_up += len(chunk)
                    else:
                        self.bytes_down += len(chunk)
        except OSError:
            pass
        finally:
            try:
                dst.shutdown(socket.SHUT_WR)
            except OSError:
                pass


# ---------------------------------------------------------------------------
# Measurement driver

@dataclass(frozen=True)
class RequestSpec:
    """What to send: a server and the value map for one prediction."""

    server_url: str
    pipeline: str
    values: dict


@dataclass(frozen=True)
class LatencyReport:
    pipeline: str
    profile: str
    total_s: float
    compute_s: float | None
    transfer_estimate_s: float
    residual_s: float
    repetitions: int
    partial: bool = False

    def to_wire(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "profile": self.profile,
            "total_s": self.total_s,
            "compute_s": self.compute_s,
            "transfer_estimate_s": self.transfer_estimate_s,
            "residual_s": self.residual_s,
            "repetitions": self.repetitions,
            "partial": self.partial,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "LatencyReport":
        compute = obj.get("compute_s")
        return cls(
            pipeline=str(obj["pipeline"]),
            profile=str(obj["profile"]),
            total_s=float(obj["total_s"]),
            compute_s=None if compute is None else float(compute),
            transfer_estimate_s=float(obj["transfer_estimate_s"]),
            residual_s=float(obj["residual_s"]),
            repetitions=int(obj["repetitions"]),
            partial=bool(obj.get("partial", False)),
        )


def measure(
    profiles: list[NetworkProfile],
    spec: RequestSpec,
    repetitions: int = 5,
) -> list[LatencyReport]:
    """Run `repetitions` predictions through a shaped proxy per profile.

    Reports carry the median total and the median server-side inference
    time; the transfer estimate uses observed byte counts and the profile's
    nominal bandwidth and RTT.
    """
    split = urlsplit(spec.server_url)
    upstream = (split.hostname, split.port or 80)
    desc = client_mod.fetch_interface(spec.server_url)

    # one discarded warm-up straight against the server: first-call costs
    # (allocator growth, lazy imports, thread spin-up) must not land in
    # whichever profile happens to run first
    try:
        client_mod.predict(spec.server_url, spec.values, desc=desc)
    except client_mod.ClientError as exc:
        log.warning("warm-up run failed: %s", exc)

    reports: list[LatencyReport] = []
    for profile in profiles:
        totals: list[float] = []
        computes: list[float] = []
        up_counts: list[int] = []
        down_counts: list[int] = []
        partial = False
        with ShapedProxy(profile, upstream) as proxy:
            for _ in range(repetitions):
                proxy.reset_counters()
                t0 = time.perf_counter()
                try:
                    resp = client_mod.predict(proxy.url, spec.values, desc=desc)
                except client_mod.ClientError as exc:
                    log.warning("run failed on profile %s: %s", profile.name, exc)
                    partial = True
                    break
                totals.append(time.perf_counter() - t0)
                computes.append(resp.timing.inference_s)
                up, down = proxy.counters()
                up_counts.append(up)
                down_counts.append(down)
        if not totals:
            reports.append(
                LatencyReport(spec.pipeline, profile.name, 0.0, None, 0.0, 0.0, 0, True)
            )
            continue
        total = statistics.median(totals)
        compute = statistics.median(computes)
        transfer = (
            statistics.median(up_counts) * 8 / profile.up_bps
            + statistics.median(down_counts) * 8 / profile.down_bps
            + 2 * profile.rtt_ms / 1000.0
        )
        reports.append(
            LatencyReport(
                pipeline=spec.pipeline,
                profile=profile.name,
                total_s=total,
                compute_s=compute,
                transfer_estimate_s=transfer,
                residual_s=total - compute - transfer,
                repetitions=len(totals),
                partial=partial,
            )
        )
    return reports


def emit_report(reports: list[LatencyReport]) -> str:
    """Human-readable table: one row per (pipeline, profile)."""
    header = "%-24s %-8s %10s %10s %10s %10s" % (
        "pipeline", "profile", "total_s", "compute_s", "transfer_s", "residual_s"
    )
    lines = [header, "-" * len(header)]
    for r in reports:
        compute = "%.3f" % r.compute_s if r.compute_s is not None else "-"
        mark = " (partial)" if r.partial else ""
        lines.append(
            "%-24s %-8s %10.3f %10s %10.3f %10.3f%s"
            % (r.pipeline, r.profile, r.total_s, compute, r.transfer_estimate_s,
               r.residual_s, mark)
        )
    return "\n".join(lines)


def dump_reports(reports: list[LatencyReport]) -> str:
    return json.dumps({"reports": [r.to_wire() for r in reports]}, indent=2)


def load_reports(text: str) -> list[LatencyReport]:
    obj = json.loads(text)
    return [LatencyReport.from_wire(r) for r in obj["reports"]]
