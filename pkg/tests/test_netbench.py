import socket
import threading
import time

import pytest
import requests

from voxserve import netbench, synth
from voxserve.netbench import (
    LatencyReport,
    NetworkProfile,
    RequestSpec,
    ShapedProxy,
    TokenBucket,
    default_profiles,
    dump_profiles,
    dump_reports,
    emit_report,
    load_profiles,
    load_reports,
    measure,
)
from voxserve.pipeline import builtin_pipelines
from voxserve.server import EndpointConfig, PredictionServer


class TestTokenBucket:
    def test_paces_to_rate(self):
        bucket = TokenBucket(bps=8_000_000, capacity_bytes=64 * 1024)  # 1 MB/s
        t0 = time.perf_counter()
        total = 512 * 1024
        sent = 0
        while sent < total:
            bucket.consume(16 * 1024)
            sent += 16 * 1024
        elapsed = time.perf_counter() - t0
        # 512 KiB minus the 64 KiB burst at 1 MB/s ≈ 0.46 s
        assert 0.35 <= elapsed <= 0.8

    def test_burst_is_free(self):
        bucket = TokenBucket(bps=8_000, capacity_bytes=4096)
        t0 = time.perf_counter()
        bucket.consume(4096)
        assert time.perf_counter() - t0 < 0.05


def _echo_tcp_server():
    """Upstream that drains a connection to EOF, then echoes everything back."""
    listener = socket.create_server(("127.0.0.1", 0))

    def loop():
        while True:
            try:
                conn, _ = listener.accept()
            except OSError:
                return

            def handle(c):
                data = b""
                while True:
                    chunk = c.recv(1 << 20)
                    if not chunk:
                        break
                    data += chunk
                c.sendall(data)
                c.close()

            threading.Thread(target=handle, args=(conn,), daemon=True).start()

    threading.Thread(target=loop, daemon=True).start()
    return listener


def _roundtrip(host, port, payload):
    t0 = time.perf_counter()
    s = socket.create_connection((host, port))
    s.sendall(payload)
    s.shutdown(socket.SHUT_WR)
    got = b""
    while True:
        chunk = s.recv(1 << 20)
        if not chunk:
            break
        got += chunk
    s.close()
    assert got == payload
    return time.perf_counter() - t0


class TestShapedProxy:
    def test_rtt_floor_for_tiny_payload(self):
        upstream = _echo_tcp_server()
        profile = NetworkProfile("rtt", up_bps=10**9, down_bps=10**9, rtt_ms=100.0)
        with ShapedProxy(profile, upstream.getsockname()) as proxy:
            elapsed = _roundtrip("127.0.0.1", proxy.port, b"ping")
        upstream.close()
        assert elapsed >= 0.2

    def test_unlimited_profile_near_direct(self):
        upstream = _echo_tcp_server()
        payload = b"x" * 65536
        direct = _roundtrip(*upstream.getsockname(), payload)
        profile = NetworkProfile("fast", up_bps=10**12, down_bps=10**12, rtt_ms=0.0)
        with ShapedProxy(profile, upstream.getsockname()) as proxy:
            shaped = _roundtrip("127.0.0.1", proxy.port, payload)
        upstream.close()
        assert shaped <= max(direct * 1.1, direct + 0.05)

    def test_bandwidth_calibration(self):
        # 1 MiB through 16 Mbps: 2^20*8/16e6 = 0.52 s theoretical
        upstream = _echo_tcp_server()
        profile = NetworkProfile("cal", up_bps=16_000_000, down_bps=10**12, rtt_ms=0.0)
        payload = b"y" * (1024 * 1024)
        with ShapedProxy(profile, upstream.getsockname()) as proxy:
            elapsed = _roundtrip("127.0.0.1", proxy.port, payload)
            up, down = proxy.counters()
        upstream.close()
        assert up == len(payload)
        assert down == len(payload)
        # 1 MiB at 16 Mbps is 0.524 s nominal; the 64 KiB initial bucket
        # burst shaves up to 0.033 s off the floor
        assert 0.45 <= elapsed <= 0.9

    def test_upstream_refusal_drops_connection(self):
        profile = NetworkProfile("p", up_bps=10**9, down_bps=10**9, rtt_ms=0.0)
        with ShapedProxy(profile, ("127.0.0.1", 1)) as proxy:
            s = socket.create_connection(("127.0.0.1", proxy.port))
            try:
                s.sendall(b"hello")
                assert s.recv(16) == b""  # closed without an answer
            except (ConnectionResetError, BrokenPipeError):
                pass  # reset is also a faithful propagation of the refusal
            finally:
                s.close()


class TestProfilesCodec:
    def test_roundtrip(self):
        profiles = default_profiles()
        assert load_profiles(dump_profiles(profiles)) == profiles

    def test_default_ordering(self):
        lan, dsl, mobile = default_profiles()
        assert lan.up_bps > dsl.up_bps > mobile.up_bps
        assert lan.rtt_ms < dsl.rtt_ms < mobile.rtt_ms

    def test_invalid_bandwidth(self):
        with pytest.raises(ValueError):
            NetworkProfile("bad", up_bps=0, down_bps=1)


class TestMeasure:
    def test_reports_carry_compute_and_decomposition(self):
        pipe = builtin_pipelines(simulate_compute_s=0.1)["echo"]
        srv = PredictionServer(EndpointConfig(pipeline=pipe, port=0))
        srv.start()
        try:
            profiles = [
                NetworkProfile("wide", up_bps=200_000_000, down_bps=200_000_000, rtt_ms=1.0),
                NetworkProfile("narrow", up_bps=20_000_000, down_bps=20_000_000, rtt_ms=20.0),
            ]
            spec = RequestSpec(
                server_url=srv.url,
                pipeline="echo",
                values={"image": synth.sphere_volume((32, 32, 32))},
            )
            reports = measure(profiles, spec, repetitions=3)
        finally:
            srv.stop()

        assert [r.profile for r in reports] == ["wide", "narrow"]
        wide, narrow = reports
        assert not wide.partial and not narrow.partial
        assert wide.total_s < narrow.total_s  # lower bandwidth never wins
        for r in reports:
            assert r.total_s >= r.compute_s
            assert r.compute_s == pytest.approx(0.1, abs=0.1)
            assert r.residual_s >= -0.1
            assert r.repetitions == 3

    def test_failed_profile_marked_partial(self):
        profiles = [NetworkProfile("dead", up_bps=10**9, down_bps=10**9)]
        pipe = builtin_pipelines()["echo"]
        srv = PredictionServer(EndpointConfig(pipeline=pipe, port=0))
        srv.start()
        try:
            spec = RequestSpec(
                server_url=srv.url,
                pipeline="echo",
                values={},  # missing required volume: every run fails
            )
            reports = measure(profiles, spec, repetitions=2)
        finally:
            srv.stop()
        assert len(reports) == 1
        assert reports[0].partial
        assert reports[0].repetitions == 0


class TestReportOutput:
    def _reports(self):
        return [
            LatencyReport("echo", "LAN", 0.5, 0.1, 0.3, 0.1, 5),
            LatencyReport("echo", "DSL", 1.5, 0.1, 1.2, 0.2, 5),
            LatencyReport("fusion", "LAN", 2.0, None, 1.0, 1.0, 5, partial=True),
        ]

    def test_one_row_per_pipeline_profile(self):
        text = emit_report(self._reports())
        lines = text.splitlines()
        assert len(lines) == 2 + 3  # header + rule + rows

    def test_empty_input_header_only(self):
        assert len(emit_report([]).splitlines()) == 2

    def test_machine_readable_roundtrip(self):
        reports = self._reports()
        assert load_reports(dump_reports(reports)) == reports

    def test_optional_compute_rendered_as_dash(self):
        text = emit_report(self._reports())
        assert " - " in text.splitlines()[-1] or " -" in text.splitlines()[-1]
