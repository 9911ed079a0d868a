import json
from pathlib import Path

import pytest

from voxserve import cli, netbench, synth
from voxserve.pipeline import builtin_pipelines
from voxserve.registry import RegistryServer, RegistryState
from voxserve.server import AnnounceConfig, EndpointConfig, PredictionServer
from voxserve.volume import decode_mha, encode_mha


@pytest.fixture
def server():
    srv = PredictionServer(
        EndpointConfig(pipeline=builtin_pipelines()["threshold_segmenter"], port=0)
    )
    srv.start()
    yield srv
    srv.stop()


def test_makevolume_and_predict_roundtrip(server, tmp_path, capsys):
    vol_path = tmp_path / "sphere.mha"
    assert cli.main(["makevolume", "--dims", "24", "--out", str(vol_path)]) == 0
    assert decode_mha(vol_path.read_bytes()).dims == (24, 24, 24)

    out_dir = tmp_path / "out"
    rc = cli.main(
        ["predict", server.url, "--volume", "image=%s" % vol_path, "--out", str(out_dir)]
    )
    assert rc == 0
    assert (out_dir / "segmentation.mha").exists()
    captured = capsys.readouterr()
    assert "timing:" in captured.out


def test_describe(server, capsys):
    assert cli.main(["describe", server.url]) == 0
    out = capsys.readouterr().out
    assert "threshold_segmenter" in out
    assert "scalar_slider" in out


def test_discover(capsys):
    state = RegistryState(keys={"k": "o"}, ttl_s=1800)
    reg = RegistryServer(state, port=0)
    reg.start()
    srv = PredictionServer(
        EndpointConfig(
            pipeline=builtin_pipelines()["echo"],
            port=0,
            announce=AnnounceConfig(registry_url=reg.url, api_key="k", period_s=600),
        )
    )
    srv.start()
    try:
        import time

        deadline = time.time() + 5
        while time.time() < deadline and not state.discover():
            time.sleep(0.05)
        assert cli.main(["discover", reg.url]) == 0
        assert "/predict" in capsys.readouterr().out
    finally:
        srv.stop()
        reg.stop()


def test_predict_exit_codes(server, tmp_path):
    # validation failure: 2, network failure: 3
    rc = cli.main(["predict", server.url, "--out", str(tmp_path / "o")])
    assert rc == 2
    rc = cli.main(["predict", "http://127.0.0.1:1", "--out", str(tmp_path / "o")])
    assert rc == 3


def test_netbench_cli_writes_report(tmp_path, capsys):
    profiles = tmp_path / "profiles.json"
    profiles.write_text(
        netbench.dump_profiles(
            [
                netbench.NetworkProfile("fast", 10**9, 10**9, 0.0),
                netbench.NetworkProfile("slow", 30_000_000, 30_000_000, 5.0),
            ]
        )
    )
    out = tmp_path / "report.json"
    rc = cli.main(
        [
            "netbench",
            "--pipeline", "echo",
            "--profiles", str(profiles),
            "--reps", "1",
            "--dims", "16",
            "--simulate-compute", "0.05",
            "--out", str(out),
        ]
    )
    assert rc == 0
    reports = netbench.load_reports(out.read_text())
    assert [(r.pipeline, r.profile) for r in reports] == [
        ("echo", "fast"), ("echo", "slow")
    ]
    table = capsys.readouterr().out
    assert "pipeline" in table and "echo" in table


def test_server_rejects_unknown_pipeline(capsys):
    assert cli.main(["server", "--pipeline", "nope"]) == 2
