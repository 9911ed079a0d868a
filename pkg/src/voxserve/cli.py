"""Command line entry points for the server, registry, client and bench.

Exit codes for client subcommands: 0 success, 2 validation failure,
3 network failure, 4 server-reported error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

from . import client as client_mod
from . import netbench, registry, synth
from .pipeline import builtin_pipelines
from .server import (
    DEFAULT_ANNOUNCE_PERIOD_S,
    DEFAULT_MAX_REQUEST_BYTES,
    AnnounceConfig,
    EndpointConfig,
    PredictionServer,
)
from .volume import VolumeGrid, encode_mha

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NETWORK = 3
EXIT_SERVER = 4


def _parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_server(args) -> int:
    pipelines = builtin_pipelines(simulate_compute_s=args.simulate_compute)
    if args.pipeline not in pipelines:
        print(
            "unknown pipeline %r; choose from %s" % (args.pipeline, sorted(pipelines)),
            file=sys.stderr,
        )
        return 2
    host, port = _parse_bind(args.bind)
    announce = None
    if args.registry_url:
        if not args.api_key:
            print("--api-key is required when announcing", file=sys.stderr)
            return 2
        announce = AnnounceConfig(
            registry_url=args.registry_url,
            api_key=args.api_key,
            period_s=args.announce_period,
        )
    server = PredictionServer(
        EndpointConfig(
            pipeline=pipelines[args.pipeline],
            host=host,
            port=port,
            max_request_bytes=args.max_bytes,
            announce=announce,
            console_dir=Path(args.console_dir) if args.console_dir else None,
            public_url=args.public_url,
        )
    )
    print("serving %s on %s" % (args.pipeline, server.url))
    server.serve_forever()
    return 0


def cmd_registry(args) -> int:
    host, port = _parse_bind(args.bind)
    keys = registry.load_key_table(Path(args.key_file))
    state = registry.RegistryState(keys=keys, ttl_s=args.ttl)
    server = registry.RegistryServer(
        state,
        host=host,
        port=port,
        state_file=Path(args.state_file) if args.state_file else None,
    )
    print("registry on %s (%d keys)" % (server.url, len(keys)))
    server.serve_forever()
    return 0


def cmd_discover(args) -> int:
    try:
        records = client_mod.discover(args.registry_url)
    except client_mod.ConnectivityError as exc:
        print(exc, file=sys.stderr)
        return EXIT_NETWORK
    except client_mod.ServerReportedError as exc:
        print(exc, file=sys.stderr)
        return EXIT_SERVER
    for r in records:
        print(
            "%s  %s  %s  [%s/%s/%s]"
            % (r.service_id, r.name, r.prediction_url, r.modality, r.anatomy, r.task)
        )
    return EXIT_OK


def cmd_describe(args) -> int:
    try:
        desc = client_mod.fetch_interface(args.server_url)
    except client_mod.ConnectivityError as exc:
        print(exc, file=sys.stderr)
        return EXIT_NETWORK
    except (client_mod.ServerReportedError, client_mod.ClientError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_SERVER
    print("service: %s" % desc.service_name)
    for e in desc.elements:
        req = "required" if e.required else "optional"
        print("  %-20s %-14s %s  %s  %s" % (e.name, e.kind, req, e.label, e.constraints))
    return EXIT_OK


def cmd_predict(args) -> int:
    values: dict = {}
    for item in args.set or []:
        name, _, value = item.partition("=")
        values[name] = value
    for item in args.volume or []:
        name, _, path = item.partition("=")
        values[name] = path
    try:
        resp = client_mod.predict(args.server_url, values)
    except client_mod.ValidationFailure as exc:
        print("validation failed: %s" % exc, file=sys.stderr)
        return EXIT_VALIDATION
    except client_mod.ConnectivityError as exc:
        print(exc, file=sys.stderr)
        return EXIT_NETWORK
    except client_mod.ServerReportedError as exc:
        print(exc, file=sys.stderr)
        return EXIT_SERVER
    written = client_mod.save_response(resp, Path(args.out))
    t = resp.timing
    print(
        "timing: preprocess %.3fs  inference %.3fs  postprocess %.3fs"
        % (t.preprocess_s, t.inference_s, t.postprocess_s)
    )
    for path in written:
        print("wrote %s" % path)
    return EXIT_OK


def _bench_values(desc, dims: int, seed: int = 0) -> dict:
    """Fill every required element of an interface with synthetic data."""
    values: dict = {}
    for i, e in enumerate(desc.elements):
        if e.kind == "volume":
            values[e.name] = synth.sphere_volume((dims, dims, dims), seed=seed + i)
        elif not e.required:
            continue
        elif e.kind == "scalar_slider":
            values[e.name] = e.constraints["default"]
        elif e.kind == "choice":
            values[e.name] = e.constraints["default"]
        elif e.kind == "checkbox":
            values[e.name] = e.constraints["default"]
        elif e.kind == "text":
            values[e.name] = e.constraints["default"]
    return values


def cmd_netbench(args) -> int:
    if args.profiles:
        profiles = netbench.load_profiles(Path(args.profiles).read_text())
    else:
        profiles = netbench.default_profiles()

    pipeline_names = [p.strip() for p in args.pipeline.split(",") if p.strip()]
    reports = []
    local_servers: list[PredictionServer] = []
    try:
        targets: list[tuple[str, str]] = []  # (pipeline label, server url)
        if args.server:
            if len(pipeline_names) != 1:
                print("--server takes exactly one --pipeline label", file=sys.stderr)
                return 2
            targets.append((pipeline_names[0], args.server))
        else:
            catalog = builtin_pipelines(simulate_compute_s=args.simulate_compute)
            for name in pipeline_names:
                if name not in catalog:
                    print("unknown pipeline %r" % name, file=sys.stderr)
                    return 2
                srv = PredictionServer(EndpointConfig(pipeline=catalog[name], port=0))
                srv.start()
                local_servers.append(srv)
                targets.append((name, srv.url))

        for name, url in targets:
            desc = client_mod.fetch_interface(url)
            spec = netbench.RequestSpec(
                server_url=url,
                pipeline=name,
                values=_bench_values(desc, args.dims),
            )
            reports.extend(netbench.measure(profiles, spec, repetitions=args.reps))
    finally:
        for srv in local_servers:
            srv.stop()

    print(netbench.emit_report(reports))
    if args.out:
        Path(args.out).write_text(netbench.dump_reports(reports))
        print("wrote %s" % args.out)
    return EXIT_OK


def cmd_makevolume(args) -> int:
    vol = synth.sphere_volume((args.dims, args.dims, args.dims), seed=args.seed)
    Path(args.out).write_bytes(encode_mha(vol))
    print("wrote %s" % args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxserve",
        description="Volumetric prediction endpoints, registry, client and latency bench.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("server", help="run a prediction endpoint")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--pipeline", default="threshold_segmenter")
    p.add_argument("--max-bytes", type=int, default=DEFAULT_MAX_REQUEST_BYTES)
    p.add_argument("--registry-url", default=None)
    p.add_argument("--api-key", default=None)
    p.add_argument("--announce-period", type=float, default=DEFAULT_ANNOUNCE_PERIOD_S)
    p.add_argument("--public-url", default=None, help="prediction URL to announce")
    p.add_argument("--console-dir", default=None, help="serve these files under /console")
    p.add_argument("--simulate-compute", type=float, default=0.0,
                   help="fixed inference sleep in seconds (benchmarking aid)")
    p.set_defaults(func=cmd_server)

    p = sub.add_parser("registry", help="run the announcement service")
    p.add_argument("--bind", default="127.0.0.1:8001")
    p.add_argument("--key-file", required=True)
    p.add_argument("--ttl", type=int, default=registry.DEFAULT_TTL_S)
    p.add_argument("--state-file", default=None)
    p.set_defaults(func=cmd_registry)

    p = sub.add_parser("discover", help="list live services on a registry")
    p.add_argument("registry_url")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("describe", help="show a server's declared interface")
    p.add_argument("server_url")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("predict", help="run one prediction and save the outputs")
    p.add_argument("server_url")
    p.add_argument("--volume", action="append", metavar="NAME=PATH")
    p.add_argument("--set", action="append", metavar="NAME=VALUE")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("netbench", help="measure latency through shaped networks")
    p.add_argument("--server", default=None, help="benchmark an already-running server")
    p.add_argument("--pipeline", default="echo,threshold_segmenter,multi_modal_fusion",
                   help="comma-separated catalog names (or a label with --server)")
    p.add_argument("--profiles", default=None, help="profile file (JSON); default LAN/DSL/4G")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--dims", type=int, default=64, help="synthetic volume edge length")
    p.add_argument("--simulate-compute", type=float, default=0.1)
    p.add_argument("--out", default=None, help="write the machine-readable report here")
    p.set_defaults(func=cmd_netbench)

    p = sub.add_parser("makevolume", help="write a synthetic sphere volume (.mha)")
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sphere.mha")
    p.set_defaults(func=cmd_makevolume)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
