"""Client library: discover services, fetch interfaces, run predictions.

Values are validated locally against the fetched interface before any bytes
go on the wire, using the same rule set the server enforces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import requests

from . import protocol
from .protocol import (
    InterfaceDescription,
    PhaseTiming,
    PredictionRequest,
    PredictionResponse,
    ProtocolError,
    ServiceRecord,
    Violation,
)
from .volume import VolumeGrid, encode_mha, decode_mha


class ClientError(Exception):
    pass


class ConnectivityError(ClientError):
    pass


class ValidationFailure(ClientError):
    def __init__(self, violations: list[Violation]):
        super().__init__(
            "; ".join("%s: %s" % (v.element, v.reason) for v in violations)
        )
        self.violations = violations


class ServerReportedError(ClientError):
    def __init__(self, status: int, code: str, message: str):
        super().__init__("HTTP %d %s: %s" % (status, code, message))
        self.status = status
        self.code = code


def discover(registry_url: str, timeout: float = 10) -> list[ServiceRecord]:
    try:
        resp = requests.get(registry_url.rstrip("/") + "/discover", timeout=timeout)
    except requests.RequestException as exc:
        raise ConnectivityError("could not reach registry: %s" % exc) from exc
    _raise_for_error(resp)
    return protocol.decode_records(resp.content)


def fetch_interface(server_url: str, timeout: float = 10) -> InterfaceDescription:
    try:
        resp = requests.get(server_url.rstrip("/") + "/interface", timeout=timeout)
    except requests.RequestException as exc:
        raise ConnectivityError("could not reach server: %s" % exc) from exc
    _raise_for_error(resp)
    return protocol.decode_interface(resp.content)


def build_request(desc: InterfaceDescription, values: dict) -> PredictionRequest:
    """Resolve user-supplied values (volume file paths or in-memory grids,
    scalars, strings) into a typed request; raises on local validation
    failure so no network traffic occurs for bad input.
    """
    resolved: dict = {}
    for name, value in values.items():
        element = desc.element(name)
        if element is not None and element.kind == "volume" and not isinstance(value, VolumeGrid):
            path = Path(value)
            if not path.is_file():
                raise ValidationFailure([Violation(name, "no such file: %s" % path)])
            resolved[name] = decode_mha(path.read_bytes())
        elif element is not None and element.kind == "scalar_slider" and isinstance(value, str):
            try:
                resolved[name] = float(value)
            except ValueError:
                resolved[name] = value  # left as-is; validation reports it
        elif element is not None and element.kind == "checkbox" and isinstance(value, str):
            resolved[name] = value.strip().lower() in ("true", "1", "yes", "on")
        else:
            resolved[name] = value
    req = PredictionRequest(values=resolved)
    violations = protocol.validate_request(desc, req)
    if violations:
        raise ValidationFailure(violations)
    return req


def predict(
    server_url: str,
    values: dict,
    desc: InterfaceDescription | None = None,
    timeout: float = 300,
) -> PredictionResponse:
    """Fetch the interface (unless given), validate locally, POST, decode."""
    if desc is None:
        desc = fetch_interface(server_url)
    req = build_request(desc, values)

    parts = []
    for name, value in req.values.items():
        if isinstance(value, VolumeGrid):
            parts.append(
                (name, (name + ".mha", encode_mha(value), "application/octet-stream"))
            )
        elif isinstance(value, bool):
            parts.append((name, (None, "true" if value else "false")))
        else:
            parts.append((name, (None, str(value))))

    try:
        resp = requests.post(
            server_url.rstrip("/") + "/predict", files=parts, timeout=timeout
        )
    except requests.RequestException as exc:
        raise ConnectivityError("prediction request failed: %s" % exc) from exc
    _raise_for_error(resp)
    return protocol.decode_response(resp.content)


def save_response(resp: PredictionResponse, out_dir: Path) -> list[Path]:
    """Write each response field to out_dir, extension chosen by kind."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for f in resp.fields:
        if f.kind in ("label_volume", "image_volume"):
            path = out_dir / (f.name + ".mha")
            path.write_bytes(encode_mha(f.payload))
        elif f.kind == "plain_text":
            path = out_dir / (f.name + ".txt")
            path.write_text(f.payload)
        else:
            path = out_dir / (f.name + ".json")
            path.write_text(json.dumps({"name": f.name, "kind": f.kind, "payload": f.payload_to_wire()}))
        written.append(path)
    return written


def _raise_for_error(resp: requests.Response):
    if resp.status_code == 200:
        return
    try:
        code, message = protocol.decode_error(resp.content)
    except ProtocolError:
        code, message = "internal", resp.text[:200]
    raise ServerReportedError(resp.status_code, code, message)
