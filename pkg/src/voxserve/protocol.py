"""Wire-visible data shapes shared by servers, the registry and clients.

Everything here is immutable after construction and serializes to JSON with
fixed key order, so byte-level golden tests are possible.
"""

from __future__ import annotations

import json
import numbers
from dataclasses import dataclass, field
from urllib.parse import urlparse

from . import volume as vol_mod
from .volume import VolumeGrid

ELEMENT_KINDS = ("volume", "scalar_slider", "checkbox", "choice", "text")
RESPONSE_KINDS = ("label_volume", "image_volume", "plain_text", "scalar_measure", "point_set")

ERROR_CODES = (
    "invalid_request",
    "unsupported_kind",
    "unauthorized",
    "not_found",
    "payload_too_large",
    "internal",
)


class ProtocolError(Exception):
    """Base for wire-format problems."""

    code = "invalid_request"


class UnsupportedKindError(ProtocolError):
    """An element or response kind this implementation does not know."""

    code = "unsupported_kind"

    def __init__(self, kind: str):
        super().__init__("unsupported kind %r" % kind)
        self.kind = kind


class InvariantViolation(ProtocolError):
    """A decoded value breaks a structural invariant."""


# ---------------------------------------------------------------------------
# Interface description

@dataclass(frozen=True)
class InterfaceElement:
    """One request field the server expects; constraints depend on kind."""

    name: str
    kind: str
    label: str = ""
    required: bool = True
    constraints: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("element name must be nonempty")
        if self.kind not in ELEMENT_KINDS:
            raise UnsupportedKindError(self.kind)
        c = dict(self.constraints)
        if self.kind == "scalar_slider":
            c.setdefault("minimum", 0.0)
            c.setdefault("maximum", 1.0)
            c.setdefault("default", c["minimum"])
            if not c["minimum"] < c["maximum"]:
                raise InvariantViolation(
                    "slider %r: minimum must be < maximum" % self.name
                )
            if not c["minimum"] <= c["default"] <= c["maximum"]:
                raise InvariantViolation(
                    "slider %r: default outside [minimum, maximum]" % self.name
                )
        elif self.kind == "choice":
            options = c.get("options") or []
            if not options:
                raise InvariantViolation("choice %r: options must be nonempty" % self.name)
            c.setdefault("default", options[0])
            if c["default"] not in options:
                raise InvariantViolation("choice %r: default not in options" % self.name)
        elif self.kind == "checkbox":
            c.setdefault("default", False)
        elif self.kind == "text":
            c.setdefault("default", "")
        elif self.kind == "volume":
            c.setdefault("expected_modality", "")
        object.__setattr__(self, "constraints", c)

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "label": self.label,
            "required": self.required,
            "constraints": dict(self.constraints),
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "InterfaceElement":
        if not isinstance(obj, dict):
            raise ProtocolError("interface element must be an object")
        kind = obj.get("kind")
        if kind not in ELEMENT_KINDS:
            raise UnsupportedKindError(str(kind))
        return cls(
            name=str(obj.get("name", "")),
            kind=kind,
            label=str(obj.get("label", "")),
            required=bool(obj.get("required", True)),
            constraints=dict(obj.get("constraints", {})),
        )


@dataclass(frozen=True)
class InterfaceDescription:
    """The server-declared schema of a prediction request."""

    service_name: str
    elements: tuple[InterfaceElement, ...]

    def __post_init__(self):
        elements = tuple(self.elements)
        names = [e.name for e in elements]
        if len(set(names)) != len(names):
            raise InvariantViolation("element names must be pairwise distinct")
        if not any(e.kind == "volume" for e in elements):
            raise InvariantViolation("interface must declare at least one volume element")
        object.__setattr__(self, "elements", elements)

    def element(self, name: str) -> InterfaceElement | None:
        for e in self.elements:
            if e.name == name:
                return e
        return None


def encode_interface(desc: InterfaceDescription) -> str:
    return json.dumps(
        {"name": desc.service_name, "elements": [e.to_wire() for e in desc.elements]},
        sort_keys=False,
    )


def decode_interface(wire: str | bytes) -> InterfaceDescription:
    obj = _parse_json_object(wire, "interface description")
    elements = obj.get("elements")
    if not isinstance(elements, list):
        raise ProtocolError("interface description needs an elements list")
    return InterfaceDescription(
        service_name=str(obj.get("name", "")),
        elements=tuple(InterfaceElement.from_wire(e) for e in elements),
    )


# ---------------------------------------------------------------------------
# Prediction request and validation

@dataclass(frozen=True)
class PredictionRequest:
    """Element name -> value map; volumes are in-memory VolumeGrid payloads."""

    values: dict

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))


@dataclass(frozen=True)
class Violation:
    element: str
    reason: str

    def to_wire(self) -> dict:
        return {"element": self.element, "reason": self.reason}


def validate_request(desc: InterfaceDescription, req: PredictionRequest) -> list[Violation]:
    """Check a request against an interface; empty list means ok.

    Total over arbitrary value maps: wrong types become violations,
    never exceptions.
    """
    violations: list[Violation] = []
    values = req.values if isinstance(req.values, dict) else {}

    for element in desc.elements:
        if element.name not in values:
            if element.required:
                violations.append(Violation(element.name, "missing required element"))
            continue
        value = values[element.name]
        kind = element.kind
        if kind == "volume":
            if not isinstance(value, VolumeGrid):
                violations.append(Violation(element.name, "expected a volume payload"))
        elif kind == "scalar_slider":
            if isinstance(value, bool) or not isinstance(value, numbers.Real):
                violations.append(Violation(element.name, "expected a number"))
            else:
                lo = element.constraints["minimum"]
                hi = element.constraints["maximum"]
                if not lo <= float(value) <= hi:
                    violations.append(
                        Violation(
                            element.name,
                            "value %g outside [%g, %g]" % (float(value), lo, hi),
                        )
                    )
        elif kind == "checkbox":
            if not isinstance(value, bool):
                violations.append(Violation(element.name, "expected a boolean"))
        elif kind == "choice":
            if not isinstance(value, str):
                violations.append(Violation(element.name, "expected a string"))
            elif value not in element.constraints["options"]:
                violations.append(
                    Violation(element.name, "value %r not among options" % value)
                )
        elif kind == "text":
            if not isinstance(value, str):
                violations.append(Violation(element.name, "expected a string"))

    known = {e.name for e in desc.elements}
    for name in values:
        if name not in known:
            violations.append(Violation(str(name), "unknown element"))
    return violations


# ---------------------------------------------------------------------------
# Prediction response

@dataclass(frozen=True)
class ResponseField:
    """One typed datum in a prediction response.

    Payload by kind: label_volume / image_volume -> VolumeGrid;
    plain_text -> str; scalar_measure -> (value, unit); point_set ->
    tuple of (x, y, z) physical-space points.
    """

    name: str
    kind: str
    payload: object

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("response field name must be nonempty")
        if self.kind not in RESPONSE_KINDS:
            raise UnsupportedKindError(self.kind)
        if self.kind in ("label_volume", "image_volume"):
            if not isinstance(self.payload, VolumeGrid):
                raise InvariantViolation("%s payload must be a volume" % self.kind)
            if self.kind == "label_volume" and self.payload.scalar_kind != "uint8":
                raise InvariantViolation("label_volume voxels must be nonnegative integers")
        elif self.kind == "plain_text":
            if not isinstance(self.payload, str):
                raise InvariantViolation("plain_text payload must be a string")
        elif self.kind == "scalar_measure":
            value, unit = self.payload  # (float, unit string)
            object.__setattr__(self, "payload", (float(value), str(unit)))
        elif self.kind == "point_set":
            pts = tuple(tuple(float(c) for c in p) for p in self.payload)
            if any(len(p) != 3 for p in pts):
                raise InvariantViolation("point_set entries must be 3D points")
            object.__setattr__(self, "payload", pts)

    def payload_to_wire(self):
        if self.kind in ("label_volume", "image_volume"):
            return vol_mod.encode_volume_payload(self.payload)
        if self.kind == "scalar_measure":
            value, unit = self.payload
            return {"value": value, "unit": unit}
        if self.kind == "point_set":
            return {"points": [list(p) for p in self.payload]}
        return self.payload

    def to_wire(self) -> dict:
        return {"name": self.name, "kind": self.kind, "payload": self.payload_to_wire()}

    @classmethod
    def from_wire(cls, obj: dict) -> "ResponseField":
        if not isinstance(obj, dict):
            raise ProtocolError("response field must be an object")
        kind = obj.get("kind")
        if kind not in RESPONSE_KINDS:
            raise UnsupportedKindError(str(kind))
        raw = obj.get("payload")
        if kind in ("label_volume", "image_volume"):
            if not isinstance(raw, str):
                raise ProtocolError("volume payload must be a base64 string")
            payload = vol_mod.decode_volume_payload(raw)
        elif kind == "scalar_measure":
            payload = (raw["value"], raw.get("unit", ""))
        elif kind == "point_set":
            payload = tuple(tuple(p) for p in raw["points"])
        else:
            payload = str(raw)
        return cls(name=str(obj.get("name", "")), kind=kind, payload=payload)


@dataclass(frozen=True)
class PhaseTiming:
    preprocess_s: float = 0.0
    inference_s: float = 0.0
    postprocess_s: float = 0.0

    def __post_init__(self):
        if min(self.preprocess_s, self.inference_s, self.postprocess_s) < 0:
            raise InvariantViolation("timing entries must be nonnegative")

    def to_wire(self) -> dict:
        return {
            "preprocess_s": self.preprocess_s,
            "inference_s": self.inference_s,
            "postprocess_s": self.postprocess_s,
        }


@dataclass(frozen=True)
class PredictionResponse:
    fields: tuple[ResponseField, ...]
    timing: PhaseTiming

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))


def encode_response(resp: PredictionResponse) -> str:
    return json.dumps(
        {
            "fields": [f.to_wire() for f in resp.fields],
            "timing": resp.timing.to_wire(),
        }
    )


def decode_response(wire: str | bytes) -> PredictionResponse:
    obj = _parse_json_object(wire, "prediction response")
    fields = obj.get("fields")
    if not isinstance(fields, list):
        raise ProtocolError("prediction response needs a fields list")
    timing = obj.get("timing", {})
    if not isinstance(timing, dict):
        raise ProtocolError("timing must be an object")
    return PredictionResponse(
        fields=tuple(ResponseField.from_wire(f) for f in fields),
        timing=PhaseTiming(
            preprocess_s=float(timing.get("preprocess_s", 0.0)),
            inference_s=float(timing.get("inference_s", 0.0)),
            postprocess_s=float(timing.get("postprocess_s", 0.0)),
        ),
    )


# ---------------------------------------------------------------------------
# Registry messages

@dataclass(frozen=True)
class AnnounceMessage:
    """Authenticated registration sent by an endpoint to the registry."""

    api_key: str
    prediction_url: str
    name: str
    description: str = ""
    modality: str = ""
    anatomy: str = ""
    task: str = ""

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("service name must be nonempty")
        parsed = urlparse(self.prediction_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise InvariantViolation(
                "prediction_url must be an absolute HTTP URL, got %r" % self.prediction_url
            )

    def to_wire(self) -> dict:
        return {
            "api_key": self.api_key,
            "prediction_url": self.prediction_url,
            "name": self.name,
            "description": self.description,
            "modality": self.modality,
            "anatomy": self.anatomy,
            "task": self.task,
        }


def encode_announce(msg: AnnounceMessage) -> str:
    return json.dumps(msg.to_wire())


def decode_announce(wire: str | bytes) -> AnnounceMessage:
    obj = _parse_json_object(wire, "announce message")
    try:
        return AnnounceMessage(
            api_key=str(obj["api_key"]),
            prediction_url=str(obj["prediction_url"]),
            name=str(obj["name"]),
            description=str(obj.get("description", "")),
            modality=str(obj.get("modality", "")),
            anatomy=str(obj.get("anatomy", "")),
            task=str(obj.get("task", "")),
        )
    except KeyError as exc:
        raise ProtocolError("announce message missing %s" % exc) from None


@dataclass(frozen=True)
class ServiceRecord:
    """Registry-side view of an announced endpoint; never carries the key."""

    service_id: str
    prediction_url: str
    name: str
    description: str = ""
    modality: str = ""
    anatomy: str = ""
    task: str = ""
    last_seen: float = 0.0
    ttl_s: int = 1800

    def __post_init__(self):
        if self.ttl_s <= 0:
            raise InvariantViolation("ttl_s must be positive")

    def is_live(self, now: float) -> bool:
        return now - self.last_seen <= self.ttl_s

    def to_wire(self, include_liveness: bool = False) -> dict:
        out = {
            "service_id": self.service_id,
            "prediction_url": self.prediction_url,
            "name": self.name,
            "description": self.description,
            "modality": self.modality,
            "anatomy": self.anatomy,
            "task": self.task,
        }
        if include_liveness:
            out["last_seen"] = self.last_seen
            out["ttl_s"] = self.ttl_s
        return out

    @classmethod
    def from_wire(cls, obj: dict) -> "ServiceRecord":
        if not isinstance(obj, dict):
            raise ProtocolError("service record must be an object")
        try:
            return cls(
                service_id=str(obj["service_id"]),
                prediction_url=str(obj["prediction_url"]),
                name=str(obj["name"]),
                description=str(obj.get("description", "")),
                modality=str(obj.get("modality", "")),
                anatomy=str(obj.get("anatomy", "")),
                task=str(obj.get("task", "")),
                last_seen=float(obj.get("last_seen", 0.0)),
                ttl_s=int(obj.get("ttl_s", 1800)),
            )
        except KeyError as exc:
            raise ProtocolError("service record missing %s" % exc) from None


def encode_records(records: list[ServiceRecord], include_liveness: bool = False) -> str:
    return json.dumps({"services": [r.to_wire(include_liveness) for r in records]})


def decode_records(wire: str | bytes) -> list[ServiceRecord]:
    obj = _parse_json_object(wire, "service list")
    services = obj.get("services")
    if not isinstance(services, list):
        raise ProtocolError("service list needs a services array")
    return [ServiceRecord.from_wire(r) for r in services]


# ---------------------------------------------------------------------------
# Error schema

def encode_error(code: str, message: str) -> str:
    if code not in ERROR_CODES:
        code = "internal"
    return json.dumps({"error": {"code": code, "message": message}})


def decode_error(wire: str | bytes) -> tuple[str, str]:
    obj = _parse_json_object(wire, "error body")
    err = obj.get("error")
    if not isinstance(err, dict):
        raise ProtocolError("error body needs an error object")
    return str(err.get("code", "internal")), str(err.get("message", ""))


def _parse_json_object(wire: str | bytes, what: str) -> dict:
    if isinstance(wire, bytes):
        try:
            wire = wire.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("%s is not valid UTF-8" % what) from exc
    try:
        obj = json.loads(wire)
    except json.JSONDecodeError as exc:
        raise ProtocolError("%s is not valid JSON: %s" % (what, exc)) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("%s must be a JSON object" % what)
    return obj
