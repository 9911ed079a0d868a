"""Three-phase execution unit: pre-processing, predictor, post-processing.

The predictor owns its interface declaration; the pipeline merely relays it
and times each phase. Exclusive-execution policy lives in the server, not
here: ``run`` is reentrant and holds no global state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .protocol import (
    InterfaceDescription,
    InterfaceElement,
    PhaseTiming,
    PredictionRequest,
    ResponseField,
    validate_request,
)
from .volume import (
    VolumeGrid,
    binarize,
    largest_connected_component,
    otsu_threshold,
    znormalize,
)


class PipelineError(Exception):
    def __init__(self, phase: str, message: str):
        super().__init__("%s: %s" % (phase, message))
        self.phase = phase


class Predictor:
    """Pluggable inference function; deterministic for fixed inputs.

    Subclasses declare their request schema via ``interface`` and map named
    inputs to an ordered list of response fields in ``predict``.
    """

    def interface(self) -> InterfaceDescription:
        raise NotImplementedError

    def predict(self, inputs: dict) -> list[ResponseField]:
        raise NotImplementedError


Transform = Callable[[VolumeGrid], VolumeGrid]


@dataclass
class Pipeline:
    predictor: Predictor
    pre: list[Transform] = field(default_factory=list)
    post: list[Transform] = field(default_factory=list)

    @property
    def interface(self) -> InterfaceDescription:
        return self.predictor.interface()

    def run(self, req: PredictionRequest) -> tuple[list[ResponseField], PhaseTiming]:
        """Validate, then pre -> predict -> post with per-phase wall timing.

        Pre transforms apply to every volume input; post transforms apply to
        every volume output field. The request itself is never mutated.
        """
        violations = validate_request(self.interface, req)
        if violations:
            raise PipelineError(
                "validation",
                "; ".join("%s: %s" % (v.element, v.reason) for v in violations),
            )

        t0 = time.perf_counter()
        inputs = dict(req.values)
        try:
            for name, value in inputs.items():
                if isinstance(value, VolumeGrid):
                    for transform in self.pre:
                        value = transform(value)
                    inputs[name] = value
        except Exception as exc:
            raise PipelineError("preprocess", str(exc)) from exc
        t1 = time.perf_counter()

        try:
            fields = self.predictor.predict(inputs)
        except Exception as exc:
            raise PipelineError("inference", str(exc)) from exc
        t2 = time.perf_counter()

        out: list[ResponseField] = []
        try:
            for f in fields:
                if isinstance(f.payload, VolumeGrid) and self.post:
                    payload = f.payload
                    for transform in self.post:
                        payload = transform(payload)
                    f = ResponseField(f.name, f.kind, payload)
                out.append(f)
        except Exception as exc:
            raise PipelineError("postprocess", str(exc)) from exc
        t3 = time.perf_counter()

        timing = PhaseTiming(
            preprocess_s=t1 - t0, inference_s=t2 - t1, postprocess_s=t3 - t2
        )
        return out, timing


# ---------------------------------------------------------------------------
# Built-in predictors: deterministic stand-ins for served models

class EchoPredictor(Predictor):
    """Returns the uploaded volume untouched; the smoke-test service."""

    def interface(self) -> InterfaceDescription:
        return InterfaceDescription(
            service_name="echo",
            elements=(
                InterfaceElement(
                    name="image",
                    kind="volume",
                    label="Input volume",
                    constraints={"expected_modality": "any"},
                ),
            ),
        )

    def predict(self, inputs: dict) -> list[ResponseField]:
        return [ResponseField("image", "image_volume", inputs["image"])]


AUTO_THRESHOLD = -1.0  # slider sentinel: pick the threshold automatically


class ThresholdSegmenter(Predictor):
    """Single-volume intensity segmentation.

    The ``threshold_override`` slider picks the cut directly; at the
    sentinel -1 the threshold is chosen by histogram analysis.
    """

    def interface(self) -> InterfaceDescription:
        return InterfaceDescription(
            service_name="threshold_segmenter",
            elements=(
                InterfaceElement(
                    name="image",
                    kind="volume",
                    label="Input volume",
                    constraints={"expected_modality": ""},
                ),
                InterfaceElement(
                    name="threshold_override",
                    kind="scalar_slider",
                    label="Threshold (-1 = automatic)",
                    required=False,
                    constraints={"minimum": -1.0, "maximum": 1.0, "default": AUTO_THRESHOLD},
                ),
            ),
        )

    def predict(self, inputs: dict) -> list[ResponseField]:
        image: VolumeGrid = inputs["image"]
        override = float(inputs.get("threshold_override", AUTO_THRESHOLD))
        if override == AUTO_THRESHOLD:
            threshold = otsu_threshold(image)
        else:
            threshold = override
        mask = binarize(image, threshold)
        return [
            ResponseField("segmentation", "label_volume", mask),
            ResponseField("threshold_used", "scalar_measure", (threshold, "intensity")),
        ]


class MultiModalFusion(Predictor):
    """Fuses four co-registered volumes, then thresholds the fused image."""

    MODALITIES = ("flair", "t1", "t1c", "t2")

    def interface(self) -> InterfaceDescription:
        elements = [
            InterfaceElement(
                name=m,
                kind="volume",
                label="%s volume" % m.upper(),
                constraints={"expected_modality": m},
            )
            for m in self.MODALITIES
        ]
        elements.append(
            InterfaceElement(
                name="fusion",
                kind="choice",
                label="Fusion rule",
                required=False,
                constraints={"options": ["mean", "max"], "default": "mean"},
            )
        )
        return InterfaceDescription(
            service_name="multi_modal_fusion", elements=tuple(elements)
        )

    def predict(self, inputs: dict) -> list[ResponseField]:
        volumes = [inputs[m] for m in self.MODALITIES]
        first = volumes[0]
        for v in volumes[1:]:
            if v.dims != first.dims:
                raise ValueError(
                    "all modality volumes must share dims, got %s vs %s"
                    % (first.dims, v.dims)
                )
        stack = np.stack([v.data.astype(np.float32) for v in volumes])
        rule = inputs.get("fusion", "mean")
        fused_data = stack.max(axis=0) if rule == "max" else stack.mean(axis=0)
        fused = first.with_data(fused_data.astype(np.float32))
        mask = binarize(fused, otsu_threshold(fused))
        return [
            ResponseField("segmentation", "label_volume", mask),
            ResponseField("fusion_rule", "plain_text", rule),
        ]


class SimulatedComputeDelay(Predictor):
    """Wraps a predictor with a fixed inference sleep.

    Stands in for accelerator time when benchmarking latency, so the
    compute share of a round trip is stable and nonzero.
    """

    def __init__(self, inner: Predictor, seconds: float):
        self.inner = inner
        self.seconds = float(seconds)

    def interface(self) -> InterfaceDescription:
        return self.inner.interface()

    def predict(self, inputs: dict) -> list[ResponseField]:
        time.sleep(self.seconds)
        return self.inner.predict(inputs)


def builtin_predictors() -> dict[str, Predictor]:
    return {
        "echo": EchoPredictor(),
        "threshold_segmenter": ThresholdSegmenter(),
        "multi_modal_fusion": MultiModalFusion(),
    }


def builtin_pipelines(simulate_compute_s: float = 0.0) -> dict[str, Pipeline]:
    """Catalog of ready-to-serve pipelines wired with standard transforms."""
    predictors = builtin_predictors()
    if simulate_compute_s > 0:
        predictors = {
            name: SimulatedComputeDelay(p, simulate_compute_s)
            for name, p in predictors.items()
        }
    return {
        "echo": Pipeline(predictor=predictors["echo"]),
        "threshold_segmenter": Pipeline(
            predictor=predictors["threshold_segmenter"],
            pre=[znormalize],
            post=[largest_connected_component],
        ),
        "multi_modal_fusion": Pipeline(
            predictor=predictors["multi_modal_fusion"],
            pre=[znormalize],
            post=[largest_connected_component],
        ),
    }
