"""voxserve: volumetric image analysis served over HTTP.

Prediction endpoints wrap pre/infer/post pipelines behind a self-describing
interface; an API-key-gated registry handles announcement and discovery;
clients build requests from the server-declared schema; a shaping proxy and
driver benchmark end-to-end latency.
"""

__version__ = "0.1.0"
