"""Desk-scale driving telemetry pipeline.

Simulated vehicle (OBD-II over an ELM327-style ASCII framing) and wearable
data sources feed a fog gateway that aggregates, timestamps, encrypts and
uploads per-trip traces to a content-addressed cloud store. A benchmark
harness measures OBD polling throughput and latency against configurable
reply-delay models.
"""

__version__ = "0.1.0"
