"""
Logging, tracing and metrics for simulator runs.

Log lines are ``event key=value`` text on the ``aaris`` logger. A bounded
buffer keeps recent records for ``failure.log``. Spans go to OTLP/HTTP only
when ``OTEL_EXPORTER_OTLP_ENDPOINT`` is set, and Prometheus collectors live
in a per-run registry written out as a textfile.
"""

import logging
import os
import urllib.parse
from collections import deque
from datetime import datetime, timezone
from pathlib import Path
from threading import Lock

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

from . import __version__

LOGGER_NAME = "aaris"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


# Log buffering
class LogBuffer:
    """Bounded in-memory copy of recent log records, dumped next to run output on failure."""

    def __init__(self, max_size: int = 1000):
        self.buffer = deque(maxlen=max_size)
        self.lock = Lock()

    def append(self, record: logging.LogRecord) -> None:
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "name": record.name,
            "message": record.getMessage(),
        }
        with self.lock:
            self.buffer.append(entry)

    def get_recent_logs(self, limit: int = 100) -> str:
        with self.lock:
            recent = list(self.buffer)[-limit:]
        return "\n".join(f"{e['timestamp']} {e['level']} {e['name']} {e['message']}" for e in recent)

    def dump(self, path: Path, limit: int = 1000) -> None:
        path.write_text(self.get_recent_logs(limit) + "\n", encoding="utf-8")


log_buffer = LogBuffer(max_size=1000)


class BufferLogHandler(logging.Handler):
    def emit(self, record):
        try:
            log_buffer.append(record)
        except Exception:
            pass  # never fail a run because the buffer refused a record


# Logging setup
def configure_logging(level: str | None = None) -> logging.Logger:
    """Install console and buffer handlers on the project logger (idempotent)."""
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel((level or os.getenv("AARIS_LOG_LEVEL", "INFO")).upper())
    if not any(isinstance(h, BufferLogHandler) for h in logger.handlers):
        logger.addHandler(BufferLogHandler())
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(console_handler)
    return logger


def _parse_otlp_headers(headers_str: str) -> dict[str, str]:
    # Supports "Authorization=Basic%20..." (URL-encoded) and "k1: v1, k2: v2".
    headers: dict[str, str] = {}
    if not headers_str:
        return headers
    if "=" in headers_str and ("%20" in headers_str or "%3D" in headers_str):
        key, value = urllib.parse.unquote(headers_str).split("=", 1)
        headers[key] = value
    elif ":" in headers_str:
        for header in headers_str.split(","):
            if ":" in header:
                key, value = header.split(":", 1)
                headers[key.strip()] = value.strip()
    return headers


# OpenTelemetry
def configure_tracing() -> None:
    """Export spans over OTLP when an endpoint is configured, else keep a local provider."""
    resource = Resource.create({"service.name": "aaris", "service.version": __version__})
    # no endpoint: spans stay in-process
    provider = TracerProvider(resource=resource)
    endpoint = os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT")
    if endpoint:
        try:
            from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter

            exporter_kwargs = {"endpoint": endpoint}
            headers = _parse_otlp_headers(os.getenv("OTEL_EXPORTER_OTLP_HEADERS", ""))
            if headers:
                exporter_kwargs["headers"] = headers
            provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(**exporter_kwargs)))
        except Exception as e:
            logging.getLogger(LOGGER_NAME).warning("tracing export disabled error=%s", e)
            provider = TracerProvider(resource=resource)
    trace.set_tracer_provider(provider)


tracer = trace.get_tracer(LOGGER_NAME)


# Prometheus metrics
class RunMetrics:
    """Prometheus collectors for one run; each run owns its registry so workers never share state."""

    def __init__(self):
        self.registry = CollectorRegistry()
        self.episodes = Counter("aaris_episodes_total", "Completed training episodes", ["baseline"], registry=self.registry)
        self.slots = Counter("aaris_slots_total", "Simulated time slots", ["baseline"], registry=self.registry)
        self.updates = Counter("aaris_agent_updates_total", "Gradient updates per agent head", ["agent"], registry=self.registry)
        self.violations = Counter("aaris_constraint_violations_total", "Constraint violations by constraint", ["constraint"], registry=self.registry)
        self.episode_ee = Gauge("aaris_episode_energy_efficiency", "Average EE of the last episode (bits/Hz/J)", ["baseline"], registry=self.registry)
        self.episode_duration = Histogram("aaris_episode_duration_seconds", "Wall-clock time per episode", ["baseline"], registry=self.registry)

    def record_violations(self, sat: list[bool]) -> None:
        for i, ok in enumerate(sat, start=1):
            if not ok:
                self.violations.labels(constraint=f"C{i}").inc()

    def write_textfile(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "metrics.prom"
        write_to_textfile(str(path), self.registry)
        return path
