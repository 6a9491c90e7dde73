import logging
import tempfile
from pathlib import Path

from aaris.telemetry import LogBuffer, RunMetrics, _parse_otlp_headers, configure_logging


def test_otlp_header_formats():
    assert _parse_otlp_headers("") == {}
    assert _parse_otlp_headers("Authorization=Basic%20abc%3D") == {"Authorization": "Basic abc="}
    assert _parse_otlp_headers("x-team: sim, x-env : ci") == {"x-team": "sim", "x-env": "ci"}


def test_log_buffer_keeps_the_most_recent_records():
    buf = LogBuffer(max_size=3)
    for i in range(5):
        buf.append(logging.LogRecord("aaris.env", logging.INFO, __file__, 1, "slot=%d", (i,), None))
    lines = buf.get_recent_logs().splitlines()
    assert len(lines) == 3
    assert lines[0].endswith("INFO aaris.env slot=2")
    assert buf.get_recent_logs(limit=1).endswith("slot=4")
    with tempfile.TemporaryDirectory() as td:
        path = Path(td) / "failure.log"
        buf.dump(path)
        assert path.read_text().count("\n") == 3


def test_configure_logging_is_idempotent():
    logger = configure_logging("debug")
    count = len(logger.handlers)
    assert configure_logging("info") is logger
    assert len(logger.handlers) == count
    assert logger.level == logging.INFO


def test_run_metrics_textfile():
    metrics = RunMetrics()
    metrics.record_violations([True, True, False, True])
    metrics.episodes.labels(baseline="msat").inc()
    metrics.episode_ee.labels(baseline="msat").set(0.25)
    with tempfile.TemporaryDirectory() as td:
        text = metrics.write_textfile(Path(td) / "out").read_text()
    assert 'aaris_constraint_violations_total{constraint="C3"} 1.0' in text
    assert 'constraint="C1"' not in text
    assert 'aaris_episodes_total{baseline="msat"} 1.0' in text
    assert 'aaris_episode_energy_efficiency{baseline="msat"} 0.25' in text
