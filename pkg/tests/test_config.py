import os
import tempfile
from pathlib import Path

import pytest

from aaris.config import (
    db_to_amplitude,
    dbm_to_watt,
    desk_scale,
    load_config,
    parse_value,
    read_layered,
    worker_count,
)
from aaris.errors import ConfigError

REPO = Path(__file__).resolve().parent.parent


def write(td, name, text):
    path = Path(td) / name
    path.write_text(text, encoding="utf-8")
    return path


def test_empty_file_gives_reference_defaults():
    with tempfile.TemporaryDirectory() as td:
        cfg = load_config(write(td, "empty.conf", ""))
    assert cfg.env.v_max == 10
    assert cfg.env.k == 3 and cfg.env.m == 16 and cfg.env.channel.n_bs == 5
    assert cfg.env.horizon_slots == 400
    assert cfg.env.ris_power.p_c == pytest.approx(1e-4)
    assert cfg.env.a_max_ris == pytest.approx(10.0)
    assert cfg.env.qos == [2.0, 2.0, 2.0]


def test_unit_suffixes():
    assert parse_value("-10 dBm") == pytest.approx(1e-4)
    assert parse_value("5 mW") == pytest.approx(5e-3)
    assert parse_value("3 dB") == pytest.approx(10 ** 0.3)
    assert parse_value("20 dB", "env.a_max_ris") == pytest.approx(10.0)
    assert parse_value("0, 1, 2") == [0, 1, 2]
    assert parse_value("true") is True
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert db_to_amplitude(20.0) == pytest.approx(10.0)


def test_rejects_element_count_outside_standard_set():
    with tempfile.TemporaryDirectory() as td:
        path = write(td, "m10.conf", "channel.mx = 10\nchannel.my = 1\n")
        with pytest.raises(ConfigError) as e:
            load_config(path)
    assert "M=10" in str(e.value)


def test_extra_values_allowed_with_flag():
    with tempfile.TemporaryDirectory() as td:
        cfg = load_config(write(td, "m4.conf", "allow_extra_sweep_values = true\nchannel.mx = 2\nchannel.my = 2\n"))
    assert cfg.env.m == 4


def test_include_applies_before_own_keys():
    with tempfile.TemporaryDirectory() as td:
        write(td, "base.conf", "episodes = 10\nenv.v_max = 8\n")
        flat = read_layered(write(td, "top.conf", "include = base.conf\nepisodes = 20  # override\n"))
    assert flat == {"experiment.episodes": 20, "env.v_max": 8}


def test_include_cycle_rejected():
    with tempfile.TemporaryDirectory() as td:
        write(td, "a.conf", "include = b.conf\n")
        write(td, "b.conf", "include = a.conf\n")
        with pytest.raises(ConfigError):
            read_layered(Path(td) / "a.conf")


def test_errors_name_the_field():
    with tempfile.TemporaryDirectory() as td:
        with pytest.raises(ConfigError) as e:
            load_config(write(td, "bad.conf", "ris_power.nu = 2\n"))
        assert e.value.field == "env.ris_power"
        with pytest.raises(ConfigError) as e:
            load_config(write(td, "bad2.conf", "env.v_max = -1\n"))
        assert e.value.field == "env.v_max"
        with pytest.raises(ConfigError):
            load_config(write(td, "bad3.conf", "radio.power = 1\n"))
        with pytest.raises(ConfigError):
            load_config(write(td, "bad4.conf", "env.horizon_s = 30\n"))


def test_shipped_configs_load():
    reference = load_config(REPO / "configs" / "reference.conf")
    assert reference.env.bs_power.p_max == pytest.approx(dbm_to_watt(25.0))
    assert reference.env.uav_power.p_b == 79.85
    desk = load_config(REPO / "configs" / "desk.conf")
    assert (desk.env.k, desk.env.m, desk.env.channel.n_bs, desk.env.horizon_slots) == (2, 4, 2, 50)
    sweep = load_config(REPO / "configs" / "sweep_m.conf")
    assert sweep.sweep_axis == "M" and sweep.sweep_values == [4, 9, 16]


def test_desk_scale_preset():
    cfg = desk_scale(load_config())
    assert cfg.env.k == 2 and cfg.env.m == 4 and cfg.env.channel.n_bs == 2
    assert cfg.env.horizon_slots == 50 and cfg.episodes == 200
    assert cfg.env.qos == [2.0, 2.0]


def test_desk_scale_shrinks_meta_training_of_the_reference_scenario():
    reference = load_config(REPO / "configs" / "reference.conf")
    assert reference.meta.episodes_train == 2500
    cfg = desk_scale(reference)
    assert cfg.episodes == 200 and cfg.meta.episodes_train == 200
    assert cfg.meta.episodes_adapt <= 100
    assert cfg.meta.n_tasks == reference.meta.n_tasks


def test_worker_count(monkeypatch):
    monkeypatch.delenv("AARIS_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("AARIS_WORKERS", "4")
    assert worker_count() == 4
    assert os.environ["AARIS_WORKERS"] == "4"
