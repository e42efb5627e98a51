import dataclasses

import pytest

from campusmob.config import ConfigError, default_config, dump_config, load_config


def test_base_case_values():
    cfg = default_config()
    assert (cfg.inner_radius_km, cfg.outer_radius_km) == (2.0, 25.0)
    assert cfg.flexible_time_min == 15 and cfg.stop_time_s == 60
    assert cfg.student_seats == 5 and cfg.shuttle_seats == 6
    assert cfg.student_co2_g_per_km == 126 and cfg.student_fuel_l_per_km == 0.048
    assert cfg.shuttle_fuel_l_per_km == 0.038 and cfg.shuttle_co2_g_per_l == 2578.95
    assert cfg.student_fuel_price_eur_per_l == 1.719 == cfg.shuttle_fuel_price_eur_per_l
    assert cfg.accepted_walking_distance_m == 1200 and cfg.ridesharing_log_base == 1.4
    assert cfg.fleet_size == 250 and cfg.ridepooling_log_base == 1.2
    assert cfg.n_segments == 18 and cfg.segment_exclusion_radius_m == 3000
    assert cfg.n_agents == 6524 and len(cfg.campuses) == 4


def test_replace_validates():
    cfg = default_config()
    assert cfg.replace(fleet_size=50).fleet_size == 50
    with pytest.raises(ConfigError, match="inner_radius_km"):
        cfg.replace(inner_radius_km=30.0)
    with pytest.raises(ConfigError, match="fleet_sze"):
        cfg.replace(fleet_sze=10)


def test_unknown_key_in_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(dump_config(default_config()).replace("fleet_size", "fleet_sze"), encoding="utf-8")
    with pytest.raises(ConfigError, match="fleet_sze"):
        load_config(p)


def test_missing_base_key(tmp_path):
    text = "\n".join(l for l in dump_config(default_config()).splitlines() if not l.startswith("shuttle_seats"))
    p = tmp_path / "c.ini"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError, match="shuttle_seats"):
        load_config(p)


def test_round_trip_and_digest(tmp_path):
    cfg = default_config()
    p = tmp_path / "c.ini"
    p.write_text(dump_config(cfg), encoding="utf-8")
    back = load_config(p)
    # relative paths resolve against the config file's directory
    assert back.output_dir == str(tmp_path / "results")
    assert dataclasses.replace(back, output_dir=cfg.output_dir) == cfg
    assert cfg.replace(fleet_size=10).digest != cfg.digest


def test_minimal_file_falls_back_to_defaults(tmp_path):
    base_keys = ("inner_radius_km", "outer_radius_km", "flexible_time_min", "stop_time_min", "student_seats",
                 "student_fuel_l_per_km", "student_co2_g_per_km", "student_fuel_price_eur_per_l",
                 "shuttle_seats", "shuttle_fuel_l_per_km", "shuttle_co2_g_per_l",
                 "shuttle_fuel_price_eur_per_l", "accepted_walking_distance_m", "ridesharing_log_base",
                 "fleet_size", "ridepooling_log_base", "n_segments", "segment_exclusion_radius_m")
    keep = [l for l in dump_config(default_config()).splitlines()
            if l.startswith("[") or l.split(" = ")[0] in base_keys + ("lat", "lon", "share")]
    p = tmp_path / "c.ini"
    p.write_text("\n".join(keep) + "\n", encoding="utf-8")
    got = load_config(p)
    assert dataclasses.replace(got, output_dir="results") == default_config()


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/c.ini")


def test_bad_type():
    with pytest.raises(ConfigError, match="expected int"):
        default_config().replace(fleet_size="many")


def test_unknown_mode():
    with pytest.raises(ConfigError, match="unknown mode"):
        default_config().replace(modes="everybodydrives, teleport")
