import math
import warnings

import pytest

from dynmap.config import ConfigError, SimConfig, build_config, load_config, parse_config_text


def test_defaults_and_derived():
    c = SimConfig()
    assert (c.T_t, c.r, c.n_sc, c.n_vehicles) == (0.1, 140.0, 8, 62)
    assert c.K_eff == pytest.approx(62 / 8)
    assert c.beta_eff == pytest.approx(1.9 / (62 / 8))
    assert c.delay_slots == 1 and c.n_slots == 1000
    assert c.density == pytest.approx(120.0, rel=1e-3)
    assert list(c.R_diag) == [1.18535, 1.18535, 0.09211, 0.5, 0.39, 0.01587]


def test_text_roundtrip(tmp_path):
    c = SimConfig(strategy="ETB", E_thr=3.5, n_sc=4, remote_fusion=False)
    p = tmp_path / "c.txt"
    p.write_text(c.to_text())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back, explicit = load_config(p)
    assert back.to_text() == c.to_text()
    assert math.isnan(back.K) and "E_thr" in explicit


def test_parse_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("nope = 1")
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_text("n_sc = 4\ngarbage\n", "cfg")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config_text("n_sc = four")
    assert parse_config_text("remote_fusion = yes  # comment")["remote_fusion"] is True


@pytest.mark.parametrize("bad", [{"T_t": 0.0}, {"T_d": 0.15}, {"n_sc": 60}, {"strategy": "XX"},
                                 {"congestion": "LIM"}, {"P_thr": 1.5}, {"rho_min": 0.0}])
def test_validation(bad):
    with pytest.raises(ConfigError):
        build_config(bad)


def test_unused_parameter_warns():
    with pytest.warns(UserWarning, match="E_thr"):
        cfg, _ = build_config({"strategy": "PB", "E_thr": 3.0})
    with pytest.warns(UserWarning, match="T_period"):
        build_config({"strategy": "ETB", "T_period": 0.5})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_config({"strategy": "ETB", "E_thr": 2.0})


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/dynmap.cfg")
