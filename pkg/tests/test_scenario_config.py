import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmia.config import ExperimentConfig, dump_config, from_dict, load_config, to_dict
from mmia.errors import ConfigError, ParseError
from mmia.scenario import (ARCHS, CONSTRAINED, DATA_ONLY, DATASETS, UNRESTRICTED, all_codes,
                           parse_scenario)


def test_example_codes():
    s = parse_scenario("CRFV")
    assert s.shadow == ("C", "R") and s.target == ("F", "V")
    assert s.scenario_class == CONSTRAINED
    assert parse_scenario("FRFR").scenario_class == UNRESTRICTED
    assert parse_scenario("FVFR").scenario_class == DATA_ONLY


def test_all_36_codes():
    codes = all_codes()
    assert len(codes) == len(set(codes)) == 36
    for code in codes:
        s = parse_scenario(code)
        assert s.code == code
        same_data = code[0] == code[2]
        same_arch = code[1] == code[3]
        want = (UNRESTRICTED if same_data and same_arch else DATA_ONLY if same_data
                else CONSTRAINED)
        assert s.scenario_class == want


def test_two_letter_codes():
    s = parse_scenario("IV")
    assert s.shadow == s.target == ("I", "V") and s.code == "IVIV"


@pytest.mark.parametrize("code,pos", [("XRFR", 0), ("CXFR", 1), ("CRFQ", 3), ("cRFR", 0),
                                      ("CRF", 0), ("", 0), ("CRFRR", 0)])
def test_parse_errors_name_position(code, pos):
    with pytest.raises(ParseError) as e:
        parse_scenario(code)
    assert e.value.position == pos
    assert f"position {pos}" in str(e.value)


@given(st.text(alphabet="CFIRVX", min_size=4, max_size=4))
def test_parse_accepts_exactly_valid_codes(code):
    valid = all(c in (DATASETS if i % 2 == 0 else ARCHS) for i, c in enumerate(code))
    if valid:
        assert parse_scenario(code).code == code
    else:
        with pytest.raises(ParseError):
            parse_scenario(code)


def test_config_defaults_and_round_trip(tmp_path):
    cfg = from_dict({"name": "x"})
    assert cfg.corpus.size == 4000 and cfg.splits.n_member == 300
    assert cfg.spec.scenario_class == UNRESTRICTED
    dump_config(cfg, tmp_path / "c.yaml")
    assert to_dict(load_config(tmp_path / "c.yaml")) == to_dict(cfg)
    assert load_config(tmp_path / "c.yaml", seed=5).seed == 5


def test_unknown_keys_listed():
    with pytest.raises(ConfigError, match="target.foo"):
        from_dict({"target": {"foo": 1}})
    with pytest.raises(ConfigError, match="bogus"):
        from_dict({"bogus": 1})


def test_invalid_values():
    with pytest.raises(ParseError):
        from_dict({"scenario": "ZZZZ"})
    with pytest.raises(ConfigError):
        from_dict({"attack": {"mode": "all"}})
    with pytest.raises(ConfigError):
        from_dict({"corpus": {"size": 100}})
    with pytest.raises(ConfigError):
        from_dict({"corpus": 3})


def test_defense_active_flag():
    assert not ExperimentConfig().defense.active
    assert from_dict({"defense": {"dp": True}}).defense.active
