import json

import pytest
from hypothesis import given, strategies as st

from voltail import config as cfgmod
from voltail.config import ConfigError, ExperimentConfig


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    again = cfgmod.loads(cfg.to_json())
    assert again == cfg
    assert again.digest() == cfg.digest()


@given(st.integers(0, 2 ** 31), st.sampled_from(["trading", "calendar"]),
       st.floats(1e-3, 1.0), st.lists(st.floats(1.0, 500.0), min_size=1, max_size=6))
def test_round_trip_property(seed, conv, r0, dts):
    d = {"seed": seed, "time_convention": conv, "model": {"r0": r0},
         "tails": {"dt_minutes": dts}}
    cfg = cfgmod.from_dict(d)
    assert cfgmod.loads(cfg.to_json()) == cfg
    assert cfg.tails.dt_minutes == tuple(dts)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="model"):
        cfgmod.from_dict({"model": {"AA": 1.0}})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"modle": {}})


def test_type_and_enum_errors():
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"sim": {"scheme": "rk4"}})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"time_convention": "lunar"})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"seed": "abc"})
    with pytest.raises(ConfigError):
        cfgmod.loads("[1, 2]")
    with pytest.raises(ConfigError):
        cfgmod.loads("{not json")


def test_schema_covers_every_field():
    sch = cfgmod.schema()
    for name, cls in cfgmod.SECTIONS.items():
        props = sch["properties"][name]["properties"]
        assert set(props) == {f for f in cls.__dataclass_fields__}
    top = set(sch["properties"]) - set(cfgmod.SECTIONS)
    assert top == {"time_convention", "seed", "out"}


def test_unit_conventions():
    assert cfgmod.MINUTES_PER_YEAR == {"trading": 98280, "calendar": 525600}
    cal = ExperimentConfig().replace(time_convention="calendar")
    assert cal.minutes_to_years(525600) == 1.0
    assert ExperimentConfig().minutes_to_years(98280) == 1.0


def test_digest_changes_with_content():
    a = ExperimentConfig()
    assert a.replace(seed=1).digest() != a.digest()
    assert json.loads(a.to_json())["tails"]["dt_minutes"] == [5.0, 10.0, 30.0, 60.0, 120.0]


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "nope.json")
