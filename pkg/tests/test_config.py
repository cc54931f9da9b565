import pytest

from cvchain import config as cfg
from cvchain.config import ConfigError, load_yaml, parse_yaml


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_yaml(tmp_path / "absent.yaml")
    assert "no such file" in str(exc.value)


def test_syntax_error_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_yaml("a: 1\nb: [1, 2\nc: 3\n", "x.yaml")
    assert exc.value.source == "x.yaml" and exc.value.line is not None


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        parse_yaml("- 1\n- 2\n")


def test_nested_field_line():
    root = parse_yaml("outer:\n  inner:\n    value: -3\n", "n.yaml")
    with pytest.raises(ConfigError) as exc:
        root.section("outer").section("inner").get("value", cfg.non_negative_int)
    assert (exc.value.line, exc.value.field) == (3, "outer.inner.value")


def test_list_item_path():
    root = parse_yaml("items:\n  - {a: 1}\n  - {a: x}\n")
    with pytest.raises(ConfigError) as exc:
        root.sections("items")[1].get("a", cfg.real)
    assert exc.value.field == "items[1].a" and exc.value.line == 3


def test_unknown_key():
    with pytest.raises(ConfigError) as exc:
        parse_yaml("good: 1\nbda: 2\n").check_keys({"good"})
    assert exc.value.field == "bda" and exc.value.line == 2


def test_required_and_default():
    root = parse_yaml("a: 1\n")
    assert root.get("b", cfg.real, 2.5) == 2.5
    with pytest.raises(ConfigError):
        root.get("b", cfg.real)


@pytest.mark.parametrize("conv,bad", [
    (cfg.positive_int, 0), (cfg.non_negative_int, True), (cfg.real, "1"), (cfg.positive_real, 0.0),
    (cfg.boolean, 1), (cfg.string, ""), (cfg.lonlat, [200, 0]), (cfg.lonlat, [1]),
])
def test_converters_reject(conv, bad):
    with pytest.raises(ValueError):
        conv(bad)
