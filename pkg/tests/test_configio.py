"""Config file parsing and flag-override resolution."""

import pytest

from fieldfuse.configio import ConfigError, echo_lines, load_config, resolve


def _write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text, encoding="utf-8")
    return str(p)


class TestLoadConfig:
    def test_valid_sections(self, tmp_path):
        path = _write(tmp_path, "[fit]\nengine = kernel\nseed = 3\n"
                                "[bench]\ntable = 5\n")
        cfg = load_config(path)
        assert cfg["fit"]["engine"] == "kernel"
        assert cfg["bench"]["table"] == "5"

    def test_unknown_section(self, tmp_path):
        path = _write(tmp_path, "[mystery]\nx = 1\n")
        with pytest.raises(ConfigError, match="mystery"):
            load_config(path)

    def test_unknown_key(self, tmp_path):
        path = _write(tmp_path, "[fit]\nengene = kernel\n")
        with pytest.raises(ConfigError, match="engene"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "absent.ini"))

    def test_malformed_file(self, tmp_path):
        path = _write(tmp_path, "not an ini file at all\n")
        with pytest.raises(ConfigError, match="malformed"):
            load_config(path)


class TestResolve:
    def test_flags_override_config(self):
        cfg = {"fit": {"engine": "kernel", "seed": "3"}}
        merged = resolve(cfg, "fit", {"engine": "basis", "seed": None})
        assert merged["engine"] == "basis"
        assert merged["seed"] == "3"

    def test_missing_section_is_empty(self):
        assert resolve({}, "fit", {"engine": None}) == {}

    def test_echo_is_sorted_and_prefixed(self):
        lines = echo_lines("fit", {"b": 1, "a": 2})
        assert lines[0] == "# resolved [fit]"
        assert lines[1:] == ["# a = 2", "# b = 1"]
