"""Run configuration: flat key = value text grouped into sections.

The file format is INI-style (configparser) with one section per subcommand
plus an optional [run] section for global settings.  Unknown sections or keys
are rejected so that typos fail loudly instead of silently using defaults.
Command-line flags override config values; every run echoes the resolved
configuration it actually used.
"""

from __future__ import annotations

import configparser


class ConfigError(ValueError):
    """Unknown section/key or unreadable config file."""


KNOWN_KEYS = {
    "run": {"threads", "seed"},
    "ingest": {"tweets", "stations", "lexicon", "out_dir"},
    "fit": {
        "engine", "observations", "out", "seed",
        "bin_count", "max_lag",
        "anchor_grid", "anchor_lo", "anchor_hi",
        "temporal_anchors", "window_lo", "window_hi",
        "max_iterations", "tolerance",
    },
    "interpolate": {
        "params", "observations", "binary", "with_binary", "out", "grid",
        "sensor_t", "p_exceed", "p_not", "sigma2", "moment_mode",
    },
    "depend": {"input", "out", "copula", "copula_basis", "copula_penalty"},
    "bench": {"table", "quick", "seed", "out", "replications", "n_sites"},
}


def load_config(path) -> dict:
    """Parse and validate a config file into {section: {key: str value}}."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    out = {}
    for section in parser.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(
                f"unknown section [{section}]; expected one of "
                f"{sorted(KNOWN_KEYS)}"
            )
        allowed = KNOWN_KEYS[section]
        values = dict(parser.items(section))
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ConfigError(
                f"unknown keys {unknown} in section [{section}]; "
                f"allowed: {sorted(allowed)}"
            )
        out[section] = values
    return out


def resolve(config: dict, section: str, flag_values: dict) -> dict:
    """Merge one config section with flag overrides (flags win).

    `flag_values` maps key to the parsed flag value or None when the flag was
    not given.  Returns string-or-native values; callers coerce types.
    """
    merged = dict(config.get(section, {}))
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    return merged


def echo_lines(section: str, resolved: dict) -> list:
    """Stable key = value echo of the configuration a run actually used."""
    lines = [f"# resolved [{section}]"]
    for key in sorted(resolved):
        lines.append(f"# {key} = {resolved[key]}")
    return lines
