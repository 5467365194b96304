"""Experiment files: flat INI with one section per device.

Example::

    [experiment]
    name = dps3_improved
    protocol = DPS              ; BB84 or DPS
    scheme = IMPROVED           ; IMPROVED or CONVENTIONAL
    n_slots = 3
    trials = 1000000
    seed = 20110917
    attack_fraction = 0
    eve_analyzer = projective   ; BB84 only: projective or interferometer

    [source]
    slot_period_ns = 100
    shaping_loss = 0
    pair_rate_hz = 1e7

    [channel]
    length_km = 0
    loss_db_per_km = 0
    phase_drift_rad = 0

    [detector]
    efficiency = 1
    dark_count_prob_per_gate = 0
    jitter_sigma_ns = 0

Only ``[experiment]`` with ``protocol`` is required; everything else has the
ideal default shown. Errors carry the offending line number.
"""

from __future__ import annotations

import configparser
import re
from importlib import resources
from pathlib import Path

from .devices import ChannelConfig, DetectorConfig, SourceConfig
from .engine import ExperimentConfig, Scheme
from .errors import ConfigurationError

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")

# section -> key -> converter
SCHEMA: dict[str, dict[str, type]] = {
    "experiment": {
        "name": str,
        "protocol": str,
        "scheme": str,
        "n_slots": int,
        "trials": int,
        "seed": int,
        "attack_fraction": float,
        "eve_analyzer": str,
    },
    "source": {"slot_period_ns": float, "shaping_loss": float, "pair_rate_hz": float},
    "channel": {"length_km": float, "loss_db_per_km": float, "phase_drift_rad": float},
    "detector": {"efficiency": float, "dark_count_prob_per_gate": float, "jitter_sigma_ns": float},
}


class ConfigFileError(ConfigurationError):
    def __init__(self, source: str, line: int | None, message: str):
        self.source = source
        self.line = line
        self.message = message
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


def _line_numbers(text: str) -> dict[tuple[str, str | None], int]:
    lines: dict[tuple[str, str | None], int] = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(raw)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), number)
            continue
        m = _KEY_RE.match(raw)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), number)
    return lines


def _blame(message: str, section: str, lines: dict) -> int | None:
    """Line of the key a validation message talks about, else the section header."""
    for (sec, key), number in lines.items():
        if key is None:
            continue
        stem = re.sub(r"_(ns|hz|rad|km)$", "", key)
        if re.search(rf"\b\w*{re.escape(stem)}\b", message):
            return number
    return lines.get((section, None))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    if not text.strip():
        raise ConfigFileError(source, 1, "config file is empty")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigFileError(source, exc.lineno, "expected a [section] header") from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigFileError(source, exc.lineno, exc.message.split(": ", 1)[-1]) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigFileError(source, line, "malformed line") from None

    lines = _line_numbers(text)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigFileError(source, lines.get((section, None)), f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigFileError(source, lines.get((section, key)), f"unknown key '{key}' in [{section}]")
    if "experiment" not in parser:
        raise ConfigFileError(source, 1, "missing [experiment] section")
    if "protocol" not in parser["experiment"]:
        raise ConfigFileError(source, lines.get(("experiment", None)), "[experiment] needs a protocol")

    values: dict[str, dict] = {name: {} for name in SCHEMA}
    for section, keys in SCHEMA.items():
        if section not in parser:
            continue
        for key, conv in keys.items():
            if key not in parser[section]:
                continue
            raw = parser[section][key].strip()
            try:
                values[section][key] = conv(raw)
            except ValueError:
                raise ConfigFileError(
                    source, lines.get((section, key)), f"{key} = {raw!r} is not a valid {conv.__name__}"
                ) from None

    exp = values["experiment"]

    def build(section: str, make):
        try:
            return make()
        except (ValueError, TypeError) as exc:
            raise ConfigFileError(source, _blame(str(exc), section, lines), f"[{section}] {exc}") from None

    try:
        scheme = Scheme(exp.get("scheme", "IMPROVED").upper())
    except ValueError:
        raise ConfigFileError(source, lines.get(("experiment", "scheme")), "scheme must be IMPROVED or CONVENTIONAL") from None
    protocol = exp["protocol"].upper()
    if protocol not in ("BB84", "DPS"):
        raise ConfigFileError(source, lines.get(("experiment", "protocol")), "protocol must be BB84 or DPS")
    n_slots = exp.get("n_slots", 2 if protocol == "BB84" else 3)

    src = values["source"]
    source_cfg = build(
        "source",
        lambda: SourceConfig(
            scheme.encoder,
            n_slots,
            src.get("slot_period_ns", 100.0),
            src.get("shaping_loss", 0.0),
            src.get("pair_rate_hz", 1e7),
        ),
    )
    ch = values["channel"]
    channel_cfg = build(
        "channel",
        lambda: ChannelConfig(ch.get("length_km", 0.0), ch.get("loss_db_per_km", 0.0), ch.get("phase_drift_rad", 0.0)),
    )
    dt = values["detector"]
    detector_cfg = build(
        "detector",
        lambda: DetectorConfig(
            dt.get("efficiency", 1.0), dt.get("dark_count_prob_per_gate", 0.0), dt.get("jitter_sigma_ns", 0.0)
        ),
    )
    name = exp.get("name") or Path(source).stem
    return build(
        "experiment",
        lambda: ExperimentConfig(
            protocol,
            source_cfg,
            channel_cfg,
            detector_cfg,
            trials=exp.get("trials", 1_000_000),
            master_seed=exp.get("seed", 0),
            attack_fraction=exp.get("attack_fraction", 0.0),
            eve_analyzer=exp.get("eve_analyzer", "projective").lower(),
            name=name,
        ),
    )


def bundled_names() -> list[str]:
    files = resources.files("phaseqkd").joinpath("configs")
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".ini"))


def load_config(spec: str | Path) -> ExperimentConfig:
    """Load a config from a path, or by bundled name such as ``dps3_improved``."""
    path = Path(spec)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"), str(path))
    bundled = resources.files("phaseqkd").joinpath("configs", f"{spec}.ini")
    if bundled.is_file():
        return parse_config(bundled.read_text(encoding="utf-8"), f"{spec}.ini")
    raise ConfigFileError(str(spec), None, "no such file or bundled config")
