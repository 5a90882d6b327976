"""Configuration loading: checked-in defaults, user file, environment overrides.

Format is line-oriented ``key = value`` under ``[section]`` headers. Environment
variables of the form ``FASTNOSE_<SECTION>_<KEY>`` take precedence over files.
"""

from __future__ import annotations

import configparser
import os
from importlib import resources
from pathlib import Path

from .errors import ProtocolError

ENV_PREFIX = "FASTNOSE"
SECTIONS = ("plant", "controller", "protocol", "ml")


def _defaults_text() -> str:
    return resources.files("fastnose.data").joinpath("defaults.cfg").read_text()


class Config:
    """Typed view over the merged configuration."""

    def __init__(self, parser: configparser.ConfigParser):
        self._parser = parser

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None) -> "Config":
        """Defaults, then optional user file, then environment overrides."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.read_string(_defaults_text())
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ProtocolError(f"config file not found: {path}")
            parser.read(path)
        env = os.environ if env is None else env
        for name, value in env.items():
            if not name.startswith(ENV_PREFIX + "_"):
                continue
            rest = name[len(ENV_PREFIX) + 1 :]
            section, _, key = rest.partition("_")
            section = section.lower()
            if section in SECTIONS and key:
                parser.set(section, key.lower(), value)
        return cls(parser)

    def get(self, section: str, key: str) -> str:
        try:
            return self._parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError) as exc:
            raise ProtocolError(f"missing config key [{section}] {key}") from exc

    def getfloat(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def getint(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def getlist(self, section: str, key: str) -> list[str]:
        raw = self.get(section, key)
        return [item.strip() for item in raw.split(",") if item.strip()]

    def getmap(self, section: str, key: str) -> dict[str, float]:
        out = {}
        for item in self.getlist(section, key):
            name, _, value = item.partition(":")
            out[name.strip()] = float(value)
        return out

    def set(self, section: str, key: str, value) -> None:
        self._parser.set(section, key, str(value))

    def dump(self) -> str:
        """Render the merged configuration back to the file format."""
        lines = []
        for section in self._parser.sections():
            lines.append(f"[{section}]")
            for key, value in self._parser.items(section):
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)


def load_config(path: str | Path | None = None) -> Config:
    return Config.load(path)
