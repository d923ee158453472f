"""Pipeline configuration: INI file with sections, overridden by CLI flags."""
from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import UsageError

OUT_ENV = "SIGNGAN_OUT"

DEFAULTS = {
    "ingest": {"test_fraction": "0.3", "seed": "0", "per_class": "0"},
    "augment": {"multiplier": "4", "seed": "0", "policy": ""},
    "gan": {"epochs": "25", "batch_size": "64", "learning_rate": "0.0002", "beta1": "0.5",
            "latent_dim": "100", "seed": "0"},
    "sample": {"count": "200", "seed": "0"},
    "classifier": {"epochs": "15", "batch_size": "64", "seed": "0", "l1": "0", "l2": "0",
                   "pretrain_learning_rate": "0.001", "finetune_learning_rate": "0.0001"},
}


@dataclass
class PipelineConfig:
    sections: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULTS.items()})

    @classmethod
    def load(cls, path=None):
        cfg = cls()
        if path is None:
            return cfg
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise UsageError(f"malformed config file {path}: {exc}") from None
        for section in parser.sections():
            if section not in cfg.sections:
                raise UsageError(f"unknown config section [{section}] in {path}")
            for key, value in parser.items(section):
                if key not in cfg.sections[section]:
                    raise UsageError(f"unknown key {key!r} in [{section}] of {path}")
                cfg.sections[section][key] = value
        return cfg

    def override(self, section, **values):
        """Apply command-line values; ``None`` means the flag was not given."""
        for key, value in values.items():
            if value is not None:
                self.sections[section][key] = str(value)
        return self

    def get(self, section, key, kind=str):
        raw = self.sections[section][key]
        try:
            return kind(raw)
        except ValueError:
            raise UsageError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None

    def to_text(self, run=None):
        parser = configparser.ConfigParser(interpolation=None)
        sections = dict(self.sections)
        if run:
            sections["run"] = {k: str(v) for k, v in run.items()}
        for section in sorted(sections):
            parser[section] = dict(sorted(sections[section].items()))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self, run=None):
        return hashlib.sha256(self.to_text(run).encode("utf-8")).hexdigest()

    def snapshot(self, directory, run):
        """Write the resolved config plus the command's own arguments (the ``[run]``
        section) and their hash next to the command's outputs."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        digest = self.digest(run)
        (directory / "config.ini").write_text(self.to_text(run), encoding="utf-8")
        (directory / "config.sha256").write_text(digest + "\n", encoding="utf-8")
        return digest


def output_root(flag=None):
    return Path(flag or os.environ.get(OUT_ENV) or "signgan_out")
