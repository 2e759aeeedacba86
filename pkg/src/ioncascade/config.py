"""Run configuration: one JSON document with a section per module."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
from scipy.constants import atomic_mass

from .chain import BeamProfile, IonChain, TrapConfig
from .compiler import CompilerOptions
from .experiment import NoiseModel
from .pulses import SearchSettings

DEFAULTS_NAME = "paper.defaults"

SECTIONS = {
    "chain": {"trap", "beam", "mode_index", "eta", "reach", "side"},
    "pulses": {"search"},
    "compiler": {f.name for f in fields(CompilerOptions)} - {"search"},
    "experiment": {"noise", "max_trajectories"},
    "characterization": {"rb", "bell", "qpt"},
    "cli": {"seed", "shots", "out"},
}


class ConfigError(ValueError):
    pass


def _read_defaults() -> dict:
    text = resources.files("ioncascade").joinpath("data", DEFAULTS_NAME).read_text()
    return json.loads(text)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def _build(cls, data: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        """Shipped defaults, updated by the file at ``path`` and then ``overrides``."""
        data = _read_defaults()
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
            if not isinstance(user, dict):
                raise ConfigError(f"{path}: top level must be an object")
            data = _merge(data, user)
        if overrides:
            data = _merge(data, overrides)
        cfg = cls(data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for section, keys in SECTIONS.items():
            if section not in self.data:
                raise ConfigError(f"missing section {section!r}")
            extra = set(self.data[section]) - keys
            if extra:
                raise ConfigError(f"section {section!r}: unknown keys {sorted(extra)}")
        extra = set(self.data) - set(SECTIONS)
        if extra:
            raise ConfigError(f"unknown sections {sorted(extra)}")
        # building every object runs their own checks
        self.trap()
        self.beam()
        self.compiler_options()
        self.noise()

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def trap(self, n_ions: int | None = None) -> TrapConfig:
        """Trap section with frequencies in Hz and mass in atomic mass units."""
        d = dict(self.data["chain"]["trap"])
        if n_ions is not None:
            d["n_ions"] = n_ions
        try:
            if "axial_freq_hz" in d:
                d["axial_freq"] = 2 * np.pi * d.pop("axial_freq_hz")
            if "radial_freqs_hz" in d:
                d["radial_freqs"] = tuple(2 * np.pi * f for f in d.pop("radial_freqs_hz"))
            if "mass_amu" in d:
                d["mass"] = d.pop("mass_amu") * atomic_mass
        except TypeError as exc:
            raise ConfigError(f"chain.trap: {exc}") from exc
        return _build(TrapConfig, d, "chain.trap")

    def beam(self) -> BeamProfile:
        d = dict(self.data["chain"]["beam"])
        if "rabi_hz" in d:
            d["rabi"] = 2 * np.pi * d.pop("rabi_hz")
        if "detuning_hz" in d:
            d["detuning"] = 2 * np.pi * d.pop("detuning_hz")
        return _build(BeamProfile, d, "chain.beam")

    def chain(self, n_ions: int | None = None) -> IonChain:
        c = self.data["chain"]
        try:
            return IonChain(self.trap(n_ions), self.beam(), c["mode_index"], c["eta"], c["reach"], c["side"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"chain: {exc}") from exc

    def compiler_options(self) -> CompilerOptions:
        d = dict(self.data["compiler"])
        if d.get("ms_angles") is not None:
            d["ms_angles"] = tuple(d["ms_angles"])
        d["search"] = _build(SearchSettings, self.data["pulses"]["search"], "pulses.search")
        return _build(CompilerOptions, d, "compiler")

    def noise(self, ideal: bool = False) -> NoiseModel:
        if ideal:
            return NoiseModel.ideal()
        return _build(NoiseModel, self.data["experiment"]["noise"], "experiment.noise")

    @property
    def max_trajectories(self) -> int | None:
        return self.data["experiment"]["max_trajectories"]

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.data.get(section, {}).get(key, default)
