"""Run configuration: validation, canonical hashing, and named profiles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

from .engines import EngineSpec
from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    """Optional synthetic-landscape section: when present, the run uses the
    deterministic offline engines instead of live ones."""

    keywords: dict[str, float]
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not self.keywords:
            raise ConfigError("synthetic.keywords must be non-empty")
        for kw, w in self.keywords.items():
            if not kw:
                raise ConfigError("synthetic keyword must be a non-empty string")
            if not 0.0 <= w <= 1.0:
                raise ConfigError(f"synthetic keyword weight out of [0,1]: {kw}={w}")
        if self.noise_sigma < 0:
            raise ConfigError("synthetic.noise_sigma cannot be negative")


@dataclass(frozen=True)
class RunConfig:
    trainset_path: str
    valset_path: str
    initial_prompt: str = ""
    trainset_size: int = 50
    batch_size: int = 3
    epochs: int = 1
    seed: int = 0
    forward_engine: EngineSpec = field(
        default_factory=lambda: EngineSpec(model="gpt-4o-mini", temperature=0.0)
    )
    backward_engine: EngineSpec = field(
        default_factory=lambda: EngineSpec(model="gpt-4o", temperature=1.0)
    )
    tlr: bool = False
    tdo: bool = False
    tregu: bool = False
    tcl: bool = False
    tsa: bool = False
    tmnt: bool = False
    tlrd: Optional[int] = None
    tlr_r: int = 4
    tlr_mode: str = "instruction_only"
    tdo_p: float = 0.5
    tsa_t0: float = 0.05
    tsa_alpha: float = 0.9
    tcl_margin: float = 0.05
    eval_every: int = 1
    synthetic: Optional[SyntheticSpec] = None

    def validate(self) -> "RunConfig":
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.trainset_size < 1:
            raise ConfigError("trainset_size must be at least 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")
        if not 0.0 <= self.tdo_p <= 1.0:
            raise ConfigError("tdo_p must lie in [0, 1]")
        if self.tsa_t0 <= 0:
            raise ConfigError("tsa_t0 must be positive")
        if not 0.0 < self.tsa_alpha <= 1.0:
            raise ConfigError("tsa_alpha must lie in (0, 1]")
        if self.tcl_margin < 0:
            raise ConfigError("tcl_margin cannot be negative")
        if self.tlrd is not None and self.tlrd < 1:
            raise ConfigError("tlrd (initial learning rate) must be at least 1")
        if self.tlr and self.tlr_r < 1:
            raise ConfigError("tlr_r must be at least 1")
        if self.tlr_mode not in ("instruction_only", "hard_reject"):
            raise ConfigError(f"unknown tlr_mode: {self.tlr_mode!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if self.synthetic is not None:
            self.synthetic.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(raw)
        for key in ("forward_engine", "backward_engine"):
            if key in data and isinstance(data[key], dict):
                try:
                    data[key] = EngineSpec(**data[key])
                except TypeError as exc:
                    raise ConfigError(f"bad {key} section: {exc}") from exc
        if isinstance(data.get("synthetic"), dict):
            try:
                data["synthetic"] = SyntheticSpec(**data["synthetic"])
            except TypeError as exc:
                raise ConfigError(f"bad synthetic section: {exc}") from exc
        try:
            config = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return config.validate()

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw)


def config_hash(config: RunConfig) -> str:
    """Canonical digest over the full config; stored in checkpoints so a
    resume with different settings is refused."""
    payload = json.dumps(config.to_dict(), sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# Published hyperparameter profiles per benchmark. Keys mirror RunConfig.
TABLE8_PROFILES: dict[str, dict[str, Any]] = {
    "biggsm": {
        "trainset_size": 200,
        "batch_size": 3,
        "epochs": 1,
        "tlr": False,
        "tdo": False,
        "tmnt": False,
        "tregu": True,
        "tcl": True,
        "tsa": True,
        "tlrd": 60,
    },
    "mgsm": {
        "trainset_size": 50,
        "batch_size": 2,
        "epochs": 1,
        "tlr": False,
        "tdo": False,
        "tmnt": False,
        "tregu": True,
        "tcl": True,
        "tsa": True,
        "tlrd": 25,
    },
    "bbh": {
        "trainset_size": 50,
        "batch_size": 3,
        "epochs": 2,
        "tlr": False,
        "tdo": False,
        "tmnt": False,
        "tregu": True,
        "tcl": True,
        "tsa": True,
        "tlrd": 30,
    },
}


def table8_profile(name: str, **overrides: Any) -> RunConfig:
    """Build a validated RunConfig from a named benchmark profile."""
    key = name.lower()
    if key not in TABLE8_PROFILES:
        raise ConfigError(
            f"unknown profile {name!r}; choose from {sorted(TABLE8_PROFILES)}"
        )
    data: dict[str, Any] = {
        "trainset_path": "",
        "valset_path": "",
        **TABLE8_PROFILES[key],
        **overrides,
    }
    return RunConfig.from_dict(data)
