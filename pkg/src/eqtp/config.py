"""Run configuration: line-delimited key=value files, unknown keys rejected."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import tensorio
from .nets import ModelConfig, ModelError

DEMO_COUNTS = (1, 10, 100)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "block-insertion"
    dataset: str = ""
    demos: int = 10
    steps: int = 2000
    batch_size: int = 1
    lr: float = 1e-4
    eval_interval: int = 1000
    eval_episodes: int = 20
    seed: int = 0
    out: str = "run"
    augment: str = "auto"          # auto | on | off  (auto: on for the baseline only)
    baseline: bool = False
    stop_score: float = 0.0        # stop once an evaluation reaches this score (0 disables)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        for name in ("steps", "batch_size", "eval_interval", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.demos not in DEMO_COUNTS:
            raise ConfigError(f"demos must be one of {DEMO_COUNTS}, got {self.demos}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.augment not in ("auto", "on", "off"):
            raise ConfigError(f"augment must be auto, on or off, got {self.augment!r}")
        if not 0.0 <= self.stop_score <= 1.0:
            raise ConfigError("stop_score must lie in [0, 1]")
        if self.model.baseline != self.baseline:
            object.__setattr__(self, "model", replace(self.model, baseline=self.baseline))
        if self.task == "goal-insertion" and not self.model.goal:
            object.__setattr__(self, "model", replace(self.model, goal=True))

    @property
    def augmentation(self) -> bool:
        if self.augment == "auto":
            return self.baseline
        return self.augment == "on"

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            if f.name == "model":
                continue
            out[f.name] = str(getattr(self, f.name))
        for k, v in self.model.to_dict().items():
            if k in ("baseline",):
                continue
            out["model." + k] = v
        return out

    @classmethod
    def from_dict(cls, d: dict[str, str], source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw: dict = {}
        model: dict[str, str] = {}
        for k, v in d.items():
            if k.startswith("model."):
                model[k[6:]] = v
                continue
            if k not in types or k == "model":
                raise ConfigError(f"{source}: unknown config key {k!r}")
            t = types[k]
            try:
                if t in ("bool", bool):
                    if v.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(v)
                    kw[k] = v.lower() in ("true", "1")
                elif t in ("int", int):
                    kw[k] = int(v)
                elif t in ("float", float):
                    kw[k] = float(v)
                else:
                    kw[k] = v
            except ValueError as e:
                raise ConfigError(f"{source}: bad value for {k}: {v!r}") from e
        try:
            if "baseline" in kw:
                model.setdefault("baseline", str(kw["baseline"]))
            kw["model"] = ModelConfig.from_dict(model)
        except (ModelError, ValueError) as e:
            raise ConfigError(f"{source}: {e}") from e
        return cls(**kw)


def load_config(path: str | Path, **overrides) -> RunConfig:
    try:
        d = tensorio.read_keyvalue(path)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    d.update({k: str(v) for k, v in overrides.items()})
    return RunConfig.from_dict(d, str(path))


def save_config(path: str | Path, cfg: RunConfig) -> None:
    tensorio.write_keyvalue(path, cfg.to_dict())
