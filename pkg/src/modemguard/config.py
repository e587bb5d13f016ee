"""Run configuration: one JSON file, one section per pipeline stage.

Unknown sections or keys are rejected and every error names the offending
field as ``section.key``, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .nn.model import ModelConfig
from .nn.train import TrainConfig
from .preprocess import PreprocessConfig
from .service import ActionPolicy
from .sim.scenario import SimConfig

SECTIONS = ("sim", "operator", "preprocess", "model", "train", "policy", "eval")


@dataclass(frozen=True)
class OperatorConfig:
    """Simulated engineers whose restarts become the training labels."""

    enabled: bool = True
    lag_bounds: tuple[int, int] = (540, 720)


@dataclass(frozen=True)
class EvalConfig:
    n_seeds: int = 20
    first_seed: int = 100
    duration: int = 43200
    n_vessels: int = 4
    oracle: bool = False

    @property
    def seeds(self) -> list[int]:
        return list(range(self.first_seed, self.first_seed + self.n_seeds))


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split_ratio: float = 0.8
    policy: ActionPolicy = field(default_factory=ActionPolicy)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train["split_ratio"] = self.split_ratio
        return {
            "sim": self.sim.to_dict(),
            "operator": {"enabled": self.operator.enabled, "lag_bounds": list(self.operator.lag_bounds)},
            "preprocess": self.preprocess.to_dict(),
            "model": asdict(self.model),
            "train": train,
            "policy": asdict(self.policy),
            "eval": asdict(self.eval),
        }

    def eval_sim(self) -> SimConfig:
        return replace(self.sim, duration=self.eval.duration, n_vessels=self.eval.n_vessels).validate()


def _coerce(section: str, key: str, default: Any, value: Any) -> Any:
    where = f"{section}.{key}"
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            return value
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                raise ValueError(f"expected a list of {len(default)} numbers")
            return tuple(_coerce(section, key, d, v) for d, v in zip(default, value))
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError("expected an integer")
            if isinstance(value, str):
                raise ValueError("expected an integer")
            return int(value)
        if isinstance(default, float) or default is None:
            if value is None and default is None:
                return None
            if isinstance(value, (bool, str)):
                raise ValueError("expected a number")
            return float(value)
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}", field=where) from None


def _build(cls, section: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object", field=section)
    base = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field", field=f"{section}.{key}")
        kwargs[key] = _coerce(section, key, getattr(base, key), value)
    return cls(**kwargs)


def _validate_model(m: ModelConfig) -> ModelConfig:
    for name in ("input_size", "seq_len", "hidden_size", "fc1_out"):
        if getattr(m, name) < 1:
            raise ConfigError(f"model.{name} must be >= 1", field=f"model.{name}")
    if m.input_size != 5:
        raise ConfigError("model.input_size must be 5 (four radio features plus modem slot)",
                          field="model.input_size")
    return m


def _validate_eval(e: EvalConfig) -> EvalConfig:
    if e.n_seeds < 0:
        raise ConfigError("eval.n_seeds must be >= 0", field="eval.n_seeds")
    if e.duration < 0:
        raise ConfigError("eval.duration must be >= 0", field="eval.duration")
    if e.n_vessels < 0:
        raise ConfigError("eval.n_vessels must be >= 0", field="eval.n_vessels")
    return e


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", field="")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(f"{key}: unknown section", field=key)
    sim = SimConfig.from_dict(data.get("sim", {}))
    op = _build(OperatorConfig, "operator", data.get("operator", {}))
    lo, hi = op.lag_bounds
    if not (0 <= lo <= hi):
        raise ConfigError("operator.lag_bounds: need 0 <= low <= high", field="operator.lag_bounds")
    pre = PreprocessConfig.from_dict(data.get("preprocess", {}))
    model_doc = data.get("model", {})
    if isinstance(model_doc, dict) and "seq_len" not in model_doc:
        # window length is a preprocessing choice; the model follows unless set explicitly
        model_doc = {**model_doc, "seq_len": pre.seq_len}
    model = _validate_model(_build(ModelConfig, "model", model_doc))
    train_doc = dict(data.get("train", {}))
    ratio = _coerce("train", "split_ratio", 0.8, train_doc.pop("split_ratio", 0.8))
    if not (0.0 < ratio < 1.0):
        raise ConfigError("train.split_ratio must be in (0, 1)", field="train.split_ratio")
    train = _build(TrainConfig, "train", train_doc).validate()
    policy = _build(ActionPolicy, "policy", data.get("policy", {})).validate()
    ev = _validate_eval(_build(EvalConfig, "eval", data.get("eval", {})))
    if model.seq_len != pre.seq_len:
        raise ConfigError(f"model.seq_len ({model.seq_len}) must equal preprocess.seq_len ({pre.seq_len})",
                          field="model.seq_len")
    return RunConfig(sim, op, pre, model, train, ratio, policy, ev)


def parse_override(text: str) -> tuple[str, str, Any]:
    """``section.key=value`` with a JSON value; bare words are taken as strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value", field=text)
    path, raw = text.split("=", 1)
    if path.count(".") != 1:
        raise ConfigError(f"override {path!r} must be section.key", field=path)
    section, key = path.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def load(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    """Read the config file (or defaults), apply ``section.key=value`` overrides, validate."""
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", field="") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}", field="") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", field="")
    for item in overrides:
        section, key, value = parse_override(item)
        sect = data.setdefault(section, {})
        if not isinstance(sect, dict):
            raise ConfigError(f"{section}: expected an object", field=section)
        sect[key] = value
    return from_dict(data)
