"""Versioned JSON model files.

Floats are written with ``repr`` precision, so a load after save reproduces
every parameter bit for bit.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from .model import FORMAT_VERSION, ModelBundle, ModelConfig, NormStats

_LAYOUT = {
    "lstm": (("w_ih", "lstm.w_ih"), ("w_hh", "lstm.w_hh"), ("b", "lstm.b")),
    "fc1": (("w", "fc1.w"), ("b", "fc1.b")),
    "fc2": (("w", "fc2.w"), ("b", "fc2.b")),
}


def to_json(bundle: ModelBundle) -> str:
    c = bundle.config
    doc = {
        "version": bundle.version,
        "config": {"input_size": c.input_size, "seq_len": c.seq_len,
                   "hidden_size": c.hidden_size, "fc1_out": c.fc1_out},
        "norm": {"mean": bundle.norm.mean.tolist(), "std": bundle.norm.std.tolist()},
        "threshold": float(bundle.threshold),
    }
    for group, entries in _LAYOUT.items():
        doc[group] = {key: bundle.params[name].tolist() for key, name in entries}
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    Path(path).write_text(to_json(bundle))


def _array(doc: dict, group: str, key: str, shape: tuple[int, ...]) -> np.ndarray:
    where = f"{group}.{key}"
    try:
        raw = doc[group][key]
    except (KeyError, TypeError):
        raise ModelFormatError(f"missing field {where}", field=where) from None
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ModelFormatError(f"{where} is not a numeric array", field=where) from None
    if arr.shape != shape:
        raise ModelFormatError(f"{where} has shape {arr.shape}, expected {shape}", field=where)
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"{where} contains non-finite values", field=where)
    return arr


def from_json(text: str, expected: ModelConfig | None = None) -> ModelBundle:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON (truncated?): {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}, expected {FORMAT_VERSION}",
                               field="version")
    try:
        cfg_doc = doc["config"]
        config = ModelConfig(**{k: int(cfg_doc[k]) for k in ("input_size", "seq_len", "hidden_size", "fc1_out")})
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad config block: {exc}", field="config") from None
    if expected is not None:
        for name in ("input_size", "seq_len", "hidden_size", "fc1_out"):
            got, want = getattr(config, name), getattr(expected, name)
            if got != want:
                raise ModelFormatError(f"config.{name} is {got}, expected {want}", field=f"config.{name}")
    shapes = config.shapes()
    params = {}
    for group, entries in _LAYOUT.items():
        for key, name in entries:
            params[name] = _array(doc, group, key, shapes[name])
    mean = _array(doc, "norm", "mean", (config.input_size,))
    std = _array(doc, "norm", "std", (config.input_size,))
    if np.any(std <= 0):
        raise ModelFormatError("norm.std must be positive", field="norm.std")
    threshold = doc.get("threshold")
    if not isinstance(threshold, (int, float)) or not math.isfinite(threshold):
        raise ModelFormatError("threshold must be a finite number", field="threshold")
    return ModelBundle(config, params, NormStats(mean, std), float(threshold), FORMAT_VERSION)


def load_model(path: str | Path, expected: ModelConfig | None = None) -> ModelBundle:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"model file is not text: {exc}") from None
    return from_json(text, expected)
