"""Central finite-difference check of the analytic BPTT gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, init_params, loss_and_grads

# Denominator floor for the relative error so exactly-zero or tiny
# gradients are compared on an absolute scale.
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    n_draws: int
    n_checked: int


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), REL_FLOOR)


def numeric_grads(params, Xn, y, h: float = 1e-5):
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            lp, _ = loss_and_grads(params, Xn, y)
            flat[k] = old - h
            lm, _ = loss_and_grads(params, Xn, y)
            flat[k] = old
            gflat[k] = (lp - lm) / (2.0 * h)
        out[name] = g
    return out


def gradcheck(seed: int = 0, n_draws: int = 10, batch: int = 4, h: float = 1e-5,
              config: ModelConfig = ModelConfig()) -> GradCheckResult:
    """Compare analytic and central-difference gradients over random parameter/input draws."""
    rng = np.random.default_rng(seed)
    worst, worst_name, n_checked = 0.0, "", 0
    for _ in range(n_draws):
        params = init_params(config, rng)
        Xn = rng.normal(size=(batch, config.input_size, config.seq_len))
        y = rng.integers(0, 2, batch).astype(float)
        _, analytic = loss_and_grads(params, Xn, y)
        numeric = numeric_grads(params, Xn, y, h)
        for name in analytic:
            err = relative_error(analytic[name], numeric[name])
            n_checked += err.size
            if err.max() > worst:
                worst, worst_name = float(err.max()), name
    return GradCheckResult(worst, worst_name, n_draws, n_checked)
