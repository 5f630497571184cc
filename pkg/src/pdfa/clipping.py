"""Clipping operators that bound the quantities entering a private update.

Three elementary operators act on vectors (or on each row of a 2-D batch):

* ``clip(v, c)``  caps every coordinate's magnitude at ``c``;
* ``scale(v, s)`` rescales ``v`` so its L2 norm is at most ``s``;
* ``offset(v, nu)`` adds ``nu`` to every coordinate.

Per layer of width ``n`` the caps are ``c = tau_h_max / sqrt(n)``,
``nu = tau_h_min / sqrt(n)`` and ``s = tau_B``, so that the clipped activation
vector has L2 norm at most ``tau_h_max``. The raw network input may carry its
own coordinate cap (``ClipConfig.input_cap``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import DTYPE


@dataclass(frozen=True)
class ClipConfig:
    tau_h_min: float = 0.1
    tau_h_max: float = 1.0
    tau_B: float = 1.0
    gamma_min: Sequence[float] = field(default_factory=tuple)
    gamma_max: Sequence[float] = field(default_factory=tuple)
    magnitude_floor_mode: bool = False
    input_cap: float | None = 1.0

    def __post_init__(self):
        if self.input_cap is not None and not self.input_cap > 0:
            raise ValueError(f"input_cap must be > 0 or None, got {self.input_cap}")
        for name in ("tau_h_min", "tau_h_max", "tau_B"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.tau_h_min > self.tau_h_max:
            raise ValueError(f"tau_h_min ({self.tau_h_min}) exceeds tau_h_max ({self.tau_h_max})")
        object.__setattr__(self, "gamma_min", tuple(float(g) for g in self.gamma_min))
        object.__setattr__(self, "gamma_max", tuple(float(g) for g in self.gamma_max))
        if len(self.gamma_min) != len(self.gamma_max):
            raise ValueError("gamma_min and gamma_max must list the same number of layers")
        for lo, hi in zip(self.gamma_min, self.gamma_max):
            if not (lo > 0 and hi > 0):
                raise ValueError("gamma bounds must be > 0")
            if lo > hi:
                raise ValueError(f"gamma_min ({lo}) exceeds gamma_max ({hi})")


@dataclass(frozen=True)
class LayerClipParams:
    c: float
    nu: float
    s: float


def clip(v, c: float) -> np.ndarray:
    if not c > 0:
        raise ValueError(f"clip threshold must be > 0, got {c}")
    v = np.asarray(v, dtype=DTYPE)
    return np.clip(v, -c, c)


def scale(v, s: float) -> np.ndarray:
    """Shrink ``v`` (each row, for a 2-D batch) to L2 norm at most ``s``.

    The zero vector maps to itself.
    """
    if not s > 0:
        raise ValueError(f"scale cap must be > 0, got {s}")
    v = np.asarray(v, dtype=DTYPE)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    # factor = min(s, |v|) / |v|, written so that |v| = 0 gives factor 1
    factor = np.where(norms > s, s / np.where(norms > 0, norms, 1.0), 1.0)
    return v * factor


def offset(v, nu: float) -> np.ndarray:
    return np.asarray(v, dtype=DTYPE) + nu


def layer_params(cfg: ClipConfig, n_l: int) -> LayerClipParams:
    if n_l < 1:
        raise ValueError(f"layer width must be >= 1, got {n_l}")
    root = math.sqrt(n_l)
    return LayerClipParams(c=cfg.tau_h_max / root, nu=cfg.tau_h_min / root, s=cfg.tau_B)


def input_params(cfg: ClipConfig, n_in: int, is_network_input: bool = False) -> LayerClipParams:
    """Clip parameters for a layer input of width ``n_in``.

    Hidden activations use ``layer_params``. The raw network input instead
    keeps its own per-coordinate cap ``cfg.input_cap`` (pixels already lie in
    [0, 1]) unless that is None, in which case it is treated like any layer.
    """
    p = layer_params(cfg, n_in)
    if is_network_input and cfg.input_cap is not None:
        return LayerClipParams(c=max(cfg.input_cap, p.nu), nu=p.nu, s=p.s)
    return p


def effective_tau(cfg: ClipConfig, n_in: int, is_network_input: bool = False) -> tuple[float, float]:
    """``(tau_min, tau_max)`` L2 bounds actually enforced on an input of width ``n_in``."""
    p = input_params(cfg, n_in, is_network_input)
    root = math.sqrt(n_in)
    return p.nu * root, p.c * root


def clip_activations(h, p: LayerClipParams, magnitude_floor: bool = False) -> np.ndarray:
    """``clip_c(offset_nu(h))``, optionally with every magnitude floored at ``nu``.

    In floor mode a coordinate that lands inside ``(-nu, nu)`` is pushed out to
    ``+-nu`` keeping its sign (zero goes to ``+nu``), so ``nu <= |out| <= c``.
    """
    out = clip(offset(h, p.nu), p.c)
    if magnitude_floor:
        floor = min(p.nu, p.c)
        sign = np.where(out < 0, -1.0, 1.0)
        out = sign * np.maximum(np.abs(out), floor)
    return out
