"""Rényi-DP accountant for DFA updates whose feedback signal carries Gaussian noise.

Per layer, each column of the weight update is a Gaussian mechanism whose
covariance depends on the data through the clipped activations and the
activation derivatives. The closed-form bounds below turn the clipping
constants, batch size and noise scale into an RDP epsilon per column; columns,
layers and steps compose additively, and the total converts to
``(epsilon, delta)``-DP.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .clipping import effective_tau

DEFAULT_ALPHAS = (1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 16.0,
                  20.0, 24.0, 32.0, 48.0, 64.0, 128.0, 256.0)


class Variant(str, enum.Enum):
    MAIN = "main"
    ALTERNATIVE = "alternative"
    EQUAL_COV = "equal_cov"
    SATURATING = "saturating"


class PreconditionError(ValueError):
    """A bound's validity condition does not hold for the given parameters."""


@dataclass(frozen=True)
class GaussianSpec:
    mean: np.ndarray
    diag_cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        cov = np.asarray(self.diag_cov, dtype=np.float64).ravel()
        if mean.shape != cov.shape:
            raise ValueError(f"mean has {mean.size} entries but covariance has {cov.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "diag_cov", cov)


@dataclass(frozen=True)
class MechanismBounds:
    m: int
    sigma: float
    n_l: int
    gamma_min: float
    gamma_max: float
    tau_h_min: float
    tau_h_max: float
    tau_B: float

    def __post_init__(self):
        if self.m < 1 or self.n_l < 1:
            raise ValueError(f"m and n_l must be >= 1, got m={self.m}, n_l={self.n_l}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        for name in ("gamma_min", "gamma_max", "tau_h_min", "tau_h_max", "tau_B"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.gamma_min > self.gamma_max:
            raise ValueError(f"gamma_min ({self.gamma_min}) exceeds gamma_max ({self.gamma_max})")
        if self.tau_h_min > self.tau_h_max:
            raise ValueError(f"tau_h_min ({self.tau_h_min}) exceeds tau_h_max ({self.tau_h_max})")


def _check_alpha(alpha: float) -> None:
    if not alpha > 1:
        raise ValueError(f"Rényi order alpha must be > 1, got {alpha}")


def renyi_gaussian(P: GaussianSpec, Q: GaussianSpec, alpha: float) -> float:
    """Exact ``D_alpha(P || Q)`` for Gaussians with diagonal covariances.

    Returns ``inf`` when ``alpha * cov_Q + (1 - alpha) * cov_P`` has a
    non-positive entry (the divergence is infinite there).
    """
    _check_alpha(alpha)
    if P.mean.shape != Q.mean.shape:
        raise ValueError(f"dimension mismatch: {P.mean.size} vs {Q.mean.size}")
    s1, s2 = P.diag_cov, Q.diag_cov
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise ValueError("variances must be strictly positive")
    mix = alpha * s2 + (1.0 - alpha) * s1
    if np.any(mix <= 0):
        return math.inf
    diff = P.mean - Q.mean
    quad = 0.5 * alpha * np.sum(diff * diff / mix)
    # log(mix / (s1^(1-a) s2^a)) = log(mix/s2) + (a-1) log(s1/s2), both O(s1 - s2)
    ratio = (s1 - s2) / s2
    log_det = np.log1p((1.0 - alpha) * ratio) + (alpha - 1.0) * np.log1p(ratio)
    return float(quad - np.sum(log_det) / (2.0 * (alpha - 1.0)))


def sensitivity_bound(b: MechanismBounds) -> float:
    """L2 sensitivity of one column update: ``(2/m) tau_B gamma_max tau_h_max / sqrt(n_l)``."""
    return 2.0 / b.m * b.tau_B * b.gamma_max * b.tau_h_max / math.sqrt(b.n_l)


def _first_term(b: MechanismBounds, alpha: float, conservative: bool) -> float:
    if b.sigma == 0:
        return math.inf
    # (G / g) * tau_B, so that G == g gives exactly tau_B and the first term equals eps_3
    ratio = (b.gamma_max * b.tau_h_max) / (b.gamma_min * b.tau_h_min) * b.tau_B
    term = 2.0 * alpha / (b.m * b.sigma ** 2) * ratio ** 2
    return term * b.n_l if conservative else term


def epsilon_pdfa(b: MechanismBounds, alpha: float, variant: Variant | str = Variant.MAIN,
                 conservative: bool = False) -> float:
    """RDP epsilon of one weight column for one step.

    ``variant`` selects the bound: ``main`` (covariance-ratio log term with
    ``(m+1)`` in the denominator), ``alternative`` (log of
    ``(m-1)/m + ratio^2/m``), ``equal_cov`` or ``saturating``.
    ``conservative`` multiplies the first term by ``n_l``.
    """
    variant = Variant(variant)
    if variant is Variant.EQUAL_COV:
        return epsilon_equal_cov(b, alpha)
    if variant is Variant.SATURATING:
        return epsilon_saturating(b, alpha)
    _check_alpha(alpha)
    g2 = (b.gamma_min * b.tau_h_min) ** 2
    G2 = (b.gamma_max * b.tau_h_max) ** 2
    gap = (b.gamma_max * b.tau_h_max - b.gamma_min * b.tau_h_min) * \
          (b.gamma_max * b.tau_h_max + b.gamma_min * b.tau_h_min)
    if variant is Variant.MAIN:
        denom = (b.m + 1) * g2 - G2
        if not denom > 0:
            raise PreconditionError(
                f"log term undefined: need (m+1)*(gamma_min*tau_h_min)^2 > (gamma_max*tau_h_max)^2, "
                f"got {(b.m + 1) * g2!r} <= {G2!r}")
        log_arg_m1 = gap / denom
    else:
        log_arg_m1 = gap / (b.m * g2)
    log_term = b.n_l * alpha / (2.0 * (alpha - 1.0)) * math.log1p(log_arg_m1)
    return _first_term(b, alpha, conservative) + log_term


def epsilon_equal_cov(b: MechanismBounds, alpha: float) -> float:
    """Bound when neighbouring covariances coincide (log term vanishes)."""
    _check_alpha(alpha)
    return _first_term(b, alpha, conservative=False)


def epsilon_saturating(b: MechanismBounds, alpha: float) -> float:
    """Equal covariances with every activation at its clipping value: ``2 alpha tau_B^2 / (m sigma^2)``."""
    _check_alpha(alpha)
    if b.sigma == 0:
        return math.inf
    return 2.0 * alpha / (b.m * b.sigma ** 2) * b.tau_B ** 2


def _columns(widths: Sequence[int], bias_columns: bool) -> list:
    return [int(n) + (1 if bias_columns else 0) for n in widths[:-1]]


def compose(eps_per_column, T: int, widths: Sequence[int], uniform: bool = False,
            bias_columns: bool = False) -> float:
    """Total RDP epsilon over ``T`` steps of a network with layer widths ``n_0..n_L``.

    ``eps_per_column`` is a scalar or one value per weight layer. By default
    the per-layer terms ``T * n_{l-1} * eps_l`` are summed; ``uniform`` uses
    ``L * T * max(n_{l-1}) * max(eps)`` instead.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    cols = _columns(widths, bias_columns)
    eps = np.broadcast_to(np.asarray(eps_per_column, dtype=np.float64), (len(cols),))
    if uniform:
        return float(len(cols) * T * max(cols) * eps.max())
    return float(sum(T * c * e for c, e in zip(cols, eps)))


def rdp_to_dp(alpha: float, eps_rdp: float, delta: float) -> float:
    _check_alpha(alpha)
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return eps_rdp + math.log(1.0 / delta) / (alpha - 1.0)


def _per_layer(bounds, n_layers: int) -> list:
    if isinstance(bounds, MechanismBounds):
        return [bounds] * n_layers
    bounds = list(bounds)
    if len(bounds) != n_layers:
        raise ValueError(f"expected {n_layers} per-layer bounds, got {len(bounds)}")
    return bounds


def total_rdp(bounds, alpha: float, T: int, widths: Sequence[int], variant=Variant.MAIN,
              conservative: bool = False, uniform: bool = False, bias_columns: bool = False):
    layers = _per_layer(bounds, len(widths) - 1)
    eps = [epsilon_pdfa(b, alpha, variant, conservative) for b in layers]
    return compose(eps, T, widths, uniform=uniform, bias_columns=bias_columns), eps


def best_alpha(bounds, T: int, widths: Sequence[int], delta: float,
               alpha_grid: Iterable[float] = DEFAULT_ALPHAS, variant=Variant.MAIN,
               conservative: bool = False, uniform: bool = False, bias_columns: bool = False):
    """Grid point minimizing the converted ``(epsilon, delta)``; returns ``(alpha, eps_dp)``.

    Orders at which a per-layer bound is undefined are skipped.
    """
    best = None
    grid = list(alpha_grid)
    if not grid:
        raise ValueError("alpha grid is empty")
    for alpha in grid:
        try:
            total, _ = total_rdp(bounds, alpha, T, widths, variant, conservative, uniform, bias_columns)
        except PreconditionError:
            continue
        eps_dp = rdp_to_dp(alpha, total, delta)
        if best is None or eps_dp < best[1]:
            best = (alpha, eps_dp)
    if best is None:
        raise PreconditionError("no alpha in the grid gives a defined bound")
    return best


@dataclass
class PrivacyReport:
    alpha: float
    eps_rdp_per_column: list
    columns: list
    layers: int
    steps: int
    eps_rdp_total: float
    delta: float
    eps_dp: float
    variant: str
    clipping_mode: str
    guarantee: bool = True
    interpretation_flags: dict = field(default_factory=dict)
    bounds: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        def finite(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            return x

        d = asdict(self)
        d["eps_rdp_total"] = finite(self.eps_rdp_total)
        d["eps_dp"] = finite(self.eps_dp)
        d["alpha"] = finite(self.alpha)
        d["eps_rdp_per_column"] = [finite(e) for e in self.eps_rdp_per_column]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        def fmt(x):
            return f"{x:.6g}" if math.isfinite(x) else "undefined (divergence)"

        lines = []
        if not self.guarantee:
            lines.append("no DP guarantee")
        lines += [
            f"variant:        {self.variant}",
            f"alpha:          {fmt(self.alpha)}",
            f"steps (T):      {self.steps}",
            f"layers:         {self.layers}  columns per layer: {self.columns}",
            "eps_rdp/column: " + ", ".join(fmt(e) for e in self.eps_rdp_per_column),
            f"eps_rdp total:  {fmt(self.eps_rdp_total)}",
            f"delta:          {self.delta:g}",
            f"eps (DP):       {fmt(self.eps_dp)}",
            f"clipping mode:  {self.clipping_mode}",
        ]
        for k, v in sorted(self.interpretation_flags.items()):
            lines.append(f"flag {k}: {v}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def layer_bounds(widths: Sequence[int], m: int, sigma: float, clip_cfg, gamma_min, gamma_max) -> list:
    """Per-layer ``MechanismBounds`` for a network trained with ``clip_cfg``.

    Layer ``l`` has ``n_l`` output rows; its clipped, bias-augmented input of
    width ``n_{l-1} + 1`` sets the enforced ``tau`` bounds.
    """
    out = []
    for layer in range(len(widths) - 1):
        tau_min, tau_max = effective_tau(clip_cfg, widths[layer] + 1, is_network_input=layer == 0)
        out.append(MechanismBounds(m=m, sigma=sigma, n_l=widths[layer + 1],
                                   gamma_min=gamma_min[layer], gamma_max=gamma_max[layer],
                                   tau_h_min=tau_min, tau_h_max=tau_max, tau_B=clip_cfg.tau_B))
    return out


def audit_report(cfg, n_train: int, delta: float, variant=Variant.MAIN,
                 alpha_grid: Iterable[float] = DEFAULT_ALPHAS, alpha: float | None = None,
                 gamma_min: Sequence[float] | None = None, gamma_max: Sequence[float] | None = None,
                 conservative: bool = False, uniform: bool = False,
                 t_interpretation: str = "steps") -> PrivacyReport:
    """Privacy report for a training configuration, without training.

    ``cfg`` is a ``TrainConfig``. Gamma bounds default to those stored in
    ``cfg.clip``. ``t_interpretation`` is ``"steps"`` (``T`` = number of
    parameter updates) or ``"epochs"``.
    """
    from .training import Algorithm

    variant = Variant(variant)
    widths = cfg.widths
    n_layers = len(widths) - 1
    per_epoch = n_train // cfg.batch_size
    if t_interpretation not in ("steps", "epochs"):
        raise ValueError(f"t_interpretation must be 'steps' or 'epochs', got {t_interpretation!r}")
    T = cfg.epochs * per_epoch if t_interpretation == "steps" else cfg.epochs
    clip_cfg = cfg.clip
    mode = "magnitude_floor" if clip_cfg.magnitude_floor_mode else "default"
    flags = {"T": t_interpretation, "conservative": conservative, "uniform": uniform,
             "bias_columns": True, "subsampling_amplification": False}
    notes = ["final short minibatch of each epoch is dropped so every step uses m samples"]
    if mode == "default":
        notes.append("default clipping does not enforce the per-coordinate lower bound the "
                     "bound assumes for signed activations; use magnitude-floor mode to enforce it")
    columns = _columns(widths, True)

    def no_guarantee(reason):
        return PrivacyReport(alpha=alpha or math.nan, eps_rdp_per_column=[math.inf] * n_layers,
                             columns=columns, layers=n_layers, steps=T, eps_rdp_total=math.inf,
                             delta=delta, eps_dp=math.inf, variant=variant.value, clipping_mode=mode,
                             guarantee=False, interpretation_flags=flags, notes=notes + [reason])

    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    sigma = cfg.noise_sigma if cfg.is_private else 0.0
    if cfg.algorithm is Algorithm.PDFA and cfg.per_pass_noise:
        sigma *= math.sqrt(2.0)
        notes.append("per-pass OPU noise: accountant uses sqrt(2)*sigma")
    if not cfg.is_private:
        return no_guarantee("run is not private (no clipping or noise)")
    if cfg.algorithm in (Algorithm.BP, Algorithm.NOISY_BP):
        return no_guarantee("the bound covers feedback-alignment updates only, not noisy backprop")
    if sigma == 0:
        return no_guarantee("sigma = 0: the bound diverges")
    if T < 1:
        return no_guarantee("no training steps")
    gmin = list(gamma_min if gamma_min is not None else clip_cfg.gamma_min)
    gmax = list(gamma_max if gamma_max is not None else clip_cfg.gamma_max)
    if len(gmin) != n_layers or len(gmax) != n_layers:
        raise ValueError(f"need gamma_min/gamma_max for each of the {n_layers} layers")
    if min(gmin) <= 0:
        raise PreconditionError("gamma_min must be > 0 for every layer (calibrate it for ReLU/tanh)")
    bounds = layer_bounds(widths, cfg.batch_size, sigma, clip_cfg, gmin, gmax)
    try:
        if alpha is None:
            alpha, _ = best_alpha(bounds, T, widths, delta, alpha_grid, variant, conservative,
                                  uniform, bias_columns=True)
        total, eps = total_rdp(bounds, alpha, T, widths, variant, conservative, uniform,
                               bias_columns=True)
    except PreconditionError as exc:
        return no_guarantee(str(exc))
    eps_dp = rdp_to_dp(alpha, total, delta)
    return PrivacyReport(alpha=alpha, eps_rdp_per_column=eps, columns=columns, layers=n_layers,
                         steps=T, eps_rdp_total=total, delta=delta, eps_dp=eps_dp,
                         variant=variant.value, clipping_mode=mode, guarantee=math.isfinite(eps_dp),
                         interpretation_flags=flags, bounds=[asdict(b) for b in bounds], notes=notes)
