"""Update rules (BP, noisy BP, DFA, ternarized DFA, photonic DFA) and the
minibatch training loop.

All update functions work on a whole minibatch at once: ``X`` holds one
sample per row and ``Y`` the matching one-hot targets. They return the weight
deltas ``dW[l] = -lr * (batch-averaged update direction)`` for every layer,
i.e. the step that plain SGD would add to the weights.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import clipping
from .clipping import ClipConfig
from .linalg import DTYPE, cosine, make_rng
from .network import Network, derivative, loss_and_error, one_hot, with_bias, accuracy
from .data import LabeledDataset as Split, minibatches
from .opu import OpuSim, ternarize

log = logging.getLogger(__name__)


class Algorithm(str, enum.Enum):
    BP = "bp"
    NOISY_BP = "noisy_bp"
    DFA = "dfa"
    TDFA = "tdfa"
    PDFA = "pdfa"  # ternarized DFA through the simulated OPU ("pdfa-sim")


def derive_seed(base: int, *tags: int) -> int:
    """Deterministic child seed for a named sub-stream of ``base``."""
    state = np.random.SeedSequence([int(base) & 0xFFFFFFFF, (int(base) >> 32) & 0xFFFFFFFF, *tags])
    return int(state.generate_state(2, np.uint64)[0] >> np.uint64(1))


@dataclass
class Seeds:
    data: int = 0
    init: int = 1
    noise: int = 2
    matrix: int = 3


@dataclass
class TrainConfig:
    algorithm: Algorithm = Algorithm.DFA
    epochs: int = 15
    batch_size: int = 256
    learning_rate: float = 0.01
    momentum: float = 0.9
    private: bool = False
    noise_sigma: float = 0.0
    ternary_threshold: float = 0.15
    per_pass_noise: bool = False
    feedback_std: float | None = None
    widths: tuple = (784, 512, 512, 10)
    hidden_activation: str = "tanh"
    clip: ClipConfig = field(default_factory=ClipConfig)
    seeds: Seeds = field(default_factory=Seeds)
    record_alignment: bool = False

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.widths = tuple(int(w) for w in self.widths)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.ternary_threshold < 0:
            raise ValueError(f"ternary_threshold must be >= 0, got {self.ternary_threshold}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if len(self.widths) < 2:
            raise ValueError("widths must list at least input and output sizes")

    @property
    def is_private(self) -> bool:
        return self.private or self.algorithm is Algorithm.NOISY_BP


class FeedbackMatrices:
    """One simulated OPU per hidden layer, projecting the output error to that layer.

    ``opus[l]`` serves weight layer ``l + 1`` (1-based) and has
    ``B`` of shape ``(n_{l+1}, n_L)``. Matrices are drawn once here and never
    resampled.
    """

    def __init__(self, widths: Sequence[int], matrix_seed: int, noise_seed: int,
                 noise_sigma: float = 0.0, entry_std: float | None = None,
                 per_pass_noise: bool = False):
        n_out = widths[-1]
        self.opus = [
            OpuSim(n_out, width, entry_std=entry_std, noise_sigma=noise_sigma,
                   matrix_seed=derive_seed(matrix_seed, layer),
                   noise_seed=derive_seed(noise_seed, layer),
                   per_pass_noise=per_pass_noise)
            for layer, width in enumerate(widths[1:-1], start=1)
        ]

    def __len__(self):
        return len(self.opus)

    def __getitem__(self, i):
        return self.opus[i]

    def digests(self) -> list:
        return [opu.matrix_digest() for opu in self.opus]


def _check_batch(net: Network, X, Y):
    X = np.asarray(X, dtype=DTYPE)
    Y = np.asarray(Y, dtype=DTYPE)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-D array")
    if Y.shape != (X.shape[0], net.widths[-1]):
        raise ValueError(f"targets have shape {Y.shape}, expected {(X.shape[0], net.widths[-1])}")
    return X, Y


def _layer_inputs(h_prev: np.ndarray, clip_cfg: ClipConfig | None, layer: int) -> np.ndarray:
    """Bias-augmented input of weight layer ``layer`` (0-based), clipped per row.

    The bias input counts as one more coordinate of the clipped vector, so the
    whole augmented row has L2 norm at most ``tau_h_max`` (or
    ``input_cap * sqrt(n_0 + 1)`` for the network input).
    """
    hb = with_bias(h_prev)
    if clip_cfg is None:
        return hb
    p = clipping.input_params(clip_cfg, hb.shape[1], is_network_input=layer == 0)
    return clipping.clip_activations(hb, p, clip_cfg.magnitude_floor_mode)


def _deltas(net: Network, trace, signals: Sequence[np.ndarray], lr: float,
            clip_cfg: ClipConfig | None) -> list:
    m = trace.h[0].shape[0]
    out = []
    for layer in range(net.n_layers):
        d = signals[layer] * derivative(net.activations[layer], trace.z[layer])
        inputs = _layer_inputs(trace.h[layer], clip_cfg, layer)
        out.append(-(lr / m) * (d.T @ inputs))
    return out


def _backprop_signals(net: Network, trace, top: np.ndarray) -> list:
    """Signals ``(W^{l+1})^T delta^{l+1}`` for every layer given the top-layer signal."""
    signals = [None] * net.n_layers
    signals[-1] = top
    delta = top * derivative(net.activations[-1], trace.z[-1])
    for layer in range(net.n_layers - 2, -1, -1):
        signals[layer] = delta @ net.weights[layer + 1][:, :-1]
        delta = signals[layer] * derivative(net.activations[layer], trace.z[layer])
    return signals


def bp_update(net: Network, X, Y, lr: float, trace=None) -> list:
    """Exact backpropagation step for the batch-mean cross-entropy."""
    X, Y = _check_batch(net, X, Y)
    trace = trace or net.forward(X)
    _, e = loss_and_error(trace.logits, Y)
    return _deltas(net, trace, _backprop_signals(net, trace, e), lr, None)


def noisy_bp_update(net: Network, clip_cfg: ClipConfig, sigma: float, X, Y, lr: float,
                    rng: np.random.Generator, trace=None) -> list:
    """Backprop where the output error is replaced by ``scale(e) + g`` once at the top.

    Layer inputs are clipped exactly as for the private DFA variants.
    """
    X, Y = _check_batch(net, X, Y)
    trace = trace or net.forward(X)
    _, e = loss_and_error(trace.logits, Y)
    top = clipping.scale(e, clip_cfg.tau_B)
    if sigma > 0:
        top = top + rng.normal(0.0, sigma, size=top.shape)
    return _deltas(net, trace, _backprop_signals(net, trace, top), lr, clip_cfg)


def _feedback_matrix(fb) -> np.ndarray:
    return fb.B if isinstance(fb, OpuSim) else np.asarray(fb, dtype=DTYPE)


def dfa_update(net: Network, feedback, X, Y, lr: float, trace=None) -> list:
    """Plain DFA: hidden layer ``l`` receives ``B^{l+1} e``; the output layer uses ``e``.

    ``feedback`` is a sequence of matrices (or ``OpuSim`` objects, used
    noiselessly) with shapes ``(n_l, n_L)`` for each hidden layer.
    """
    X, Y = _check_batch(net, X, Y)
    if len(feedback) != net.n_layers - 1:
        raise ValueError(f"need {net.n_layers - 1} feedback matrices, got {len(feedback)}")
    trace = trace or net.forward(X)
    _, e = loss_and_error(trace.logits, Y)
    signals = []
    for layer, fb in enumerate(feedback):
        B = _feedback_matrix(fb)
        if B.shape != (net.widths[layer + 1], net.widths[-1]):
            raise ValueError(f"feedback {layer} has shape {B.shape}, "
                             f"expected {(net.widths[layer + 1], net.widths[-1])}")
        signals.append(e @ B.T)
    signals.append(e)
    return _deltas(net, trace, signals, lr, None)


def _private_feedback_update(net, opus, clip_cfg, X, Y, lr, top_rng, sigma, trace,
                             threshold=None, optical=False):
    X, Y = _check_batch(net, X, Y)
    if len(opus) != net.n_layers - 1:
        raise ValueError(f"need {net.n_layers - 1} OPUs, got {len(opus)}")
    trace = trace or net.forward(X)
    _, e = loss_and_error(trace.logits, Y)
    s = clip_cfg.tau_B if clip_cfg is not None else None
    signals = []
    for layer, opu in enumerate(opus):
        if opu.out_dim != net.widths[layer + 1] or opu.in_dim != net.widths[-1]:
            raise ValueError(f"OPU {layer} maps {opu.in_dim}->{opu.out_dim}, expected "
                             f"{net.widths[-1]}->{net.widths[layer + 1]}")
        if optical:
            signals.append(opu.project_ternary(e, threshold, scale_cap=s))
        else:
            x = e if threshold is None else ternarize(e, threshold)
            signals.append(opu.project(x, scale_cap=s))
    top = e if s is None else clipping.scale(e, s)
    if sigma > 0:
        top = top + top_rng.normal(0.0, sigma, size=top.shape)
    signals.append(top)
    return _deltas(net, trace, signals, lr, clip_cfg)


def pdfa_update(net: Network, opus, clip_cfg: ClipConfig | None, sigma: float, X, Y, lr: float,
                top_rng: np.random.Generator | None = None, trace=None) -> list:
    """Private DFA step: ``(scale(B e_i) + g_i) * phi'(z_i)`` against clipped inputs.

    The hidden-layer noise comes from each OPU's own stream (its
    ``noise_sigma``); ``sigma`` is the noise added to the output-layer error,
    drawn from ``top_rng``. Passing ``clip_cfg=None`` disables clipping and
    scaling.
    """
    return _private_feedback_update(net, opus, clip_cfg, X, Y, lr, top_rng, sigma, trace)


def tdfa_update(net: Network, opus, clip_cfg: ClipConfig | None, sigma: float, threshold: float,
                X, Y, lr: float, top_rng: np.random.Generator | None = None, trace=None,
                optical: bool = False) -> list:
    """As ``pdfa_update`` but hidden layers project ``ternarize(e_i, threshold)``.

    With ``optical=True`` the projection goes through ``OpuSim.project_ternary``
    (positive and negative binary passes), which is the simulated photonic path.
    """
    return _private_feedback_update(net, opus, clip_cfg, X, Y, lr, top_rng, sigma, trace,
                                    threshold=threshold, optical=optical)


def alignment(delta_a: Sequence[np.ndarray], delta_b: Sequence[np.ndarray], layer: int) -> float:
    """Cosine similarity between the flattened deltas of ``layer`` (1-based)."""
    a, b = delta_a[layer - 1], delta_b[layer - 1]
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return cosine(a, b)


@dataclass
class RunMetrics:
    train_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    align_l2_mean: list = field(default_factory=list)
    alignment: list = field(default_factory=list)  # per step: [cos layer 1, ..., cos layer L]
    steps: int = 0
    n_train: int = 0
    max_abs_preactivation: list = field(default_factory=list)
    privacy: object = None

    CSV_COLUMNS = ("epoch", "train_loss", "val_acc", "test_acc", "align_l2_mean")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for i in range(len(self.train_loss)):
            row = (i + 1, self.train_loss[i], self.val_acc[i], self.test_acc[i], self.align_l2_mean[i])
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
        return "\n".join(lines) + "\n"

    def alignment_csv(self) -> str:
        n = len(self.alignment[0]) if self.alignment else 0
        lines = [",".join(["step"] + [f"align_l{i + 1}" for i in range(n)])]
        for step, row in enumerate(self.alignment, start=1):
            lines.append(",".join([str(step)] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"


class Trainer:
    """Holds the network, feedback OPUs, optimizer state and noise streams of one run."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.net = Network.init(cfg.widths, cfg.hidden_activation, seed=cfg.seeds.init)
        sigma = cfg.noise_sigma if cfg.is_private else 0.0
        self.sigma = sigma
        fb_std = cfg.feedback_std if cfg.feedback_std is not None else 1.0 / math.sqrt(cfg.widths[-1])
        self.feedback = FeedbackMatrices(cfg.widths, cfg.seeds.matrix, cfg.seeds.noise,
                                         noise_sigma=sigma, entry_std=fb_std,
                                         per_pass_noise=cfg.per_pass_noise)
        self.top_rng = make_rng(derive_seed(cfg.seeds.noise, 0))
        self.velocity = [np.zeros_like(W) for W in self.net.weights]
        self.max_abs_z = [0.0] * self.net.n_layers
        self.transpose_feedback = False

    def _inject_transpose(self):
        """Diagnostic mode: use ``(W^{l+1})^T`` as feedback, which makes DFA equal BP
        for a network with one hidden layer."""
        for layer, opu in enumerate(self.feedback.opus):
            Wt = self.net.weights[layer + 1][:, :-1].T
            if opu.B.shape != Wt.shape:
                raise ValueError("transpose feedback needs matching shapes")
            opu._B = np.array(Wt)

    @property
    def clip_cfg(self) -> ClipConfig | None:
        return self.cfg.clip if self.cfg.is_private else None

    def deltas(self, X, Y, trace=None) -> list:
        cfg = self.cfg
        algo = cfg.algorithm
        lr = cfg.learning_rate
        if algo in (Algorithm.BP, Algorithm.NOISY_BP):
            if cfg.is_private:
                return noisy_bp_update(self.net, cfg.clip, self.sigma, X, Y, lr, self.top_rng, trace)
            return bp_update(self.net, X, Y, lr, trace)
        if algo is Algorithm.DFA:
            if cfg.is_private:
                return pdfa_update(self.net, self.feedback, cfg.clip, self.sigma, X, Y, lr,
                                   self.top_rng, trace)
            return dfa_update(self.net, self.feedback, X, Y, lr, trace)
        return tdfa_update(self.net, self.feedback, self.clip_cfg, self.sigma, cfg.ternary_threshold,
                           X, Y, lr, self.top_rng, trace, optical=algo is Algorithm.PDFA)

    def step(self, X, Y) -> tuple[float, list | None]:
        if self.transpose_feedback:
            self._inject_transpose()
        trace = self.net.forward(X)
        for layer, z in enumerate(trace.z):
            self.max_abs_z[layer] = max(self.max_abs_z[layer], float(np.max(np.abs(z))))
        loss, _ = loss_and_error(trace.logits, Y)
        deltas = self.deltas(X, Y, trace)
        align = None
        if self.cfg.record_alignment:
            probe = bp_update(self.net, X, Y, self.cfg.learning_rate, trace)
            align = [_safe_alignment(deltas, probe, i + 1) for i in range(self.net.n_layers)]
        mu = self.cfg.momentum
        for W, v, d in zip(self.net.weights, self.velocity, deltas):
            v *= mu
            v += d
            W += v
        return loss, align


def _safe_alignment(a, b, layer) -> float:
    try:
        return alignment(a, b, layer)
    except ZeroDivisionError:
        return math.nan


def minibatch_count(n: int, m: int) -> int:
    return n // m


def train(cfg: TrainConfig, train_set: Split, val_set: Split | None = None,
          test_set: Split | None = None, trainer: Trainer | None = None):
    """Run ``cfg.epochs`` epochs of minibatch momentum SGD; returns ``(trainer, metrics)``.

    Each epoch visits a fresh permutation of the training set in batches of
    ``cfg.batch_size`` (sampling without replacement); the final short batch is
    dropped so every step uses exactly ``batch_size`` samples.
    """
    trainer = trainer or Trainer(cfg)
    num_classes = cfg.widths[-1]
    Y_all = one_hot(train_set.y, num_classes)
    order_rng = make_rng(derive_seed(cfg.seeds.data, 1))
    metrics = RunMetrics(n_train=len(train_set.y))
    for epoch in range(cfg.epochs):
        losses, l2 = [], []
        for idx in minibatches(len(train_set.y), cfg.batch_size, order_rng):
            loss, align = trainer.step(train_set.X[idx], Y_all[idx])
            losses.append(loss)
            metrics.steps += 1
            if align is not None:
                metrics.alignment.append(align)
                if len(align) > 1:
                    l2.append(align[1])
        metrics.train_loss.append(float(np.mean(losses)) if losses else math.nan)
        metrics.val_acc.append(accuracy(trainer.net, val_set.X, val_set.y) if val_set is not None else math.nan)
        metrics.test_acc.append(accuracy(trainer.net, test_set.X, test_set.y) if test_set is not None else math.nan)
        metrics.align_l2_mean.append(float(np.nanmean(l2)) if l2 and not np.all(np.isnan(l2)) else math.nan)
        log.info("epoch %d loss %.4f val %.4f test %.4f", epoch + 1, metrics.train_loss[-1],
                 metrics.val_acc[-1], metrics.test_acc[-1])
    metrics.max_abs_preactivation = list(trainer.max_abs_z)
    return trainer, metrics


def calibrated_gammas(net: Network, max_abs_z: Sequence[float]) -> tuple[list, list]:
    """Derivative bounds per layer over the pre-activation range seen in training.

    ``gamma_min`` is ``|phi'|`` at the largest observed ``|z|`` (exact for
    tanh and sigmoid, whose derivative decreases in ``|z|``); ReLU yields 0.
    """
    gmin = [act.gamma_min(r) for act, r in zip(net.activations, max_abs_z)]
    gmax = [act.gamma_max for act in net.activations]
    return gmin, gmax


def privacy_report_for_run(trainer: Trainer, metrics: RunMetrics, n_train: int, delta: float,
                           **kwargs):
    """Accountant report for a finished run.

    Gamma bounds come from the config when given, otherwise from the
    pre-activation range observed during training (recorded in the report).
    """
    from .privacy import audit_report

    cfg = trainer.cfg
    gmin, gmax = list(cfg.clip.gamma_min), list(cfg.clip.gamma_max)
    calibrated = False
    if not gmin:
        gmin, gmax = calibrated_gammas(trainer.net, trainer.max_abs_z)
        calibrated = True
    if min(gmin) <= 0:
        report = audit_report(cfg, n_train, delta, gamma_min=[1.0] * len(gmin),
                              gamma_max=[1.0] * len(gmax), **kwargs)
        report.guarantee = False
        report.eps_dp = report.eps_rdp_total = math.inf
        report.notes.append("gamma_min is 0 for some layer (derivative vanishes): no DP guarantee")
        return report
    report = audit_report(cfg, n_train, delta, gamma_min=gmin, gamma_max=gmax, **kwargs)
    if calibrated:
        report.notes.append("gamma bounds calibrated from max |z| observed during training: "
                            + ", ".join(f"{g:.6g}" for g in gmin))
    return report
