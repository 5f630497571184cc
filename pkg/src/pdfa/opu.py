"""Simulated optical processing unit: a fixed Gaussian random projection whose
readout is corrupted by additive Gaussian noise of tunable scale.

The real device only accepts binary inputs, so signed errors are first
ternarized and projected as two binary passes (positive and negative part)
whose results are subtracted.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .clipping import scale
from .linalg import DTYPE, make_rng


def ternarize(e, t: float) -> np.ndarray:
    """Map values ``> t`` to 1, ``< -t`` to -1 and everything else to 0."""
    if t < 0:
        raise ValueError(f"ternarization threshold must be >= 0, got {t}")
    e = np.asarray(e, dtype=DTYPE)
    return np.where(e > t, 1.0, np.where(e < -t, -1.0, 0.0))


class OpuSim:
    """Fixed random matrix ``B`` (``out_dim x in_dim``) plus a noise stream.

    Parameters
    ----------
    in_dim, out_dim : int
        Input and output dimensions of the projection.
    entry_std : float, optional
        Standard deviation of the i.i.d. Gaussian entries of ``B``.
        Defaults to ``1 / sqrt(out_dim)``.
    noise_sigma : float
        Standard deviation of the additive readout noise.
    matrix_seed, noise_seed : int
        Seeds for the matrix draw and for the noise stream.
    per_pass_noise : bool
        If True, ``project_ternary`` adds one noise draw per binary pass
        (total variance ``2 sigma^2``) instead of a single draw.
    """

    def __init__(self, in_dim: int, out_dim: int, entry_std: float | None = None,
                 noise_sigma: float = 0.0, matrix_seed: int = 0, noise_seed: int = 1,
                 per_pass_noise: bool = False):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"OPU dimensions must be >= 1, got in={in_dim}, out={out_dim}")
        if entry_std is None:
            entry_std = 1.0 / math.sqrt(out_dim)
        if not entry_std > 0:
            raise ValueError(f"entry_std must be > 0, got {entry_std}")
        if noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.entry_std = float(entry_std)
        self.noise_sigma = float(noise_sigma)
        self.matrix_seed = int(matrix_seed)
        self.noise_seed = int(noise_seed)
        self.per_pass_noise = per_pass_noise
        B = make_rng(matrix_seed).normal(0.0, entry_std, size=(out_dim, in_dim))
        B.setflags(write=False)
        self._B = B
        self._noise_rng = make_rng(noise_seed)

    @property
    def B(self) -> np.ndarray:
        return self._B

    def matrix_digest(self) -> str:
        return hashlib.sha256(self._B.tobytes()).hexdigest()

    @property
    def effective_sigma(self) -> float:
        """Noise std seen by a ternary projection (``sqrt(2) sigma`` with per-pass noise)."""
        return self.noise_sigma * (math.sqrt(2.0) if self.per_pass_noise else 1.0)

    def _noise(self, shape) -> np.ndarray:
        if self.noise_sigma == 0:
            return np.zeros(shape, dtype=DTYPE)
        return self._noise_rng.normal(0.0, self.noise_sigma, size=shape)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim not in (1, 2) or x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input with last dimension {self.in_dim}, got shape {x.shape}")
        return x

    def noiseless(self, x) -> np.ndarray:
        """``B x`` for a vector, or ``X B^T`` row-wise for a batch."""
        x = self._check(x)
        return x @ self._B.T

    def project(self, x, scale_cap: float | None = None) -> np.ndarray:
        """``B x + g`` with a fresh ``g ~ N(0, sigma^2 I)`` per call (per row for batches).

        With ``scale_cap`` the noiseless projection is first shrunk to L2 norm
        at most ``scale_cap``; the noise itself is never rescaled.
        """
        x = self._check(x)
        out = x @ self._B.T
        if scale_cap is not None:
            out = scale(out, scale_cap)
        return out + self._noise(out.shape)

    def project_ternary(self, e, t: float, scale_cap: float | None = None) -> np.ndarray:
        """Project ``ternarize(e, t)`` as ``B e_+ - B e_-`` plus readout noise."""
        tern = ternarize(self._check(e), t)
        pos = (tern > 0).astype(DTYPE)
        neg = (tern < 0).astype(DTYPE)
        out = pos @ self._B.T - neg @ self._B.T
        if scale_cap is not None:
            out = scale(out, scale_cap)
        noise = self._noise(out.shape)
        if self.per_pass_noise:
            noise = noise + self._noise(out.shape)
        return out + noise
