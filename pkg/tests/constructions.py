"""Randomized neighbouring-batch constructions for one weight column of one layer.

Sample ``i`` contributes ``u_ij = phi'_ij h_ik`` (floor-mode clipping keeps
``nu <= |h_ik| <= c``, and ``gamma_min <= phi' <= gamma_max``) and a scaled
projection ``s_i`` with ``|s_i| <= tau_B``. The column's noisy update is
Gaussian with mean ``(1/m) sum_i s_ij u_ij`` and variance
``(sigma/m)^2 sum_i u_ij^2``. The neighbour replaces sample 0 with one whose
``u~_0j^2 >= u_0j^2`` coordinate-wise.
"""

import math

import numpy as np

from pdfa.privacy import GaussianSpec, MechanismBounds


def random_bounds(rng, max_n=16) -> tuple[MechanismBounds, int]:
    while True:
        m = int(rng.choice([2, 3, 5, 8, 16, 64, 256, int(rng.integers(2, 400))]))
        n_l = int(rng.integers(1, max_n + 1))
        n_in = int(rng.integers(1, 600))
        gmax = float(rng.choice([1.0, 0.25, rng.uniform(0.1, 1.0)]))
        gmin = gmax * float(rng.uniform(0.05, 1.0) if rng.random() < 0.8 else 1.0)
        tmax = float(rng.uniform(0.2, 5.0))
        tmin = tmax * float(rng.uniform(0.02, 1.0))
        g, G = gmin * tmin, gmax * tmax
        if (m + 1) * g * g <= G * G:
            continue
        b = MechanismBounds(m=m, sigma=float(math.exp(rng.uniform(math.log(0.02), math.log(3.0)))),
                            n_l=n_l, gamma_min=gmin, gamma_max=gmax, tau_h_min=tmin,
                            tau_h_max=tmax, tau_B=float(rng.uniform(0.1, 3.0)))
        return b, n_in


def _pick(rng, lo, hi, size, extreme_p):
    vals = rng.uniform(lo, hi, size=size)
    ext = rng.random(size) < extreme_p
    vals[ext] = np.where(rng.random(ext.sum()) < 0.5, lo, hi)
    return vals


def _unit_rows(rng, m, n, tau_B):
    s = rng.normal(size=(m, n))
    norms = np.linalg.norm(s, axis=1, keepdims=True)
    radius = tau_B * np.where(rng.random((m, 1)) < 0.5, 1.0, rng.uniform(0, 1, (m, 1)))
    return s / norms * radius


def neighbouring_pair(rng, b: MechanismBounds, n_in: int, adversarial: bool = False):
    """``(P, Q)`` = (update law on D, update law on D')."""
    m, n = b.m, b.n_l
    nu, c = b.tau_h_min / math.sqrt(n_in), b.tau_h_max / math.sqrt(n_in)
    if adversarial:
        # the others and sample 0 at the smallest magnitude, the replacement at the largest
        u = np.full((m, n), b.gamma_min * nu)
        u0_new = np.full(n, b.gamma_max * c)
    else:
        p = float(rng.uniform(0, 0.7))
        u = _pick(rng, b.gamma_min, b.gamma_max, (m, n), p) * _pick(rng, nu, c, (m, n), p)
        u *= np.where(rng.random((m, n)) < 0.5, -1.0, 1.0)
        lo = np.abs(u[0])
        hi = b.gamma_max * c
        u0_new = lo + (hi - lo) * np.where(rng.random(n) < p, 1.0, rng.uniform(0, 1, n))
        u0_new *= np.where(rng.random(n) < 0.5, -1.0, 1.0)
    s = _unit_rows(rng, m, n, b.tau_B)
    s_new = _unit_rows(rng, 1, n, b.tau_B)[0]
    if adversarial or rng.random() < 0.3:
        s_new = -s[0] / max(np.linalg.norm(s[0]), 1e-300) * b.tau_B
        s[0] = -s_new
    var_scale = (b.sigma / m) ** 2
    mean = (s * u).sum(axis=0) / m
    cov = var_scale * (u ** 2).sum(axis=0)
    u2 = u.copy()
    u2[0] = u0_new
    s2 = s.copy()
    s2[0] = s_new
    mean2 = (s2 * u2).sum(axis=0) / m
    cov2 = var_scale * (u2 ** 2).sum(axis=0)
    return GaussianSpec(mean, cov), GaussianSpec(mean2, cov2)
