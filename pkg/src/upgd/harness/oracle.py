"""Brute-force reference for small problems: grid search over uplink powers.

For every power vector on a simplex grid the receivers are the MMSE
solution, so the search covers the joint problem up to grid resolution.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .. import fbl
from ..dcore import ContractError
from ..fbl import InfeasibleError

MAX_K = 3
CHUNK = 20000


@dataclass
class OracleResult:
    wsr: float
    q: np.ndarray
    W: np.ndarray


def default_resolution(K):
    return 200 if K <= 2 else 50


def simplex_grid(K, res):
    """Integer points ``m`` with ``m >= 0`` and ``sum(m) <= res``, as an (M, K) array."""
    pts = [m for m in itertools.product(range(res + 1), repeat=K) if sum(m) <= res]
    return np.array(pts, dtype=float)


def _score(q, real1):
    """WSR and feasibility of each candidate row of ``q`` (M, K)."""
    sys = real1.sys
    wsr = np.full(len(q), -np.inf)
    for a in range(0, len(q), CHUNK):
        qq = q[a:a + CHUNK]
        H = np.broadcast_to(real1.H, (len(qq),) + real1.H.shape)
        real = fbl.Realization(H, sys)
        W = fbl.mmse_beamformer(qq, real)
        g = fbl.sinr(qq, W, real)
        R = fbl.fbl_rate(g, sys.theta)
        ok = np.all(R >= sys.rate_target, axis=-1)
        wsr[a:a + CHUNK] = np.where(ok, R @ sys.alpha_vec, -np.inf)
    return wsr


def oracle_wsr(real, res=None):
    """Best WSR over a power grid with MMSE receivers, refined once locally.

    ``real`` holds a single channel (K, Nt).  Raises :class:`InfeasibleError`
    when no grid point meets every rate target.
    """
    sys = real.sys
    K = sys.K
    if real.H.ndim != 2:
        raise ContractError("oracle_wsr takes one realization at a time")
    if K > MAX_K:
        raise ContractError(f"exhaustive grid limited to K <= {MAX_K}")
    res = res or default_resolution(K)
    step = sys.P / res
    q = simplex_grid(K, res) * step
    wsr = _score(q, real)
    best = int(np.argmax(wsr))
    if not np.isfinite(wsr[best]):
        raise InfeasibleError("no power allocation on the grid meets the rate targets")

    offs = np.array(list(itertools.product(range(-10, 11), repeat=K)), dtype=float) * (step / 10)
    local = q[best] + offs
    local = local[np.all(local >= 0, axis=1) & (local.sum(axis=1) <= sys.P * (1 + 1e-12))]
    lw = _score(local, real)
    j = int(np.argmax(lw))
    qbest, wbest = (local[j], lw[j]) if lw[j] > wsr[best] else (q[best], wsr[best])
    W = fbl.mmse_beamformer(qbest, real)
    return OracleResult(float(wbest), qbest, W)
