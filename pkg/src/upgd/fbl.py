"""Finite-blocklength downlink MISO model: rates, SINR, MMSE receivers, channels.

Channels are held as a ``K x N_t`` complex matrix ``H`` whose row ``k`` is
``h_k^H``.  Beamformers are a ``K x N_t`` matrix whose row ``k`` is
``w_k^T``, so ``h_k^H w_j = (H @ W.T)[k, j]``.  Every array function accepts
extra leading batch axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from . import dcore
from .dcore import ContractError, NumericError


class InfeasibleError(ValueError):
    """The rate target cannot be met."""


@dataclass(frozen=True)
class SystemParams:
    K: int = 2
    Nt: int = 4
    P: float = 10 ** 1.5
    sigma: float = 1.0
    n: int = 128
    D: float = 256.0
    eps: float = 1e-5
    alpha: tuple = None

    def __post_init__(self):
        if self.K < 1 or self.Nt < 1:
            raise ContractError("K and Nt must be positive")
        if self.alpha is None:
            object.__setattr__(self, "alpha", (1.0 / self.K,) * self.K)
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if not self.P > 0 or not self.sigma > 0:
            raise ContractError("P and sigma must be positive")
        if not 0 < self.eps < 0.5:
            raise ContractError("eps must lie in (0, 0.5)")
        if self.n < 1 or self.D < 0:
            raise ContractError("need n >= 1 and D >= 0")
        if len(self.alpha) != self.K or min(self.alpha) < 0:
            raise ContractError("alpha must be K nonnegative weights")

    @classmethod
    def from_snr(cls, snr_db, **kw):
        """Noise power fixed to 1, so ``P = 10**(snr_db/10)``."""
        return cls(P=10 ** (snr_db / 10), sigma=1.0, **kw)

    @property
    def theta(self):
        """Dispersion penalty ``Q^{-1}(eps)/sqrt(n)``."""
        return qfunc_inv(self.eps) / math.sqrt(self.n)

    @property
    def rate_target(self):
        """Per-UE rate requirement in nats/symbol."""
        return self.D / self.n * math.log(2.0)

    @property
    def alpha_vec(self):
        return np.asarray(self.alpha)


@dataclass(frozen=True)
class Geometry:
    d0: float = 50.0
    rho_exp: float = 3.0
    du: float = 120.0
    dc: float = 140.0

    def __post_init__(self):
        if not (0 < self.du <= self.dc) or not self.d0 > 0:
            raise ContractError("need 0 < du <= dc and d0 > 0")


@dataclass
class Realization:
    H: np.ndarray
    sys: SystemParams
    seed: object = None
    distances: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.complex128)
        if self.H.shape[-2:] != (self.sys.K, self.sys.Nt):
            raise ContractError(f"H has shape {self.H.shape}, expected (..., {self.sys.K}, {self.sys.Nt})")
        if not np.all(np.isfinite(self.H)):
            raise ContractError("channel contains non-finite entries")

    @property
    def Hbar(self):
        return self.H / self.sys.sigma

    def __len__(self):
        return self.H.shape[0] if self.H.ndim == 3 else 1

    def subset(self, idx):
        """Rows ``idx`` of a batched realization."""
        d = None if self.distances is None else self.distances[idx]
        return Realization(self.H[idx], self.sys, self.seed, d)

    def permuted(self, perm):
        """Relabel UEs so that new UE ``i`` is old UE ``perm[i]``."""
        perm = np.asarray(perm)
        sys = replace(self.sys, alpha=tuple(np.asarray(self.sys.alpha)[perm]))
        d = None if self.distances is None else self.distances[..., perm]
        return Realization(self.H[..., perm, :], sys, self.seed, d)


# --- scalar rate model ------------------------------------------------------

def qfunc_inv(p):
    """Inverse Gaussian tail function: ``z`` with ``P(N(0,1) > z) = p``."""
    if not 0 < p < 1:
        raise ValueError(f"qfunc_inv needs 0 < p < 1, got {p}")
    return math.sqrt(2.0) * float(special.erfcinv(2.0 * p))


def dispersion(gamma):
    g = np.asarray(gamma, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("dispersion needs gamma >= 0")
    out = 1.0 - 1.0 / (1.0 + g) ** 2
    return float(out) if out.ndim == 0 else out


def fbl_rate(gamma, theta):
    g = np.asarray(gamma, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("fbl_rate needs gamma >= 0")
    out = np.log1p(g) - theta * np.sqrt(dispersion(g))
    return float(out) if np.ndim(out) == 0 else out


def nu3(sys):
    """Smallest SINR on the increasing branch of R with ``R = (D/n) ln 2``."""
    return rate_threshold(sys.theta, sys.rate_target)


def rate_threshold(theta, target):
    """SINR at which ``ln(1+g) - theta*sqrt(V(g))`` climbs through ``target``."""
    grid = np.concatenate([[0.0], np.logspace(-12, 9, 4000)])
    r = fbl_rate(grid, theta)
    i0 = int(np.argmin(r))
    if r[-1] < target:
        raise InfeasibleError(f"rate target {target:.4g} exceeds R(1e9) = {r[-1]:.4g}")
    above = np.nonzero(r[i0:] >= target)[0]
    j = i0 + int(above[0])
    if r[j] == target:
        return float(grid[j])
    lo, hi = grid[max(j - 1, i0)], grid[j]
    # bisect to the float resolution of the bracket
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fbl_rate(mid, theta) < target:
            lo = mid
        else:
            hi = mid
    root = hi if abs(fbl_rate(hi, theta) - target) <= abs(fbl_rate(lo, theta) - target) else lo
    if abs(fbl_rate(root, theta) - target) > 1e-10:
        raise NumericError("nu3 bisection did not reach tolerance")
    return float(root)


# --- per-realization quantities ---------------------------------------------

def gamma_tilde(real):
    """Interference-free SNR ``P ||h_k||^2 / sigma^2`` per UE."""
    return real.sys.P * np.sum(np.abs(real.H) ** 2, axis=-1) / real.sys.sigma ** 2


def cross_gains(real, W):
    """``G[..., l, k] = |hbar_l^H w_k|^2``."""
    return np.abs(real.Hbar @ np.swapaxes(W, -1, -2)) ** 2


def sinr(q, W, real):
    """Uplink SINR of every UE; differentiable in ``q`` when ``q`` is a Tensor.

    ``gamma_k = q_k G_kk / (sum_{l != k} q_l G_lk + 1)``.
    """
    G = cross_gains(real, W)
    K = G.shape[-1]
    diag = np.diagonal(G, axis1=-2, axis2=-1)
    off = G * (1.0 - np.eye(K))
    if isinstance(q, dcore.Tensor):
        qrow = dcore.reshape(q, q.shape[:-1] + (1, K))
        interf = dcore.reshape(qrow @ off, q.shape)
        return q * diag / (interf + 1.0)
    q = np.asarray(q, dtype=np.float64)
    interf = np.einsum("...l,...lk->...k", q, off)
    return q * diag / (interf + 1.0)


def mmse_beamformer(q, real):
    """Unit-norm MMSE receivers ``(I + sum_l q_l hbar_l hbar_l^H)^{-1} hbar_k``."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0):
        raise ContractError("powers must be nonnegative")
    Hb = real.Hbar
    hcols = np.conj(Hb)                              # row k is hbar_k^T
    Nt = Hb.shape[-1]
    # sum_l q_l hbar_l hbar_l^H = hcols^T diag(q) conj(hcols)
    C = np.eye(Nt) + np.einsum("...lm,...l,...ln->...mn", hcols, q, Hb)
    sol = np.linalg.solve(C, np.swapaxes(hcols, -1, -2))   # column k is unnormalised w_k
    W = np.swapaxes(sol, -1, -2)
    norms = np.linalg.norm(W, axis=-1, keepdims=True)
    if np.any(norms < 1e-300):
        raise NumericError("MMSE receiver norm underflowed")
    return W / norms


def channel_gen(seed, sys, geo):
    """Draw one realization: area-uniform UE distances in the annulus, Rayleigh fading."""
    rng = np.random.default_rng(seed)
    r2 = rng.uniform(geo.du ** 2, geo.dc ** 2, size=sys.K)
    d = np.sqrt(r2)
    rho = path_gain(d, geo)
    ht = (rng.standard_normal((sys.K, sys.Nt)) + 1j * rng.standard_normal((sys.K, sys.Nt))) / np.sqrt(2.0)
    h = np.sqrt(rho)[:, None] * ht
    return Realization(np.conj(h), sys, seed, d)


def path_gain(d, geo):
    return 1.0 / (1.0 + (np.asarray(d) / geo.d0) ** geo.rho_exp)


# --- objective --------------------------------------------------------------

def wsr(x, sys):
    """Weighted sum rate ``sum_k alpha_k (ln(1+phi_k) - theta t_k)`` of stacked ``x``.

    ``x`` is a ``(..., 5K)`` array or Tensor laid out as ``[q; phi; varphi; psi; t]``.
    """
    K = sys.K
    alpha = sys.alpha_vec
    if isinstance(x, dcore.Tensor):
        phi = x[..., K:2 * K]
        t = x[..., 4 * K:]
        if np.any(phi.data <= -1):
            raise ValueError("wsr needs phi > -1")
        return dcore.tsum((dcore.log(phi + 1.0) - t * sys.theta) * alpha, axis=-1)
    x = np.asarray(x, dtype=np.float64)
    phi, t = x[..., K:2 * K], x[..., 4 * K:]
    if np.any(phi <= -1):
        raise ValueError("wsr needs phi > -1")
    out = np.sum(alpha * (np.log1p(phi) - sys.theta * t), axis=-1)
    return float(out) if out.ndim == 0 else out
