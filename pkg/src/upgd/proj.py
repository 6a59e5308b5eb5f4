"""Constraint handling for the per-layer power-allocation problem.

The decision vector is ``x = [q; phi; varphi; psi; t]`` (length ``5K``).
Constraints split into a projectable set (bounds on each block plus the
power budget) and a coupled set that is only penalized:

    phi_k <= sinr_k,   sinr_k <= varphi_k,   V(varphi_k) <= psi_k,   sqrt(psi_k) <= t_k
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dcore, fbl
from .dcore import ContractError, Tensor

BLOCKS = ("q", "phi", "varphi", "psi", "t")


def block(x, name, K):
    i = BLOCKS.index(name)
    return x[..., i * K:(i + 1) * K]


def stack(q, phi, varphi, psi, t):
    parts = (q, phi, varphi, psi, t)
    if any(isinstance(p, Tensor) for p in parts):
        return dcore.concat(parts, axis=-1)
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=-1)


def permute_x(x, perm, K):
    """Apply the same UE relabelling to each of the five blocks."""
    x = np.asarray(x)
    idx = np.concatenate([b * K + np.asarray(perm) for b in range(5)])
    return x[..., idx]


@dataclass
class C1Spec:
    nu3: float
    gamma_tilde: np.ndarray      # (..., K)
    P: float

    @classmethod
    def from_realization(cls, real):
        return cls(fbl.nu3(real.sys), fbl.gamma_tilde(real), real.sys.P)

    @property
    def infeasible(self):
        """Per-UE flag: the SINR floor exceeds the interference-free SNR."""
        return self.nu3 > self.gamma_tilde

    def subset(self, idx):
        return C1Spec(self.nu3, self.gamma_tilde[idx], self.P)

    def permuted(self, perm):
        return C1Spec(self.nu3, self.gamma_tilde[..., perm], self.P)


@dataclass
class C2Evaluator:
    real: fbl.Realization
    W: np.ndarray


# --- generic POCS step ------------------------------------------------------

def pocs(x, h, xi, grad_h=None):
    """Project ``x`` onto ``{h <= xi}`` with one gradient-direction step.

    ``grad_h`` defaults to the reverse-mode gradient of ``h``.  For affine
    ``h`` this is the exact Euclidean projection onto the halfspace.
    """
    x = np.asarray(x, dtype=np.float64)
    val = h(x)
    val = float(val.data if isinstance(val, Tensor) else val)
    if val <= xi:
        return x
    if grad_h is None:
        (g,) = dcore.grad(lambda v: dcore.as_tensor(h(v)), x)
    else:
        g = np.asarray(grad_h(x), dtype=np.float64)
    nrm2 = float(g @ g)
    if nrm2 == 0.0:
        raise ContractError("constraint gradient vanishes at an infeasible point")
    return x + (xi - val) / nrm2 * g


# --- the projectable set ----------------------------------------------------

def _power_active_set(q, P):
    """Mask of coordinates kept positive by the projection onto {q >= 0, sum q <= P}.

    Returns ``(mask, shift_applies)`` per row.  Rows already feasible after
    clipping at zero keep ``shift_applies = False``.
    """
    qpos = np.maximum(q, 0.0)
    shift = qpos.sum(axis=-1) > P
    mask = q > 0
    for _ in range(q.shape[-1] + 1):
        cnt = mask.sum(axis=-1)
        tau = (np.where(mask, q, 0.0).sum(axis=-1) - P) / np.maximum(cnt, 1)
        new = mask & (q - tau[..., None] > 0)
        if np.array_equal(new, mask):
            break
        mask = new
    return mask, shift


def _rounding_trim(q, P):
    """Offsets that bring float row sums of ``q`` to at most ``P``.

    The shifted rows sum to ``P`` only up to rounding; the excess is taken
    off the largest entry so that the computed sum never exceeds ``P``.
    """
    flat = q.reshape(-1, q.shape[-1])
    c = np.zeros_like(flat)
    for r in np.flatnonzero(flat.sum(axis=-1) > P):
        v = flat[r].copy()
        j = int(np.argmax(v))
        for _ in range(64):
            excess = v.sum() - P
            if excess <= 0:
                break
            v[j] = max(np.nextafter(v[j], -np.inf), v[j] - excess)
        c[r] = flat[r] - v
    return c.reshape(q.shape)


def project_power(q, P):
    """Euclidean projection of each row of ``q`` onto ``{q >= 0, sum(q) <= P}``."""
    qd = q.data if isinstance(q, Tensor) else np.asarray(q, dtype=np.float64)
    mask, shift = _power_active_set(qd, P)
    clipped = dcore.clip(q, lo=0.0)
    if not np.any(shift):
        return clipped if isinstance(q, Tensor) else clipped.data
    m = mask.astype(float)
    cnt = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    qt = dcore.as_tensor(q)
    tau = (dcore.tsum(qt * m, axis=-1) - P) / cnt[..., 0]
    shifted = (qt - dcore.reshape(tau, tau.shape + (1,))) * m
    s = shift[..., None].astype(float)
    out = shifted * s + clipped * (1.0 - s)
    out = out - _rounding_trim(out.data, P)
    return out if isinstance(q, Tensor) else out.data


def project_c1(x, spec):
    """Map ``x`` onto the projectable constraint set.

    Bounds on ``phi``, ``varphi`` and ``psi`` are independent coordinate
    clips; the ``q`` block gets the exact projection onto the capped simplex.
    ``t`` passes through.  Works on arrays and on tape Tensors.
    """
    K = spec.gamma_tilde.shape[-1]
    if x.shape[-1] != 5 * K:
        raise ContractError(f"x has length {x.shape[-1]}, expected {5 * K}")
    gt = spec.gamma_tilde
    q = project_power(block(x, "q", K), spec.P)
    phi = dcore.clip(block(x, "phi", K), lo=spec.nu3)
    varphi = dcore.clip(block(x, "varphi", K), hi=gt)
    psi = dcore.clip(block(x, "psi", K), lo=fbl.dispersion(spec.nu3), hi=fbl.dispersion(gt))
    t = block(x, "t", K)
    if isinstance(x, Tensor):
        return stack(q, phi, varphi, psi, t)
    return stack(q, phi.data, varphi.data, psi.data, t)


def c1_residuals(x, spec, skip_infeasible=False):
    """Positive parts of every projectable constraint (zero when satisfied).

    A UE flagged in ``spec.infeasible`` has an empty psi interval;
    ``skip_infeasible`` zeroes those two residuals.
    """
    K = spec.gamma_tilde.shape[-1]
    x = np.asarray(x)
    q, phi, varphi, psi = (block(x, b, K) for b in BLOCKS[:4])
    gt = spec.gamma_tilde
    r = [
        spec.nu3 - phi,
        varphi - gt,
        fbl.dispersion(spec.nu3) - psi,
        psi - fbl.dispersion(gt),
        (q.sum(axis=-1) - spec.P)[..., None],
        -q,
    ]
    if skip_infeasible:
        bad = np.broadcast_to(spec.infeasible, psi.shape)
        r[2] = np.where(bad, 0.0, r[2])
        r[3] = np.where(bad, 0.0, r[3])
    return np.concatenate([np.maximum(v, 0.0) for v in r], axis=-1)


# --- the penalized set ------------------------------------------------------

def c2_raw(x, ev):
    """Signed coupled-constraint values ``g`` (feasible when <= 0), shape (..., 4, K)."""
    K = ev.real.sys.K
    q, phi, varphi, psi, t = (block(x, b, K) for b in BLOCKS)
    psi_d = psi.data if isinstance(psi, Tensor) else psi
    if np.any(psi_d < 0):
        raise ValueError("psi must be nonnegative")
    g = fbl.sinr(q, ev.W, ev.real)
    if isinstance(x, Tensor):
        vphi = 1.0 - 1.0 / ((varphi + 1.0) * (varphi + 1.0))
        parts = [phi - g, g - varphi, vphi - psi, dcore.sqrt(psi) - t]
        return dcore.concat([dcore.reshape(p, p.shape[:-1] + (1, K)) for p in parts], axis=-2)
    vphi = 1.0 - 1.0 / (1.0 + varphi) ** 2
    return np.stack([phi - g, g - varphi, vphi - psi, np.sqrt(psi) - t], axis=-2)


def violation_c2(x, ev):
    """Return ``(V, residuals)``: hinge residuals (4K per sample) and their mean."""
    raw = c2_raw(x, ev)
    if isinstance(raw, Tensor):
        res = dcore.hinge(raw)
        K = raw.shape[-1]
        flat = dcore.reshape(res, res.shape[:-2] + (4 * K,))
        return dcore.mean(flat, axis=-1), flat
    res = np.maximum(raw, 0.0)
    flat = res.reshape(res.shape[:-2] + (-1,))
    V = flat.mean(axis=-1)
    return (float(V) if V.ndim == 0 else V), flat
