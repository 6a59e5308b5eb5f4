"""Polynomial graph filters over the channel/beamformer graph.

A layer maps node features ``Z`` (``K x p_in``) to
``act(sum_k A^k Z B_k)`` with tap matrices ``B_k`` of shape ``p_in x p_out``.
Nodes are UEs; the adjacency is ``A[k, j] = |h_k^H w_j|``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dcore
from .dcore import ContractError, Tensor

ACTIVATIONS = {
    "tanh": dcore.tanh,
    "relu": dcore.relu,
    "identity": dcore.identity,
}


@dataclass
class GraphFilterLayer:
    taps: list                  # K_order arrays, each (p_in, p_out)
    activation: str = "tanh"

    def __post_init__(self):
        if not self.taps:
            raise ContractError("a graph filter needs at least one tap")
        shapes = {np.shape(b) for b in self.taps}
        if len(shapes) != 1:
            raise ContractError(f"taps disagree in shape: {shapes}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def order(self):
        return len(self.taps)

    @property
    def p_in(self):
        return self.taps[0].shape[0]

    @property
    def p_out(self):
        return self.taps[0].shape[1]

    @classmethod
    def init(cls, p_in, p_out, rng, order=1, activation="tanh"):
        bound = 1.0 / np.sqrt(p_in)
        taps = [rng.uniform(-bound, bound, size=(p_in, p_out)) for _ in range(order)]
        return cls(taps, activation)


@dataclass
class HwgcnNet:
    layers: list
    role: str                   # "eta" or "perturb"

    @classmethod
    def build(cls, dims, role, rng, order=1):
        """Hidden layers use tanh; the last uses relu (eta) or nothing (perturb)."""
        if role not in ("eta", "perturb"):
            raise ContractError(f"unknown role {role!r}")
        last = "relu" if role == "eta" else "identity"
        layers = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            act = last if i == len(dims) - 2 else "tanh"
            layers.append(GraphFilterLayer.init(a, b, rng, order, act))
        return cls(layers, role)

    @property
    def dims(self):
        return [self.layers[0].p_in] + [l.p_out for l in self.layers]

    def n_params(self):
        return sum(b.size for l in self.layers for b in l.taps)

    def parameters(self, prefix=""):
        """Name -> tap array, in a stable order."""
        return {
            f"{prefix}{i}.{k}": b
            for i, l in enumerate(self.layers)
            for k, b in enumerate(l.taps)
        }


def adjacency(H, W):
    """``A[..., k, j] = |sum_m H[k, m] W[j, m]|``."""
    if np.shape(H) != np.shape(W):
        raise ContractError("H and W must have the same shape")
    return np.abs(np.asarray(H) @ np.swapaxes(np.asarray(W), -1, -2))


def gamma_reshape(x, K=None):
    """Stacked ``[q; phi; varphi; psi; t]`` -> ``K x 5`` per-UE feature rows."""
    n = x.shape[-1]
    if n % 5 or (K is not None and n != 5 * K):
        raise ContractError(f"vector of length {n} is not 5K")
    K = n // 5
    if isinstance(x, Tensor):
        return dcore.swapaxes(dcore.reshape(x, x.shape[:-1] + (5, K)), -1, -2)
    return np.swapaxes(np.asarray(x).reshape(x.shape[:-1] + (5, K)), -1, -2)


def gamma_restack(Z):
    """Inverse of :func:`gamma_reshape`."""
    if Z.shape[-1] != 5:
        raise ContractError("feature rows must have width 5")
    K = Z.shape[-2]
    if isinstance(Z, Tensor):
        return dcore.reshape(dcore.swapaxes(Z, -1, -2), Z.shape[:-2] + (5 * K,))
    return np.swapaxes(np.asarray(Z), -1, -2).reshape(Z.shape[:-2] + (5 * K,))


def gconv_forward(layer, A, Z, taps=None):
    """``act(sum_k A^k Z B_k)``; ``taps`` overrides the layer's arrays (e.g. tape leaves)."""
    taps = layer.taps if taps is None else taps
    if Z.shape[-1] != layer.p_in:
        raise ContractError(f"feature width {Z.shape[-1]} != p_in {layer.p_in}")
    acc = None
    AkZ = Z
    for k, B in enumerate(taps):
        if k:
            AkZ = dcore.matmul(A, AkZ)
        term = dcore.matmul(AkZ, B)
        acc = term if acc is None else acc + term
    return ACTIVATIONS[layer.activation](acc)


def _run(net, A, Z, params):
    for i, layer in enumerate(net.layers):
        taps = None if params is None else [params[f"{i}.{k}"] for k in range(layer.order)]
        Z = gconv_forward(layer, A, Z, taps)
    return Z


def scale_features(Z):
    """Compress the power and SINR columns of ``K x 5`` rows with ``asinh``.

    Powers and SINRs span several decades while ``psi`` and ``t`` live in
    [0, 1]; raw values would saturate the first tanh.
    """
    Z = dcore.as_tensor(Z)
    cols = [Z[..., j:j + 1] for j in range(5)]
    cols[:3] = [dcore.asinh(c) for c in cols[:3]]
    return dcore.concat(cols, axis=-1)


def eta_net_forward(net, A, x, params=None):
    """Step sizes ``eta`` (length 2): node outputs averaged over UEs."""
    if net.role != "eta":
        raise ContractError("expected an eta network")
    Lam = _run(net, A, scale_features(gamma_reshape(dcore.as_tensor(x))), params)
    return dcore.mean(Lam, axis=-2)


def node_features(A):
    """Per-UE view of its adjacency row: own entry first, the rest sorted descending.

    Raw row order is tied to UE labels and would break permutation
    equivariance; this ordering depends only on the multiset of entries.
    """
    A = np.asarray(A)
    K = A.shape[-1]
    own = np.diagonal(A, axis1=-2, axis2=-1)[..., None]
    if K == 1:
        return own
    off = A[..., ~np.eye(K, dtype=bool)].reshape(A.shape[:-2] + (K, K - 1))
    off = -np.sort(-off, axis=-1)
    return np.concatenate([own, off], axis=-1)


def perturb_net_forward(net, A, xhat, params=None):
    """Perturbation of length ``5K``; node ``k`` outputs its own five entries."""
    if net.role != "perturb":
        raise ContractError("expected a perturbation network")
    feats = dcore.concat([dcore.Tensor(node_features(A)), scale_features(gamma_reshape(dcore.as_tensor(xhat)))], axis=-1)
    return gamma_restack(_run(net, A, feats, params))
