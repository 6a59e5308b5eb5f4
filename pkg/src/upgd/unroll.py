"""Unrolled projected-gradient layers and the stacked sum-rate model."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import dcore, fbl, hwgcn, proj
from .dcore import ContractError
from .proj import C1Spec

CHECKPOINT_VERSION = 1


def grad_objective(x, sys):
    """Gradient of ``-wsr`` w.r.t. stacked ``x``; only the phi and t blocks are nonzero."""
    x = np.asarray(x, dtype=np.float64)
    K = sys.K
    phi = x[..., K:2 * K]
    if np.any(phi <= -1):
        raise ValueError("grad_objective needs phi > -1")
    alpha = sys.alpha_vec
    g = np.zeros_like(x)
    g[..., K:2 * K] = -alpha / (1.0 + phi)
    g[..., 4 * K:] = alpha * sys.theta
    return g


@dataclass
class UpgdLayer:
    eta_net: hwgcn.HwgcnNet
    perturb_net: hwgcn.HwgcnNet

    def __post_init__(self):
        if self.eta_net.role != "eta" or self.perturb_net.role != "perturb":
            raise ContractError("layer nets have the wrong roles")

    @classmethod
    def build(cls, K, rng, eta_dims=(5, 32, 2), perturb_hidden=(32,), order=1):
        eta = hwgcn.HwgcnNet.build(list(eta_dims), "eta", rng, order)
        pert = hwgcn.HwgcnNet.build([K + 5, *perturb_hidden, 5], "perturb", rng, order)
        return cls(eta, pert)

    def parameters(self):
        p = self.eta_net.parameters("eta.")
        p.update(self.perturb_net.parameters("perturb."))
        return p

    def zero_(self):
        for b in self.parameters().values():
            b[...] = 0.0
        return self


@dataclass
class UsrmNet:
    layers: list

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ContractError("need at least one layer")

    @classmethod
    def build(cls, K, L=2, seed=0, **kw):
        rng = np.random.default_rng(seed)
        return cls([UpgdLayer.build(K, rng, **kw) for _ in range(L)])

    @property
    def K(self):
        return self.layers[0].perturb_net.dims[0] - 5

    def prefix(self, n):
        return UsrmNet(self.layers[:n])


def _split(params):
    if params is None:
        return None, None
    eta = {k[4:]: v for k, v in params.items() if k.startswith("eta.")}
    pert = {k[8:]: v for k, v in params.items() if k.startswith("perturb.")}
    return eta, pert


def layer_forward(layer, x0, real, W, spec, params=None, tied_eta=False):
    """One unrolled projected-gradient step.

    eta from the step-size net scales the phi-block (eta_1) and t-block
    (eta_2) gradient; the perturbation net then corrects the preliminary
    point, and the sum is projected onto the projectable set.  ``params``
    maps parameter names to tape tensors when gradients are wanted.
    ``tied_eta`` uses a single scalar step (the mean of both entries) for
    the whole gradient.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise ContractError("x0 must be finite")
    K = real.sys.K
    eta_p, pert_p = _split(params)
    A = hwgcn.adjacency(real.H, W)
    eta = hwgcn.eta_net_forward(layer.eta_net, A, x0, eta_p)
    g = grad_objective(x0, real.sys)
    if tied_eta:
        e = dcore.reshape(dcore.mean(eta, axis=-1), eta.shape[:-1] + (1,))
        step = e * g
    else:
        e1 = dcore.reshape(eta[..., 0], eta.shape[:-1] + (1,))
        e2 = dcore.reshape(eta[..., 1], eta.shape[:-1] + (1,))
        zero = np.zeros(x0.shape[:-1] + (K,))
        step = dcore.concat(
            [zero, e1 * g[..., K:2 * K], zero, zero, e2 * g[..., 4 * K:]], axis=-1)
    xhat = x0 - step
    xbar = hwgcn.perturb_net_forward(layer.perturb_net, A, xhat, pert_p)
    out = proj.project_c1(xhat + xbar, spec)
    return out if params is not None else out.data


@dataclass
class ForwardResult:
    x: np.ndarray
    W: np.ndarray
    wsr_trace: list             # per layer, (...,) arrays
    xs: list                    # per-layer x outputs
    Ws: list                    # beamformers after each layer


def usrmnet_forward(model, x0, W0, real, spec):
    x, W = np.asarray(x0, dtype=np.float64), np.asarray(W0)
    xs, Ws, trace = [], [], []
    K = real.sys.K
    for layer in model.layers:
        x = layer_forward(layer, x, real, W, spec)
        W = fbl.mmse_beamformer(x[..., :K], real)
        xs.append(x)
        Ws.append(W)
        trace.append(fbl.wsr(x, real.sys))
    return ForwardResult(x, W, trace, xs, Ws)


def init_x0_w0(real, spec=None):
    """Uniform power, MMSE receivers, auxiliaries set from the resulting SINR."""
    spec = spec or C1Spec.from_realization(real)
    sys = real.sys
    shape = real.H.shape[:-2] + (sys.K,)
    q = np.full(shape, sys.P / sys.K)
    W = fbl.mmse_beamformer(q, real)
    g = fbl.sinr(q, W, real)
    gt = spec.gamma_tilde
    phi = np.minimum(np.maximum(g, spec.nu3), gt)
    varphi = phi.copy()
    psi = np.minimum(np.maximum(fbl.dispersion(np.maximum(varphi, 0.0)),
                                fbl.dispersion(spec.nu3)), fbl.dispersion(gt))
    t = np.sqrt(psi)
    x = proj.project_c1(proj.stack(q, phi, varphi, psi, t), spec)
    return x, W


@dataclass
class Instances:
    """A batch of realizations with their projection constants and layer inputs."""

    real: fbl.Realization       # batched, H of shape (N, K, Nt)
    spec: C1Spec
    x: np.ndarray               # (N, 5K)
    W: np.ndarray               # (N, K, Nt)

    @classmethod
    def initial(cls, real):
        spec = C1Spec.from_realization(real)
        x, W = init_x0_w0(real, spec)
        return cls(real, spec, x, W)

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        return Instances(self.real.subset(idx), self.spec.subset(idx), self.x[idx], self.W[idx])

    def advance(self, layer):
        """Push every instance through a frozen layer and the receiver update."""
        x = layer_forward(layer, self.x, self.real, self.W, self.spec)
        W = fbl.mmse_beamformer(x[..., :self.real.sys.K], self.real)
        return Instances(self.real, self.spec, x, W)


# --- checkpoints ------------------------------------------------------------

def _net_to_json(net):
    return {
        "role": net.role,
        "layers": [
            {"activation": l.activation,
             "taps": [{"shape": list(b.shape), "data": b.ravel().tolist()} for b in l.taps]}
            for l in net.layers
        ],
    }


def _net_from_json(d):
    layers = [
        hwgcn.GraphFilterLayer(
            [np.asarray(t["data"], dtype=np.float64).reshape(t["shape"]) for t in l["taps"]],
            l["activation"])
        for l in d["layers"]
    ]
    return hwgcn.HwgcnNet(layers, d["role"])


def save_checkpoint(path, model, duals=None, config=None):
    """Write the model as JSON; ``duals`` is a per-layer list of DualState-like dicts."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "kind": "usrmnet",
        "L": len(model.layers),
        "K": model.K,
        "layers": [
            {"eta_net": _net_to_json(l.eta_net), "perturb_net": _net_to_json(l.perturb_net)}
            for l in model.layers
        ],
        "duals": duals or [],
        "config": config or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)
    return doc


def load_checkpoint(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')!r}")
    layers = [UpgdLayer(_net_from_json(l["eta_net"]), _net_from_json(l["perturb_net"]))
              for l in doc["layers"]]
    if len(layers) != doc["L"]:
        raise ContractError("checkpoint layer count mismatch")
    return UsrmNet(layers), doc
