"""Closed-form operation counts for the unrolled model and the SCA baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

from .dcore import ContractError


@dataclass(frozen=True)
class CostConfig:
    K: int = 4
    Nt: int = 32
    L: int = 2
    updates: int = 3                      # beamformer updates of the baseline
    eta_dims: tuple = (5, 32, 2)
    perturb_dims: tuple = field(default=None)
    eta_order: int = 1
    perturb_order: int = 1

    def __post_init__(self):
        if self.perturb_dims is None:
            object.__setattr__(self, "perturb_dims", (self.K + 5, 32, 5))
        if min(self.K, self.Nt, self.L, self.updates, self.eta_order, self.perturb_order) < 1:
            raise ContractError("K, Nt, L, updates and filter orders must be positive")
        if self.eta_dims[0] != 5 or self.eta_dims[-1] != 2:
            raise ContractError("eta-net dims must run from 5 to 2")
        if self.perturb_dims[0] != self.K + 5 or self.perturb_dims[-1] != 5:
            raise ContractError("perturbation-net dims must run from K+5 to 5")

    @property
    def M(self):
        return 5 * self.K

    @property
    def Nh(self):
        return 5 * self.K + 1

    @classmethod
    def from_model(cls, model, Nt, **kw):
        """Counts for an actual :class:`~upgd.unroll.UsrmNet`."""
        layer = model.layers[0]
        return cls(K=model.K, Nt=Nt, L=len(model.layers),
                   eta_dims=tuple(layer.eta_net.dims), perturb_dims=tuple(layer.perturb_net.dims),
                   eta_order=layer.eta_net.layers[0].order,
                   perturb_order=layer.perturb_net.layers[0].order, **kw)


def _gcn_flops(K, dims, order):
    return sum(K ** 3 * (order - 1) + K ** 2 * order + K ** 2 * p for p in dims)


def usrmnet_flops(cfg):
    K, Nt = cfg.K, cfg.Nt
    per_layer = (K * Nt ** 3 + 2 * K ** 2 * Nt
                 + _gcn_flops(K, cfg.eta_dims, cfg.eta_order)
                 + _gcn_flops(K, cfg.perturb_dims, cfg.perturb_order)
                 + cfg.M * cfg.Nh + cfg.M)
    return cfg.L * per_layer


def hebf_flops(cfg):
    K, Nt = cfg.K, cfg.Nt
    return cfg.updates * ((K ** 2 + 3 * K) ** 3.5 + Nt ** 2.7 + K * Nt ** 3)


def ratio_w3(cfg):
    """USRMNet cost as a percentage of the baseline's."""
    return 100.0 * usrmnet_flops(cfg) / hebf_flops(cfg)


def table(Ks=(4, 6, 8, 10), Nt=32, L=2, updates=3):
    """Rows ``(K, usrmnet, hebf, ratio)`` for the complexity comparison."""
    rows = []
    for K in Ks:
        cfg = CostConfig(K=K, Nt=Nt, L=L, updates=updates)
        rows.append((K, usrmnet_flops(cfg), hebf_flops(cfg), ratio_w3(cfg)))
    return rows
