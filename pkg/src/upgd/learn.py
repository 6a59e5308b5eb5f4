"""Unsupervised primal-dual training of the unrolled layers.

Each layer is trained on its own with a two-term uncertainty-weighted loss

    exp(-s1/2) * L1 + exp(-s2/2) * L2 + exp(s1/2) + exp(s2/2)

where ``L1`` is the batch mean of ``exp(-wsr)`` and ``L2`` the batch mean of
the multiplier-weighted hinge residuals of the coupled constraints.  The
multipliers climb by dual ascent after every minibatch.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import dcore, fbl, proj
from .dcore import AdamState, NumericError, Tape
from .unroll import layer_forward

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "layer", "loss", "wsr", "vg", "s1", "s2", "lambda_norm",
               "test_wsr", "test_vg")


@dataclass
class TrainConfig:
    lr_theta: float = 1e-3
    lr_s: float = 1e-3
    lr_lambda: float = 1e-4
    batch: int = 20
    epochs: int = 50
    s0: tuple = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if min(self.lr_theta, self.lr_s, self.lr_lambda) < 0:
            raise ValueError("step sizes must be nonnegative")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")


@dataclass
class DualState:
    lam: np.ndarray             # (4, K): one row per coupled-constraint family
    s: np.ndarray               # (2,)

    @classmethod
    def fresh(cls, K, s0=(1.0, 1.0)):
        return cls(np.zeros((4, K)), np.array(s0, dtype=np.float64))

    def to_json(self):
        return {"lambda": self.lam.tolist(), "s": self.s.tolist()}


@dataclass
class EpochRecord:
    epoch: int
    layer: int
    loss: float
    wsr: float
    vg: float
    s1: float
    s2: float
    lambda_norm: float
    test_wsr: float = float("nan")
    test_vg: float = float("nan")

    def row(self):
        return [getattr(self, c) for c in LOG_COLUMNS]


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def extend(self, other):
        self.records.extend(other.records)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])


# --- losses -----------------------------------------------------------------

def multitask_loss(L1, L2, s):
    """Uncertainty-weighted two-task loss; ``s`` is a length-2 array or Tensor."""
    s1, s2 = s[0], s[1]
    return (dcore.exp(s1 * -0.5) * L1 + dcore.exp(s2 * -0.5) * L2
            + dcore.exp(s1 * 0.5) + dcore.exp(s2 * 0.5))


def penalty(raw, lam, hinged=True):
    """Batch mean of ``sum(lam * g)``; ``hinged`` rectifies each ``g`` first.

    The rectified form is the one trained here; the plain form is the
    textbook Lagrangian term and is kept for experimentation.
    """
    g = dcore.hinge(raw) if hinged else dcore.as_tensor(raw)
    pen = g * lam
    return dcore.mean(dcore.tsum(dcore.reshape(pen, pen.shape[:-2] + (-1,)), axis=-1))


def urllc_loss(x, ev, dual, sys, s=None):
    """Loss on a batch of layer outputs ``x`` (N, 5K).

    Returns ``(loss, L1, L2, raw)`` where ``raw`` holds the signed
    coupled-constraint values, shape (N, 4, K).
    """
    s = dual.s if s is None else s
    L1 = dcore.mean(dcore.exp(-fbl.wsr(x, sys)))
    raw = proj.c2_raw(x, ev)
    L2 = penalty(raw, dual.lam)
    return multitask_loss(L1, L2, s), L1, L2, raw


def dual_update(dual, mean_raw, lr_lambda):
    """``lambda += lr * [E g]^+`` for each multiplier (in place)."""
    dual.lam += lr_lambda * np.maximum(np.asarray(mean_raw), 0.0)
    return dual


# --- training ---------------------------------------------------------------

def layer_metrics(layer, data):
    """Mean WSR and mean violation after ``layer`` and the receiver update."""
    out = data.advance(layer)
    vg, _ = proj.violation_c2(out.x, proj.C2Evaluator(out.real, out.W))
    return float(np.mean(fbl.wsr(out.x, out.real.sys))), float(np.mean(vg))


def train_layer(layer, prefix, data, cfg, layer_index=None, test=None):
    """Train one layer against inputs produced by the frozen ``prefix``.

    ``data`` (and ``test``) are :class:`Instances` holding the raw
    initialization; the prefix is applied to them once, without gradients.
    Returns ``(layer, dual, log)``.
    """
    for pl in (prefix.layers if prefix is not None else []):
        data = data.advance(pl)
        if test is not None:
            test = test.advance(pl)
    li = layer_index if layer_index is not None else (len(prefix.layers) + 1 if prefix else 1)

    sys = data.real.sys
    dual = DualState.fresh(sys.K, cfg.s0)
    opt_theta, opt_s = AdamState(), AdamState()
    rng = np.random.default_rng([cfg.seed, li])
    params = layer.parameters()
    tlog = TrainLog()
    N = len(data)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(N)
        losses, wsrs, vgs = [], [], []
        for bi, start in enumerate(range(0, N, cfg.batch)):
            idx = order[start:start + cfg.batch]
            b = data.subset(idx)
            tape = Tape()
            leaves = {k: tape.watch(v, k) for k, v in params.items()}
            s = tape.watch(dual.s, "s")
            x = layer_forward(layer, b.x, b.real, b.W, b.spec, params=leaves)
            ev = proj.C2Evaluator(b.real, b.W)
            loss, L1, L2, raw = urllc_loss(x, ev, dual, sys, s)
            lv = float(loss.data)
            if not np.isfinite(lv) or lv <= 0:
                raise NumericError(f"loss {lv!r} at layer {li}, epoch {epoch}, batch {bi}")
            grads = dcore.backward(tape, loss)
            dcore.adam_step(params, {k: grads[t.index] for k, t in leaves.items()},
                            opt_theta, cfg.lr_theta)
            dcore.adam_step({"s": dual.s}, {"s": grads[s.index]}, opt_s, cfg.lr_s)
            dual_update(dual, raw.data.mean(axis=0), cfg.lr_lambda)

            losses.append(lv)
            wsrs.append(fbl.wsr(x.data, sys))
            vgs.append(np.maximum(raw.data, 0.0).reshape(len(idx), -1).mean(axis=-1))

        rec = EpochRecord(
            epoch=epoch, layer=li, loss=float(np.mean(losses)),
            wsr=float(np.mean(np.concatenate(wsrs))), vg=float(np.mean(np.concatenate(vgs))),
            s1=float(dual.s[0]), s2=float(dual.s[1]),
            lambda_norm=float(np.linalg.norm(dual.lam)))
        if test is not None:
            rec.test_wsr, rec.test_vg = layer_metrics(layer, test)
        tlog.records.append(rec)
        log.debug("layer %d epoch %d loss %.6g vg %.3g", li, epoch, rec.loss, rec.vg)
    return layer, dual, tlog


def train_usrmnet(model, data, cfg, test=None):
    """Train layers in order, freezing each and caching its outputs for the next.

    Returns ``(model, duals, logs)`` with one DualState and TrainLog per layer.
    """
    duals, logs = [], []
    cur, cur_test = data, test
    for i, layer in enumerate(model.layers, start=1):
        _, dual, tlog = train_layer(layer, None, cur, cfg, layer_index=i, test=cur_test)
        duals.append(dual)
        logs.append(tlog)
        cur = cur.advance(layer)
        if cur_test is not None:
            cur_test = cur_test.advance(layer)
    return model, duals, logs
