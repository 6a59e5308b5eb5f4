"""Reusable experiment drivers: the training fixture and the permutation suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import fbl, learn, proj
from ..unroll import UsrmNet, usrmnet_forward
from . import dataset
from .config import RunConfig

log = logging.getLogger(__name__)

TEST_SEED_OFFSET = 1_000_003


@dataclass
class FixtureRun:
    cfg: RunConfig
    model: UsrmNet
    duals: list
    logs: list
    train: dataset.Dataset
    test: dataset.Dataset


def datasets(cfg):
    sys, geo = cfg.system(), cfg.geometry()
    train = dataset.generate(sys, geo, cfg.seed, cfg.n_train)
    test = dataset.generate(sys, geo, cfg.seed + TEST_SEED_OFFSET, cfg.n_test)
    return train, test


def train_run(cfg=None, train=None, test=None):
    """Build, train and return a model for ``cfg`` (defaults: the desk fixture)."""
    cfg = cfg or RunConfig()
    if train is None or test is None:
        tr, te = datasets(cfg)
        train, test = train or tr, test or te
    model = UsrmNet.build(cfg.K, L=cfg.L, seed=cfg.seed)
    model, duals, logs = learn.train_usrmnet(
        model, train.instances, cfg.train_config(), test=test.instances)
    return FixtureRun(cfg, model, duals, logs, train, test)


def layer_wsr(model, inst):
    """Mean WSR over all samples after each layer."""
    out = usrmnet_forward(model, inst.x, inst.W, inst.real, inst.spec)
    return [float(np.mean(w)) for w in out.wsr_trace]


def perm_deviation(model, inst, perm):
    """Largest gap between ``f(perm(input))`` and ``perm(f(input))``, over x and W."""
    K = inst.real.sys.K
    base = usrmnet_forward(model, inst.x, inst.W, inst.real, inst.spec)
    preal = inst.real.permuted(perm)
    px = proj.permute_x(inst.x, perm, K)
    pw = inst.W[..., perm, :]
    out = usrmnet_forward(model, px, pw, preal, inst.spec.permuted(perm))
    dx = np.max(np.abs(out.x - proj.permute_x(base.x, perm, K)))
    dw = np.max(np.abs(out.W - base.W[..., perm, :]))
    return float(max(dx, dw))


def perm_suite(K, Nt, seed=0, trials=100, samples=4, snr_db=30.0, L=2):
    """Random model and channels; max equivariance deviation over ``trials`` permutations."""
    rng = np.random.default_rng(seed)
    sys = fbl.SystemParams.from_snr(snr_db, K=K, Nt=Nt)
    ds = dataset.generate(sys, fbl.Geometry(), seed, samples)
    model = UsrmNet.build(K, L=L, seed=seed)
    inst = ds.instances
    worst = 0.0
    for _ in range(trials):
        worst = max(worst, perm_deviation(model, inst, rng.permutation(K)))
    return worst
