"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every key must be one of
:data:`KEYS`; anything else is rejected so that typos fail loudly.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

from .. import fbl
from ..learn import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # system
    K: int = 2
    Nt: int = 4
    snr_db: float = 30.0
    n: int = 128
    D: float = 256.0
    eps: float = 1e-5
    # geometry
    d0: float = 50.0
    rho_exp: float = 3.0
    du: float = 120.0
    dc: float = 140.0
    # model and data
    L: int = 2
    n_train: int = 512
    n_test: int = 200
    # training
    epochs: int = 50
    batch: int = 20
    lr_theta: float = 1e-3
    lr_s: float = 1e-3
    lr_lambda: float = 1e-4
    s0_1: float = 1.0
    s0_2: float = 1.0
    seed: int = 0

    def system(self):
        return fbl.SystemParams.from_snr(self.snr_db, K=self.K, Nt=self.Nt,
                                         n=self.n, D=self.D, eps=self.eps)

    def geometry(self):
        return fbl.Geometry(self.d0, self.rho_exp, self.du, self.dc)

    def train_config(self):
        return TrainConfig(lr_theta=self.lr_theta, lr_s=self.lr_s, lr_lambda=self.lr_lambda,
                           batch=self.batch, epochs=self.epochs,
                           s0=(self.s0_1, self.s0_2), seed=self.seed)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


KEYS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    kind = KEYS[key]
    try:
        if kind in (int, "int"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse(text, base=None):
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, raw))
    return cfg


def load(path):
    with open(path) as f:
        return parse(f.read())


def dump(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
