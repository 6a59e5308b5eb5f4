"""Seeded channel datasets and their on-disk format.

A dataset file is one line of JSON (the header) followed by the channel
tensor as raw little-endian complex128, shape ``(N, K, Nt)``, row-major.
Sample ``i`` is drawn from ``default_rng([seed, i])`` so any subset can be
regenerated from the header alone.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .. import fbl
from ..dcore import ContractError
from ..unroll import Instances

FORMAT = "upgd-dataset"
FORMAT_VERSION = 1
DTYPE = "<c16"


@dataclass
class Dataset:
    sys: fbl.SystemParams
    geo: fbl.Geometry
    seed: int
    H: np.ndarray               # (N, K, Nt)
    _inst: Instances = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.complex128)
        if self.H.ndim != 3 or self.H.shape[1:] != (self.sys.K, self.sys.Nt):
            raise ContractError(f"channel tensor has shape {self.H.shape}")

    def __len__(self):
        return self.H.shape[0]

    @property
    def real(self):
        return fbl.Realization(self.H, self.sys, self.seed)

    @property
    def instances(self):
        """Initial points and receivers, computed once."""
        if self._inst is None:
            self._inst = Instances.initial(self.real)
        return self._inst

    def header(self):
        sys = asdict(self.sys)
        sys["alpha"] = list(sys["alpha"])
        return {
            "format": FORMAT, "version": FORMAT_VERSION, "dtype": DTYPE,
            "count": len(self), "seed": self.seed,
            "sys": sys, "geo": asdict(self.geo),
        }


def sample_seed(seed, i):
    return [int(seed), int(i)]


def generate(sys, geo, seed, n):
    if n < 1:
        raise ContractError("dataset needs at least one sample")
    H = np.stack([fbl.channel_gen(sample_seed(seed, i), sys, geo).H for i in range(n)])
    return Dataset(sys, geo, int(seed), H)


def write(path, ds):
    head = json.dumps(ds.header(), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(head + b"\n")
        f.write(np.ascontiguousarray(ds.H, dtype=DTYPE).tobytes())


def read(path):
    with open(path, "rb") as f:
        head = json.loads(f.readline())
        body = f.read()
    if head.get("format") != FORMAT or head.get("version") != FORMAT_VERSION:
        raise ContractError(f"{path}: not a version-{FORMAT_VERSION} dataset file")
    sys = fbl.SystemParams(**{**head["sys"], "alpha": tuple(head["sys"]["alpha"])})
    geo = fbl.Geometry(**head["geo"])
    N = head["count"]
    expected = N * sys.K * sys.Nt * 16
    if len(body) != expected:
        raise ContractError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    H = np.frombuffer(body, dtype=DTYPE).reshape(N, sys.K, sys.Nt).astype(np.complex128)
    return Dataset(sys, geo, head["seed"], H)
