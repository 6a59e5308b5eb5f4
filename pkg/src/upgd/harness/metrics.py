"""Test-set metrics for a trained model."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .. import fbl, proj
from ..fbl import InfeasibleError
from ..unroll import Instances, usrmnet_forward
from . import oracle

SCHEMA_VERSION = 1
ROW_COLUMNS = ("index", "wsr", "vg", "feasible", "reference_wsr")


@dataclass
class EvalReport:
    n: int
    wsr_mean: float             # over samples with vg == 0; nan if there are none
    w2: float                   # fraction of samples with vg == 0
    wsr: np.ndarray
    vg: np.ndarray
    reference: str = None
    reference_wsr: np.ndarray = None
    w1: float = None
    extra: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.vg == 0

    def to_dict(self):
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)
        ref = self.reference_wsr
        return {
            "schema_version": SCHEMA_VERSION,
            "n": int(self.n),
            "n_feasible": int(self.feasible.sum()),
            "wsr_mean": num(self.wsr_mean),
            "w2": float(self.w2),
            "reference": self.reference,
            "w1": num(self.w1),
            **self.extra,
            "rows": [
                {"index": i, "wsr": float(self.wsr[i]), "vg": float(self.vg[i]),
                 "feasible": bool(self.feasible[i]),
                 "reference_wsr": None if ref is None else num(ref[i])}
                for i in range(self.n)
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_COLUMNS)
        for r in self.to_dict()["rows"]:
            w.writerow([r[c] if r[c] is not None else "" for c in ROW_COLUMNS])
        return buf.getvalue()


def _forward(model, inst):
    out = usrmnet_forward(model, inst.x, inst.W, inst.real, inst.spec)
    vg, _ = proj.violation_c2(out.x, proj.C2Evaluator(inst.real, out.W))
    return fbl.wsr(out.x, inst.real.sys), np.atleast_1d(vg)


def evaluate(model, data, reference=None, grid=None):
    """Per-sample WSR and violation after the last layer.

    ``data`` is a :class:`Dataset` or :class:`Instances`.  With
    ``reference="oracle"`` each sample is also solved by grid search
    (K <= 3) and ``w1`` compares the two on samples both handle.
    """
    inst = data if isinstance(data, Instances) else data.instances
    wsr, vg = _forward(model, inst)
    wsr = np.atleast_1d(wsr)
    feas = vg == 0
    n = len(wsr)
    report = EvalReport(
        n=n, wsr_mean=float(wsr[feas].mean()) if feas.any() else float("nan"),
        w2=float(feas.mean()), wsr=wsr, vg=vg)
    if reference == "oracle":
        ref = np.full(n, np.nan)
        for i in range(n):
            try:
                ref[i] = oracle.oracle_wsr(inst.real.subset(i), grid).wsr
            except InfeasibleError:
                pass
        both = feas & np.isfinite(ref)
        report.reference = "oracle_wsr (grid search over powers with MMSE receivers)"
        report.reference_wsr = ref
        report.w1 = float(wsr[both].mean() / ref[both].mean()) if both.any() else float("nan")
    elif reference is not None:
        raise ValueError(f"unknown reference {reference!r}")
    return report
