"""Acceptance criteria, each checked at its stated tolerance.

Every test appends one PASS/FAIL line to ``conftest.ACCEPTANCE_LINES``
(printed in the terminal summary) and also prints it.
"""
import math
import time

import numpy as np
import pytest

import conftest
from upgd import cost, dcore, fbl, hwgcn, learn, proj, unroll
from upgd.cost import CostConfig
from upgd.dcore import Tape
from upgd.fbl import InfeasibleError
from upgd.harness import dataset, experiments, metrics, oracle
from upgd.harness.config import RunConfig
from upgd.learn import DualState
from upgd.proj import C2Evaluator
from upgd.unroll import Instances, UpgdLayer, UsrmNet


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def sig3(v):
    return float(f"{v:.2e}")


# --- paper-anchored quantities ---------------------------------------------------------------

TABLE_III = {
    4: (2.68e5, 7.77e5, 34.52),
    6: (4.20e5, 4.10e6, 10.24),
    8: (5.48e5, 2.00e7, 2.74),
    10: (6.93e5, 7.63e7, 0.91),
}
EXACT_USRMNET = {4: 267984, 6: 406440, 8: 548000, 10: 692760}


def test_table_iii():
    t0 = time.perf_counter()
    misses = []
    for K, (u_ref, h_ref, r_ref) in TABLE_III.items():
        cfg = CostConfig(K=K, Nt=32, L=2)
        u, h, r = cost.usrmnet_flops(cfg), cost.hebf_flops(cfg), cost.ratio_w3(cfg)
        if u != EXACT_USRMNET[K]:
            misses.append(f"K={K} usrmnet {u} != {EXACT_USRMNET[K]}")
        if sig3(u) != u_ref:
            misses.append(f"K={K} usrmnet {sig3(u):.2e} vs {u_ref:.2e}")
        if sig3(h) != h_ref:
            misses.append(f"K={K} hebf {sig3(h):.2e} vs {h_ref:.2e}")
        if abs(r - r_ref) > 0.1:
            misses.append(f"K={K} w3 {r:.2f} vs {r_ref:.2f}")
    ms = 1e3 * (time.perf_counter() - t0)
    record("Table III operation counts", not misses,
           ("all 12 entries match" if not misses else "; ".join(misses)) + f" ({ms:.1f} ms)")


def test_rate_constants():
    z = fbl.qfunc_inv(1e-5)
    sys = fbl.SystemParams(n=128, D=256.0, eps=1e-5)
    closed = 2 ** (sys.D / sys.n) - 1
    nu = fbl.rate_threshold(0.0, sys.rate_target)
    ok = abs(z - 4.26489) <= 1e-4 and abs(nu - closed) <= 1e-12
    record("qfunc_inv and nu3 constants", ok,
           f"qfunc_inv(1e-5) = {z:.6f}; nu3(theta=0) - (2^(D/n)-1) = {nu - closed:.1e}")


# --- structural properties ---------------------------------------------------------------------

def test_structural_feasibility():
    rng = np.random.default_rng(2024)
    worst, empty, total = 0.0, 0, 0
    for trial in range(1000):
        K = int(rng.integers(1, 5))
        Nt = int(rng.integers(1, 9))
        sys = fbl.SystemParams.from_snr(30, K=K, Nt=Nt)
        real = fbl.channel_gen([7, trial], sys, fbl.Geometry())
        inst = Instances.initial(real)
        layer = UpgdLayer.build(K, rng, order=int(rng.integers(1, 3)))
        for p in layer.parameters().values():
            p *= 10 ** rng.uniform(-2, 2)
        x0 = inst.x + rng.normal(scale=10 ** rng.uniform(-1, 2), size=inst.x.shape)
        x0[K:2 * K] = np.abs(x0[K:2 * K])
        out = unroll.layer_forward(layer, x0, real, inst.W, inst.spec)
        worst = max(worst, proj.c1_residuals(out, inst.spec, skip_infeasible=True).max())
        empty += int(inst.spec.infeasible.sum())
        total += K
    record("C1 feasibility of layer outputs", worst <= 1e-12,
           f"max residual {worst:.1e} over 1000 inputs "
           f"({empty}/{total} UEs have nu3 > gamma_tilde, an empty psi interval, and are excluded from that row)")


def _perm_components(K, rng, trials=100, Nt=8):
    sys = fbl.SystemParams.from_snr(30, K=K, Nt=Nt)
    ds = dataset.generate(sys, fbl.Geometry(), 100 + K, 2)
    inst = ds.instances
    real, spec, x, W = inst.real, inst.spec, inst.x, inst.W
    model = UsrmNet.build(K, L=2, seed=K)
    layer = model.layers[0]
    gl = hwgcn.GraphFilterLayer.init(6, 4, rng, order=2)
    A = hwgcn.adjacency(real.H, W)
    Z = rng.normal(size=(2, K, 6))
    base = {
        "gamma": hwgcn.gamma_reshape(x),
        "adjacency": A,
        "gconv": hwgcn.gconv_forward(gl, A, Z).data,
        "eta_net": hwgcn.eta_net_forward(layer.eta_net, A, x).data,
        "perturb_net": hwgcn.perturb_net_forward(layer.perturb_net, A, x).data,
        "layer_forward": unroll.layer_forward(layer, x, real, W, spec),
    }
    full = unroll.usrmnet_forward(model, x, W, real, spec)
    dev = dict.fromkeys(list(base) + ["usrmnet_forward"], 0.0)

    def gap(a, b):
        return float(np.max(np.abs(a - b)))

    for _ in range(trials):
        p = rng.permutation(K)
        xp, Wp, rp, sp = proj.permute_x(x, p, K), W[:, p], real.permuted(p), spec.permuted(p)
        Ap = hwgcn.adjacency(rp.H, Wp)
        got = {
            "gamma": (hwgcn.gamma_reshape(xp), base["gamma"][:, p]),
            "adjacency": (Ap, base["adjacency"][:, p][:, :, p]),
            "gconv": (hwgcn.gconv_forward(gl, Ap, Z[:, p]).data, base["gconv"][:, p]),
            "eta_net": (hwgcn.eta_net_forward(layer.eta_net, Ap, xp).data, base["eta_net"]),
            "perturb_net": (hwgcn.perturb_net_forward(layer.perturb_net, Ap, xp).data,
                            proj.permute_x(base["perturb_net"], p, K)),
            "layer_forward": (unroll.layer_forward(layer, xp, rp, Wp, sp),
                              proj.permute_x(base["layer_forward"], p, K)),
        }
        for k, (a, b) in got.items():
            dev[k] = max(dev[k], gap(a, b))
        out = unroll.usrmnet_forward(model, xp, Wp, rp, sp)
        dev["usrmnet_forward"] = max(dev["usrmnet_forward"], gap(out.x, proj.permute_x(full.x, p, K)),
                                     gap(out.W, full.W[:, p]))
    return dev


def test_equivariance_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = {}
    for K in (2, 4, 6):
        for k, v in _perm_components(K, rng).items():
            worst[k] = max(worst.get(k, 0.0), v)
    secs = time.perf_counter() - t0
    top = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record("permutation equivariance suite", top < 1e-9 and secs < 60,
           f"max deviation {top:.1e} (K=2,4,6; 100 permutations; {secs:.1f} s): {detail}")


# --- gradients ---------------------------------------------------------------------------------------

def _fd(f, x, h):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


PRIMITIVES = {
    "add": lambda a: dcore.add(a, a * a),
    "sub": lambda a: dcore.sub(a * a, a),
    "mul": lambda a: dcore.mul(a, a + 1.0),
    "div": lambda a: dcore.div(a, a * a + 1.0),
    "matmul": lambda a: dcore.matmul(a, dcore.swapaxes(a, 0, 1)),
    "tanh": dcore.tanh,
    "relu": dcore.relu,
    "hinge": dcore.hinge,
    "identity": dcore.identity,
    "exp": dcore.exp,
    "log": lambda a: dcore.log(a + 3.0),
    "asinh": dcore.asinh,
    "sqrt": lambda a: dcore.sqrt(a + 3.0),
    "clip": lambda a: dcore.clip(a, -1.0, 1.0),
    "tsum": lambda a: dcore.tsum(a * a, axis=0),
    "mean": lambda a: dcore.mean(a * a, axis=1),
    "take": lambda a: a[1:, ::2] * 2.0,
    "reshape": lambda a: dcore.reshape(a, (2, 6)) * dcore.reshape(a, (2, 6)),
    "swapaxes": lambda a: dcore.swapaxes(a, 0, 1) * 1.5,
    "concat": lambda a: dcore.concat([a, a * a], axis=0),
}


def _primitive_errors():
    r = np.random.default_rng(5)
    errs = {}
    for name, f in PRIMITIVES.items():
        x = r.uniform(-2, 2, (3, 4))
        x[np.abs(x) < 1e-2] = 0.5
        x[np.abs(np.abs(x) - 1.0) < 1e-2] = 0.5
        w = r.uniform(0.5, 1.5, np.shape(f(dcore.Tensor(x)).data))
        (g,) = dcore.grad(lambda a: (f(a) * w).sum(), x)
        fd = _fd(lambda v: float((f(dcore.Tensor(v)).data * w).sum()), x, 1e-6)
        errs[name] = _rel(g, fd)
    return errs


def _end_to_end_errors():
    rng = np.random.default_rng(21)
    sys = fbl.SystemParams.from_snr(30, K=2, Nt=2)
    H = np.stack([fbl.channel_gen([3, i], sys, fbl.Geometry()).H for i in range(3)])
    inst = Instances.initial(fbl.Realization(H, sys))
    x = inst.x.copy()
    x[:, 2:4] += 1.5
    x[:, 6:8] *= 0.5
    inst = Instances(inst.real, inst.spec, x, inst.W)
    layer = UpgdLayer.build(2, rng)
    dual = DualState(rng.uniform(0.5, 2.0, (4, 2)), np.array([0.3, -0.2]))
    ev = C2Evaluator(inst.real, inst.W)
    params = layer.parameters()
    params["s"] = dual.s

    def loss(p):
        tape = Tape()
        leaves = {k: tape.watch(v, k) for k, v in p.items()}
        net = {k: v for k, v in leaves.items() if k != "s"}
        out = unroll.layer_forward(layer, inst.x, inst.real, inst.W, inst.spec, params=net)
        return tape, leaves, learn.urllc_loss(out, ev, dual, sys, leaves["s"])[0]

    tape, leaves, value = loss(params)
    grads = dcore.backward(tape, value)
    errs, dead = {}, []
    for name, arr in params.items():
        g = grads[leaves[name].index]
        if not np.any(g):
            dead.append(name)

        def f(v, name=name):
            saved = params[name]
            params[name] = v
            out = float(loss(params)[2].data)
            params[name] = saved
            return out
        errs[name] = _rel(g, _fd(f, arr.copy(), 1e-6))
    return errs, dead


def test_gradient_suite():
    prim = _primitive_errors()
    e2e, dead = _end_to_end_errors()
    pw, pn = max(prim.values()), max(prim, key=prim.get)
    ew, en = max(e2e.values()), max(e2e, key=e2e.get)
    ok = pw < 1e-5 and ew < 1e-4 and not dead
    record("gradient suite", ok,
           f"primitives max rel err {pw:.1e} ({pn}, {len(prim)} ops); "
           f"end-to-end loss max rel err {ew:.1e} ({en}, {len(e2e)} tensors)"
           + (f"; no gradient reaches {dead}" if dead else ""))


# --- training fixture ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fixture_run():
    t0 = time.perf_counter()
    run = experiments.train_run(RunConfig())
    run.seconds = time.perf_counter() - t0
    return run


def _converged(trace):
    tail = trace[-10:]
    return (tail.max() - tail.min()) < 0.05 * abs(tail[-1]), (tail.max() - tail.min()) / abs(tail[-1])


def test_training_loss_drop(fixture_run):
    parts, ok = [], True
    for lg in fixture_run.logs:
        loss = lg.column("loss")
        good = loss[-1] <= 0.9 * loss[0]
        ok &= good
        parts.append(f"layer {lg.records[0].layer} {loss[0]:.4f} -> {loss[-1]:.4f} ({loss[-1] / loss[0]:.1%})")
    record("training: epoch-50 loss <= 90% of epoch 1", ok,
           "; ".join(parts) + f"; run took {fixture_run.seconds:.0f} s")


def test_training_violation_trend(fixture_run):
    parts, ok = [], True
    for lg in fixture_run.logs:
        vg = lg.column("test_vg")
        ok &= vg[-1] <= vg[0]
        parts.append(f"layer {lg.records[0].layer} {vg[0]:.4f} -> {vg[-1]:.4f}")
    record("training: test V_g at epoch 50 <= epoch 1", ok, "; ".join(parts))


def test_training_scale_convergence(fixture_run):
    parts, ok = [], True
    for lg in fixture_run.logs:
        for name in ("s1", "s2"):
            good, frac = _converged(lg.column(name))
            ok &= good
            parts.append(f"layer {lg.records[0].layer} {name} {lg.column(name)[-1]:.4f} (range {frac:.1%})")
    record("training: s traces converge (last-10 range < 5%)", ok, "; ".join(parts))


def test_feasibility_ratio(fixture_run):
    rep = metrics.evaluate(fixture_run.model, fixture_run.test)
    record("feasibility ratio w2 >= 0.95", rep.w2 >= 0.95,
           f"w2 = {rep.w2:.3f} on {rep.n} held-out samples (mean V_g {rep.vg.mean():.3g})")


def test_oracle_gap(fixture_run):
    model, test = fixture_run.model, fixture_run.test
    rep = metrics.evaluate(model, test)
    inst = test.instances
    ref = np.full(rep.n, np.nan)
    for i in range(rep.n):
        try:
            ref[i] = oracle.oracle_wsr(inst.real.subset(i)).wsr
        except InfeasibleError:
            pass
    both = rep.feasible & np.isfinite(ref)
    if both.any():
        ratio = rep.wsr[both].mean() / ref[both].mean()
        detail = f"ratio {ratio:.4f} over {both.sum()} samples"
        ok = ratio >= 0.90
    else:
        ratio = float("nan")
        ok = False
        detail = "no sample has V_g = 0, so the ratio is undefined"
    ok_ref = np.isfinite(ref)
    detail += (f"; for context, unconstrained model WSR {rep.wsr[ok_ref].mean():.4f} vs oracle "
               f"{ref[ok_ref].mean():.4f} on {ok_ref.sum()} oracle-feasible samples")
    record("oracle gap >= 0.90", ok, detail)


def test_layer_monotonicity(fixture_run):
    w = experiments.layer_wsr(fixture_run.model, fixture_run.test.instances)
    record("layer monotonicity of test WSR", w[1] >= w[0],
           f"layer 1 {w[0]:.4f}, layer 2 {w[1]:.4f}")
