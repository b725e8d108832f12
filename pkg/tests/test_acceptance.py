"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line that is
also collected into the terminal summary."""
import math
import time

import numpy as np
import pytest
from scipy.special import j0

from ddpredict import chansim
from ddpredict import dataset as ds
from ddpredict import experiments as ex
from ddpredict.cli import main
from ddpredict.errors import BadMagicError, ShapeMismatchError
from ddpredict.metrics import nmse
from ddpredict.model import PhysicsAwarePredictor, Predictor, PredictorConfig, pretrain_then_finetune
from ddpredict.nn import autograd as ag
from ddpredict.nn import checkpoint
from ddpredict.persist import estimator_bytes, estimator_from_bytes

from helpers import grad_rel_error, numeric_grad


def test_jakes_autocorrelation(criterion):
    t0 = time.perf_counter()
    worst = {}
    for v in (100, 300, 500):
        cfg = chansim.SimConfig(velocity_kmh=v, nonzero_taps=1, rng_seed=0)
        fd = cfg.max_doppler_hz
        lags = math.ceil(2 / (fd * cfg.dt))                   # two coherence times 1/f_d
        H = np.stack([chansim.generate_taps(cfg, lags + 1, r).frames[:, 0] for r in range(10000)])
        r = (H * np.conj(H[:, :1])).mean(axis=0) / np.mean(np.abs(H) ** 2)
        want = j0(2 * np.pi * fd * np.arange(lags + 1) * cfg.dt)
        worst[v] = float(np.max(np.abs(r - want)))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 0.05 and dt < 60
    criterion(1, ok, f"max |R - J0| {max(worst.values()):.4f} (<= 0.05) over 10^4 realizations, "
                     f"per velocity {worst}; runtime {dt:.1f} s (< 60 s)")


def test_bem_residuals(criterion):
    rng = np.random.default_rng(0)
    worst_increase, worst_full = 0.0, 0.0
    for k in range(100):
        cfg = chansim.SimConfig(velocity_kmh=float(rng.uniform(100, 500)), rng_seed=k)
        seq = chansim.generate_taps(cfg, 32, realization=k)
        start = int(rng.integers(0, 16))
        T = int(rng.integers(4, 33 - start))
        window = (start, start + T)
        energy = np.sum(np.abs(seq.frames[start:start + T]) ** 2)
        res = [chansim.bem_fit(seq, q, window).residual_energy / energy for q in range(1, T + 1)]
        worst_increase = max(worst_increase, float(np.max(np.diff(res))))
        worst_full = max(worst_full, res[-1])
    ok = worst_increase <= 1e-12 and worst_full <= 1e-10
    criterion(2, ok, f"largest residual increase in Q {worst_increase:.2e} (<= 0), "
                     f"worst full-order relative residual {worst_full:.2e} (<= 1e-10), 100 windows")


def test_nmse_oracle(criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        L, F = rng.integers(1, 11, size=2)
        H = rng.standard_normal((L, F)) + 1j * rng.standard_normal((L, F))
        P = rng.standard_normal((L, F)) + 1j * rng.standard_normal((L, F))
        num = den = 0.0
        for i in range(L):
            for j in range(F):
                num += abs(H[i, j] - P[i, j]) ** 2
                den += abs(H[i, j]) ** 2
        worst = max(worst, abs(nmse(H, P) - num / den) / (num / den))
    analytic = nmse(H, H) == 0.0 and nmse(H, np.zeros_like(H)) == 1.0 and nmse(H, 2 * H) == 1.0
    criterion(3, worst <= 1e-12 and analytic,
              f"worst relative deviation from double-loop NMSE {worst:.2e} (<= 1e-12) on 1000 pairs; "
              f"analytic cases exact: {analytic}")


def test_gradient_check(criterion):
    t0 = time.perf_counter()
    cfg = PredictorConfig(l=2, n_p=4, n_f=2, k_d=1, d_model=8, depth=1, heads=2)
    net = Predictor(cfg, seed=0)
    rng = np.random.default_rng(1)
    X_H, X_D = rng.standard_normal((3, 4, 4)), rng.standard_normal((3, 1, 4))
    target = rng.standard_normal((3, 4, 2))
    # perturb away from the initial zeros and ones so every path carries signal
    for g in net.groups:
        for _, t in g.items():
            t.data = t.data + 0.1 * rng.standard_normal(t.shape)

    def loss():
        return ag.mse_loss(net.forward(X_H, X_D), target)

    tensors = [(f"{g.name}.{n}", t) for g in net.groups if g.trainable for n, t in g.items()]
    for _, t in tensors:
        t.grad = None
    ag.backward(loss())
    errs = {}
    for name, t in tensors:
        num = numeric_grad(lambda: float(loss().data), t.data)
        errs[name] = grad_rel_error(t.grad, num)
    dt = time.perf_counter() - t0
    name, worst = max(errs.items(), key=lambda kv: kv[1])
    criterion(4, worst <= 1e-4 and dt < 30,
              f"worst relative gradient error {worst:.2e} ({name}) over {len(errs)} tensors "
              f"(<= 1e-4); runtime {dt:.1f} s (< 30 s)")


def test_freeze_contract(criterion):
    cfg = ex.ExperimentConfig(n_samples=120)
    broad_split = ex.build_split(cfg, seed=1)
    target_split = ex.build_split(cfg.with_(velocities=(450,)), seed=2)
    arrays = lambda sp: ds.to_arrays(sp.train, broad_split.stats) + ds.to_arrays(sp.val, broad_split.stats)
    p = PhysicsAwarePredictor(d_model=16, depth=1, heads=2, epochs=3, freeze_core=True, random_state=0)
    one, two = pretrain_then_finetune(p, arrays(broad_split), arrays(target_split), finetune_epochs=3)
    frozen = [g.name for g in two.net_.groups if not g.trainable]
    same = all(one.net_.group(n).tensors[k].data.tobytes() == two.net_.group(n).tensors[k].data.tobytes()
               for n in frozen for k in one.net_.group(n).tensors)
    moved = one.net_.digest() != two.net_.digest()
    criterion(5, bool(frozen) and same and moved,
              f"frozen groups {frozen} bit-identical after phase 2: {same}; trainable groups updated: {moved}")


def test_overfit_capacity(criterion):
    cfg = ex.ExperimentConfig(n_samples=40, split_ratios=(0.8, 0.1, 0.1))
    sp = ex.build_split(cfg, seed=1)
    X, y = ds.to_arrays(sp.train[:32], sp.stats)
    p = PhysicsAwarePredictor(epochs=2000, batch_size=32, lr=1e-3, early_stop_patience=0, random_state=0)
    p.fit(X, y, scoring=ex.nmse_scorer(sp.stats))
    score, _, _ = ex.evaluate(p, sp.train[:32], sp.stats)
    criterion(6, len(X) == 32 and score <= 1e-3,
              f"train NMSE {score:.2e} on 32 samples after 2000 epochs (<= 1e-3)")


def _ratio_line(phys, abl, xs):
    return ", ".join(f"{x:g}: {phys.point(x).nmse_median:.3e}/{abl.point(x).nmse_median:.3e}="
                     f"{phys.point(x).nmse_median / abl.point(x).nmse_median:.2f}" for x in xs)


@pytest.fixture(scope="module")
def velocity_sweep():
    t0 = time.perf_counter()
    reps = ex.sweep_velocity(["physics", "ablation", "persistence"], seeds=(1, 2, 3))
    return {r.method: r for r in reps}, time.perf_counter() - t0


def test_velocity_ordering(criterion, velocity_sweep):
    reps, dt = velocity_sweep
    phys, abl = reps["physics"], reps["ablation"]
    xs = (400.0, 450.0, 500.0)
    ok = all(phys.point(x).nmse_median <= 0.8 * abl.point(x).nmse_median for x in xs) and dt < 600
    criterion(7, ok, f"median NMSE physics/ablation at 400/450/500 km/h {_ratio_line(phys, abl, xs)} "
                     f"(each <= 0.80); sweep runtime {dt:.0f} s (< 600 s)")


def test_velocity_persistence_monotone(velocity_sweep):
    med = velocity_sweep[0]["persistence"].medians()
    assert np.all(np.diff(med) > 0)


def test_horizon_ordering(criterion):
    t0 = time.perf_counter()
    reps = {r.method: r for r in ex.sweep_horizon(["physics", "ablation", "persistence"], range(1, 11),
                                                   seeds=(1, 2, 3), retrain=False)}
    dt = time.perf_counter() - t0
    phys, abl = reps["physics"], reps["ablation"]
    xs = (8.0, 10.0)
    ratios_ok = all(phys.point(x).nmse_median <= 0.8 * abl.point(x).nmse_median for x in xs)
    pers = reps["persistence"].medians()
    mono = bool(np.all(np.diff(pers) >= 0))
    criterion(8, ratios_ok and mono,
              f"median NMSE physics/ablation at horizons 8/10 {_ratio_line(phys, abl, xs)} (each <= 0.80); "
              f"persistence non-decreasing in horizon: {mono}; runtime {dt:.0f} s")


def test_cli_determinism(criterion, tmp_path):
    flags = ["--set", "n_samples=300", "--set", "epochs=3"]
    outs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        rc = [main(["gen", "--out", str(d / "data.ddp")] + flags),
              main(["train", "--data", str(d / "data.ddp"), "--out", str(d / "model.ddpc")] + flags),
              main(["eval", "--checkpoint", str(d / "model.ddpc"), "--data", str(d / "data.ddp"),
                    "--out-dir", str(d)] + flags)]
        outs.append((rc, (d / "data.ddp").read_bytes(), (d / "model.ddpc").read_bytes(),
                     (d / "eval_test.csv").read_bytes()))
    (rc_a, *a), (rc_b, *b) = outs
    same = [x == y for x, y in zip(a, b)]
    criterion(9, rc_a == rc_b == [0, 0, 0] and all(same),
              f"two gen/train/eval runs: dataset, checkpoint, CSV byte-identical {same}")


def test_serialization(criterion, tmp_path):
    cfg = ex.ExperimentConfig(n_samples=60, descriptors=("max_doppler_hz", "snr_db"))
    split = ex.build_split(cfg, seed=3)
    ds.save_dataset(split, tmp_path / "d.ddp")
    data_ok = ds.load_dataset(tmp_path / "d.ddp") == split and \
        ds.dataset_bytes(ds.load_dataset(tmp_path / "d.ddp")) == (tmp_path / "d.ddp").read_bytes()

    X, y = ds.to_arrays(split.train, split.stats)
    est = PhysicsAwarePredictor(d_model=8, depth=1, heads=2, epochs=1, descriptor_rows=(0, 1)).fit(X, y)
    buf = estimator_bytes(est)
    back = estimator_from_bytes(buf)
    ckpt_ok = estimator_bytes(back) == buf and np.array_equal(back.predict(X), est.predict(X))

    errors = []
    bad = bytearray(ds.dataset_bytes(split))
    bad[:4] = b"XXXX"
    try:
        ds.parse_dataset(bytes(bad))
    except BadMagicError as e:
        errors.append(type(e))
    try:
        ds.parse_dataset(ds.dataset_bytes(split), expect_shape=(12, None, None, None))
    except ShapeMismatchError as e:
        errors.append(type(e))
    bad = bytearray(buf)
    bad[:4] = b"XXXX"
    try:
        estimator_from_bytes(bytes(bad))
    except BadMagicError as e:
        errors.append(type(e))
    header, arrays = checkpoint.parse_archive(buf)
    other = Predictor(PredictorConfig(l=10, n_p=16, n_f=4, k_d=2, d_model=16, depth=1, heads=2))
    try:
        checkpoint.load_into(other.groups, header, arrays)
    except ShapeMismatchError as e:
        errors.append(type(e))
    distinct = errors == [BadMagicError, ShapeMismatchError] * 2 and BadMagicError.code != ShapeMismatchError.code
    criterion(10, data_ok and ckpt_ok and distinct,
              f"dataset round trip exact: {data_ok}; checkpoint round trip exact: {ckpt_ok}; "
              f"distinct bad-magic/shape-mismatch errors for both formats: {distinct}")
