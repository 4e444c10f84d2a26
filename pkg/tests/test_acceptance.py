"""Acceptance suite: one PASS/FAIL line per criterion, collected in the terminal summary."""

import csv
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from aacp import tensor as T
from aacp.data import mask_patches
from aacp.eval import GaussianStats, emd_1d, emd_hist, fid, grad_cam, lcc, smooth_grad_cam, srcc
from aacp.linalg import sqrtm_psd, svd
from aacp.model import (
    AACPNet, DisentangledHead, EncoderConfig, ModelConfig, channel_perceive, masked_patch_loss,
    spatial_modulate,
)
from aacp.model.mae import patch_weights
from aacp.tensor import Tensor, gradcheck, precision
from aacp.tensor.gradcheck import relative_error
from aacp.train import mse_loss
from test_eval import LinearModel, fid_oracle, pearson_oracle, random_psd, rank_oracle, transport_oracle

GRAD_TOL = 1e-4
GRAD_BUDGET = 120.0


def leaf(rng, shape, low=None, high=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, shape)
    return Tensor(data, requires_grad=True, dtype=np.float64)


def away_from(x, points, margin=0.05):
    for p in points:
        x.data = np.where(np.abs(x.data - p) < margin, p + 2 * margin, x.data)
    return x


def _weights(shape):
    return Tensor(np.linspace(-1.0, 1.5, int(np.prod(shape))).reshape(shape))


# each case builds (fn, inputs) for one shape; fn rebuilds the graph
def _unary(op, points=()):
    def build(rng, shape):
        x = away_from(leaf(rng, shape), points)
        w = _weights(op(Tensor(x.data)).shape)
        return (lambda: op(x) * w), [x]
    return build


def _binary(op, positive_rhs=False):
    def build(rng, shapes):
        a = leaf(rng, shapes[0])
        b = leaf(rng, shapes[1], 0.5, 2.0) if positive_rhs else leaf(rng, shapes[1])
        return (lambda: op(a, b) * op(a, b)), [a, b]
    return build


def _matmul(rng, shapes):
    a, b = leaf(rng, shapes[0]), leaf(rng, shapes[1])
    return (lambda: T.matmul(a, b) * T.matmul(a, b)), [a, b]


def _conv2d(rng, spec):
    shape, k, stride, pad = spec
    x, w, b = leaf(rng, shape), leaf(rng, (2, shape[1], k, k)), leaf(rng, (2,))
    return (lambda: T.gelu(T.conv2d(x, w, b, stride=stride, padding=pad))), [x, w, b]


def _conv1d(rng, shape):
    x, w, b = leaf(rng, shape), leaf(rng, (1, shape[1], 3)), leaf(rng, (1,))
    return (lambda: T.sigmoid(T.conv1d(x, w, b, padding=1))), [x, w, b]


def _channel_stats(rng, shape):
    f = leaf(rng, shape)
    def fn():
        mu, sigma = T.channel_stats(f)
        return mu * sigma + sigma
    return fn, [f]


def _layer_norm(rng, shape):
    x, w, b = leaf(rng, shape), leaf(rng, shape[-1:]), leaf(rng, shape[-1:])
    return (lambda: T.layer_norm(x, w, b) * T.layer_norm(x, w, b)), [x, w, b]


def _indexing(rng, shape):
    x = leaf(rng, shape)
    idx = np.stack([np.array([shape[1] - 1, 0, 0]) for _ in range(shape[0])])
    def fn():
        both = T.concat([T.gather(x, idx, axis=1), T.take(x, np.array([1, 1]), axis=1)], axis=1)
        return both * both
    return fn, [x]


def _sqrt_floor(rng, shape):
    x = leaf(rng, shape, 0.5, 2.0)
    return (lambda: T.sqrt_floor(x, 1e-5)), [x]


def _modulate(rng, shape):
    f, ws, wm = leaf(rng, shape), leaf(rng, shape[:2]), leaf(rng, shape[:2])
    w = _weights(shape)
    return (lambda: spatial_modulate(f, ws, wm) * w), [f, ws, wm]


def _perceive(rng, shape):
    x, w, b = leaf(rng, shape), leaf(rng, (1, 1, 3)), leaf(rng, (1,))
    g = _weights(shape)
    return (lambda: channel_perceive(x, w, b) * g), [x, w, b]


S3 = [(3,), (2, 4), (2, 3, 4)]
BROADCAST = [((3,), (3,)), ((2, 4), (4,)), ((2, 3, 4), (3, 1))]
OPS = {
    "neg": (_unary(lambda x: -x), S3),
    "relu": (_unary(T.relu, (0.0,)), S3),
    "sigmoid": (_unary(T.sigmoid), S3),
    "gelu": (_unary(T.gelu), S3),
    "softmax": (_unary(lambda x: T.softmax(x, axis=-1)), S3),
    "sum": (_unary(lambda x: T.sum(x * x, axis=0)), S3),
    "mean": (_unary(lambda x: T.mean(x * x, axis=-1)), S3),
    "reshape": (_unary(lambda x: T.reshape(x, (-1,))), S3),
    "transpose": (_unary(T.transpose), S3),
    "clamp": (_unary(lambda x: T.clamp(x, -0.5, 0.5), (-0.5, 0.5)), S3),
    "add": (_binary(T.add), BROADCAST),
    "sub": (_binary(T.sub), BROADCAST),
    "mul": (_binary(T.mul), BROADCAST),
    "div": (_binary(T.div, positive_rhs=True), BROADCAST),
    "matmul": (_matmul, [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 2, 3), (2, 3, 2))]),
    "conv2d": (_conv2d, [((1, 2, 5, 5), 3, 1, 1), ((2, 1, 6, 6), 3, 2, 1), ((1, 3, 4, 4), 1, 1, 0)]),
    "conv1d": (_conv1d, [(1, 1, 5), (2, 1, 8), (3, 1, 4)]),
    "channel_stats": (_channel_stats, [(1, 1, 3, 3), (2, 3, 4, 4), (1, 2, 2, 5)]),
    "layer_norm": (_layer_norm, [(2, 3), (2, 4, 5), (1, 3, 6)]),
    "gather/take/concat": (_indexing, [(1, 4, 2), (2, 5, 3), (3, 6, 1)]),
    "sqrt_floor": (_sqrt_floor, [(4,), (2, 3), (2, 2, 2)]),
    "spatial_modulate": (_modulate, [(1, 2, 3, 3), (2, 3, 4, 4), (1, 1, 5, 2)]),
    "channel_perceive": (_perceive, [(1, 2, 4), (2, 3, 5), (3, 1, 6)]),
}

TINY = ModelConfig(
    encoder=EncoderConfig(input_size=32, patch=16, conv_widths=(4, 8), embed_dim=8, depth=1, heads=2),
    spatial_widths=(4, 4, 6, 6), head_buffer=64, min_refresh_rows=16,
)


def sampled_gradcheck(loss_fn, params, rng, per_tensor=3, h=1e-3):
    """Finite differences on a few random entries of every parameter tensor."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    return worst


def end_to_end_errors(batch, seed):
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        m = AACPNet(TINY, seed=seed)
        m.head.basis.data = np.linalg.qr(rng.normal(size=(TINY.fused_dim, 8)))[0]
        m.head.weight.data = rng.uniform(0.2, 0.4, 8)
        x = Tensor(rng.uniform(size=(batch, 3, 32, 32)))
        target = rng.uniform(0.3, 0.7, size=(batch, 8))
        raw = m.forward_scores(x).raw.data
        assert (raw > 0.01).all() and (raw < 0.99).all()
        return sampled_gradcheck(lambda: mse_loss(m.forward_scores(x).scores, target),
                                 [p for _, p in m.named_parameters()], rng)


def test_criterion_1_gradient_integrity(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, where = 0.0, ""
    with precision(np.float64):
        for name, (build, shapes) in OPS.items():
            for shape in shapes:
                fn, inputs = build(rng, shape)
                err = gradcheck(fn, inputs, h=1e-3)
                if err >= worst:
                    worst, where = err, f"{name} {shape}"
    e2e = [end_to_end_errors(batch, seed) for batch, seed in ((1, 3), (2, 4), (3, 5))]
    e2e_worst = max(e2e)
    elapsed = time.perf_counter() - start
    ok = worst < GRAD_TOL and e2e_worst < GRAD_TOL and elapsed < GRAD_BUDGET
    verdict(1, "gradient integrity", ok,
            f"{len(OPS)} ops x 3 shapes worst rel err {worst:.2e} at {where}; end-to-end worst {e2e_worst:.2e} "
            f"(predict loss, batch sizes 1-3); {elapsed:.1f}s (limits {GRAD_TOL:g}, {GRAD_BUDGET:g}s)")
    assert ok


def test_criterion_2_linear_algebra(verdict):
    rng = np.random.default_rng(202)
    res_svd = orth = res_sqrt = 0.0
    for _ in range(200):
        m, n = int(rng.integers(1, 65)), int(rng.integers(1, 33))
        A = rng.normal(size=(m, n)) * rng.uniform(0.1, 10)
        r = svd(A)
        k = r.S.size
        res_svd = max(res_svd, np.linalg.norm(r.reconstruct() - A) / max(1.0, np.linalg.norm(A)))
        orth = max(orth, np.abs(r.U.T @ r.U - np.eye(k)).max(), np.abs(r.V.T @ r.V - np.eye(k)).max())
    for _ in range(100):
        n = int(rng.integers(1, 33))
        S = random_psd(rng, n, rank=int(rng.integers(1, n + 3)))
        R = sqrtm_psd(S)
        res_sqrt = max(res_sqrt, np.linalg.norm(R @ R - S) / max(1.0, np.linalg.norm(S)))
    ok = res_svd < 1e-8 and orth < 1e-8 and res_sqrt < 1e-8
    verdict(2, "linear algebra", ok,
            f"svd residual {res_svd:.2e}, orthonormality {orth:.2e} over 200 matrices up to 64x32; "
            f"sqrtm residual {res_sqrt:.2e} over 100 PSD matrices up to 32x32 (limit 1e-8)")
    assert ok


def test_criterion_3_metric_oracles(verdict):
    rng = np.random.default_rng(303)
    corr = 0.0
    for _ in range(50):
        n = int(rng.integers(3, 40))
        x, y = rng.integers(0, 5, n).astype(float), rng.integers(0, 4, n).astype(float)
        if x.std() == 0 or y.std() == 0:
            continue
        corr = max(corr, abs(srcc(x, y) - pearson_oracle(rank_oracle(x), rank_oracle(y))))
        u, v = rng.normal(size=n), rng.normal(size=n)
        corr = max(corr, abs(lcc(u, v) - pearson_oracle(u, v)))
    emd = 0.0
    for _ in range(500):
        k = int(rng.integers(2, 12))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        emd = max(emd, abs(emd_hist(p, q) - transport_oracle(p, q)))
        a, b = rng.integers(0, k, int(rng.integers(1, 30))), rng.integers(0, k, int(rng.integers(1, 30)))
        hp, hq = (np.bincount(v, minlength=k) / len(v) for v in (a, b))
        emd = max(emd, abs(emd_1d(a, b, bins=k, lo=0, hi=k - 1) - transport_oracle(hp, hq)))
    gap = 0.0
    for d in (3, 8, 16):
        ca, cb = random_psd(rng, d), random_psd(rng, d)
        ma, mb = rng.normal(size=d), rng.normal(size=d)
        got = fid(GaussianStats(ma, ca, 1000), GaussianStats(mb, cb, 1000))
        gap = max(gap, abs(got - fid_oracle(ma, ca, mb, cb)))
    ok = corr < 1e-12 and emd < 1e-9 and gap < 1e-6
    verdict(3, "metric oracles", ok,
            f"srcc/lcc gap {corr:.1e} (limit 1e-12); emd vs transport LP {emd:.1e} over 500 histogram "
            f"and 500 sample pairs "
            f"(limit 1e-9); fid vs eigen oracle {gap:.1e} (limit 1e-6)")
    assert ok


def test_criterion_4_masking_contract(verdict):
    counts = {len(mask_patches((256, 256), 0.75, 16, seed=s).masked) for s in range(20)}
    rng = np.random.default_rng(404)
    with precision(np.float64):
        img = Tensor(rng.uniform(size=(1, 3, 256, 256)), requires_grad=True)
        mask = mask_patches((256, 256), 0.75, 16, seed=7)
        masked_patch_loss(Tensor(rng.normal(size=(1, 256, 768))), img, 16, patch_weights([mask], 1, 256)).backward()
    visible = mask.pixel_mask(256).astype(bool)
    leak = float(np.abs(img.grad[0][:, visible]).max())
    ok = counts == {192} and leak == 0.0 and img.grad[0][:, ~visible].any()
    verdict(4, "masking contract", ok,
            f"masked counts over 20 seeds {sorted(counts)} (want 192 of 256); "
            f"max |grad| on visible targets {leak:g}")
    assert ok


def test_criterion_5_modulation_and_gate(verdict):
    rng = np.random.default_rng(505)
    with precision(np.float64):
        f = rng.normal(1.0, 2.0, size=(2, 3, 5, 5))
        mu, sigma = T.channel_stats(Tensor(f))
        ident = float(np.abs(spatial_modulate(Tensor(f), sigma, mu).data - f).max())
        g = rng.normal(3.0, 4.0, size=(2, 3, 6, 6))
        out = spatial_modulate(Tensor(g), Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 3)))).data
        std_err = max(float(np.abs(out.mean(axis=(2, 3))).max()), float(np.abs(out.std(axis=(2, 3)) - 1).max()))
        x = rng.normal(size=(2, 5, 7))
        halved = channel_perceive(Tensor(x), Tensor(np.zeros((1, 1, 3))), Tensor(np.zeros(1))).data
    exact = halved.tobytes() == (0.5 * x).tobytes()
    ok = ident < 1e-6 and std_err < 1e-4 and exact
    verdict(5, "modulation and channel gate", ok,
            f"identity reconstruction err {ident:.1e} (limit 1e-6); standardization err {std_err:.1e} "
            f"(limit 1e-4); zero-parameter gate halves exactly: {exact}")
    assert ok


def test_criterion_6_disentanglement(verdict):
    rng = np.random.default_rng(606)
    ratio = 0.0
    with precision(np.float64):
        for standardize in (True, False):
            head = DisentangledHead(30, capacity=200, min_rows=10, standardize=standardize)
            head.push(rng.normal(size=(200, 30)) @ rng.normal(size=(30, 30)))
            assert head.refresh()
            c = head.coordinates(head.buffer_rows())
            cov = c.T @ c / len(c)
            ratio = max(ratio, np.abs(cov - np.diag(np.diag(cov))).max() / np.diag(cov).max())
        m = AACPNet(TINY, seed=0)
        m.head.basis.data = np.linalg.qr(rng.normal(size=(TINY.fused_dim, 8)))[0]
        m.head.weight.data = rng.uniform(0.2, 0.4, 8)
        out = m.forward_scores(Tensor(rng.uniform(size=(2, 3, 32, 32))))
        T.mean(out.raw * out.raw).backward()
    basis_grad = m.head.basis.grad
    zero = basis_grad is None or not np.any(basis_grad)
    ok = ratio < 1e-6 and zero
    verdict(6, "disentanglement", ok,
            f"max off-diagonal / max diagonal covariance {ratio:.1e} (limit 1e-6); basis gradient is zero: {zero}")
    assert ok


# -- end-to-end runs --------------------------------------------------------
E2E = {"count": 256, "size": 64, "pretrain": 100, "supervised": 200, "batch": 16, "lr": 1e-4, "seed": 0}
WALL_LIMIT = 30 * 60
MSE_LIMIT = 0.02
SRCC_FLOOR = 0.5


def cli(*argv):
    subprocess.run([sys.executable, "-m", "aacp.cli", *map(str, argv)], check=True, capture_output=True,
                   env={**os.environ, "PYTHONHASHSEED": "0"})


def run_pipeline(root):
    c = E2E
    common = ["--batch", c["batch"], "--lr", c["lr"], "--seed", c["seed"]]
    start = time.perf_counter()
    cli("gen-data", "--count", c["count"], "--image-size", c["size"], "--seed", c["seed"], "--out-dir", root / "corpus")
    cli("pretrain", "--corpus", root / "corpus", "--epochs", c["pretrain"], *common, "--out-dir", root / "pre")
    cli("train", "--corpus", root / "corpus", "--checkpoint-in", root / "pre" / "pretrain.ckpt",
        "--epochs", c["supervised"], *common, "--out-dir", root / "sup")
    for split in ("train", "test"):
        cli("eval", "--checkpoint", root / "sup" / "supervised.ckpt", "--corpus", root / "corpus",
            "--split", split, "--out-dir", root / f"eval-{split}")
    return time.perf_counter() - start


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    roots = [tmp_path_factory.mktemp(f"e2e{i}") for i in range(2)]
    return [(root, run_pipeline(root)) for root in roots]


def report_mean(root, split):
    return json.loads((root / f"eval-{split}" / "report.json").read_text())["mean"]


def log_without_wall(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    drop = rows[0].index("wall-seconds")
    return [[v for i, v in enumerate(r) if i != drop] for r in rows]


@pytest.mark.slow
def test_criterion_7_end_to_end_learning(e2e_runs, verdict):
    root, wall = e2e_runs[0]
    train_mse = report_mean(root, "train")["mse"]
    test_srcc = report_mean(root, "test")["srcc"]
    ok = train_mse <= MSE_LIMIT and test_srcc >= SRCC_FLOOR and wall <= WALL_LIMIT
    verdict(7, "end-to-end learning", ok,
            f"train MSE {train_mse:.4f} (limit {MSE_LIMIT}); held-out mean SRCC {test_srcc:.3f} "
            f"(floor {SRCC_FLOOR}); wall {wall / 60:.1f} min, cpu count {os.cpu_count()} (limit 30)")
    assert ok


@pytest.mark.slow
def test_criterion_8_determinism(e2e_runs, verdict):
    (a, _), (b, _) = e2e_runs
    ckpts = ("pre/pretrain.ckpt", "sup/supervised.ckpt")
    same_ckpt = all((a / p).read_bytes() == (b / p).read_bytes() for p in ckpts)
    same_logs = all(log_without_wall(a / d / "metrics.csv") == log_without_wall(b / d / "metrics.csv")
                    for d in ("pre", "sup"))
    same_reports = all(report_mean(a, s) == report_mean(b, s) for s in ("train", "test"))
    ok = same_ckpt and same_logs and same_reports
    verdict(8, "determinism", ok,
            f"checkpoints bit-identical: {same_ckpt}; metric logs identical apart from wall-seconds: "
            f"{same_logs}; eval reports identical: {same_reports}")
    assert ok


def test_criterion_9_saliency(verdict):
    rng = np.random.default_rng(909)
    with precision(np.float64):
        model = LinearModel(rng)
        gap, exact, k = 0.0, True, 0
        while k < 8:
            image = rng.uniform(0, 1, (3, 16, 16))
            with np.errstate(invalid="ignore"):
                ref = model.analytic(image, k)
            if not np.isfinite(ref).all():
                # all-negative map: the reference is undefined, draw again
                continue
            smooth = smooth_grad_cam(model, image, k, n=1, noise_std=0.0)
            exact &= smooth.tobytes() == grad_cam(model, image, k).tobytes()
            gap = max(gap, float(np.abs(smooth - ref).max()))
            k += 1
    ok = exact and gap < 1e-6
    verdict(9, "saliency sanity", ok,
            f"n=1 noise=0 smoothing equals grad-cam exactly: {exact}; analytic linear map gap {gap:.1e} (limit 1e-6)")
    assert ok
