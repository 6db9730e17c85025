"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import itertools
import math
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from activemri import autodiff as ad
from activemri import mcts
from activemri.config import load_config
from activemri.data import generate_phantoms, load_split, random_phantom
from activemri.mcts import MctsConfig, SearchNode, iter_nodes, run_mcts, ucb_score
from activemri.reconnet import init_reconnet, reconnet_forward, reconnet_loss, train_reconnet_step
from activemri.samplenet import (
    init_samplenet,
    mask_resampling,
    policy_cross_entropy,
    samplenet_forward,
    samplenet_logits,
    train_samplenet_step,
)
from activemri.sampling import VdsParams, vds_pattern
from activemri.signal import dft2_forward, dft2_inverse, mask_spectrum, psnr, zero_fill_reconstruct
from activemri.trainer import evaluate, load_checkpoint, new_state, train
from activemri.tv import tv_reconstruct
from helpers import DeceptiveOracle, away_from_zero, check_store_grads, gradcheck

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.json"


def test_criterion_01_spectral_model(report):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=(1, 32, 32))
        fx = dft2_forward(x)
        worst = max(worst, abs(np.linalg.norm(fx) - np.linalg.norm(x)) / np.linalg.norm(x))
        y = rng.normal(size=(32, 32)) + 1j * rng.normal(size=(32, 32))
        fhy = dft2_inverse(y)
        lhs = np.vdot(y, fx)
        rhs = np.vdot(fhy[0] + 1j * fhy[1], x[0])
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5
    report(1, ok, f"max relative error {worst:.2e}, {elapsed:.2f} s")
    assert ok


def _op_checks(rng):
    state = lambda c: {"mean": np.full(c, 0.1), "var": np.full(c, 1.3)}
    x8 = rng.normal(size=(2, 2, 8, 8))
    yield "conv3x3", gradcheck(lambda x, w, b: ad.conv2d(x, w, b), x8, rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
    yield "conv valid", gradcheck(lambda x, w, b: ad.conv2d(x, w, b, pad="none"), x8,
                                  rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2))
    yield "conv1x1", gradcheck(lambda x, w, b: ad.conv2d(x, w, b), x8, rng.normal(size=(3, 2, 1, 1)), rng.normal(size=3))
    for mode in ("train", "eval"):
        yield f"batchnorm {mode}", gradcheck(lambda x, g, b: ad.batchnorm2d(x, g, b, state(2), mode),
                                             x8, rng.normal(size=2), rng.normal(size=2))
    yield "batchnorm dense", gradcheck(lambda x, g, b: ad.batchnorm2d(x, g, b, state(4), "train"),
                                       rng.normal(size=(5, 4)), rng.normal(size=4), rng.normal(size=4))
    yield "leaky_relu", gradcheck(lambda t: ad.leaky_relu(t), away_from_zero(rng, (2, 2, 8, 8)))
    yield "maxpool", gradcheck(ad.maxpool2x2, rng.permutation(128).reshape(2, 1, 8, 8) / 10.0)
    yield "flatten+dense", gradcheck(lambda x, w, b: ad.dense(ad.flatten(x), w, b), x8,
                                     rng.normal(size=(3, 128)), rng.normal(size=3))
    yield "add", gradcheck(ad.add, x8, rng.normal(size=x8.shape))
    yield "softmax", gradcheck(ad.softmax, rng.normal(size=(3, 8)))
    yield "log_softmax", gradcheck(ad.log_softmax, rng.normal(size=(3, 8)))
    target = rng.normal(size=x8.shape)
    yield "mse", gradcheck(lambda t: ad.mse_loss(t, target), x8)
    probs = rng.dirichlet(np.ones(8), size=3)
    yield "cross_entropy", gradcheck(lambda t: ad.cross_entropy(t, probs), rng.normal(size=(3, 8)))
    yield "half_sq_norm", gradcheck(ad.half_sq_norm, x8)

    recon = init_reconnet(1, width=4, blocks=2, seed=1)
    zf, tgt = rng.random((2, 1, 8, 8)), rng.random((2, 1, 8, 8))
    yield "ReconNet", check_store_grads(lambda: reconnet_loss(reconnet_forward(zf, recon, "train"), tgt), recon)
    sample = init_samplenet(8, base_width=4, max_width=8, dense_width=8, seed=2)
    xs, pis = rng.normal(size=(3, 1, 8, 8)), rng.dirichlet(np.ones(8), size=3)
    yield "SampleNet", check_store_grads(lambda: ad.cross_entropy(samplenet_logits(xs, sample, "train"), pis), sample)


def test_criterion_02_gradient_checks(report):
    start = time.perf_counter()
    errors = dict(_op_checks(np.random.default_rng(2)))
    elapsed = time.perf_counter() - start
    name, worst = max(errors.items(), key=lambda kv: kv[1])
    ok = worst <= 1e-5 and elapsed < 60
    report(2, ok, f"{len(errors)} checks, worst {worst:.2e} ({name}), {elapsed:.1f} s")
    assert ok


def _psnr_direct(z, x):
    n = len(x)
    sq = sum((a - b) ** 2 for a, b in zip(z, x))
    peak = max(abs(v) for v in x)
    return -20 * math.log10(math.sqrt(sq) / math.sqrt(n) / peak)


def test_criterion_03_psnr_oracle(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 9, size=3))
        x, z = rng.normal(size=shape), rng.normal(size=shape)
        worst = max(worst, abs(psnr(z, x) - _psnr_direct(z.ravel().tolist(), x.ravel().tolist())))
    hand = psnr(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    ok = worst <= 1e-9 and round(hand, 4) == 3.0103
    report(3, ok, f"max deviation {worst:.1e} dB over 1000 pairs, hand value {hand:.4f} dB")
    assert ok


def test_criterion_04_mcts_exactness(report, monkeypatch):
    cfg = MctsConfig(budget=2, alpha=0.5, c_puct=1.0, epsilon=0.0)
    hand = ucb_score(SearchNode(np.zeros(4, bool), 0.5, 0.7, 1), 1.0, 0.0, 4, cfg)

    received = defaultdict(list)
    original = mcts.backup

    def logging_backup(path, v):
        for node in path:
            received[id(node)].append(v)
        return original(path, v)

    monkeypatch.setattr(mcts, "backup", logging_backup)
    mismatches, trees = 0, 0
    for seed in range(10):
        oracle = DeceptiveOracle(np.random.default_rng(seed).dirichlet(np.ones(6)))
        root = SearchNode(np.zeros(6, bool))
        received.clear()
        run_mcts(root, oracle, MctsConfig(budget=3, simulations=300), np.random.default_rng(seed))
        trees += 1
        for node in iter_nodes(root):
            vals = received[id(node)]
            if node.N != len(vals) or (vals and (node.Q != sum(vals) / len(vals) or node.V != max(vals))):
                mismatches += 1
            if node.N and node.budget < 3 and node.N != 1 + sum(c.N for c in node.children.values()):
                mismatches += 1
            if node.budget >= 3 and node.children:
                mismatches += 1
    ok = mismatches == 0 and abs(hand - 2.6) <= 1e-12
    report(4, ok, f"ucb hand value {hand:.12g}, {mismatches} mismatches over {trees} trees")
    assert ok


def test_criterion_05_toy_optimality(report):
    oracle = DeceptiveOracle()
    patterns = [np.isin(np.arange(6), s) for s in itertools.combinations(range(6), 3)]
    best = max(patterns, key=oracle.reward)
    start = time.perf_counter()
    hits = 0
    for seed in range(20):
        pi = run_mcts(SearchNode(np.zeros(6, bool)), DeceptiveOracle(), MctsConfig(budget=3, simulations=2000),
                      np.random.default_rng(seed))
        hits += bool(best[int(np.argmax(pi))])
    elapsed = time.perf_counter() - start
    ok = len(patterns) == 20 and hits >= 18 and elapsed < 30
    report(5, ok, f"optimal first line in {hits}/20 seeds, {elapsed:.1f} s")
    assert ok


def _episode_reward(oracle, budget, rng, simulations=None):
    mask = np.zeros(6, bool)
    root = SearchNode(mask)
    while mask.sum() < budget:
        if simulations:
            pi = run_mcts(root, oracle, MctsConfig(budget=budget, simulations=simulations), rng)
        else:
            pi = mask_resampling(oracle.policy(mask), mask)
        line = int(rng.choice(6, p=pi))
        root = root.child(line)
        mask = root.pattern
    return oracle.reward(mask)


def test_criterion_06_policy_improvement(report):
    oracle = DeceptiveOracle([0.3, 0.3, 0.1, 0.1, 0.1, 0.1])
    searched = np.mean([_episode_reward(oracle, 3, np.random.default_rng([s, 0]), 10) for s in range(500)])
    raw = np.mean([_episode_reward(oracle, 3, np.random.default_rng([s, 1])) for s in range(500)])
    ok = searched > raw
    report(6, ok, f"mean reward with search {searched:.4f} vs raw prior {raw:.4f} over 500 seeds")
    assert ok


def _means(rows):
    by = defaultdict(list)
    for _, method, value in rows:
        by[method].append(value)
    return {m: float(np.mean(v)) for m, v in by.items()}


def test_criterion_07_desk_training(report, tmp_path):
    start = time.perf_counter()
    cfg = load_config(DESK_CONFIG)
    manifest = generate_phantoms(tmp_path / "data", 64, 16, seed=cfg.seed)
    _, train_imgs = load_split(manifest, "train")
    test_ids, test_imgs = load_split(manifest, "test")
    cfg.eval_methods = ["ours", "uniform_zf", "lpf_zf"]
    assert cfg.budget(16) == 4
    initial = new_state(cfg, 16, 1)
    before = _means(evaluate(test_ids, test_imgs, initial.recon, initial.sample, cfg))
    state, _ = train(train_imgs, cfg, tmp_path / "run")
    after = _means(evaluate(test_ids, test_imgs, state.recon, state.sample, cfg))
    elapsed = time.perf_counter() - start
    ok = (after["ours"] > after["uniform_zf"] and after["ours"] > after["lpf_zf"]
          and after["ours"] >= before["ours"] + 1 and elapsed < 1800)
    report(7, ok, f"learned {after['ours']:.2f} dB, uniform+zf {after['uniform_zf']:.2f}, "
                  f"lpf+zf {after['lpf_zf']:.2f}, round 0 {before['ours']:.2f}, {elapsed:.0f} s")
    assert ok


def test_criterion_08_tv_baseline(report):
    side = 32
    x = random_phantom(side, np.random.default_rng(8))
    monotone, wins = True, 0
    for seed in range(20):
        mask = vds_pattern(VdsParams(side, side // 4, 2.0, seed))
        out, hist = tv_reconstruct(mask_spectrum(dft2_forward(x), mask), mask)
        monotone &= bool(np.all(np.diff(hist) <= 0))
        wins += psnr(out, x) >= psnr(zero_fill_reconstruct(x, mask), x)
    ok = monotone and wins == 20
    report(8, ok, f"objective monotone: {monotone}, TV >= zero-fill on {wins}/20 masks")
    assert ok


def test_criterion_09_determinism(report, tmp_path):
    from test_trainer import phantoms, tiny_config

    imgs = phantoms(3)
    train(imgs, tiny_config(rounds=2), tmp_path / "a")
    train(imgs, tiny_config(rounds=2), tmp_path / "b")
    same_csv = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    train(imgs, tiny_config(rounds=1), tmp_path / "c")
    state, cfg = load_checkpoint(tmp_path / "c" / "checkpoint_last.npz")
    cfg.rounds = 2
    train(imgs, cfg, tmp_path / "c", state=state)
    resumed = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "c" / n).read_bytes()
                  for n in ("checkpoint_0002.npz", "metrics.csv"))
    ok = same_csv and resumed
    report(9, ok, f"metrics byte-identical: {same_csv}, resume bit-exact: {resumed}")
    assert ok


def test_criterion_10_overfit_one_sample(report):
    rng = np.random.default_rng(10)
    recon = init_reconnet(1, width=16, blocks=2, seed=1)
    target = rng.random((1, 1, 16, 16))
    zf = target + 0.2 * rng.normal(size=target.shape)
    first = [train_reconnet_step(recon, zf, target, lr=3e-3, weight_decay=0.0) for _ in range(200)][0]
    ratio = reconnet_loss(reconnet_forward(zf, recon, "train"), target).value / first

    sample = init_samplenet(16, base_width=8, max_width=16, dense_width=32, seed=2)
    x = rng.normal(size=(1, 1, 16, 16))
    pi = rng.dirichlet(np.ones(16))[None]
    for _ in range(200):
        train_samplenet_step(sample, x, pi, lr=3e-3, weight_decay=0.0)
    gap = policy_cross_entropy(samplenet_forward(x, sample, "train").value[0], pi[0]) - policy_cross_entropy(pi[0], pi[0])
    ok = ratio < 1e-3 and gap <= 1e-2
    report(10, ok, f"ReconNet loss ratio {ratio:.1e}, SampleNet entropy gap {gap:.1e}")
    assert ok
