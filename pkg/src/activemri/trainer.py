"""Self-play loop: tree-search episodes, replay memory, per-round network updates.

Each round draws a handful of training images, plays one episode per
image (tree search proposes an improved line distribution, a line is
drawn from it and committed, the tree is re-rooted, repeat until the
budget), stores the experiences, then trains ReconNet on
(zero-fill, ground truth) pairs and SampleNet on (reconstruction, search
policy) pairs drawn from the replay memory.

Random streams are derived from ``(seed, round, purpose, index)``, so a
run resumed from a checkpoint matches an uninterrupted run exactly and
results do not depend on the number of worker processes.
"""

import csv
import json
import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data
from .mcts import NetworkOracle, SearchNode, run_mcts
from .reconnet import init_reconnet, reconstruct, train_reconnet_step
from .sampling import VdsParams, lpf_pattern, uniform_random_pattern, vds_pattern
from .samplenet import extend_pattern, init_samplenet, mask_resampling, policy, train_samplenet_step
from .signal import dft2_forward, mask_spectrum, psnr, zero_fill_reconstruct
from .tv import TvConfig, tv_reconstruct

__all__ = [
    "ExperienceRecord",
    "Episode",
    "ReplayMemory",
    "RoundOrderError",
    "TrainState",
    "CHECKPOINT_VERSION",
    "initial_pattern",
    "play_episode",
    "run_episode",
    "push_round",
    "train_round",
    "round_steps",
    "new_state",
    "save_checkpoint",
    "load_checkpoint",
    "train",
    "progressive_patterns",
    "method_mask",
    "method_estimate",
    "evaluate",
    "write_eval_csv",
]

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRICS_HEADER = ["round", "mean_reward", "recon_loss", "sample_loss"]
EVAL_HEADER = ["image_id", "method", "psnr_db"]

# stream tags for np.random.default_rng([seed, round, tag, index])
_PICK, _EPISODE, _TRAIN = 1, 2, 3


class RoundOrderError(ValueError):
    """Raised when replay rounds are pushed out of order."""


@dataclass
class ExperienceRecord:
    """One step of an episode.

    A record with ``mcts_policy`` set to ``None`` holds the final
    full-budget pattern; it only feeds ReconNet training.
    """

    pattern: np.ndarray
    zero_fill: np.ndarray
    target_image: np.ndarray
    mcts_policy: np.ndarray
    recon_at_t: np.ndarray
    round_id: int
    t: int


@dataclass
class Episode:
    records: list
    final: ExperienceRecord
    final_psnr: float
    final_reward: float


class ReplayMemory:
    """Experience records grouped by round, keeping the newest ``capacity`` rounds."""

    def __init__(self, capacity=10):
        self.capacity = capacity
        self.rounds = OrderedDict()

    def push(self, records, round_id):
        if self.rounds and round_id <= next(reversed(self.rounds)):
            raise RoundOrderError(f"round {round_id} pushed after round {next(reversed(self.rounds))}")
        self.rounds[round_id] = list(records)
        while self.rounds and next(iter(self.rounds)) <= round_id - self.capacity:
            self.rounds.popitem(last=False)
        return self

    def records(self):
        return [r for recs in self.rounds.values() for r in recs]

    def policy_records(self):
        return [r for r in self.records() if r.mcts_policy is not None]

    def __len__(self):
        return sum(len(v) for v in self.rounds.values())


def push_round(memory, records, round_id):
    return memory.push(records, round_id)


def initial_pattern(side, kind="dc"):
    mask = np.zeros(side, dtype=bool)
    if kind == "dc":
        mask[0] = True
    return mask


def play_episode(image, recon_store, sample_store, cfg, rng, round_id=0):
    """Play one tree-search episode on ``image``."""
    side = image.shape[-1]
    mcfg = cfg.mcts(side)
    oracle = NetworkOracle(image, recon_store, sample_store, cfg.reward_scale, **cfg.forward_kwargs())
    pattern = initial_pattern(side, cfg.initial_pattern)
    if pattern.sum() >= mcfg.budget:
        raise ValueError(f"budget {mcfg.budget} leaves no line to choose after the initial pattern")
    root = SearchNode(pattern)
    records = []
    t = 0
    while root.budget < mcfg.budget:
        pi_tilde = run_mcts(root, oracle, mcfg, rng)
        records.append(ExperienceRecord(
            root.pattern.copy(), oracle.zero_fill(root.pattern), image,
            pi_tilde, oracle.reconstruction(root.pattern), round_id, t,
        ))
        root = root.child(int(rng.choice(side, p=pi_tilde)))
        t += 1
    final = ExperienceRecord(root.pattern.copy(), oracle.zero_fill(root.pattern), image,
                             None, None, round_id, t)
    return Episode(records, final, oracle.psnr(root.pattern), oracle.reward(root.pattern))


def run_episode(image, recon_store, sample_store, cfg, rng, round_id=0):
    return play_episode(image, recon_store, sample_store, cfg, rng, round_id).records


def round_steps(n_examples, batch_size, max_iters, max_epochs):
    """Optimizer steps per round: the epoch cap or the iteration cap, whichever binds."""
    if n_examples == 0:
        return 0
    batch = min(batch_size, n_examples)
    return min(max_iters, math.ceil(max_epochs * n_examples / batch))


def _batches(rng, n, batch, steps):
    """Index batches from concatenated shuffled epochs."""
    need = steps * batch
    order = np.concatenate([rng.permutation(n) for _ in range(-(-need // n))])
    return [order[i * batch:(i + 1) * batch] for i in range(steps)]


def train_round(memory, recon_store, sample_store, cfg, rng):
    """Update both networks from replay memory; returns mean losses."""
    if len(memory) == 0:
        raise ValueError("replay memory is empty")
    records = memory.records()
    if not cfg.train_recon_on_final:
        records = [r for r in records if r.mcts_policy is not None]
    adam = cfg.adam_kwargs()
    fwd = cfg.forward_kwargs()

    recon_losses = []
    batch = min(cfg.batch_size, len(records))
    steps = round_steps(len(records), cfg.batch_size, cfg.max_iters_per_round, cfg.max_epochs_per_round)
    for idx in _batches(rng, len(records), batch, steps):
        zf = np.stack([records[i].zero_fill for i in idx])
        tgt = np.stack([records[i].target_image for i in idx])
        recon_losses.append(train_reconnet_step(recon_store, zf, tgt, **adam, **fwd))

    sample_losses = []
    prec = memory.policy_records()
    if prec:
        batch = min(cfg.batch_size, len(prec))
        steps = round_steps(len(prec), cfg.batch_size, cfg.max_iters_per_round, cfg.max_epochs_per_round)
        for idx in _batches(rng, len(prec), batch, steps):
            x = np.stack([prec[i].recon_at_t for i in idx])
            pi = np.stack([prec[i].mcts_policy for i in idx])
            sample_losses.append(train_samplenet_step(sample_store, x, pi, **adam, **fwd))
    mean = lambda v: float(np.mean(v)) if v else float("nan")
    return mean(recon_losses), mean(sample_losses)


# ------------------------------------------------------------ state / io


@dataclass
class TrainState:
    recon: object
    sample: object
    memory: ReplayMemory
    round: int
    side: int
    channels: int


def new_state(cfg, side, channels):
    dtype = np.dtype(cfg.dtype)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    recon = init_reconnet(channels, cfg.recon_width, cfg.recon_blocks, seed=int(seeds[0]), dtype=dtype,
                          zero_output=cfg.zero_init_final)
    sample = init_samplenet(side, channels, cfg.sample_base_width, cfg.sample_max_width,
                            cfg.sample_dense_width, seed=int(seeds[1]), dtype=dtype,
                            zero_final=cfg.zero_init_final)
    return TrainState(recon, sample, ReplayMemory(cfg.replay_rounds), 0, side, channels)


def save_checkpoint(path, state, cfg):
    arrays = {}
    arrays.update(state.recon.state_arrays("recon/"))
    arrays.update(state.sample.state_arrays("sample/"))
    recs = state.memory.records()
    if recs:
        arrays["memory/pattern"] = np.stack([r.pattern for r in recs])
        arrays["memory/zero_fill"] = np.stack([r.zero_fill for r in recs])
        arrays["memory/target_image"] = np.stack([r.target_image for r in recs])
        has_pi = np.array([r.mcts_policy is not None for r in recs])
        zeros_pi = np.zeros(state.side)
        zeros_img = np.zeros_like(recs[0].zero_fill)
        arrays["memory/has_policy"] = has_pi
        arrays["memory/mcts_policy"] = np.stack([zeros_pi if r.mcts_policy is None else r.mcts_policy for r in recs])
        arrays["memory/recon_at_t"] = np.stack([zeros_img if r.recon_at_t is None else r.recon_at_t for r in recs])
        arrays["memory/round_id"] = np.array([r.round_id for r in recs], dtype=np.int64)
        arrays["memory/t"] = np.array([r.t for r in recs], dtype=np.int64)
    meta = {
        "version": CHECKPOINT_VERSION,
        "round": state.round,
        "side": state.side,
        "channels": state.channels,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    data.write_npz(path, arrays)


def load_checkpoint(path, cfg=None):
    """Rebuild a :class:`TrainState`; the stored config is used unless ``cfg`` is given."""
    from .config import Config

    arrays = data.read_npz(path)
    meta = json.loads(arrays["meta"].tobytes().decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise data.UnsupportedVersionError(f"{path}: checkpoint version {meta.get('version')} unsupported")
    if cfg is None:
        cfg = Config.from_dict(meta["config"])
    state = new_state(cfg, meta["side"], meta["channels"])
    state.recon.load_state_arrays(arrays, "recon/")
    state.sample.load_state_arrays(arrays, "sample/")
    state.round = meta["round"]
    if "memory/pattern" in arrays:
        by_round = OrderedDict()
        for i in range(len(arrays["memory/pattern"])):
            has = bool(arrays["memory/has_policy"][i])
            rec = ExperienceRecord(
                arrays["memory/pattern"][i],
                arrays["memory/zero_fill"][i],
                arrays["memory/target_image"][i],
                arrays["memory/mcts_policy"][i] if has else None,
                arrays["memory/recon_at_t"][i] if has else None,
                int(arrays["memory/round_id"][i]),
                int(arrays["memory/t"][i]),
            )
            by_round.setdefault(rec.round_id, []).append(rec)
        for rid, recs in by_round.items():
            state.memory.push(recs, rid)
    return state, cfg


def _episode_job(args):
    image, recon, sample, cfg, seed, round_id, i = args
    rng = np.random.default_rng([seed, round_id, _EPISODE, i])
    return play_episode(image, recon, sample, cfg, rng, round_id)


def _fmt(v):
    return repr(float(v))


def train(images, cfg, out_dir, state=None, progress=None):
    """Run self-play rounds up to ``cfg.rounds``.

    Writes ``checkpoint_XXXX.npz`` files (round 0, every
    ``cfg.checkpoint_every`` rounds and the last round), ``checkpoint_last.npz``
    and ``metrics.csv``. Passing a ``state`` loaded from a checkpoint
    resumes from its round. Returns the final state and the metrics rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("training split is empty")
    channels, side, _ = images[0].shape
    if state is None:
        state = new_state(cfg, side, channels)
    metrics_path = out_dir / "metrics.csv"
    rows = []
    if state.round > 0 and metrics_path.exists():
        with open(metrics_path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if int(r["round"]) <= state.round]
    if state.round == 0:
        save_checkpoint(out_dir / "checkpoint_0000.npz", state, cfg)

    def write_metrics():
        with open(metrics_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRICS_HEADER, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)

    write_metrics()
    executor = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for r in range(state.round + 1, cfg.rounds + 1):
            pick = np.random.default_rng([cfg.seed, r, _PICK])
            n = min(cfg.images_per_round, len(images))
            chosen = pick.choice(len(images), size=n, replace=False)
            jobs = [(images[k], state.recon, state.sample, cfg, cfg.seed, r, i) for i, k in enumerate(chosen)]
            episodes = list(executor.map(_episode_job, jobs)) if executor else [_episode_job(j) for j in jobs]
            records = []
            for ep in episodes:
                records.extend(ep.records)
                records.append(ep.final)
            state.memory.push(records, r)
            recon_loss, sample_loss = train_round(
                state.memory, state.recon, state.sample, cfg, np.random.default_rng([cfg.seed, r, _TRAIN]))
            state.round = r
            row = {
                "round": str(r),
                "mean_reward": _fmt(np.mean([ep.final_reward for ep in episodes])),
                "recon_loss": _fmt(recon_loss),
                "sample_loss": _fmt(sample_loss),
            }
            rows.append(row)
            write_metrics()
            log.info("round %d reward %s recon %s sample %s", r, row["mean_reward"], row["recon_loss"], row["sample_loss"])
            if progress:
                progress(r, row)
            if r % cfg.checkpoint_every == 0 or r == cfg.rounds:
                save_checkpoint(out_dir / f"checkpoint_{r:04d}.npz", state, cfg)
    finally:
        if executor:
            executor.shutdown()
    save_checkpoint(out_dir / "checkpoint_last.npz", state, cfg)
    return state, rows


# ------------------------------------------------------------ evaluation


def progressive_patterns(image, recon_store, sample_store, budget, cfg):
    """Patterns chosen greedily by SampleNet, one per step, up to ``budget`` lines.

    The ground truth only enters through the zero-filled measurement.
    """
    side = image.shape[-1]
    if budget > side:
        raise ValueError(f"budget {budget} exceeds side {side}")
    fwd = cfg.forward_kwargs()
    pattern = initial_pattern(side, cfg.initial_pattern)
    out = [pattern]
    while pattern.sum() < budget:
        recon = reconstruct(recon_store, zero_fill_reconstruct(image, pattern), **fwd)
        pi = mask_resampling(policy(sample_store, recon, **fwd), pattern)
        pattern = extend_pattern(pattern, pi)
        out.append(pattern)
    return out


def _split_method(method):
    if method == "ours":
        return "ours", "recon"
    if method == "ours_zf":
        return "ours", "zf"
    kind, how = method.split("_")
    return kind, how


def method_mask(image, kind, recon_store, sample_store, cfg, budget, index=0):
    side = image.shape[-1]
    if kind == "ours":
        return progressive_patterns(image, recon_store, sample_store, budget, cfg)[-1]
    if kind == "lpf":
        return lpf_pattern(side, budget)
    if kind == "uniform":
        return uniform_random_pattern(side, budget, [cfg.seed, index])
    if kind == "vds":
        return vds_pattern(VdsParams(side, budget, cfg.vds_exponent, [cfg.seed, index]))
    raise ValueError(f"unknown sampling kind {kind!r}")


def method_estimate(image, method, recon_store, sample_store, cfg, budget=None, index=0, masks=None):
    """Reconstruction of ``image`` by one named method, e.g. ``"vds_tv"``.

    ``index`` selects the random stream of the random-pattern baselines;
    ``masks`` is an optional per-image cache keyed by sampling kind.
    """
    image = np.asarray(image, dtype=np.float64)
    channels, side, _ = image.shape
    T = cfg.budget(side) if budget is None else budget
    if T > side:
        raise ValueError(f"budget {T} exceeds side {side}")
    kind, how = _split_method(method)
    masks = {} if masks is None else masks
    if kind not in masks:
        masks[kind] = method_mask(image, kind, recon_store, sample_store, cfg, T, index)
    mask = masks[kind]
    zf = zero_fill_reconstruct(image, mask)
    if how == "zf":
        return zf
    if how == "recon":
        return reconstruct(recon_store, zf, **cfg.forward_kwargs())
    if how == "tv":
        tv_cfg = TvConfig(cfg.tv_lambda, cfg.tv_max_iters, cfg.tv_step, cfg.tv_tolerance, cfg.tv_inner_iters)
        return tv_reconstruct(mask_spectrum(dft2_forward(image), mask), mask, tv_cfg, channels)[0]
    raise ValueError(f"unknown reconstruction {how!r}")


def evaluate(ids, images, recon_store, sample_store, cfg, budget=None):
    """Per-image PSNR rows ``(image_id, method, psnr_db)`` for every configured method."""
    rows = []
    for n, (image_id, image) in enumerate(zip(ids, images)):
        image = np.asarray(image, dtype=np.float64)
        masks = {}
        for method in cfg.eval_methods:
            est = method_estimate(image, method, recon_store, sample_store, cfg, budget, n, masks)
            rows.append((image_id, method, psnr(est, image)))
    return rows


def write_eval_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for image_id, method, value in rows:
            w.writerow([image_id, method, _fmt(value)])
