"""Tree search over line patterns with implicit minimax backup.

Each node is a sampling pattern and stores the mean (Q) and maximum (V)
of every reward backed up through it plus a visit count (N). The first
visit to a node expands it: the policy network gives a prior over the
unsampled lines, Dirichlet noise is drawn, and a rollout to the full
budget provides the reward. Later visits descend by the upper confidence
bound

    U = (1 - alpha) Q + alpha V + c_puct ((1 - eps) prior + eps noise) sqrt(N_parent / N_child)

with unvisited children taken first in order of their noised prior.

Anything with ``policy(mask) -> probs`` and ``reward(mask) -> float``
methods can drive the search; :class:`NetworkOracle` wraps the two
networks and a ground-truth image.
"""

from dataclasses import dataclass, field

import numpy as np

from .reconnet import reconstruct
from .samplenet import mask_resampling, policy
from .signal import PSNR_SATURATION, psnr, zero_fill_reconstruct

__all__ = [
    "SearchContractError",
    "MctsConfig",
    "SearchNode",
    "NetworkOracle",
    "normalized_reward",
    "ucb_score",
    "backup",
    "dirichlet_noise",
    "simulate",
    "search",
    "mcts_policy",
    "run_mcts",
    "iter_nodes",
]


class SearchContractError(RuntimeError):
    """Raised when a search routine is called outside its contract."""


@dataclass(frozen=True)
class MctsConfig:
    budget: int
    alpha: float = 0.5
    c_puct: float = 1.0
    epsilon: float = 0.25
    dirichlet_concentration: float = 0.3
    simulations: int = 10


@dataclass(eq=False)
class SearchNode:
    pattern: np.ndarray
    Q: float = 0.0
    V: float = -np.inf
    N: int = 0
    children: dict = field(default_factory=dict)
    prior: np.ndarray = None
    noise: np.ndarray = None
    W: float = None  # running reward sum, so Q = W / N is exact

    def __post_init__(self):
        if self.W is None:
            self.W = self.Q * self.N

    @property
    def budget(self):
        return int(self.pattern.sum())

    def child(self, line):
        node = self.children.get(line)
        if node is None:
            pattern = self.pattern.copy()
            pattern[line] = True
            node = self.children[line] = SearchNode(pattern)
        return node


def normalized_reward(psnr_db, scale=40.0):
    """Map PSNR in dB to ``[0, 1]`` with ``p / (p + scale)``, clamping p >= 0."""
    if psnr_db >= PSNR_SATURATION:
        return 1.0
    p = max(float(psnr_db), 0.0)
    return p / (p + scale)


class NetworkOracle:
    """Policy and reward evaluations for one ground-truth image.

    Reconstructions are cached per pattern, so rollouts that revisit a
    pattern cost nothing extra. The networks are only ever run in eval
    mode; the ground truth is read only inside :meth:`reward`.
    """

    def __init__(self, image, recon_store, sample_store, reward_scale=40.0, **fwd):
        self._image = np.asarray(image, dtype=np.float64)
        self.recon_store = recon_store
        self.sample_store = sample_store
        self.reward_scale = reward_scale
        self.fwd = fwd
        self.side = self._image.shape[-1]
        self._recon = {}
        self._policy = {}

    def zero_fill(self, mask):
        return zero_fill_reconstruct(self._image, mask)

    def reconstruction(self, mask):
        key = np.asarray(mask, dtype=bool).tobytes()
        out = self._recon.get(key)
        if out is None:
            out = self._recon[key] = reconstruct(self.recon_store, self.zero_fill(mask), **self.fwd)
        return out

    def policy(self, mask):
        key = np.asarray(mask, dtype=bool).tobytes()
        out = self._policy.get(key)
        if out is None:
            out = self._policy[key] = policy(self.sample_store, self.reconstruction(mask), **self.fwd)
        return out

    def psnr(self, mask):
        return psnr(self.reconstruction(mask), self._image)

    def reward(self, mask):
        return normalized_reward(self.psnr(mask), self.reward_scale)


def ucb_score(child, prior_a, noise_a, parent_N, cfg):
    explore = (1 - cfg.epsilon) * prior_a + cfg.epsilon * noise_a
    exploit = (1 - cfg.alpha) * child.Q + cfg.alpha * child.V
    return exploit + cfg.c_puct * explore * np.sqrt(parent_N / child.N)


def backup(path, v):
    """Fold reward ``v`` into the mean, max and count of every node on ``path``."""
    for node in path:
        node.W += v
        node.N += 1
        node.Q = node.W / node.N
        node.V = max(node.V, v)
    return path


def dirichlet_noise(rng, mask, concentration):
    """Symmetric Dirichlet sample over the unsampled lines, zero elsewhere."""
    free = ~np.asarray(mask, dtype=bool)
    out = np.zeros(free.shape)
    out[free] = rng.dirichlet(np.full(int(free.sum()), concentration))
    return out


def _noised_policy(oracle, pattern, cfg, rng):
    pi = mask_resampling(oracle.policy(pattern), pattern)
    delta = dirichlet_noise(rng, pattern, cfg.dirichlet_concentration)
    mix = (1 - cfg.epsilon) * pi + cfg.epsilon * delta
    return pi, delta, mix / mix.sum()


def simulate(pattern, oracle, cfg, rng):
    """Roll ``pattern`` out to the budget with the noised policy; return the reward."""
    pattern = np.array(pattern, dtype=bool)
    if pattern.sum() > cfg.budget:
        raise SearchContractError(f"pattern holds {pattern.sum()} lines, budget is {cfg.budget}")
    while pattern.sum() < cfg.budget:
        _, _, mix = _noised_policy(oracle, pattern, cfg, rng)
        pattern[rng.choice(pattern.size, p=mix)] = True
    return oracle.reward(pattern)


def _select(node, cfg):
    mix = (1 - cfg.epsilon) * node.prior + cfg.epsilon * node.noise
    free = np.flatnonzero(~node.pattern)
    unvisited = [a for a in free if a not in node.children or node.children[a].N == 0]
    if unvisited:
        # stable sort keeps the lowest index first among equal priors
        return int(sorted(unvisited, key=lambda a: -mix[a])[0])
    scores = [ucb_score(node.children[a], node.prior[a], node.noise[a], node.N, cfg) for a in free]
    return int(free[int(np.argmax(scores))])


def search(root, oracle, cfg, rng):
    """One selection, expansion, simulation and backup pass from ``root``."""
    if root.budget >= cfg.budget:
        raise SearchContractError("root pattern is already at the budget")
    path = [root]
    node = root
    while True:
        if node.budget >= cfg.budget:
            v = oracle.reward(node.pattern)
            break
        if node.N == 0:
            node.prior, node.noise, _ = _noised_policy(oracle, node.pattern, cfg, rng)
            v = simulate(node.pattern, oracle, cfg, rng)
            break
        node = node.child(_select(node, cfg))
        path.append(node)
    backup(path, v)
    return v


def mcts_policy(root):
    """Visit-count distribution over the root's children."""
    counts = np.zeros(root.pattern.size)
    for line, child in root.children.items():
        counts[line] = child.N
    total = counts.sum()
    if total <= 0:
        raise SearchContractError("root has no visited children")
    return counts / total


def run_mcts(root, oracle, cfg, rng):
    if root.budget >= cfg.budget:
        raise SearchContractError("cannot search from a pattern already at the budget")
    for _ in range(cfg.simulations):
        search(root, oracle, cfg, rng)
    return mcts_policy(root)


def iter_nodes(root):
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.children.values())
