"""Fixed line-sampling patterns used as comparison baselines."""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BudgetError",
    "VdsParams",
    "signed_frequencies",
    "vds_weights",
    "vds_pattern",
    "lpf_pattern",
    "uniform_random_pattern",
    "lpf_order",
]


class BudgetError(ValueError):
    """Raised when a line budget is outside ``(0, side]``."""


@dataclass(frozen=True)
class VdsParams:
    side: int
    budget: int
    density_exponent: float = 2.0
    seed: int = 0


def _check_budget(side, budget):
    if side < 1:
        raise BudgetError(f"side must be positive, got {side}")
    if not 0 < budget <= side:
        raise BudgetError(f"budget {budget} outside (0, {side}]")


def signed_frequencies(side):
    """Signed frequency of each line in FFT order: 0, 1, ..., -2, -1."""
    return np.rint(np.fft.fftfreq(side) * side).astype(int)


def vds_weights(side, density_exponent):
    """Polynomial density ``(1 - |k| / k_max) ** p`` over the lines.

    ``k_max`` is one past the largest ``|k|`` so every line keeps a
    positive weight and the budget can always be filled.
    """
    k = np.abs(signed_frequencies(side))
    kmax = side // 2 + 1
    return (1.0 - k / kmax) ** density_exponent


def vds_pattern(p: VdsParams):
    """Variable-density random line mask; the DC line is always sampled."""
    _check_budget(p.side, p.budget)
    if p.density_exponent < 0:
        raise ValueError("density_exponent must be nonnegative")
    mask = np.zeros(p.side, dtype=bool)
    mask[0] = True
    if p.budget > 1:
        w = vds_weights(p.side, p.density_exponent)[1:]
        rng = np.random.default_rng(p.seed)
        picks = rng.choice(p.side - 1, size=p.budget - 1, replace=False, p=w / w.sum())
        mask[picks + 1] = True
    return mask


def lpf_order(side):
    """Line indices sorted by distance to DC, positive side first on ties."""
    k = signed_frequencies(side)
    return np.array(sorted(range(side), key=lambda i: (abs(k[i]), k[i] < 0)))


def lpf_pattern(side, budget):
    """Lowpass mask: the ``budget`` lines closest to DC."""
    _check_budget(side, budget)
    mask = np.zeros(side, dtype=bool)
    mask[lpf_order(side)[:budget]] = True
    return mask


def uniform_random_pattern(side, budget, seed):
    _check_budget(side, budget)
    rng = np.random.default_rng(seed)
    mask = np.zeros(side, dtype=bool)
    mask[rng.choice(side, size=budget, replace=False)] = True
    return mask
