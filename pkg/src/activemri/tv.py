"""Anisotropic total-variation reconstruction from line-masked k-space.

Solves ``min_x 0.5 ||P F x - y||^2 + lam * TV(x)`` by monotone FISTA.
With a unitary DFT and a row-mask projector the data gradient is
1-Lipschitz, so any step in ``(0, 1]`` is valid. The TV prox is solved
inexactly by fast projected gradient on its box-constrained dual, warm
started across outer iterations. Only candidates that lower the objective
are accepted, so the objective sequence is monotone. Before stopping, a
plain proximal step with a cold dual confirms the relative change is below
tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .signal import DimensionError, from_complex, mask_spectrum

__all__ = ["TvConfig", "TvDivergenceError", "tv_value", "tv_objective", "tv_prox", "tv_reconstruct"]


class TvDivergenceError(FloatingPointError):
    """Raised when the iteration produces non-finite values."""


@dataclass(frozen=True)
class TvConfig:
    lam: float = 1e-3
    max_iters: int = 200
    step: float = 1.0
    tolerance: float = 1e-7
    inner_iters: int = 20

    def __post_init__(self):
        if self.lam < 0 or self.step <= 0 or self.tolerance <= 0:
            raise ValueError("lam must be >= 0, step and tolerance > 0")
        if self.step > 1.0:
            raise ValueError(f"step {self.step} exceeds 1/L = 1")


def _diffs(u):
    return np.diff(u, axis=-1), np.diff(u, axis=-2)


def _diffs_adjoint(ph, pv):
    """Adjoint of the forward-difference pair (no wraparound)."""
    zh = np.zeros(ph.shape[:-1] + (1,))
    zv = np.zeros(pv.shape[:-2] + (1, pv.shape[-1]))
    gh = np.concatenate([zh, ph], axis=-1) - np.concatenate([ph, zh], axis=-1)
    gv = np.concatenate([zv, pv], axis=-2) - np.concatenate([pv, zv], axis=-2)
    return gh + gv


def tv_value(img):
    """Sum of absolute horizontal and vertical neighbour differences."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim < 2:
        raise DimensionError("tv_value needs at least a 2D array")
    dh, dv = _diffs(img)
    return float(np.abs(dh).sum() + np.abs(dv).sum())


def tv_prox(z, weight, iters=20, dual=None):
    """Approximate ``argmin_u 0.5 ||u - z||^2 + weight * TV(u)``.

    Fast projected gradient on the dual. Returns ``(u, dual)`` so the dual
    pair can warm-start the next call.
    """
    if dual is None:
        dual = (np.zeros(z.shape[:-1] + (z.shape[-1] - 1,)), np.zeros(z.shape[:-2] + (z.shape[-2] - 1, z.shape[-1])))
    if weight == 0:
        return z.copy(), dual
    ph, pv = dual
    rh, rv = ph, pv
    t = 1.0
    tau = 1.0 / (8.0 * weight)
    for _ in range(iters):
        u = z - weight * _diffs_adjoint(rh, rv)
        dh, dv = _diffs(u)
        nh = np.clip(rh + tau * dh, -1.0, 1.0)
        nv = np.clip(rv + tau * dv, -1.0, 1.0)
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        mom = (t - 1) / t_next
        rh, rv = nh + mom * (nh - ph), nv + mom * (nv - pv)
        ph, pv, t = nh, nv, t_next
    return z - weight * _diffs_adjoint(ph, pv), (ph, pv)


def _to_grid(x):
    return x[0] if x.shape[0] == 1 else x[0] + 1j * x[1]


def tv_objective(x, measured, mask, lam):
    resid = mask_spectrum(np.fft.fft2(_to_grid(x), norm="ortho"), mask) - measured
    return 0.5 * float(np.vdot(resid, resid).real) + lam * tv_value(x)


def tv_reconstruct(measured, mask, cfg=None, channels=1, x0=None):
    """TV-regularized reconstruction from masked measurements.

    ``channels=1`` constrains the solution to be real. Returns the image and
    the objective value after every accepted outer iteration (the first
    entry is the starting point).
    """
    cfg = cfg or TvConfig()
    measured = mask_spectrum(np.asarray(measured), mask)
    mask = np.asarray(mask, dtype=bool)
    if x0 is None:
        x = from_complex(np.fft.ifft2(measured, norm="ortho"), channels)
    else:
        x = np.array(x0, dtype=np.float64)
    dual = None
    obj = tv_objective(x, measured, mask, cfg.lam)
    history = [obj]

    def step(v, dual, it):
        # proximal gradient step from v; returns the candidate and its objective
        resid = mask_spectrum(np.fft.fft2(_to_grid(v), norm="ortho"), mask) - measured
        z = v - cfg.step * from_complex(np.fft.ifft2(resid, norm="ortho"), channels)
        iters = cfg.inner_iters
        for _ in range(4):
            cand, cand_dual = tv_prox(z, cfg.step * cfg.lam, iters, dual)
            if not np.all(np.isfinite(cand)):
                raise TvDivergenceError(f"non-finite iterate at outer iteration {it}")
            cand_obj = tv_objective(cand, measured, mask, cfg.lam)
            if cand_obj <= obj:
                break
            dual = cand_dual
            iters *= 4
        return cand, cand_obj, cand_dual

    # monotone FISTA: extrapolate from the momentum point, keep the best iterate
    x_prev, cand_prev, t = x, x, 1.0
    for it in range(cfg.max_iters):
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        v = x + (t / t_next) * (cand_prev - x) + ((t - 1) / t_next) * (x - x_prev)
        cand, cand_obj, dual = step(v, dual, it)
        change = (obj - cand_obj) / max(abs(obj), np.finfo(float).tiny)
        if change < cfg.tolerance:
            # confirm with a plain step and a cold dual before stopping
            cand, cand_obj, cold = step(x, None, it)
            change = (obj - cand_obj) / max(abs(obj), np.finfo(float).tiny)
            if change >= cfg.tolerance:
                dual = cold
                t_next = 1.0
        x_prev, cand_prev, t = x, cand, t_next
        if cand_obj < obj:
            x, obj = cand, cand_obj
            history.append(obj)
        if change < cfg.tolerance:
            break
    return x, history
