"""Dynamic sparse training: prune-and-grow connectivity exploration.

One exploration step removes the fraction p of smallest-magnitude active
weights in each layer and activates the same number of currently inactive
positions, chosen randomly or by gradient magnitude. Active counts per layer
are therefore invariant. A gradual-sparsification schedule (cubic) is also
provided; its shrink step prunes globally by magnitude and never grows the
net count.
"""

from dataclasses import dataclass, field

import numpy as np

from .sparse import (MaskedParameter, magnitude_prune_global, sparsity_of,
                     _top_k_flat)


@dataclass
class GranetSchedule:
    """Cubic sparsity ramp from s_initial at t_start to s_final at t_end."""

    s_initial: float
    s_final: float
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError("t_start must not exceed t_end")
        if not self.s_initial <= self.s_final < 1.0:
            raise ValueError("need s_initial <= s_final < 1")


@dataclass
class ExploreConfig:
    p: float = 0.3
    grow_criterion: str = "random"  # "random" | "gradient"
    delta_t: int = 100
    anneal: str = "none"  # "none" | "cosine"
    anneal_t_end: int = 0
    granet: GranetSchedule | None = None

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.delta_t < 1:
            raise ValueError("delta_t must be >= 1")
        if self.grow_criterion not in ("random", "gradient"):
            raise ValueError(f"unknown grow criterion {self.grow_criterion!r}")
        if self.anneal not in ("none", "cosine"):
            raise ValueError(f"unknown anneal mode {self.anneal!r}")


@dataclass
class ExploreReport:
    rate: float
    per_layer: list = field(default_factory=list)  # (pruned, grown) pairs
    total_changed: int = 0


def exploration_rate(iteration: int, cfg: ExploreConfig) -> float:
    if cfg.anneal == "none" or cfg.anneal_t_end <= 0:
        return cfg.p
    t = min(iteration, cfg.anneal_t_end)
    return cfg.p / 2.0 * (1.0 + np.cos(np.pi * t / cfg.anneal_t_end))


def granet_target_sparsity(iteration: int, sched: GranetSchedule) -> float:
    if iteration <= sched.t_start:
        return sched.s_initial
    if iteration >= sched.t_end:
        return sched.s_final
    frac = (iteration - sched.t_start) / (sched.t_end - sched.t_start)
    return sched.s_final + (sched.s_initial - sched.s_final) * (1.0 - frac) ** 3


def prune_step(param: MaskedParameter, p: float):
    """Deactivate the floor(p * active) smallest-magnitude active weights.

    Mutates the parameter (mask and values); returns (mask, pruned_count).
    """
    active_idx = np.flatnonzero(param.mask.ravel())
    if active_idx.size < 1:
        raise ValueError("prune_step needs at least one active weight")
    k = int(np.floor(p * active_idx.size))
    if k == 0:
        return param.mask, 0
    scores = np.abs(param.values.ravel()[active_idx])
    # Drop the k smallest: keep the (active - k) largest.
    kept = active_idx[_top_k_flat(scores, active_idx.size - k)]
    mask = np.zeros(param.size, dtype=bool)
    mask[kept] = True
    param.mask = mask.reshape(param.values.shape)
    param.apply_mask()
    return param.mask, k


def grow_step(param: MaskedParameter, grads: np.ndarray | None, count: int,
              criterion: str, seed: int) -> np.ndarray:
    """Activate `count` positions from the inactive set; new weights start
    at zero. Random growth samples uniformly with the given seed; gradient
    growth takes the largest |grad| among inactive positions."""
    inactive_idx = np.flatnonzero(~param.mask.ravel())
    if count > inactive_idx.size:
        raise ValueError(f"cannot grow {count} weights, only "
                         f"{inactive_idx.size} inactive positions")
    if count == 0:
        return param.mask
    if criterion == "random":
        rng = np.random.Generator(np.random.PCG64(seed))
        chosen = inactive_idx[rng.choice(inactive_idx.size, size=count,
                                         replace=False)]
    elif criterion == "gradient":
        if grads is None:
            raise ValueError("gradient growth needs dense gradients")
        scores = np.abs(grads.ravel()[inactive_idx])
        chosen = inactive_idx[_top_k_flat(scores, count)]
    else:
        raise ValueError(f"unknown grow criterion {criterion!r}")
    mask = param.mask.ravel().copy()
    mask[chosen] = True
    param.mask = mask.reshape(param.values.shape)
    param.apply_mask()  # grown entries were 0 and stay 0
    return param.mask


def explore(network, grads: dict | None, cfg: ExploreConfig, iteration: int,
            seed: int, opt=None, rate: float | None = None) -> ExploreReport:
    """One prune-and-grow pass over every layer with equal counts, so the
    active count per layer is unchanged. Pruned and newly grown positions get
    zero value and zero velocity."""
    if rate is None:
        rate = exploration_rate(iteration, cfg)
    report = ExploreReport(rate=rate)
    for idx, layer in enumerate(network.layers):
        before = layer.param.active
        _, pruned = prune_step(layer.param, rate)
        g = grads.get(f"l{idx}.w") if grads is not None else None
        grow_step(layer.param, g, pruned, cfg.grow_criterion,
                  seed=seed + idx)
        assert layer.param.active == before
        if opt is not None:
            v = opt.velocities.get(f"l{idx}.w")
            if v is not None:
                v[~layer.param.mask] = 0.0
        report.per_layer.append((pruned, pruned))
        report.total_changed += pruned
    return report


def granet_shrink(network, target_sparsity: float, opt=None) -> int:
    """Prune globally by magnitude until the network-wide sparsity reaches
    the schedule target. Never grows; returns the number removed."""
    masks = network.masks()
    total = sum(m.size for m in masks)
    current = sum(int(m.sum()) for m in masks)
    keep = int(np.floor((1.0 - target_sparsity) * total + 0.5))
    if keep >= current:
        return 0
    grids = [layer.param.values for layer in network.layers]
    new_masks = magnitude_prune_global(grids, masks, keep)
    network.set_masks(new_masks, opt=opt)
    assert abs(sparsity_of(network.masks()) - target_sparsity) <= 1.0 / total
    return current - keep
