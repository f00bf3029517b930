"""Connectivity masks, layer-wise sparsity allocation, and magnitude pruning.

Masks are plain boolean arrays shaped like their weight grid. Biases stay
dense and are excluded from all sparsity accounting. Every top-k selection
breaks ties by lowest flat index so runs are bit-reproducible.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def round_count(x: float) -> int:
    """Deterministic half-up rounding for weight counts."""
    return int(np.floor(x + 0.5))


def make_mask(rows: int, cols: int, fill: bool = False) -> np.ndarray:
    return np.full((rows, cols), fill, dtype=bool)


def active_count(mask: np.ndarray) -> int:
    return int(mask.sum())


@dataclass
class MaskedParameter:
    """A dense value grid gated by a binary connectivity mask; dense bias."""

    values: np.ndarray
    mask: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask shapes differ")
        if self.bias.shape != (self.values.shape[1],):
            raise ValueError("bias length must equal output width")
        self.apply_mask()

    def apply_mask(self) -> None:
        """Re-establish values == 0 exactly where the mask is off."""
        self.values[~self.mask] = 0.0

    @property
    def active(self) -> int:
        return active_count(self.mask)

    @property
    def size(self) -> int:
        return self.values.size

    def copy(self) -> "MaskedParameter":
        return MaskedParameter(self.values.copy(), self.mask.copy(),
                               self.bias.copy())


@dataclass
class SparsityBudget:
    """Per-layer densities realizing a global target sparsity."""

    shapes: tuple
    densities: tuple
    global_sparsity: float

    def __post_init__(self):
        sizes = [r * c for r, c in self.shapes]
        want = (1.0 - self.global_sparsity) * sum(sizes)
        got = sum(self.layer_counts())
        if abs(got - want) > len(sizes):
            raise ValueError(
                f"budget off by {got - want:.2f} weights (> 1 per layer)")

    def layer_counts(self) -> list[int]:
        return [round_count(d * r * c)
                for d, (r, c) in zip(self.densities, self.shapes)]


def uniform_allocate(layer_shapes, sparsity: float) -> SparsityBudget:
    """Every layer gets density 1 - sparsity."""
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    d = 1.0 - sparsity
    return SparsityBudget(tuple(tuple(s) for s in layer_shapes),
                          tuple(d for _ in layer_shapes), sparsity)


def erk_allocate(layer_shapes, sparsity: float) -> SparsityBudget:
    """Scale-free allocation: raw density of a layer is proportional to
    (n_in + n_out) / (n_in * n_out), rescaled so the total active-weight
    budget is met; layers that would exceed density 1 are clamped dense and
    the scale re-solved over the rest."""
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    shapes = [tuple(s) for s in layer_shapes]
    sizes = np.array([r * c for r, c in shapes], dtype=np.float64)
    raw = np.array([(r + c) / (r * c) for r, c in shapes], dtype=np.float64)
    budget = (1.0 - sparsity) * sizes.sum()

    dense = np.zeros(len(shapes), dtype=bool)
    while True:
        remaining = budget - sizes[dense].sum()
        denom = float((raw[~dense] * sizes[~dense]).sum())
        if denom <= 0.0 or remaining < 0.0:
            raise ValueError("infeasible sparsity budget")
        scale = remaining / denom
        over = ~dense & (scale * raw > 1.0)
        if not over.any():
            break
        dense |= over
    densities = np.where(dense, 1.0, scale * raw)
    return SparsityBudget(tuple(shapes), tuple(float(d) for d in densities),
                          sparsity)


def random_mask_init(shape, density: float, seed: int) -> np.ndarray:
    """Exactly round(density * size) active positions, sampled uniformly
    without replacement from a seeded generator."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {density}")
    rows, cols = shape
    size = rows * cols
    k = round_count(density * size)
    mask = np.zeros(size, dtype=bool)
    rng = np.random.Generator(np.random.PCG64(seed))
    mask[rng.choice(size, size=k, replace=False)] = True
    return mask.reshape(rows, cols)


def _top_k_flat(scores: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the k largest scores; ties go to the lowest index."""
    if k <= 0:
        return np.empty(0, dtype=np.intp)
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def snip_init(network, batch_x: np.ndarray, batch_y: np.ndarray,
              budget_or_sparsity) -> list[np.ndarray]:
    """Saliency pruning at initialization: keep the global top-k of
    |gradient * weight| computed densely on one labeled batch.

    Accepts either a global sparsity in [0, 1) or a SparsityBudget (its
    global sparsity is used; selection is global either way). Falls back to
    uniform random masks if every saliency is zero.
    """
    if isinstance(budget_or_sparsity, SparsityBudget):
        sparsity = budget_or_sparsity.global_sparsity
    else:
        sparsity = float(budget_or_sparsity)
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")

    _, grads = network.loss_and_grads(batch_x, batch_y, train=True)
    saliencies = []
    shapes = []
    for idx, layer in enumerate(network.layers):
        g = grads[f"l{idx}.w"]
        saliencies.append(np.abs(g * layer.param.values).ravel())
        shapes.append(layer.param.values.shape)
    flat = np.concatenate(saliencies)
    total = flat.size
    keep = round_count((1.0 - sparsity) * total)

    if flat.max(initial=0.0) == 0.0:
        log.warning("snip saliencies are all zero; falling back to random "
                    "uniform masks")
        budget = uniform_allocate(shapes, sparsity)
        return [random_mask_init(s, d, seed=0)
                for s, d in zip(shapes, budget.densities)]

    chosen = _top_k_flat(flat, keep)
    keep_flat = np.zeros(total, dtype=bool)
    keep_flat[chosen] = True
    masks = []
    offset = 0
    for shape in shapes:
        n = shape[0] * shape[1]
        masks.append(keep_flat[offset:offset + n].reshape(shape))
        offset += n
    return masks


def magnitude_prune_to_sparsity(values: np.ndarray, mask: np.ndarray,
                                target_sparsity: float) -> np.ndarray:
    """Keep the round((1 - target_sparsity) * size) active entries of largest
    magnitude. If the grid is already sparser than the target there is
    nothing to remove; the mask is returned unchanged with a warning."""
    size = values.size
    keep = round_count((1.0 - target_sparsity) * size)
    active_idx = np.flatnonzero(mask.ravel())
    if active_idx.size <= keep:
        if active_idx.size < keep:
            log.warning("current sparsity already above target "
                        "(%d active < %d to keep); mask unchanged",
                        active_idx.size, keep)
        return mask.copy()
    scores = np.abs(values.ravel()[active_idx])
    kept = active_idx[_top_k_flat(scores, keep)]
    out = np.zeros(size, dtype=bool)
    out[kept] = True
    return out.reshape(values.shape)


def magnitude_prune_global(value_grids, masks, keep_total: int):
    """Global top-|value| selection across layers among active positions,
    keeping exactly keep_total entries. Returns new masks."""
    scores = []
    for values, mask in zip(value_grids, masks):
        s = np.abs(values.ravel()).copy()
        s[~mask.ravel()] = -np.inf
        scores.append(s)
    flat = np.concatenate(scores)
    n_active = sum(int(m.sum()) for m in masks)
    if n_active <= keep_total:
        if n_active < keep_total:
            log.warning("global prune: only %d active for keep=%d; "
                        "masks unchanged", n_active, keep_total)
        return [m.copy() for m in masks]
    chosen = _top_k_flat(flat, keep_total)
    keep_flat = np.zeros(flat.size, dtype=bool)
    keep_flat[chosen] = True
    out = []
    offset = 0
    for mask in masks:
        n = mask.size
        out.append(keep_flat[offset:offset + n].reshape(mask.shape))
        offset += n
    return out


def sparsity_of(masks) -> float:
    """1 - (active weights / total weights), biases excluded."""
    total = sum(m.size for m in masks)
    active = sum(int(m.sum()) for m in masks)
    return 1.0 - active / total
