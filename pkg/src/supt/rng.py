"""Seedable randomness with purpose-keyed streams.

Every random draw in a run is derived from (master seed, purpose code,
indices) through numpy's SeedSequence, so mask randomness is independent of
data-shuffle randomness and a resumed run replays the exact same draws
without storing mutable generator state.
"""

import numpy as np

INIT = 1      # dense weight initialization, keyed by layer
MASK = 2      # sparse mask initialization, keyed by layer
SHUFFLE = 3   # per-epoch data order, keyed by epoch
EXPLORE = 4   # prune-and-grow growth, keyed by iteration
DATA = 5      # synthetic dataset generation


class RngHub:
    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def generator(self, *key: int) -> np.random.Generator:
        seq = np.random.SeedSequence([self.master_seed, *map(int, key)])
        return np.random.Generator(np.random.PCG64(seq))

    def seed_for(self, *key: int) -> int:
        """A 64-bit child seed for APIs that take a plain integer."""
        seq = np.random.SeedSequence([self.master_seed, *map(int, key)])
        lo, hi = seq.generate_state(2)
        return int(lo) | (int(hi) << 32)

    # -- named streams -------------------------------------------------------

    def mask_seed(self, layer: int) -> int:
        return self.seed_for(MASK, layer)

    def shuffle_perm(self, epoch: int, n: int) -> np.ndarray:
        return self.generator(SHUFFLE, epoch).permutation(n)

    def explore_seed(self, iteration: int) -> int:
        return self.seed_for(EXPLORE, iteration)
