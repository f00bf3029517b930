"""Running superposition of cheap tickets into one subnetwork.

Three averaging rules over the dense value grids:

* cia  -- plain running mean over all tickets (a position inactive in a
          ticket contributes 0 there);
* caa  -- per-connection mean: sums divided by how many tickets activated
          that exact connection;
* cima -- exponential moving average with decay beta, seeded by the first
          ticket.

Biases, BN gamma/beta, and BN running statistics are always combined with
the running-mean recurrence regardless of the weight rule. State is one
model-sized copy (plus one integer grid for caa), independent of how many
tickets are absorbed. The accumulated grids are never pruned in place;
`finalize` prunes a fresh copy back to the target sparsity.
"""

from dataclasses import dataclass, field

import numpy as np

from .network import Layer, Network
from .sparse import MaskedParameter, magnitude_prune_global, round_count, _top_k_flat
from .tensor import BatchNormState


def _mix(old: np.ndarray, new: np.ndarray, beta: float) -> np.ndarray:
    """beta * old + (1 - beta) * new; the running mean uses beta=(t-1)/t."""
    return beta * old + (1.0 - beta) * new


class TicketAccumulator:
    """Absorbs network snapshots one at a time; O(model size) memory."""

    MODES = ("cia", "caa", "cima")

    def __init__(self, mode: str = "cia", beta: float = 0.8,
                 target_sparsity: float = 0.0,
                 preserve_layerwise: bool = True):
        if mode not in self.MODES:
            raise ValueError(f"unknown averaging mode {mode!r}")
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        self.mode = mode
        self.beta = beta
        self.target_sparsity = target_sparsity
        self.preserve_layerwise = preserve_layerwise
        self.t = 0
        self.provenance: list[int] = []
        self.widths = None
        self.batchnorm = False
        self.grids: list[np.ndarray] = []        # running mean (cia/cima) or sum (caa)
        self.counts: list[np.ndarray] = []       # caa activation counts
        self.union_masks: list[np.ndarray] = []
        self.bias_avg: list[np.ndarray] = []
        self.bn_avg: list[dict | None] = []      # gamma/beta/mean/var per layer
        self.layer_keep: list[int] = []

    def _init_from(self, ticket: Network) -> None:
        self.widths = ticket.widths
        self.batchnorm = ticket.batchnorm
        for layer in ticket.layers:
            shape = layer.param.values.shape
            self.grids.append(np.zeros(shape))
            self.union_masks.append(np.zeros(shape, dtype=bool))
            if self.mode == "caa":
                self.counts.append(np.zeros(shape, dtype=np.int64))
            self.bias_avg.append(np.zeros_like(layer.param.bias))
            if layer.bn is not None:
                n = layer.bn.gamma.size
                self.bn_avg.append({"gamma": np.zeros(n), "beta": np.zeros(n),
                                    "mean": np.zeros(n), "var": np.zeros(n)})
            else:
                self.bn_avg.append(None)
            self.layer_keep.append(layer.param.active)

    def absorb(self, ticket: Network, cycle_index: int | None = None) -> None:
        """Fold one snapshot into the running state."""
        if self.t == 0:
            self._init_from(ticket)
        elif ticket.widths != self.widths:
            raise ValueError(f"ticket shape {ticket.widths} != accumulator "
                             f"shape {self.widths}")
        self.t += 1
        self.provenance.append(cycle_index if cycle_index is not None else self.t)
        mean_beta = (self.t - 1) / self.t
        if self.mode == "cima":
            w_beta = self.beta if self.t > 1 else 0.0
        else:
            w_beta = mean_beta
        for i, layer in enumerate(ticket.layers):
            if self.mode == "caa":
                self.grids[i] += layer.param.values
                self.counts[i] += layer.param.mask
            else:
                self.grids[i] = _mix(self.grids[i], layer.param.values, w_beta)
            self.union_masks[i] |= layer.param.mask
            self.bias_avg[i] = _mix(self.bias_avg[i], layer.param.bias, mean_beta)
            if layer.bn is not None:
                avg = self.bn_avg[i]
                avg["gamma"] = _mix(avg["gamma"], layer.bn.gamma, mean_beta)
                avg["beta"] = _mix(avg["beta"], layer.bn.beta, mean_beta)
                avg["mean"] = _mix(avg["mean"], layer.bn.running_mean, mean_beta)
                avg["var"] = _mix(avg["var"], layer.bn.running_var, mean_beta)

    def superposed_values(self) -> list[np.ndarray]:
        """Current combined value grids (copies)."""
        if self.t < 1:
            raise ValueError("empty accumulator")
        if self.mode == "caa":
            out = []
            for s, n in zip(self.grids, self.counts):
                g = np.zeros_like(s)
                np.divide(s, n, out=g, where=n > 0)
                out.append(g)
            return out
        return [g.copy() for g in self.grids]

    def nbytes(self) -> int:
        total = sum(g.nbytes for g in self.grids)
        total += sum(c.nbytes for c in self.counts)
        total += sum(m.nbytes for m in self.union_masks)
        total += sum(b.nbytes for b in self.bias_avg)
        for avg in self.bn_avg:
            if avg is not None:
                total += sum(a.nbytes for a in avg.values())
        return total


@dataclass
class UltimateTicket:
    """The pruned superposition: the single network used for inference."""

    network: Network
    provenance: list[int] = field(default_factory=list)
    bn_mode: str = "average"


def _prune_grid_to_count(grid: np.ndarray, mask: np.ndarray,
                         keep: int) -> np.ndarray:
    active_idx = np.flatnonzero(mask.ravel())
    if active_idx.size <= keep:
        return mask.copy()
    kept = active_idx[_top_k_flat(np.abs(grid.ravel()[active_idx]), keep)]
    out = np.zeros(grid.size, dtype=bool)
    out[kept] = True
    return out.reshape(grid.shape)


def finalize(acc: TicketAccumulator, bn_mode: str = "average",
             data: np.ndarray | None = None,
             batch_size: int = 128) -> UltimateTicket:
    """Prune the superposed grids back to the target sparsity and assemble
    the inference network.

    bn_mode "average" takes the accumulated BN statistics; "recompute" runs
    one pass over `data` with train-mode statistics accumulation. Does not
    mutate the accumulator, so finalizing twice gives the same ticket.
    """
    if acc.t < 1:
        raise ValueError("cannot finalize an empty accumulator")
    if bn_mode not in ("average", "recompute"):
        raise ValueError(f"unknown bn mode {bn_mode!r}")
    grids = acc.superposed_values()
    if acc.preserve_layerwise:
        masks = [_prune_grid_to_count(g, m, k)
                 for g, m, k in zip(grids, acc.union_masks, acc.layer_keep)]
    else:
        total = sum(g.size for g in grids)
        keep_total = round_count((1.0 - acc.target_sparsity) * total)
        masks = magnitude_prune_global(grids, acc.union_masks, keep_total)

    layers = []
    for i, (grid, mask) in enumerate(zip(grids, masks)):
        param = MaskedParameter(grid.copy(), mask, acc.bias_avg[i].copy())
        bn = None
        if acc.bn_avg[i] is not None:
            avg = acc.bn_avg[i]
            bn = BatchNormState(avg["gamma"].copy(), avg["beta"].copy(),
                                avg["mean"].copy(), avg["var"].copy())
        last = i == len(grids) - 1
        layers.append(Layer(param, bn, "none" if last else "relu"))
    net = Network.from_layers(acc.widths, acc.batchnorm, layers)

    if bn_mode == "recompute":
        if data is None:
            raise ValueError("bn recompute mode needs a data pass")
        for layer in net.layers:
            if layer.bn is not None:
                layer.bn.running_mean = np.zeros_like(layer.bn.running_mean)
                layer.bn.running_var = np.ones_like(layer.bn.running_var)
        for start in range(0, data.shape[0], batch_size):
            batch = data[start:start + batch_size]
            if batch.shape[0] < 2:
                break
            net.forward(batch, train=True)
    return UltimateTicket(net, provenance=list(acc.provenance), bn_mode=bn_mode)
