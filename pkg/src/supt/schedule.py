"""Learning-rate schedules and training-phase bookkeeping.

Two regimes: step decay for the normal phase, and a piecewise-linear
triangle wave for the ticket phase. The triangle rises from the trough to
the peak over the first half cycle and falls back over the second, so every
cycle ends exactly at the trough, where snapshots are taken.
"""

import logging
from dataclasses import dataclass

log = logging.getLogger(__name__)


@dataclass
class LrSchedule:
    base_lr: float
    step_decay: tuple = ()  # ((epoch, factor), ...)
    alpha_trough: float = 0.001
    alpha_peak: float = 0.005
    cycle_iters: int = 2
    total_iters: int = 0
    ticket_fraction: float = 0.10
    iters_per_epoch: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha_trough <= self.alpha_peak:
            raise ValueError("need 0 < alpha_trough <= alpha_peak")
        if self.cycle_iters < 2:
            raise ValueError("cycle length must be >= 2 iterations")
        if not 0.0 < self.ticket_fraction < 1.0:
            raise ValueError("ticket fraction must lie in (0, 1)")

    @property
    def normal_end(self) -> int:
        """Last iteration of the normal phase."""
        return int((1.0 - self.ticket_fraction) * self.total_iters + 1e-9)

    @property
    def ticket_capacity(self) -> int:
        """Number of full cycles that fit in the ticket phase."""
        return (self.total_iters - self.normal_end) // self.cycle_iters


@dataclass(frozen=True)
class Phase:
    normal: bool
    cycle_index: int = 0
    is_cycle_end: bool = False


def step_decay_lr(epoch: int, sched: LrSchedule) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = sched.base_lr
    for at_epoch, factor in sched.step_decay:
        if epoch >= at_epoch:
            lr *= factor
    return lr


def cyclical_lr(i: int, sched: LrSchedule) -> float:
    """Triangle-wave learning rate for iteration i (1-based, counted within
    the ticket phase). t = (mod(i-1, C) + 1) / C; the rate climbs linearly
    from the trough to the peak for t <= 1/2 and descends back for t <= 1."""
    if i < 1:
        raise ValueError("cyclical iterations are 1-based")
    c = sched.cycle_iters
    t = ((i - 1) % c + 1) / c
    a1, a2 = sched.alpha_trough, sched.alpha_peak
    if t <= 0.5:
        return (1.0 - 2.0 * t) * a1 + 2.0 * t * a2
    return (2.0 - 2.0 * t) * a2 + (2.0 * t - 1.0) * a1


def phase_of(i: int, sched: LrSchedule) -> Phase:
    """Normal up to and including the phase boundary; afterwards the cycle
    index counts 1-based and cycle ends fall every C iterations."""
    if not 1 <= i <= sched.total_iters:
        raise ValueError(f"iteration {i} outside [1, {sched.total_iters}]")
    boundary = sched.normal_end
    if i <= boundary:
        return Phase(normal=True)
    j = i - boundary
    cycle = -(-j // sched.cycle_iters)  # ceil
    return Phase(normal=False, cycle_index=cycle,
                 is_cycle_end=(j % sched.cycle_iters == 0))


def validate_handoff(sched: LrSchedule) -> bool:
    """The cyclical peak should not exceed the step-decay rate in force at
    the end of the normal phase; warn (not fail) when it does."""
    boundary_epoch = max(sched.normal_end - 1, 0) // sched.iters_per_epoch
    lr = step_decay_lr(boundary_epoch, sched)
    if sched.alpha_peak > lr + 1e-15:
        log.warning("cyclical peak %.4g exceeds the step-decay rate %.4g at "
                    "the phase boundary; restarts may leave the basin",
                    sched.alpha_peak, lr)
        return False
    return True
