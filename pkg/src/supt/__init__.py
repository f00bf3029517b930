"""supt: sparse network training with cyclical-restart ticket superposition.

Train a sparse network from scratch, harvest several low-loss subnetwork
snapshots ("cheap tickets") during the final stretch of training with a
triangle cyclical learning rate plus prune-and-grow exploration, and
superpose them into a single subnetwork at the original sparsity.
"""

from .config import TrainConfig, config_from_dict, load_config
from .data import Dataset, load_idx_dataset, synth_dataset
from .dst import ExploreConfig, GranetSchedule, explore, exploration_rate, \
    granet_target_sparsity, grow_step, prune_step
from .errors import CheckpointError, CheckpointIntegrityError, \
    CheckpointVersionError, ConfigError
from .metrics import FlopsReport, KsResult, MetricsRecord, PredictionSet, \
    accuracy, ece, ensemble_diversity, flops_estimate, ks_test, nll, \
    pairwise_kl, prediction_disagreement
from .network import Network
from .runner import RunResult, run, run_baseline, run_prediction_ensemble, \
    run_sup_tickets
from .schedule import LrSchedule, Phase, cyclical_lr, phase_of, step_decay_lr
from .sparse import MaskedParameter, SparsityBudget, erk_allocate, \
    magnitude_prune_to_sparsity, random_mask_init, snip_init, sparsity_of, \
    uniform_allocate
from .superpose import TicketAccumulator, UltimateTicket, finalize
from .tensor import BatchNormState, OptimizerState

__version__ = "0.1.0"
