"""Experiment orchestration: full training runs, baselines, checkpointing.

The loop is iteration-indexed (1-based). The first (1 - ticket_phase_fraction)
of the run is normal training under step-decay LR with periodic
connectivity exploration for the dynamic methods; the remainder cycles a
triangle LR, snapshots the working network at every cycle end (the trough),
folds it into the running superposition, prunes a copy of the superposition
back to the target sparsity for logging, and re-explores the working
network. Total iteration count is the same with superposition on or off.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_streams
from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Dataset, load_idx_train_test, synth_dataset
from .dst import ExploreConfig, GranetSchedule, explore, granet_shrink, \
    granet_target_sparsity
from .errors import ConfigError
from .metrics import MetricsRecord, PredictionSet, accuracy, ece, \
    ensemble_diversity, evaluate, flops_estimate, nll
from .network import Network
from .rng import RngHub
from .schedule import LrSchedule, cyclical_lr, phase_of, step_decay_lr, \
    validate_handoff
from .sparse import erk_allocate, random_mask_init, snip_init, sparsity_of, \
    uniform_allocate
from .superpose import TicketAccumulator, UltimateTicket, finalize
from .tensor import OptimizerState

log = logging.getLogger(__name__)

DYNAMIC_METHODS = ("set", "rigl", "granet")


@dataclass
class RunResult:
    tag: str
    seed: int
    records: list = field(default_factory=list)
    ticket_accuracies: list = field(default_factory=list)
    tickets: list = field(default_factory=list)  # ensemble mode only
    diversity: tuple | None = None  # (disagreement, mean pairwise KL)
    ultimate: UltimateTicket | None = None
    network: Network | None = None
    iterations_run: int = 0
    csv_path: str = ""


def _batch_starts(n: int, batch_size: int) -> list[int]:
    starts = list(range(0, n, batch_size))
    # A trailing singleton cannot feed train-mode batch norm.
    if starts and n - starts[-1] < 2:
        starts.pop()
    return starts


def build_dataset(cfg: TrainConfig) -> Dataset:
    if cfg.dataset == "idx":
        return load_idx_train_test(cfg.train_images, cfg.train_labels,
                                   cfg.test_images, cfg.test_labels)
    kind = cfg.dataset.removeprefix("synth_")
    return synth_dataset(kind, cfg.synth_n, cfg.synth_classes,
                         cfg.synth_noise, cfg.synth_seed)


def _initial_masks(cfg: TrainConfig, net: Network, hub: RngHub,
                   ds: Dataset) -> None:
    """Sparsify the freshly initialized dense network in place."""
    if cfg.method == "dense":
        return
    start_s = cfg.granet_s_initial if cfg.method == "granet" else cfg.sparsity
    shapes = [layer.param.values.shape for layer in net.layers]
    if cfg.init == "snip":
        bx = ds.x_train[:cfg.batch_size]
        by = ds.y_train[:cfg.batch_size]
        masks = snip_init(net, bx, by, start_s)
    else:
        alloc = uniform_allocate if cfg.init == "uniform" else erk_allocate
        budget = alloc(shapes, start_s)
        masks = [random_mask_init(shape, density, hub.mask_seed(i))
                 for i, (shape, density) in
                 enumerate(zip(shapes, budget.densities))]
    net.set_masks(masks)


def _linear_flops(net: Network) -> float:
    return sum(2.0 * layer.param.active for layer in net.layers)


def _record(tag: str, seed: int, epoch: float, net: Network,
            preds: PredictionSet, train_ratio: float,
            per_ticket=()) -> MetricsRecord:
    rep = flops_estimate(net)
    rec = MetricsRecord(tag=tag, seed=seed, epoch=epoch,
                        sparsity=sparsity_of(net.masks()),
                        accuracy=accuracy(preds), nll=nll(preds),
                        ece=ece(preds), flops_train_ratio=train_ratio,
                        flops_infer_ratio=rep.infer_ratio,
                        per_ticket_accuracies=tuple(per_ticket))
    rec.validate()
    return rec


# -- checkpoint plumbing ------------------------------------------------------

def _capture(cfg: TrainConfig, net: Network, opt: OptimizerState,
             acc: TicketAccumulator | None, next_iteration: int, seed: int,
             cum_sparse: float, cum_dense: float,
             ticket_accs: list[float]) -> CheckpointState:
    state = CheckpointState()
    t = state.tensors
    for name, param, mask in net.named_params():
        t[f"net.{name}"] = param
        if mask is not None:
            t[f"net.{name}.mask"] = mask
    for idx, layer in enumerate(net.layers):
        if layer.bn is not None:
            t[f"net.l{idx}.bn.running_mean"] = layer.bn.running_mean
            t[f"net.l{idx}.bn.running_var"] = layer.bn.running_var
    for name, v in opt.velocities.items():
        t[f"opt.{name}"] = v
    acc_meta = None
    if acc is not None and acc.t > 0:
        for i, grid in enumerate(acc.grids):
            t[f"acc.grid{i}"] = grid
            t[f"acc.union{i}"] = acc.union_masks[i]
            t[f"acc.bias{i}"] = acc.bias_avg[i]
            if acc.mode == "caa":
                t[f"acc.count{i}"] = acc.counts[i]
            if acc.bn_avg[i] is not None:
                for key, arr in acc.bn_avg[i].items():
                    t[f"acc.bn{i}.{key}"] = arr
        acc_meta = {"t": acc.t, "provenance": acc.provenance,
                    "layer_keep": acc.layer_keep}
    state.meta = {
        "iteration": next_iteration,
        "master_seed": seed,
        "cum_sparse_flops": cum_sparse,
        "cum_dense_flops": cum_dense,
        "ticket_accuracies": list(ticket_accs),
        "accumulator": acc_meta,
        "config": cfg.to_dict(),
    }
    return state


def _restore(cfg: TrainConfig, state: CheckpointState, net: Network,
             opt: OptimizerState, acc: TicketAccumulator | None):
    saved_cfg = state.meta.get("config", {})
    current = {k: (list(v) if isinstance(v, tuple) else v)
               for k, v in cfg.to_dict().items()}
    if saved_cfg != current:
        diff = [k for k in current if saved_cfg.get(k) != current[k]]
        raise ConfigError(f"checkpoint was written under a different "
                          f"configuration (differs in {diff})")
    t = state.tensors
    for name, param, mask in net.named_params():
        param[...] = t[f"net.{name}"]
        if mask is not None:
            mask[...] = t[f"net.{name}.mask"]
    for idx, layer in enumerate(net.layers):
        layer.param.apply_mask()
        if layer.bn is not None:
            layer.bn.running_mean = t[f"net.l{idx}.bn.running_mean"].copy()
            layer.bn.running_var = t[f"net.l{idx}.bn.running_var"].copy()
    for key, arr in t.items():
        if key.startswith("opt."):
            opt.velocities[key.removeprefix("opt.")] = arr.copy()
    acc_meta = state.meta.get("accumulator")
    if acc is not None and acc_meta is not None:
        acc._init_from(net)  # allocate matching buffers
        acc.t = int(acc_meta["t"])
        acc.provenance = [int(x) for x in acc_meta["provenance"]]
        acc.layer_keep = [int(x) for x in acc_meta["layer_keep"]]
        for i in range(len(acc.grids)):
            acc.grids[i] = t[f"acc.grid{i}"].copy()
            acc.union_masks[i] = t[f"acc.union{i}"].copy()
            acc.bias_avg[i] = t[f"acc.bias{i}"].copy()
            if acc.mode == "caa":
                acc.counts[i] = t[f"acc.count{i}"].copy()
            if acc.bn_avg[i] is not None:
                for key in acc.bn_avg[i]:
                    acc.bn_avg[i][key] = t[f"acc.bn{i}.{key}"].copy()
    meta = state.meta
    return (int(meta["iteration"]), float(meta["cum_sparse_flops"]),
            float(meta["cum_dense_flops"]),
            [float(a) for a in meta["ticket_accuracies"]])


# -- the training loop --------------------------------------------------------

def run(cfg: TrainConfig, seed: int | None = None,
        out_dir: str | Path | None = None, resume: str | Path | None = None,
        stop_after_epoch: int = 0, keep_tickets: bool = False) -> RunResult:
    cfg.validate()
    if stop_after_epoch > 0 and out_dir is None:
        raise ConfigError("stop_after_epoch needs an output directory for "
                          "the checkpoint")
    seed = cfg.seed if seed is None else int(seed)
    tag = cfg.resolved_tag()
    ds = build_dataset(cfg)
    if ds.n_features != cfg.layers[0] or ds.n_classes > cfg.layers[-1]:
        raise ConfigError(
            f"architecture {cfg.layers} does not fit dataset with "
            f"{ds.n_features} features / {ds.n_classes} classes")

    n_train = ds.x_train.shape[0]
    starts = _batch_starts(n_train, cfg.batch_size)
    ipe = len(starts)
    if ipe == 0:
        raise ConfigError(f"training split of {n_train} samples cannot fill "
                          f"one batch")
    total_iters = cfg.epochs * ipe
    sched = LrSchedule(
        base_lr=cfg.base_lr,
        step_decay=tuple((e, cfg.decay_factor) for e in cfg.decay_epochs),
        alpha_trough=cfg.alpha1, alpha_peak=cfg.effective_alpha2(),
        cycle_iters=cfg.cycle_epochs * ipe, total_iters=total_iters,
        ticket_fraction=cfg.ticket_phase_fraction, iters_per_epoch=ipe)
    superposing = cfg.superposing()
    if superposing:
        validate_handoff(sched)

    hub = RngHub(seed)
    net = Network(cfg.layers, batchnorm=cfg.batchnorm,
                  rng=hub.generator(rng_streams.INIT))
    _initial_masks(cfg, net, hub, ds)
    opt = OptimizerState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    dynamic = cfg.method in DYNAMIC_METHODS
    granet_sched = None
    if cfg.method == "granet":
        granet_sched = GranetSchedule(cfg.granet_s_initial, cfg.sparsity,
                                      cfg.granet_t_start_epoch * ipe,
                                      cfg.granet_t_end() * ipe)
    explore_cfg = ExploreConfig(
        p=cfg.p, grow_criterion=cfg.effective_grow(), delta_t=cfg.delta_t,
        anneal=cfg.anneal,
        anneal_t_end=sched.normal_end if superposing else total_iters,
        granet=granet_sched)

    acc = None
    if superposing:
        acc = TicketAccumulator(mode=cfg.averaging, beta=cfg.cima_beta,
                                target_sparsity=cfg.sparsity,
                                preserve_layerwise=cfg.preserve_layerwise_budget)

    dense_linear = flops_estimate(net).dense_linear_infer
    cur_linear = _linear_flops(net)
    cum_sparse = 0.0
    cum_dense = 0.0
    ticket_accs: list[float] = []
    tickets: list[Network] = []
    start_iter = 1
    if resume is not None:
        state = load_checkpoint(resume)
        start_iter, cum_sparse, cum_dense, ticket_accs = \
            _restore(cfg, state, net, opt, acc)
        cur_linear = _linear_flops(net)
        log.info("resumed %s at iteration %d", tag, start_iter)

    result = RunResult(tag=tag, seed=seed)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    ckpt_path = (out_path / f"{tag}_seed{seed}.ckpt") if out_path else None

    def train_ratio() -> float:
        return cum_sparse / cum_dense if cum_dense > 0 else \
            cur_linear / dense_linear

    perm = None
    for i in range(start_iter, total_iters + 1):
        epoch_idx = (i - 1) // ipe
        pos = (i - 1) % ipe
        if pos == 0 or perm is None:
            perm = hub.shuffle_perm(epoch_idx, n_train)
        lo = starts[pos]
        hi = min(lo + cfg.batch_size, n_train)
        take = perm[lo:hi]
        bx, by = ds.x_train[take], ds.y_train[take]

        phase = phase_of(i, sched) if superposing else None
        in_tickets = superposing and not phase.normal
        if in_tickets:
            lr = cyclical_lr(i - sched.normal_end, sched)
        else:
            lr = step_decay_lr(epoch_idx, sched)

        loss, grads = net.loss_and_grads(bx, by, train=True)
        net.sgd_step(grads, opt, lr)
        b = bx.shape[0]
        cum_sparse += 3.0 * cur_linear * b
        cum_dense += 3.0 * dense_linear * b

        explored = False
        if dynamic and i % cfg.delta_t == 0:
            if not in_tickets:
                if granet_sched is not None:
                    granet_shrink(net, granet_target_sparsity(i, granet_sched),
                                  opt)
                explore(net, grads, explore_cfg, i, hub.explore_seed(i), opt)
                explored = True
            elif cfg.explore_in_cycles and not phase.is_cycle_end:
                explore(net, grads, explore_cfg, i, hub.explore_seed(i), opt,
                        rate=cfg.p)
                explored = True

        if in_tickets and phase.is_cycle_end:
            k = phase.cycle_index
            snap = net.snapshot()
            preds = evaluate(snap, ds.x_test, ds.y_test)
            tick_rec = _record(f"{tag}/ticket{k}", seed, i / ipe, snap, preds,
                               train_ratio())
            result.records.append(tick_rec)
            ticket_accs.append(tick_rec.accuracy)
            acc.absorb(snap, cycle_index=k)
            current = finalize(acc, bn_mode="average")
            upreds = evaluate(current.network, ds.x_test, ds.y_test)
            result.records.append(_record(f"{tag}/ultimate", seed, i / ipe,
                                          current.network, upreds,
                                          train_ratio()))
            if keep_tickets:
                tickets.append(snap)
            if not cfg.swa_baseline:
                explore(net, grads, explore_cfg, i, hub.explore_seed(i), opt,
                        rate=cfg.p)
                explored = True

        if explored:
            cur_linear = _linear_flops(net)

        if pos == ipe - 1:
            epoch_done = epoch_idx + 1
            preds = evaluate(net, ds.x_test, ds.y_test)
            result.records.append(_record(tag, seed, float(epoch_done), net,
                                          preds, train_ratio()))
            want_ckpt = (cfg.checkpoint_every > 0
                         and epoch_done % cfg.checkpoint_every == 0)
            stopping = stop_after_epoch > 0 and epoch_done >= stop_after_epoch
            if (want_ckpt or stopping) and ckpt_path is not None:
                save_checkpoint(ckpt_path, _capture(
                    cfg, net, opt, acc, i + 1, seed, cum_sparse, cum_dense,
                    ticket_accs))
            if stopping:
                result.iterations_run = i - start_iter + 1
                result.network = net
                result.ticket_accuracies = ticket_accs
                return result

    result.iterations_run = total_iters - start_iter + 1
    result.network = net
    result.ticket_accuracies = ticket_accs

    if superposing:
        data = ds.x_train if cfg.bn_mode == "recompute" else None
        result.ultimate = finalize(acc, bn_mode=cfg.bn_mode, data=data,
                                   batch_size=cfg.batch_size)
        preds = evaluate(result.ultimate.network, ds.x_test, ds.y_test)
        result.records.append(_record(f"{tag}/final", seed, float(cfg.epochs),
                                      result.ultimate.network, preds,
                                      train_ratio(), per_ticket=ticket_accs))
    else:
        preds = evaluate(net, ds.x_test, ds.y_test)
        result.records.append(_record(f"{tag}/final", seed, float(cfg.epochs),
                                      net, preds, train_ratio()))

    if keep_tickets:
        if len(tickets) < 2:
            raise ConfigError("prediction ensemble needs at least 2 tickets")
        member_preds = [PredictionSet(t.predict_proba(ds.x_test), ds.y_test)
                        for t in tickets]
        result.diversity = ensemble_diversity(member_preds)
        probs = np.mean([p.probs for p in member_preds], axis=0)
        epreds = PredictionSet(probs, ds.y_test)
        ens = MetricsRecord(tag=f"{tag}/ensemble", seed=seed,
                            epoch=float(cfg.epochs),
                            sparsity=sparsity_of(net.masks()),
                            accuracy=accuracy(epreds), nll=nll(epreds),
                            ece=ece(epreds), flops_train_ratio=train_ratio(),
                            flops_infer_ratio=flops_estimate(net).infer_ratio
                            * len(tickets))
        ens.validate()
        result.records.append(ens)
        result.tickets = tickets

    if out_path is not None:
        from .report import write_records_csv
        result.csv_path = str(out_path / f"{tag}_seed{seed}.csv")
        write_records_csv(result.csv_path, result.records)
        if cfg.checkpoint_every > 0 and ckpt_path is not None:
            save_checkpoint(ckpt_path, _capture(
                cfg, net, opt, acc, total_iters + 1, seed, cum_sparse,
                cum_dense, ticket_accs))
    return result


def run_sup_tickets(cfg: TrainConfig, seed: int | None = None,
                    out_dir=None, resume=None,
                    stop_after_epoch: int = 0) -> RunResult:
    """Full superposition run; returns the ultimate ticket and all records."""
    if not cfg.superposing():
        raise ConfigError("run_sup_tickets needs sup_tickets = on")
    return run(cfg, seed=seed, out_dir=out_dir, resume=resume,
               stop_after_epoch=stop_after_epoch)


def run_baseline(cfg: TrainConfig, seed: int | None = None,
                 out_dir=None, resume=None,
                 stop_after_epoch: int = 0) -> RunResult:
    """Plain dense/static/dynamic training (or the no-exploration averaging
    variant when swa_baseline is on) with the same logging schema."""
    if cfg.sup_tickets:
        raise ConfigError("run_baseline needs sup_tickets = off")
    return run(cfg, seed=seed, out_dir=out_dir, resume=resume,
               stop_after_epoch=stop_after_epoch)


def run_prediction_ensemble(cfg: TrainConfig, seed: int | None = None,
                            out_dir=None) -> RunResult:
    """Keep every cycle-end ticket and average their softmax outputs."""
    if not cfg.superposing():
        raise ConfigError("prediction ensemble needs sup_tickets = on")
    capacity = (cfg.ticket_phase_fraction * cfg.epochs) // cfg.cycle_epochs
    if capacity < 2:
        raise ConfigError("prediction ensemble needs at least 2 tickets; "
                          "shorten cycles or extend the ticket phase")
    if cfg.checkpoint_every:
        log.warning("checkpointing is not supported in ensemble mode")
        cfg.checkpoint_every = 0
    return run(cfg, seed=seed, out_dir=out_dir, keep_tickets=True)
