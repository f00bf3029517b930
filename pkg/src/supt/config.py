"""Run configuration: a flat key = value text format, strictly validated.

Unknown keys are hard errors. A `profile` key overlays a named preset
(desk-scale default, or the 250-epoch CIFAR-style recipe) before the file's
own keys are applied. See the README for the full key reference.
"""

import logging
from dataclasses import dataclass, asdict, fields

from .errors import ConfigError

log = logging.getLogger(__name__)

METHODS = ("dense", "static", "set", "rigl", "granet")
INITS = ("uniform", "erk", "snip")
AVERAGING = ("cia", "caa", "cima")
ANNEALS = ("none", "cosine")
GROWS = ("auto", "random", "gradient")
BN_MODES = ("average", "recompute")
DATASETS = ("synth_blobs", "synth_spirals", "idx")


def _boolish(v: str) -> bool:
    s = v.strip().lower()
    if s in ("on", "true", "yes", "1"):
        return True
    if s in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {v!r}")


def _int_list(v: str) -> tuple:
    s = v.strip()
    if not s:
        return ()
    return tuple(int(x) for x in s.split(","))


@dataclass
class TrainConfig:
    # data
    dataset: str = "synth_blobs"
    synth_n: int = 2000
    synth_classes: int = 4
    synth_noise: float = 0.35
    synth_seed: int = 7
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    # architecture
    layers: tuple = (2, 32, 4)
    batchnorm: bool = True
    # method
    method: str = "rigl"
    init: str = "erk"
    sup_tickets: bool = True
    swa_baseline: bool = False
    averaging: str = "cia"
    cima_beta: float = 0.8
    sparsity: float = 0.9
    preserve_layerwise_budget: bool = True
    # optimization
    epochs: int = 20
    batch_size: int = 128
    base_lr: float = 0.1
    decay_epochs: tuple = (10, 15)
    decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # ticket phase
    cycle_epochs: int = 2
    ticket_phase_fraction: float = 0.10
    alpha1: float = 0.001
    alpha2: float = 0.005
    restart_peak_lr: float = 0.0  # > 0 overrides alpha2
    # exploration
    p: float = 0.3
    delta_t: int = 100
    anneal: str = "cosine"
    grow_criterion: str = "auto"
    explore_in_cycles: bool = False
    # gradual sparsification
    granet_s_initial: float = 0.5
    granet_t_start_epoch: int = 0
    granet_t_end_epoch: int = -1  # -1 -> epochs // 2
    # batch-norm statistics for the final ticket
    bn_mode: str = "average"
    # bookkeeping
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints
    seed: int = 0
    tag: str = ""

    def resolved_tag(self) -> str:
        if self.tag:
            return self.tag
        base = self.method if self.method == "dense" else \
            f"{self.method}-{self.init}"
        if self.swa_baseline:
            return base + "+swa"
        if self.sup_tickets:
            return base + "+sup"
        return base

    def effective_alpha2(self) -> float:
        return self.restart_peak_lr if self.restart_peak_lr > 0 else self.alpha2

    def effective_grow(self) -> str:
        if self.grow_criterion != "auto":
            return self.grow_criterion
        return {"set": "random", "static": "random", "rigl": "gradient",
                "granet": "gradient", "dense": "random"}[self.method]

    def granet_t_end(self) -> int:
        return self.granet_t_end_epoch if self.granet_t_end_epoch >= 0 \
            else self.epochs // 2

    def superposing(self) -> bool:
        return self.sup_tickets or self.swa_baseline

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        def check(cond, msg):
            if not cond:
                raise ConfigError(msg)

        check(self.dataset in DATASETS, f"unknown dataset {self.dataset!r}")
        check(self.method in METHODS, f"unknown method {self.method!r}")
        check(self.init in INITS, f"unknown init {self.init!r}")
        check(self.averaging in AVERAGING,
              f"unknown averaging {self.averaging!r}")
        check(self.anneal in ANNEALS, f"unknown anneal {self.anneal!r}")
        check(self.grow_criterion in GROWS,
              f"unknown grow criterion {self.grow_criterion!r}")
        check(self.bn_mode in BN_MODES, f"unknown bn_mode {self.bn_mode!r}")
        check(len(self.layers) >= 2, "layers needs input and output widths")
        check(all(w >= 1 for w in self.layers), "layer widths must be >= 1")
        check(self.epochs >= 1, "epochs must be >= 1")
        check(self.batch_size >= 1, "batch_size must be >= 1")
        check(not (self.batchnorm and self.batch_size < 2),
              "batchnorm needs batch_size >= 2")
        check(0.0 <= self.sparsity < 1.0, "sparsity must be in [0, 1)")
        check(self.base_lr > 0, "base_lr must be positive")
        check(0.0 < self.decay_factor <= 1.0, "decay_factor must be in (0, 1]")
        check(0.0 <= self.momentum < 1.0, "momentum must be in [0, 1)")
        check(self.weight_decay >= 0.0, "weight_decay must be >= 0")
        check(0.0 < self.cima_beta < 1.0, "cima_beta must be in (0, 1)")
        check(0.0 < self.p < 1.0, "p must be in (0, 1)")
        check(self.delta_t >= 1, "delta_t must be >= 1")
        check(self.cycle_epochs >= 1, "cycle_epochs must be >= 1")
        check(0.0 < self.ticket_phase_fraction < 1.0,
              "ticket_phase_fraction must be in (0, 1)")
        check(0.0 < self.alpha1 <= self.effective_alpha2(),
              "need 0 < alpha1 <= alpha2")
        check(self.dataset != "idx" or all(
            (self.train_images, self.train_labels, self.test_images,
             self.test_labels)), "idx dataset needs the four file paths")
        check(self.synth_n >= self.synth_classes,
              "synth_n must cover every class")
        check(self.checkpoint_every >= 0, "checkpoint_every must be >= 0")

        if self.method == "dense":
            check(not self.superposing(),
                  "ticket superposition needs a sparse method")
        if self.swa_baseline:
            check(not self.sup_tickets,
                  "swa_baseline and sup_tickets are mutually exclusive")
            check(self.method == "static",
                  "swa_baseline averages a fixed topology (method = static)")
        if self.superposing():
            check(self.ticket_phase_fraction * self.epochs
                  >= self.cycle_epochs - 1e-9,
                  "ticket phase shorter than one cycle "
                  "(need ticket_phase_fraction * epochs >= cycle_epochs)")
        if self.method == "granet":
            check(self.granet_s_initial <= self.sparsity,
                  "granet_s_initial must not exceed the target sparsity")
            check(self.granet_t_start_epoch <= self.granet_t_end(),
                  "granet ramp must start before it ends")
            limit = self.epochs * (1.0 - self.ticket_phase_fraction) \
                if self.superposing() else self.epochs
            check(self.granet_t_end() <= limit + 1e-9,
                  "granet ramp must finish before the ticket phase")


PROFILES = {
    "desk": dict(layers=(784, 128, 10), batchnorm=True, batch_size=128,
                 epochs=20, base_lr=0.1, decay_epochs=(10, 15),
                 cycle_epochs=2),
    "paper": dict(batchnorm=True, batch_size=128, epochs=250, base_lr=0.1,
                  decay_epochs=(113, 169), decay_factor=0.1, momentum=0.9,
                  weight_decay=5e-4, cycle_epochs=8, alpha1=0.001,
                  alpha2=0.005, init="erk", sparsity=0.9,
                  ticket_phase_fraction=0.10),
}

_PARSERS = {
    "dataset": str, "synth_n": int, "synth_classes": int,
    "synth_noise": float, "synth_seed": int,
    "train_images": str, "train_labels": str,
    "test_images": str, "test_labels": str,
    "layers": _int_list, "batchnorm": _boolish,
    "method": str, "init": str, "sup_tickets": _boolish,
    "swa_baseline": _boolish, "averaging": str, "cima_beta": float,
    "sparsity": float, "preserve_layerwise_budget": _boolish,
    "epochs": int, "batch_size": int, "base_lr": float,
    "decay_epochs": _int_list, "decay_factor": float,
    "momentum": float, "weight_decay": float,
    "cycle_epochs": int, "ticket_phase_fraction": float,
    "alpha1": float, "alpha2": float, "restart_peak_lr": float,
    "p": float, "delta_t": int, "anneal": str, "grow_criterion": str,
    "explore_in_cycles": _boolish,
    "granet_s_initial": float, "granet_t_start_epoch": int,
    "granet_t_end_epoch": int,
    "bn_mode": str, "checkpoint_every": int, "seed": int, "tag": str,
}

assert set(_PARSERS) == {f.name for f in fields(TrainConfig)}


def config_from_dict(raw: dict) -> TrainConfig:
    """Build and validate a TrainConfig from string or typed values."""
    profile = raw.pop("profile", None)
    values: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        values.update(PROFILES[profile])
    for key, val in raw.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _PARSERS[key](val) if isinstance(val, str) else val
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    cfg = TrainConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                         for k, v in values.items()})
    cfg.validate()
    return cfg


def parse_config_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val
    return raw


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(parse_config_text(f.read()))
