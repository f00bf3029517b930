"""Accuracy, calibration, diversity, significance, and FLOPs accounting."""

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class PredictionSet:
    """Predicted class probabilities with the true labels."""

    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.probs.ndim != 2 or self.labels.shape != (self.probs.shape[0],):
            raise ValueError("probs must be n x classes with n labels")
        if self.probs.min() < -1e-9 or self.probs.max() > 1.0 + 1e-9:
            raise ValueError("probabilities outside [0, 1]")
        if np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("probability rows must sum to 1")

    def __len__(self):
        return self.probs.shape[0]


def accuracy(preds: PredictionSet) -> float:
    """Fraction of rows whose argmax (ties to the lowest class) is correct."""
    return float(np.mean(preds.probs.argmax(axis=1) == preds.labels))


def nll(preds: PredictionSet) -> float:
    p = preds.probs[np.arange(len(preds)), preds.labels]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def ece(preds: PredictionSet, n_bins: int = 15) -> float:
    """Expected calibration error over equal-width confidence bins on (0, 1].

    A confidence landing exactly on a bin edge joins the lower bin; 0 joins
    bin 1. Empty bins contribute nothing.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = preds.probs.max(axis=1)
    correct = preds.probs.argmax(axis=1) == preds.labels
    idx = np.ceil(conf * n_bins).astype(int)
    np.clip(idx, 1, n_bins, out=idx)
    n = len(preds)
    total = 0.0
    for b in range(1, n_bins + 1):
        sel = idx == b
        count = int(sel.sum())
        if count == 0:
            continue
        gap = abs(float(correct[sel].mean()) - float(conf[sel].mean()))
        total += count / n * gap
    return total


def prediction_disagreement(a: PredictionSet, b: PredictionSet) -> float:
    if len(a) != len(b):
        raise ValueError("prediction sets differ in length")
    return float(np.mean(a.probs.argmax(axis=1) != b.probs.argmax(axis=1)))


def pairwise_kl(a: PredictionSet, b: PredictionSet) -> float:
    """Mean over rows of KL(a || b), probabilities floored before the logs."""
    if len(a) != len(b):
        raise ValueError("prediction sets differ in length")
    p = np.maximum(a.probs, PROB_FLOOR)
    q = np.maximum(b.probs, PROB_FLOOR)
    return float(np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=1)))


def ensemble_diversity(preds_list) -> tuple[float, float]:
    """Mean disagreement and mean KL over all ordered model pairs."""
    dis, kl, pairs = 0.0, 0.0, 0
    for i, a in enumerate(preds_list):
        for j, b in enumerate(preds_list):
            if i == j:
                continue
            dis += prediction_disagreement(a, b)
            kl += pairwise_kl(a, b)
            pairs += 1
    if pairs == 0:
        return 0.0, 0.0
    return dis / pairs, kl / pairs


@dataclass
class KsResult:
    statistic: float
    p_value: float
    significant: bool  # at p < 0.05


def _kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """Asymptotic two-sided KS survival function Q(lam)."""
    if lam < 0.05:
        # The series needs many terms near 0 while Q is 1 to ~1e-100 there.
        return 1.0
    ks = np.arange(1, terms + 1)
    s = 2.0 * np.sum((-1.0) ** (ks - 1) * np.exp(-2.0 * ks ** 2 * lam ** 2))
    return float(min(max(s, 0.0), 1.0))


def ks_test(samples_a, samples_b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test.

    D is the sup-distance between the empirical CDFs; the p-value uses the
    asymptotic Kolmogorov distribution with effective sample size
    n_a*n_b/(n_a+n_b).
    """
    a = np.sort(np.asarray(samples_a, dtype=np.float64))
    b = np.sort(np.asarray(samples_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_test needs nonempty samples")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    p = _kolmogorov_sf(np.sqrt(n_eff) * d)
    return KsResult(statistic=d, p_value=p, significant=p < 0.05)


@dataclass
class FlopsReport:
    infer_per_example: float   # includes dense bias/BN/activation terms
    train_per_iter: float      # 3x inference x batch
    infer_ratio: float         # linear-term ratio vs the dense network
    train_ratio: float
    linear_infer: float
    dense_linear_infer: float


def flops_estimate(network, batch_size: int = 1) -> FlopsReport:
    """Theoretical FLOPs given the current masks.

    Linear terms count 2 * active weights per example; bias adds, BN, and
    activations are counted dense on both sides, so the reported ratios are
    linear-term ratios. Training is the usual forward + 2x backward.
    """
    linear = 0.0
    dense_linear = 0.0
    extra = 0.0
    for layer in network.layers:
        n_in, n_out = layer.param.values.shape
        linear += 2.0 * layer.param.active
        dense_linear += 2.0 * n_in * n_out
        extra += n_out  # bias add
        if layer.bn is not None:
            extra += 4.0 * n_out
        if layer.activation == "relu":
            extra += n_out
    infer = linear + extra
    ratio = linear / dense_linear
    return FlopsReport(infer_per_example=infer,
                       train_per_iter=3.0 * infer * batch_size,
                       infer_ratio=ratio, train_ratio=ratio,
                       linear_infer=linear, dense_linear_infer=dense_linear)


@dataclass
class MetricsRecord:
    """One evaluation event, serialized as one CSV row."""

    tag: str
    seed: int
    epoch: float
    sparsity: float
    accuracy: float
    nll: float
    ece: float
    flops_train_ratio: float
    flops_infer_ratio: float
    per_ticket_accuracies: tuple = field(default=())

    def validate(self) -> None:
        for name in ("sparsity", "accuracy", "nll", "ece",
                     "flops_train_ratio", "flops_infer_ratio"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite metric {name}")


def evaluate(network, x: np.ndarray, labels: np.ndarray) -> PredictionSet:
    return PredictionSet(network.predict_proba(x), labels)
