"""Zero-shot classification, F1 aggregates, percentile-band validity and linear probing."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PromptBank:
    class_names: tuple
    embeddings: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] == 0:
            raise EvalError("prompt bank is empty")
        if len(self.class_names) != e.shape[0]:
            raise EvalError("one embedding per class name required")
        object.__setattr__(self, "embeddings", e / np.linalg.norm(e, axis=1, keepdims=True))

    @classmethod
    def from_templates(cls, class_names, template_embeddings) -> "PromptBank":
        """Average several normalized template embeddings per class (shape K x T x d)."""
        t = np.asarray(template_embeddings, dtype=np.float64)
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        return cls(tuple(class_names), t.mean(axis=1))


@dataclass(frozen=True)
class PercentileChart:
    """Per-level reference band ``[lower, upper]`` (2.5th to 97.5th percentile)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise EvalError("chart bounds must be matching non-empty vectors")
        if np.any(lo >= hi):
            raise EvalError("every band needs lower < upper")
        if np.any(np.diff(0.5 * (lo + hi)) <= 0):
            raise EvalError("band centres must be strictly increasing")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @classmethod
    def synthetic(cls, centers, half_width) -> "PercentileChart":
        c = np.asarray(centers, dtype=np.float64)
        return cls(c - half_width, c + half_width)


@dataclass
class EvalReport:
    f1_per_class: list
    f1_macro: float
    f1_all: float
    validity_rate: float
    avg_selection: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["extras"]:
            del d["extras"]
        return d


def zero_shot_classify(img_emb, bank: PromptBank, return_ties: bool = False):
    """Argmax cosine per row; ties resolve to the lowest class index."""
    x = np.asarray(getattr(img_emb, "values", img_emb), dtype=np.float64)
    if bank.embeddings.shape[0] == 0:
        raise EvalError("empty prompt bank")
    scores = x @ bank.embeddings.T
    preds = np.argmax(scores, axis=1)  # first maximal index
    best = scores[np.arange(len(preds)), preds]
    tied = np.sum(scores == best[:, None], axis=1) > 1
    if tied.any():
        log.debug("zero-shot argmax ties on %d rows", int(tied.sum()))
    return (preds, tied) if return_ties else preds


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def macro_f1(preds, labels, num_classes: int):
    """Per-class F1 (0 when precision+recall is 0) and the mean over classes present in labels."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise EvalError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise EvalError("label out of range")
    if preds.size and (preds.min() < 0 or preds.max() >= num_classes):
        raise EvalError("prediction out of range")
    cm = confusion_matrix(preds, labels, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    present = cm.sum(axis=1) > 0
    macro = float(per_class[present].mean()) if present.any() else 0.0
    return per_class, macro


def f1_all(f1_coarse: float, f1_fine: float, weights=(5, 3)) -> float:
    """Class-count weighted mean of the coarse and fine-grained macro-F1 scores."""
    for v in (f1_coarse, f1_fine):
        if not 0.0 <= v <= 1.0:
            raise EvalError(f"F1 value {v} outside [0, 1]")
    wc, wf = weights
    return (wc * f1_coarse + wf * f1_fine) / (wc + wf)


def avg_selection(f1_all_value: float, validity_percent: float) -> float:
    """Run-selection heuristic mixing F1-all with the validity percentage; not an evaluation metric."""
    if not 0.0 <= validity_percent <= 100.0:
        raise EvalError(f"validity {validity_percent} outside [0, 100]")
    if not 0.0 <= f1_all_value <= 1.0:
        raise EvalError(f"F1-all {f1_all_value} outside [0, 1]")
    return (f1_all_value + validity_percent / 100.0) / 2.0


def validity_rate(predicted_bins, true_measures, chart: PercentileChart):
    """Fraction of samples whose true measure lies inside the predicted bin's band."""
    bins = np.asarray(predicted_bins, dtype=np.int64)
    m = np.asarray(true_measures, dtype=np.float64)
    if bins.shape != m.shape:
        raise EvalError("predicted bins and measures differ in length")
    if bins.size and (bins.min() < 0 or bins.max() >= len(chart.lower)):
        raise EvalError("predicted bin index out of range")
    flags = (m >= chart.lower[bins]) & (m <= chart.upper[bins])
    rate = float(flags.mean()) if flags.size else 0.0
    return rate, flags


def auroc(scores, labels) -> float:
    """Area under the ROC curve by the trapezoidal rule (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    npos, nneg = int(y.sum()), int((~y).sum())
    if npos == 0 or nneg == 0:
        raise EvalError("AUROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # one ROC vertex per distinct threshold
    distinct = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.r_[0, np.cumsum(y)[distinct]] / npos
    fps = np.r_[0, np.cumsum(~y)[distinct]] / nneg
    return float(np.sum(np.diff(fps) * (tps[1:] + tps[:-1]) / 2.0))


@dataclass(frozen=True)
class ProbeConfig:
    iterations: int = 500
    l2: float = 1e-3
    learning_rate: float = 1.0


def fit_softmax_regression(x, y, num_classes: int, config: ProbeConfig = ProbeConfig()):
    """Full-batch gradient descent on L2-regularized multinomial cross-entropy."""
    n, d = x.shape
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y]
    for _ in range(config.iterations):
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= config.learning_rate * (x.T @ g + config.l2 * w)
        b -= config.learning_rate * g.sum(axis=0)
    return w, b


def linear_probe(train_feats, train_labels, test_feats, test_labels,
                 config: ProbeConfig = ProbeConfig()):
    """Train one linear layer on frozen features; return (macro_f1, auroc or None)."""
    xtr = np.asarray(train_feats, dtype=np.float64)
    xte = np.asarray(test_feats, dtype=np.float64)
    ytr = np.asarray(train_labels, dtype=np.int64)
    yte = np.asarray(test_labels, dtype=np.int64)
    classes = np.unique(ytr)
    if len(classes) < 2:
        raise EvalError("linear probe needs at least two training classes")
    k = int(max(ytr.max(), yte.max())) + 1
    w, b = fit_softmax_regression(xtr, ytr, k, config)
    logits = xte @ w + b
    preds = np.argmax(logits, axis=1)
    _, macro = macro_f1(preds, yte, k)
    roc = None
    if k == 2 and len(np.unique(yte)) == 2:
        roc = auroc(logits[:, 1] - logits[:, 0], yte == 1)
    return macro, roc
