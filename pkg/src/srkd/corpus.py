"""Synthetic paired-modality corpus with planted inter-class confusions, plus coupled augmentation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from srkd.evaluation import PercentileChart


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_classes: int = 8
    confusable_pairs: tuple = ((5, 6), (5, 7), (6, 7))
    samples_per_class: int = 128
    eval_samples_per_class: int = 64
    ambient_dim: int = 32
    signal_dim: int = 16
    noise_sigma: float = 0.1
    text_noise_sigma: float = 0.1
    confusion_strength: float = 0.8
    # per-sample continuous measure on the confusable group, one level per class
    measure_sigma: float = 0.35
    band_half_width: float = 0.7
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "confusable_pairs",
                           tuple(tuple(int(c) for c in p) for p in self.confusable_pairs))
        if self.signal_dim > self.ambient_dim:
            raise ValueError("signal_dim must not exceed ambient_dim")
        if self.num_classes > self.signal_dim:
            raise ValueError("num_classes must not exceed signal_dim (orthogonal prototypes)")
        if not 0.0 <= self.confusion_strength <= 1.0:
            raise ValueError("confusion_strength must lie in [0, 1]")
        for a, b in self.confusable_pairs:
            if not (0 <= a < self.num_classes and 0 <= b < self.num_classes) or a == b:
                raise ValueError(f"invalid confusable pair {(a, b)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusable_pairs"] = [list(p) for p in self.confusable_pairs]
        return d


def confusable_groups(num_classes: int, pairs) -> list[tuple[int, ...]]:
    """Connected components (size >= 2) of the confusable-pair graph."""
    parent = list(range(num_classes))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        parent[find(a)] = find(b)
    comps: dict[int, list[int]] = {}
    for c in range(num_classes):
        comps.setdefault(find(c), []).append(c)
    return sorted(tuple(sorted(g)) for g in comps.values() if len(g) > 1)


@dataclass
class Corpus:
    spec: SyntheticCorpusSpec
    prototypes: np.ndarray  # K x signal_dim, unit rows
    train_img: np.ndarray
    train_txt: np.ndarray
    train_labels: np.ndarray
    eval_img: np.ndarray
    eval_txt: np.ndarray
    eval_labels: np.ndarray
    eval_measures: np.ndarray  # NaN outside the confusable group
    prompt_txt: np.ndarray  # noiseless text view of each prototype
    group: tuple = ()
    chart: PercentileChart | None = field(default=None, repr=False)

    @property
    def coarse_classes(self) -> tuple:
        return tuple(c for c in range(self.spec.num_classes) if c not in self.group)


def make_prototypes(spec: SyntheticCorpusSpec, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((spec.signal_dim, spec.signal_dim)))
    base = q[:, : spec.num_classes].T.copy()
    protos = base.copy()
    s = spec.confusion_strength
    for g in confusable_groups(spec.num_classes, spec.confusable_pairs):
        anchor = base[list(g)].sum(axis=0)
        anchor /= np.linalg.norm(anchor)
        for c in g:
            v = (1.0 - s) * base[c] + s * anchor
            protos[c] = v / np.linalg.norm(v)
    return protos


def generate_corpus(spec: SyntheticCorpusSpec) -> Corpus:
    rng = np.random.default_rng(spec.seed)
    protos = make_prototypes(spec, rng)
    # each modality embeds the signal space through its own random isometry
    mix_img = np.linalg.qr(rng.standard_normal((spec.ambient_dim, spec.ambient_dim)))[0][:, : spec.signal_dim]
    mix_txt = np.linalg.qr(rng.standard_normal((spec.ambient_dim, spec.ambient_dim)))[0][:, : spec.signal_dim]

    def draw(per_class):
        labels = np.repeat(np.arange(spec.num_classes), per_class)
        clean = protos[labels]
        img = clean @ mix_img.T + spec.noise_sigma * rng.standard_normal((len(labels), spec.ambient_dim))
        txt = clean @ mix_txt.T + spec.text_noise_sigma * rng.standard_normal((len(labels), spec.ambient_dim))
        return img, txt, labels

    tr_img, tr_txt, tr_lab = draw(spec.samples_per_class)
    ev_img, ev_txt, ev_lab = draw(spec.eval_samples_per_class)

    groups = confusable_groups(spec.num_classes, spec.confusable_pairs)
    group = groups[0] if groups else ()
    measures = np.full(len(ev_lab), np.nan)
    chart = None
    if group:
        level = {c: i for i, c in enumerate(group)}
        for i, c in enumerate(ev_lab):
            if c in level:
                measures[i] = level[c] + spec.measure_sigma * rng.standard_normal()
        chart = PercentileChart.synthetic(np.arange(len(group), dtype=np.float64), spec.band_half_width)

    return Corpus(
        spec=spec, prototypes=protos,
        train_img=tr_img, train_txt=tr_txt, train_labels=tr_lab,
        eval_img=ev_img, eval_txt=ev_txt, eval_labels=ev_lab, eval_measures=measures,
        prompt_txt=protos @ mix_txt.T, group=group, chart=chart,
    )


@dataclass(frozen=True)
class AugmentationDraw:
    """Affine/jitter parameters shared by the teacher and student view of one sample."""

    plane: tuple  # coordinate pair rotated
    angle: float
    scale: float
    noise_id: int


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    max_angle: float = 0.3
    scale_jitter: float = 0.1
    noise_sigma: float = 0.05


def draw_augmentation(rng: np.random.Generator, dim: int, cfg: AugmentConfig) -> AugmentationDraw:
    i, j = rng.choice(dim, size=2, replace=False)
    return AugmentationDraw(
        plane=(int(i), int(j)),
        angle=float(rng.uniform(-cfg.max_angle, cfg.max_angle)),
        scale=float(1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)),
        noise_id=int(rng.integers(0, 2**63 - 1)),
    )


def apply_augmentation(x: np.ndarray, draw: AugmentationDraw, cfg: AugmentConfig) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    if not cfg.enabled:
        return out
    i, j = draw.plane
    c, s = np.cos(draw.angle), np.sin(draw.angle)
    xi, xj = out[i], out[j]
    out[i], out[j] = c * xi - s * xj, s * xi + c * xj
    out *= draw.scale
    out += cfg.noise_sigma * np.random.default_rng(draw.noise_id).standard_normal(out.shape)
    return out


def coupled_views(sample: np.ndarray, draw: AugmentationDraw, cfg: AugmentConfig = AugmentConfig()):
    """Teacher and student views of one sample, both from the same draw."""
    teacher_view = apply_augmentation(sample, draw, cfg)
    student_view = apply_augmentation(sample, draw, cfg)
    return teacher_view, student_view


def augment_batch(batch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig):
    """One draw per row; returns (teacher_views, student_views, draws)."""
    if not cfg.enabled:
        return batch.copy(), batch.copy(), []
    draws = [draw_augmentation(rng, batch.shape[1], cfg) for _ in range(batch.shape[0])]
    tv = np.empty_like(batch, dtype=np.float64)
    sv = np.empty_like(batch, dtype=np.float64)
    for k, d in enumerate(draws):
        tv[k], sv[k] = coupled_views(batch[k], d, cfg)
    return tv, sv, draws
