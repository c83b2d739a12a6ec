"""Toy-scale teacher pretraining and student distillation loop."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from srkd import evaluation as ev
from srkd import losses
from srkd.corpus import AugmentConfig, Corpus, augment_batch
from srkd.geometry import GeometryError, geometry_report
from srkd.nets import AdamW, Arch, Encoder, EncoderSpec, FrozenError, params_digest
from srkd.schedule import Phase, ScheduleMode, ScheduleSpec, phase_of_weight, weight_at, zero_crossing

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    NO_KD = "no_kd"
    STATIC_KD = "static"
    STATIC_FEAT_KD = "static_feat"
    POSITIVE_DECAY = "pos_decay"
    FULL_DECAY = "full_decay"
    CONF_PENALTY = "conf_penalty"
    COUPLED_REPULSIVE = "coupled"
    SELECTIVE_REPULSIVE = "selective"


_DEFAULT_MIN_RATIO = {
    Mode.POSITIVE_DECAY: 0.1,
    Mode.FULL_DECAY: 0.0,
    Mode.COUPLED_REPULSIVE: -0.8,
    Mode.SELECTIVE_REPULSIVE: -0.8,
}

KD_MODES = {Mode.STATIC_KD, Mode.STATIC_FEAT_KD, Mode.POSITIVE_DECAY, Mode.FULL_DECAY,
            Mode.COUPLED_REPULSIVE, Mode.SELECTIVE_REPULSIVE}


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, step: int, records=None):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.records = records or []


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.SELECTIVE_REPULSIVE
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 3e-3
    tau_kd: float = 5.0
    lambda0: float = 1.0
    beta0: float = 2.0
    min_ratio: float | None = None
    epsilon: float = 0.1
    lambda_feat: float = 2000.0
    seed: int = 42
    logit_scale_init: float = 1.0 / 0.07
    logit_scale_max: float = 100.0
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    grad_clip: float = 0.0
    schedule_diagonal: bool = False
    transition_delta: float | None = None
    augment: bool = True
    student_hidden: int = 16
    student_dim: int = 8
    geometry_every_epoch: bool = True

    def __post_init__(self):
        if isinstance(self.mode, str):
            try:
                object.__setattr__(self, "mode", Mode(self.mode))
            except ValueError:
                raise ConfigError(f"unknown mode {self.mode!r}; expected one of "
                                  f"{[m.value for m in Mode]}") from None
        if self.min_ratio is None:
            object.__setattr__(self, "min_ratio", _DEFAULT_MIN_RATIO.get(self.mode, -0.8))
        if self.epochs <= 0 or self.batch_size < 2:
            raise ConfigError("epochs must be positive and batch_size at least 2")
        if self.learning_rate <= 0 or self.tau_kd <= 0:
            raise ConfigError("learning_rate and tau_kd must be positive")
        if self.logit_scale_init <= 0 or self.logit_scale_max < self.logit_scale_init:
            raise ConfigError("need 0 < logit_scale_init <= logit_scale_max")
        if self.mode is Mode.POSITIVE_DECAY and not self.min_ratio > 0:
            raise ConfigError("pos_decay needs min_ratio > 0")
        if self.mode is Mode.FULL_DECAY and self.min_ratio != 0:
            raise ConfigError("full_decay needs min_ratio == 0")
        if self.schedule_diagonal and self.mode is not Mode.SELECTIVE_REPULSIVE:
            raise ConfigError("schedule_diagonal only applies to selective mode")
        if self.epsilon < 0 or self.lambda_feat < 0 or self.grad_clip < 0:
            raise ConfigError("epsilon, lambda_feat and grad_clip must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training key(s): {', '.join(unknown)}")
        return cls(**d)

    def schedule(self) -> ScheduleSpec | None:
        if self.mode in (Mode.POSITIVE_DECAY, Mode.FULL_DECAY, Mode.COUPLED_REPULSIVE):
            return ScheduleSpec(self.lambda0, float(self.epochs), self.min_ratio, ScheduleMode.COUPLED)
        if self.mode is Mode.SELECTIVE_REPULSIVE:
            return ScheduleSpec(self.beta0, float(self.epochs), self.min_ratio, ScheduleMode.SELECTIVE)
        return None


@dataclass(frozen=True)
class StepWeights:
    """Coefficients of one step: total = clip + lam*(diag_w*L_diag + beta*L_off) + ..."""

    lam: float
    diag_w: float
    beta: float
    scheduled: float | None  # the value the schedule produced, if any

    @property
    def diag_coefficient(self) -> float:
        return self.lam * self.diag_w

    @property
    def offdiag_coefficient(self) -> float:
        return self.lam * self.beta


def step_weights(config: TrainConfig, t: float) -> StepWeights:
    m = config.mode
    if m not in KD_MODES:
        return StepWeights(0.0, 0.0, 0.0, None)
    if m in (Mode.STATIC_KD, Mode.STATIC_FEAT_KD):
        return StepWeights(config.lambda0, 1.0, 1.0, None)
    w = weight_at(config.schedule(), t)
    if m is Mode.SELECTIVE_REPULSIVE:
        return StepWeights(1.0, w if config.schedule_diagonal else 1.0, w, w)
    return StepWeights(w, 1.0, 1.0, w)


def step_phase(config: TrainConfig, weights: StepWeights) -> Phase | None:
    spec = config.schedule()
    if spec is None:
        if config.mode in (Mode.STATIC_KD, Mode.STATIC_FEAT_KD):
            return phase_of_weight(config.lambda0, 0.02 * abs(config.lambda0))
        return None
    delta = config.transition_delta
    if delta is None:
        delta = 0.02 * abs(spec.initial)
    return phase_of_weight(weights.scheduled, delta)


# --------------------------------------------------------------------------- models

def teacher_specs(input_dim: int, hidden: int = 256, dim: int = 32):
    return (EncoderSpec(Arch.MLP, input_dim, dim, hidden), EncoderSpec(Arch.MLP, input_dim, dim, hidden))


def student_specs(input_dim: int, hidden: int = 16, dim: int = 8):
    img = EncoderSpec(Arch.MLP, input_dim, dim, hidden) if hidden > 0 else EncoderSpec(Arch.LINEAR, input_dim, dim)
    return img, EncoderSpec(Arch.LINEAR, input_dim, dim)


class DualEncoder:
    """Image and text encoders plus a log-parameterized logit scale."""

    def __init__(self, img_spec: EncoderSpec, txt_spec: EncoderSpec, rng: np.random.Generator,
                 logit_scale_init: float, logit_scale_max: float = 100.0):
        self.img = Encoder(img_spec, rng)
        self.txt = Encoder(txt_spec, rng)
        self.log_scale = np.array(math.log(logit_scale_init))
        self.log_scale_max = math.log(logit_scale_max)
        self.frozen = False

    @property
    def scale(self) -> float:
        return float(math.exp(float(self.log_scale)))

    def named_params(self) -> dict[str, np.ndarray]:
        out = {f"img.{k}": v for k, v in self.img.params.items()}
        out.update({f"txt.{k}": v for k, v in self.txt.params.items()})
        out["log_scale"] = self.log_scale
        return out

    @property
    def parameter_count(self) -> int:
        return self.img.spec.parameter_count + self.txt.spec.parameter_count + 1

    def digest(self) -> str:
        return params_digest(self.named_params())

    def freeze(self):
        self.frozen = True
        for v in self.named_params().values():
            v.setflags(write=False)

    def check_trainable(self):
        if self.frozen:
            raise FrozenError("teacher is frozen; its parameters cannot be updated")

    def apply_gradients(self, opt: AdamW, grads: dict) -> None:
        self.check_trainable()
        opt.step(grads)
        self.clamp_scale()

    def clamp_scale(self):
        if float(self.log_scale) > self.log_scale_max:
            self.log_scale[...] = self.log_scale_max

    def encode_images(self, x):
        return self.img.forward(x)

    def encode_texts(self, x):
        return self.txt.forward(x)


class Teacher(DualEncoder):
    pass


class Student(DualEncoder):
    def __init__(self, *args, teacher_dim: int | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.projection = None
        if teacher_dim is not None:
            ds = self.img.spec.output_dim
            proj = np.zeros((ds, teacher_dim))
            k = min(ds, teacher_dim)
            proj[np.arange(k), np.arange(k)] = math.sqrt(teacher_dim / ds)
            self.projection = proj

    def named_params(self):
        out = super().named_params()
        if self.projection is not None:
            out["proj"] = self.projection
        return out


def clip_backward(model: DualEncoder, img_u, txt_u, grad_logits):
    """Gradients of a loss given d/d(logits) for logits = scale * img_u @ txt_u.T."""
    s = model.scale
    g_img = s * (grad_logits @ txt_u)
    g_txt = s * (grad_logits.T @ img_u)
    g_log_scale = s * float(np.sum(grad_logits * (img_u @ txt_u.T)))
    return g_img, g_txt, g_log_scale


# --------------------------------------------------------------------------- evaluation

def zero_shot_report(model: DualEncoder, corpus: Corpus):
    """Zero-shot EvalReport on the held-out split plus the eval image embeddings."""
    emb = model.encode_images(corpus.eval_img)
    bank_emb = model.encode_texts(corpus.prompt_txt)
    k = corpus.spec.num_classes
    bank = ev.PromptBank(tuple(range(k)), bank_emb)
    labels = corpus.eval_labels
    preds = ev.zero_shot_classify(emb, bank)
    per_class, macro = ev.macro_f1(preds, labels, k)
    coarse = corpus.coarse_classes
    f1_coarse = float(np.mean(per_class[list(coarse)])) if coarse else macro
    validity = 0.0
    f1_fine = macro
    if corpus.group:
        g = list(corpus.group)
        mask = np.isin(labels, g)
        sub_bank = ev.PromptBank(tuple(g), bank_emb[g])
        fine_preds = ev.zero_shot_classify(emb[mask], sub_bank)
        fine_labels = np.searchsorted(g, labels[mask])
        _, f1_fine = ev.macro_f1(fine_preds, fine_labels, len(g))
        validity, _ = ev.validity_rate(fine_preds, corpus.eval_measures[mask], corpus.chart)
    fa = ev.f1_all(f1_coarse, f1_fine, (len(coarse), len(corpus.group) or 1))
    report = ev.EvalReport(
        f1_per_class=[float(v) for v in per_class], f1_macro=macro, f1_all=fa,
        validity_rate=validity, avg_selection=ev.avg_selection(fa, 100.0 * validity),
        extras={"f1_coarse": f1_coarse, "f1_fine": f1_fine},
    )
    return report, emb


def zero_shot_f1(model: DualEncoder, corpus: Corpus, classes=None) -> float:
    """Mean per-class zero-shot F1 on the eval split, optionally over a subset of classes."""
    rep, _ = zero_shot_report(model, corpus)
    per = np.asarray(rep.f1_per_class)
    return float(per.mean() if classes is None else per[list(classes)].mean())


# --------------------------------------------------------------------------- teacher

class TeacherTrainingError(RuntimeError):
    def __init__(self, f1: float, floor: float, steps: int):
        super().__init__(f"teacher zero-shot F1 {f1:.4f} below floor {floor} after {steps} steps")
        self.f1 = f1


@dataclass(frozen=True)
class TeacherConfig:
    steps: int = 6000
    min_steps: int = 3200
    hidden: int = 256
    dim: int = 32
    learning_rate: float = 3e-3
    batch_size: int = 64
    f1_floor: float = 0.9
    check_every: int = 16
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for k in range(n // batch_size):
        yield order[k * batch_size:(k + 1) * batch_size]


def pretrain_teacher(corpus: Corpus, config: TeacherConfig = TeacherConfig(),
                     steps: int | None = None) -> Teacher:
    """CLIP-only training of an over-sized dual encoder, returned frozen.

    After ``config.min_steps`` the zero-shot F1 on the non-confusable classes
    is checked every ``check_every`` steps and training stops once it clears
    ``f1_floor``. The confusable classes are never targeted, so they keep an
    elevated mutual similarity.
    """
    steps = config.steps if steps is None else steps
    rng = np.random.default_rng([config.seed, 0x7EAC])
    img_spec, txt_spec = teacher_specs(corpus.spec.ambient_dim, config.hidden, config.dim)
    teacher = Teacher(img_spec, txt_spec, rng, 1.0 / 0.07)
    params = teacher.named_params()
    opt = AdamW(params, config.learning_rate, decay={k for k in params if ".w" in k})
    n = len(corpus.train_labels)
    done, f1 = 0, 0.0
    coarse = corpus.coarse_classes or tuple(range(corpus.spec.num_classes))
    while done < steps:
        for idx in _batches(rng, n, config.batch_size):
            iu = teacher.encode_images(corpus.train_img[idx])
            tu = teacher.encode_texts(corpus.train_txt[idx])
            _, g = losses.clip_loss(teacher.scale * (iu @ tu.T))
            gi, gt, gs = clip_backward(teacher, iu, tu, g)
            grads = {f"img.{k}": v for k, v in teacher.img.backward(gi).items()}
            grads.update({f"txt.{k}": v for k, v in teacher.txt.backward(gt).items()})
            grads["log_scale"] = np.array(gs)
            teacher.apply_gradients(opt, grads)
            done += 1
            if done % config.check_every == 0 and done >= min(config.min_steps, steps):
                f1 = zero_shot_f1(teacher, corpus, coarse)
                if f1 >= config.f1_floor:
                    teacher.freeze()
                    log.info("teacher reached F1 %.4f after %d steps", f1, done)
                    return teacher
            if done >= steps:
                break
    raise TeacherTrainingError(f1, config.f1_floor, steps)


# --------------------------------------------------------------------------- student

RECORD_KEYS = (
    "epoch", "step", "t", "phase", "applied_lambda", "applied_beta", "applied_diag",
    "loss_clip", "loss_kd_diag", "loss_kd_offdiag", "loss_conf", "loss_feat",
    "logit_scale", "grad_norm", "eval", "geometry",
)
EVAL_KEYS = ("f1_macro", "f1_all", "validity_rate", "avg_selection")


def make_student(config: TrainConfig, corpus: Corpus, teacher: Teacher | None) -> Student:
    rng = np.random.default_rng([config.seed, 0x57D])
    img_spec, txt_spec = student_specs(corpus.spec.ambient_dim, config.student_hidden, config.student_dim)
    tdim = teacher.img.spec.output_dim if (teacher is not None and config.mode is Mode.STATIC_FEAT_KD) else None
    return Student(img_spec, txt_spec, rng, config.logit_scale_init, config.logit_scale_max, teacher_dim=tdim)


@dataclass
class StepResult:
    report: losses.LossReport
    grads: dict
    student_img: np.ndarray


def student_step(config: TrainConfig, student: Student, teacher: Teacher | None,
                 img_views: tuple, txt: np.ndarray, weights: StepWeights) -> StepResult:
    """Losses and parameter gradients for one batch (no parameter update)."""
    teacher_view, student_view = img_views
    iu = student.encode_images(student_view)
    tu = student.encode_texts(txt)
    cos = iu @ tu.T
    z = student.scale * cos
    rep = losses.LossReport(applied_lambda=weights.lam, applied_beta=weights.beta)
    rep.clip_loss, g = losses.clip_loss(z)
    ti = None
    if config.mode in KD_MODES:
        ti = teacher.encode_images(teacher_view)
        tt = teacher.encode_texts(txt)
        p1, p2 = losses.teacher_targets(teacher.scale * (ti @ tt.T), config.tau_kd)
        diag, off, comb, g_kd = losses.kd_from_targets(
            z, p1, p2, weights.diag_coefficient, weights.offdiag_coefficient)
        rep.kd_diag, rep.kd_offdiag, rep.kd_total = diag, off, comb
        g = g + g_kd
    if config.mode is Mode.CONF_PENALTY:
        v, g_c = losses.confidence_penalty(z)
        rep.conf_penalty = v
        g = g + config.epsilon * g_c
    g_img, g_txt, g_ls = clip_backward(student, iu, tu, g)
    grads = {}
    if config.mode is Mode.STATIC_FEAT_KD:
        v, g_fi, g_proj = losses.feature_kd(iu, student.projection, ti)
        rep.feat_kd = v
        g_img = g_img + config.lambda_feat * g_fi
        grads["proj"] = config.lambda_feat * g_proj
    grads.update({f"img.{k}": v for k, v in student.img.backward(g_img).items()})
    grads.update({f"txt.{k}": v for k, v in student.txt.backward(g_txt).items()})
    grads["log_scale"] = np.array(g_ls)
    rep.grad_inf_norm = float(max(np.max(np.abs(v)) for v in grads.values()))
    return StepResult(rep, grads, iu)


def _finite(rep: losses.LossReport) -> bool:
    return all(math.isfinite(getattr(rep, k)) for k in
               ("clip_loss", "kd_diag", "kd_offdiag", "conf_penalty", "feat_kd", "grad_inf_norm"))


def _grad_norm(grads) -> float:
    return float(math.sqrt(sum(float(np.sum(v * v)) for v in grads.values())))


def train_student(config: TrainConfig, corpus: Corpus, teacher: Teacher | None = None,
                  sink=None):
    """Train a fresh student; returns ``(student, records)``.

    ``records`` holds one dict per optimizer step with keys ``RECORD_KEYS``;
    the last step of every epoch also carries the held-out eval and geometry.
    ``sink``, if given, is called with each record as it is produced.
    """
    if config.mode in KD_MODES:
        if teacher is None:
            raise ConfigError(f"mode {config.mode.value} needs a teacher")
        if not teacher.frozen:
            raise ConfigError("teacher must be frozen before distillation")
    student = make_student(config, corpus, teacher)
    params = student.named_params()
    opt = AdamW(params, config.learning_rate, (config.adam_beta1, config.adam_beta2),
                weight_decay=config.weight_decay, decay={k for k in params if ".w" in k})
    order_rng = np.random.default_rng([config.seed, 0x0DE5])
    aug_rng = np.random.default_rng([config.seed, 0xA06])
    aug_cfg = AugmentConfig(enabled=config.augment)
    n = len(corpus.train_labels)
    steps_per_epoch = n // config.batch_size
    if steps_per_epoch == 0:
        raise ConfigError("batch_size exceeds the training set")
    records = []
    for epoch in range(config.epochs):
        for step, idx in enumerate(_batches(order_rng, n, config.batch_size)):
            t = epoch + step / steps_per_epoch
            w = step_weights(config, t)
            views = augment_batch(corpus.train_img[idx], aug_rng, aug_cfg)[:2]
            res = student_step(config, student, teacher, views, corpus.train_txt[idx], w)
            rep = res.report
            if not _finite(rep):
                raise DivergenceError(epoch, step, records)
            gnorm = _grad_norm(res.grads)
            if config.grad_clip > 0 and gnorm > config.grad_clip:
                for v in res.grads.values():
                    v *= config.grad_clip / gnorm
            student.apply_gradients(opt, res.grads)
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise DivergenceError(epoch, step, records)
            phase = step_phase(config, w)
            rec = {
                "epoch": epoch, "step": step, "t": t,
                "phase": phase.value if phase else None,
                "applied_lambda": w.lam, "applied_beta": w.beta, "applied_diag": w.diag_coefficient,
                "loss_clip": rep.clip_loss, "loss_kd_diag": rep.kd_diag,
                "loss_kd_offdiag": rep.kd_offdiag, "loss_conf": rep.conf_penalty,
                "loss_feat": rep.feat_kd, "logit_scale": student.scale, "grad_norm": gnorm,
                "eval": None, "geometry": None,
            }
            if step == steps_per_epoch - 1:
                report, emb = zero_shot_report(student, corpus)
                rec["eval"] = {k: getattr(report, k) for k in EVAL_KEYS}
                if config.geometry_every_epoch or epoch == config.epochs - 1:
                    try:
                        rec["geometry"] = geometry_report(emb, corpus.eval_labels).to_dict()
                    except GeometryError as exc:
                        log.warning("geometry skipped at epoch %d: %s", epoch, exc)
            records.append(rec)
            if sink is not None:
                sink(rec)
    return student, records


def epoch_evals(records) -> tuple[np.ndarray, list]:
    """(end-of-epoch times, eval dicts) from a record list."""
    rows = [r for r in records if r["eval"] is not None]
    return np.array([r["epoch"] + 1.0 for r in rows]), [r["eval"] for r in rows]


def late_surge(records, config: TrainConfig, window: float = 5.0, key: str = "avg_selection"):
    """Gain of ``key`` over [t*, S] and over [t* - window, t*], linearly interpolating epoch evals."""
    tstar = zero_crossing(config.schedule())
    if tstar is None:
        raise ValueError("schedule has no zero crossing")
    ts, evals = epoch_evals(records)
    vals = np.array([e[key] for e in evals])
    ts = np.r_[0.0, ts]
    vals = np.r_[vals[0], vals]  # hold the first eval flat back to t = 0
    at = lambda x: float(np.interp(x, ts, vals))  # noqa: E731
    return at(config.epochs) - at(tstar), at(tstar) - at(max(tstar - window, 0.0))
