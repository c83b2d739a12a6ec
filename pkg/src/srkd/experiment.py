"""One training run end to end: corpus, teacher, student, artifacts on disk."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from srkd import __version__
from srkd import io as sio
from srkd._backend import BACKEND
from srkd.corpus import SyntheticCorpusSpec, generate_corpus
from srkd.geometry import geometry_report
from srkd.schedule import zero_crossing
from srkd.train import (
    DivergenceError, TeacherConfig, TrainConfig, pretrain_teacher, train_student, zero_shot_report,
)

log = logging.getLogger(__name__)

ALLOWED_KEYS = {
    "train": sio.dataclass_keys(TrainConfig),
    "corpus": sio.dataclass_keys(SyntheticCorpusSpec),
    "teacher": sio.dataclass_keys(TeacherConfig),
}

ARTIFACTS = ("metrics.jsonl", "embeddings.rkde", "prompts.rkde", "measures.json",
             "chart.json", "eval.json", "geometry.json")


@dataclass(frozen=True)
class RunSpec:
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: SyntheticCorpusSpec = field(default_factory=SyntheticCorpusSpec)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)

    @classmethod
    def from_flat(cls, flat: dict) -> "RunSpec":
        """Build from ``{"train.mode": ..., "corpus.seed": ...}``; unknown keys are rejected."""
        sections = sio.split_sections(flat, ALLOWED_KEYS)
        corpus = dict(sections["corpus"])
        if "confusable_pairs" in corpus:
            corpus["confusable_pairs"] = tuple(tuple(p) for p in corpus["confusable_pairs"])
        return cls(TrainConfig.from_dict(sections["train"]),
                   SyntheticCorpusSpec(**corpus), TeacherConfig(**sections["teacher"]))

    @classmethod
    def from_manifest(cls, manifest: dict) -> "RunSpec":
        flat = {}
        for section in ALLOWED_KEYS:
            for k, v in manifest.get(section, {}).items():
                flat[f"{section}.{k}"] = v
        return cls.from_flat(flat)

    def schedule_dict(self) -> dict | None:
        spec = self.train.schedule()
        if spec is None:
            return None
        return {
            "mode": spec.mode.value, "initial": spec.initial, "total_epochs": spec.total_epochs,
            "min_ratio": spec.min_ratio, "zero_crossing": zero_crossing(spec),
            "interpolation": "per_step",
        }


_TEACHERS: dict = {}


def cached_teacher(corpus, corpus_spec: SyntheticCorpusSpec, teacher_cfg: TeacherConfig):
    key = (repr(corpus_spec), repr(teacher_cfg))
    if key not in _TEACHERS:
        _TEACHERS[key] = pretrain_teacher(corpus, teacher_cfg)
    return _TEACHERS[key]


@dataclass
class RunResult:
    status: str
    eval: dict | None = None
    geometry: dict | None = None
    error: str | None = None
    records: list = field(default_factory=list)


def run(spec: RunSpec, out_dir) -> RunResult:
    """Execute one run and write every artifact plus the manifest into ``out_dir``.

    Raises :class:`DivergenceError` after writing the partial log and a
    manifest marked ``failed``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(spec.corpus)
    needs_teacher = spec.train.mode.value not in ("no_kd", "conf_penalty")
    teacher = cached_teacher(corpus, spec.corpus, spec.teacher) if needs_teacher else None
    manifest = {
        "srkd_version": __version__,
        "status": "running",
        "train": spec.train.to_dict(),
        "corpus": spec.corpus.to_dict(),
        "teacher": spec.teacher.to_dict(),
        "schedule": spec.schedule_dict(),
        "optimizer": {"name": "adamw", "betas": [spec.train.adam_beta1, spec.train.adam_beta2],
                      "weight_decay": spec.train.weight_decay, "lr_schedule": "constant"},
        "platform": sio.platform_fingerprint(BACKEND),
        "teacher_digest": teacher.digest() if teacher is not None else None,
        "teacher_parameters": teacher.parameter_count if teacher is not None else None,
    }
    with sio.MetricLogWriter(out / "metrics.jsonl") as sink:
        try:
            student, records = train_student(spec.train, corpus, teacher, sink=sink)
        except DivergenceError as exc:
            manifest["status"] = "failed"
            manifest["error"] = str(exc)
            manifest["divergence"] = {"epoch": exc.epoch, "step": exc.step}
            sink.close()
            manifest["outputs"] = {"metrics.jsonl": sio.sha256_file(out / "metrics.jsonl")}
            sio.write_json(out / "manifest.json", manifest)
            raise
    if teacher is not None and teacher.digest() != manifest["teacher_digest"]:
        raise RuntimeError("teacher parameters changed during student training")

    report, emb = zero_shot_report(student, corpus)
    geo = geometry_report(emb, corpus.eval_labels).to_dict()
    prompts = student.encode_texts(corpus.prompt_txt)
    sio.write_embeddings(out / "embeddings.rkde", emb, corpus.eval_labels)
    sio.write_embeddings(out / "prompts.rkde", prompts, np.arange(corpus.spec.num_classes))
    sio.write_json(out / "measures.json",
                   [None if np.isnan(m) else float(m) for m in corpus.eval_measures])
    chart = {"lower": [float(v) for v in corpus.chart.lower],
             "upper": [float(v) for v in corpus.chart.upper],
             "classes": list(corpus.group)} if corpus.chart is not None else None
    sio.write_json(out / "chart.json", chart)
    sio.write_json(out / "eval.json", report.to_dict())
    sio.write_json(out / "geometry.json", geo)

    manifest["status"] = "ok"
    manifest["student_parameters"] = student.parameter_count
    manifest["outputs"] = {name: sio.sha256_file(out / name) for name in ARTIFACTS}
    sio.write_json(out / "manifest.json", manifest)
    ev = {k: getattr(report, k) for k in ("f1_macro", "f1_all", "validity_rate", "avg_selection")}
    return RunResult("ok", ev, geo, records=records)
