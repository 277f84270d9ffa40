"""Threshold and window-schedule sweeps over the full (aux + refine + retrain) method."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

from .. import pipeline
from ..datagen import Corpus
from ..model import ModelConfig
from ..refine import ScheduleError, make_schedule
from .metrics import MetricsReport, format_table

TAU_GRID = (0.01, 0.03, 0.05, 0.07, 0.10)
WINDOW_GRID = ((2, 2), (3, 1), (4, 2), (5, 5))


@dataclass
class SweepCell:
    key: tuple
    metrics: MetricsReport | None = None
    T1: int | None = None
    refined_quality: dict | None = None
    rejected: str | None = None


@dataclass
class SweepResult:
    param: str
    cells: list[SweepCell] = field(default_factory=list)

    def to_jsonl(self) -> str:
        out = []
        for c in self.cells:
            rec = {"param": self.param, "key": list(c.key), "T1": c.T1, "rejected": c.rejected,
                   "refined_quality": c.refined_quality}
            if c.metrics is not None:
                rec.update(c.metrics.to_dict())
            out.append(json.dumps(rec, sort_keys=True) + "\n")
        return "".join(out)

    def table(self) -> str:
        rows, extra = {}, {}
        for c in self.cells:
            name = f"{self.param}={','.join(str(k) for k in c.key)}"
            if c.metrics is None:
                continue
            rows[name] = c.metrics
            if c.T1 is not None:
                extra[name] = {"T1": str(c.T1)}
        text = format_table(rows, extra, title=f"AVE+A+LR sweep over {self.param}")
        for c in self.cells:
            if c.rejected:
                text += f"# rejected {self.param}={c.key}: {c.rejected}\n"
        return text


def sweep_tau(corpus: Corpus, model_config: ModelConfig, config: pipeline.TrainConfig,
              taus: Sequence[float] = TAU_GRID, eval_split: str = "test") -> SweepResult:
    """Refinement + retraining per threshold, sharing one aux-trained base model."""
    for tau in taus:
        if not 0 < tau < 1:
            raise ValueError(f"tau={tau} must lie in (0, 1)")
    if len(set(taus)) != len(taus):
        raise ValueError("duplicate tau values")
    config.validate(corpus.spec.T, need_aux=True)
    base = pipeline.train_stage1(corpus.train, model_config, config, with_aux=True)
    held = corpus.split(eval_split)
    T1 = make_schedule(corpus.spec.T, config.N, config.s).T1
    result = SweepResult("tau")
    for tau in taus:
        cfg = replace(config, tau=tau)
        rep = pipeline.PipelineReport()
        params, _ = pipeline.run_lr_variant(corpus.train, base, cfg, rep, "BASE+A+LR")
        result.cells.append(SweepCell((tau,), pipeline.evaluate(params, held), T1,
                                      rep.refined_quality["BASE+A+LR"]))
    return result


def sweep_window(corpus: Corpus, model_config: ModelConfig, config: pipeline.TrainConfig,
                 choices: Sequence[tuple[int, int]] = WINDOW_GRID, eval_split: str = "test") -> SweepResult:
    """Full aux + refine + retrain run per (N, s); invalid cells are recorded, not raised."""
    if len(set(choices)) != len(choices):
        raise ValueError("duplicate (N, s) cells")
    T = corpus.spec.T
    held = corpus.split(eval_split)
    result = SweepResult("N,s")
    for N, s in choices:
        try:
            sch = make_schedule(T, N, s)
        except ScheduleError as e:
            result.cells.append(SweepCell((N, s), rejected=str(e)))
            continue
        if not sch.aux_valid:
            result.cells.append(SweepCell((N, s), T1=sch.T1,
                                          rejected=f"N={N} violates N < (T+1)/2 = {(T + 1) / 2}"))
            continue
        cfg = replace(config, N=N, s=s)
        base = pipeline.train_stage1(corpus.train, model_config, cfg, with_aux=True)
        rep = pipeline.PipelineReport()
        params, _ = pipeline.run_lr_variant(corpus.train, base, cfg, rep, "BASE+A+LR")
        result.cells.append(SweepCell((N, s), pipeline.evaluate(params, held), sch.T1,
                                      rep.refined_quality["BASE+A+LR"]))
    return result
