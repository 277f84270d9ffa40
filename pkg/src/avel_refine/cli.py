"""Command-line driver.

    avel-refine gen|train|refine|retrain|eval|ablate|sweep [--config FILE] [--seed N]
                [--out DIR] [--threads N] [--tau X] [--window N,s]

The config file is INI with sections ``[corpus]``, ``[model]``, ``[train]``
and ``[run]``; keys are the dataclass field names. Unknown sections or keys
are rejected. Every command writes ``resolved_config.ini`` into ``--out``.

Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric failure.
Log level comes from ``AVEL_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import datagen, pipeline, refine
from .datagen import CorpusSpec, FormatError, NoPartnerError
from .evalkit import format_table, naive_baselines, sweep_tau, sweep_window
from .evalkit.sweeps import TAU_GRID, WINDOW_GRID
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .numkit import DomainError
from .pipeline import TrainConfig

log = logging.getLogger("avel_refine")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
COMMANDS = ("gen", "train", "refine", "retrain", "eval", "ablate", "sweep")


class UsageError(Exception):
    pass


@dataclass
class RunOptions:
    seed: int = 0
    aux: bool = True
    eval_split: str = "test"
    corpus: str = ""
    checkpoint: str = ""
    refined: str = ""
    sweep: str = "tau"
    taus: str = ",".join(str(t) for t in TAU_GRID)
    windows: str = " ".join(f"{n},{s}" for n, s in WINDOW_GRID)


@dataclass
class RunConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunOptions = field(default_factory=RunOptions)
    out: Path = Path("out")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for sec in ("corpus", "model", "train", "run"):
            cp[sec] = {k: str(v) for k, v in dataclasses.asdict(getattr(self, sec)).items()}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)


def _coerce(value: str, default):
    if isinstance(default, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _section(cls, values: dict[str, str], name: str):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return dataclasses.replace(defaults, **{k: _coerce(v, getattr(defaults, k)) for k, v in values.items()})
    except ValueError as e:
        raise UsageError(f"bad value in [{name}]: {e}") from None


def parse_window(text: str) -> tuple[int, int]:
    try:
        n, s = (int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--window expects N,s (got {text!r})") from None
    return n, s


def load_config(args) -> RunConfig:
    sections: dict[str, dict[str, str]] = {k: {} for k in ("corpus", "model", "train", "run")}
    if args.config:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            with open(args.config) as f:
                cp.read_file(f)
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {args.config}") from None
        except configparser.Error as e:
            raise UsageError(f"cannot parse {args.config}: {e}") from None
        for sec in cp.sections():
            if sec not in sections:
                raise UsageError(f"unknown config section [{sec}]")
            sections[sec] = dict(cp[sec])

    run = _section(RunOptions, sections["run"], "run")
    if args.seed is not None:
        run = dataclasses.replace(run, seed=args.seed)
    corpus = dataclasses.replace(_section(CorpusSpec, sections["corpus"], "corpus"), seed=run.seed)
    model = _section(ModelConfig, sections["model"], "model")
    # the model's shape follows the corpus
    model = dataclasses.replace(model, d_audio=corpus.d_audio, d_visual=corpus.d_visual,
                                n_classes=corpus.n_classes, seed=run.seed)
    train = dataclasses.replace(_section(TrainConfig, sections["train"], "train"), seed=run.seed)
    if args.tau is not None:
        train = dataclasses.replace(train, tau=args.tau)
    if args.window is not None:
        n, s = parse_window(args.window)
        train = dataclasses.replace(train, N=n, s=s)
    cfg = RunConfig(corpus, model, train, run, Path(args.out))
    corpus.validate()
    train.validate(corpus.T, need_aux=run.aux)
    if run.eval_split not in ("train", "val", "test"):
        raise UsageError(f"eval_split must be train, val or test (got {run.eval_split!r})")
    return cfg


# ---------------------------------------------------------------------------
# artifacts

def _path(cfg: RunConfig, explicit: str, default: str) -> Path:
    return Path(explicit) if explicit else cfg.out / default


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing input artifact: expected {path}")
    return path


def _corpus(cfg: RunConfig) -> datagen.Corpus:
    return datagen.load_corpus(_require(_path(cfg, cfg.run.corpus, "corpus.jsonl")))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _losses_text(curve: list[float]) -> str:
    return "".join(f"{i}\t{v!r}\n" for i, v in enumerate(curve))


# ---------------------------------------------------------------------------
# commands

def cmd_gen(cfg: RunConfig) -> str:
    corpus = datagen.make_corpus(cfg.corpus)
    path = cfg.out / "corpus.jsonl"
    datagen.save_corpus(corpus, path)
    videos = corpus.all_videos()
    hist = datagen.event_length_histogram(videos)
    lines = [f"wrote {path}",
             f"videos: train={len(corpus.train)} val={len(corpus.val)} test={len(corpus.test)}",
             f"background segment fraction: {datagen.background_fraction(videos):.4f}",
             "event length histogram: " + " ".join(f"{k}:{v}" for k, v in hist.items())]
    return "\n".join(lines) + "\n"


def cmd_train(cfg: RunConfig) -> str:
    corpus = _corpus(cfg)
    hist: list[float] = []
    params = pipeline.train_stage1(corpus.train, cfg.model, cfg.train, with_aux=cfg.run.aux, history=hist)
    path = cfg.out / "stage1.ckpt"
    save_checkpoint(params, path, {"stage": 1, "aux": cfg.run.aux})
    _write(cfg.out / "stage1_loss.tsv", _losses_text(hist))
    return f"wrote {path} (final loss {hist[-1]:.6f})\n"


def cmd_refine(cfg: RunConfig) -> str:
    corpus = _corpus(cfg)
    base = load_checkpoint(_require(_path(cfg, cfg.run.checkpoint, "stage1.ckpt")))
    sch = refine.make_schedule(corpus.spec.T, cfg.train.N, cfg.train.s)
    refined = refine.refine_corpus(base, corpus.train, sch, cfg.train.tau,
                                   pipeline.refine_seed(cfg.train))
    path = cfg.out / "refined.jsonl"
    refine.save_refined(refined, path)
    q = refine.refined_label_quality(refined, corpus.train)
    return (f"wrote {path}\n"
            + " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in q.items()) + "\n")


def cmd_retrain(cfg: RunConfig) -> str:
    corpus = _corpus(cfg)
    refined = refine.load_refined(_require(_path(cfg, cfg.run.refined, "refined.jsonl")))
    hist: list[float] = []
    params = pipeline.train_stage3(corpus.train, refined, cfg.model, cfg.train, hist)
    path = cfg.out / "stage3.ckpt"
    save_checkpoint(params, path, {"stage": 3})
    _write(cfg.out / "stage3_loss.tsv", _losses_text(hist))
    return f"wrote {path} (final loss {hist[-1]:.6f})\n"


def cmd_eval(cfg: RunConfig) -> str:
    corpus = _corpus(cfg)
    params = load_checkpoint(_require(_path(cfg, cfg.run.checkpoint, "stage3.ckpt")))
    videos = corpus.split(cfg.run.eval_split)
    rows = {"model": pipeline.evaluate(params, videos)}
    rows["AVE-repeat"], rows["GT-repeat"] = naive_baselines(videos, params)
    report = pipeline.PipelineReport(metrics=rows, info={"eval_split": cfg.run.eval_split})
    _write(cfg.out / "eval.jsonl", report.to_jsonl())
    table = format_table(rows, title=f"segment metrics on {cfg.run.eval_split}")
    _write(cfg.out / "eval.txt", table)
    return table


def cmd_ablate(cfg: RunConfig) -> str:
    corpus = _corpus(cfg)
    report = pipeline.run_ablation(corpus, cfg.model, cfg.train, eval_split=cfg.run.eval_split)
    _write(cfg.out / "ablation.jsonl", report.to_jsonl())
    extra = {k: {"LR win. non-AVE P": f"{100 * q['nonave_precision']:.1f}"}
             for k, q in report.refined_quality.items()}
    table = format_table(report.metrics, extra, title="ablation")
    _write(cfg.out / "ablation.txt", table)
    return table


def cmd_sweep(cfg: RunConfig) -> str:
    corpus = _corpus(cfg)
    if cfg.run.sweep == "tau":
        taus = [float(t) for t in cfg.run.taus.split(",")]
        result = sweep_tau(corpus, cfg.model, cfg.train, taus, cfg.run.eval_split)
    elif cfg.run.sweep == "window":
        cells = [parse_window(w) for w in cfg.run.windows.split()]
        result = sweep_window(corpus, cfg.model, cfg.train, cells, cfg.run.eval_split)
    else:
        raise UsageError(f"unknown sweep {cfg.run.sweep!r} (expected tau or window)")
    name = f"sweep_{cfg.run.sweep}"
    _write(cfg.out / f"{name}.jsonl", result.to_jsonl())
    table = result.table()
    _write(cfg.out / f"{name}.txt", table)
    return table


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "refine": cmd_refine, "retrain": cmd_retrain,
            "eval": cmd_eval, "ablate": cmd_ablate, "sweep": cmd_sweep}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="avel-refine", description="Weakly supervised AVEL with temporal label refinement.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("sweep_kind", nargs="?", choices=("tau", "window"),
                   help="for 'sweep': which grid to run (overrides [run] sweep)")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
    p.add_argument("--tau", type=float, help="detection threshold")
    p.add_argument("--window", help="refinement window as N,s")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("AVEL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # --help or a usage error
        return int(e.code or 0)
    try:
        cfg = load_config(args)
        if args.command == "sweep" and args.sweep_kind:
            cfg.run = dataclasses.replace(cfg.run, sweep=args.sweep_kind)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg.out.mkdir(parents=True, exist_ok=True)
        _write(cfg.out / "resolved_config.ini", cfg.to_ini())
        with threadpool_limits(limits=args.threads):
            text = HANDLERS[args.command](cfg)
    except UsageError as e:
        print(f"avel-refine: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"avel-refine: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, FileNotFoundError, DomainError, NoPartnerError, KeyError) as e:
        print(f"avel-refine: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
