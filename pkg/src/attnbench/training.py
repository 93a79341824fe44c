"""Optimisation, learning-rate schedules, the epoch loop and instability detection."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import PAD, CopyDataset, Vocabulary, batches
from .errors import ConfigError, ContractError
from .evaluation import evaluate, perplexity
from .models import parameter_count
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "train_ppl", "epoch_sec", "test_loss", "test_ppl",
                  "avg_bleu", "instability"]
SUMMARY_HEADER = ["model", "bleu", "sec_per_epoch", "epochs_to_converge", "n_params"]


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "OptimizerState":
        state = cls(**hyper)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None],
              state: OptimizerState, lr: float | None = None) -> OptimizerState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(state.m) != len(params):
        raise ContractError(f"optimizer tracks {len(state.m)} tensors, got {len(params)}")
    if any(g is None for g in grads):
        raise ContractError("adam_step: a parameter has no gradient (run backward first)")
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        dt = p.data.dtype.type
        state.m[i] = dt(state.beta1) * state.m[i] + dt(1.0 - state.beta1) * g
        state.v[i] = dt(state.beta2) * state.v[i] + dt(1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / dt(c1)
        v_hat = state.v[i] / dt(c2)
        p.data = p.data - dt(lr) * (m_hat / (np.sqrt(v_hat) + dt(state.eps)))
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState.for_params(self.params, lr=lr, beta1=betas[0],
                                               beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, lr)


def noam_lr(step: int, d_model: int, warmup: int) -> float:
    """``d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)``: linear warm-up, inverse-sqrt decay."""
    if step < 1:
        raise ContractError("noam_lr: step counts from 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def gradient_clip(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Rescale so the joint L2 norm is at most ``max_norm``; direction is kept."""
    if max_norm <= 0:
        raise ContractError("gradient_clip: max_norm must be positive")
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if norm <= max_norm:
        return list(grads)
    factor = max_norm / norm
    return [g * g.dtype.type(factor) for g in grads]


def detect_instability(loss_history: Sequence[float], factor: float = 3.0,
                       window: int = 5) -> bool:
    """Flag the latest epoch: non-finite loss, or above ``factor`` times the
    median of up to ``window`` preceding epochs."""
    if not loss_history:
        return False
    last = loss_history[-1]
    if not math.isfinite(last):
        return True
    prev = [x for x in loss_history[-window - 1:-1] if math.isfinite(x)]
    if not prev:
        return False
    return last > factor * float(np.median(prev))


# ---------------------------------------------------------------------------
# records


def _fmt(x: float) -> str:
    return f"{x:.6g}"


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    train_ppl: float
    epoch_sec: float
    test_loss: float
    test_ppl: float
    avg_bleu: float
    instability_flag: bool

    def csv_fields(self) -> list[str]:
        return [str(self.epoch), _fmt(self.train_loss), _fmt(self.train_ppl),
                _fmt(self.epoch_sec), _fmt(self.test_loss), _fmt(self.test_ppl),
                _fmt(self.avg_bleu), str(int(self.instability_flag))]

    @classmethod
    def from_csv(cls, row: dict) -> "MetricsRecord":
        return cls(int(row["epoch"]), float(row["train_loss"]), float(row["train_ppl"]),
                   float(row["epoch_sec"]), float(row["test_loss"]), float(row["test_ppl"]),
                   float(row["avg_bleu"]), bool(int(row["instability"])))


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise ConfigError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return [MetricsRecord.from_csv(r) for r in reader]


def epochs_to_converge(bleus: Sequence[float], tolerance: float = 0.01) -> int:
    """First (1-based) epoch whose BLEU is within ``tolerance`` (relative) of the best."""
    if not bleus:
        return 0
    best = max(bleus)
    return next(i + 1 for i, b in enumerate(bleus) if b >= best * (1.0 - tolerance))


@dataclass(frozen=True)
class RunSummary:
    model: str
    best_bleu: float
    epochs_to_converge: int
    seconds_per_epoch: float
    parameter_count: int
    instability_epoch: int | None = None
    status: str = "ok"

    def csv_fields(self) -> list[str]:
        if self.status == "failed":
            return [self.model, "failed", "failed", "failed", "failed"]
        return [self.model, _fmt(self.best_bleu), _fmt(self.seconds_per_epoch),
                str(self.epochs_to_converge), str(self.parameter_count)]


def summarize(name: str, records: Sequence[MetricsRecord], n_params: int) -> RunSummary:
    if not records:
        return RunSummary(name, 0.0, 0, 0.0, n_params)
    bleus = [r.avg_bleu for r in records]
    flagged = [r.epoch for r in records if r.instability_flag]
    return RunSummary(name, max(bleus), epochs_to_converge(bleus),
                      float(np.median([r.epoch_sec for r in records])), n_params,
                      flagged[0] if flagged else None, "unstable" if flagged else "ok")


def write_summary(path: str | Path, summaries: Sequence[RunSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summaries:
            w.writerow(s.csv_fields())


# ---------------------------------------------------------------------------
# the epoch loop


@dataclass
class TrainOptions:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    schedule: str = "constant"          # or "noam"
    warmup: int = 400
    clip_norm: float | None = None
    patience: int | None = None
    on_nonfinite: str = "halt"          # or "continue"
    seed: int = 0
    eval_batch_size: int = 100

    def validate(self) -> "TrainOptions":
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.schedule not in ("constant", "noam"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.on_nonfinite not in ("halt", "continue"):
            raise ConfigError(f"unknown non-finite policy {self.on_nonfinite!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.warmup < 1:
            raise ConfigError("warmup must be >= 1")
        return self


def default_options(family: str, scale: str = "desk", **overrides) -> TrainOptions:
    """Adam everywhere; the transformer alone follows the warm-up schedule."""
    opts = dict(
        epochs=(700 if scale == "paper" else 200) if family == "lstm_plain" else 50,
        batch_size=128 if scale == "paper" else 32,
        schedule="noam" if family == "transformer" else "constant",
        warmup=4000 if scale == "paper" else 400,
    )
    opts.update(overrides)
    return TrainOptions(**opts).validate()


@dataclass
class TrainResult:
    records: list[MetricsRecord]
    summary: RunSummary


def train_epochs(model, dataset: CopyDataset, vocab: Vocabulary, opts: TrainOptions,
                 out_dir: str | Path | None = None) -> Iterator[MetricsRecord]:
    """Run the training loop, yielding one record per completed epoch.

    With ``out_dir`` the metrics CSV is appended to as epochs finish and the
    best-BLEU model is kept as ``best.ckpt``.
    """
    opts.validate()
    if len(vocab) != model.config.vocab_size:
        raise ConfigError(f"model vocabulary {model.config.vocab_size} != dataset vocabulary "
                          f"{len(vocab)}")
    train_ex = dataset.encoded(vocab, "train")
    test_ex = dataset.encoded(vocab, "test")
    shuffle_seq, dropout_seq = np.random.SeedSequence(opts.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    params = model.parameters()
    optim = Adam(params, lr=opts.lr)
    d_model = model.config.hidden_dim

    metrics_fh = writer = None
    ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(metrics_fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        metrics_fh.flush()
        ckpt_path = out_dir / "best.ckpt"

    history: list[float] = []
    best_bleu, since_best, step = -1.0, 0, 0
    try:
        for epoch in range(1, opts.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            total, count, nonfinite = 0.0, 0, False
            for src, tgt in batches(train_ex, opts.batch_size, shuffle_rng):
                optim.zero_grad()
                with Tape():
                    loss = T.cross_entropy(model.forward(src, tgt, dropout_rng), tgt.ids,
                                           ignore_id=PAD)
                    value = float(loss.data)
                    if not math.isfinite(value):
                        nonfinite = True
                        if opts.on_nonfinite == "halt":
                            break
                        continue
                    T.backward(loss)
                grads = [p.grad for p in params]
                if opts.clip_norm is not None:
                    grads = gradient_clip(grads, opts.clip_norm)
                step += 1
                lr = noam_lr(step, d_model, opts.warmup) if opts.schedule == "noam" else opts.lr
                adam_step(params, grads, optim.state, lr)
                n = int(tgt.lengths.sum())
                total += value * n
                count += n
            if nonfinite and (opts.on_nonfinite == "halt" or count == 0):
                train_loss = math.nan
            else:
                train_loss = total / count if count else math.nan
            epoch_sec = time.perf_counter() - t0

            report = evaluate(model, test_ex, batch_size=opts.eval_batch_size)
            history.append(train_loss)
            flag = nonfinite or detect_instability(history)
            rec = MetricsRecord(epoch, train_loss, perplexity(train_loss), epoch_sec,
                                report.test_loss, report.perplexity, report.avg_bleu, flag)
            if writer is not None:
                writer.writerow(rec.csv_fields())
                metrics_fh.flush()
            log.info("epoch %d loss %.4f bleu %.4f (%.1fs)%s", epoch, train_loss,
                     report.avg_bleu, epoch_sec, " UNSTABLE" if flag else "")
            yield rec

            if rec.avg_bleu > best_bleu:
                best_bleu, since_best = rec.avg_bleu, 0
                if ckpt_path is not None:
                    save_checkpoint(ckpt_path, model, {"epoch": epoch, "avg_bleu": rec.avg_bleu,
                                                       "test_loss": rec.test_loss})
            else:
                since_best += 1
            if nonfinite and opts.on_nonfinite == "halt":
                log.warning("non-finite training loss at epoch %d; halting", epoch)
                break
            if opts.patience is not None and since_best >= opts.patience:
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()


def train(model, dataset: CopyDataset, vocab: Vocabulary, opts: TrainOptions,
          out_dir: str | Path | None = None,
          on_epoch: Callable[[MetricsRecord], None] | None = None) -> TrainResult:
    records = []
    for rec in train_epochs(model, dataset, vocab, opts, out_dir):
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    summary = summarize(model.config.family, records, parameter_count(model))
    return TrainResult(records, summary)
