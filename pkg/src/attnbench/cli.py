"""Command-line entry point: gen-data, train, eval, compare, plot.

Settings resolve as preset < ``--config`` file < command-line flags. A config
file is flat ``key = value`` text whose keys are the long flag names (dashes
or underscores). The default output root is ``$ATTNBENCH_OUTPUT_ROOT`` or
``./runs``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .data import CopyDataset, Vocabulary, sample_corpus, synth_copy
from .errors import AttnBenchError, CheckpointFormatError, ConfigError
from .evaluation import EvalReport, evaluate
from .models import FAMILIES, SCALES, build, parameter_count, preset
from .models.config import ModelConfig
from .plotting import plot_overlay
from .training import RunSummary, default_options, train, write_summary

log = logging.getLogger("attnbench")

OUTPUT_ROOT_ENV = "ATTNBENCH_OUTPUT_ROOT"
MODEL_KEYS = ("embed_dim", "hidden_dim", "n_layers", "n_heads", "ffn_dim", "kernel_size",
              "max_positions", "dropout_p", "max_decode_len")
HARNESS_KEYS = ("epochs", "lr", "batch_size", "schedule", "warmup", "clip_norm", "patience",
                "on_nonfinite", "eval_batch_size")
DTYPES = {"float64": np.float64, "float32": np.float32}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# ---------------------------------------------------------------------------
# configuration


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _length_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return lo, hi


def read_config_file(path: Path, parser: argparse.ArgumentParser) -> dict:
    """Parse ``key = value`` lines, typed by the matching flag; unknown keys are errors."""
    actions = {a.dest: a for a in parser._actions
               if a.option_strings and a.dest not in ("config", "help", "verbose", "quiet")}
    out = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.lstrip("-").replace("-", "_")
        if dest not in actions:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        action = actions[dest]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                out[dest] = _bool(value)
            elif action.type is not None:
                out[dest] = action.type(value)
            else:
                out[dest] = value
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{path}:{n}: bad value for {key}: {exc}") from None
        if action.choices is not None and out[dest] not in action.choices:
            raise ConfigError(f"{path}:{n}: {key} must be one of {list(action.choices)}")
    return out


def resolve(ns: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    settings = {}
    config = getattr(ns, "config", None)
    if config is not None:
        settings.update(read_config_file(Path(config), parser))
    settings.update({k: v for k, v in vars(ns).items() if k not in ("config", "func")})
    return settings


def _require(settings: dict, *keys: str) -> None:
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise ConfigError("missing required setting(s): "
                          + ", ".join("--" + k.replace("_", "-") for k in missing))


def model_config(family: str, scale: str, vocab_size: int, settings: dict) -> ModelConfig:
    overrides = {k: settings[k] for k in MODEL_KEYS if settings.get(k) is not None}
    return preset(family, scale, vocab_size).with_overrides(**overrides).validate()


def train_options(family: str, scale: str, settings: dict):
    overrides = {k: settings[k] for k in HARNESS_KEYS if settings.get(k) is not None}
    return default_options(family, scale, seed=settings["seed"], **overrides)


def write_snapshot(path: Path, settings: dict) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for key in sorted(settings):
            value = settings[key]
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ":".join(str(v) for v in value)
            fh.write(f"{key.replace('_', '-')} = {value}\n")


def load_dataset(path) -> tuple[CopyDataset, Vocabulary]:
    path = Path(path)
    if not (path / "train.txt").is_file():
        raise ConfigError(f"no dataset at {path} (run gen-data first)")
    return CopyDataset.load(path)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(settings: dict) -> int:
    _require(settings, "seed")
    rng = np.random.default_rng(settings["seed"])
    out = Path(settings.get("out") or output_root() / "data")
    if settings.get("synthetic"):
        if settings.get("corpus"):
            raise ConfigError("--synthetic and --corpus are mutually exclusive")
        _require(settings, "n", "vocab", "len")
        ds = synth_copy(settings["n"], settings["len"], settings["vocab"], rng,
                        n_test=settings.get("n_test"))
    elif settings.get("corpus"):
        _require(settings, "train", "test", "max_words")
        ds = sample_corpus(settings["corpus"], settings["train"], settings["test"],
                           settings["max_words"], rng)
    else:
        raise ConfigError("give either --synthetic or --corpus FILE")
    out.mkdir(parents=True, exist_ok=True)
    vocab = ds.save(out)
    write_snapshot(out / "config.txt", {**settings, "out": str(out)})
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test sequences, "
          f"vocabulary {len(vocab)} -> {out}")
    return 0


def _train_one(family: str, settings: dict, ds: CopyDataset, vocab: Vocabulary,
               run_dir: Path) -> RunSummary:
    scale = settings["scale"]
    cfg = model_config(family, scale, len(vocab), settings)
    opts = train_options(family, scale, settings)
    dtype = DTYPES[settings.get("dtype") or "float64"]
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {**settings, "model": family, "out": str(run_dir), "dtype": np.dtype(dtype).name,
                **{k: getattr(cfg, k) for k in MODEL_KEYS},
                **{k: getattr(opts, k) for k in HARNESS_KEYS}}
    snapshot.pop("models", None)
    write_snapshot(run_dir / "config.txt", snapshot)
    model = build(cfg, np.random.default_rng(settings["seed"]), dtype=dtype)
    log.info("%s: %d parameters, %d epochs", family, parameter_count(model), opts.epochs)
    result = train(model, ds, vocab, opts, out_dir=run_dir)
    write_summary(run_dir / "summary.csv", [result.summary])
    return result.summary


def cmd_train(settings: dict) -> int:
    _require(settings, "model", "seed")
    settings["scale"] = settings.get("scale") or "desk"
    settings["data"] = str(settings.get("data") or output_root() / "data")
    ds, vocab = load_dataset(settings["data"])
    run_dir = Path(settings.get("out") or output_root()
                   / f"{settings['model']}_{settings['scale']}_seed{settings['seed']}")
    summary = _train_one(settings["model"], settings, ds, vocab, run_dir)
    print(f"{summary.model}: best avg_bleu {summary.best_bleu:.4f}, converged at epoch "
          f"{summary.epochs_to_converge}, {summary.seconds_per_epoch:.2f} s/epoch -> {run_dir}")
    return 0


def cmd_eval(settings: dict) -> int:
    _require(settings, "checkpoint")
    model, meta = load_checkpoint(settings["checkpoint"])
    ds, vocab = load_dataset(settings.get("data") or output_root() / "data")
    if len(vocab) != model.config.vocab_size:
        raise CheckpointFormatError(f"checkpoint vocabulary {model.config.vocab_size} does not "
                                    f"match dataset vocabulary {len(vocab)}")
    report = evaluate(model, ds, vocab, batch_size=settings.get("eval_batch_size") or 100)
    print(f"avg_bleu {report.avg_bleu!r}")
    print(f"test_loss {report.test_loss!r}")
    print(f"test_ppl {report.perplexity!r}")
    if "avg_bleu" in meta:
        print(f"logged avg_bleu {meta['avg_bleu']!r} (epoch {meta.get('epoch')})")
    out = Path(settings.get("out") or Path(settings["checkpoint"]).with_name("eval.csv"))
    out.write_text(EvalReport.CSV_HEADER + "\n" + report.csv_row() + "\n")
    return 0


def cmd_compare(settings: dict) -> int:
    _require(settings, "seed")
    settings["scale"] = settings.get("scale") or "desk"
    families = settings.get("models") or list(FAMILIES)
    settings["data"] = str(settings.get("data") or output_root() / "data")
    ds, vocab = load_dataset(settings["data"])
    out = Path(settings.get("out") or output_root()
               / f"compare_{settings['scale']}_seed{settings['seed']}")
    out.mkdir(parents=True, exist_ok=True)
    summaries, status = [], []
    for family in families:
        try:
            s = _train_one(family, settings, ds, vocab, out / family)
        except Exception as exc:  # one family failing must not sink the comparison
            log.error("%s failed: %s", family, exc)
            log.debug("%s", traceback.format_exc())
            s = RunSummary(family, 0.0, 0, 0.0, 0, status="failed")
            status.append((family, "failed", "", str(exc)))
        else:
            status.append((family, s.status, s.instability_epoch or "", ""))
        summaries.append(s)
    write_summary(out / "summary.csv", summaries)
    with (out / "compare_status.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "status", "instability_epoch", "error"])
        w.writerows(status)
    done = {s.model: out / s.model / "metrics.csv" for s in summaries if s.status != "failed"}
    if done:
        plot_overlay(done, out / "overlay.svg")
    for s in summaries:
        print(",".join(s.csv_fields()))
    failed = [s.model for s in summaries if s.status == "failed"]
    if failed:
        print(f"failed: {', '.join(failed)} (see {out / 'compare_status.csv'})", file=sys.stderr)
        return 3
    return 0


def cmd_plot(settings: dict) -> int:
    runs = {}
    for item in settings.get("runs") or []:
        label, sep, path = item.partition("=")
        path = Path(path if sep else label)
        if path.is_dir():
            path = path / "metrics.csv"
        if not path.is_file():
            raise ConfigError(f"no metrics file at {path}")
        runs[label if sep else path.parent.name] = path
    out = Path(settings.get("out") or output_root() / "overlay.svg")
    plot_overlay(runs, out)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model overrides")
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--hidden-dim", type=int)
    g.add_argument("--n-layers", type=int)
    g.add_argument("--n-heads", type=int)
    g.add_argument("--ffn-dim", type=int)
    g.add_argument("--kernel-size", type=int)
    g.add_argument("--max-positions", type=int)
    g.add_argument("--dropout-p", type=float)
    g.add_argument("--max-decode-len", type=int)
    h = p.add_argument_group("training")
    h.add_argument("--epochs", type=int)
    h.add_argument("--lr", type=float)
    h.add_argument("--batch-size", type=int)
    h.add_argument("--schedule", choices=("constant", "noam"))
    h.add_argument("--warmup", type=int)
    h.add_argument("--clip-norm", type=float)
    h.add_argument("--patience", type=int)
    h.add_argument("--on-nonfinite", choices=("halt", "continue"))
    h.add_argument("--eval-batch-size", type=int)
    h.add_argument("--dtype", choices=tuple(DTYPES))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnbench", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, parents=[common])
        p.add_argument("--config", help="key = value file; flags given here take precedence")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "write a copy-task dataset and its vocabulary")
    p.add_argument("--synthetic", action="store_true", default=None, help="random token sequences")
    p.add_argument("--n", type=int, help="synthetic training sequences")
    p.add_argument("--n-test", type=int, help="synthetic test sequences (default n/10)")
    p.add_argument("--vocab", type=int, help="synthetic vocabulary size, reserved ids included")
    p.add_argument("--len", type=_length_range, help="synthetic length range LO:HI")
    p.add_argument("--corpus", help="text file, one sentence per line")
    p.add_argument("--train", type=int, help="corpus sentences for training")
    p.add_argument("--test", type=int, help="corpus sentences for testing")
    p.add_argument("--max-words", type=int, help="longest corpus sentence kept")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="dataset directory (default <root>/data)")

    p = command("train", cmd_train, "train one model family")
    p.add_argument("--model", choices=FAMILIES)
    p.add_argument("--scale", choices=SCALES)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset directory (default <root>/data)")
    p.add_argument("--out", help="run directory (default <root>/<model>_<scale>_seed<seed>)")
    _add_model_flags(p)

    p = command("eval", cmd_eval, "evaluate a checkpoint on a dataset's test split")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset directory (default <root>/data)")
    p.add_argument("--eval-batch-size", type=int)
    p.add_argument("--out", help="report CSV (default eval.csv next to the checkpoint)")

    p = command("compare", cmd_compare, "train every family and write the summary table and plots")
    p.add_argument("--models", nargs="+", choices=FAMILIES, help="subset of families")
    p.add_argument("--scale", choices=SCALES)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset directory (default <root>/data)")
    p.add_argument("--out", help="output directory")
    _add_model_flags(p)

    p = command("plot", cmd_plot, "overlay plots from metrics CSV files")
    p.add_argument("runs", nargs="*", metavar="[LABEL=]PATH",
                   help="metrics CSV or run directory")
    p.add_argument("--out", help="SVG path (default <root>/overlay.svg)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    level = logging.WARNING if ns.quiet else (logging.DEBUG if ns.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    args = {k: v for k, v in vars(ns).items() if k not in ("verbose", "quiet", "command")}
    try:
        settings = resolve(argparse.Namespace(**{k: v for k, v in args.items() if v is not None
                                                 or k == "config"}), sub)
        return ns.func(settings)
    except (AttnBenchError, OSError) as exc:
        print(f"attnbench {ns.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
