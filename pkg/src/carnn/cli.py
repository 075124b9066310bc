"""Command-line front end: prepare | train | eval | predict | gradcheck | sweep.

Configuration comes from a plain-text key=value file (--config) with
command-line flags overriding individual keys; every command echoes the
effective configuration into the output directory so a run can be
reproduced by re-feeding that file. All randomness derives from one root
seed, so repeated runs produce byte-identical model files and reports.
"""

from __future__ import annotations

import dataclasses
import functools
import os
import sys
from dataclasses import dataclass

import click
import numpy as np

from . import store
from .context import ContextScheme, annotate_sequences, input_context, parse_holiday_file, transition_bin
from .data import FORMATS, InteractionLog, build_sequences, parse_interactions, split_sequences
from .errors import CarnnError, ConfigError, DataError, InputOutputError, NumericalError
from .evaluate import (evaluate, format_report_table, pop_baseline,
                       report_to_json)
from .model import (ModelConfig, ModelParams, check_vocab_compatibility, hidden_step,
                    init_params, load_params, save_params, score_all, zero_state)
from .seeding import named_rng
from .training import (TrainConfig, gradient_check, train, write_loss_trace)

VARIANTS = {
    "carnn": (True, True),
    "input": (True, False),
    "transition": (False, True),
    "rnn": (False, False),
}
ALL_VARIANTS = tuple(VARIANTS) + ("pop",)


@dataclass
class RunConfig:
    """Aggregated settings for one experiment run (key=value file keys match
    the field names, except ``lambda`` which maps to ``l2``)."""

    dataset: str | None = None
    format: str = "csv"
    factors: tuple[str, ...] = ("day_of_week", "hour_of_day")
    holidays: str | None = None
    max_interval_days: int = 30
    tz_offset: int = 0
    min_user: int = 10
    min_item: int = 3
    split_ratio: float = 0.8
    d: int = 10
    variant: str = "carnn"
    epochs: int = 10
    lr: float = 0.01
    l2: float = 0.01
    negatives: int = 1
    bptt_window: int | None = None
    init_scale: float = 0.1
    shuffle: bool = True
    seed: int = 0
    ks: tuple[int, ...] = (1, 5, 10)
    out: str = "out"
    cache: str | None = None
    model: str | None = None

    def cache_path(self) -> str:
        return self.cache or os.path.join(self.out, "cache.bin")

    def model_path(self) -> str:
        return self.model or os.path.join(self.out, "model.carn")


_KEY_TO_FIELD = {f.name: f.name for f in dataclasses.fields(RunConfig)}
_KEY_TO_FIELD["lambda"] = "l2"
del _KEY_TO_FIELD["l2"]
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def _parse_value(field: str, raw: str):
    raw = raw.strip()
    if field in ("dataset", "holidays", "cache", "model"):
        return None if raw.lower() == "none" or raw == "" else raw
    if field == "bptt_window":
        return None if raw.lower() in ("none", "unlimited") else int(raw)
    if field == "factors":
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if field == "ks":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if field == "shuffle":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key 'shuffle' must be true/false, got {raw!r}")
    if field in ("max_interval_days", "tz_offset", "min_user", "min_item",
                 "d", "epochs", "negatives", "seed"):
        return int(raw)
    if field in ("split_ratio", "lr", "l2", "init_scale"):
        return float(raw)
    return raw


def _format_value(field: str, value) -> str:
    if value is None:
        return "none"
    if field in ("factors",):
        return ",".join(value)
    if field == "ks":
        return ",".join(str(k) for k in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_run_config(config_path: str | None = None, **overrides) -> RunConfig:
    cfg = RunConfig()
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise InputOutputError(f"cannot read config {config_path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{config_path}:{lineno}: expected key=value, got {text!r}")
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in _KEY_TO_FIELD:
                raise ConfigError(f"{config_path}:{lineno}: unknown config key {key!r}")
            field = _KEY_TO_FIELD[key]
            try:
                setattr(cfg, field, _parse_value(field, raw))
            except ValueError as exc:
                raise ConfigError(f"{config_path}:{lineno}: bad value for {key}: {raw!r}") from exc
    for field, value in overrides.items():
        if value is not None:
            setattr(cfg, field, value)
    _validate_run_config(cfg)
    return cfg


def _validate_run_config(cfg: RunConfig) -> None:
    if cfg.format not in FORMATS:
        raise ConfigError(f"unknown format {cfg.format!r}; expected one of {FORMATS}")
    if cfg.variant not in ALL_VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}; expected one of {ALL_VARIANTS}")
    if not cfg.ks or list(cfg.ks) != sorted(cfg.ks):
        raise ConfigError(f"ks must be a non-empty sorted list, got {cfg.ks}")


def config_text(cfg: RunConfig) -> str:
    lines = ["# effective configuration; re-feed with --config to reproduce the run"]
    for f in dataclasses.fields(RunConfig):
        key = _FIELD_TO_KEY[f.name]
        lines.append(f"{key}={_format_value(f.name, getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def _echo_config(cfg: RunConfig, command: str) -> None:
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, f"{command}.effective.cfg"), "w", encoding="utf-8") as fh:
        fh.write(config_text(cfg))


def _scheme_from(cfg: RunConfig) -> ContextScheme:
    holiday_dates = parse_holiday_file(cfg.holidays) if cfg.holidays else frozenset()
    return ContextScheme(
        factors=cfg.factors,
        holiday_dates=holiday_dates,
        max_interval_days=cfg.max_interval_days,
        timezone_offset_seconds=cfg.tz_offset,
    )


def _model_config(cfg: RunConfig, scheme: ContextScheme, n_items: int,
                  variant: str | None = None, d: int | None = None) -> ModelConfig:
    variant = variant or cfg.variant
    if variant == "pop":
        raise ConfigError("the pop baseline has no trainable model")
    use_in, use_tr = VARIANTS[variant]
    return ModelConfig(
        d=d or cfg.d,
        n_items=n_items,
        n_input_contexts=scheme.n_input_contexts,
        n_transition_bins=scheme.n_transition_bins,
        use_input_contexts=use_in,
        use_transition_contexts=use_tr,
        seed=cfg.seed,
        init_scale=cfg.init_scale,
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.lr,
        l2=cfg.l2,
        epochs=cfg.epochs,
        negatives_per_positive=cfg.negatives,
        bptt_window=cfg.bptt_window,
        seed=cfg.seed,
        shuffle=cfg.shuffle,
    )


def variant_of(p: ModelParams) -> str:
    flags = (p.config.use_input_contexts, p.config.use_transition_contexts)
    for name, pair in VARIANTS.items():
        if pair == flags:
            return name
    return "carnn"


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CarnnError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            sys.exit(InputOutputError.exit_code)
    return wrapper


def _common_options(fn):
    fn = click.option("--out", default=None, help="Output directory.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Root random seed.")(fn)
    fn = click.option("--config", "config_path", default=None,
                      help="key=value configuration file.")(fn)
    return fn


@click.group()
def cli():
    """Context-aware sequential recommender experiments."""


@cli.command()
@_common_options
@click.option("--dataset", default=None, help="Interaction log to parse.")
@click.option("--format", "fmt", type=click.Choice(FORMATS), default=None)
@handle_errors
def prepare(config_path, seed, out, dataset, fmt):
    """Parse, filter, annotate, and split a dataset into a binary cache."""
    cfg = load_run_config(config_path, seed=seed, out=out, dataset=dataset, format=fmt)
    if cfg.dataset is None:
        raise ConfigError("prepare needs a dataset (config key 'dataset' or --dataset)")
    os.makedirs(cfg.out, exist_ok=True)
    log = parse_interactions(cfg.dataset, cfg.format)
    users_before = len({it.user for it in log.interactions})
    items_before = len({it.item for it in log.interactions})
    seqs = build_sequences(log, cfg.min_user, cfg.min_item)
    seqs = annotate_sequences(seqs, _scheme_from(cfg))
    split = split_sequences(seqs, cfg.split_ratio)
    store.write_cache(cfg.cache_path(), split)

    kept = sum(len(s) for s in seqs.sequences)
    stats = "\n".join([
        f"dataset={cfg.dataset}",
        f"format={cfg.format}",
        f"records_parsed={len(log)}",
        f"records_rejected={log.rejects}",
        f"users_before_filtering={users_before}",
        f"items_before_filtering={items_before}",
        f"interactions_before_filtering={len(log)}",
        f"users_after_filtering={seqs.n_users}",
        f"items_after_filtering={seqs.n_items}",
        f"interactions_after_filtering={kept}",
        f"input_context_values={seqs.scheme.n_input_contexts}",
        f"transition_bins={seqs.scheme.n_transition_bins}",
        f"test_positions={split.n_test_positions}",
    ]) + "\n"
    with open(os.path.join(cfg.out, "prepare_stats.txt"), "w", encoding="utf-8") as fh:
        fh.write(stats)
    _echo_config(cfg, "prepare")
    click.echo(stats.rstrip())
    click.echo(f"cache written to {cfg.cache_path()}")


@cli.command("train")
@_common_options
@click.option("--variant", type=click.Choice(list(VARIANTS)), default=None)
@click.option("--d", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--lambda", "l2", type=float, default=None)
@click.option("--cache", default=None, help="Prepared cache path.")
@click.option("--model", default=None, help="Where to write the model file.")
@handle_errors
def train_cmd(config_path, seed, out, variant, d, epochs, lr, l2, cache, model):
    """Train the configured variant on a prepared cache."""
    cfg = load_run_config(config_path, seed=seed, out=out, variant=variant, d=d,
                          epochs=epochs, lr=lr, l2=l2, cache=cache, model=model)
    cfg.cache = cfg.cache_path()  # pin the input so the echoed config is portable
    split = store.read_cache(cfg.cache_path())
    scheme = split.sequences.scheme
    params = init_params(_model_config(cfg, scheme, split.sequences.n_items))
    params, trace = train(split, params, _train_config(cfg))
    os.makedirs(cfg.out, exist_ok=True)
    save_params(params, cfg.model_path())
    write_loss_trace(trace, os.path.join(cfg.out, "loss.csv"))
    _echo_config(cfg, "train")
    first, last = trace[0], trace[-1]
    click.echo(
        f"trained variant={cfg.variant} d={cfg.d} epochs={cfg.epochs}: "
        f"mean pair loss {first.mean_pair_loss:.6f} (epoch 1) -> "
        f"{last.mean_pair_loss:.6f} (epoch {last.epoch})"
    )
    click.echo(f"model written to {cfg.model_path()}")


@cli.command("eval")
@_common_options
@click.option("--variant", type=click.Choice(ALL_VARIANTS), default=None)
@click.option("--cache", default=None)
@click.option("--model", default=None, help="Model file (ignored for --variant pop).")
@handle_errors
def eval_cmd(config_path, seed, out, variant, cache, model):
    """Rank every held-out position and report Recall@k, F1@k, MAP, NDCG."""
    cfg = load_run_config(config_path, seed=seed, out=out, variant=variant,
                          cache=cache, model=model)
    cfg.cache = cfg.cache_path()  # pin inputs so the echoed config is portable
    if cfg.variant != "pop":
        cfg.model = cfg.model_path()
    split = store.read_cache(cfg.cache_path())
    if cfg.variant == "pop":
        label = "pop"
        report = pop_baseline(split, cfg.ks)
    else:
        params = load_params(cfg.model_path(), seed=cfg.seed)
        check_vocab_compatibility(params, split.sequences.n_items)
        label = variant_of(params)
        report = evaluate(split, params, split.sequences.scheme, cfg.ks)
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))
    _echo_config(cfg, "eval")
    click.echo(format_report_table(report, label))
    click.echo(f"report written to {os.path.join(cfg.out, 'metrics.json')}")


@cli.command("predict")
@_common_options
@click.option("--user", required=True, help="User id as it appears in the dataset.")
@click.option("--timestamp", type=int, required=True,
              help="Prediction time (Unix seconds, >= the user's last training event).")
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--cache", default=None)
@click.option("--model", default=None)
@handle_errors
def predict_cmd(config_path, seed, out, user, timestamp, k, cache, model):
    """Score all items for one user at one timestamp and print the top k."""
    cfg = load_run_config(config_path, seed=seed, out=out, cache=cache, model=model)
    split = store.read_cache(cfg.cache_path())
    params = load_params(cfg.model_path(), seed=cfg.seed)
    check_vocab_compatibility(params, split.sequences.n_items)
    seqs = split.sequences
    uidx = seqs.user_vocab.get(user)
    if uidx is None:
        raise DataError(f"unknown user {user!r}")
    seq = seqs.sequences[uidx]
    n_tr = int(split.n_train[uidx])
    last_t = int(seq.timestamps[n_tr - 1])
    if timestamp < last_t:
        raise DataError(
            f"timestamp {timestamp} precedes the user's last training event ({last_t})"
        )
    h = zero_state(params.config)
    for j in range(n_tr):
        h = hidden_step(h, seq.items[j], seq.input_ctxs[j], seq.trans_bins[j], params)
    ctx = input_context(timestamp, seqs.scheme)
    bin_ = transition_bin(timestamp, last_t, seqs.scheme)
    scores = score_all(h, ctx, bin_, params)
    item_ids = seqs.item_ids()
    top = np.argsort(-scores, kind="stable")[: min(k, len(item_ids))]
    click.echo(f"user={user} timestamp={timestamp} input_context={ctx} transition_bin={bin_}")
    for rank, idx in enumerate(top, start=1):
        click.echo(f"{rank}\t{item_ids[int(idx)]}\t{scores[int(idx)]:.6f}")


def _gradcheck_fixture(seed: int):
    """Tiny model and sequence for gradient verification: d=3, 5 items,
    2 input contexts, 3 transition bins, one length-6 sequence."""
    from .data import UserSequence

    config = ModelConfig(d=3, n_items=5, n_input_contexts=2, n_transition_bins=3,
                         seed=seed)
    params = init_params(config)
    rng = named_rng(seed, "synthetic")
    length = 6
    items = rng.integers(0, config.n_items, size=length).astype(np.int64)
    ts = (np.arange(length, dtype=np.int64) * 86400)
    ctx = rng.integers(0, config.n_input_contexts, size=length).astype(np.int64)
    bins = rng.integers(0, config.n_transition_bins, size=length).astype(np.int64)
    bins[0] = config.n_transition_bins - 1  # reserved start slot
    seq = UserSequence("probe", items, ts, ctx, bins)
    return params, seq


@cli.command("gradcheck")
@click.option("--epsilon", type=float, default=1e-5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--corrupt", default=None, hidden=True,
              help="Corrupt one gradient bank (negative control).")
@handle_errors
def gradcheck_cmd(epsilon, seed, tolerance, corrupt):
    """Verify analytic gradients against central finite differences."""
    params, seq = _gradcheck_fixture(seed)
    tcfg = TrainConfig(seed=seed)
    perturb = None
    if corrupt is not None:
        def perturb(buf):
            bank = getattr(buf, f"d{corrupt}", None)
            if bank is None:
                raise ConfigError(f"no gradient bank named {corrupt!r}")
            bank.reshape(-1)[0] += 1.0
    report = gradient_check(params, seq, tcfg, epsilon=epsilon, perturb=perturb)
    click.echo(f"checked {report.n_coordinates} coordinates at epsilon={report.epsilon:g}")
    click.echo(
        f"max relative error {report.max_rel_error:.3e} "
        f"at {report.worst_bank}{list(report.worst_index)}"
    )
    click.echo(f"mean relative error {report.mean_rel_error:.3e}")
    if not report.passed(tolerance):
        raise NumericalError(
            f"gradient mismatch: max relative error {report.max_rel_error:.3e} "
            f"at {report.worst_bank}{list(report.worst_index)} exceeds {tolerance:g}"
        )
    click.echo("gradient check passed")


@cli.command("sweep")
@_common_options
@click.option("--d-values", "d_values", default="10",
              help="Comma-separated dimensionalities.", show_default=True)
@click.option("--variants", "variants_opt", default="rnn,input,transition,carnn",
              show_default=True)
@click.option("--cache", default=None)
@handle_errors
def sweep_cmd(config_path, seed, out, d_values, variants_opt, cache):
    """Train and evaluate every variant at every dimensionality; emit a CSV."""
    cfg = load_run_config(config_path, seed=seed, out=out, cache=cache)
    try:
        ds = [int(x) for x in d_values.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --d-values {d_values!r}") from exc
    variants = [v.strip() for v in variants_opt.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if not ds or unknown:
        raise ConfigError(f"bad sweep grid: d_values={ds}, unknown variants={unknown}")
    cfg.cache = cfg.cache_path()
    split = store.read_cache(cfg.cache_path())
    scheme = split.sequences.scheme
    os.makedirs(cfg.out, exist_ok=True)

    header = ["variant", "d", "status"]
    for k in cfg.ks:
        header.append(f"recall@{k}")
    for k in cfg.ks:
        header.append(f"f1@{k}")
    header += ["map", "ndcg"]
    rows = [",".join(header)]
    for variant in variants:
        for d in ds:
            try:
                params = init_params(_model_config(cfg, scheme, split.sequences.n_items,
                                                   variant=variant, d=d))
                params, _ = train(split, params, _train_config(cfg))
                report = evaluate(split, params, scheme, cfg.ks)
                cells = [variant, str(d), "ok"]
                cells += [repr(report.recall_at[k]) for k in cfg.ks]
                cells += [repr(report.f1_at[k]) for k in cfg.ks]
                cells += [repr(report.map_score), repr(report.ndcg)]
            except CarnnError as exc:
                cells = [variant, str(d), f"error:{type(exc).__name__}"]
                cells += [""] * (2 * len(cfg.ks) + 2)
                click.echo(f"sweep cell variant={variant} d={d} failed: {exc}", err=True)
            rows.append(",".join(cells))
            click.echo(f"swept variant={variant} d={d}")
    sweep_path = os.path.join(cfg.out, "sweep.csv")
    with open(sweep_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    _echo_config(cfg, "sweep")
    click.echo(f"sweep written to {sweep_path}")


def main():
    cli()


if __name__ == "__main__":
    main()
