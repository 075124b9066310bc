"""Ranking evaluation over held-out positions, the popularity baseline, and
a synthetic generator with a plantable context signal.

Each test position is one query with a single relevant item (the true next
item), which fixes the metric algebra: precision@k is hits/k, so
F1@k = 2*Recall@k/(k+1); MAP reduces to the mean reciprocal rank and NDCG
to the mean of 1/log2(rank+1). The candidate set is always the full item
vocabulary. During testing the hidden state advances on the ground-truth
item (teacher forcing).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .context import SECONDS_PER_DAY, ContextScheme, annotate_sequences
from .data import SequenceSet, SplitSet, UserSequence
from .errors import ConfigError, DataError
from .model import ModelParams, hidden_step, score_all, zero_state
from .seeding import named_rng

DEFAULT_KS = (1, 5, 10)


@dataclass(frozen=True)
class RankRecord:
    user: str
    position: int
    rank: int  # 1-based rank of the true item among all items


@dataclass
class MetricsReport:
    recall_at: dict[int, float]
    f1_at: dict[int, float]
    map_score: float
    ndcg: float
    n_positions: int


def rank_target(scores: np.ndarray, target: int) -> int:
    """1-based rank of ``target``; equal scores break toward the lower index."""
    scores = np.asarray(scores)
    if not (0 <= target < scores.shape[0]):
        raise ConfigError(f"target index {target} out of range [0, {scores.shape[0]})")
    s = scores[target]
    better = int(np.count_nonzero(scores > s))
    equal_before = int(np.count_nonzero(scores[:target] == s))
    return 1 + better + equal_before


def aggregate_ranks(records: list[RankRecord], ks=DEFAULT_KS) -> MetricsReport:
    """Fold rank records into the report; the reduction is order-independent."""
    if not records:
        raise DataError("no test positions to evaluate")
    ranks = np.array([r.rank for r in records], dtype=np.int64)
    n = len(ranks)
    recall = {k: float(np.count_nonzero(ranks <= k) / n) for k in ks}
    f1 = {k: 2.0 * recall[k] / (k + 1) for k in ks}
    map_score = float(np.mean(1.0 / ranks))
    ndcg = float(np.mean(1.0 / np.log2(ranks + 1.0)))
    return MetricsReport(recall, f1, map_score, ndcg, n)


def _iter_test_ranks(split: SplitSet, score_fn) -> list[RankRecord]:
    """Walk every held-out position; ``score_fn(seq, j, h)`` returns the score
    vector for position j given the running hidden state (or None for
    state-free scorers)."""
    records = []
    for si, seq in enumerate(split.sequences.sequences):
        n_tr = int(split.n_train[si])
        if n_tr >= len(seq):
            continue
        h = score_fn.start_state(seq, n_tr)
        for j in range(n_tr, len(seq)):
            scores = score_fn.scores(seq, j, h)
            records.append(RankRecord(seq.user, j, rank_target(scores, int(seq.items[j]))))
            h = score_fn.advance(seq, j, h)
    return records


class _ModelScorer:
    def __init__(self, p: ModelParams):
        self.p = p

    def start_state(self, seq: UserSequence, n_tr: int) -> np.ndarray:
        h = zero_state(self.p.config)
        for j in range(n_tr):
            h = hidden_step(h, seq.items[j], seq.input_ctxs[j], seq.trans_bins[j], self.p)
        return h

    def scores(self, seq: UserSequence, j: int, h: np.ndarray) -> np.ndarray:
        return score_all(h, int(seq.input_ctxs[j]), int(seq.trans_bins[j]), self.p)

    def advance(self, seq: UserSequence, j: int, h: np.ndarray) -> np.ndarray:
        return hidden_step(h, seq.items[j], seq.input_ctxs[j], seq.trans_bins[j], self.p)


class _ConstantScorer:
    def __init__(self, scores: np.ndarray):
        self._scores = scores

    def start_state(self, seq, n_tr):
        return None

    def scores(self, seq, j, h):
        return self._scores

    def advance(self, seq, j, h):
        return None


def evaluate(split: SplitSet, p: ModelParams, scheme: ContextScheme | None = None,
             ks=DEFAULT_KS) -> MetricsReport:
    """Rank the true item at every held-out position under the test step's
    own contexts, advancing the hidden state on ground truth."""
    seqs = split.sequences
    if not seqs.annotated:
        if scheme is None:
            raise ConfigError("sequences are not annotated and no scheme was given")
        seqs = annotate_sequences(seqs, scheme)
        split = SplitSet(seqs, split.n_train)
    if seqs.scheme is not None:
        if p.config.use_input_contexts and seqs.scheme.n_input_contexts != p.config.n_input_contexts:
            raise ConfigError(
                f"scheme has {seqs.scheme.n_input_contexts} input contexts, "
                f"model expects {p.config.n_input_contexts}"
            )
        if p.config.use_transition_contexts and seqs.scheme.n_transition_bins != p.config.n_transition_bins:
            raise ConfigError(
                f"scheme has {seqs.scheme.n_transition_bins} transition bins, "
                f"model expects {p.config.n_transition_bins}"
            )
    records = _iter_test_ranks(split, _ModelScorer(p))
    return aggregate_ranks(records, ks)


def train_item_counts(split: SplitSet) -> np.ndarray:
    counts = np.zeros(split.sequences.n_items, dtype=np.float64)
    for si, seq in enumerate(split.sequences.sequences):
        n_tr = int(split.n_train[si])
        np.add.at(counts, seq.items[:n_tr], 1.0)
    return counts


def pop_baseline(split: SplitSet, ks=DEFAULT_KS) -> MetricsReport:
    """Rank every item by its training-set frequency, constant across queries."""
    records = _iter_test_ranks(split, _ConstantScorer(train_item_counts(split)))
    return aggregate_ranks(records, ks)


# --- report serialization ----------------------------------------------------

def report_to_json(report: MetricsReport) -> str:
    """Flat key/value JSON text; key order is fixed so reruns are byte-identical."""
    pairs: list[tuple[str, float | int]] = []
    for k in sorted(report.recall_at):
        pairs.append((f"recall@{k}", report.recall_at[k]))
    for k in sorted(report.f1_at):
        pairs.append((f"f1@{k}", report.f1_at[k]))
    pairs.append(("map", report.map_score))
    pairs.append(("ndcg", report.ndcg))
    pairs.append(("n_positions", report.n_positions))
    return "{\n" + ",\n".join(f'  "{k}": {json.dumps(v)}' for k, v in pairs) + "\n}\n"


def report_from_json(text: str) -> MetricsReport:
    raw = json.loads(text)
    recall = {}
    f1 = {}
    for key, value in raw.items():
        if key.startswith("recall@"):
            recall[int(key.split("@")[1])] = float(value)
        elif key.startswith("f1@"):
            f1[int(key.split("@")[1])] = float(value)
    return MetricsReport(recall, f1, float(raw["map"]), float(raw["ndcg"]),
                         int(raw["n_positions"]))


def format_report_table(report: MetricsReport, label: str = "model") -> str:
    """Aligned console table, one row, columns in the conventional order."""
    ks = sorted(report.recall_at)
    headers = ["method"]
    values = [label]
    for k in ks:
        headers.append(f"Recall@{k}")
        values.append(f"{report.recall_at[k]:.4f}")
    for k in ks:
        headers.append(f"F1@{k}")
        values.append(f"{report.f1_at[k]:.4f}")
    headers += ["MAP", "NDCG"]
    values += [f"{report.map_score:.4f}", f"{report.ndcg:.4f}"]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    return head + "\n" + row


# --- synthetic fixtures ------------------------------------------------------

SIGNALS = ("input_ctx", "transition_bin", "none")

# Anchor all synthetic timestamps at a Monday midnight so planted hours map
# straight onto civil hours.
_SYNTH_EPOCH = 946857600  # 2000-01-03 00:00:00 UTC, a Monday


def synthetic_partition(n_items: int, n_contexts: int) -> np.ndarray:
    """Item index -> planted context value (round-robin partition)."""
    return np.arange(n_items, dtype=np.int64) % n_contexts


def generate_synthetic(n_users: int, n_items: int, seq_len: int, n_contexts: int,
                       signal: str = "input_ctx", seed: int = 0,
                       signal_strength: float = 0.9) -> tuple[SequenceSet, ContextScheme]:
    """Sequences whose items follow a planted context with the given probability.

    signal="input_ctx" keys items to the event's hour of day (one of
    ``n_contexts`` planted hours, timestamp-encoded so annotation recovers
    them exactly); "transition_bin" keys items to the whole-day gap since
    the previous event; "none" draws items uniformly. The returned set is
    pre-annotated with the planted ids; re-annotating with the returned
    scheme reproduces them.
    """
    if signal not in SIGNALS:
        raise ConfigError(f"signal must be one of {SIGNALS}")
    if n_items < 2 * n_contexts:
        raise ConfigError(
            f"need n_items >= 2*n_contexts to partition items ({n_items} < {2 * n_contexts})"
        )
    if signal == "input_ctx" and n_contexts > 24:
        raise ConfigError("input_ctx signal supports at most 24 planted contexts (hours)")
    if signal == "transition_bin" and n_contexts > 31:
        raise ConfigError("transition_bin signal supports at most 31 planted bins")
    if not (0.0 <= signal_strength <= 1.0):
        raise ConfigError("signal_strength must be in [0, 1]")
    if n_users < 1 or seq_len < 2:
        raise ConfigError("need at least one user and sequences of length >= 2")

    scheme = ContextScheme(factors=("hour_of_day",))
    rng = named_rng(seed, "synthetic")
    part = synthetic_partition(n_items, n_contexts)
    members = [np.flatnonzero(part == c) for c in range(n_contexts)]

    def draw_item(ctx_value: int) -> int:
        if ctx_value is not None and rng.random() < signal_strength:
            pool = members[ctx_value]
            return int(pool[rng.integers(len(pool))])
        return int(rng.integers(n_items))

    sequences = []
    for u in range(n_users):
        items = np.empty(seq_len, dtype=np.int64)
        ts = np.empty(seq_len, dtype=np.int64)
        ctx_ids = np.empty(seq_len, dtype=np.int64)
        bins = np.empty(seq_len, dtype=np.int64)
        if signal == "input_ctx":
            hours = rng.integers(0, n_contexts, size=seq_len)
            for j in range(seq_len):
                # one event every other day at the planted hour
                ts[j] = _SYNTH_EPOCH + j * 2 * SECONDS_PER_DAY + int(hours[j]) * 3600
                items[j] = draw_item(int(hours[j]))
                ctx_ids[j] = int(hours[j])
                bins[j] = scheme.start_bin if j == 0 else (int(ts[j]) - int(ts[j - 1])) // SECONDS_PER_DAY
        elif signal == "transition_bin":
            ts[0] = _SYNTH_EPOCH
            items[0] = draw_item(None)
            ctx_ids[0] = 0
            bins[0] = scheme.start_bin
            for j in range(1, seq_len):
                gap_bin = int(rng.integers(0, n_contexts))
                # one hour past the day boundary keeps the floor exact
                ts[j] = int(ts[j - 1]) + gap_bin * SECONDS_PER_DAY + 3600
                items[j] = draw_item(gap_bin)
                ctx_ids[j] = (int(ts[j]) % SECONDS_PER_DAY) // 3600
                bins[j] = gap_bin
        else:  # none
            for j in range(seq_len):
                ts[j] = _SYNTH_EPOCH + j * SECONDS_PER_DAY
                items[j] = draw_item(None)
                ctx_ids[j] = 0
                bins[j] = scheme.start_bin if j == 0 else 1
        sequences.append(UserSequence(f"u{u}", items, ts, ctx_ids, bins))

    item_vocab = {f"i{v}": v for v in range(n_items)}
    user_vocab = {f"u{u}": u for u in range(n_users)}
    return SequenceSet(sequences, item_vocab, user_vocab, scheme=scheme), scheme


def write_interactions_csv(seqs: SequenceSet, path: str) -> None:
    """Dump a sequence set as user,item,timestamp rows (file order = per-user
    step order), so synthetic fixtures can drive the file-based pipeline."""
    item_ids = seqs.item_ids()
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs.sequences:
            for j in range(len(seq)):
                fh.write(f"{seq.user},{item_ids[int(seq.items[j])]},{int(seq.timestamps[j])}\n")
