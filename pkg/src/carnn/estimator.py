"""Scikit-learn-style front end.

``CARNNRecommender`` wraps the functional pipeline (sequence building,
context annotation, pairwise-ranking training, context-aware scoring)
behind fit/predict so it composes with the wider estimator ecosystem:
constructor arguments are stored verbatim, fitted state lives on
trailing-underscore attributes, and get_params/set_params follow the
sklearn contract.
"""

from __future__ import annotations

import numpy as np

from .base import ParamsMixin, as_interactions, as_query_rows, check_is_fitted
from .context import ContextScheme, annotate_sequences, input_context, transition_bin
from .data import InteractionLog, build_sequences, full_train_split
from .errors import DataError
from .model import ModelConfig, init_params, score_all, zero_state, hidden_step
from .training import TrainConfig, train


class CARNNRecommender(ParamsMixin):
    """Next-item recommender with context-selected input/transition matrices.

    Parameters mirror the underlying model and training configurations.
    ``X`` for :meth:`fit` is an (n, 3) array-like of (user, item, timestamp)
    rows; all given events are used for fitting (hold-out protocols live in
    the evaluation utilities, not here).
    """

    def __init__(self, d=10, learning_rate=0.01, l2=0.01, epochs=10,
                 negatives_per_positive=1, bptt_window=None,
                 use_input_contexts=True, use_transition_contexts=True,
                 context_factors=("day_of_week", "hour_of_day"),
                 holiday_dates=(), max_interval_days=30,
                 timezone_offset_seconds=0, min_user=2, min_item=1,
                 init_scale=0.1, shuffle=True, seed=0):
        self.d = d
        self.learning_rate = learning_rate
        self.l2 = l2
        self.epochs = epochs
        self.negatives_per_positive = negatives_per_positive
        self.bptt_window = bptt_window
        self.use_input_contexts = use_input_contexts
        self.use_transition_contexts = use_transition_contexts
        self.context_factors = context_factors
        self.holiday_dates = holiday_dates
        self.max_interval_days = max_interval_days
        self.timezone_offset_seconds = timezone_offset_seconds
        self.min_user = min_user
        self.min_item = min_item
        self.init_scale = init_scale
        self.shuffle = shuffle
        self.seed = seed

    # -- fitting ---------------------------------------------------------

    def fit(self, X, y=None):
        interactions = as_interactions(X)
        scheme = ContextScheme(
            factors=tuple(self.context_factors),
            holiday_dates=frozenset(self.holiday_dates),
            max_interval_days=self.max_interval_days,
            timezone_offset_seconds=self.timezone_offset_seconds,
        )
        seqs = build_sequences(InteractionLog(interactions), self.min_user, self.min_item)
        seqs = annotate_sequences(seqs, scheme)
        config = ModelConfig(
            d=self.d,
            n_items=seqs.n_items,
            n_input_contexts=scheme.n_input_contexts,
            n_transition_bins=scheme.n_transition_bins,
            use_input_contexts=self.use_input_contexts,
            use_transition_contexts=self.use_transition_contexts,
            seed=self.seed,
            init_scale=self.init_scale,
        )
        tcfg = TrainConfig(
            learning_rate=self.learning_rate,
            l2=self.l2,
            epochs=self.epochs,
            negatives_per_positive=self.negatives_per_positive,
            bptt_window=self.bptt_window,
            seed=self.seed,
            shuffle=self.shuffle,
        )
        params, trace = train(full_train_split(seqs), init_params(config), tcfg)
        self.scheme_ = scheme
        self.sequences_ = seqs
        self.params_ = params
        self.item_ids_ = seqs.item_ids()
        self.n_items_ = seqs.n_items
        self.loss_trace_ = trace
        self._state_cache: dict[str, tuple[np.ndarray, int]] = {}
        return self

    # -- inference ---------------------------------------------------------

    def _user_state(self, user: str) -> tuple[np.ndarray, int]:
        """Hidden state after the user's fitted history, plus their last timestamp."""
        cached = self._state_cache.get(user)
        if cached is not None:
            return cached
        idx = self.sequences_.user_vocab.get(user)
        if idx is None:
            raise DataError(f"unknown user {user!r}")
        seq = self.sequences_.sequences[idx]
        h = zero_state(self.params_.config)
        for j in range(len(seq)):
            h = hidden_step(h, seq.items[j], seq.input_ctxs[j], seq.trans_bins[j], self.params_)
        state = (h, int(seq.timestamps[-1]))
        self._state_cache[user] = state
        return state

    def _scores_for(self, user: str, timestamp: int) -> np.ndarray:
        h, last_t = self._user_state(user)
        ctx = input_context(timestamp, self.scheme_)
        bin_ = transition_bin(timestamp, last_t, self.scheme_)
        return score_all(h, ctx, bin_, self.params_)

    def predict_scores(self, X) -> np.ndarray:
        """Score every item for each (user, timestamp) query row."""
        check_is_fitted(self, "params_")
        rows = as_query_rows(X)
        out = np.empty((len(rows), self.n_items_), dtype=np.float64)
        for i, (user, ts) in enumerate(rows):
            out[i] = self._scores_for(user, ts)
        return out

    def predict(self, X) -> np.ndarray:
        """Most likely next item id for each (user, timestamp) query row."""
        scores = self.predict_scores(X)
        best = np.argmax(scores, axis=1)
        return np.array([self.item_ids_[i] for i in best], dtype=object)

    def recommend(self, user, timestamp, n: int = 10) -> list[tuple[str, float]]:
        """Top-n (item id, score) pairs for one user at one timestamp."""
        check_is_fitted(self, "params_")
        scores = self._scores_for(str(user), int(timestamp))
        n = min(n, self.n_items_)
        top = np.argsort(-scores, kind="stable")[:n]
        return [(self.item_ids_[i], float(scores[i])) for i in top]
