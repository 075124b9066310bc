"""Model parameters and forward computation.

The hidden state evolves as h_k = f(r_k @ M[ctx_k] + h_{k-1} @ W[bin_k])
where M is a bank of input matrices selected by the step's input-context id
and W a bank of transition matrices selected by the step's gap bin; f is the
elementwise logistic function. Scoring an item under the contexts of the
predicted step is the bilinear form h @ W'[bin] @ (r_item @ M'[ctx])^T.

With a context switch off the corresponding bank collapses to a single
shared matrix, which reproduces a conventional recurrent model. By default
the prediction matrices M'/W' are the hidden-layer banks themselves;
``separate_prediction_banks`` allocates independent ones.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, ConfigError, FormatError, InputOutputError
from .linalg import sigmoid_vec, vec_mat
from .seeding import named_rng

MAGIC = b"CARN"
FORMAT_VERSION = 1

ACTIVATIONS = ("sigmoid", "identity")


@dataclass(frozen=True)
class ModelConfig:
    d: int
    n_items: int
    n_input_contexts: int
    n_transition_bins: int
    use_input_contexts: bool = True
    use_transition_contexts: bool = True
    seed: int = 0
    init_scale: float = 0.1
    separate_prediction_banks: bool = False
    activation: str = "sigmoid"  # "identity" exists for gradient diagnostics

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.n_items < 1:
            raise ConfigError(f"n_items must be >= 1, got {self.n_items}")
        if self.n_input_contexts < 1 or self.n_transition_bins < 1:
            raise ConfigError("context cardinalities must be >= 1")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")

    @property
    def m_slots(self) -> int:
        return self.n_input_contexts if self.use_input_contexts else 1

    @property
    def w_slots(self) -> int:
        return self.n_transition_bins if self.use_transition_contexts else 1


@dataclass
class ModelParams:
    """Item embeddings plus the two context-selected matrix banks."""

    config: ModelConfig
    R: np.ndarray        # (n_items, d)
    M_bank: np.ndarray   # (m_slots, d, d)
    W_bank: np.ndarray   # (w_slots, d, d)
    M_pred: np.ndarray | None = None  # only with separate_prediction_banks
    W_pred: np.ndarray | None = None

    def input_slot(self, ctx: int) -> int:
        if not self.config.use_input_contexts:
            return 0
        if not (0 <= ctx < self.config.n_input_contexts):
            raise ConfigError(
                f"input context {ctx} out of range [0, {self.config.n_input_contexts})"
            )
        return int(ctx)

    def trans_slot(self, bin_: int) -> int:
        if not self.config.use_transition_contexts:
            return 0
        if not (0 <= bin_ < self.config.n_transition_bins):
            raise ConfigError(
                f"transition bin {bin_} out of range [0, {self.config.n_transition_bins})"
            )
        return int(bin_)

    def item_row(self, item: int) -> np.ndarray:
        if not (0 <= item < self.config.n_items):
            raise ConfigError(f"item index {item} out of range [0, {self.config.n_items})")
        return self.R[int(item)]

    @property
    def scoring_m_bank(self) -> np.ndarray:
        return self.M_pred if self.M_pred is not None else self.M_bank

    @property
    def scoring_w_bank(self) -> np.ndarray:
        return self.W_pred if self.W_pred is not None else self.W_bank

    def n_parameters(self) -> int:
        n = self.R.size + self.M_bank.size + self.W_bank.size
        if self.M_pred is not None:
            n += self.M_pred.size
        if self.W_pred is not None:
            n += self.W_pred.size
        return n

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            self.R.copy(),
            self.M_bank.copy(),
            self.W_bank.copy(),
            None if self.M_pred is None else self.M_pred.copy(),
            None if self.W_pred is None else self.W_pred.copy(),
        )


def zero_state(config: ModelConfig) -> np.ndarray:
    return np.zeros(config.d, dtype=np.float64)


def activate(z: np.ndarray, config: ModelConfig) -> np.ndarray:
    if config.activation == "identity":
        return np.asarray(z, dtype=np.float64)
    return sigmoid_vec(z)


def activation_grad(h: np.ndarray, config: ModelConfig) -> np.ndarray:
    """df/dz expressed through the activation value h."""
    if config.activation == "identity":
        return np.ones_like(h)
    return h * (1.0 - h)


def init_params(config: ModelConfig) -> ModelParams:
    """Draw every parameter i.i.d. uniform on [-init_scale, +init_scale].

    Draw order is fixed (R, M bank, W bank, then prediction banks if any)
    so a seed pins the exact parameter values.
    """
    rng = named_rng(config.seed, "init")
    s = config.init_scale
    d = config.d

    def draw(shape):
        return rng.uniform(-s, s, size=shape)

    R = draw((config.n_items, d))
    M_bank = draw((config.m_slots, d, d))
    W_bank = draw((config.w_slots, d, d))
    M_pred = W_pred = None
    if config.separate_prediction_banks:
        M_pred = draw((config.m_slots, d, d))
        W_pred = draw((config.w_slots, d, d))
    return ModelParams(config, R, M_bank, W_bank, M_pred, W_pred)


def hidden_step(h_prev: np.ndarray, item_index: int, ctx: int, bin_: int, p: ModelParams) -> np.ndarray:
    """One recurrence step with context-selected input and transition matrices."""
    r = p.item_row(item_index)
    m = p.M_bank[p.input_slot(ctx)]
    w = p.W_bank[p.trans_slot(bin_)]
    return activate(vec_mat(r, m) + vec_mat(h_prev, w), p.config)


def forward_sequence(seq, p: ModelParams) -> list[np.ndarray]:
    """Hidden states h_1..h_L for an annotated sequence, starting from h_0 = 0."""
    if len(seq) and not seq.annotated:
        raise ConfigError("sequence must be annotated with contexts before the forward pass")
    h = zero_state(p.config)
    states = []
    for k in range(len(seq)):
        h = hidden_step(h, seq.items[k], seq.input_ctxs[k], seq.trans_bins[k], p)
        states.append(h)
    return states


def score(h: np.ndarray, item_index: int, next_ctx: int, next_bin: int, p: ModelParams) -> float:
    """Bilinear score of one item under the contexts of the predicted step."""
    r = p.item_row(item_index)
    m = p.scoring_m_bank[p.input_slot(next_ctx)]
    w = p.scoring_w_bank[p.trans_slot(next_bin)]
    return float(vec_mat(h, w) @ vec_mat(r, m))


def score_all(h: np.ndarray, next_ctx: int, next_bin: int, p: ModelParams) -> np.ndarray:
    """Scores for every item: one projected vector, then a single R @ q product."""
    m = p.scoring_m_bank[p.input_slot(next_ctx)]
    w = p.scoring_w_bank[p.trans_slot(next_bin)]
    q = (h @ w) @ m.T
    return p.R @ q


# --- model file format -------------------------------------------------------
#
# magic "CARN", then little-endian: u32 version, u32 d, u32 n_items,
# u32 n_input_contexts, u32 n_transition_bins, u8 use_input_contexts,
# u8 use_transition_contexts, then R, M bank, W bank as f64 in that order.
# The stored context counts are the bank sizes, so a model trained with a
# switch off declares a single shared matrix.

_HEADER = struct.Struct("<4sIIIIIBB")


def save_params(p: ModelParams, path: str) -> None:
    if p.M_pred is not None or p.W_pred is not None:
        raise ConfigError(
            "models with separate prediction banks cannot be saved in format v1"
        )
    cfg = p.config
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        cfg.d,
        cfg.n_items,
        p.M_bank.shape[0],
        p.W_bank.shape[0],
        1 if cfg.use_input_contexts else 0,
        1 if cfg.use_transition_contexts else 0,
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(p.R.astype("<f8").tobytes())
            fh.write(p.M_bank.astype("<f8").tobytes())
            fh.write(p.W_bank.astype("<f8").tobytes())
    except OSError as exc:
        raise InputOutputError(f"cannot write model file {path}: {exc}") from exc


def load_params(path: str, seed: int = 0) -> ModelParams:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputOutputError(f"cannot read model file {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated model file")
    magic, version, d, n_items, n_m, n_w, flag_in, flag_tr = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model format version {version}")
    expected = _HEADER.size + 8 * (n_items * d + n_m * d * d + n_w * d * d)
    if len(blob) != expected:
        raise FormatError(
            f"{path}: wrong length {len(blob)} bytes, header implies {expected}"
        )
    use_in = bool(flag_in)
    use_tr = bool(flag_tr)
    if (not use_in and n_m != 1) or (not use_tr and n_w != 1):
        raise FormatError(f"{path}: bank sizes inconsistent with context switches")
    config = ModelConfig(
        d=d,
        n_items=n_items,
        n_input_contexts=n_m,
        n_transition_bins=n_w,
        use_input_contexts=use_in,
        use_transition_contexts=use_tr,
        seed=seed,
    )
    offset = _HEADER.size
    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        return np.ascontiguousarray(arr, dtype=np.float64)

    R = take((n_items, d))
    M_bank = take((n_m, d, d))
    W_bank = take((n_w, d, d))
    return ModelParams(config, R, M_bank, W_bank)


def check_vocab_compatibility(p: ModelParams, n_items: int) -> None:
    if p.config.n_items != n_items:
        raise CompatibilityError(
            f"model expects {p.config.n_items} items but the dataset has {n_items}"
        )
