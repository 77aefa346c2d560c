"""The four-stage attention architecture assembled into one forward pass.

Per input series: a bidirectional GRU encoder, then a context-GRU stage
that attends over the encodings (yielding the temporal coefficients and
a sequence of output vectors), then a shared affine+tanh map that turns
each output sequence into one feature vector. A final context-GRU stage
attends over the D feature vectors to predict every series' next value,
yielding the inter-series coefficients.

Windows are (m, D); batched entry points take (batch, m, D). All
coefficient matrices are row-stochastic by construction.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tape, Tensor, concat, matmul, tanh
from .cells import (
    AttentionParams,
    ContextGruParams,
    GruParams,
    attach_params,
    attention_weights,
    bidirectional_encode,
    context_gru_step,
    context_vector,
    named_tensors,
    uniform_init,
)
from .errors import ContractViolation, SchemaError
from .seeding import named_rng

__all__ = [
    "ModelConfig",
    "ModelParams",
    "ForwardTrace",
    "BatchTrace",
    "Model",
    "dual_purpose_decode",
    "transform_features",
    "decode_inter",
    "forward",
    "forward_batch",
    "multi_step_forward",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1

WIDTH_POOL = (16, 32, 48, 64)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; widths are conventionally tuned from
    the pool {16, 32, 48, 64}."""

    D: int
    m: int
    enc_hidden: int = 32
    dp_hidden: int = 32
    dec_hidden: int = 32
    v_dim: int | None = None
    feat_dim: int | None = None
    share_temporal_attention: bool = True
    temporal_score_hidden: int | None = None
    inter_score_hidden: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.D < 1 or self.m < 1:
            raise ContractViolation("D and m must be at least 1")
        if self.v_dim is None:
            object.__setattr__(self, "v_dim", self.dp_hidden)
        if self.feat_dim is None:
            object.__setattr__(self, "feat_dim", self.dec_hidden)
        for name in ("enc_hidden", "dp_hidden", "dec_hidden", "v_dim", "feat_dim"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be at least 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass(frozen=True)
class EncoderParams:
    fwd: GruParams
    bwd: GruParams


@dataclass(frozen=True)
class StageOutputParams:
    """Output map of the dual-purpose stage: v = tanh(W_o v' + U_o s + C_o c + b_o)."""

    W_o: Tensor
    U_o: Tensor
    C_o: Tensor
    b_o: Tensor


@dataclass(frozen=True)
class TransformParams:
    """Shared per-series feature map over the concatenated output sequence."""

    W_f: Tensor
    b_f: Tensor


@dataclass(frozen=True)
class ReadoutParams:
    """Scalar readout of the decoding stage; W_y feeds the previous
    prediction back in the multi-step variant only."""

    C_o: Tensor
    U_o: Tensor
    b_o: Tensor
    W_y: Tensor


@dataclass(frozen=True)
class ModelParams:
    """All learnable weights. The layout (and so the parameter count) is a
    deterministic function of ModelConfig."""

    encoders: list[EncoderParams]
    dp_cells: list[ContextGruParams]
    dp_attention: list[AttentionParams]  # one entry when shared, else D
    dp_outputs: list[StageOutputParams]
    transform: TransformParams
    decoder_cell: ContextGruParams
    decoder_attention: AttentionParams
    readout: ReadoutParams

    @classmethod
    def init(cls, config: ModelConfig) -> "ModelParams":
        rng = named_rng(config.seed, "init")
        enc_out = 2 * config.enc_hidden
        encoders = [
            EncoderParams(
                fwd=GruParams.init(1, config.enc_hidden, rng),
                bwd=GruParams.init(1, config.enc_hidden, rng),
            )
            for _ in range(config.D)
        ]
        dp_cells = [
            ContextGruParams.init(config.v_dim, config.dp_hidden, enc_out, rng)
            for _ in range(config.D)
        ]
        n_attn = 1 if config.share_temporal_attention else config.D
        dp_attention = [
            AttentionParams.init(
                config.dp_hidden, enc_out, rng, config.temporal_score_hidden
            )
            for _ in range(n_attn)
        ]
        dp_outputs = [
            StageOutputParams(
                W_o=uniform_init(rng, config.v_dim, config.v_dim),
                U_o=uniform_init(rng, config.v_dim, config.dp_hidden),
                C_o=uniform_init(rng, config.v_dim, enc_out),
                b_o=Tensor(np.zeros(config.v_dim)),
            )
            for _ in range(config.D)
        ]
        transform = TransformParams(
            W_f=uniform_init(rng, config.feat_dim, config.m * config.v_dim),
            b_f=Tensor(np.zeros(config.feat_dim)),
        )
        decoder_cell = ContextGruParams.init(
            1, config.dec_hidden, config.feat_dim, rng
        )
        decoder_attention = AttentionParams.init(
            config.dec_hidden, config.feat_dim, rng, config.inter_score_hidden
        )
        readout = ReadoutParams(
            C_o=uniform_init(rng, 1, config.feat_dim),
            U_o=uniform_init(rng, 1, config.dec_hidden),
            b_o=Tensor(np.zeros(1)),
            W_y=uniform_init(rng, 1, 1),
        )
        return cls(
            encoders=encoders,
            dp_cells=dp_cells,
            dp_attention=dp_attention,
            dp_outputs=dp_outputs,
            transform=transform,
            decoder_cell=decoder_cell,
            decoder_attention=decoder_attention,
            readout=readout,
        )

    def temporal_attention(self, d: int) -> AttentionParams:
        return self.dp_attention[0] if len(self.dp_attention) == 1 else self.dp_attention[d]

    def named(self):
        yield from named_tensors(self)

    def attach(self, tape: Tape) -> "ModelParams":
        return attach_params(self, tape)

    def count_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named())

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; names and shapes must match."""
        own = dict(self.named())
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise SchemaError(
                f"parameter names mismatch: missing={sorted(missing)}, "
                f"unexpected={sorted(extra)}"
            )
        for name, tensor in own.items():
            incoming = np.asarray(arrays[name], dtype=np.float64)
            if incoming.shape != tensor.data.shape:
                raise SchemaError(
                    f"parameter {name} has shape {incoming.shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data[...] = incoming


@dataclass
class ForwardTrace:
    """Everything one window produces: coefficients and predictions."""

    alphas: np.ndarray  # (D, m, m): series, decode step, window position
    betas: np.ndarray  # (D, D): output series, input series
    y_hat: np.ndarray  # (D,)
    v_sequences: np.ndarray  # (D, m, v_dim)


@dataclass
class BatchTrace:
    """Batched traces; `y_hat` stays a live tensor so a loss can be built."""

    alphas: np.ndarray  # (B, D, m, m)
    betas: np.ndarray  # (B, D, D)
    y_hat: Tensor  # (B, D)
    v_sequences: np.ndarray  # (B, D, m, v_dim)


def _zero_like_batch(reference: Tensor, dim: int) -> Tensor:
    if reference.ndim == 2:
        return Tensor(np.zeros((reference.shape[0], dim)))
    return Tensor(np.zeros(dim))


def dual_purpose_decode(
    cell: ContextGruParams,
    attention: AttentionParams,
    output: StageOutputParams,
    encodings: Sequence[Tensor],
) -> tuple[list[Tensor], list[Tensor]]:
    """Decode one series' encodings into m output vectors plus the
    temporal coefficients of every decode step.

    Starts from zero hidden state and zero previous output; step t scores
    all m encodings against the previous hidden state, forms the context,
    advances the cell, and emits the next output vector.
    """
    m = len(encodings)
    if m == 0:
        raise ContractViolation("dual_purpose_decode needs at least one encoding")
    s = _zero_like_batch(encodings[0], cell.hidden_dim)
    v = _zero_like_batch(encodings[0], cell.input_dim)
    v_sequence: list[Tensor] = []
    alphas: list[Tensor] = []
    for _ in range(m):
        alpha_t = attention_weights(attention, s, encodings)
        c_t = context_vector(alpha_t, encodings)
        s = context_gru_step(cell, v, s, c_t)
        v = tanh(
            matmul(v, output.W_o, transpose_b=True)
            + matmul(s, output.U_o, transpose_b=True)
            + matmul(c_t, output.C_o, transpose_b=True)
            + output.b_o
        )
        v_sequence.append(v)
        alphas.append(alpha_t)
    return v_sequence, alphas


def transform_features(params: TransformParams, v_sequence: Sequence[Tensor]) -> Tensor:
    """Concatenate a series' m output vectors and map them through one
    affine+tanh layer (shared across series)."""
    if not v_sequence:
        raise ContractViolation("transform_features needs at least one vector")
    v_dim = v_sequence[0].shape[-1]
    expected = params.W_f.shape[1] // v_dim
    if len(v_sequence) != expected:
        raise ContractViolation(
            f"expected {expected} vectors of width {v_dim}, got {len(v_sequence)}"
        )
    flat = concat(list(v_sequence), axis=-1)
    return tanh(matmul(flat, params.W_f, transpose_b=True) + params.b_f)


def decode_inter(
    cell: ContextGruParams,
    attention: AttentionParams,
    readout: ReadoutParams,
    features: Sequence[Tensor],
) -> tuple[Tensor, list[Tensor]]:
    """Predict each series' next value while scoring every series' feature
    vector, one decode step per output series.

    The features must arrive in the fixed series order the model was
    trained with. Returns (predictions, per-step coefficient rows).
    """
    D = len(features)
    if D == 0:
        raise ContractViolation("decode_inter needs at least one feature vector")
    q = _zero_like_batch(features[0], cell.hidden_dim)
    ys: list[Tensor] = []
    betas: list[Tensor] = []
    for _ in range(D):
        beta_i = attention_weights(attention, q, features)
        c_i = context_vector(beta_i, features)
        q = context_gru_step(cell, None, q, c_i)
        y_i = tanh(
            matmul(c_i, readout.C_o, transpose_b=True)
            + matmul(q, readout.U_o, transpose_b=True)
            + readout.b_o
        )
        ys.append(y_i)
        betas.append(beta_i)
    return concat(ys, axis=-1), betas


def _series_stages(
    config: ModelConfig, params: ModelParams, windows: np.ndarray
) -> tuple[list[Tensor], np.ndarray, np.ndarray]:
    """Run encoder, dual-purpose, and transformation stages for a batch.

    Returns (per-series features, alphas (B,D,m,m), v values (B,D,m,V)).
    """
    b = windows.shape[0]
    features: list[Tensor] = []
    alphas = np.empty((b, config.D, config.m, config.m))
    v_values = np.empty((b, config.D, config.m, config.v_dim))
    for d in range(config.D):
        series = Tensor(windows[:, :, d])
        enc = bidirectional_encode(
            params.encoders[d].fwd, params.encoders[d].bwd, series
        )
        v_seq, alpha_rows = dual_purpose_decode(
            params.dp_cells[d],
            params.temporal_attention(d),
            params.dp_outputs[d],
            enc,
        )
        features.append(transform_features(params.transform, v_seq))
        for t in range(config.m):
            alphas[:, d, t, :] = alpha_rows[t].data
            v_values[:, d, t, :] = v_seq[t].data
    return features, alphas, v_values


def _validate_window_batch(config: ModelConfig, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1:] != (config.m, config.D):
        raise ContractViolation(
            f"window batch must be (batch, {config.m}, {config.D}), "
            f"got {windows.shape}"
        )
    if windows.size and (windows.min() < -0.01 or windows.max() > 1.01):
        warnings.warn(
            "window values fall outside the normalized range [0, 1]; "
            "inference continues but predictions may drift",
            RuntimeWarning,
            stacklevel=3,
        )
    return windows


def forward_batch(
    config: ModelConfig, params: ModelParams, windows: np.ndarray
) -> BatchTrace:
    """Full forward pass over a (batch, m, D) array of normalized windows."""
    windows = _validate_window_batch(config, windows)
    features, alphas, v_values = _series_stages(config, params, windows)
    y_hat, beta_rows = decode_inter(
        params.decoder_cell, params.decoder_attention, params.readout, features
    )
    betas = np.empty((windows.shape[0], config.D, config.D))
    for i in range(config.D):
        betas[:, i, :] = beta_rows[i].data
    return BatchTrace(alphas=alphas, betas=betas, y_hat=y_hat, v_sequences=v_values)


def forward(config: ModelConfig, params: ModelParams, window: np.ndarray) -> ForwardTrace:
    """Forward pass for a single (m, D) window."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (config.m, config.D):
        raise ContractViolation(
            f"window must be ({config.m}, {config.D}), got {window.shape}"
        )
    batch = forward_batch(config, params, window[None, :, :])
    return ForwardTrace(
        alphas=batch.alphas[0],
        betas=batch.betas[0],
        y_hat=np.asarray(batch.y_hat.data[0]),
        v_sequences=batch.v_sequences[0],
    )


def multi_step_forward(
    config: ModelConfig,
    params: ModelParams,
    window: np.ndarray,
    target_series: int,
    horizon: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Decode `horizon` future values of one series instead of one value
    per series; each decode step feeds the previous prediction back into
    the cell and the readout.

    Returns (predictions (horizon,), betas (horizon, D)); row i is the
    dependency of the i-th future step on each input series.
    """
    if horizon < 1:
        raise ContractViolation("horizon must be at least 1")
    if not 0 <= target_series < config.D:
        raise ContractViolation(
            f"target_series {target_series} out of range for D={config.D}"
        )
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (config.m, config.D):
        raise ContractViolation(
            f"window must be ({config.m}, {config.D}), got {window.shape}"
        )
    windows = _validate_window_batch(config, window[None, :, :])
    features, _, _ = _series_stages(config, params, windows)

    cell = params.decoder_cell
    readout = params.readout
    q = _zero_like_batch(features[0], cell.hidden_dim)
    y_prev = _zero_like_batch(features[0], 1)
    predictions = np.empty(horizon)
    betas = np.empty((horizon, config.D))
    for i in range(horizon):
        beta_i = attention_weights(params.decoder_attention, q, features)
        c_i = context_vector(beta_i, features)
        q = context_gru_step(cell, y_prev, q, c_i)
        y_i = tanh(
            matmul(y_prev, readout.W_y, transpose_b=True)
            + matmul(c_i, readout.C_o, transpose_b=True)
            + matmul(q, readout.U_o, transpose_b=True)
            + readout.b_o
        )
        predictions[i] = float(y_i.data[0, 0])
        betas[i, :] = beta_i.data[0]
        y_prev = y_i
    return predictions, betas


@dataclass
class Model:
    """A trained (or trainable) model bundle: architecture, weights, the
    series order it was fit to, and the normalization it expects."""

    config: ModelConfig
    params: ModelParams
    series_names: list[str]
    scaler: "object | None" = None  # data.Scaler once fitted

    @classmethod
    def create(cls, config: ModelConfig, series_names: Sequence[str]) -> "Model":
        names = list(series_names)
        if len(names) != config.D:
            raise ContractViolation(
                f"{len(names)} series names for D={config.D}"
            )
        return cls(config=config, params=ModelParams.init(config), series_names=names)

    def check_series(self, names: Sequence[str]) -> None:
        if list(names) != self.series_names:
            raise SchemaError(
                f"series order mismatch: model was trained on "
                f"{self.series_names}, data provides {list(names)}"
            )

    def forward(self, window: np.ndarray) -> ForwardTrace:
        return forward(self.config, self.params, window)

    def forward_batch(self, windows: np.ndarray) -> BatchTrace:
        return forward_batch(self.config, self.params, windows)

    def multi_step(self, window: np.ndarray, target_series: int, horizon: int):
        return multi_step_forward(
            self.config, self.params, window, target_series, horizon
        )

    def save(self, path) -> None:
        from .data import Scaler  # local import to avoid a cycle

        meta = {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "series_names": self.series_names,
            "scaler": self.scaler.to_dict() if isinstance(self.scaler, Scaler) else None,
        }
        arrays = {f"param/{name}": t.data for name, t in self.params.named()}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "Model":
        from .data import Scaler

        with np.load(path) as bundle:
            meta = json.loads(bytes(bundle["meta"].tobytes()).decode("utf-8"))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise SchemaError(
                    f"unsupported checkpoint version {meta.get('format_version')}"
                )
            config = ModelConfig.from_dict(meta["config"])
            params = ModelParams.init(config)
            arrays = {
                key[len("param/") :]: bundle[key]
                for key in bundle.files
                if key.startswith("param/")
            }
        params.load_arrays(arrays)
        scaler = Scaler.from_dict(meta["scaler"]) if meta.get("scaler") else None
        return cls(
            config=config,
            params=params,
            series_names=list(meta["series_names"]),
            scaler=scaler,
        )
