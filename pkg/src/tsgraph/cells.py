"""GRU cells, bidirectional encoding, and the shared attention scoring.

All step functions accept a single sample (1-D tensors) or a batch
(2-D, batch-first) and differentiate through the active tape. Parameter
bundles are frozen dataclasses of tensors; `attach_params` produces a
tape-watched copy for a training pass.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    concat,
    matmul,
    mul,
    narrow,
    norm_exp,
    reduce_sum,
    sigmoid,
    tanh,
)
from .errors import ContractViolation

__all__ = [
    "GruParams",
    "ContextGruParams",
    "AttentionParams",
    "gru_step",
    "bidirectional_encode",
    "attention_weights",
    "context_vector",
    "context_gru_step",
    "attach_params",
    "named_tensors",
    "uniform_init",
]


def uniform_init(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    """Weight matrix drawn from U[-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(cols)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)))


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ContractViolation(message)


@dataclass(frozen=True)
class GruParams:
    """Input, recurrent, and bias parameters of one GRU cell.

    Input matrices are (hidden x input), recurrent matrices
    (hidden x hidden), biases (hidden,).
    """

    W_r: Tensor
    W_z: Tensor
    W_h: Tensor
    U_r: Tensor
    U_z: Tensor
    U_h: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor

    def __post_init__(self):
        h, i = self.W_r.shape
        for name in ("W_r", "W_z", "W_h"):
            _check(getattr(self, name).shape == (h, i), f"{name} must be ({h}, {i})")
        for name in ("U_r", "U_z", "U_h"):
            _check(getattr(self, name).shape == (h, h), f"{name} must be ({h}, {h})")
        for name in ("b_r", "b_z", "b_h"):
            _check(getattr(self, name).shape == (h,), f"{name} must be ({h},)")

    @property
    def input_dim(self) -> int:
        return self.W_r.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_r.shape[0]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruParams":
        return cls(
            W_r=uniform_init(rng, hidden_dim, input_dim),
            W_z=uniform_init(rng, hidden_dim, input_dim),
            W_h=uniform_init(rng, hidden_dim, input_dim),
            U_r=uniform_init(rng, hidden_dim, hidden_dim),
            U_z=uniform_init(rng, hidden_dim, hidden_dim),
            U_h=uniform_init(rng, hidden_dim, hidden_dim),
            b_r=Tensor(np.zeros(hidden_dim)),
            b_z=Tensor(np.zeros(hidden_dim)),
            b_h=Tensor(np.zeros(hidden_dim)),
        )


@dataclass(frozen=True)
class ContextGruParams(GruParams):
    """GRU parameters extended with per-gate context matrices (hidden x context)."""

    C_r: Tensor = None  # type: ignore[assignment]
    C_z: Tensor = None  # type: ignore[assignment]
    C_h: Tensor = None  # type: ignore[assignment]

    def __post_init__(self):
        super().__post_init__()
        h = self.hidden_dim
        _check(self.C_r is not None, "context matrices are required")
        c = self.C_r.shape[1]
        for name in ("C_r", "C_z", "C_h"):
            _check(getattr(self, name).shape == (h, c), f"{name} must be ({h}, {c})")

    @property
    def context_dim(self) -> int:
        return self.C_r.shape[1]

    @classmethod
    def init(
        cls,
        input_dim: int,
        hidden_dim: int,
        context_dim: int,
        rng: np.random.Generator,
    ) -> "ContextGruParams":
        base = GruParams.init(input_dim, hidden_dim, rng)
        return cls(
            **{f.name: getattr(base, f.name) for f in dataclasses.fields(GruParams)},
            C_r=uniform_init(rng, hidden_dim, context_dim),
            C_z=uniform_init(rng, hidden_dim, context_dim),
            C_h=uniform_init(rng, hidden_dim, context_dim),
        )


@dataclass(frozen=True)
class AttentionParams:
    """Alignment scorer: score = tanh(W_score [query; key])^T u_score."""

    W_score: Tensor
    u_score: Tensor

    def __post_init__(self):
        _check(self.W_score.ndim == 2, "W_score must be a matrix")
        a = self.W_score.shape[0]
        _check(self.u_score.shape == (a,), f"u_score must be ({a},)")

    @property
    def pair_dim(self) -> int:
        return self.W_score.shape[1]

    @classmethod
    def init(
        cls,
        query_dim: int,
        key_dim: int,
        rng: np.random.Generator,
        score_hidden: int | None = None,
    ) -> "AttentionParams":
        hidden = key_dim if score_hidden is None else score_hidden
        return cls(
            W_score=uniform_init(rng, hidden, query_dim + key_dim),
            u_score=Tensor(
                rng.uniform(-1.0 / np.sqrt(hidden), 1.0 / np.sqrt(hidden), size=hidden)
            ),
        )


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------


def gru_step(params: GruParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU update: reset/update gates, candidate state, convex blend."""
    r = sigmoid(
        matmul(x, params.W_r, transpose_b=True)
        + matmul(h_prev, params.U_r, transpose_b=True)
        + params.b_r
    )
    z = sigmoid(
        matmul(x, params.W_z, transpose_b=True)
        + matmul(h_prev, params.U_z, transpose_b=True)
        + params.b_z
    )
    h_tilde = tanh(
        matmul(x, params.W_h, transpose_b=True)
        + matmul(mul(r, h_prev), params.U_h, transpose_b=True)
        + params.b_h
    )
    return (1.0 - z) * h_prev + z * h_tilde


def context_gru_step(
    params: ContextGruParams,
    x: Tensor | None,
    h_prev: Tensor,
    context: Tensor,
) -> Tensor:
    """GRU update whose gate pre-activations gain an additive context term.

    `x` may be None for the decoder form that runs on context alone.
    """

    def gate_pre(W: Tensor, U: Tensor, C: Tensor, b: Tensor, h: Tensor) -> Tensor:
        pre = matmul(h, U, transpose_b=True) + matmul(context, C, transpose_b=True) + b
        if x is not None:
            pre = matmul(x, W, transpose_b=True) + pre
        return pre

    r = sigmoid(gate_pre(params.W_r, params.U_r, params.C_r, params.b_r, h_prev))
    z = sigmoid(gate_pre(params.W_z, params.U_z, params.C_z, params.b_z, h_prev))
    h_tilde = tanh(
        gate_pre(params.W_h, params.U_h, params.C_h, params.b_h, mul(r, h_prev))
    )
    return (1.0 - z) * h_prev + z * h_tilde


def bidirectional_encode(
    fwd: GruParams, bwd: GruParams, series: Tensor
) -> list[Tensor]:
    """Encode a scalar sequence with two GRUs, one per direction.

    `series` is (m,) or (batch, m). Element t of the result concatenates
    the forward state after reading steps 1..t with the backward state
    after reading steps m..t; both directions start from zero states.
    """
    m = series.shape[-1]
    if m < 1:
        raise ContractViolation("series must contain at least one timestep")

    def zero_state(hidden: int) -> Tensor:
        if series.ndim == 2:
            return Tensor(np.zeros((series.shape[0], hidden)))
        return Tensor(np.zeros(hidden))

    forward_states: list[Tensor] = []
    h = zero_state(fwd.hidden_dim)
    for t in range(m):
        h = gru_step(fwd, narrow(series, -1, t, 1), h)
        forward_states.append(h)

    backward_states: list[Tensor | None] = [None] * m
    h = zero_state(bwd.hidden_dim)
    for t in reversed(range(m)):
        h = gru_step(bwd, narrow(series, -1, t, 1), h)
        backward_states[t] = h

    return [
        concat([f, b], axis=-1) for f, b in zip(forward_states, backward_states)
    ]


def attention_weights(
    params: AttentionParams, query: Tensor, keys: Sequence[Tensor]
) -> Tensor:
    """Normalized, strictly positive alignment of a query against keys.

    Each key is scored by a one-hidden-layer tanh scorer; scores pass
    through a fused exp-normalize, so the result is a distribution over
    keys: (m,) for single queries, (batch, m) batched.
    """
    if len(keys) == 0:
        raise ContractViolation("attention requires at least one key")
    scores = []
    for key in keys:
        pair = concat([query, key], axis=-1)
        hidden = tanh(matmul(pair, params.W_score, transpose_b=True))
        scores.append(reduce_sum(mul(hidden, params.u_score), axis=-1, keepdims=True))
    return norm_exp(concat(scores, axis=-1), axis=-1)


def context_vector(coefficients: Tensor, keys: Sequence[Tensor]) -> Tensor:
    """Convex combination of keys under the given coefficients."""
    m = len(keys)
    if coefficients.shape[-1] != m:
        raise ContractViolation(
            f"{coefficients.shape[-1]} coefficients for {m} keys"
        )
    total = None
    for j, key in enumerate(keys):
        part = mul(narrow(coefficients, -1, j, 1), key)
        total = part if total is None else total + part
    return total


# ---------------------------------------------------------------------------
# parameter-tree helpers
# ---------------------------------------------------------------------------


def attach_params(obj, tape: Tape):
    """Deep-copy a parameter tree with every Tensor watched by `tape`."""
    if isinstance(obj, Tensor):
        return tape.watch(obj)
    if dataclasses.is_dataclass(obj):
        values = {
            f.name: attach_params(getattr(obj, f.name), tape)
            for f in dataclasses.fields(obj)
        }
        return type(obj)(**values)
    if isinstance(obj, (list, tuple)):
        mapped = [attach_params(v, tape) for v in obj]
        return type(obj)(mapped)
    return obj


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Deterministic (name, tensor) pairs of a parameter tree."""
    if isinstance(obj, Tensor):
        yield prefix, obj
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(getattr(obj, f.name), sub)
        return
    if isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            sub = f"{prefix}.{i}" if prefix else str(i)
            yield from named_tensors(v, sub)


def replace_tensors(obj, tensors: Iterator[Tensor]):
    """Rebuild a parameter tree consuming replacement tensors in named order."""
    if isinstance(obj, Tensor):
        return next(tensors)
    if dataclasses.is_dataclass(obj):
        values = {
            f.name: replace_tensors(getattr(obj, f.name), tensors)
            for f in dataclasses.fields(obj)
        }
        return type(obj)(**values)
    if isinstance(obj, (list, tuple)):
        return type(obj)([replace_tensors(v, tensors) for v in obj])
    return obj
