"""Dependency artifacts from attention traces, plus VAR and Granger
baselines for cross-checking discovered structure."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .data import TimeSeriesFrame
from .errors import ContractViolation, FitError

__all__ = [
    "DependencyGraph",
    "GraphEdge",
    "LagProfile",
    "GrangerResult",
    "VarModel",
    "build_graph",
    "aggregate_lags",
    "var_fit",
    "var_forecast",
    "granger_test",
    "export_graph",
    "graph_from_json",
    "f_survival",
]


@dataclass(frozen=True)
class GraphEdge:
    source: str
    target: str
    weight: float
    tier: str  # "primary" | "secondary"


@dataclass(frozen=True)
class DependencyGraph:
    """Directed weighted graph over the series at one timestamp.

    An edge source -> target says the target series' next value depends on
    the source series; the full coefficient matrix is retained so
    thresholding never loses information.
    """

    timestamp: int
    nodes: list[str]
    edges: list[GraphEdge]
    beta_matrix: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and self.nodes == other.nodes
            and self.edges == other.edges
            and np.array_equal(self.beta_matrix, other.beta_matrix)
        )


@dataclass(frozen=True)
class LagProfile:
    """Per-series attention mass over input lags, latest lag indexed 0."""

    series: dict[str, np.ndarray] = field(default_factory=dict)


def build_graph(
    betas: np.ndarray,
    names: Sequence[str],
    threshold_primary: float | None = None,
    threshold_secondary: float | None = None,
    timestamp: int = 0,
) -> DependencyGraph:
    """Threshold a row-stochastic coefficient matrix into a tiered graph.

    Row i holds target series i's coefficients over all sources. Default
    tiers are relative to the uniform weight 1/D: primary at 1.5x uniform,
    secondary at 0.75x uniform.
    """
    betas = np.asarray(betas, dtype=np.float64)
    d = len(names)
    if betas.shape != (d, d):
        raise ContractViolation(f"betas must be ({d}, {d}), got {betas.shape}")
    row_sums = betas.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6 or (betas < 0).any():
        raise ContractViolation(
            f"betas rows must be stochastic; row sums are {row_sums.tolist()}"
        )
    if threshold_primary is None:
        threshold_primary = 1.5 / d
    if threshold_secondary is None:
        threshold_secondary = 0.75 / d
    edges = []
    for i, target in enumerate(names):
        for j, source in enumerate(names):
            weight = float(betas[i, j])
            if weight >= threshold_secondary:
                tier = "primary" if weight >= threshold_primary else "secondary"
                edges.append(GraphEdge(source=source, target=target, weight=weight, tier=tier))
    return DependencyGraph(
        timestamp=timestamp, nodes=list(names), edges=edges, beta_matrix=betas.copy()
    )


def aggregate_lags(alphas: np.ndarray) -> np.ndarray:
    """Collapse one series' (m, m) temporal coefficients to a lag profile.

    Columns (window positions) are averaged over decode steps and
    renormalized; the result is reindexed so the latest timepoint is lag 0.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 2 or alphas.shape[0] != alphas.shape[1]:
        raise ContractViolation(f"alphas must be square, got {alphas.shape}")
    row_sums = alphas.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6 or (alphas < 0).any():
        raise ContractViolation("alphas rows must be stochastic")
    profile = alphas.mean(axis=0)
    profile = profile / profile.sum()
    return profile[::-1].copy()  # window position m-1 (latest) becomes lag 0


# ---------------------------------------------------------------------------
# VAR baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarModel:
    """Linear vector autoregression fitted by per-equation least squares."""

    lag_order: int
    intercept: np.ndarray  # (D,)
    coefficients: np.ndarray  # (p, D, D); [k, i, j] = effect of series j at lag k+1 on series i


def _lag_design(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Regression design: rows [1, x_{t-1}, ..., x_{t-p}] and targets x_t."""
    t_len, d = values.shape
    rows = t_len - p
    design = np.empty((rows, 1 + d * p))
    design[:, 0] = 1.0
    for k in range(1, p + 1):
        design[:, 1 + (k - 1) * d : 1 + k * d] = values[p - k : t_len - k]
    targets = values[p:]
    return design, targets


def var_fit(frame: TimeSeriesFrame, p: int) -> VarModel:
    if p < 1:
        raise ContractViolation("lag order must be at least 1")
    t_len, d = frame.values.shape
    if t_len <= d * p + 1:
        raise ContractViolation(
            f"need more than {d * p + 1} rows to fit a VAR({p}) over {d} series"
        )
    design, targets = _lag_design(frame.values, p)
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        raise FitError(
            f"rank-deficient design (rank {rank} < {design.shape[1]}); "
            f"try a smaller lag order than {p}"
        )
    solution, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    intercept = solution[0].copy()
    coefficients = np.empty((p, d, d))
    for k in range(p):
        # solution rows 1+k*d .. 1+(k+1)*d hold lag k+1 blocks, per source series
        coefficients[k] = solution[1 + k * d : 1 + (k + 1) * d].T
    return VarModel(lag_order=p, intercept=intercept, coefficients=coefficients)


def var_forecast(model: VarModel, history: np.ndarray) -> np.ndarray:
    """One-step forecast from the last `lag_order` rows (oldest first)."""
    history = np.asarray(history, dtype=np.float64)
    p = model.lag_order
    d = model.intercept.shape[0]
    if history.ndim != 2 or history.shape[0] < p or history.shape[1] != d:
        raise ContractViolation(
            f"history must be at least ({p}, {d}), got {history.shape}"
        )
    out = model.intercept.copy()
    for k in range(p):
        out += model.coefficients[k] @ history[-1 - k]
    return out


# ---------------------------------------------------------------------------
# Granger causality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrangerResult:
    f_statistic: float
    p_value: float
    lag_order: int
    rss_restricted: float
    rss_unrestricted: float


def f_survival(x: float, dfn: int, dfd: int) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if x <= 0:
        return 1.0
    return float(betainc(dfd / 2.0, dfn / 2.0, dfd / (dfd + dfn * x)))


def _ols_rss(design: np.ndarray, target: np.ndarray) -> float:
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise FitError(
            f"rank-deficient design (rank {rank} < {design.shape[1]}); "
            "try a smaller lag order"
        )
    resid = target - design @ coef
    return float(resid @ resid)


def granger_test(
    frame: TimeSeriesFrame, target: str, candidate: str, p: int
) -> GrangerResult:
    """F-test of whether the candidate's lags improve the target's
    autoregression.

    Restricted model: target on its own p lags (plus intercept).
    Unrestricted: additionally the candidate's p lags. The statistic is
    ((RSS_r - RSS_u)/p) / (RSS_u/(n - 2p - 1)) with n regression rows.
    """
    if target == candidate:
        raise ContractViolation("candidate must differ from target")
    if p < 1:
        raise ContractViolation("lag order must be at least 1")
    y = frame.column(target)
    x = frame.column(candidate)
    n = len(y) - p
    if n <= 2 * p + 1:
        raise ContractViolation(
            f"need more than {3 * p + 1} rows for a lag-{p} test, have {len(y)}"
        )
    restricted = np.empty((n, 1 + p))
    unrestricted = np.empty((n, 1 + 2 * p))
    restricted[:, 0] = 1.0
    unrestricted[:, 0] = 1.0
    for k in range(1, p + 1):
        restricted[:, k] = y[p - k : len(y) - k]
        unrestricted[:, k] = y[p - k : len(y) - k]
        unrestricted[:, p + k] = x[p - k : len(x) - k]
    target_rows = y[p:]
    rss_r = _ols_rss(restricted, target_rows)
    rss_u = _ols_rss(unrestricted, target_rows)
    dfd = n - 2 * p - 1
    f_stat = ((rss_r - rss_u) / p) / (rss_u / dfd)
    return GrangerResult(
        f_statistic=float(f_stat),
        p_value=f_survival(float(f_stat), p, dfd),
        lag_order=p,
        rss_restricted=rss_r,
        rss_unrestricted=rss_u,
    )


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_graph(graph: DependencyGraph, format: str) -> str:
    """Serialize a graph deterministically as JSON or DOT text."""
    if format == "json":
        payload = {
            "timestamp": graph.timestamp,
            "nodes": graph.nodes,
            "edges": [
                {
                    "source": e.source,
                    "target": e.target,
                    "weight": e.weight,
                    "tier": e.tier,
                }
                for e in graph.edges
            ],
            "beta_matrix": graph.beta_matrix.tolist(),
        }
        return json.dumps(payload, indent=2)
    if format == "dot":
        lines = [f'digraph dependencies_{graph.timestamp} {{', "  rankdir=LR;"]
        for node in graph.nodes:
            lines.append(f'  "{node}";')
        for e in graph.edges:
            style = "solid" if e.tier == "primary" else "dashed"
            penwidth = 0.5 + 4.0 * e.weight
            lines.append(
                f'  "{e.source}" -> "{e.target}" '
                f'[penwidth={penwidth:.3f}, style={style}, label="{e.weight:.3f}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ContractViolation(f"unknown export format {format!r}; use 'json' or 'dot'")


def graph_from_json(text: str) -> DependencyGraph:
    payload = json.loads(text)
    return DependencyGraph(
        timestamp=payload["timestamp"],
        nodes=list(payload["nodes"]),
        edges=[GraphEdge(**e) for e in payload["edges"]],
        beta_matrix=np.asarray(payload["beta_matrix"], dtype=np.float64),
    )
