"""tsgraph: dependency discovery and forecasting for multivariate time series.

A multi-level attention recurrent architecture reads D parallel series
through per-series bidirectional GRU encoders, decodes time-lagged
structure with temporal attention, and decodes inter-series structure
with a second attention stage, emitting directed weighted dependency
graphs alongside next-step forecasts. Everything trains end-to-end on a
small built-in reverse-mode autodiff tape.
"""

from .autodiff import Tape, Tensor, backward, finite_difference_check
from .cells import (
    AttentionParams,
    ContextGruParams,
    GruParams,
    attention_weights,
    bidirectional_encode,
    context_gru_step,
    context_vector,
    gru_step,
)
from .data import (
    Scaler,
    SyntheticConfig,
    TimeSeriesFrame,
    WindowSample,
    chronological_split,
    fit_scaler,
    generate_bivariate,
    load_csv,
    make_windows,
)
from .model import (
    ForwardTrace,
    Model,
    ModelConfig,
    ModelParams,
    decode_inter,
    dual_purpose_decode,
    forward,
    multi_step_forward,
    transform_features,
)
from .training import AdamState, TrainConfig, adam_step, evaluate, mse_loss, train
from .analysis import (
    DependencyGraph,
    GrangerResult,
    LagProfile,
    VarModel,
    aggregate_lags,
    build_graph,
    export_graph,
    granger_test,
    var_fit,
    var_forecast,
)

__version__ = "0.1.0"
