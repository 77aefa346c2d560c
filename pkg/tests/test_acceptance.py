"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 4-6 share one full training run on the synthetic benchmark via a
session fixture; everything else is self-contained. Run with `-s -v` to
see the per-criterion lines as they complete.
"""

import time

import numpy as np
import pytest

from conftest import params_to_lists
import scalar_oracle

from tsgraph.autodiff import Tensor, finite_difference_check
from tsgraph.cells import (
    ContextGruParams,
    GruParams,
    context_gru_step,
    gru_step,
    replace_tensors,
)
from tsgraph.analysis import (
    aggregate_lags,
    granger_test,
    var_fit,
    var_forecast,
)
from tsgraph.data import (
    SyntheticConfig,
    TimeSeriesFrame,
    chronological_split,
    fit_scaler,
    generate_bivariate,
    stack_windows,
    windows_in_range,
)
from tsgraph.model import Model, ModelConfig, ModelParams, decode_inter, dual_purpose_decode, forward, forward_batch
from tsgraph.training import DataSplits, TrainConfig, evaluate, mse_loss, train
from tsgraph.cli import main as cli_main


def report(criterion: int, ok: bool, detail: str) -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {verdict} - {detail}")
    assert ok, f"criterion {criterion} failed: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient correctness of the full model loss
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    config = ModelConfig(D=2, m=4, enc_hidden=4, dp_hidden=4, dec_hidden=4, seed=11)
    params = ModelParams.init(config)
    rng = np.random.default_rng(11)
    window = rng.uniform(size=(1, config.m, config.D))
    target = rng.uniform(size=(1, config.D))
    leaves = [t for _, t in params.named()]

    def loss_fn(*live):
        rebuilt = replace_tensors(params, iter(live))
        return mse_loss(forward_batch(config, rebuilt, window).y_hat, Tensor(target))

    err = finite_difference_check(loss_fn, leaves, epsilon=1e-5)
    elapsed = time.perf_counter() - start
    report(
        1,
        err < 1e-4 and elapsed < 60.0,
        f"max relative error {err:.3e} over {params.count_parameters()} "
        f"parameters in {elapsed:.1f}s (limits: 1e-4, 60s)",
    )


# ---------------------------------------------------------------------------
# 2. attention invariants over 1000 random forwards
# ---------------------------------------------------------------------------


def test_criterion_2_attention_invariants():
    worst_alpha = worst_beta = 0.0
    min_entry = 1.0
    count = 0
    for model_seed in range(10):
        config = ModelConfig(D=3, m=5, enc_hidden=6, dp_hidden=6, dec_hidden=6, seed=model_seed)
        params = ModelParams.init(config)
        rng = np.random.default_rng(1000 + model_seed)
        for _ in range(100):
            trace = forward(config, params, rng.uniform(size=(config.m, config.D)))
            worst_alpha = max(worst_alpha, float(np.abs(trace.alphas.sum(axis=2) - 1.0).max()))
            worst_beta = max(worst_beta, float(np.abs(trace.betas.sum(axis=1) - 1.0).max()))
            min_entry = min(min_entry, float(trace.alphas.min()), float(trace.betas.min()))
            count += 1
    report(
        2,
        count == 1000 and worst_alpha < 1e-12 and worst_beta < 1e-12 and min_entry > 0.0,
        f"{count} forwards: max row-sum deviation alpha {worst_alpha:.2e}, "
        f"beta {worst_beta:.2e}, smallest coefficient {min_entry:.2e}",
    )


# ---------------------------------------------------------------------------
# 3. scalar-oracle equivalence on 20 random instances per operation
# ---------------------------------------------------------------------------


def test_criterion_3_scalar_oracle_equivalence():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)

        gru = GruParams.init(2, 4, rng)
        x, h = rng.normal(size=2), rng.normal(size=4)
        got = gru_step(gru, Tensor(x), Tensor(h)).data
        want = scalar_oracle.gru_step(params_to_lists(gru), x.tolist(), h.tolist())
        worst = max(worst, float(np.abs(got - np.asarray(want)).max()))

        ctx_cell = ContextGruParams.init(2, 4, 3, rng)
        c = rng.normal(size=3)
        got = context_gru_step(ctx_cell, Tensor(x), Tensor(h), Tensor(c)).data
        want = scalar_oracle.context_gru_step(
            params_to_lists(ctx_cell), x.tolist(), h.tolist(), c.tolist()
        )
        worst = max(worst, float(np.abs(got - np.asarray(want)).max()))

        config = ModelConfig(
            D=2, m=3, enc_hidden=2, dp_hidden=3, dec_hidden=3, seed=seed
        )
        params = ModelParams.init(config)
        encodings = [Tensor(rng.normal(size=4)) for _ in range(config.m)]
        v_seq, alphas = dual_purpose_decode(
            params.dp_cells[0], params.temporal_attention(0), params.dp_outputs[0], encodings
        )
        want_v, want_a = scalar_oracle.dual_purpose_decode(
            params_to_lists(params.dp_cells[0]),
            params_to_lists(params.temporal_attention(0)),
            params_to_lists(params.dp_outputs[0]),
            [e.data.tolist() for e in encodings],
        )
        for got_t, want_t in zip(v_seq + alphas, want_v + want_a):
            worst = max(worst, float(np.abs(got_t.data - np.asarray(want_t)).max()))

        features = [Tensor(rng.normal(size=config.feat_dim)) for _ in range(config.D)]
        y_hat, betas = decode_inter(
            params.decoder_cell, params.decoder_attention, params.readout, features
        )
        readout_lists = {
            "C_o": params.readout.C_o.data.tolist(),
            "U_o": params.readout.U_o.data.tolist(),
            "b_o": params.readout.b_o.data.tolist(),
        }
        want_y, want_b = scalar_oracle.decode_inter(
            params_to_lists(params.decoder_cell),
            params_to_lists(params.decoder_attention),
            readout_lists,
            [f.data.tolist() for f in features],
        )
        worst = max(worst, float(np.abs(y_hat.data - np.asarray(want_y)).max()))
        for got_t, want_t in zip(betas, want_b):
            worst = max(worst, float(np.abs(got_t.data - np.asarray(want_t)).max()))

    report(3, worst < 1e-12, f"max |vectorized - scalar oracle| = {worst:.2e} over 20 instances x 4 ops")


# ---------------------------------------------------------------------------
# 4-6. the synthetic benchmark run (shared fixture)
# ---------------------------------------------------------------------------

BENCH_SEED = 0
BENCH_M = 8
BENCH_WIDTHS = dict(enc_hidden=16, dp_hidden=16, dec_hidden=16)  # from {16,32,48,64}
BENCH_EPOCHS = 200
BENCH_LR = 1e-3
BENCH_BATCH = 64


@pytest.fixture(scope="session")
def benchmark_run():
    """Generate 10k points, train, and collect everything criteria 4-6 need."""
    t_start = time.perf_counter()
    frame, labels = generate_bivariate(SyntheticConfig(length=10000, seed=BENCH_SEED))
    train_r, dev_r, test_r = chronological_split(frame.length)
    scaler = fit_scaler(frame, train_r)
    normalized = scaler.apply_frame(frame)
    splits = DataSplits(
        train=windows_in_range(normalized, BENCH_M, *train_r),
        dev=windows_in_range(normalized, BENCH_M, *dev_r),
        test=windows_in_range(normalized, BENCH_M, *test_r),
    )
    config = ModelConfig(
        D=2, m=BENCH_M, share_temporal_attention=False, seed=BENCH_SEED, **BENCH_WIDTHS
    )
    model = Model.create(config, frame.names)
    model.scaler = scaler
    train_config = TrainConfig(
        epochs=BENCH_EPOCHS,
        batch_size=BENCH_BATCH,
        lr=BENCH_LR,
        early_stop_patience=BENCH_EPOCHS,  # fixed-budget run
        seed=BENCH_SEED,
    )
    model, history = train(model, splits, train_config)
    wall = time.perf_counter() - t_start

    test_x, test_y, test_idx = stack_windows(splits.test)
    betas_chunks, alphas_chunks = [], []
    for s in range(0, len(test_x), 1024):
        tr = forward_batch(config, model.params, test_x[s : s + 1024])
        betas_chunks.append(tr.betas)
        alphas_chunks.append(tr.alphas)
    betas = np.concatenate(betas_chunks)
    alphas = np.concatenate(alphas_chunks)
    window_labels = labels[test_idx]

    metrics = evaluate(model, splits.test)

    var_model = var_fit(
        TimeSeriesFrame(names=frame.names, values=frame.values[slice(*train_r)]),
        BENCH_M,
    )
    start, stop = test_r
    var_errors = np.asarray(
        [
            var_forecast(var_model, frame.values[t - BENCH_M : t]) - frame.values[t]
            for t in range(start + BENCH_M, stop)
        ]
    )
    var_rmse = np.sqrt((var_errors**2).mean(axis=0))

    return {
        "model": model,
        "config": config,
        "history": history,
        "wall": wall,
        "betas": betas,
        "alphas": alphas,
        "labels": window_labels,
        "metrics": metrics,
        "var_rmse": {name: var_rmse[i] for i, name in enumerate(frame.names)},
    }


def test_criterion_4_dependency_recovery(benchmark_run):
    betas = benchmark_run["betas"]
    labels = benchmark_run["labels"]
    rule1 = labels == 1
    rule2 = labels == 2
    diag = (betas[:, 0, :].argmax(axis=1) == 0) & (betas[:, 1, :].argmax(axis=1) == 1)
    b_from_a = betas[:, 1, :].argmax(axis=1) == 0
    rate1 = float(diag[rule1].mean())
    rate2 = float(b_from_a[rule2].mean())
    wall = benchmark_run["wall"]
    report(
        4,
        rate1 >= 0.85 and rate2 >= 0.85 and wall <= 1800.0,
        f"rule-1 diagonal argmax {rate1:.1%} (n={int(rule1.sum())}), "
        f"rule-2 SeriesB<-SeriesA argmax {rate2:.1%} (n={int(rule2.sum())}), "
        f"run wall time {wall:.0f}s (limits: 85%, 85%, 1800s)",
    )


def test_criterion_5_lag_recovery(benchmark_run):
    alphas = benchmark_run["alphas"]
    labels = benchmark_run["labels"]
    profiles = {}
    for rule in (1, 2):
        mask = labels == rule
        for d, name in ((0, "A"), (1, "B")):
            stacked = np.stack([aggregate_lags(a) for a in alphas[mask][:, d]])
            profiles[(rule, name)] = stacked.mean(axis=0)

    def top2(profile):
        return set(np.argsort(profile)[-2:].tolist())

    ok_r1_a = int(profiles[(1, "A")].argmax()) == 4
    ok_r1_b = top2(profiles[(1, "B")]) == {3, 6}
    ok_r2_a = top2(profiles[(2, "A")]) == {3, 6}
    ok_r2_b = int(profiles[(2, "B")].argmax()) == 3
    detail = (
        f"rule-1: A argmax {profiles[(1, 'A')].argmax()} (want 4), "
        f"B top-2 {sorted(top2(profiles[(1, 'B')]))} (want [3, 6]); "
        f"rule-2: A top-2 {sorted(top2(profiles[(2, 'A')]))} (want [3, 6]), "
        f"B argmax {profiles[(2, 'B')].argmax()} (want 3)"
    )
    report(5, ok_r1_a and ok_r1_b and ok_r2_a and ok_r2_b, detail)


def test_criterion_6_forecast_quality(benchmark_run):
    metrics = benchmark_run["metrics"]
    var_rmse = benchmark_run["var_rmse"]
    ok = True
    parts = []
    for name in metrics:
        rmse = metrics[name]["rmse"]
        ok = ok and rmse <= 0.05 and rmse < var_rmse[name]
        parts.append(f"{name}: model {rmse:.4f} vs VAR {var_rmse[name]:.4f}")
    report(6, ok, "; ".join(parts) + " (limits: <= 0.05 and strictly below VAR)")


# ---------------------------------------------------------------------------
# 7. Granger oracle
# ---------------------------------------------------------------------------


def test_criterion_7_granger_oracle():
    # (a) F-statistic matches an independent normal-equations recomputation
    worst_f_gap = 0.0
    for seed in range(10):
        rng = np.random.default_rng(7000 + seed)
        values = rng.normal(size=(300, 2))
        values[1:, 1] += 0.5 * values[:-1, 0]
        frame = TimeSeriesFrame(names=["x", "y"], values=values)
        p = 3
        result = granger_test(frame, "y", "x", p)
        y, x = frame.column("y"), frame.column("x")
        n = len(y) - p
        ones = np.ones(n)
        ylags = [y[p - k : len(y) - k] for k in range(1, p + 1)]
        xlags = [x[p - k : len(x) - k] for k in range(1, p + 1)]
        target = y[p:]

        def rss(cols):
            design = np.column_stack(cols)
            coef = np.linalg.solve(design.T @ design, design.T @ target)
            resid = target - design @ coef
            return float(resid @ resid)

        rss_r = rss([ones] + ylags)
        rss_u = rss([ones] + ylags + xlags)
        brute = ((rss_r - rss_u) / p) / (rss_u / (n - 2 * p - 1))
        worst_f_gap = max(worst_f_gap, abs(brute - result.f_statistic))

    # (b) power: true causes get p < 0.001 in >= 95% of 100 seeded runs
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 400
        values = np.zeros((n, 2))
        for t in range(1, n):
            values[t, 0] = 0.5 * values[t - 1, 0] + rng.normal(scale=0.3)
            values[t, 1] = (
                0.3 * values[t - 1, 1] + 0.4 * values[t - 1, 0] + rng.normal(scale=0.3)
            )
        frame = TimeSeriesFrame(names=["x", "y"], values=values)
        if granger_test(frame, "y", "x", 2).p_value < 0.001:
            hits += 1

    # (c) independent series give approximately uniform p-values
    p_values = []
    for seed in range(200):
        rng = np.random.default_rng(20000 + seed)
        frame = TimeSeriesFrame(names=["x", "y"], values=rng.normal(size=(300, 2)))
        p_values.append(granger_test(frame, "y", "x", 2).p_value)
    p_sorted = np.sort(p_values)
    grid = (np.arange(1, 201)) / 200.0
    ks = float(
        np.max(np.maximum(np.abs(grid - p_sorted), np.abs(grid - 1.0 / 200 - p_sorted)))
    )
    ks_critical = 1.63 / np.sqrt(200)  # 1% level

    report(
        7,
        worst_f_gap < 1e-6 and hits >= 95 and ks < ks_critical,
        f"max |F - brute force| {worst_f_gap:.2e} (limit 1e-6); "
        f"power {hits}/100 runs with p < 0.001 (limit 95); "
        f"KS distance to uniform {ks:.3f} (limit {ks_critical:.3f})",
    )


# ---------------------------------------------------------------------------
# 8. reproducibility of the training command
# ---------------------------------------------------------------------------


def test_criterion_8_reproducible_training(tmp_path):
    gen_dir = tmp_path / "gen"
    assert cli_main(
        ["generate", "--out-dir", str(gen_dir), "--length", "500", "--seed", "21"]
    ) == 0
    flags = [
        "--data", str(gen_dir / "data.csv"),
        "--m", "4", "--enc-hidden", "8", "--dp-hidden", "8", "--dec-hidden", "8",
        "--epochs", "3", "--batch-size", "32", "--seed", "21",
    ]
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert cli_main(["train", *flags, "--out-dir", str(out1)]) == 0
    assert cli_main(["train", *flags, "--out-dir", str(out2)]) == 0
    metrics1 = (out1 / "metrics.csv").read_bytes()
    metrics2 = (out2 / "metrics.csv").read_bytes()
    checkpoints_equal = (out1 / "checkpoint.npz").read_bytes() == (out2 / "checkpoint.npz").read_bytes()
    report(
        8,
        metrics1 == metrics2 and checkpoints_equal,
        f"metrics files byte-identical: {metrics1 == metrics2}; "
        f"checkpoints byte-identical: {checkpoints_equal}",
    )
