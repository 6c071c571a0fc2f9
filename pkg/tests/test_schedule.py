import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthcons.model import DepthVideo
from depthcons.schedule import (NormalizationError, ScheduleTable, build_schedule, make_spacing,
                                mean_shift_diagnostic, q_sample, snr)

# 40-digit products of (1 - beta) computed once with mpmath
ALPHA_BAR_LINEAR_1000 = 0.001578962930551441621
SNR_LINEAR_1000 = 0.001581459997263270309
ALPHA_BAR_SCALED_1000 = 0.004660098513077240404


def test_linear_schedule_terminal_values():
    table = build_schedule()
    ab = table.alpha_bar_at(1000)
    assert 0.00155 <= ab <= 0.00170
    assert 0.9991 <= np.sqrt(1 - ab) <= 0.9993
    assert ab == pytest.approx(ALPHA_BAR_LINEAR_1000, rel=1e-12)
    assert snr(table, 1000) == pytest.approx(SNR_LINEAR_1000, rel=1e-12)


def test_scaled_linear_schedule():
    table = build_schedule("scaled_linear")
    assert table.alpha_bar_at(1000) == pytest.approx(ALPHA_BAR_SCALED_1000, rel=1e-12)
    assert table.beta[0] == pytest.approx(0.00085) and table.beta[-1] == pytest.approx(0.012)


def test_single_step_schedule():
    table = build_schedule(beta_start=0.5, beta_end=0.5, train_steps=1)
    assert table.alpha_bar_at(1) == 0.5
    assert snr(table, 1) == 1.0


def test_schedule_rejects_bad_range():
    with pytest.raises(ValueError):
        build_schedule(beta_start=0.02, beta_end=0.01)
    with pytest.raises(ValueError):
        build_schedule(beta_end=1.0)


def test_snr_rejects_t_zero():
    with pytest.raises(ValueError):
        snr(build_schedule(), 0)
    with pytest.raises(ValueError):
        snr(build_schedule(), 1001)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-5, 0.1), st.floats(0, 0.5), st.integers(1, 2000), st.sampled_from(["linear", "scaled_linear"]))
def test_schedule_monotonic(start, extra, steps, kind):
    table = build_schedule(kind, start, min(start + extra, 0.99), steps)
    assert np.all(np.diff(table.alpha_bar) < 0)
    assert np.all(np.diff(table.snr_values) < 0)
    running = np.cumprod(1 - table.beta)
    np.testing.assert_allclose(table.alpha_bar, running, rtol=1e-12)
    for t in (1, steps):
        a, b = table.coefficients(t)
        assert a * a + b * b == pytest.approx(1.0, abs=1e-12)


def test_trailing_and_leading_spacing():
    assert make_spacing(1000, 4, "trailing").timesteps == (1000, 750, 500, 250)
    assert make_spacing(1000, 4, "leading").timesteps == (751, 501, 251, 1)
    assert make_spacing(5, 5).timesteps == (5, 4, 3, 2, 1)
    with pytest.raises(ValueError):
        make_spacing(10, 11)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 3000), st.integers(1, 3000))
def test_spacing_properties(T, n):
    if n > T:
        return
    tr = make_spacing(T, n, "trailing").timesteps
    le = make_spacing(T, n, "leading").timesteps
    assert tr[0] == T and len(tr) == n and len(le) == n
    assert all(b < a for a, b in zip(tr, tr[1:]))
    assert all(1 <= t <= T for t in tr + le)
    assert le[-1] == 1
    if n < T:
        assert T not in le


def test_q_sample_zero_signal_and_smallest_t():
    table = build_schedule()
    noise = np.random.default_rng(0).standard_normal((3, 4))
    out = q_sample(np.zeros((3, 4)), table, 500, noise)
    assert np.array_equal(out, table.coefficients(500)[1] * noise)
    a, _ = table.coefficients(1)
    assert a == pytest.approx(np.sqrt(1 - 0.00085), rel=1e-15)
    with pytest.raises(ValueError):
        q_sample(np.zeros(3), table, 0, np.zeros(3))
    with pytest.raises(ValueError):
        q_sample(np.zeros(3), table, 10, np.zeros(4))


def test_q_sample_seeded_is_reproducible():
    table = build_schedule()
    x = np.ones((5, 5))
    assert np.array_equal(q_sample(x, table, 250, seed=4), q_sample(x, table, 250, seed=4))
    assert not np.array_equal(q_sample(x, table, 250, seed=4), q_sample(x, table, 250, seed=5))


def test_q_sample_monte_carlo_variance():
    table = build_schedule()
    x0 = np.full(100_000, 0.7)
    out = q_sample(x0, table, 300, seed=11)
    a, _ = table.coefficients(300)
    var = np.var(out - a * x0)
    assert var == pytest.approx(1 - table.alpha_bar_at(300), rel=0.02)


def test_mean_shift_diagnostic():
    gt = DepthVideo(np.random.default_rng(1).uniform(1, 3, (4, 5, 6)))
    d = mean_shift_diagnostic(gt, gt)
    np.testing.assert_array_equal(d[:, 0], d[:, 1])
    shifted = DepthVideo(gt.frames + 5.0)
    np.testing.assert_allclose(mean_shift_diagnostic(shifted, gt)[:, 0], d[:, 1], atol=1e-12)
    with pytest.raises(NormalizationError):
        mean_shift_diagnostic(DepthVideo(np.ones((2, 2, 2))), DepthVideo(np.ones((2, 2, 2))))


def test_mean_shift_tracks_injected_drift():
    base = np.tile(np.linspace(1, 2, 12).reshape(3, 4), (6, 1, 1))
    drift = np.linspace(0, 0.5, 6)
    pred = DepthVideo(base + drift[:, None, None])
    d = mean_shift_diagnostic(pred, DepthVideo(base))
    span_p = (base.max() + 0.5) - base.min()
    expected = (base.mean(axis=(1, 2)) + drift - base.min()) / span_p
    np.testing.assert_allclose(d[:, 0], expected, atol=1e-9)


def test_schedule_table_validates_beta():
    with pytest.raises(ValueError):
        ScheduleTable(np.array([0.1, 1.0]))
