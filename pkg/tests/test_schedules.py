import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minidiffusion import ScheduleError, ScheduleTable, build_schedule, extract, linear_beta_schedule
from minidiffusion.schedules import CSV_COLUMNS, write_schedule_csv

TOY_BETAS = np.array([0.1, 0.2, 0.3])  # alphas [0.9, 0.8, 0.7]


def test_linear_betas_t1000_endpoints_exact():
    betas = linear_beta_schedule(1000)
    assert betas[0] == 0.0003 and betas[-1] == 0.03


def test_linear_betas_t300_endpoints_exact():
    betas = linear_beta_schedule(300)
    scale = 1000 / 300
    assert betas[0] == 0.0003 * scale == 0.001
    assert betas[-1] == 0.03 * scale == 0.1


def test_linear_betas_t2_formula_and_rejection():
    # hand evaluation: scale 500 -> [0.15, 15.0]; invalid downstream since beta >= 1
    betas = linear_beta_schedule(2)
    assert np.allclose(betas, [0.15, 15.0])
    with pytest.raises(ScheduleError):
        ScheduleTable.from_betas(betas)


def test_linear_betas_needs_two_steps():
    with pytest.raises(ScheduleError):
        linear_beta_schedule(1)


def test_toy_table_cumulative_products():
    table = ScheduleTable.from_betas(TOY_BETAS)
    assert np.allclose(table.alphas_cumprod, [0.9, 0.72, 0.504])
    assert np.allclose(table.alphas_cumprod_prev, [1.0, 0.9, 0.72])


def test_toy_table_posterior_coefficients():
    table = ScheduleTable.from_betas(TOY_BETAS)
    assert np.allclose(table.posterior_variance, [0.0, 0.0714286, 0.1693548], atol=1e-6)
    assert abs(table.posterior_mean_coef1[1] - 0.677631) < 1e-5
    assert abs(table.posterior_mean_coef2[1] - 0.319438) < 1e-5


def test_rebuild_is_bitwise_identical():
    a, b = build_schedule(300), build_schedule(300)
    for name in CSV_COLUMNS[1:]:
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_monotonicity_invariants():
    table = build_schedule(300)
    assert np.all(np.diff(table.alphas_cumprod) < 0)
    assert np.all(np.diff(table.sqrt_one_minus_alphas_cumprod) > 0)
    assert np.all((table.sqrt_one_minus_alphas_cumprod > 0) & (table.sqrt_one_minus_alphas_cumprod < 1))


def test_recip_identity():
    table = build_schedule(300)
    assert np.abs(table.sqrt_recip_alphas_cumprod**2 * table.alphas_cumprod - 1.0).max() < 1e-12


def test_log_variance_clipping():
    table = build_schedule(300)
    assert table.posterior_variance[0] == 0.0
    assert table.posterior_log_variance_clipped[0] == np.log(1e-20)
    assert np.all(table.posterior_variance[1:] > 0)
    assert np.array_equal(
        table.posterior_log_variance_clipped[1:], np.log(table.posterior_variance[1:])
    )


def test_table_is_immutable():
    table = build_schedule(10)
    with pytest.raises(ValueError):
        table.betas[0] = 0.5


@settings(max_examples=25, deadline=None)
@given(t=st.integers(2, 2000))
def test_schedule_valid_for_reasonable_t(t):
    # the scaled formula stays inside (0, 1) for T >= 34 and fails below
    betas = linear_beta_schedule(t)
    if betas.max() < 1.0:
        table = ScheduleTable.from_betas(betas)
        assert table.timesteps == t
    else:
        with pytest.raises(ScheduleError):
            ScheduleTable.from_betas(betas)


def test_extract_gathers_and_reshapes():
    out = extract(np.array([10.0, 20.0, 30.0]), np.array([2, 0]), target_rank=4)
    assert out.shape == (2, 1, 1, 1)
    assert out.dtype == np.float32
    assert np.array_equal(out.ravel(), [30.0, 10.0])


def test_extract_matches_published_t300_values():
    table = build_schedule(300)
    picks = extract(table.sqrt_alphas_cumprod, np.array([75, 112, 268, 207, 90]), 4)
    expected = [0.5979, 0.3268, 0.0018, 0.0234, 0.4814]
    assert np.abs(picks.ravel() - expected).max() < 5e-4


def test_extract_bounds_and_validation():
    a = np.array([1.0, 2.0, 3.0])
    with pytest.raises(IndexError):
        extract(a, np.array([3]), 2)
    with pytest.raises(IndexError):
        extract(a, np.array([-1]), 2)
    with pytest.raises(TypeError):
        extract(a, np.array([0.5]), 2)


def test_extract_respects_requested_dtype():
    a = np.array([1.0 / 3.0])
    assert extract(a, np.array([0]), 1, dtype=np.float64)[0] == a[0]


def test_csv_dump_layout_and_precision():
    table = build_schedule(10)
    buf = io.StringIO()
    write_schedule_csv(table, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 11
    row0 = lines[1].split(",")
    assert int(row0[0]) == 0
    assert float(row0[CSV_COLUMNS.index("posterior_variance")]) == 0.0
    # full-precision reprs round-trip bit for bit
    assert float(row0[CSV_COLUMNS.index("betas")]) == table.betas[0]
    buf2 = io.StringIO()
    write_schedule_csv(table, buf2)
    assert buf.getvalue() == buf2.getvalue()
