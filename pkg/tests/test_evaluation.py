"""Evaluation harness: references, error tables/series, suites, dumps.

The load-bearing claims: the block-averaged fine-grid reference restricts
exactly (hand-computed averages, factor-1 identity), the policy runner is
bit-identical to the monolithic baseline solver for the scheme-equivalent
policy, divergence is reported as sentinels rather than silently dropped,
and CSV emission round-trips floats losslessly.

Self-convergence bounds are frozen from measurement: with forward-Euler
stepping the reference's leading error is the O(dt) temporal term, so
doubling the refinement factor moves reported errors by about 1/16 (both
dt and dx halve) -- the frozen bounds leave ~1.5x margin over that.
"""

import csv
import io

import numpy as np
import pytest

from wenorl import evaluation as ev
from wenorl.envs import EnvSpec
from wenorl.grid import Grid, l2_error
from wenorl.ics import ICSpec, named_ic
from wenorl.policy import N_PARAMS, init_params, views
from wenorl.weno import BlowupError, solve


def flat_ic(value=1.0):
    """A constant Burgers profile (every stencil identical)."""
    return ICSpec("flat", "burgers", "periodic", 0.0, 1.0, 0.2,
                  lambda x: np.full_like(x, value))


def overflow_ic():
    """Amplitudes beyond the float range: the very first step overflows."""
    return ICSpec("overflow", "burgers", "periodic", 0.0, 1.0, 0.2,
                  lambda x: np.full_like(x, 1e200) * np.sign(x - 0.5))


def downwind_theta():
    """A policy that one-hots the most downwind candidate on both heads.

    A pure downwind choice is anti-diffusive for the split fluxes, so any
    discontinuous profile blows up within a few hundred fixed steps -- a
    deterministic divergence trigger for sentinel tests.
    """
    theta = np.zeros(N_PARAMS)
    *_, b3 = views(theta)
    b3[2] = 50.0
    b3[5] = 50.0
    return theta


# ------------------------------------------------------ reference solution

def test_reference_block_average_matches_hand_computed():
    ic = named_ic("gaussian")
    n, factor = 16, 4
    ref0 = ev.reference_solution(ic, n, [0.0], factor=factor)[0]
    fine = ic.evaluate(ic.grid(factor * n))
    manual = np.empty((1, n))
    for i in range(n):
        manual[0, i] = np.mean(fine[0, factor * i:factor * (i + 1)])
    np.testing.assert_allclose(ref0, manual, rtol=0, atol=1e-15)


def test_reference_factor_one_is_the_baseline_solver():
    ic = named_ic("standing_sine")
    times = [0.0, 0.03, 0.07]
    ref = ev.reference_solution(ic, 24, times, factor=1, cfl=0.3)
    direct = solve(np.atleast_2d(ic.evaluate(ic.grid(24))), ic.grid(24),
                   "burgers", times, cfl=0.3)
    assert np.array_equal(ref, direct)


def test_reference_constant_ic_stays_constant():
    ref = ev.reference_solution(flat_ic(1.0), 16, [0.0, 0.1, 0.2], factor=2)
    assert np.array_equal(ref, np.ones_like(ref))


def test_reference_trajectory_shape_and_fixed_dt_requirement():
    ic = named_ic("standing_sine")
    spec = EnvSpec("burgers", ic.grid(16), 3, dt=0.0004)
    traj = ev.reference_trajectory(ic, spec, factor=2)
    assert traj.shape == (4, 1, 16)
    assert np.all(np.isfinite(traj))
    cfl_spec = EnvSpec("burgers", ic.grid(16), 3, dt_mode="cfl", cfl=0.5)
    with pytest.raises(ValueError, match="fixed dt"):
        ev.reference_trajectory(ic, cfl_spec, factor=2)


def test_sod_reference_resolves_three_waves():
    """Density at t=0.2 shows rarefaction, contact, and shock plateaus.

    The plateau levels are the star states of the exact Riemann solution
    (rho*_left = 0.426319..., rho*_right = 0.265573...), computed once from
    the pressure iteration and frozen here.
    """
    ic = named_ic("sod")
    rho = ev.reference_solution(ic, 128, [0.2], factor=2)[0][0]
    assert abs(rho[0] - 1.0) < 1e-6 and abs(rho[-1] - 0.125) < 1e-6
    assert np.any(np.abs(rho - 0.42631942817849544) < 0.02 * 0.42631942817849544)
    assert np.any(np.abs(rho - 0.26557371170530708) < 0.02 * 0.26557371170530708)
    # the three levels are traversed monotonically left to right
    i_star_l = int(np.argmin(np.abs(rho - 0.4263)))
    i_star_r = int(np.argmin(np.abs(rho - 0.2656)))
    assert 0 < i_star_l < i_star_r < 127


# ----------------------------------------------------------- policy runner

def test_evolve_weno_policy_is_bitwise_the_monolithic_solver():
    ic = named_ic("standing_sine")
    u0 = ic.evaluate(ic.grid(32))
    times = [0.05, 0.11]
    res = ev.evolve_policy(ic, u0, times, cfl=0.3)
    direct = solve(np.atleast_2d(u0), ic.grid(32), "burgers", times, cfl=0.3)
    assert not res.diverged
    assert np.array_equal(res.states, direct)


def test_evolve_policy_argument_validation():
    ic = named_ic("standing_sine")
    u0 = ic.evaluate(ic.grid(16))
    with pytest.raises(ValueError, match="exactly one"):
        ev.evolve_policy(ic, u0, [0.1])
    with pytest.raises(ValueError, match="exactly one"):
        ev.evolve_policy(ic, u0, [0.1], dt=0.001, cfl=0.5)
    with pytest.raises(ValueError, match="policy"):
        ev.evolve_policy(ic, u0, [0.1], cfl=0.5, policy="upwind")
    with pytest.raises(ValueError, match="ascending"):
        ev.evolve_policy(ic, u0, [0.1, 0.05], cfl=0.5)


def test_evolve_policy_flags_divergence_with_nan_states():
    ic = overflow_ic()
    u0 = ic.evaluate(ic.grid(16))
    with np.errstate(all="ignore"):
        res = ev.evolve_policy(ic, u0, [0.05, 0.1], cfl=0.4)
    assert res.diverged
    assert res.blowup_time is not None
    assert np.all(np.isnan(res.states))


def test_evolve_net_policy_runs_and_differs_from_weno():
    ic = named_ic("tophat")
    u0 = ic.evaluate(ic.grid(32))
    theta = init_params(0)  # zero head: uniform thirds, not WENO weights
    res_net = ev.evolve_policy(ic, u0, [0.02], theta=theta, policy="net",
                               dt=0.0004)
    res_weno = ev.evolve_policy(ic, u0, [0.02], dt=0.0004)
    assert not res_net.diverged and not res_weno.diverged
    assert not np.array_equal(res_net.states, res_weno.states)


# ------------------------------------------------------------- error table

def test_error_table_shape_and_refinement():
    rows = ev.error_table(["standing_sine"], [16, 32], t_end=0.02, factor=2)
    assert [(r.ic, r.n_cells) for r in rows] == [("standing_sine", 16),
                                                 ("standing_sine", 32)]
    assert all(r.t_end == 0.02 and not r.diverged for r in rows)
    assert rows[0].error > rows[1].error > 0.0  # smooth, pre-shock: converges


def test_error_table_is_deterministic():
    a = ev.error_table(["double_sine"], [16], t_end=0.01, factor=2)
    b = ev.error_table(["double_sine"], [16], t_end=0.01, factor=2)
    assert a[0].error == b[0].error


def test_error_table_divergence_sentinel():
    with np.errstate(all="ignore"):
        rows = ev.error_table([overflow_ic()], [16], t_end=0.05, factor=2)
    assert rows[0].diverged
    assert np.isnan(rows[0].error)


def test_error_table_accepts_net_policy():
    theta = init_params(0)
    rows = ev.error_table(["standing_sine"], [16], theta=theta, policy="net",
                          t_end=0.01, factor=2)
    assert not rows[0].diverged and rows[0].error > 0.0


# ------------------------------------------------------------ error series

def test_error_series_length_and_start():
    ic = named_ic("standing_sine")
    pts = ev.error_series(ic, 16, t_end=0.02, dt=0.004, factor=1)
    assert len(pts) == 6  # T+1 entries for T = t_end/dt steps
    assert [p.step for p in pts] == list(range(6))
    assert pts[0].time == 0.0 and pts[0].error == 0.0  # factor 1: same state
    assert pts[-1].time == pytest.approx(0.02)
    assert all(np.isfinite(p.error) for p in pts)


def test_error_series_partial_final_step_is_dropped():
    ic = named_ic("standing_sine")
    pts = ev.error_series(ic, 16, t_end=0.021, dt=0.004, factor=1)
    assert len(pts) == 6 and pts[-1].time == pytest.approx(0.02)


def test_error_series_t0_gap_is_representation_only():
    # midpoint-sampled ICs vs block-averaged fine ICs differ at t=0 by the
    # sampling gap, ~1e-4 for smooth profiles (two orders below the signal)
    ic = named_ic("standing_sine")
    pts = ev.error_series(ic, 64, t_end=0.002, dt=0.001)
    assert pts[0].error < 2e-3


def test_error_series_nan_tail_after_policy_blowup():
    ic = named_ic("tophat")
    with np.errstate(all="ignore"):
        pts = ev.error_series(ic, 32, theta=downwind_theta(), policy="net",
                              factor=2)
    errs = np.array([p.error for p in pts])
    assert len(pts) == 501  # 0.2 / 0.0004 steps, plus the initial state
    assert np.isfinite(errs[0])
    assert np.isnan(errs[-1])
    # scored up to the blowup (possibly inf as the state grows), NaN after
    k = int(np.argmax(np.isnan(errs)))
    assert np.all(np.isnan(errs[k:])) and not np.any(np.isnan(errs[:k]))


# ------------------------------------------------------------ random suite

def test_random_suite_counts_families_and_determinism():
    theta = init_params(0)
    rows = ev.run_random_suite(theta, 3, seed=7, factor=2, t_end=0.02)
    assert [r.index for r in rows] == [0, 1, 2]
    assert [r.family for r in rows] == ["random_sine", "random_shock",
                                        "random_rarefaction"]
    assert all(64 <= r.n_cells <= 1024 for r in rows)
    assert all(np.isfinite(r.error_weno) and not r.diverged_weno
               for r in rows)
    again = ev.run_random_suite(theta, 3, seed=7, factor=2, t_end=0.02)
    for a, b in zip(rows, again):
        assert (a.error_policy, a.error_weno, a.params) == \
            (b.error_policy, b.error_weno, b.params)


def test_random_suite_flags_divergence_per_policy():
    with np.errstate(all="ignore"):
        rows = ev.run_random_suite(downwind_theta(), 2, seed=1, factor=2,
                                   t_end=0.1)
    assert any(r.diverged_policy for r in rows)
    assert all(not r.diverged_weno for r in rows)
    for r in rows:
        if r.diverged_policy:
            assert np.isnan(r.error_policy)
            assert np.isfinite(r.error_weno)


def test_random_suite_progress_callback():
    seen = []
    ev.run_random_suite(init_params(0), 2, seed=3, factor=2, t_end=0.01,
                        progress=lambda i, n: seen.append((i, n)))
    assert seen == [(1, 2), (2, 2)]


# ------------------------------------------------------------ action dumps

def test_action_dump_constant_regions_give_optimal_weights():
    theta = init_params(0)
    dump = ev.action_dump(named_ic("tophat"), 32, theta, t_query=0.0)
    assert dump.step == 0 and dump.time == 0.0
    # interface 2 sits deep in the u=0 plateau; 16 in the u=1 plateau
    for i in (2, 16):
        np.testing.assert_allclose(dump.weno_plus[0, i], [0.1, 0.6, 0.3],
                                   atol=1e-9)
        np.testing.assert_allclose(dump.weno_minus[0, i], [0.1, 0.6, 0.3],
                                   atol=1e-9)
    # the zero-head policy emits uniform thirds everywhere
    np.testing.assert_allclose(dump.w_plus, 1.0 / 3.0, atol=1e-15)


def test_action_dump_second_to_last_and_convexity():
    theta = init_params(0)
    ic = named_ic("standing_sine")
    dump = ev.action_dump(ic, 32, theta)
    assert dump.step == 499  # 500 fixed steps cover t_max=0.2
    assert dump.time == pytest.approx(499 * 0.0004)
    assert dump.x.shape == (33,)
    for w in (dump.w_plus, dump.w_minus, dump.weno_plus, dump.weno_minus):
        assert w.shape == (1, 33, 3)
        assert np.abs(w.sum(axis=-1) - 1.0).max() < 1e-12
        assert w.min() >= 0.0


def test_action_dump_rejects_out_of_range_query():
    with pytest.raises(ValueError, match="horizon"):
        ev.action_dump(named_ic("standing_sine"), 16, init_params(0),
                       t_query=0.5)


def test_action_dump_raises_on_divergence():
    with np.errstate(all="ignore"):
        with pytest.raises(BlowupError):
            ev.action_dump(named_ic("tophat"), 32, downwind_theta())


# ------------------------------------------------- self-convergence bounds

def test_reference_self_convergence_smooth_short_time():
    """Doubling the factor moves the reference far less than the error.

    Forward-Euler stepping makes the reference first-order in dt, so the
    factor-8 to factor-16 difference is ~1/16 of the measured error (dt and
    dx both halve); frozen bound 0.10 with margin.
    """
    ic = named_ic("standing_sine")
    t = 0.05  # before shock formation at t*=0.1: still smooth
    r8 = ev.reference_solution(ic, 64, [t], factor=8)
    r16 = ev.reference_solution(ic, 64, [t], factor=16)
    dx = ic.grid(64).dx
    res = ev.evolve_policy(ic, ic.evaluate(ic.grid(64)), [t],
                           cfl=ev.REFERENCE_CFL)
    err8 = l2_error(res.states[0], r8[0], dx)
    assert l2_error(r8[0], r16[0], dx) < 0.10 * err8


@pytest.mark.parametrize("name", ["standing_sine", "tophat", "sod"])
def test_reported_error_stable_under_factor_doubling(name):
    ic = named_ic(name)
    e8 = ev.error_table([ic], [64], factor=8)[0].error
    e16 = ev.error_table([ic], [64], factor=16)[0].error
    assert abs(e16 - e8) / e8 < 0.15


# -------------------------------------------------------------- csv output

def test_csv_floats_round_trip_exactly(tmp_path):
    rows = ev.error_table(["standing_sine"], [16], t_end=0.01, factor=2)
    path = tmp_path / "table_standing_sine_16.csv"
    ev.write_csv(path, ev.TABLE_HEADER, ev.table_rows(rows))
    with open(path, newline="") as fh:
        read = list(csv.reader(fh))
    assert read[0] == list(ev.TABLE_HEADER)
    assert float(read[1][3]) == rows[0].error
    assert ev.csv_text(ev.TABLE_HEADER, ev.table_rows(rows)) == \
        open(path).read()


def test_csv_series_and_suite_shapes():
    ic = named_ic("standing_sine")
    pts = ev.error_series(ic, 16, t_end=0.008, dt=0.004, factor=1)
    text = ev.csv_text(ev.SERIES_HEADER, ev.series_rows(pts))
    lines = text.strip().splitlines()
    assert lines[0] == "step,time,l2_error"
    assert len(lines) == len(pts) + 1
    rows = ev.run_random_suite(init_params(0), 2, seed=3, factor=2,
                               t_end=0.01)
    text = ev.csv_text(ev.SUITE_HEADER, ev.suite_rows(rows))
    parsed = list(csv.reader(io.StringIO(text)))
    assert parsed[0] == list(ev.SUITE_HEADER)
    assert len(parsed) == 3
    assert "=" in parsed[1][-1]  # draw parameters recorded for replay


def test_csv_action_dump_headers_single_and_multi_component():
    assert ev.actions_header(1)[:4] == ("x", "w_plus_0", "w_plus_1",
                                        "w_plus_2")
    assert len(ev.actions_header(1)) == 1 + 12
    assert len(ev.actions_header(3)) == 1 + 36
    assert ev.actions_header(3)[1] == "c0_w_plus_0"
    dump = ev.action_dump(named_ic("tophat"), 16, init_params(0),
                          t_query=0.0)
    rows = ev.actions_rows(dump)
    assert len(rows) == 17
    assert len(rows[0]) == 13


# ------------------------------------------------------------- defaults

def test_default_dt_per_system():
    assert ev.default_dt("burgers") == 0.0004
    assert ev.default_dt("euler") == 0.0001
