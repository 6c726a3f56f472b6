import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from derband.control import ControllerKind
from derband.ergodics import (
    EmpiricalDistribution,
    fairness_gap,
    long_run_average,
    mixing_sweep,
    mixing_time,
    running_average,
    wasserstein2_sq,
    write_mixing_csv,
)
from derband.loop import ResolvedLoop, RunSet, SimConfig, Trajectory, run_closed_loop, run_ensemble_experiment


def dist(*values):
    return EmpiricalDistribution(np.asarray(values, dtype=float))


def quantile_integral_oracle(a, b, grid=1_000_000):
    """Independent route: midpoint quadrature of the squared quantile gap,
    with F^{-1}(q) = inf{x : F(x) >= q} evaluated by counting."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    q = (np.arange(grid) + 0.5) / grid
    fa = a[np.ceil(q * len(a)).astype(int) - 1]
    fb = b[np.ceil(q * len(b)).astype(int) - 1]
    return float(np.mean((fa - fb) ** 2))


def test_long_run_average_examples():
    assert long_run_average([3.0] * 17) == 3.0
    assert long_run_average([0.0, 1.0] * 50) == 0.5
    with pytest.raises(ValueError):
        long_run_average([])


def test_running_average_trace():
    trace = running_average([1.0, 3.0, 5.0])
    assert np.allclose(trace, [1.0, 2.0, 3.0])
    assert trace[-1] == long_run_average([1.0, 3.0, 5.0])


@given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=200))
def test_long_run_average_bounded_by_extremes(values):
    avg = long_run_average(values)
    assert min(values) - 1e-9 <= avg <= max(values) + 1e-9


def test_fairness_gap_examples():
    assert fairness_gap({"G1": [0.3, 0.3, 0.3]}) == 0.0
    assert fairness_gap({"G1": [0.4, 0.5, 0.45]}) == pytest.approx(0.1)
    assert fairness_gap({"G1": [0.4, 0.5], "G2": [0.0, 0.3]}) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        fairness_gap({"G1": [0.4]})


def test_fairness_of_exchangeable_agents_in_closed_loop():
    # identical-parameter agents are exchangeable, so their long-run
    # commitment averages coincide up to Monte-Carlo error
    cfg = SimConfig(
        n_agents=20, backend="lossless", reference_mode="half_capacity",
        horizon=20_000, controller_kind=ControllerKind.LAG, seed=77,
        record_commitments=True,
    )
    traj = run_closed_loop(cfg, seed=77, x_c0=0.0)
    averages = traj.commitments.mean(axis=0)
    gap = fairness_gap({"G1": averages[:10], "G2": averages[10:]})
    assert gap < 0.05


def test_wasserstein_trivial_cases():
    assert wasserstein2_sq(dist(1.0, 2.0, 3.0), dist(1.0, 2.0, 3.0)) == 0.0
    assert wasserstein2_sq(dist(0.0, 0.0), dist(1.0, 1.0)) == 1.0
    assert wasserstein2_sq(dist(0.0, 2.0), dist(1.0, 3.0)) == 1.0


def test_wasserstein_count_guard():
    with pytest.raises(ValueError):
        EmpiricalDistribution(np.array([1.0]))


def test_wasserstein_matches_quantile_integral_oracle():
    rng = np.random.default_rng(8)
    for _ in range(5):
        a = rng.normal(0, 1, 7)
        b = rng.normal(0.5, 2, 11)      # unequal counts: general path
        got = wasserstein2_sq(dist(*a), dist(*b))
        assert got == pytest.approx(quantile_integral_oracle(a, b), rel=1e-3)
    a = rng.normal(0, 1, 12)
    b = rng.normal(1, 1, 12)            # equal counts: sorted-diff path
    got = wasserstein2_sq(dist(*a), dist(*b))
    assert got == pytest.approx(quantile_integral_oracle(a, b), rel=1e-3)


def test_wasserstein_symmetry_and_shift_invariance():
    rng = np.random.default_rng(9)
    a = rng.normal(0, 1, 20)
    b = rng.normal(1, 2, 20)
    assert wasserstein2_sq(dist(*a), dist(*b)) == wasserstein2_sq(dist(*b), dist(*a))
    shift = 3.25
    assert wasserstein2_sq(dist(*(a + shift)), dist(*(b + shift))) == pytest.approx(
        wasserstein2_sq(dist(*a), dist(*b)), rel=1e-12
    )


def test_wasserstein_one_sided_shift_of_point_masses():
    for c in (0.5, 1.0, 2.0, 3.75):
        assert wasserstein2_sq(dist(2.0, 2.0), dist(2.0 + c, 2.0 + c)) == pytest.approx(
            c * c, rel=1e-15
        )


@settings(max_examples=60)
@given(
    data=st.lists(
        st.floats(min_value=-1e3, max_value=1e3), min_size=6, max_size=6
    ),
)
def test_wasserstein_sqrt_triangle_inequality(data):
    a, b, c = dist(data[0], data[1]), dist(data[2], data[3]), dist(data[4], data[5])
    dab = np.sqrt(wasserstein2_sq(a, b))
    dbc = np.sqrt(wasserstein2_sq(b, c))
    dac = np.sqrt(wasserstein2_sq(a, c))
    assert dac <= dab + dbc + 1e-12


def _fake_runset(xc_by_label: dict[str, np.ndarray],
                 deadband_fraction: float = 0.0) -> RunSet:
    labels = tuple(xc_by_label)
    reps = len(next(iter(xc_by_label.values())))
    steps = xc_by_label[labels[0]].shape[1]
    cfg = SimConfig(repetitions=reps, horizon=max(steps, 2),
                    deadband_fraction=deadband_fraction)
    resolved = ResolvedLoop(r=10.0, capacity=1.0, kp=0.05, ki=0.01, leak=0.99,
                            deadband=0.0, initial_states=(0.0, 10.0), losses0=0.0)
    runset = RunSet(config=cfg, resolved=resolved, labels=labels)
    for lab, mat in xc_by_label.items():
        for rep in range(reps):
            n = mat.shape[1]
            runset.trajectories[(rep, lab)] = Trajectory(
                k=np.arange(1, n + 1), p=np.zeros(n), p_hat=np.zeros(n),
                e=np.zeros(n), pi=np.zeros(n), x_c=mat[rep].astype(float),
                losses=np.zeros(n), committed=np.zeros(n, dtype=np.int64),
                seed=rep, config_digest="fake", label=lab, repetition=rep,
            )
    return runset


def test_mixing_time_degenerate_coinciding_labels():
    mat = np.tile(np.linspace(1, 2, 10), (4, 1))
    report = mixing_time(_fake_runset({"A": mat, "B": mat.copy()}))
    assert report.mixing_time == 1
    assert report.degenerate_pairs == ("A|B",)
    assert report.delta_ref["A|B"] == 0.0


def test_mixing_time_first_crossing():
    # label B starts 1 away and halves the gap each step: W = 0.25**k
    steps = 20
    gap = 0.5 ** np.arange(steps)
    a = np.vstack([np.zeros(steps), np.ones(steps) * 1e-12])
    b = a + gap
    report = mixing_time(_fake_runset({"A": a, "B": b}), threshold_fraction=0.01)
    # delta = W(k=1) = 1; need 0.25**(k-1) <= 0.01 -> k = 5
    assert report.delta_ref["A|B"] == pytest.approx(1.0)
    assert report.mixing_time == 5


def test_mixing_time_monotone_in_threshold():
    cfg = SimConfig(
        n_agents=20, backend="lossless", reference_mode="half_capacity",
        horizon=3000, controller_kind=ControllerKind.LAG, seed=31, repetitions=10,
    )
    runset = run_ensemble_experiment(cfg)
    t_small = mixing_time(runset, threshold_fraction=0.01).mixing_time
    t_big = mixing_time(runset, threshold_fraction=0.05).mixing_time
    assert t_small is not None and t_big is not None
    assert t_big <= t_small


def test_mixing_time_requires_repetitions_and_labels():
    cfg = SimConfig(
        n_agents=20, backend="lossless", reference_mode="half_capacity",
        horizon=50, controller_kind=ControllerKind.LAG, seed=31, repetitions=1,
    )
    runset = run_ensemble_experiment(cfg)
    with pytest.raises(ValueError):
        mixing_time(runset)
    cfg_one_label = SimConfig(
        n_agents=20, backend="lossless", reference_mode="half_capacity",
        horizon=50, controller_kind=ControllerKind.LAG, seed=31, repetitions=3,
        initial_states=(0.0,),
    )
    with pytest.raises(ValueError):
        mixing_time(run_ensemble_experiment(cfg_one_label))


def test_lag_mixes_pi_does_not_smallscale():
    base = dict(
        n_agents=20, backend="lossless", reference_mode="half_capacity",
        horizon=4000, seed=13, repetitions=20,
    )
    lag = mixing_time(run_ensemble_experiment(
        SimConfig(controller_kind=ControllerKind.LAG, **base)))
    pi = mixing_time(run_ensemble_experiment(
        SimConfig(controller_kind=ControllerKind.PI, **base)))
    assert lag.mixing_time is not None
    assert pi.mixing_time is None


def test_mixing_sweep_single_fraction_equals_plain(tmp_path):
    cfg = SimConfig(
        n_agents=20, backend="lossless", reference_mode="half_capacity",
        horizon=2000, controller_kind=ControllerKind.LAG, seed=17, repetitions=10,
    )
    sweep = mixing_sweep(cfg, (0.0,))
    assert len(sweep) == 1
    plain = mixing_time(run_ensemble_experiment(cfg))
    assert sweep[0].mixing_time == plain.mixing_time
    assert sweep[0].delta_ref == plain.delta_ref
    write_mixing_csv(sweep, tmp_path / "mixing.csv")
    lines = (tmp_path / "mixing.csv").read_text().splitlines()
    assert lines[0] == "deadband_fraction,mixing_time,delta_ref"
    assert len(lines) == 2


def test_mixing_sweep_deadband_slows_mixing_smallscale():
    cfg = SimConfig(
        n_agents=100, backend="lossless", reference_mode="half_capacity",
        horizon=3000, controller_kind=ControllerKind.LAG, seed=23, repetitions=20,
    )
    fast, slow = mixing_sweep(cfg, (0.0, 0.05))
    assert fast.mixing_time is not None and slow.mixing_time is not None
    assert slow.mixing_time > fast.mixing_time
