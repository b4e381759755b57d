import math
from dataclasses import replace

import numpy as np
import pytest

import qsd_duffing.ensemble as ensemble_mod
from qsd_duffing.errors import NonFiniteState
from qsd_duffing.fock_space import DuffingConfig
from qsd_duffing.lyapunov import LyapunovSettings, OutcomeKind
from qsd_duffing.ensemble import (
    EnsembleConfig,
    EnsembleFailure,
    _pilot_tail,
    auto_levels,
    estimate_levels,
    estimated_cost,
    run_ensemble,
    sweep_beta,
)

BASE = DuffingConfig(beta_sq=1.0, gamma=0.3, n_levels=24)
FAST = LyapunovSettings(checkpoint_periods=1.0)


def small(n_pairs=3, periods=20, **kw):
    return EnsembleConfig.from_periods(
        BASE, periods, transient=2, n_pairs=n_pairs, settings=FAST, **kw
    )


def test_config_validation():
    with pytest.raises(ValueError):
        small(n_pairs=1)
    with pytest.raises(ValueError):
        EnsembleConfig(BASE, t_total=1.0, t_transient=2.0)
    with pytest.raises(ValueError):
        small(n_pairs=2, seeds=(1,))


def test_delta0_propagates_to_settings():
    cfg = small(delta0=1e-8)
    assert cfg.settings.delta0 == 1e-8


def test_pair_seeds_are_distinct_and_stable():
    cfg = small(n_pairs=4, root_seed=99)
    seeds = [cfg.pair_seed(i) for i in range(4)]
    assert len(set(seeds)) == 4
    assert seeds == [small(n_pairs=4, root_seed=99).pair_seed(i) for i in range(4)]


def test_identical_seeds_give_zero_stderr():
    res = run_ensemble(small(n_pairs=2, seeds=(5, 5)))
    assert res.per_pair[0] == res.per_pair[1]
    assert res.stderr == 0
    assert res.std == 0


def test_stderr_is_spread_over_root_n():
    res = run_ensemble(small(n_pairs=3))
    assert res.stderr == pytest.approx(np.std(res.per_pair, ddof=1) / math.sqrt(3))
    assert res.n_converged + res.n_bound == 3
    assert res.kind in (OutcomeKind.CONVERGED, OutcomeKind.UPPER_BOUND)
    np.testing.assert_allclose(res.mean_series[-1], np.mean(res.per_pair))


def test_worker_count_does_not_change_results():
    cfg = small(n_pairs=3)
    a = run_ensemble(cfg, workers=1)
    b = run_ensemble(cfg, workers=2)
    assert a.per_pair == b.per_pair
    np.testing.assert_array_equal(a.mean_series, b.mean_series)
    assert a.outcome.value == b.outcome.value


def _failing(indices):
    real = ensemble_mod.run_single_pair
    calls = {"n": 0}

    def fake(cfg, seed, t_transient, t_total, settings):
        i = calls["n"]
        calls["n"] += 1
        if i in indices:
            raise NonFiniteState("injected")
        return real(cfg, seed, t_transient, t_total, settings)

    return fake


def test_tolerates_a_few_failed_pairs(monkeypatch):
    monkeypatch.setattr(ensemble_mod, "run_single_pair", _failing({0}))
    res = run_ensemble(small(n_pairs=11, periods=20))
    assert len(res.failures) == 1 and len(res.per_pair) == 10


def test_fails_above_ten_percent(monkeypatch):
    monkeypatch.setattr(ensemble_mod, "run_single_pair", _failing({0, 1}))
    with pytest.raises(EnsembleFailure):
        run_ensemble(small(n_pairs=11, periods=20))


def test_single_point_sweep_equals_run_ensemble():
    cfg = small(n_pairs=2)
    (point,) = list(sweep_beta(cfg, [1.0], levels=24))
    direct = run_ensemble(cfg)
    assert point.ok
    assert point.result.per_pair == direct.per_pair
    assert point.result.outcome.value == direct.outcome.value


def test_sweep_records_failures_and_continues():
    points = list(sweep_beta(small(n_pairs=2), [-1.0, 1.0], levels={1.0: 24}))
    assert [p.index for p in points] == [0, 1]
    assert not points[0].ok and "positive" in points[0].error
    assert points[1].ok


def test_sweep_is_lazy():
    gen = sweep_beta(small(n_pairs=2), [1.0, 1.0], levels=24)
    first = next(gen)
    assert first.ok
    gen.close()


def test_estimate_levels_grows_as_beta_shrinks():
    values = [estimate_levels(b) for b in (1.0, 0.5, 0.25, 0.1, 0.01)]
    assert values == sorted(values)
    assert estimated_cost(0.01, 16, 400, 1e-3) > estimated_cost(0.5, 16, 400, 1e-3)


def test_auto_levels_meets_tail_rule():
    base = DuffingConfig(beta_sq=1.0, gamma=0.125)
    n = auto_levels(base, pilot_periods=5)
    assert _pilot_tail(base.with_(n_levels=n), 5, 0, None) < 1e-8
    assert n >= estimate_levels(1.0)


def test_error_trend_with_more_pairs():
    # Raw-distance finals here are noise-level numbers with a heavy-tailed
    # spread; the phase-blind exponent is a well-behaved sample for the trend.
    proj = replace(FAST, projective=True)
    small_err, big_err = [], []
    for seed in range(5):
        for n, out in ((3, small_err), (6, big_err)):
            cfg = EnsembleConfig.from_periods(
                BASE, 20, transient=2, n_pairs=n, settings=proj, root_seed=seed
            )
            out.append(run_ensemble(cfg).stderr)
    assert np.mean(big_err) <= np.mean(small_err)


def test_half_time_classification_is_consistent():
    full = run_ensemble(small(n_pairs=3, periods=40))
    half = run_ensemble(small(n_pairs=3, periods=20))
    if half.kind is OutcomeKind.CONVERGED:
        band = 3 * max(full.stderr, full.outcome.fit_error)
        assert abs(half.value - full.value) <= band
