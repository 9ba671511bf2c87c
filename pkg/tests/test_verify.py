import numpy as np
import pytest

from voxflow.errors import NoOverlapError
from voxflow.grid import RainField, Space
from voxflow.verify import (
    ContingencyTable,
    contingency,
    continuous_metrics,
    precision_recall_ets,
    verify_nowcast,
)


def mmh(data, mask=None):
    return RainField(data=np.asarray(data, float), space=Space.MMH, mask=mask)


class TestContinuousMetrics:
    def test_perfect(self):
        rng = np.random.default_rng(0)
        f = mmh(rng.uniform(0, 10, (1, 8, 8)))
        assert continuous_metrics(f, f) == (0.0, 0.0, 0.0)

    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        obs = rng.uniform(0, 10, (1, 8, 8))
        me, mae, mse = continuous_metrics(mmh(obs + 2.0), mmh(obs))
        assert me == pytest.approx(2.0)
        assert mae == pytest.approx(2.0)
        assert mse == pytest.approx(4.0)

    def test_cancellation_vs_magnitude(self):
        yg, xg = np.mgrid[0:8, 0:8]
        obs = np.where((yg + xg) % 2 == 0, 1.0, 0.0)[None]
        # prediction flips the checkerboard: per-cell error is +-1
        pred = 1.0 - obs
        me, mae, mse = continuous_metrics(mmh(pred), mmh(obs))
        assert me == pytest.approx(0.0)
        assert mae == pytest.approx(1.0)
        assert mse == pytest.approx(1.0)

    def test_empty_joint_mask_raises(self):
        a = mmh(np.zeros((1, 4, 4)), mask=np.zeros((1, 4, 4), bool))
        b = mmh(np.zeros((1, 4, 4)))
        with pytest.raises(NoOverlapError):
            continuous_metrics(a, b)

    def test_invariant_under_joint_masking(self):
        rng = np.random.default_rng(2)
        obs = rng.uniform(0, 10, (1, 10, 10))
        pred = obs + rng.normal(0, 1, obs.shape).clip(-obs)
        mask = rng.random((1, 10, 10)) < 0.7
        full = continuous_metrics(mmh(pred, mask.copy()), mmh(obs, mask.copy()))
        # masking both identically only drops excluded cells
        sub_pred = np.where(mask, pred, 0.0)
        sub = continuous_metrics(mmh(sub_pred, mask.copy()),
                                 mmh(np.where(mask, obs, 0.0), mask.copy()))
        assert full == pytest.approx(sub)


def contingency_oracle(pred, obs, thr):
    """Brute-force per-pixel loop."""
    h = m = fa = cn = 0
    for p, o in zip(pred.ravel(), obs.ravel()):
        py, oy = p >= thr, o >= thr
        if py and oy:
            h += 1
        elif not py and oy:
            m += 1
        elif py and not oy:
            fa += 1
        else:
            cn += 1
    return h, m, fa, cn


class TestContingency:
    def test_perfect_forecast(self):
        rng = np.random.default_rng(3)
        f = mmh(rng.uniform(0, 10, (1, 8, 8)))
        t = contingency(f, f, 1.0)
        assert t.misses == 0 and t.false_alarms == 0

    def test_all_yes_forecast(self):
        rng = np.random.default_rng(4)
        obs = np.zeros((1, 25, 40))
        flat = obs.reshape(-1)
        flat[rng.choice(1000, 60, replace=False)] = 5.0
        pred = np.full_like(obs, 5.0)
        t = contingency(mmh(pred), mmh(obs), 1.0)
        assert (t.hits, t.misses, t.false_alarms, t.correct_negatives) == \
            (60, 0, 940, 0)

    def test_threshold_above_max_all_negative(self):
        rng = np.random.default_rng(5)
        obs = rng.uniform(0, 3, (1, 6, 6))
        t = contingency(mmh(obs), mmh(obs), 100.0)
        assert t.correct_negatives == 36 and t.hits == 0

    def test_matches_brute_force_loop_on_random_fields(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            pred = rng.uniform(0, 12, (1, 64, 64))
            obs = rng.uniform(0, 12, (1, 64, 64))
            thr = float(rng.uniform(0.5, 10))
            t = contingency(mmh(pred), mmh(obs), thr)
            assert (t.hits, t.misses, t.false_alarms, t.correct_negatives) == \
                contingency_oracle(pred, obs, thr)

    def test_counts_total_equals_valid_cells(self):
        rng = np.random.default_rng(7)
        mask = rng.random((1, 16, 16)) < 0.8
        pred = mmh(rng.uniform(0, 10, (1, 16, 16)) * mask, mask.copy())
        obs = mmh(rng.uniform(0, 10, (1, 16, 16)) * mask, mask.copy())
        t = contingency(pred, obs, 2.0)
        assert t.total == int(mask.sum())

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ContingencyTable(hits=-1)


class TestPrecisionRecallEts:
    def test_perfect_scores_one(self):
        t = ContingencyTable(hits=50, misses=0, false_alarms=0,
                             correct_negatives=950)
        assert precision_recall_ets(t) == pytest.approx((1.0, 1.0, 1.0))

    def test_hand_computed_table(self):
        # h=50, m=10, fa=10, cn=930, N=1000: hits_rand = 60*60/1000 = 3.6
        # ets = 46.4 / 66.4
        t = ContingencyTable(hits=50, misses=10, false_alarms=10,
                             correct_negatives=930)
        p, r, e = precision_recall_ets(t)
        assert p == pytest.approx(50 / 60)
        assert r == pytest.approx(50 / 60)
        assert e == pytest.approx(46.4 / 66.4, abs=1e-10)
        assert e == pytest.approx(0.6988, abs=1e-4)

    def test_all_yes_forecast_scores_zero_ets(self):
        t = ContingencyTable(hits=60, misses=0, false_alarms=940,
                             correct_negatives=0)
        p, r, e = precision_recall_ets(t)
        assert r == 1.0
        assert e == pytest.approx(0.0, abs=1e-12)

    def test_all_no_forecast_scores_zero_ets(self):
        t = ContingencyTable(hits=0, misses=60, false_alarms=0,
                             correct_negatives=940)
        _, _, e = precision_recall_ets(t)
        assert e == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_denominators_are_nan(self):
        t = ContingencyTable(hits=0, misses=0, false_alarms=0,
                             correct_negatives=100)
        p, r, e = precision_recall_ets(t)
        assert np.isnan(p) and np.isnan(r) and np.isnan(e)

    def test_ets_bounded_by_recall(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            h, m, fa, cn = rng.integers(0, 200, 4)
            t = ContingencyTable(hits=int(h), misses=int(m),
                                 false_alarms=int(fa),
                                 correct_negatives=int(cn))
            p, r, e = precision_recall_ets(t)
            if not (np.isnan(e) or np.isnan(r)):
                assert e <= r + 1e-12
                assert e <= 1.0 + 1e-12


class TestVerifyNowcast:
    def test_persistence_on_stationary_scene(self):
        rng = np.random.default_rng(9)
        obs = mmh(rng.uniform(0, 10, (1, 12, 12)))
        report = verify_nowcast([obs] * 4, [obs] * 4, thresholds=(1.0,))
        for lead in report.leads:
            assert report.continuous(lead) == pytest.approx((0.0, 0.0, 0.0))
            p, r, e = report.categorical(lead, 1.0)
            assert e == pytest.approx(1.0)

    def test_volumetric_inputs_are_cmax_pooled(self):
        low = np.zeros((2, 6, 6))
        low[0] = 4.0
        low[1, 2, 2] = 9.0
        pred = mmh(low)
        flat = mmh(np.maximum(low[0], low[1])[None])
        report = verify_nowcast([pred], [flat], thresholds=(1.0,))
        assert report.continuous(1) == pytest.approx((0.0, 0.0, 0.0))

    def test_micro_aggregation_pools_counts(self):
        a_pred = mmh(np.full((1, 4, 4), 5.0))
        a_obs = mmh(np.full((1, 4, 4), 5.0))
        b_pred = mmh(np.zeros((1, 4, 4)))
        b_obs = mmh(np.full((1, 4, 4), 5.0))
        report = verify_nowcast([[a_pred], [b_pred]], [[a_obs], [b_obs]],
                                thresholds=(1.0,))
        tbl = report.tables[(1, 1.0)]
        assert tbl.hits == 16 and tbl.misses == 16
        assert report.samples == 2

    def test_true_motion_mae_bounded_by_interpolation_smear(self):
        from voxflow.advect import extrapolate
        from voxflow.synth import generate, preset
        from voxflow.transform import volume_to_rain

        vol, truth = generate(preset("uniform", frames=24))
        leads = extrapolate(volume_to_rain(vol, 7), truth, 16)
        obs = [volume_to_rain(vol, 8 + t) for t in range(16)]
        report = verify_nowcast(leads, obs, thresholds=(1.0,))
        me, mae, mse = report.continuous(16)
        field_mean = obs[-1].data[obs[-1].mask].mean()
        assert mae < 0.05 * field_mean

    def test_zero_motion_mae_grows_with_lead_on_moving_scene(self):
        yg, xg = np.mgrid[0:32, 0:32]
        frames = []
        for t in range(6):
            blob = 8.0 * np.exp(-((yg - 16) ** 2 + (xg - 8 - 3 * t) ** 2) / 12.0)
            frames.append(mmh(blob[None]))
        persistence = [frames[0]] * 5
        report = verify_nowcast(persistence, frames[1:], thresholds=(1.0,))
        maes = [report.continuous(lead)[1] for lead in report.leads]
        assert all(b > a for a, b in zip(maes, maes[1:]))
