import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from copulacast.errors import DimensionMismatch, MissingForecast, NoScenarios
from copulacast.metrics import (
    EvaluationBatch,
    ed_ind,
    ed_ssum,
    energy_distance,
    expand_metrics,
    lead_time_mae,
    merge_reports,
    nmae_ind,
    nmae_ssum,
    rmse_ind,
    rmse_ssum,
    score_report,
    variogram_ssum,
    variogram_tsum,
    write_lead_time_csv,
)


def batch(actual, forecast=None, scenarios=None, caps=None, origins=None):
    actual = np.asarray(actual, dtype=float)
    N, D, _ = actual.shape
    return EvaluationBatch(
        np.arange(N) if origins is None else origins,
        actual,
        np.full(D, 100.0) if caps is None else caps,
        forecast,
        scenarios,
    )


def random_batch(rng, N=None, D=None, H=None, S=None):
    N = N or rng.integers(1, 4)
    D = D or rng.integers(1, 4)
    H = H or rng.integers(1, 5)
    S = S or rng.integers(2, 6)
    return batch(
        rng.uniform(0, 100, (N, D, H)),
        rng.uniform(0, 100, (N, D, H)),
        rng.uniform(0, 100, (N, S, D, H)),
        caps=rng.uniform(50, 150, D),
    )


# loop oracles --------------------------------------------------------------------

def oracle_ed(xs, ys):
    n, m = len(xs), len(ys)
    dist = lambda a, b: sum((ai - bi) ** 2 for ai, bi in zip(a, b)) ** 0.5
    t1 = sum(dist(x, y) for x in xs for y in ys) * 2 / (n * m)
    t2 = sum(dist(x, x2) for x in xs for x2 in xs) / n ** 2
    t3 = sum(dist(y, y2) for y in ys for y2 in ys) / m ** 2 if m > 1 else 0.0
    return t1 - t2 - t3


def oracle_ed_ind(b):
    N, S, D, H = b.scenarios.shape
    total = 0.0
    for n in range(N):
        xs = [[b.scenarios[n, s, i, h] for i in range(D) for h in range(H)] for s in range(S)]
        y = [[b.actual[n, i, h] for i in range(D) for h in range(H)]]
        total += oracle_ed(xs, y)
    return total / N


def oracle_ed_ssum(b):
    N, S, D, H = b.scenarios.shape
    total = 0.0
    for n in range(N):
        xs = [[sum(b.scenarios[n, s, i, h] for i in range(D)) for h in range(H)] for s in range(S)]
        y = [[sum(b.actual[n, i, h] for i in range(D)) for h in range(H)]]
        total += oracle_ed(xs, y)
    return total / N


def oracle_vs(b, axis, p=0.5, squared=False):
    N, S, D, H = b.scenarios.shape
    total = 0.0
    for n in range(N):
        if axis == "ssum":
            K = H
            obs = [sum(b.actual[n, i, k] for i in range(D)) for k in range(K)]
            ens = [[sum(b.scenarios[n, s, i, k] for i in range(D)) for k in range(K)] for s in range(S)]
        else:
            K = D
            obs = [sum(b.actual[n, k, h] for h in range(H)) for k in range(K)]
            ens = [[sum(b.scenarios[n, s, k, h] for h in range(H)) for k in range(K)] for s in range(S)]
        score = 0.0
        for k1 in range(K):
            for k2 in range(k1 + 1, K):
                term = abs(obs[k1] - obs[k2]) ** p - sum(abs(e[k1] - e[k2]) ** p for e in ens) / S
                score += term ** 2 if squared else term
        total += score
    return total / N


# deterministic -------------------------------------------------------------------

class TestDeterministic:
    def test_perfect(self):
        z = np.random.default_rng(0).uniform(0, 100, (3, 2, 4))
        b = batch(z, z)
        assert nmae_ind(b) == nmae_ssum(b) == rmse_ind(b) == rmse_ssum(b) == 0.0

    def test_single_cell(self):
        assert nmae_ind(batch([[[50.0]]], [[[60.0]]])) == pytest.approx(10.0)

    def test_cancellation_and_sum(self):
        actual = np.array([[[50.0], [50.0]]])
        assert nmae_ssum(batch(actual, actual + [[[10.0], [-10.0]]])) == 0.0
        assert nmae_ssum(batch(actual, actual + 10.0)) == pytest.approx(10.0)

    def test_rmse_single_error(self):
        N, D, H = 2, 3, 4
        actual = np.zeros((N, D, H))
        fc = actual.copy()
        fc[1, 2, 3] = 3.0
        assert rmse_ind(batch(actual, fc)) == pytest.approx(3 / np.sqrt(D * H * N), abs=1e-12)

    def test_rmse_constant(self):
        z = np.random.default_rng(1).uniform(size=(4, 2, 3))
        assert rmse_ind(batch(z, z + 5)) == pytest.approx(5.0)
        assert rmse_ssum(batch(z, z + 5)) == pytest.approx(10.0)

    def test_against_direct_formulas(self):
        rng = np.random.default_rng(2)
        b = random_batch(rng, 5, 3, 4, 2)
        err = b.forecast - b.actual
        assert nmae_ind(b) == pytest.approx(100 * np.mean(np.abs(err) / b.capacities[None, :, None]))
        assert nmae_ssum(b) == pytest.approx(100 * np.mean(np.abs(err.sum(1))) / b.capacities.sum())
        assert rmse_ind(b) == pytest.approx(np.sqrt(np.mean(err ** 2)))
        assert rmse_ssum(b) == pytest.approx(np.sqrt(np.mean(err.sum(1) ** 2)))
        np.testing.assert_allclose(lead_time_mae(b), np.abs(err).mean(axis=(0, 1)))

    def test_missing_forecast(self):
        with pytest.raises(MissingForecast):
            nmae_ind(batch(np.zeros((1, 1, 1))))


# energy distance ----------------------------------------------------------------

class TestEnergyDistance:
    def test_hand_value(self):
        assert energy_distance([[0.0], [2.0]], [[1.0]]) == pytest.approx(1.0, abs=1e-12)

    def test_identical_sets(self):
        x = np.random.default_rng(3).normal(size=(4, 3))
        assert energy_distance(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_single_points(self):
        assert energy_distance([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(10.0)

    def test_two_scenarios(self):
        a, b, c = 3.0, 4.0, 5.0
        x = np.array([[3.0, 0.0], [0.0, 4.0]])
        assert energy_distance(x, [[0.0, 0.0]]) == pytest.approx(a + b - c / 2)

    @settings(max_examples=50)
    @given(arrays(float, (3, 2), elements=st.floats(-10, 10)), arrays(float, (4, 2), elements=st.floats(-10, 10)))
    def test_symmetric(self, x, y):
        assert energy_distance(x, y) == pytest.approx(energy_distance(y, x), abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            energy_distance(np.zeros((2, 2)), np.zeros((1, 3)))

    def test_ed_scenarios_equal_actual(self):
        z = np.random.default_rng(4).uniform(size=(2, 2, 3))
        sc = np.repeat(z[:, None], 4, axis=1)
        b = batch(z, scenarios=sc)
        assert ed_ind(b) == pytest.approx(0.0, abs=1e-12)
        assert ed_ssum(b) == pytest.approx(0.0, abs=1e-12)

    def test_scale_homogeneous(self):
        b = random_batch(np.random.default_rng(5))
        b2 = batch(2 * b.actual, scenarios=2 * b.scenarios, caps=b.capacities)
        assert ed_ind(b2) == pytest.approx(2 * ed_ind(b))

    def test_ssum_equals_ind_for_one_location(self):
        b = random_batch(np.random.default_rng(6), D=1)
        assert ed_ssum(b) == pytest.approx(ed_ind(b), abs=1e-12)

    def test_ssum_invariant_to_location_permutation(self):
        b = random_batch(np.random.default_rng(7), D=3)
        perm = [2, 0, 1]
        b2 = batch(b.actual[:, perm], scenarios=b.scenarios[:, :, perm], caps=b.capacities[perm])
        assert ed_ssum(b2) == pytest.approx(ed_ssum(b), abs=1e-10)

    def test_needs_two_scenarios(self):
        with pytest.raises(NoScenarios):
            ed_ind(batch(np.zeros((1, 1, 2)), scenarios=np.zeros((1, 1, 1, 2))))

    def test_consistency_in_s(self):
        # more i.i.d. scenarios from the truth give a lower expected score
        rng = np.random.default_rng(8)
        scores = {2: [], 200: []}
        for _ in range(50):
            actual = rng.normal(size=(1, 2, 3))
            for S in scores:
                sc = rng.normal(size=(1, S, 2, 3))
                scores[S].append(ed_ind(batch(actual, scenarios=sc)))
        assert np.mean(scores[200]) < np.mean(scores[2])


# variogram ------------------------------------------------------------------------

class TestVariogram:
    def test_hand_value(self):
        b = batch(np.array([[[0.0, 4.0]]]), scenarios=np.array([[[[0.0, 1.0]]]]))
        # one pair: |0-4|^0.5 - |0-1|^0.5
        assert variogram_ssum(b) == pytest.approx(1.0, abs=1e-12)

    def test_identical_and_constant(self):
        z = np.random.default_rng(9).uniform(size=(2, 3, 4))
        b = batch(z, scenarios=np.repeat(z[:, None], 3, axis=1))
        assert variogram_ssum(b) == pytest.approx(0.0, abs=1e-12)
        assert variogram_tsum(b) == pytest.approx(0.0, abs=1e-12)
        b = batch(np.full((1, 2, 3), 7.0), scenarios=np.full((1, 5, 2, 3), 2.0))
        assert variogram_ssum(b) == variogram_tsum(b) == 0.0

    def test_negative_values_possible_and_flagged(self):
        b = batch(np.array([[[0.0, 0.0]]]), scenarios=np.array([[[[0.0, 1.0]]]]))
        assert variogram_ssum(b) < 0
        assert variogram_ssum(b, form="squared") > 0
        report = score_report(b, ["vs"])
        assert any("negative" in f for f in report.flags)

    def test_bad_form(self):
        b = batch(np.zeros((1, 1, 2)), scenarios=np.zeros((1, 1, 1, 2)))
        with pytest.raises(ValueError):
            variogram_ssum(b, form="abs")
        with pytest.raises(ValueError):
            variogram_ssum(b, p=0)


class TestLoopOracles:
    def test_hundred_random_instances(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            b = random_batch(rng)
            assert abs(ed_ind(b) - oracle_ed_ind(b)) <= 1e-10
            assert abs(ed_ssum(b) - oracle_ed_ssum(b)) <= 1e-10
            assert abs(variogram_ssum(b) - oracle_vs(b, "ssum")) <= 1e-10
            assert abs(variogram_tsum(b) - oracle_vs(b, "tsum")) <= 1e-10
            assert abs(variogram_ssum(b, form="squared") - oracle_vs(b, "ssum", squared=True)) <= 1e-9


# reports --------------------------------------------------------------------------

class TestReport:
    def test_empty_metric_set(self):
        b = random_batch(np.random.default_rng(11), N=2)
        r = score_report(b, [])
        assert r.values == {} and r.n_test == 2

    def test_deterministic_only_batch(self):
        b = batch(np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))
        with pytest.raises(NoScenarios, match="ed_ind"):
            score_report(b, ["ed"])

    def test_decomposable(self):
        b = random_batch(np.random.default_rng(12), N=3)
        r = score_report(b)
        for name in ["nmae_ind", "nmae_ssum", "ed_ind", "ed_ssum", "vs_ssum", "vs_tsum"]:
            assert abs(r.values[name] - np.mean(r.per_origin[name])) <= 1e-12
        assert r.values["rmse_ind"] == pytest.approx(np.sqrt(np.mean(r.per_origin["rmse_ind"])))
        assert r.values["nmae_ind"] == pytest.approx(nmae_ind(b), abs=1e-12)

    def test_origins_sorted(self):
        b = random_batch(np.random.default_rng(13), N=3)
        shuffled = batch(b.actual[::-1], b.forecast[::-1], b.scenarios[::-1], b.capacities, origins=[2, 1, 0])
        r = score_report(shuffled)
        assert list(r.origins) == [0, 1, 2]
        assert r.values == pytest.approx(score_report(b).values)

    def test_exports(self, tmp_path):
        b = random_batch(np.random.default_rng(14))
        r = score_report(b, ["nmae", "vs"])
        rows = r.csv_rows()
        assert rows[0] == ["metric", "level", "value", "n_origins", "S"]
        assert [row[:2] for row in rows[1:]] == [["nmae", "ind"], ["nmae", "s-sum"], ["vs", "s-sum"], ["vs", "t-sum"]]
        doc = json.loads(r.to_json())
        assert doc["counts"]["S"] == b.n_scenarios
        write_lead_time_csv(tmp_path / "lt.csv", b)
        lines = (tmp_path / "lt.csv").read_text().splitlines()
        assert lines[0] == "step,mae_mw" and len(lines) == b.actual.shape[2] + 1

    def test_merge(self):
        rng = np.random.default_rng(15)
        a, b = random_batch(rng, 2, 2, 3, 4), random_batch(rng, 3, 2, 3, 4)
        b.origins = b.origins + 10
        merged = merge_reports([score_report(a), score_report(b)])
        pooled = batch(np.concatenate([a.actual, b.actual]), np.concatenate([a.forecast, b.forecast]),
                       np.concatenate([a.scenarios, b.scenarios]), a.capacities,
                       np.concatenate([a.origins, b.origins]))
        # capacities differ between the two random batches, so compare a capacity-free metric
        assert merged.values["rmse_ind"] == pytest.approx(rmse_ind(pooled))
        assert merged.values["ed_ind"] == pytest.approx(ed_ind(pooled))

    def test_expand(self):
        assert expand_metrics(["nmae", "nmae_ind", "vs_tsum"]) == ["nmae_ind", "nmae_ssum", "vs_tsum"]
        with pytest.raises(ValueError):
            expand_metrics(["crps"])

    def test_shape_checks(self):
        with pytest.raises(DimensionMismatch):
            batch(np.zeros((2, 1, 3)), scenarios=np.zeros((2, 4, 1, 2)))
        with pytest.raises(DimensionMismatch):
            batch(np.zeros((2, 1, 3)), np.zeros((2, 1, 2)))
