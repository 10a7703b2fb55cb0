#!/usr/bin/env python3
"""
Tests for metrics, trials, sweeps, presets and the sweep CSV
"""

import dataclasses
import io
import json
import math

import numpy as np
import pytest

import bench
from bench import AlgorithmSpec, ExperimentConfig, PsiRule, SweepAxis, TrialRecord
from exceptions import FormatError, HiblkError
from model import OverlapCounts, make_structure


def record(exact, nmse=0.0, false_alarm=0.0, trial=0):
    return TrialRecord(1, trial, 0, 'OMP', exact, nmse, false_alarm)


def tiny_config(**changes):
    cfg = ExperimentConfig('tiny', M=24, N=32, d_out=8, d=2, k_out=1, k_in=1,
                           algorithms=[AlgorithmSpec('OMP', 'omp'), AlgorithmSpec('HiBOMP', 'hibomp'),
                                       AlgorithmSpec('HiBOMP-P3', 'hibomp_p', PsiRule.P3)],
                           values=[1, 2], trials=4, master_seed=3)
    return dataclasses.replace(cfg, **changes)


def without_runtime(records):
    return [dict(r.to_dict(), runtime_ns=0) for r in records]


class TestMetrics:
    def test_err(self):
        records = [record(i < 800, trial=i) for i in range(1000)]
        assert bench.metric_err(records) == pytest.approx(0.8)
        assert bench.err_standard_error(records) == pytest.approx(math.sqrt(0.8 * 0.2 / 1000))

    def test_nmse(self):
        assert bench.metric_nmse([record(True, 0.0), record(False, 0.5)]) == pytest.approx(0.25)

    def test_false_alarm(self):
        assert bench.metric_false_alarm([0, 1, 2, 3], [0, 1, 2, 4], 4) == 0.25
        assert bench.metric_false_alarm([0, 1], [0, 1], 2) == 0.0

    def test_empty(self):
        with pytest.raises(HiblkError):
            bench.metric_err([])
        with pytest.raises(HiblkError):
            bench.metric_nmse([])
        with pytest.raises(HiblkError):
            bench.metric_false_alarm([], [], 0)


class TestSeeds:
    def test_stable(self):
        assert bench.seed_for(0, 3, 7) == bench.seed_for(0, 3, 7)

    def test_distinct(self):
        seeds = {bench.seed_for(0, p, t) for p in (1, 2, 3) for t in range(10)}
        assert len(seeds) == 30
        assert bench.seed_for(1, 1, 0) != bench.seed_for(0, 1, 0)

    def test_integer_and_float_points_agree(self):
        assert bench.seed_for(0, 2, 1) == bench.seed_for(0, 2.0, 1)


class TestPsiRules:
    def test_levels(self):
        s = make_structure([25, 4], 4, [3, 2])
        assert bench.psi_overlaps(PsiRule.P1, s) == [OverlapCounts(alpha_bar=1), OverlapCounts()]
        assert bench.psi_overlaps('p2', s) == [OverlapCounts(alpha_bar=1), OverlapCounts(beta=1)]
        assert bench.psi_overlaps(PsiRule.P3, s)[0].alpha_star_delta == 6

    def test_p3_per_outer_block(self):
        s = make_structure([25, 4], 4, [1, 2])
        assert bench.psi_overlaps(PsiRule.P3, s)[0].alpha_star_delta == 16 // 4 - 2


class TestConfig:
    def test_validation(self):
        with pytest.raises(HiblkError):
            tiny_config(values=[2, 1])
        with pytest.raises(HiblkError):
            tiny_config(trials=0)
        with pytest.raises(HiblkError):
            tiny_config(values=[])
        with pytest.raises(HiblkError):
            tiny_config(d_out=6)

    def test_structure_per_point(self):
        cfg = tiny_config()
        s = cfg.structure(2)
        assert s.dims == (4, 4)
        assert s.sparsity == (2, 1)
        snr_cfg = tiny_config(sweep_axis=SweepAxis.SNR, values=[10.0])
        assert snr_cfg.structure(10.0).sparsity == (1, 1)
        assert snr_cfg.snr(10.0) == 10.0

    def test_malformed(self):
        with pytest.raises(FormatError):
            ExperimentConfig.from_dict({'name': 'x'})


class TestPresets:
    def test_names(self):
        assert set(bench.presets()) == {'fig3-sub-a', 'fig3-sub-b', 'fig3-main', 'fig4-a', 'fig4-b'}

    def test_captions(self):
        presets = bench.presets()
        sub_a = presets['fig3-sub-a']
        assert (sub_a.M, sub_a.N, sub_a.d_out, sub_a.d, sub_a.k_in) == (80, 400, 16, 4, 2)
        main = presets['fig3-main']
        assert (main.M, main.N, main.d, main.k_in) == (128, 512, 2, 6)
        assert presets['fig3-sub-b'].M == 40
        assert presets['fig4-a'].sweep_axis is SweepAxis.SNR

    def test_mols_slot_disabled(self):
        mols = [spec for spec in bench.roster() if spec.label == 'MOLS']
        assert len(mols) == 1
        assert not mols[0].enabled
        assert mols[0].note

    @pytest.mark.parametrize('name', sorted(bench.presets()))
    def test_json_round_trip(self, name):
        cfg = bench.presets()[name]
        assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_unknown(self):
        with pytest.raises(HiblkError):
            bench.get_preset('fig9')


class TestTrials:
    def test_deterministic(self):
        cfg = tiny_config()
        assert without_runtime(bench.run_trial(cfg, 1, 0)) == without_runtime(bench.run_trial(cfg, 1, 0))

    def test_one_record_per_enabled_algorithm(self):
        cfg = tiny_config()
        cfg.algorithms.append(AlgorithmSpec('MOLS', 'mols', enabled=False))
        labels = [r.algorithm for r in bench.run_trial(cfg, 1, 0)]
        assert labels == ['OMP', 'HiBOMP', 'HiBOMP-P3']

    def test_easy_instance_is_exact(self):
        cfg = ExperimentConfig('easy', M=40, N=80, d_out=4, d=1, k_out=1, k_in=1,
                               algorithms=[AlgorithmSpec('OMP', 'omp')], values=[1], trials=5)
        for i in range(5):
            (r,) = bench.run_trial(cfg, 1, i)
            assert r.exact
            assert r.false_alarm == 0.0
            assert r.nmse < 1e-12
            assert r.iterations == 1

    def test_exact_implies_small_error(self):
        for r in bench.run_point(tiny_config(), 1, workers=1):
            if r.exact:
                assert r.nmse < 1e-12
                assert r.false_alarm == 0.0

    def test_infeasible_psi_counts_as_failure(self):
        cfg = ExperimentConfig('tight', M=16, N=16, d_out=4, d=2, k_out=1, k_in=2,
                               algorithms=[AlgorithmSpec('HiBOMP-P2', 'hibomp_p', PsiRule.P2)], values=[1], trials=1)
        (r,) = bench.run_trial(cfg, 1, 0)
        assert not r.exact
        assert (r.nmse, r.false_alarm) == (1.0, 1.0)
        assert 'beta' in r.error

    def test_noisy_trials(self):
        cfg = tiny_config(sweep_axis=SweepAxis.SNR, values=[20.0], trials=2)
        for r in bench.run_point(cfg, 20.0, workers=1):
            assert 0.0 <= r.false_alarm <= 1.0
            assert r.nmse >= 0.0


class TestSweep:
    def test_single_trial_table(self):
        cfg = tiny_config(values=[1], trials=1)
        rows, records = bench.sweep(cfg, workers=1)
        assert [row.algorithm for row in rows] == ['OMP', 'HiBOMP', 'HiBOMP-P3']
        for row, r in zip(rows, records):
            assert row.err == (1.0 if r.exact else 0.0)
            assert row.nmse_mean == r.nmse
            assert row.false_alarm_mean == r.false_alarm
            assert row.trials == 1

    def test_worker_count_invariance(self):
        cfg = tiny_config()
        outputs = []
        for workers in (1, 3):
            handle = io.StringIO()
            bench.write_rows(bench.sweep(cfg, workers=workers)[0], handle)
            outputs.append(handle.getvalue())
        assert outputs[0] == outputs[1]

    def test_err_complement(self):
        cfg = tiny_config()
        records = bench.run_point(cfg, 2, workers=1)
        for row in bench.aggregate(cfg, 2, records):
            mine = [r for r in records if r.algorithm == row.algorithm]
            assert row.err == 1 - sum(1 for r in mine if not r.exact) / cfg.trials

    def test_adding_points_keeps_existing_rows(self):
        first = bench.sweep(tiny_config(values=[1]), workers=1)[0]
        both = bench.sweep(tiny_config(values=[1, 2]), workers=1)[0]
        assert [row.to_row() for row in both[:len(first)]] == [row.to_row() for row in first]


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = bench.sweep(tiny_config(values=[1], trials=2), workers=1)[0]
        path = bench.write_csv(rows, tmp_path / 's.csv')
        assert path.read_text().splitlines()[0] == 'point,algorithm,err,nmse_mean,false_alarm_mean,trials,seed'
        back = bench.read_csv(path)
        assert [r.algorithm for r in back] == [r.algorithm for r in rows]
        np.testing.assert_allclose([r.err for r in back], [r.err for r in rows])

    def test_empty(self, tmp_path):
        path = tmp_path / 'empty.csv'
        path.write_text('')
        with pytest.raises(FormatError):
            bench.read_csv(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / 'header.csv'
        path.write_text(','.join(bench.CSV_HEADER) + '\n')
        with pytest.raises(FormatError):
            bench.read_csv(path)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / 'wrong.csv'
        path.write_text('a,b\n1,2\n')
        with pytest.raises(FormatError):
            bench.read_csv(path)

    def test_bad_row(self, tmp_path):
        path = tmp_path / 'bad.csv'
        path.write_text(','.join(bench.CSV_HEADER) + '\n1,OMP,x,0,0,1,0\n')
        with pytest.raises(FormatError):
            bench.read_csv(path)


@pytest.mark.slow
class TestDeskScaleTrends:
    """Qualitative curve shapes at 100 trials per point"""

    def _rows(self, name):
        cfg = dataclasses.replace(bench.get_preset(name), trials=100, master_seed=1)
        return bench.sweep(cfg)[0]

    @staticmethod
    def _se(p, n=100):
        return math.sqrt(max(p * (1 - p), 0.25 / n) / n)

    def test_sparsity_sweep_err_non_increasing(self):
        rows = self._rows('fig3-sub-a')
        by_algorithm = {}
        for row in rows:
            by_algorithm.setdefault(row.algorithm, []).append(row.err)
        for values in by_algorithm.values():
            for a, b in zip(values, values[1:]):
                assert b <= a + 2 * math.hypot(self._se(a), self._se(b))

    def test_sparsity_sweep_ordering(self):
        rows = self._rows('fig3-sub-a')
        mean = {}
        for row in rows:
            mean.setdefault(row.algorithm, []).append(row.err)
        mean = {k: float(np.mean(v)) for k, v in mean.items()}
        for better, worse in [('HiBOMP-P3', 'HiBOMP'), ('HiBOMP', 'BOMP'), ('BOMP', 'OMP')]:
            assert mean[better] >= mean[worse] - 2 * math.hypot(self._se(mean[better]), self._se(mean[worse]))

    def test_prior_helps_at_high_snr(self):
        rows = self._rows('fig4-b')
        top = max(row.point for row in rows)
        nmse = {row.algorithm: row.nmse_mean for row in rows if row.point == top}
        assert nmse['HiBOMP-P3'] <= nmse['HiBOMP']
