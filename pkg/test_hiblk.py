#!/usr/bin/env python3
"""
Tests for the hiblk command line
"""

import json
import math

import numpy as np
import pytest

import bench
import hiblk
from bench import AlgorithmSpec, ExperimentConfig, PsiRule
from model import save_array, write_json


@pytest.fixture
def identity_problem(tmp_path):
    """Six blocks of length 2 on the identity, block 4 active"""
    problem = tmp_path / 'problem.json'
    write_json(problem, {'dims': [6], 'unit_block': 2, 'sparsity': [1]})
    matrix = save_array(tmp_path / 'D.csv', np.eye(12))
    x = np.zeros(12)
    x[8:10] = [1.5, -0.5]
    signal = save_array(tmp_path / 'x.csv', x)
    measurements = save_array(tmp_path / 'y.csv', x)
    return {'problem': str(problem), 'matrix': str(matrix), 'signal': str(signal),
            'measurements': str(measurements), 'x': x}


@pytest.fixture
def sweep_config(tmp_path):
    cfg = ExperimentConfig('cli', M=24, N=32, d_out=8, d=2, k_out=1, k_in=1,
                           algorithms=[AlgorithmSpec('BOMP', 'bomp'), AlgorithmSpec('HiBOMP-P1', 'hibomp_p', PsiRule.P1)],
                           values=[1, 2], trials=3)
    path = tmp_path / 'cfg.json'
    write_json(path, cfg.to_dict())
    return str(path)


class TestBounds:
    def test_eldar(self, capsys):
        assert hiblk.main(['bounds', '--eldar', '--mu-b', '0.14', '--d', '2', '--nu', '0']) == 0
        captured = capsys.readouterr()
        assert captured.out == '4.571429\n'
        assert 'k ≤ 2' in captured.err

    def test_closed_form(self, capsys):
        assert hiblk.main(['bounds', '--mu-b', '0.14', '--d', '2']) == 0
        bounds = json.loads(capsys.readouterr().out)
        assert bounds['K_eldar'] == pytest.approx(0.5 * (1 / 0.14 + 2))
        assert 'K_bar' in bounds

    def test_domain_error_only(self, capsys):
        assert hiblk.main(['bounds', '--mu-b', '0']) == 1
        assert 'domain_errors' in json.loads(capsys.readouterr().out)

    def test_nothing_to_compute(self):
        with pytest.raises(SystemExit) as e:
            hiblk.main(['bounds'])
        assert e.value.code == 2

    def test_certify_identity(self, identity_problem, capsys):
        p = identity_problem
        code = hiblk.main(['bounds', '--certify', '--problem', p['problem'], '--matrix', p['matrix'],
                           '--signal', p['signal']])
        report = json.loads(capsys.readouterr().out)
        assert code == 0
        assert report['verdict'] == 'certified'
        assert report['support'] == [4]
        assert report['true_support'] == [4]

    def test_certify_needs_inputs(self, identity_problem):
        with pytest.raises(SystemExit) as e:
            hiblk.main(['bounds', '--certify', '--problem', identity_problem['problem']])
        assert e.value.code == 2


class TestCoherence:
    def test_welch(self, capsys):
        assert hiblk.main(['coherence', '--welch', '10', '20']) == 0
        data = json.loads(capsys.readouterr().out)
        assert data['welch'] == pytest.approx(math.sqrt(1 / 19))

    def test_identity_matrix(self, identity_problem, capsys):
        assert hiblk.main(['coherence', '--matrix', identity_problem['matrix'], '--d', '2']) == 0
        data = json.loads(capsys.readouterr().out)
        assert data['mu'] == 0.0
        assert data['mu_block'] == 0.0

    def test_gaussian_needs_seed(self):
        with pytest.raises(SystemExit) as e:
            hiblk.main(['coherence', '--gaussian', '8', '16'])
        assert e.value.code == 2

    def test_gaussian_seeded(self, capsys):
        assert hiblk.main(['coherence', '--gaussian', '8', '16', '--d', '2', '--seed', '4']) == 0
        first = capsys.readouterr().out
        assert hiblk.main(['coherence', '--gaussian', '8', '16', '--d', '2', '--seed', '4']) == 0
        assert capsys.readouterr().out == first

    def test_bad_strategy(self):
        with pytest.raises(SystemExit) as e:
            hiblk.main(['coherence', '--welch', '4', '8', '--strategy', 'sampled:x'])
        assert e.value.code == 2

    def test_missing_matrix_file(self, tmp_path):
        assert hiblk.main(['coherence', '--matrix', str(tmp_path / 'nope.csv')]) == 1


class TestRecover:
    def test_json(self, identity_problem, capsys):
        p = identity_problem
        assert hiblk.main(['recover', '--problem', p['problem'], '--matrix', p['matrix'],
                           '--measurements', p['measurements']]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data['support'] == [4]
        assert 'runtime_ns' not in data

    def test_csv_estimate(self, identity_problem, tmp_path):
        p = identity_problem
        out = tmp_path / 'xhat.csv'
        assert hiblk.main(['recover', '--problem', p['problem'], '--matrix', p['matrix'],
                           '--measurements', p['measurements'], '--algorithm', 'bomp',
                           '--format', 'csv', '--out', str(out)]) == 0
        np.testing.assert_allclose(np.loadtxt(out, delimiter=','), p['x'], atol=1e-12)

    def test_wrong_length(self, identity_problem, tmp_path):
        p = identity_problem
        short = save_array(tmp_path / 'short.csv', np.ones(5))
        assert hiblk.main(['recover', '--problem', p['problem'], '--matrix', p['matrix'],
                           '--measurements', str(short)]) == 1


class TestSweep:
    def test_needs_seed(self, sweep_config):
        with pytest.raises(SystemExit) as e:
            hiblk.main(['sweep', '--config', sweep_config])
        assert e.value.code == 2

    def test_needs_one_source(self, sweep_config):
        with pytest.raises(SystemExit) as e:
            hiblk.main(['sweep', '--config', sweep_config, '--preset', 'fig3-sub-a', '--seed', '1'])
        assert e.value.code == 2

    def test_byte_identical_reruns(self, sweep_config, tmp_path):
        outputs = []
        for name, workers in (('a.csv', '1'), ('b.csv', '2')):
            out = tmp_path / name
            assert hiblk.main(['sweep', '--config', sweep_config, '--seed', '9', '--quiet',
                               '--workers', workers, '--out', str(out)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        rows = bench.read_csv(tmp_path / 'a.csv')
        assert {row.seed for row in rows} == {9}
        assert [row.algorithm for row in rows] == ['BOMP', 'HiBOMP-P1'] * 2

    def test_trials_override(self, sweep_config, capsys):
        assert hiblk.main(['sweep', '--config', sweep_config, '--seed', '2', '--trials', '1', '--quiet',
                           '--format', 'json']) == 0
        data = json.loads(capsys.readouterr().out)
        assert data['config']['trials'] == 1
        assert all(row['trials'] == 1 for row in data['rows'])

    def test_malformed_config(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"name": "x"}')
        assert hiblk.main(['sweep', '--config', str(path), '--seed', '1', '--quiet']) == 1


class TestVerify:
    def test_small_run(self, capsys):
        assert hiblk.main(['verify', '--seed', '7', '--count', '5', '--quiet']) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[-1] == 'total violations: 0'
        assert lines[0].startswith('mixed_norm_bound: checked')

    def test_json(self, capsys):
        assert hiblk.main(['verify', '--seed', '7', '--count', '3', '--suites', 'ceiling',
                           '--format', 'json', '--quiet']) == 0
        data = json.loads(capsys.readouterr().out)
        assert data['violations'] == 0
        assert list(data['suites']) == ['ceiling']

    def test_needs_seed(self):
        with pytest.raises(SystemExit) as e:
            hiblk.main(['verify'])
        assert e.value.code == 2

    def test_unknown_suite(self):
        assert hiblk.main(['verify', '--seed', '1', '--suites', 'triangle', '--quiet']) == 1


class TestPlot:
    def test_svg_is_deterministic(self, sweep_config, tmp_path):
        data = tmp_path / 'sweep.csv'
        hiblk.main(['sweep', '--config', sweep_config, '--seed', '3', '--quiet', '--out', str(data)])
        images = []
        for name in ('a.svg', 'b.svg'):
            out = tmp_path / name
            assert hiblk.main(['plot', str(data), '--out', str(out), '--metric', 'nmse', '--logy']) == 0
            images.append(out.read_bytes())
        assert images[0] == images[1]
        assert b'<svg' in images[0]

    def test_empty_csv(self, tmp_path):
        data = tmp_path / 'empty.csv'
        data.write_text('')
        assert hiblk.main(['plot', str(data), '--out', str(tmp_path / 'x.svg')]) == 1
