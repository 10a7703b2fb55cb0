#!/usr/bin/env python3
"""
Monte Carlo recovery experiments
Seeded trials on random Gaussian matrices and hierarchically block-sparse signals, with
ERR / NMSE / false-alarm aggregation over k_out or SNR sweeps, named presets and CSV output
"""

import csv
import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv
from tqdm import tqdm

from exceptions import FormatError, HiblkError, PsiInfeasibleError
from model import (OverlapCounts, SignalDist, WeightStrategy, add_noise, make_structure, read_json,
                   sample_matrix, sample_psi, sample_signal)
from recovery import get_algorithm

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
THREADS = int(os.getenv('HIBLK_THREADS', str(os.cpu_count() or 1)))

CSV_HEADER = ['point', 'algorithm', 'err', 'nmse_mean', 'false_alarm_mean', 'trials', 'seed']
EXACT_REL_TOL = 1e-6


class SweepAxis(str, Enum):
    K_OUT = 'k_out'
    SNR = 'snr'


class PsiRule(str, Enum):
    """Per-point PSI levels: P1 known outer blocks, P2 adds non-support units, P3 augmentation units"""
    P1 = 'p1'
    P2 = 'p2'
    P3 = 'p3'


@dataclass
class AlgorithmSpec:
    label: str
    algorithm: str
    psi: Optional[PsiRule] = None
    weight: WeightStrategy = field(default_factory=WeightStrategy)
    enabled: bool = True
    note: str = ''

    def __post_init__(self):
        if self.psi is not None:
            self.psi = PsiRule(self.psi)

    def to_dict(self):
        data = {'label': self.label, 'algorithm': self.algorithm, 'enabled': self.enabled,
                'weight': self.weight.to_dict()}
        if self.psi is not None:
            data['psi'] = self.psi.value
        if self.note:
            data['note'] = self.note
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(data['label'], data['algorithm'], data.get('psi'),
                   WeightStrategy.from_dict(data.get('weight', {})), data.get('enabled', True), data.get('note', ''))


@dataclass
class ExperimentConfig:
    """
    Two-mode experiment: N/d_out outer blocks of d_out/d unit blocks, k_out active outer
    blocks with k_in active units each
    """
    name: str
    M: int
    N: int
    d_out: int
    d: int
    k_out: int
    k_in: int
    algorithms: List[AlgorithmSpec]
    sweep_axis: SweepAxis = SweepAxis.K_OUT
    values: List[float] = field(default_factory=list)
    snr_db: Optional[float] = None
    signal_dist: SignalDist = SignalDist.GAUSSIAN
    trials: int = 100
    master_seed: int = 0
    eps: Optional[float] = None

    def __post_init__(self):
        self.sweep_axis = SweepAxis(self.sweep_axis)
        self.signal_dist = SignalDist(self.signal_dist)
        if self.trials < 1:
            raise HiblkError(f"trials must be at least 1, got {self.trials}")
        if self.N % self.d_out or self.d_out % self.d:
            raise HiblkError(f"need d | d_out | N, got d={self.d}, d_out={self.d_out}, N={self.N}")
        if not self.values:
            raise HiblkError("a sweep needs at least one point")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise HiblkError(f"sweep values must be strictly increasing: {self.values}")

    def __repr__(self):
        return f'<ExperimentConfig {self.name} M={self.M} N={self.N} {self.sweep_axis.value}={self.values}>'

    def structure(self, point):
        k_out = int(point) if self.sweep_axis is SweepAxis.K_OUT else self.k_out
        return make_structure([self.N // self.d_out, self.d_out // self.d], self.d, [k_out, self.k_in])

    def snr(self, point):
        return float(point) if self.sweep_axis is SweepAxis.SNR else self.snr_db

    def to_dict(self):
        return {
            'name': self.name, 'M': self.M, 'N': self.N, 'd_out': self.d_out, 'd': self.d,
            'k_out': self.k_out, 'k_in': self.k_in,
            'algorithms': [a.to_dict() for a in self.algorithms],
            'sweep_axis': self.sweep_axis.value, 'values': list(self.values),
            'snr_db': self.snr_db, 'signal_dist': self.signal_dist.value,
            'trials': self.trials, 'master_seed': self.master_seed, 'eps': self.eps,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                name=data['name'], M=int(data['M']), N=int(data['N']), d_out=int(data['d_out']), d=int(data['d']),
                k_out=int(data['k_out']), k_in=int(data['k_in']),
                algorithms=[AlgorithmSpec.from_dict(a) for a in data['algorithms']],
                sweep_axis=data.get('sweep_axis', 'k_out'), values=list(data['values']),
                snr_db=data.get('snr_db'), signal_dist=data.get('signal_dist', 'gaussian'),
                trials=int(data.get('trials', 100)), master_seed=int(data.get('master_seed', 0)),
                eps=data.get('eps'),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"experiment config is malformed: {e}")


def load_config(path):
    return ExperimentConfig.from_dict(read_json(path))


@dataclass
class TrialRecord:
    point: float
    trial: int
    seed: int
    algorithm: str
    exact: bool
    nmse: float
    false_alarm: float
    iterations: int = 0
    runtime_ns: int = 0
    error: str = ''

    def to_dict(self):
        return {
            'point': self.point, 'trial': self.trial, 'seed': self.seed, 'algorithm': self.algorithm,
            'exact': self.exact, 'nmse': self.nmse, 'false_alarm': self.false_alarm,
            'iterations': self.iterations, 'runtime_ns': self.runtime_ns, 'error': self.error,
        }


# Metrics

def metric_err(records):
    """Fraction of exact reconstructions"""
    if not records:
        raise HiblkError("ERR of an empty record set")
    return sum(1 for r in records if r.exact) / len(records)


def metric_nmse(records):
    if not records:
        raise HiblkError("NMSE of an empty record set")
    return math.fsum(r.nmse for r in records) / len(records)


def metric_false_alarm(estimate, truth, total):
    """|Ξ̂ \\ Ξ| / (k_out·k_in·d) over coefficient indices"""
    if total <= 0:
        raise HiblkError("false alarm needs a positive support size")
    return len(set(estimate) - set(truth)) / total


def err_standard_error(records):
    p = metric_err(records)
    return math.sqrt(p * (1 - p) / len(records))


def _point_key(point):
    digest = hashlib.sha256(repr(float(point)).encode()).digest()
    return int.from_bytes(digest[:8], 'little')


def seed_for(master_seed, point, trial):
    """Trial seed from (master seed, point, trial); independent of the other sweep points"""
    sequence = np.random.SeedSequence([int(master_seed), _point_key(point), int(trial)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def psi_overlaps(rule, s):
    """Per-mode overlap counts of a PSI level for a two-mode structure"""
    rule = PsiRule(rule)
    k_out, k_in = s.sparsity
    outer = OverlapCounts(alpha_bar=math.ceil(0.2 * k_out))
    if rule is PsiRule.P1:
        return [outer, OverlapCounts()]
    if rule is PsiRule.P2:
        return [outer, OverlapCounts(beta=math.ceil(0.2 * k_in))]
    # Every zero unit of every active outer block
    return [OverlapCounts(alpha_star_delta=k_out * (s.dims[1] - k_in)), OverlapCounts()]


def run_trial(cfg, point, trial_index):
    """
    One trial: every enabled algorithm on the same matrix, signal, PSI draw and noise

    Returns:
        list: one TrialRecord per enabled algorithm
    """
    seed = seed_for(cfg.master_seed, point, trial_index)
    matrix_seed, signal_seed, psi_seed, noise_seed = np.random.SeedSequence(seed).generate_state(4)
    s = cfg.structure(point)
    D = sample_matrix(cfg.M, s, int(matrix_seed)).entries
    x = sample_signal(s, cfg.signal_dist, int(signal_seed))
    clean = D @ x.coeffs
    snr = cfg.snr(point)
    y = clean if snr is None else add_noise(clean, snr, int(noise_seed))[0]
    truth = x.support_columns
    total = len(truth)
    signal_energy = float(np.sum(x.coeffs ** 2))

    records = []
    for spec in cfg.algorithms:
        if not spec.enabled:
            continue
        try:
            psi = None
            if spec.psi is not None:
                psi = sample_psi(s, x, psi_overlaps(spec.psi, s), spec.weight, int(psi_seed))
            result = get_algorithm(spec.algorithm)(D, y, s, psi, cfg.eps)
        except PsiInfeasibleError as e:
            records.append(TrialRecord(point, trial_index, seed, spec.label, False, 1.0, 1.0, error=str(e)))
            continue
        estimate = result.estimate
        columns = result.coefficient_indices()
        nmse = float(np.sum((estimate - x.coeffs) ** 2)) / signal_energy
        exact = set(columns.tolist()) == set(truth.tolist())
        if snr is None:
            exact = exact and math.sqrt(nmse) < EXACT_REL_TOL
        records.append(TrialRecord(point, trial_index, seed, spec.label, exact, nmse,
                                   metric_false_alarm(columns.tolist(), truth.tolist(), total),
                                   result.iterations, result.runtime_ns))
    return records


@dataclass
class SweepRow:
    point: float
    algorithm: str
    err: float
    nmse_mean: float
    false_alarm_mean: float
    trials: int
    seed: int

    def to_row(self):
        return [_format(self.point), self.algorithm, _format(self.err), _format(self.nmse_mean),
                _format(self.false_alarm_mean), str(self.trials), str(self.seed)]


def _format(value):
    return format(float(value), '.12g')


def aggregate(cfg, point, records):
    """Per-algorithm rows for one sweep point, in configured algorithm order"""
    rows = []
    for spec in cfg.algorithms:
        if not spec.enabled:
            continue
        mine = sorted((r for r in records if r.algorithm == spec.label), key=lambda r: r.trial)
        if not mine:
            continue
        rows.append(SweepRow(point, spec.label, metric_err(mine), metric_nmse(mine),
                             math.fsum(r.false_alarm for r in mine) / len(mine), len(mine), cfg.master_seed))
    return rows


def run_point(cfg, point, workers=None):
    """All trial records of one sweep point, ordered by trial index"""
    workers = workers or THREADS
    indices = range(cfg.trials)
    if workers == 1:
        batches = [run_trial(cfg, point, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(lambda i: run_trial(cfg, point, i), indices))
    return [record for batch in batches for record in batch]


def sweep(cfg, workers=None, progress=False):
    """
    Run every sweep point and aggregate

    Returns:
        tuple: (rows, records); rows follow (point, configured algorithm) order
    """
    rows, records = [], []
    for point in tqdm(cfg.values, desc=cfg.name, disable=not progress):
        point_records = run_point(cfg, point, workers)
        point_rows = aggregate(cfg, point, point_records)
        for row in point_rows:
            logger.info("%s %s=%s %s: ERR %.3f NMSE %.3e", cfg.name, cfg.sweep_axis.value, _format(point),
                        row.algorithm, row.err, row.nmse_mean)
        rows.extend(point_rows)
        records.extend(point_records)
    return rows, records


def write_rows(rows, handle):
    writer = csv.writer(handle, lineterminator='\n')
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.to_row())


def write_csv(rows, path):
    with open(path, 'w', newline='') as handle:
        write_rows(rows, handle)
    return path


def read_csv(path):
    """Sweep rows from a CSV written by write_csv"""
    try:
        with open(path, 'r', newline='') as handle:
            lines = list(csv.reader(handle))
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}")
    if not lines or lines[0] != CSV_HEADER:
        raise FormatError(f"{path}: expected header {','.join(CSV_HEADER)}")
    if len(lines) < 2:
        raise FormatError(f"{path}: no sweep rows")
    rows = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            point, algorithm, err, nmse, false_alarm, trials, seed = line
            rows.append(SweepRow(float(point), algorithm, float(err), float(nmse), float(false_alarm),
                                 int(trials), int(seed)))
        except ValueError as e:
            raise FormatError(f"{path}:{number}: malformed row ({e})")
    return rows


# Presets

def roster():
    """The compared algorithms: OMP, BOMP, MOLS (disabled), HiOMP, HiBOMP and the three PSI levels"""
    return [
        AlgorithmSpec('OMP', 'omp'),
        AlgorithmSpec('BOMP', 'bomp'),
        AlgorithmSpec('MOLS', 'mols', enabled=False,
                      note='multiple orthogonal least squares is not bundled; register one to enable'),
        AlgorithmSpec('HiOMP', 'hiomp'),
        AlgorithmSpec('HiBOMP', 'hibomp'),
        AlgorithmSpec('HiBOMP-P1', 'hibomp_p', PsiRule.P1),
        AlgorithmSpec('HiBOMP-P2', 'hibomp_p', PsiRule.P2),
        AlgorithmSpec('HiBOMP-P3', 'hibomp_p', PsiRule.P3),
    ]


def presets():
    """Named experiment configurations, desk scale (100 trials per point)"""
    snr_values = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
    configs = [
        ExperimentConfig('fig3-sub-a', M=80, N=400, d_out=16, d=4, k_out=1, k_in=2, algorithms=roster(),
                         values=[1, 2, 3, 4, 5, 6]),
        ExperimentConfig('fig3-sub-b', M=40, N=400, d_out=16, d=4, k_out=2, k_in=2, algorithms=roster(),
                         values=[1, 2]),
        ExperimentConfig('fig3-main', M=128, N=512, d_out=16, d=2, k_out=1, k_in=6, algorithms=roster(),
                         values=[1, 2, 3, 4, 5, 6, 7, 8]),
        ExperimentConfig('fig4-a', M=128, N=512, d_out=16, d=2, k_out=3, k_in=6, algorithms=roster(),
                         sweep_axis=SweepAxis.SNR, values=snr_values),
        ExperimentConfig('fig4-b', M=80, N=400, d_out=16, d=4, k_out=3, k_in=2, algorithms=roster(),
                         sweep_axis=SweepAxis.SNR, values=snr_values),
    ]
    return {cfg.name: cfg for cfg in configs}


def get_preset(name):
    configs = presets()
    if name not in configs:
        raise HiblkError(f"unknown preset {name!r}; known: {', '.join(configs)}")
    return configs[name]
