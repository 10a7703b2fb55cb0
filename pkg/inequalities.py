#!/usr/bin/env python3
"""
Randomized verification of the supporting inequalities

Each kind pairs a checker, which evaluates one inequality on a concrete instance, with a
generator of random premise-satisfying instances. run_suite draws seeded instances per
kind and reports violations with counterexample dumps.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
import scipy.linalg
from tqdm import tqdm

import coherence
import core
from exceptions import FormatError, RankError
from model import unit_columns

logger = logging.getLogger(__name__)

TOL = 1e-9
MAX_COUNTEREXAMPLES = 5


@dataclass
class InequalityResult:
    kind: str
    holds: bool
    lhs: float
    rhs: float
    premise_ok: bool = True
    detail: Dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {'kind': self.kind, 'holds': self.holds, 'lhs': self.lhs, 'rhs': self.rhs,
                'premise_ok': self.premise_ok, 'detail': dict(self.detail)}


def _le(lhs, rhs):
    return lhs <= rhs + TOL * (1.0 + abs(rhs))


def _premise_failed(kind, **detail):
    return InequalityResult(kind, False, math.nan, math.nan, premise_ok=False, detail=detail)


def _near_orthogonal(rng, M, N, spread=None):
    """Unit-norm columns: orthonormal frame plus a random perturbation of size `spread`"""
    spread = rng.uniform(0.0, 0.35) if spread is None else spread
    Q, _ = scipy.linalg.qr(rng.standard_normal((M, N)), mode='economic')
    D = Q + spread * rng.standard_normal((M, N)) / math.sqrt(M)
    return D / np.linalg.norm(D, axis=0)


def _block_coherences(D, d):
    return coherence.block_coherence(D, d), coherence.sub_coherence(D, d)


# Checkers

def check_mixed_norm_bound(inst):
    """‖D‖_{(q,d)2,1} ≤ ρ_c and ‖D‖_{(q,d)2,∞} ≤ ρ_r, with the operator norms probed from below"""
    D, part = inst['D'], core.BlockPartition(inst['q'], inst['d'])
    samples = inst.get('samples', 64)
    probe_1 = core.operator_norm_probe(D, part, 1, samples, inst.get('seed', 0))
    probe_inf = core.operator_norm_probe(D, part, np.inf, samples, inst.get('seed', 0))
    rho_c, rho_r = core.rho_c(D, part), core.rho_r(D, part)
    return InequalityResult('mixed_norm_bound', _le(probe_1, rho_c) and _le(probe_inf, rho_r),
                            probe_1, rho_c, detail={'probe_inf': probe_inf, 'rho_r': rho_r})


def check_spectral_mixed(inst):
    """‖D‖_2 ≤ √(ρ_c ρ_r) over a square d×d partition"""
    D, part = inst['D'], core.BlockPartition(inst['d'], inst['d'])
    lhs = core.spectral_norm(D)
    rhs = math.sqrt(core.rho_c(D, part) * core.rho_r(D, part))
    return InequalityResult('spectral_mixed', _le(lhs, rhs), lhs, rhs)


def check_submultiplicative(inst):
    """ρ_c(d1,d3)(AB) ≤ ρ_c(d1,d2)(A)·ρ_c(d2,d3)(B)"""
    A, B, d1, d2, d3 = inst['A'], inst['B'], inst['d1'], inst['d2'], inst['d3']
    lhs = core.rho_c(A @ B, core.BlockPartition(d1, d3))
    rhs = core.rho_c(A, core.BlockPartition(d1, d2)) * core.rho_c(B, core.BlockPartition(d2, d3))
    return InequalityResult('submultiplicative', _le(lhs, rhs), lhs, rhs)


def check_submultiplicative_vector(inst):
    """‖Aᴴx‖_{(d2)2,∞} ≤ ρ_c(d1,d2)(A)·‖x‖_{(d1)2,∞}"""
    A, x, d1, d2 = inst['A'], inst['x'], inst['d1'], inst['d2']
    lhs = core.mixed_norm(A.T @ x, d2, np.inf)
    rhs = core.rho_c(A, core.BlockPartition(d1, d2)) * core.mixed_norm(x, d1, np.inf)
    return InequalityResult('submultiplicative_vector', _le(lhs, rhs), lhs, rhs)


def _pad_column_blocks(A, d1, d2):
    """Zero-pad every width-d2 column block up to ⌈d2/d1⌉·d1 columns"""
    width = math.ceil(d2 / d1) * d1
    blocks = [np.pad(A[:, j:j + d2], ((0, 0), (0, width - d2))) for j in range(0, A.shape[1], d2)]
    return np.hstack(blocks)


def check_ceiling(inst):
    """ρ_c(d1,d2)(A) ≤ ⌈d2/d1⌉·ρ_c(d1,d1)(Ā), Ā the block-wise zero-padded A"""
    A, d1, d2 = inst['A'], inst['d1'], inst['d2']
    lhs = core.rho_c(A, core.BlockPartition(d1, d2))
    rhs = math.ceil(d2 / d1) * core.rho_c(_pad_column_blocks(A, d1, d2), core.BlockPartition(d1, d1))
    return InequalityResult('ceiling', _le(lhs, rhs), lhs, rhs)


def check_partition_sandwich(inst):
    """
    Two-part split of every length-d block: the (d)2,∞ norm is sandwiched between
    max-plus-min and max-plus-max of the part norms
    """
    x, d, split = np.asarray(inst['x'], dtype=float), inst['d'], inst['split']
    blocks = x.reshape(-1, d)
    first = np.array([np.sum(b[:s] ** 2) for b, s in zip(blocks, split)])
    second = np.array([np.sum(b[s:] ** 2) for b, s in zip(blocks, split)])
    middle = float(np.max(np.sum(blocks ** 2, axis=1)))
    low = max(first.max() + second.min(), second.max() + first.min())
    high = first.max() + second.max()
    return InequalityResult('partition_sandwich', _le(low, middle) and _le(middle, high), middle, float(high),
                            detail={'low': float(low)})


def check_norm_axioms(inst):
    """ρ_c and ρ_r are non-negative, absolutely homogeneous and subadditive"""
    A, B, c = inst['A'], inst['B'], inst['c']
    part = core.BlockPartition(inst['q'], inst['d'])
    holds = True
    for rho in (core.rho_c, core.rho_r):
        a, b = rho(A, part), rho(B, part)
        holds &= a >= 0 and b >= 0
        holds &= abs(rho(c * A, part) - abs(c) * a) <= TOL * (1.0 + abs(c) * a)
        holds &= _le(rho(A + B, part), a + b)
    holds &= core.rho_c(np.zeros_like(A), part) == 0.0
    lhs = core.rho_c(A + B, part)
    rhs = core.rho_c(A, part) + core.rho_c(B, part)
    return InequalityResult('norm_axioms', bool(holds), lhs, rhs)


def check_submatrix_norm(inst):
    """A column submatrix never has a larger spectral norm"""
    D, columns = inst['D'], inst['columns']
    lhs = core.spectral_norm(D[:, columns])
    rhs = core.spectral_norm(D)
    return InequalityResult('submatrix_norm', _le(lhs, rhs), lhs, rhs)


def check_gram_eigen(inst):
    """1−(d−1)ν−(k−1)dμ_B ≤ λ_min ≤ λ_max ≤ 1+(d−1)ν+(k−1)dμ_B for k blocks of d columns"""
    D, d = inst['D'], inst['d']
    k = D.shape[1] // d
    mu_block, nu = _block_coherences(D, d)
    spread = (d - 1) * nu + (k - 1) * d * mu_block
    if spread >= 1:
        return _premise_failed('gram_eigen', spread=spread)
    eigen = scipy.linalg.eigvalsh(D.T @ D)
    low, high = 1 - spread, 1 + spread
    holds = _le(low, eigen[0]) and _le(eigen[-1], high)
    return InequalityResult('gram_eigen', holds, low, float(eigen[0]),
                            detail={'lambda_max': float(eigen[-1]), 'upper': high})


def _projected_floor(mu, nu, d, s, r):
    """(1−(d−1)ν−(s−1)dμ) − d²μ²rs/(1−(d−1)ν−(r−1)dμ); None outside the premises"""
    spread_s = (d - 1) * nu + (s - 1) * d * mu
    pivot = 1 - (d - 1) * nu - (r - 1) * d * mu
    if spread_s >= 1 or pivot <= 0:
        return None
    return (1 - spread_s) - d * d * mu * mu * r * s / pivot


def check_projected_gram(inst):
    """σ_min of the Gram of P⊥_{D_Θ} D_Ξ is at least the projected floor"""
    D, d, theta, xi = inst['D'], inst['d'], inst['theta'], inst['xi']
    mu_block, nu = _block_coherences(D, d)
    floor = _projected_floor(mu_block, nu, d, len(xi), len(theta))
    if floor is None:
        return _premise_failed('projected_gram', mu_block=mu_block, nu=nu)
    try:
        A = core.proj_complement(D[:, unit_columns(theta, d)])(D[:, unit_columns(xi, d)])
    except RankError:
        return _premise_failed('projected_gram', rank=0.0)
    sigma = core.min_singular(A.T @ A)
    return InequalityResult('projected_gram', _le(floor, sigma), floor, sigma)


def check_hier_projected_gram(inst):
    """
    Projected Gram floor in hierarchical coherences: k_t groups of d*/d units against
    ⌈rd/d*⌉ prior groups, every group inside one mode block
    """
    D, d, d_star, mode_block = inst['D'], inst['d'], inst['d_star'], inst['mode_block']
    xi_groups, theta_groups = inst['xi_groups'], inst['theta_groups']
    mu = coherence.hier_block_coherence(D, d, d_star, workers=1) if d_star > d else coherence.block_coherence(D, d)
    nu = coherence.hier_sub_coherence(D, d, d_star, mode_block)
    theta = [u for g in theta_groups for u in g]
    k_t, groups = len(xi_groups), math.ceil(len(theta) * d / d_star)
    spread = (d_star - 1) * nu + (k_t - 1) * d_star * mu
    pivot = 1 - (d_star - 1) * nu - (groups - 1) * d_star * mu
    if spread >= 1 or pivot <= 0:
        return _premise_failed('hier_projected_gram', mu=mu, nu=nu)
    floor = (1 - spread) - d_star ** 2 * mu ** 2 * groups * k_t / pivot
    xi = [u for g in xi_groups for u in g]
    try:
        A = core.proj_complement(D[:, unit_columns(theta, d)])(D[:, unit_columns(xi, d)])
    except RankError:
        return _premise_failed('hier_projected_gram', rank=0.0)
    sigma = core.min_singular(A.T @ A)
    return InequalityResult('hier_projected_gram', _le(floor, sigma), floor, sigma)


def check_pinv_bounds(inst):
    """√(1−…)‖(A†)ᴴx‖ ≤ ‖x‖ ≤ √(1+…)‖(A†)ᴴx‖ for A = D_Ξ"""
    D, d, xi, x = inst['D'], inst['d'], inst['xi'], inst['x']
    mu_block, nu = _block_coherences(D, d)
    spread = (d - 1) * nu + (len(xi) - 1) * d * mu_block
    if spread >= 1:
        return _premise_failed('pinv_bounds', spread=spread)
    v = float(np.linalg.norm(core.pinv(D[:, unit_columns(xi, d)]).T @ x))
    norm = float(np.linalg.norm(x))
    low, high = math.sqrt(1 - spread) * v, math.sqrt(1 + spread) * v
    return InequalityResult('pinv_bounds', _le(low, norm) and _le(norm, high), low, norm, detail={'upper': high})


def check_projected_pinv_bounds(inst):
    """Same sandwich for Ä = P⊥_{D_Θ} D_Ξ, the lower factor being the projected floor"""
    D, d, theta, xi, x = inst['D'], inst['d'], inst['theta'], inst['xi'], inst['x']
    mu_block, nu = _block_coherences(D, d)
    floor = _projected_floor(mu_block, nu, d, len(xi), len(theta))
    if floor is None or floor <= 0:
        return _premise_failed('projected_pinv_bounds', mu_block=mu_block, nu=nu)
    try:
        A = core.proj_complement(D[:, unit_columns(theta, d)])(D[:, unit_columns(xi, d)])
        v = float(np.linalg.norm(core.pinv(A).T @ x))
    except RankError:
        return _premise_failed('projected_pinv_bounds', rank=0.0)
    norm = float(np.linalg.norm(x))
    high = math.sqrt(1 + (d - 1) * nu + (len(xi) - 1) * d * mu_block) * v
    low = math.sqrt(floor) * v
    return InequalityResult('projected_pinv_bounds', _le(low, norm) and _le(norm, high), low, norm,
                            detail={'upper': high})


def check_coherence_ordering(inst):
    """μ_{d*} ≤ μ_B ≤ μ and ν ≤ ν_{d*} ≤ μ"""
    D, d, d_star, mode_block = inst['D'], inst['d'], inst['d_star'], inst['mode_block']
    mu = coherence.mutual_coherence(D)
    mu_block, nu = _block_coherences(D, d)
    mu_hier = coherence.hier_block_coherence(D, d, d_star, workers=1)
    nu_hier = coherence.hier_sub_coherence(D, d, d_star, mode_block)
    holds = _le(mu_hier, mu_block) and _le(mu_block, mu) and _le(nu, nu_hier) and _le(nu_hier, mu)
    return InequalityResult('coherence_ordering', holds, mu_hier, mu_block,
                            detail={'mu': mu, 'nu': nu, 'nu_hier': nu_hier})


def check_orthogonal_bound(inst):
    """Orthonormal mode blocks: μ_{d̂} over in-block selections is at most 1/d̂"""
    D, d, d_hat, mode_block = inst['D'], inst['d'], inst['d_hat'], inst['mode_block']
    nu_hier = coherence.hier_sub_coherence(D, d, d_hat, mode_block) if d_hat > d else coherence.sub_coherence(D, d)
    if nu_hier > 1e-10:
        return _premise_failed('orthogonal_bound', nu_hier=nu_hier)
    lhs = coherence.hier_block_coherence(D, d, d_hat, restrict_to=mode_block, workers=1)
    return InequalityResult('orthogonal_bound', _le(lhs, 1 / d_hat), lhs, 1 / d_hat)


# Generators

def gen_mixed_norm_bound(rng):
    q, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    m, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    return {'D': rng.standard_normal((m * q, n * d)), 'q': q, 'd': d, 'samples': 32,
            'seed': int(rng.integers(2 ** 31))}


def gen_spectral_mixed(rng):
    d = int(rng.integers(1, 4))
    return {'D': rng.standard_normal((int(rng.integers(1, 5)) * d, int(rng.integers(1, 5)) * d)), 'd': d}


def gen_submultiplicative(rng):
    d1, d2, d3 = (int(v) for v in rng.integers(1, 4, size=3))
    m, n, g = (int(v) for v in rng.integers(1, 4, size=3))
    return {'A': rng.standard_normal((m * d1, n * d2)), 'B': rng.standard_normal((n * d2, g * d3)),
            'd1': d1, 'd2': d2, 'd3': d3}


def gen_submultiplicative_vector(rng):
    d1, d2 = (int(v) for v in rng.integers(1, 4, size=2))
    m, n = (int(v) for v in rng.integers(1, 5, size=2))
    return {'A': rng.standard_normal((m * d1, n * d2)), 'x': rng.standard_normal(m * d1), 'd1': d1, 'd2': d2}


def gen_ceiling(rng):
    d1, d2 = int(rng.integers(1, 4)), int(rng.integers(1, 7))
    m, n = (int(v) for v in rng.integers(1, 4, size=2))
    return {'A': rng.standard_normal((m * d1, n * d2)), 'd1': d1, 'd2': d2}


def gen_partition_sandwich(rng):
    d, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    return {'x': rng.standard_normal(n * d), 'd': d, 'split': [int(v) for v in rng.integers(0, d + 1, size=n)]}


def gen_norm_axioms(rng):
    q, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    shape = (int(rng.integers(1, 4)) * q, int(rng.integers(1, 4)) * d)
    return {'A': rng.standard_normal(shape), 'B': rng.standard_normal(shape), 'c': float(rng.normal() * 3),
            'q': q, 'd': d}


def gen_submatrix_norm(rng):
    M, N = int(rng.integers(2, 8)), int(rng.integers(2, 10))
    count = int(rng.integers(1, N + 1))
    return {'D': rng.standard_normal((M, N)), 'columns': sorted(int(c) for c in rng.choice(N, count, replace=False))}


def gen_gram_eigen(rng):
    d, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    return {'D': _near_orthogonal(rng, 3 * d * k + 4, d * k), 'd': d}


def _theta_xi(rng, units, r_max=3, s_max=3):
    s = int(rng.integers(1, s_max + 1))
    r = int(rng.integers(0, r_max + 1))
    picks = [int(u) for u in rng.permutation(units)[:s + r]]
    return sorted(picks[:s]), sorted(picks[s:])


def gen_projected_gram(rng):
    d = int(rng.integers(1, 3))
    units = 8
    xi, theta = _theta_xi(rng, units)
    return {'D': _near_orthogonal(rng, 3 * units * d, units * d, rng.uniform(0.0, 0.2)), 'd': d,
            'theta': theta, 'xi': xi}


def gen_hier_projected_gram(rng):
    d = 1
    d_star = int(rng.choice([1, 2]))
    mode_block, units = 6, 12
    m = d_star // d
    # Disjoint groups of m units, each inside one mode block
    pools = [list(rng.permutation(np.arange(b, b + mode_block))) for b in range(0, units, mode_block)]
    groups = []
    for pool in pools:
        while len(pool) >= m:
            groups.append(sorted(int(pool.pop()) for _ in range(m)))
    order = rng.permutation(len(groups))
    k_t = int(rng.integers(1, 3))
    r = int(rng.integers(0, 3))
    chosen = [groups[i] for i in order[:k_t + r]]
    return {'D': _near_orthogonal(rng, 40, units, rng.uniform(0.0, 0.15)), 'd': d, 'd_star': d_star,
            'mode_block': mode_block, 'xi_groups': chosen[:k_t], 'theta_groups': chosen[k_t:]}


def gen_pinv_bounds(rng):
    d = int(rng.integers(1, 3))
    xi, _ = _theta_xi(rng, 6, r_max=0)
    return {'D': _near_orthogonal(rng, 24 * d, 6 * d, rng.uniform(0.0, 0.2)), 'd': d, 'xi': xi,
            'x': rng.standard_normal(len(xi) * d)}


def gen_projected_pinv_bounds(rng):
    inst = gen_projected_gram(rng)
    inst['x'] = rng.standard_normal(len(inst['xi']) * inst['d'])
    return inst


def gen_coherence_ordering(rng):
    d = int(rng.choice([1, 2]))
    d_star = d * int(rng.choice([1, 2]))
    N = 12
    M = int(rng.integers(4, 20))
    D = rng.standard_normal((M, N))
    return {'D': D / np.linalg.norm(D, axis=0), 'd': d, 'd_star': d_star, 'mode_block': 6 if d_star <= 6 else N}


def gen_orthogonal_bound(rng):
    d = 1
    mode_block = int(rng.choice([2, 3, 4]))
    blocks = int(rng.integers(2, 4))
    M = mode_block + int(rng.integers(0, 4))
    D = np.hstack([scipy.linalg.qr(rng.standard_normal((M, mode_block)), mode='economic')[0]
                   for _ in range(blocks)])
    d_hat = int(rng.integers(1, mode_block + 1))
    # d̂ must divide N
    while (blocks * mode_block) % d_hat:
        d_hat -= 1
    return {'D': D, 'd': d, 'd_hat': d_hat, 'mode_block': mode_block}


KINDS: Dict[str, Dict[str, Callable]] = {
    'mixed_norm_bound': {'check': check_mixed_norm_bound, 'generate': gen_mixed_norm_bound},
    'spectral_mixed': {'check': check_spectral_mixed, 'generate': gen_spectral_mixed},
    'submultiplicative': {'check': check_submultiplicative, 'generate': gen_submultiplicative},
    'submultiplicative_vector': {'check': check_submultiplicative_vector, 'generate': gen_submultiplicative_vector},
    'ceiling': {'check': check_ceiling, 'generate': gen_ceiling},
    'partition_sandwich': {'check': check_partition_sandwich, 'generate': gen_partition_sandwich},
    'norm_axioms': {'check': check_norm_axioms, 'generate': gen_norm_axioms},
    'submatrix_norm': {'check': check_submatrix_norm, 'generate': gen_submatrix_norm},
    'gram_eigen': {'check': check_gram_eigen, 'generate': gen_gram_eigen},
    'projected_gram': {'check': check_projected_gram, 'generate': gen_projected_gram},
    'hier_projected_gram': {'check': check_hier_projected_gram, 'generate': gen_hier_projected_gram},
    'pinv_bounds': {'check': check_pinv_bounds, 'generate': gen_pinv_bounds},
    'projected_pinv_bounds': {'check': check_projected_pinv_bounds, 'generate': gen_projected_pinv_bounds},
    'coherence_ordering': {'check': check_coherence_ordering, 'generate': gen_coherence_ordering},
    'orthogonal_bound': {'check': check_orthogonal_bound, 'generate': gen_orthogonal_bound},
}


def verify_inequality(kind, instance):
    """
    Evaluate one inequality kind on an instance

    Returns:
        InequalityResult: lhs, rhs, holds and premise_ok; premise failures never count as violations
    """
    if kind not in KINDS:
        raise FormatError(f"unknown inequality kind {kind!r}; known: {', '.join(KINDS)}")
    inst = {key: np.asarray(value, dtype=float) if key in ('D', 'A', 'B', 'x') else value
            for key, value in instance.items()}
    try:
        return KINDS[kind]['check'](inst)
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise FormatError(f"malformed {kind} instance: {e}")


def _dump(instance):
    return {key: value.tolist() if isinstance(value, np.ndarray) else value for key, value in instance.items()}


@dataclass
class SuiteSummary:
    kind: str
    checked: int = 0
    premise_failed: int = 0
    violations: int = 0
    counterexamples: List[dict] = field(default_factory=list)

    def to_dict(self):
        return {'kind': self.kind, 'checked': self.checked, 'premise_failed': self.premise_failed,
                'violations': self.violations, 'counterexamples': list(self.counterexamples)}


def run_suite(kinds=None, count=1000, seed=0, progress=False):
    """
    Draw `count` instances per kind and check them

    Args:
        kinds (list): kind names, all by default
        count (int): instances per kind
        seed (int): master seed; each kind draws from its own stream
        progress (bool): show a tqdm bar

    Returns:
        dict: kind → SuiteSummary
    """
    names = list(KINDS) if not kinds or kinds == ['all'] else list(kinds)
    unknown = [name for name in names if name not in KINDS]
    if unknown:
        raise FormatError(f"unknown inequality kinds: {', '.join(unknown)}")
    order = list(KINDS)
    summaries = {}
    for name in tqdm(names, desc='suites', disable=not progress):
        rng = np.random.default_rng(np.random.SeedSequence([seed, order.index(name)]))
        summary = SuiteSummary(name)
        for _ in range(count):
            instance = KINDS[name]['generate'](rng)
            result = KINDS[name]['check'](instance)
            if not result.premise_ok:
                summary.premise_failed += 1
                continue
            summary.checked += 1
            if not result.holds:
                summary.violations += 1
                if len(summary.counterexamples) < MAX_COUNTEREXAMPLES:
                    summary.counterexamples.append({'instance': _dump(instance), 'result': result.to_dict()})
        logger.info("%s: %d checked, %d premise failures, %d violations",
                    name, summary.checked, summary.premise_failed, summary.violations)
        summaries[name] = summary
    return summaries


def total_violations(summaries):
    return sum(summary.violations for summary in summaries.values())
