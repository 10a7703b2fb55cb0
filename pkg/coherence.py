#!/usr/bin/env python3
"""
Coherence quantities of a measurement matrix
μ, μ_B, ν, hierarchical block coherence μ_{d*}, hierarchical sub-coherence ν_{d*}
and the Welch bound. μ_{d*} is exact by enumeration at desk scale and seeded sampling
(a lower bound) beyond it.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from exceptions import CoherenceError, SampledCoherenceError
from model import as_matrix, unit_columns

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
ENUM_CAP = int(os.getenv('HIBLK_ENUM_CAP', '2000000'))
THREADS = int(os.getenv('HIBLK_THREADS', str(os.cpu_count() or 1)))


class StrategyKind(str, Enum):
    EXACT = 'exact'
    SAMPLED = 'sampled'


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind = StrategyKind.EXACT
    count: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', StrategyKind(self.kind))
        if self.kind is StrategyKind.SAMPLED and (self.count is None or self.count < 1):
            raise CoherenceError("sampled strategy needs a positive draw count")

    @classmethod
    def exact(cls):
        return cls(StrategyKind.EXACT)

    @classmethod
    def sampled(cls, count, seed=0):
        return cls(StrategyKind.SAMPLED, int(count), int(seed))

    @property
    def is_lower_bound(self):
        return self.kind is StrategyKind.SAMPLED

    def to_dict(self):
        data = {'kind': self.kind.value}
        if self.kind is StrategyKind.SAMPLED:
            data.update(count=self.count, seed=self.seed, lower_bound=True)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(StrategyKind(data.get('kind', 'exact')), data.get('count'), data.get('seed'))


def _gram(D):
    D = as_matrix(D)
    return D, D.T @ D


def _unit_blocks(N, d, what):
    if d < 1 or N % d:
        raise CoherenceError(f"{what}: block length {d} does not divide N={N}")
    return N // d


def mutual_coherence(D):
    """Largest absolute off-diagonal Gram entry"""
    D, G = _gram(D)
    if D.shape[1] < 2:
        raise CoherenceError("mutual coherence needs at least two columns")
    G = np.abs(G)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def block_coherence(D, d):
    """μ_B: max over distinct consecutive d-column blocks of ‖D_[i]ᴴD_[j]‖_2 / d"""
    D, G = _gram(D)
    nb = _unit_blocks(D.shape[1], d, 'block coherence')
    if nb < 2:
        return 0.0
    blocks = G.reshape(nb, d, nb, d).transpose(0, 2, 1, 3)
    norms = np.linalg.norm(blocks, ord=2, axis=(2, 3)) / d
    np.fill_diagonal(norms, 0.0)
    return float(norms.max())


def sub_coherence(D, d):
    """ν: max absolute inner product between distinct columns of the same d-block"""
    D, G = _gram(D)
    nb = _unit_blocks(D.shape[1], d, 'sub-coherence')
    if d == 1:
        return 0.0
    within = np.abs(np.stack([G[b * d:(b + 1) * d, b * d:(b + 1) * d] for b in range(nb)]))
    within[:, np.arange(d), np.arange(d)] = 0.0
    return float(within.max())


def _selections(nb, m, units_per_group):
    """All size-m unit-block selections, optionally confined to one length-units_per_group group"""
    if units_per_group is None:
        return np.array(list(combinations(range(nb), m)), dtype=np.int64).reshape(-1, m)
    rows = []
    for start in range(0, nb, units_per_group):
        rows.extend(combinations(range(start, start + units_per_group), m))
    return np.array(rows, dtype=np.int64).reshape(-1, m)


def _pair_norms(G, d, first, seconds):
    cols_i = unit_columns(first, d)
    cols = np.stack([unit_columns(row, d) for row in seconds])
    blocks = G[cols_i][:, cols].transpose(1, 0, 2)
    return np.linalg.norm(blocks, ord=2, axis=(1, 2))


def _check_hier_args(N, d, d_star, restrict_to):
    nb = _unit_blocks(N, d, 'hierarchical block coherence')
    if d_star < d or d_star % d or N % d_star:
        raise CoherenceError(f"need d | d* | N, got d={d}, d*={d_star}, N={N}")
    group = None
    if restrict_to is not None:
        if restrict_to % d or N % restrict_to or restrict_to < d_star:
            raise CoherenceError(f"mode block length {restrict_to} must be a multiple of d, divide N and hold d*={d_star}")
        group = restrict_to // d
    return nb, d_star // d, group


def enumeration_size(N, d, d_star, restrict_to=None):
    """Number of ordered disjoint selection pairs the exact strategy evaluates"""
    nb, m, group = _check_hier_args(N, d, d_star, restrict_to)
    if group is None:
        return math.comb(nb, m) * math.comb(nb - m, m)
    per_group = math.comb(group, m)
    groups = nb // group
    same = groups * per_group * math.comb(group - m, m)
    return same + groups * (groups - 1) * per_group * per_group


def hier_block_coherence(D, d, d_star, strategy=None, restrict_to=None, cap=None, workers=None):
    """
    Hierarchical block coherence μ_{d*}

    Max over disjoint pairs of size-(d*/d) unit-block selections of ‖D_Ξiᴴ D_Ξj‖_2 / d*.

    Args:
        D: matrix (N columns, unit norm)
        d (int): unit block length
        d_star (int): selection length, a multiple of d
        strategy (Strategy): exact enumeration (default) or seeded sampling
        restrict_to (int): confine each selection to one mode block of this length
        cap (int): exact enumeration limit, HIBLK_ENUM_CAP by default
        workers (int): thread count, HIBLK_THREADS by default

    Returns:
        float: exact value, or a lower bound for the sampled strategy
    """
    strategy = strategy or Strategy.exact()
    D, G = _gram(D)
    nb, m, group = _check_hier_args(D.shape[1], d, d_star, restrict_to)

    if strategy.kind is StrategyKind.SAMPLED:
        return _sampled_hier(G, d, d_star, nb, m, group, strategy)

    cap = ENUM_CAP if cap is None else cap
    size = enumeration_size(D.shape[1], d, d_star, restrict_to)
    if size > cap:
        raise CoherenceError(f"exact μ_{d_star} needs {size} pair evaluations, above the cap of {cap}; use sampling")
    logger.debug("exact μ_%d over %d ordered selection pairs", d_star, size)

    selections = _selections(nb, m, group)

    def best_from(a):
        rest = selections[a + 1:]
        if rest.size == 0:
            return 0.0
        disjoint = rest[~np.isin(rest, selections[a]).any(axis=1)]
        if disjoint.size == 0:
            return 0.0
        return float(_pair_norms(G, d, selections[a], disjoint).max())

    with ThreadPoolExecutor(max_workers=workers or THREADS) as pool:
        best = max(pool.map(best_from, range(len(selections))), default=0.0)
    return best / d_star


def _sampled_hier(G, d, d_star, nb, m, group, strategy):
    rng = np.random.default_rng(strategy.seed)
    best = 0.0
    drawn = 0
    for _ in range(strategy.count):
        if group is None:
            if 2 * m > nb:
                break
            picks = rng.permutation(nb)[:2 * m]
            first, second = np.sort(picks[:m]), np.sort(picks[m:])
        else:
            start_i = group * rng.integers(nb // group)
            first = np.sort(start_i + rng.permutation(group)[:m])
            start_j = group * rng.integers(nb // group)
            pool = np.setdiff1d(np.arange(start_j, start_j + group), first)
            if pool.size < m:
                continue
            second = np.sort(rng.permutation(pool)[:m])
        best = max(best, float(_pair_norms(G, d, first, second[None, :])[0]))
        drawn += 1
    logger.debug("sampled μ_%d from %d draws (lower bound)", d_star, drawn)
    return best / d_star


def hier_sub_coherence(D, d, d_star, mode_block):
    """
    Hierarchical sub-coherence ν_{d*} for mode blocks of length `mode_block`; at d* = d this is ν, not the vacuous 0

    Pairs of distinct columns inside one mode block all lie in a common size-d*/d selection
    once d*/d ≥ 2, so the value is the pair max over each mode block. For d*/d = 1 the
    admissible pairs are those inside one unit block and the value equals ν.
    """
    D, G = _gram(D)
    N = D.shape[1]
    _unit_blocks(N, d, 'hierarchical sub-coherence')
    if d_star < d or d_star % d:
        raise CoherenceError(f"d*={d_star} must be a positive multiple of d={d}")
    if mode_block % d or N % mode_block or mode_block < d_star:
        raise CoherenceError(f"mode block length {mode_block} must tile N={N} and hold d*={d_star}")
    if d_star == d:
        return sub_coherence(D, d)
    span = mode_block
    within = np.abs(np.stack([G[b:b + span, b:b + span] for b in range(0, N, span)]))
    within[:, np.arange(span), np.arange(span)] = 0.0
    return float(within.max())


def welch_bound(M, N):
    """√((N−M)/(M(N−1))), the lower bound on μ of any M×N unit-norm frame"""
    if M < 1 or N < 2 or M > N:
        raise CoherenceError(f"Welch bound needs 1 ≤ M ≤ N and N ≥ 2, got M={M}, N={N}")
    return math.sqrt((N - M) / (M * (N - 1)))


@dataclass(frozen=True)
class CoherenceProfile:
    mu: float
    mu_block: float
    nu_sub: float
    d: int
    mu_hier: Dict[int, float] = field(default_factory=dict)
    nu_hier: Dict[Tuple[int, int], float] = field(default_factory=dict)
    strategy: Dict[int, Strategy] = field(default_factory=dict)
    M: Optional[int] = None
    N: Optional[int] = None

    def __repr__(self):
        return f'<CoherenceProfile mu={self.mu:.4f} mu_B={self.mu_block:.4f} nu={self.nu_sub:.4f}>'

    def mu_at(self, d_star, allow_sampled=False):
        """μ_{d*} for a certificate; μ_B stands in at d* = d"""
        if d_star == self.d and d_star not in self.mu_hier:
            return self.mu_block
        if d_star not in self.mu_hier:
            raise CoherenceError(f"profile has no μ_{d_star}")
        if self.strategy.get(d_star, Strategy.exact()).is_lower_bound and not allow_sampled:
            raise SampledCoherenceError(f"μ_{d_star} is a sampled lower bound; certificates need exact values")
        return self.mu_hier[d_star]

    def nu_at(self, d_star, mode_block):
        if d_star == self.d and (d_star, mode_block) not in self.nu_hier:
            return self.nu_sub
        if (d_star, mode_block) not in self.nu_hier:
            raise CoherenceError(f"profile has no ν_{d_star} for mode blocks of length {mode_block}")
        return self.nu_hier[(d_star, mode_block)]

    def to_dict(self):
        data = {
            'mu': self.mu,
            'mu_block': self.mu_block,
            'nu_sub': self.nu_sub,
            'd': self.d,
            'mu_hier': {str(k): v for k, v in sorted(self.mu_hier.items())},
            'nu_hier': {f'{k}@{L}': v for (k, L), v in sorted(self.nu_hier.items())},
            'strategy': {str(k): s.to_dict() for k, s in sorted(self.strategy.items())},
        }
        if self.M is not None and self.N is not None:
            data.update(M=self.M, N=self.N)
            if self.M <= self.N:
                data['welch'] = welch_bound(self.M, self.N)
        return data

    @classmethod
    def from_dict(cls, data):
        nu_hier = {}
        for key, value in data.get('nu_hier', {}).items():
            d_star, mode_block = key.split('@')
            nu_hier[(int(d_star), int(mode_block))] = float(value)
        return cls(
            mu=float(data['mu']),
            mu_block=float(data['mu_block']),
            nu_sub=float(data['nu_sub']),
            d=int(data['d']),
            mu_hier={int(k): float(v) for k, v in data.get('mu_hier', {}).items()},
            nu_hier=nu_hier,
            strategy={int(k): Strategy.from_dict(v) for k, v in data.get('strategy', {}).items()},
            M=data.get('M'),
            N=data.get('N'),
        )


def coherence_profile(D, d, d_stars=(), mode_blocks=(), strategy=None, restrict_to=None, cap=None, workers=None):
    """
    Build a CoherenceProfile

    Every d* in `d_stars` gets μ_{d*} with the given strategy and ν_{d*} for each mode block
    length in `mode_blocks` that can hold it.
    """
    D = as_matrix(D)
    strategy = strategy or Strategy.exact()
    mu_hier, nu_hier, strategies = {}, {}, {}
    for d_star in d_stars:
        mu_hier[d_star] = hier_block_coherence(D, d, d_star, strategy, restrict_to, cap, workers)
        strategies[d_star] = strategy
        for mode_block in mode_blocks:
            if mode_block >= d_star:
                nu_hier[(d_star, mode_block)] = hier_sub_coherence(D, d, d_star, mode_block)
    return CoherenceProfile(
        mu=mutual_coherence(D),
        mu_block=block_coherence(D, d),
        nu_sub=sub_coherence(D, d),
        d=d,
        mu_hier=mu_hier,
        nu_hier=nu_hier,
        strategy=strategies,
        M=D.shape[0],
        N=D.shape[1],
    )
