#!/usr/bin/env python3
"""
Greedy recovery of hierarchically block-sparse signals
HiBOMP-P (recursive block selection with prior support information) and the
HiBOMP, HiOMP, BOMP and OMP baselines, which all run on the same selection kernel
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum
from itertools import combinations, product
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import core
from exceptions import HiblkError, RankError, StructureError
from model import (PriorSupport, WeightKind, as_matrix, block_path, make_structure, unit_columns,
                   unit_range)

logger = logging.getLogger(__name__)

DEFAULT_EPS_FACTOR = 1e-6


class Status(str, Enum):
    CONVERGED_TOL = 'converged_tol'
    MAX_SPARSITY = 'max_sparsity'
    RANK_FAILURE = 'rank_failure'


@dataclass(frozen=True)
class Selection:
    mode: int
    path: Tuple[int, ...]
    step: int
    block: int
    known: bool = False

    def to_dict(self):
        return {'mode': self.mode, 'path': list(self.path), 'step': self.step,
                'block': self.block, 'known': self.known}


@dataclass
class RecoveryResult:
    support: Tuple[int, ...]
    estimate: np.ndarray
    residual_norm_history: List[float]
    selections: List[Selection]
    status: Status
    unit_block: int = 1
    runtime_ns: int = 0

    def __repr__(self):
        return f'<RecoveryResult {self.status.value} support={list(self.support)}>'

    @property
    def iterations(self):
        return len(self.residual_norm_history)

    def coefficient_indices(self):
        return unit_columns(self.support, self.unit_block)

    def to_dict(self):
        return {
            'support': list(self.support),
            'estimate': self.estimate.tolist(),
            'residual_norm_history': list(self.residual_norm_history),
            'selections': [sel.to_dict() for sel in self.selections],
            'status': self.status.value,
            'unit_block': self.unit_block,
            'iterations': self.iterations,
            'runtime_ns': self.runtime_ns,
        }


@dataclass
class StepState:
    """Snapshot handed to an on_step observer right before a selection is scored"""
    mode: int
    parent: int
    candidates: Tuple[int, ...]
    selected: Tuple[int, ...]
    support: Tuple[int, ...]
    estimate: np.ndarray
    residual: np.ndarray
    step: int
    aug_units: Tuple[int, ...] = ()
    aug_weights: Optional[np.ndarray] = None


class _PursuitState:
    """Per-call recursion state: selected blocks per mode, support, LS fit and residual"""

    def __init__(self, D, y, s, psi, eps, on_step=None):
        self.D = D
        self.y = y
        self.s = s
        self.psi = psi
        self.eps = eps
        self.on_step = on_step
        self.d = s.unit_block
        self.support = []
        # Units the current coefficients belong to
        self.fit_units = []
        self.coef = np.zeros(0)
        self.residual = y.copy()
        self.history = []
        self.selections = []
        self.selected = {t: set() for t in range(1, s.n + 1)}
        self.theta = {t: set(psi.mode(t).theta) for t in range(1, s.n + 1)}
        self.step = 0

    @property
    def residual_norm(self):
        return float(np.linalg.norm(self.residual))

    def estimate(self):
        x = np.zeros(self.D.shape[1])
        if self.fit_units:
            x[unit_columns(self.fit_units, self.d)] = self.coef
        return x

    def _refit(self, units=None):
        units = list(self.support) if units is None else list(units)
        D_S = self.D[:, unit_columns(units, self.d)]
        self.coef = core.ls_solve(D_S, self.y)
        self.fit_units = units
        self.residual = self.y - D_S @ self.coef
        self.history.append(self.residual_norm)

    def refit_with_prior(self):
        """Final LS over the emitted support plus every Θ* unit; a no-op when Θ* adds nothing"""
        known = set().union(*(self.psi.mode(t).theta_star for t in range(1, self.s.n + 1)))
        if known <= set(self.support):
            return
        units = sorted(set(self.support) | known)
        logger.debug("final refit adds prior units %s", sorted(known - set(self.support)))
        self._refit(units)

    def _take(self, t, child, known):
        self.selected[t].add(child)
        self.selections.append(Selection(t, block_path(self.s, t, child), self.step, child, known))
        if not known:
            self.step += 1
        if t < self.s.n:
            self.select(t + 1, child)
        else:
            self.support.append(child)
            try:
                self._refit()
            except RankError:
                # Keep support and coefficients consistent for the partial result
                self.support.pop()
                raise

    def _augmentation(self, t, parent_units):
        strategy = self.psi.weight_strategy
        if t >= self.s.n or strategy.kind is WeightKind.ZERO:
            return (), None
        units = tuple(u for u in self.psi.mode(t).theta_star_delta if u in parent_units)
        if not units:
            return (), None
        return units, strategy.weights(self.D, self.residual, unit_columns(units, self.d))

    def select(self, t, parent):
        """Support selection at mode t inside global mode-(t-1) block `parent`"""
        s = self.s
        nt, kt = s.dims[t - 1], s.sparsity[t - 1]
        children = range(parent * nt, (parent + 1) * nt)
        theta = self.theta[t]

        known = [c for c in children if all(u in theta for u in unit_range(s, t, c))][:kt]
        count = 0
        for child in known:
            self._take(t, child, known=True)
            count += 1

        block_len = s.block_length(t)
        lo = parent * s.block_length(t - 1)
        hi = lo + s.block_length(t - 1)
        parent_units = set(unit_range(s, t - 1, parent))

        while count < kt and self.residual_norm > self.eps:
            candidates = tuple(c for c in children if c not in self.selected[t])
            if not candidates:
                break

            aug_units, weights = self._augmentation(t, parent_units)
            if self.on_step is not None:
                self.on_step(StepState(t, parent, candidates, tuple(sorted(self.selected[t] & set(children))),
                                       tuple(self.support), self.estimate(), self.residual.copy(), self.step,
                                       aug_units, weights))

            if weights is not None:
                z = self.residual + self.D[:, unit_columns(aug_units, self.d)] @ weights
            else:
                z = self.residual
            if theta or weights is not None:
                conditioning = sorted(set(self.support) | theta)
                z = core.proj_complement(self.D[:, unit_columns(conditioning, self.d)])(z)

            scores = np.linalg.norm((self.D[:, lo:hi].T @ z).reshape(nt, block_len), axis=1)
            for c in children:
                if c in self.selected[t]:
                    scores[c - children.start] = -np.inf
            child = children.start + int(np.argmax(scores))
            logger.debug("mode %d parent %d: step %d selects block %d (score %.4g)",
                         t, parent, self.step, child, scores[child - children.start])
            self._take(t, child, known=False)
            count += 1

    def result(self, status):
        order = np.argsort(self.support, kind='stable')
        support = tuple(int(self.support[i]) for i in order)
        estimate = self.estimate()
        return RecoveryResult(support, estimate, list(self.history), list(self.selections), status, self.d)


def _prepare(D, y, s, psi, eps):
    D = as_matrix(D)
    y = np.asarray(y, dtype=float).ravel()
    if D.shape[1] != s.N:
        raise StructureError(f"matrix has {D.shape[1]} columns but the structure needs N={s.N}")
    if y.shape[0] != D.shape[0]:
        raise StructureError(f"measurement has length {y.shape[0]}, matrix has {D.shape[0]} rows")
    psi = psi if psi is not None else PriorSupport.empty(s.n)
    psi.check(s)
    if eps is None:
        eps = DEFAULT_EPS_FACTOR * float(np.linalg.norm(y))
    return D, y, psi, eps


def hibomp_p(D, y, s, psi=None, eps=None, on_step=None):
    """
    Hierarchical block OMP with prior support information

    The estimate and status come from a final least-squares fit over the support plus
    every Θ* unit; the reported support holds selected units only.

    Args:
        D: M×N measurement matrix
        y (ndarray): measurement vector
        s (HierStructure): layout and per-mode sparsity
        psi (PriorSupport): prior support, empty by default
        eps (float): residual tolerance, 1e-6·‖y‖ by default
        on_step (callable): observer called with a StepState before every selection

    Returns:
        RecoveryResult
    """
    D, y, psi, eps = _prepare(D, y, s, psi, eps)
    state = _PursuitState(D, y, s, psi, eps, on_step)
    started = time.perf_counter_ns()
    try:
        state.select(1, 0)
        state.refit_with_prior()
    except RankError as e:
        logger.warning("rank failure after %d refits: %s", len(state.history), e)
        status = Status.RANK_FAILURE
    else:
        status = Status.CONVERGED_TOL if state.residual_norm <= eps else Status.MAX_SPARSITY
    result = state.result(status)
    result.runtime_ns = time.perf_counter_ns() - started
    return result


def hibomp(D, y, s, eps=None):
    return hibomp_p(D, y, s, PriorSupport.empty(s.n), eps)


def hiomp(D, y, s, eps=None):
    """HiBOMP on the structure re-read with unit block 1 (the last mode absorbs d)"""
    flat = make_structure(list(s.dims[:-1]) + [s.dims[-1] * s.unit_block], 1,
                          list(s.sparsity[:-1]) + [s.sparsity[-1] * s.unit_block])
    return hibomp(D, y, flat, eps)


def bomp(D, y, d, k, eps=None):
    """Block OMP over consecutive length-d blocks, k blocks at most"""
    D = as_matrix(D)
    if D.shape[1] % d:
        raise StructureError(f"N={D.shape[1]} is not a multiple of d={d}")
    if k == 0:
        return RecoveryResult((), np.zeros(D.shape[1]), [], [], Status.MAX_SPARSITY, d)
    return hibomp(D, y, make_structure([D.shape[1] // d], d, [k]), eps)


def omp(D, y, K, eps=None):
    return bomp(D, y, 1, K, eps)


def admissible_supports(s):
    """Every hierarchically admissible unit-block support, as sorted tuples"""
    levels = [(0,)]
    for nt, kt in zip(s.dims, s.sparsity):
        expanded = []
        for active in levels:
            choices = [[tuple(parent * nt + c for c in combo) for combo in combinations(range(nt), kt)]
                       for parent in active]
            for picks in product(*choices):
                expanded.append(tuple(sorted(u for pick in picks for u in pick)))
        levels = expanded
    return levels


def brute_force_support(D, y, s):
    """Admissible support with the smallest least-squares residual"""
    D = as_matrix(D)
    y = np.asarray(y, dtype=float)
    best, best_norm = None, np.inf
    for support in admissible_supports(s):
        D_S = D[:, unit_columns(support, s.unit_block)]
        try:
            coef = core.ls_solve(D_S, y)
        except RankError:
            continue
        norm = float(np.linalg.norm(y - D_S @ coef))
        if norm < best_norm:
            best, best_norm = support, norm
    return best


# Algorithm registry: every entry is called as fn(D, y, s, psi, eps)

def _unavailable(name):
    def run(*args, **kwargs):
        raise HiblkError(f"{name} is not bundled; plug one in with register_algorithm('{name}', fn)")
    return run


ALGORITHMS: Dict[str, Callable] = {
    'hibomp_p': lambda D, y, s, psi, eps: hibomp_p(D, y, s, psi, eps),
    'hibomp': lambda D, y, s, psi, eps: hibomp(D, y, s, eps),
    'hiomp': lambda D, y, s, psi, eps: hiomp(D, y, s, eps),
    'bomp': lambda D, y, s, psi, eps: bomp(D, y, s.unit_block, s.k, eps),
    'omp': lambda D, y, s, psi, eps: omp(D, y, s.k * s.unit_block, eps),
    'mols': _unavailable('mols'),
}


def register_algorithm(name, fn):
    ALGORITHMS[name] = fn
    logger.info("registered recovery algorithm %s", name)


def get_algorithm(name):
    if name not in ALGORITHMS:
        raise HiblkError(f"unknown algorithm {name!r}; known: {', '.join(sorted(ALGORITHMS))}")
    return ALGORITHMS[name]
