#!/usr/bin/env python3
"""
Numeric recovery certificates for HiBOMP-P

Per-step exact recovery conditions (G★ + G∘ < 1), their coherence-based surrogates
(Ḡ★ + Ḡ∘ < 1), the noisy selection conditions and the closed-form reconstructible
sparsity bounds. Conditions are sufficient statements: when a premise fails the
result says so instead of returning a number.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

import coherence
import core
from exceptions import BoundDomainError, CoherenceError, HiblkError, RankError
from model import PriorSupport, as_matrix, classify_psi, unit_columns, unit_range
from recovery import hibomp_p

logger = logging.getLogger(__name__)

SIGMA_TOL = 1e-12


class Verdict(str, Enum):
    CERTIFIED = 'certified'
    VIOLATED = 'violated'
    PREMISE_FAILED = 'premise_failed'


@dataclass
class StepContext:
    """
    Index bookkeeping of one selection step at mode t inside parent block `parent`

    Groups are lists of unit-block indices. Good groups hold the not-yet-explained true
    units of one active unselected child plus its augmentation units; bad groups are the
    inactive unselected children; delta groups are the remaining zero units of the good
    children; outside units are every other true unit still outside the conditioning set,
    chunked into globally aligned groups of d°/d units.
    """
    mode: int
    parent: int
    step: int
    d: int
    conditioning: Tuple[int, ...]
    good_groups: List[Tuple[int, ...]]
    good_coeffs: List[np.ndarray]
    bad_groups: List[Tuple[int, ...]]
    delta_groups: List[Tuple[int, ...]]
    outside_groups: List[Tuple[int, ...]]
    outside_coeffs: List[np.ndarray]
    d_star: int
    d_star_delta: int
    d_delta: int
    d_bar: int
    d_circ: int
    k_t: int
    alpha_bar: int
    gamma: int
    r_psi: int

    @property
    def g(self):
        return self.d_star + self.d_star_delta

    @property
    def k_circ(self):
        return len(self.outside_groups)

    @property
    def r_eff(self):
        return max(self.r_psi, len(self.conditioning))

    @property
    def good_norm(self):
        """‖x_G‖ over the good groups, (g)2,∞"""
        return max((float(np.linalg.norm(c)) for c in self.good_coeffs), default=0.0)

    @property
    def outside_norm(self):
        return max((float(np.linalg.norm(c)) for c in self.outside_coeffs), default=0.0)

    def outside_norm_at(self, length):
        """‖x_O‖ with globally aligned chunks of `length` coefficients"""
        per = max(length // self.d, 1)
        chunks = {}
        for units, coeffs in zip(self.outside_groups, self.outside_coeffs):
            for i, u in enumerate(units):
                chunks.setdefault(u // per, []).append(coeffs[i * self.d:(i + 1) * self.d])
        return max((float(np.linalg.norm(np.concatenate(v))) for v in chunks.values()), default=0.0)

    def to_dict(self):
        return {
            'mode': self.mode, 'parent': self.parent, 'step': self.step,
            'conditioning': list(self.conditioning),
            'good_groups': [list(g) for g in self.good_groups],
            'bad_groups': [list(g) for g in self.bad_groups],
            'delta_groups': [list(g) for g in self.delta_groups],
            'outside_groups': [list(g) for g in self.outside_groups],
            'd_star': self.d_star, 'd_star_delta': self.d_star_delta, 'd_delta': self.d_delta,
            'd_bar': self.d_bar, 'd_circ': self.d_circ, 'k_t': self.k_t, 'k_circ': self.k_circ,
            'alpha_bar': self.alpha_bar, 'gamma': self.gamma, 'r': self.r_psi, 'r_eff': self.r_eff,
        }


def build_context(s, x, psi, state, d_circ=None):
    """
    StepContext for the selection step described by a recovery StepState

    Args:
        s (HierStructure): layout
        x (HierSignal): ground truth
        psi (PriorSupport): prior support used by the run
        state (StepState): snapshot from hibomp_p's on_step hook
        d_circ (int): outside partition length, d*+d*Δ+dΔ by default
    """
    t, parent, d = state.mode, state.parent, s.unit_block
    nt = s.dims[t - 1]
    children = range(parent * nt, (parent + 1) * nt)
    theta = set(psi.mode(t).theta)
    conditioning = set(state.support) | theta
    true_units = set(x.flat_support)
    active = set(x.support_tree[t - 1])
    selected = set(state.selected)
    aug_index = {u: i for i, u in enumerate(state.aug_units)}
    weights = state.aug_weights

    def coeffs_of(units):
        parts = []
        for u in units:
            if u in aug_index and weights is not None:
                i = aug_index[u]
                parts.append(weights[i * d:(i + 1) * d])
            else:
                parts.append(x.coeffs[u * d:(u + 1) * d])
        return np.concatenate(parts) if parts else np.zeros(0)

    good_groups, good_coeffs, bad_groups, delta_groups = [], [], [], []
    star_counts, star_delta_counts = [0], [0]
    in_good = set()
    known_active = sum(1 for c in children if c in selected and c in active
                       and all(u in theta for u in unit_range(s, t, c)))
    for c in children:
        if c in selected:
            continue
        units = unit_range(s, t, c)
        if c in active:
            true_part = [u for u in units if u in true_units and u not in conditioning]
            aug_part = [u for u in units if u in aug_index and weights is not None]
            group = tuple(sorted(true_part + aug_part))
            zeros = tuple(u for u in units if u not in true_units and u not in theta
                          and u not in aug_index and u not in conditioning)
            star_counts.append(len(true_part))
            star_delta_counts.append(len(aug_part))
            if group:
                good_groups.append(group)
                good_coeffs.append(coeffs_of(group))
                in_good.update(group)
            if zeros:
                delta_groups.append(zeros)
        else:
            bad = tuple(u for u in units if u not in conditioning)
            if bad:
                bad_groups.append(bad)

    d_star, d_star_delta = d * max(star_counts), d * max(star_delta_counts)
    d_delta = d * max((len(g) for g in delta_groups), default=0)
    d_bar = d * max((len(g) for g in bad_groups), default=0)
    if d_circ is None:
        d_circ = d_star + d_star_delta + d_delta
    d_circ = max(d_circ, d)
    if d_circ % d:
        raise HiblkError(f"outside partition length {d_circ} is not a multiple of d={d}")

    outside = sorted(u for u in (true_units | set(aug_index if weights is not None else ()))
                     if u not in conditioning and u not in in_good)
    per = d_circ // d
    chunks = {}
    for u in outside:
        chunks.setdefault(u // per, []).append(u)
    outside_groups = [tuple(chunks[key]) for key in sorted(chunks)]
    outside_coeffs = [coeffs_of(group) for group in outside_groups]

    counts = classify_psi(s, x, psi)[t - 1]
    return StepContext(t, parent, state.step, d, tuple(sorted(conditioning)), good_groups, good_coeffs,
                       bad_groups, delta_groups, outside_groups, outside_coeffs, d_star, d_star_delta,
                       d_delta, d_bar, d_circ, s.sparsity[t - 1], known_active, counts.gamma, counts.r)


class _Projected:
    """Columns of Ä = P⊥_{D_C} D for unit groups, with contiguous column groups"""

    def __init__(self, D, ctx):
        self.D = D
        self.d = ctx.d
        self.project = core.proj_complement(D[:, unit_columns(ctx.conditioning, ctx.d)])

    def stack(self, groups):
        units = [u for g in groups for u in g]
        matrix = self.project(self.D[:, unit_columns(units, self.d)])
        spans, start = [], 0
        for g in groups:
            spans.append(np.arange(start, start + len(g) * self.d))
            start += len(g) * self.d
        return matrix, spans


@dataclass
class Theorem1Terms:
    G_star: Optional[float] = None
    G_circ: Optional[float] = None
    parts: Dict[str, float] = field(default_factory=dict)
    premise_ok: bool = True
    reason: str = ''

    @property
    def G_sum(self):
        if not self.premise_ok:
            return None
        return self.G_star + self.G_circ

    def to_dict(self):
        return {'G_star': self.G_star, 'G_circ': self.G_circ, 'G_sum': self.G_sum,
                'premise_ok': self.premise_ok, 'reason': self.reason, 'parts': dict(self.parts)}


def theorem1_from_parts(rho_star, rho_ob, rho_og, rho_odelta, sigma_min, good_norm, outside_norm):
    """
    G★ and G∘ from their ingredients

    Returns:
        tuple: (G_star, G_circ, reason); reason is non-empty when a denominator is not positive
    """
    if good_norm <= 0:
        return None, None, 'good coefficients vanish'
    if sigma_min <= SIGMA_TOL:
        return None, None, 'good Gram matrix is singular'
    if outside_norm <= 0:
        return rho_star, 0.0, ''
    q = outside_norm / good_norm
    root = math.sqrt(rho_og + rho_odelta)
    star_den = 1.0 - root / sigma_min * q
    circ_den = sigma_min / q - root
    if star_den <= 0 or circ_den <= 0:
        return None, None, 'outside interference denominator is not positive'
    return rho_star / star_den, rho_ob / circ_den, ''


def theorem1_terms(D, ctx):
    """Exact G★ and G∘ for one step"""
    D = as_matrix(D)
    if not ctx.good_groups:
        return Theorem1Terms(premise_ok=False, reason='no good group left in the parent block')
    try:
        projected = _Projected(D, ctx)
        A_G, good_spans = projected.stack(ctx.good_groups)
        A_B, bad_spans = projected.stack(ctx.bad_groups)
        pinv_G = core.pinv(A_G)
    except RankError as e:
        return Theorem1Terms(premise_ok=False, reason=f'rank: {e}')

    rho_star = core.rho_c_groups(pinv_G @ A_B, good_spans, bad_spans)
    sigma_min = core.min_singular(A_G.T @ A_G)
    rho_og = rho_odelta = rho_ob = 0.0
    if ctx.outside_groups:
        A_O, out_spans = projected.stack(ctx.outside_groups)
        A_Delta, delta_spans = projected.stack(ctx.delta_groups)
        rho_og = core.rho_c_groups(A_O.T @ A_G, out_spans, good_spans)
        rho_odelta = core.rho_c_groups(A_O.T @ A_Delta, out_spans, delta_spans)
        rho_ob = core.rho_c_groups(A_O.T @ A_B, out_spans, bad_spans)

    parts = {'rho_star': rho_star, 'rho_og': rho_og, 'rho_odelta': rho_odelta, 'rho_ob': rho_ob,
             'sigma_min': sigma_min, 'good_norm': ctx.good_norm, 'outside_norm': ctx.outside_norm}
    G_star, G_circ, reason = theorem1_from_parts(rho_star, rho_ob, rho_og, rho_odelta, sigma_min,
                                                 ctx.good_norm, ctx.outside_norm)
    if reason:
        return Theorem1Terms(parts=parts, premise_ok=False, reason=reason)
    return Theorem1Terms(G_star, G_circ, parts)


def noise_term(D, ctx, noise):
    """‖Ä_Bᴴ n‖ over the bad groups, the instance noise term of the single-step noisy condition"""
    D = as_matrix(D)
    if not ctx.bad_groups:
        return 0.0
    A_B, spans = _Projected(D, ctx).stack(ctx.bad_groups)
    corr = A_B.T @ np.asarray(noise, dtype=float)
    return max(float(np.linalg.norm(corr[span])) for span in spans)


class CoherenceSource:
    """
    Coherence values for certificates

    Reads a CoherenceProfile first and, when a matrix is given, computes missing exact
    values on demand. Sampled profile entries are refused unless allow_sampled is set.
    """

    def __init__(self, D=None, d=None, profile=None, allow_sampled=False, cap=None):
        self.D = as_matrix(D) if D is not None else None
        self.d = d if d is not None else (profile.d if profile is not None else None)
        self.profile = profile
        self.allow_sampled = allow_sampled
        self.cap = cap
        self._mu = {}
        self._nu = {}

    def mu(self, length):
        if length not in self._mu:
            value = None
            if self.profile is not None:
                try:
                    value = self.profile.mu_at(length, self.allow_sampled)
                except CoherenceError:
                    if self.D is None:
                        raise
            if value is None:
                if self.D is None:
                    raise CoherenceError(f"no matrix to compute μ_{length}")
                if length == self.d:
                    value = coherence.block_coherence(self.D, self.d)
                else:
                    value = coherence.hier_block_coherence(self.D, self.d, length, cap=self.cap)
            self._mu[length] = value
        return self._mu[length]

    def nu(self, length, mode_block):
        key = (length, mode_block)
        if key not in self._nu:
            value = None
            if self.profile is not None:
                try:
                    value = self.profile.nu_at(length, mode_block)
                except CoherenceError:
                    if self.D is None:
                        raise
            if value is None:
                if self.D is None:
                    raise CoherenceError(f"no matrix to compute ν_{length}")
                value = coherence.hier_sub_coherence(self.D, self.d, length, mode_block)
            self._nu[key] = value
        return self._nu[key]


@dataclass
class Theorem2Terms:
    Gbar_star: Optional[float] = None
    Gbar_circ: Optional[float] = None
    delta_params: Dict[str, float] = field(default_factory=dict)
    premises: Dict[str, bool] = field(default_factory=dict)
    premise_ok: bool = True
    reason: str = ''

    @property
    def Gbar_sum(self):
        if not self.premise_ok:
            return None
        return self.Gbar_star + self.Gbar_circ

    def to_dict(self):
        return {'Gbar_star': self.Gbar_star, 'Gbar_circ': self.Gbar_circ, 'Gbar_sum': self.Gbar_sum,
                'delta_params': dict(self.delta_params), 'premises': dict(self.premises),
                'premise_ok': self.premise_ok, 'reason': self.reason}


def delta_parameters(mu_g, nu_g, g, d_bar, k_t, alpha_bar, r, d, mu_o=0.0, nu_o=0.0, d_circ=None,
                     k_circ=0, gamma=0, d_delta=0, nu_c=None):
    """
    The δ-parameter set of the coherence surrogate

    nu_g bounds pairs inside one good group; nu_c bounds pairs inside a length-g chunk of the
    conditioning set, which may straddle parent blocks, and defaults to nu_g. k_circ counts the
    outside groups including the γ ones in Θ°, which only the projected term drops.

    Returns:
        tuple: (params, premises) where premises maps each premise name to whether it holds
    """
    nu_c = nu_g if nu_c is None else nu_c
    steps = k_t - alpha_bar
    r_g = math.ceil(r * d / g)
    pivot_g = 1 - (g - 1) * nu_c - (r_g - 1) * g * mu_g
    premises = {
        'psi_gram': pivot_g > 0,
        'good_gram': (g - 1) * nu_g + (steps - 1) * g * mu_g < 1,
    }
    params = {}
    if d_circ and k_circ:
        r_o = math.ceil(r * d / d_circ)
        pivot_o = 1 - (d_circ - 1) * nu_o - (r_o - 1) * d_circ * mu_o
        premises['outside_gram'] = pivot_o > 0
    else:
        pivot_o = 1.0
        premises['outside_gram'] = True
    if not all(premises.values()):
        return params, premises

    sigma = (1 - (g - 1) * nu_g - (steps - 1) * g * mu_g) - g ** 2 * mu_g ** 2 * r_g * steps / pivot_g
    premises['delta_sigma_positive'] = sigma > 0
    params['delta_sigma_min'] = sigma
    if sigma <= 0:
        return params, premises
    ceil_bar = math.ceil(d_bar / g)
    params['delta_good_bar'] = (ceil_bar * steps * g * mu_g
                                + steps * g ** 2 * mu_g ** 2 * ceil_bar * r_g / pivot_g) / sigma

    def outside(length):
        if not (d_circ and k_circ):
            return 0.0
        r_o = math.ceil(r * d / d_circ)
        inner = k_circ * d_circ * mu_o + max(k_circ - gamma, 0) * d_circ ** 2 * mu_o ** 2 * r_o / pivot_o
        return math.ceil(length / d_circ) * inner

    params['delta_circ_good'] = outside(g)
    params['delta_circ_delta'] = outside(d_delta)
    params['delta_circ_bar'] = outside(d_bar)
    return params, premises


def gbar_from_parameters(params, good_norm, outside_norm):
    """Ḡ★ and Ḡ∘ from δ-parameters; (None, None, reason) outside the premise"""
    if good_norm <= 0:
        return None, None, 'good coefficients vanish'
    if outside_norm <= 0:
        return params['delta_good_bar'], 0.0, ''
    q = outside_norm / good_norm
    root = math.sqrt(params['delta_circ_good'] + params['delta_circ_delta'])
    sigma = params['delta_sigma_min']
    star_den = 1 - root / sigma * q
    circ_den = sigma / q - root
    if star_den <= 0 or circ_den <= 0:
        return None, None, 'outside interference denominator is not positive'
    return params['delta_good_bar'] / star_den, params['delta_circ_bar'] / circ_den, ''


def theorem2_terms(s, ctx, profile, allow_sampled=False):
    """
    Coherence surrogate Ḡ★, Ḡ∘ for one step

    Args:
        s (HierStructure): layout
        ctx (StepContext): step bookkeeping
        profile: CoherenceProfile or CoherenceSource
        allow_sampled (bool): accept sampled (lower-bound) coherences

    Returns:
        Theorem2Terms
    """
    source = profile if isinstance(profile, CoherenceSource) else CoherenceSource(
        profile=profile, allow_sampled=allow_sampled)
    if not ctx.good_groups:
        return Theorem2Terms(premise_ok=False, reason='no good group left in the parent block')
    g = ctx.g
    try:
        mu_g = source.mu(g)
        nu_g = source.nu(g, s.block_length(ctx.mode - 1))
        nu_c = source.nu(g, s.N)
        if ctx.outside_groups:
            mu_o = source.mu(ctx.d_circ)
            nu_o = source.nu(ctx.d_circ, s.N)
        else:
            mu_o = nu_o = 0.0
    except CoherenceError as e:
        return Theorem2Terms(premise_ok=False, reason=f'coherence unavailable: {e}')

    # Outside groups already leave out the conditioning set, Θ° included
    k_circ = ctx.k_circ + ctx.gamma if ctx.outside_groups else 0
    params, premises = delta_parameters(mu_g, nu_g, g, ctx.d_bar, ctx.k_t, ctx.alpha_bar, ctx.r_eff, ctx.d,
                                        mu_o, nu_o, ctx.d_circ, k_circ, ctx.gamma, ctx.d_delta, nu_c)
    params.update(mu_g=mu_g, nu_g=nu_g, nu_cond=nu_c, mu_circ=mu_o, nu_circ=nu_o)
    if not all(premises.values()):
        failed = ', '.join(name for name, ok in premises.items() if not ok)
        return Theorem2Terms(delta_params=params, premises=premises, premise_ok=False, reason=failed)
    Gbar_star, Gbar_circ, reason = gbar_from_parameters(params, ctx.good_norm, ctx.outside_norm)
    if reason:
        return Theorem2Terms(delta_params=params, premises=premises, premise_ok=False, reason=reason)
    return Theorem2Terms(Gbar_star, Gbar_circ, params, premises)


def orthogonal_parameters(mu_g, g, d_bar, k_t, mu_o=0.0, d_circ=None, k_circ=0, d_delta=0):
    """δ′ set for hierarchically block-orthogonal matrices (ν = 0, empty PSI)"""
    sigma = 1 - (k_t - 1) * g * mu_g
    if sigma <= 0:
        raise BoundDomainError('orthogonal δ′', '1 - (k_t - 1)·g·μ_g > 0')

    def outside(length):
        if not (d_circ and k_circ):
            return 0.0
        return math.ceil(length / d_circ) * k_circ * d_circ * mu_o

    return {
        'delta_sigma_min': sigma,
        'delta_good_bar': k_t * mu_g * d_bar / sigma,
        'delta_circ_good': outside(g),
        'delta_circ_delta': outside(d_delta),
        'delta_circ_bar': outside(d_bar),
    }


def noisy_conditions(ctx, terms, eps, noise_proxy=None):
    """
    Noisy single-step selection conditions

    Args:
        ctx (StepContext): step bookkeeping
        terms (Theorem2Terms): coherence surrogate of the same step
        eps (float): noise norm bound
        noise_proxy (float): instance value of ‖Ä_Bᴴ n‖; √d̄·ε when omitted

    Returns:
        dict: lhs/rhs and holds flags for the instance, bounded-noise and ℓ2 variants
    """
    if not terms.premise_ok or terms.Gbar_sum >= 1:
        return {'premise_ok': False, 'thm4_holds': False, 'thm5_holds': False, 'coro3_holds': False}
    params = terms.delta_params
    root = math.sqrt(params['delta_circ_good'] + params['delta_circ_delta'])
    sigma = params['delta_sigma_min']
    slack = 1 - terms.Gbar_sum
    bound = 2 * math.sqrt(ctx.d_bar) * eps / slack
    instance = 2 * (noise_proxy if noise_proxy is not None else math.sqrt(ctx.d_bar) * eps) / slack

    lhs = sigma * ctx.good_norm - root * ctx.outside_norm_at(ctx.g + ctx.d_delta)
    good_l2 = float(np.linalg.norm(np.concatenate(ctx.good_coeffs))) if ctx.good_coeffs else 0.0
    outside_l2 = float(np.linalg.norm(np.concatenate(ctx.outside_coeffs))) if ctx.outside_coeffs else 0.0
    lhs_l2 = sigma * good_l2 / math.sqrt(ctx.k_t) - root * outside_l2
    return {
        'premise_ok': True,
        'thm4_lhs': lhs, 'thm4_rhs': instance, 'thm4_holds': lhs > instance,
        'thm5_lhs': lhs, 'thm5_rhs': bound, 'thm5_holds': lhs > bound,
        'coro3_lhs': lhs_l2, 'coro3_rhs': bound, 'coro3_holds': lhs_l2 > bound,
    }


@dataclass
class StepCertificate:
    context: StepContext
    theorem1: Theorem1Terms
    theorem2: Optional[Theorem2Terms] = None
    noisy: Optional[dict] = None

    @property
    def verdict(self):
        if not self.theorem1.premise_ok:
            return Verdict.PREMISE_FAILED
        return Verdict.CERTIFIED if self.theorem1.G_sum < 1 else Verdict.VIOLATED

    def to_dict(self):
        data = {
            'mode': self.context.mode, 'parent': self.context.parent, 'step': self.context.step,
            'verdict': self.verdict.value,
            'context': self.context.to_dict(),
            'theorem1': self.theorem1.to_dict(),
        }
        if self.theorem2 is not None:
            data['theorem2'] = self.theorem2.to_dict()
        if self.noisy is not None:
            data['noisy'] = self.noisy
        return data


@dataclass
class CertificateReport:
    steps: List[StepCertificate]
    support: Tuple[int, ...] = ()
    true_support: Tuple[int, ...] = ()
    optimal_structure: bool = False
    allow_sampled: bool = False
    bounds: Dict[str, float] = field(default_factory=dict)

    @property
    def verdict(self):
        verdicts = {step.verdict for step in self.steps}
        if Verdict.VIOLATED in verdicts:
            return Verdict.VIOLATED
        if Verdict.PREMISE_FAILED in verdicts:
            return Verdict.PREMISE_FAILED
        return Verdict.CERTIFIED

    @property
    def surrogate_certified(self):
        """Every step satisfies Ḡ★ + Ḡ∘ < 1"""
        return bool(self.steps) and all(
            step.theorem2 is not None and step.theorem2.premise_ok and step.theorem2.Gbar_sum < 1
            for step in self.steps)

    def to_dict(self):
        return {
            'verdict': self.verdict.value,
            'surrogate_certified': self.surrogate_certified,
            'support': list(self.support),
            'true_support': list(self.true_support),
            'optimal_structure': self.optimal_structure,
            'unsafe_sampled_override': self.allow_sampled,
            'steps': [step.to_dict() for step in self.steps],
            'bounds': dict(self.bounds),
        }


def erc_certify(D, y, s, psi, x, profile=None, allow_sampled=False, d_circ=None, eps=None, noise=None,
                with_theorem2=True, cap=None):
    """
    Replay HiBOMP-P and evaluate the step conditions at every selection

    Args:
        D: measurement matrix
        y (ndarray): measurements
        s (HierStructure): layout
        psi (PriorSupport): prior support
        x (HierSignal): ground truth the step contexts are built against
        profile (CoherenceProfile): coherence inputs; missing exact values are computed from D
        allow_sampled (bool): accept sampled coherences (flagged in the report)
        d_circ (int): outside partition length override
        eps (float): noise bound; enables the noisy conditions when given
        noise (ndarray): noise vector; enables the instance noise term
        with_theorem2 (bool): evaluate the coherence surrogate
        cap (int): exact enumeration cap for on-demand coherences

    Returns:
        CertificateReport
    """
    D = as_matrix(D)
    psi = psi if psi is not None else PriorSupport.empty(s.n)
    source = CoherenceSource(D, s.unit_block, profile, allow_sampled, cap) if with_theorem2 else None
    steps = []

    def observe(state):
        ctx = build_context(s, x, psi, state, d_circ)
        certificate = StepCertificate(ctx, theorem1_terms(D, ctx))
        if source is not None:
            certificate.theorem2 = theorem2_terms(s, ctx, source)
            if eps is not None:
                proxy = noise_term(D, ctx, noise) if noise is not None else None
                certificate.noisy = noisy_conditions(ctx, certificate.theorem2, eps, proxy)
        logger.debug("step %d mode %d: %s", ctx.step, ctx.mode, certificate.verdict.value)
        steps.append(certificate)

    result = hibomp_p(D, y, s, psi, eps, on_step=observe)
    optimal = all(k == 1 for k in s.sparsity[:-1])
    return CertificateReport(steps, result.support, x.flat_support, optimal, allow_sampled)


# Closed-form reconstructible sparsity bounds

def _positive(name, premise, value):
    if not value > 0:
        raise BoundDomainError(name, premise)


def k_tropp(mu):
    """½(1/μ + 1)"""
    _positive('K_tropp', 'μ > 0', mu)
    return 0.5 * (1 / mu + 1)


def k_eldar(mu_block, d, nu=0.0):
    """½(1/μ_B + d − (d−1)ν/μ_B), the block ERC on k·d"""
    _positive('K_eldar', 'μ_B > 0', mu_block)
    return 0.5 * (1 / mu_block + d - (d - 1) * nu / mu_block)


def k_herzet(mu, good, bad):
    """½(1/μ + g − b + 1) with g good and b bad prior atoms"""
    _positive('K_herzet', 'μ > 0', mu)
    return 0.5 * (1 / mu + good - bad + 1)


def k_bar(mu_block, d):
    _positive('K_bar', 'μ_B > 0', mu_block)
    return 0.5 * (1 / mu_block + d)


def k_star_kxing(mu, nu, d_star, d_delta, prefix=1):
    """Selection-balance bound on k·d* for empty PSI"""
    _positive('K_star_kxing', 'μ_{d*} > 0', mu)
    return prefix * ((1 / mu) * (1 - (d_star - 1) * nu) + d_star) / (1 + math.ceil(d_delta / d_star))


def selection_balance(mu, nu, d_star, d_delta, k_t, alpha_bar, r, d):
    """
    δ* and δ^Δ; δ* ≥ δ^Δ means the true-support correlation dominates the zero-block one

    Returns:
        tuple: (delta_star, delta_delta, holds)
    """
    steps = k_t - alpha_bar
    r_s = math.ceil(r * d / d_star)
    if not (d_star - 1) * nu + (steps - 1) * d_star * mu < 1:
        raise BoundDomainError('selection_balance', '(d*−1)ν + (k_t−ᾱ−1)d*μ < 1')
    pivot = 1 - (d_star - 1) * nu - (r_s - 1) * d_star * mu
    _positive('selection_balance', '(d*−1)ν + (⌈rd/d*⌉−1)d*μ < 1', pivot)
    delta_star = 1 - (d_star - 1) * nu - (steps - 1) * d_star * mu
    delta_delta = (math.ceil(d_delta / d_star) * steps * d_star * mu
                   + r_s ** 2 * math.ceil(steps * d_delta / d_star) * steps * d_star ** 2 * mu ** 2 / pivot)
    return delta_star, delta_delta, delta_star >= delta_delta


def k_star_quadratic(mu_g, mu_block, g, d_bar, ratio, mu_circ=0.0, d_circ=None, k_circ=0, d_delta=0):
    """
    Reconstructible sparsity from the quadratic in δ′σ (ν = 0, empty PSI)

    Args:
        ratio (float): ‖x_O‖_{(d°)2,∞} / ‖x_G‖_{(g)2,∞}, finite and positive

    Returns:
        dict: A, B, C, discriminant, delta_low and K_star (bound on k_t·g)
    """
    if d_bar % g:
        raise BoundDomainError('K_star_rmk11', 'd̄/g integral')
    if not (0 < ratio < math.inf):
        raise BoundDomainError('K_star_rmk11', 'outside/good norm ratio finite and positive')
    _positive('K_star_rmk11', 'μ_B > 0', mu_block)
    p = 1 / ratio
    n = d_bar / g

    def outside(length):
        if not (d_circ and k_circ):
            return 0.0
        return math.ceil(length / d_circ) * k_circ * d_circ * mu_circ

    s_root = math.sqrt(outside(g) + outside(d_delta))
    circ_bar = outside(d_bar)
    A = -p * (n + 1)
    B = n * s_root + (n + d_bar * mu_g) * p + circ_bar + 2 * s_root
    C = -(n + d_bar * mu_g) * s_root - circ_bar * s_root * ratio - s_root ** 2 * ratio
    disc = B * B - 4 * A * C
    if disc < 0:
        raise BoundDomainError('K_star_rmk11', 'non-negative discriminant')
    delta_low = (-B - math.sqrt(disc)) / (2 * A)
    return {'A': A, 'B': B, 'C': C, 'discriminant': disc, 'delta_low': delta_low,
            'K_star': g + (1 - delta_low) / mu_block}


def k_psi_optimal(mu, nu, g, d_bar, r, d, alpha_bar=0):
    """Bound on k_t·g for optimal structures with PSI, r = α*+α^Δ+ᾱ+β"""
    _positive('K_psi_optimal', 'μ_g > 0', mu)
    pivot = 1 - (g - 1) * nu - (math.ceil(r * d / g) - 1) * g * mu
    _positive('K_psi_optimal', '(g−1)ν + (⌈rd/g⌉−1)gμ < 1', pivot)
    numerator = 1 / mu - (g - 1) * nu / mu + g
    scale = (1 - (g - 1) * nu + g * mu) / pivot
    return numerator / ((math.ceil(d_bar / g) + 1) * scale) + alpha_bar * g


def k_no_psi(mu, nu, g, d_bar, prefix=1):
    """Bound on k·g without PSI; with prefix k_0⋯k_{t−1} it bounds the true block sparsity"""
    _positive('K_no_psi', 'μ_g > 0', mu)
    return prefix * (1 / mu - (g - 1) * nu / mu + g) / (math.ceil(d_bar / g) + 1)


def k_bar_star(mu, g, d_bar, prefix=1):
    """Block-orthogonal (ν = 0) reconstructible sparsity"""
    return k_no_psi(mu, 0.0, g, d_bar, prefix)


def k_bar_star_circ(mu, g, d_bar, M, N, prefix=1, limit=False):
    """
    Reconstructible sparsity with ν at the Welch level, in terms of the compression rate ω = M/N

    With limit=True the N → ∞ form at fixed ω is returned.
    """
    _positive('K_bar_star_circ', 'μ_g > 0', mu)
    if not 1 <= M <= N:
        raise BoundDomainError('K_bar_star_circ', '1 ≤ M ≤ N')
    omega = M / N
    spread = math.sqrt((1 - omega) / M) if limit else math.sqrt((1 - omega) / (M * (1 - 1 / N)))
    return prefix * ((1 / mu) * (1 - (g - 1) * spread) + g) / (math.ceil(d_bar / g) + 1)


def mu_n_threshold(k_n, alpha_bar, beta):
    """Largest last-mode coherence for which selection stays correct, 1/(2k_n − ᾱ + β − 1)"""
    denominator = 2 * k_n - alpha_bar + beta - 1
    _positive('mu_n_threshold', '2k_n − ᾱ + β − 1 > 0', denominator)
    return 1 / denominator


def last_mode_condition(mu_n, k_n, alpha_bar, beta):
    """
    (k_n − ᾱ)μ_n / (1 − (k_n + β − 1)μ_n) < 1

    Returns:
        tuple: (lhs, holds)
    """
    denominator = 1 - (k_n + beta - 1) * mu_n
    _positive('last_mode_condition', '(k_n + β − 1)μ_n < 1', denominator)
    lhs = (k_n - alpha_bar) * mu_n / denominator
    return lhs, lhs < 1


def sparsity_bounds(params):
    """
    Every closed-form bound computable from `params`

    Recognized keys: mu, mu_block, nu, mu_hier, nu_hier, mu_circ, d, d_star, d_star_delta,
    d_delta, d_bar, d_circ, g, prefix, k_t, k_n, k_circ, alpha_bar, beta, r, M, N, ratio,
    good_atoms, bad_atoms.

    Returns:
        dict: bound name → value, plus 'domain_errors' naming violated premises
    """
    p = dict(params)
    d = p.get('d', 1)
    g = p.get('g') or (p['d_star'] + p.get('d_star_delta', 0) if 'd_star' in p else None)
    prefix = p.get('prefix', 1)
    bounds, errors = {}, {}

    def attempt(name, needed, fn):
        if all(p.get(key) is not None for key in needed) and (g is not None or 'g' not in needed):
            try:
                bounds[name] = fn()
            except BoundDomainError as e:
                errors[name] = e.premise

    p['g'] = g
    attempt('K_tropp', ['mu'], lambda: k_tropp(p['mu']))
    attempt('K_eldar', ['mu_block'], lambda: k_eldar(p['mu_block'], d, p.get('nu', 0.0)))
    attempt('K_bar', ['mu_block'], lambda: k_bar(p['mu_block'], d))
    attempt('K_herzet', ['mu', 'good_atoms', 'bad_atoms'],
            lambda: k_herzet(p['mu'], p['good_atoms'], p['bad_atoms']))
    attempt('K_star_kxing', ['mu_hier', 'd_star', 'd_delta'],
            lambda: k_star_kxing(p['mu_hier'], p.get('nu_hier', 0.0), p['d_star'], p['d_delta'], prefix))
    attempt('K_star_rmk11', ['mu_hier', 'mu_block', 'g', 'd_bar', 'ratio'],
            lambda: k_star_quadratic(p['mu_hier'], p['mu_block'], g, p['d_bar'], p['ratio'],
                                     p.get('mu_circ', 0.0), p.get('d_circ'), p.get('k_circ', 0),
                                     p.get('d_delta', 0))['K_star'])
    attempt('K_psi_optimal', ['mu_hier', 'g', 'd_bar', 'r'],
            lambda: k_psi_optimal(p['mu_hier'], p.get('nu_hier', 0.0), g, p['d_bar'], p['r'], d,
                                   p.get('alpha_bar', 0)))
    attempt('K_no_psi', ['mu_hier', 'g', 'd_bar'],
            lambda: k_no_psi(p['mu_hier'], p.get('nu_hier', 0.0), g, p['d_bar'], prefix))
    attempt('K_bar_star', ['mu_hier', 'g', 'd_bar'], lambda: k_bar_star(p['mu_hier'], g, p['d_bar'], prefix))
    attempt('K_bar_star_circ', ['mu_hier', 'g', 'd_bar', 'M', 'N'],
            lambda: k_bar_star_circ(p['mu_hier'], g, p['d_bar'], p['M'], p['N'], prefix))
    attempt('K_bar_star_circ_limit', ['mu_hier', 'g', 'd_bar', 'M', 'N'],
            lambda: k_bar_star_circ(p['mu_hier'], g, p['d_bar'], p['M'], p['N'], prefix, limit=True))
    attempt('mu_n_threshold', ['k_n'],
            lambda: mu_n_threshold(p['k_n'], p.get('alpha_bar', 0), p.get('beta', 0)))
    if errors:
        bounds['domain_errors'] = errors
    return bounds
