#!/usr/bin/env python3
"""
Hierarchical block-sparse signal model
Structures, signals, Gaussian measurement matrices, prior support information (PSI)
and the matrix/vector/JSON file formats used by the CLI
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import FormatError, PsiInfeasibleError, StructureError

logger = logging.getLogger(__name__)

# Binary format: 8-byte magic, rows and cols as little-endian u64, then row-major f64
MAGIC = b'HIBLKv01'
HEADER = struct.Struct('<QQ')
UNIT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class HierStructure:
    """n-mode block layout: mode sizes N_1..N_n, unit block d and sparsity k_1..k_n"""
    dims: Tuple[int, ...]
    unit_block: int
    sparsity: Tuple[int, ...]

    def __repr__(self):
        return f'<HierStructure dims={list(self.dims)} d={self.unit_block} k={list(self.sparsity)}>'

    @property
    def n(self):
        return len(self.dims)

    @property
    def num_units(self):
        return math.prod(self.dims)

    @property
    def N(self):
        return self.num_units * self.unit_block

    @property
    def k(self):
        return math.prod(self.sparsity)

    def units_per_block(self, mode):
        """Unit blocks inside one mode-`mode` block (mode 0 is the whole vector)"""
        return math.prod(self.dims[mode:])

    def block_length(self, mode):
        return self.units_per_block(mode) * self.unit_block

    def num_blocks(self, mode):
        return math.prod(self.dims[:mode])

    def sparsity_prefix(self, mode):
        """k_0·k_1·…·k_{mode-1}, the number of active blocks entering mode `mode`"""
        return math.prod(self.sparsity[:mode - 1]) if mode > 1 else 1

    def to_dict(self):
        return {
            'n': self.n,
            'dims': list(self.dims),
            'unit_block': self.unit_block,
            'sparsity': list(self.sparsity),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            structure = make_structure(data['dims'], data['unit_block'], data['sparsity'])
        except (KeyError, TypeError) as e:
            raise FormatError(f"structure JSON is missing or mistypes a field: {e}")
        if 'n' in data and data['n'] != structure.n:
            raise StructureError(f"n={data['n']} does not match {structure.n} dims")
        return structure


def make_structure(dims, d, sparsity):
    """
    Validate and build a hierarchical structure

    Args:
        dims (list): mode sizes N_1..N_n
        d (int): unit block length
        sparsity (list): per-mode block sparsity k_1..k_n

    Returns:
        HierStructure
    """
    dims = tuple(int(v) for v in dims)
    sparsity = tuple(int(v) for v in sparsity)
    d = int(d)
    if not dims:
        raise StructureError("at least one hierarchical mode is required")
    if len(dims) != len(sparsity):
        raise StructureError(f"dims has {len(dims)} modes but sparsity has {len(sparsity)}")
    if d < 1 or any(v < 1 for v in dims) or any(v < 1 for v in sparsity):
        raise StructureError("dims, unit block and sparsity must all be positive")
    for t, (nt, kt) in enumerate(zip(dims, sparsity), start=1):
        if kt > nt:
            raise StructureError(f"mode {t}: sparsity k={kt} exceeds N={nt}")
    return HierStructure(dims, d, sparsity)


def block_indices(s, mode, path):
    """
    Flat coefficient range of the block named by `path`

    Args:
        s (HierStructure): layout
        mode (int): 0..n, number of path entries
        path (list): one block index per mode 1..mode

    Returns:
        range: contiguous coefficient indices of the block
    """
    path = list(path)
    if not 0 <= mode <= s.n or len(path) != mode:
        raise StructureError(f"path {path} does not name a mode-{mode} block")
    start = 0
    for t, index in enumerate(path, start=1):
        if not 0 <= index < s.dims[t - 1]:
            raise StructureError(f"path entry {index} out of range for mode {t} (N={s.dims[t - 1]})")
        start += index * s.block_length(t)
    return range(start, start + s.block_length(mode))


def global_block(s, path):
    """Global mode-len(path) block index of a block path"""
    mode = len(path)
    return block_indices(s, mode, path).start // s.block_length(mode)


def block_path(s, mode, g):
    if not 0 <= g < s.num_blocks(mode):
        raise StructureError(f"mode-{mode} block {g} out of range")
    path = []
    for t in range(mode, 0, -1):
        g, index = divmod(g, s.dims[t - 1])
        path.append(index)
    return tuple(reversed(path))


def unit_range(s, mode, g):
    """Unit-block indices inside global mode-`mode` block g"""
    upb = s.units_per_block(mode)
    return range(g * upb, (g + 1) * upb)


def unit_columns(units, d):
    """Expand unit-block indices to coefficient (column) indices"""
    units = np.asarray(list(units), dtype=np.int64)
    if units.size == 0:
        return np.zeros(0, dtype=np.int64)
    return (units[:, None] * d + np.arange(d)[None, :]).ravel()


class SignalDist(str, Enum):
    GAUSSIAN = 'gaussian'
    TWO_PAM = 'two_pam'


@dataclass(frozen=True)
class HierSignal:
    """Coefficient vector with its per-mode support annotation"""
    structure: HierStructure
    coeffs: np.ndarray
    support_tree: Tuple[Tuple[int, ...], ...]
    flat_support: Tuple[int, ...]

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        coeffs.setflags(write=False)
        object.__setattr__(self, 'coeffs', coeffs)

    def __repr__(self):
        return f'<HierSignal {self.structure!r} support={list(self.flat_support)}>'

    @property
    def support_columns(self):
        return unit_columns(self.flat_support, self.structure.unit_block)

    def to_dict(self):
        return {
            'structure': self.structure.to_dict(),
            'coeffs': self.coeffs.tolist(),
            'support_tree': [list(level) for level in self.support_tree],
            'flat_support': list(self.flat_support),
        }


def sample_signal(s, dist, rng_seed):
    """
    Draw a hierarchically block-sparse signal

    Block supports are drawn uniformly per mode inside every active parent; nonzero
    entries are standard normal (gaussian) or equiprobable ±1 (two_pam).
    """
    dist = SignalDist(dist)
    rng = np.random.default_rng(rng_seed)
    active = [0]
    tree = []
    for nt, kt in zip(s.dims, s.sparsity):
        chosen = []
        for parent in active:
            picks = np.sort(rng.choice(nt, size=kt, replace=False))
            chosen.extend(int(parent * nt + c) for c in picks)
        active = chosen
        tree.append(tuple(active))

    flat = tuple(active)
    count = len(flat) * s.unit_block
    if dist is SignalDist.GAUSSIAN:
        values = rng.standard_normal(count)
    else:
        values = rng.choice(np.array([-1.0, 1.0]), size=count)
    coeffs = np.zeros(s.N)
    coeffs[unit_columns(flat, s.unit_block)] = values
    return HierSignal(s, coeffs, tuple(tree), flat)


def signal_from_coeffs(s, coeffs):
    """Annotate a coefficient vector read from disk with its support tree"""
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if coeffs.shape[0] != s.N:
        raise StructureError(f"signal has length {coeffs.shape[0]}, structure needs N={s.N}")
    blocks = coeffs.reshape(s.num_units, s.unit_block)
    flat = tuple(int(u) for u in np.flatnonzero(np.any(blocks != 0, axis=1)))
    tree = []
    for t in range(1, s.n + 1):
        active = sorted({u // s.units_per_block(t) for u in flat})
        per_parent = {}
        for g in active:
            per_parent[g // s.dims[t - 1]] = per_parent.get(g // s.dims[t - 1], 0) + 1
        if per_parent and max(per_parent.values()) > s.sparsity[t - 1]:
            raise StructureError(f"mode {t}: signal has more than k={s.sparsity[t - 1]} active blocks in a parent")
        tree.append(tuple(active))
    return HierSignal(s, coeffs, tuple(tree), flat)


@dataclass(frozen=True)
class MeasurementMatrix:
    entries: np.ndarray
    column_norms_unit: bool = True

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.size == 0:
            raise FormatError(f"measurement matrix must be a non-empty 2-D array, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise FormatError("measurement matrix has non-finite entries")
        if self.column_norms_unit:
            deviation = np.max(np.abs(np.linalg.norm(entries, axis=0) - 1.0))
            if deviation > UNIT_NORM_TOL:
                raise FormatError(f"columns are not unit norm (max deviation {deviation:.3e})")
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    def __repr__(self):
        return f'<MeasurementMatrix {self.M}x{self.N}>'

    @property
    def M(self):
        return self.entries.shape[0]

    @property
    def N(self):
        return self.entries.shape[1]

    def check_structure(self, s):
        if self.N != s.N:
            raise StructureError(f"matrix has {self.N} columns but the structure needs N={s.N}")


def as_matrix(D):
    """Plain float array from a MeasurementMatrix or array-like"""
    if isinstance(D, MeasurementMatrix):
        return D.entries
    return np.asarray(D, dtype=float)


def sample_matrix(M, s, rng_seed):
    """i.i.d. N(0, 1/M) entries, columns rescaled to unit ℓ2 norm"""
    if M < 1:
        raise StructureError(f"M must be at least 1, got {M}")
    rng = np.random.default_rng(rng_seed)
    entries = rng.normal(0.0, 1.0 / math.sqrt(M), size=(M, s.N))
    entries /= np.linalg.norm(entries, axis=0)
    return MeasurementMatrix(entries, column_norms_unit=True)


@dataclass(frozen=True)
class OverlapCounts:
    """Per-mode PSI overlap counts"""
    alpha_star: int = 0
    alpha_bar: int = 0
    alpha_delta: int = 0
    alpha_star_delta: int = 0
    beta: int = 0
    gamma: int = 0

    def __post_init__(self):
        if any(v < 0 for v in self.to_dict().values()):
            raise StructureError(f"overlap counts must be non-negative: {self.to_dict()}")

    @property
    def r(self):
        return self.alpha_star + self.alpha_delta + self.alpha_bar + self.beta + self.gamma

    def to_dict(self):
        return {
            'alpha_star': self.alpha_star,
            'alpha_bar': self.alpha_bar,
            'alpha_delta': self.alpha_delta,
            'alpha_star_delta': self.alpha_star_delta,
            'beta': self.beta,
            'gamma': self.gamma,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**{key: int(value) for key, value in data.items() if key != 'r'})


class WeightKind(str, Enum):
    ZERO = 'zero'
    SCALED_CORRELATION = 'scaled_correlation'
    USER_SUPPLIED = 'user_supplied'


@dataclass(frozen=True)
class WeightStrategy:
    """How x_{*Δ} is built when the residual is augmented with Θ^{*Δ} columns"""
    kind: WeightKind = WeightKind.SCALED_CORRELATION
    c: float = 1.0
    values: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', WeightKind(self.kind))
        if self.kind is WeightKind.USER_SUPPLIED and self.values is None:
            raise FormatError("user_supplied weights need a full-length values vector")

    def weights(self, D, residual, columns):
        """Weight vector for the given coefficient columns, or None when disabled"""
        if self.kind is WeightKind.ZERO or len(columns) == 0:
            return None
        if self.kind is WeightKind.SCALED_CORRELATION:
            return self.c * (D[:, columns].T @ residual)
        values = np.asarray(self.values, dtype=float)
        if values.shape[0] != D.shape[1]:
            raise FormatError(f"user weights have length {values.shape[0]}, expected {D.shape[1]}")
        return values[columns]

    def to_dict(self):
        data = {'kind': self.kind.value, 'c': self.c}
        if self.values is not None:
            data['values'] = list(self.values)
        return data

    @classmethod
    def from_dict(cls, data):
        values = data.get('values')
        return cls(WeightKind(data.get('kind', 'scaled_correlation')), float(data.get('c', 1.0)),
                   tuple(values) if values is not None else None)


def _sorted_tuple(values):
    return tuple(sorted(int(v) for v in values))


@dataclass(frozen=True)
class ModePrior:
    """PSI index sets of one hierarchical mode, at unit-block granularity"""
    theta_star: Tuple[int, ...] = ()
    theta_delta: Tuple[int, ...] = ()
    theta_minus: Tuple[int, ...] = ()
    theta_circ: Tuple[int, ...] = ()
    theta_star_delta: Tuple[int, ...] = ()
    whole_blocks: Tuple[int, ...] = ()

    def __post_init__(self):
        for name in ('theta_star', 'theta_delta', 'theta_minus', 'theta_circ', 'theta_star_delta', 'whole_blocks'):
            object.__setattr__(self, name, _sorted_tuple(getattr(self, name)))
        parts = [self.theta_star, self.theta_delta, self.theta_minus, self.theta_circ]
        if sum(len(p) for p in parts) != len(set().union(*parts)):
            raise StructureError("PSI partitions overlap")
        if set(self.theta) & set(self.theta_star_delta):
            raise StructureError("theta and theta_star_delta must be disjoint")

    @property
    def theta(self):
        return tuple(sorted(set(self.theta_star) | set(self.theta_delta)
                            | set(self.theta_minus) | set(self.theta_circ)))

    @property
    def is_empty(self):
        return not self.theta and not self.theta_star_delta

    def to_dict(self):
        return {
            'theta': list(self.theta),
            'theta_star': list(self.theta_star),
            'theta_delta': list(self.theta_delta),
            'theta_minus': list(self.theta_minus),
            'theta_circ': list(self.theta_circ),
            'theta_star_delta': list(self.theta_star_delta),
            'whole_blocks': list(self.whole_blocks),
        }

    @classmethod
    def from_dict(cls, data):
        if 'theta' in data and not any(k in data for k in ('theta_star', 'theta_delta', 'theta_minus', 'theta_circ')):
            # An unclassified theta is treated as Θ* by default
            data = dict(data, theta_star=data['theta'])
        return cls(*(data.get(name, ()) for name in
                     ('theta_star', 'theta_delta', 'theta_minus', 'theta_circ', 'theta_star_delta', 'whole_blocks')))


@dataclass(frozen=True)
class PriorSupport:
    modes: Tuple[ModePrior, ...]
    weight_strategy: WeightStrategy = field(default_factory=WeightStrategy)

    def __repr__(self):
        sizes = [(len(m.theta), len(m.theta_star_delta)) for m in self.modes]
        return f'<PriorSupport |theta|,|theta*Δ| per mode={sizes} weights={self.weight_strategy.kind.value}>'

    @classmethod
    def empty(cls, n, weight_strategy=None):
        return cls(tuple(ModePrior() for _ in range(n)), weight_strategy or WeightStrategy())

    @property
    def is_empty(self):
        return all(m.is_empty for m in self.modes)

    def mode(self, t):
        return self.modes[t - 1]

    def check(self, s):
        if len(self.modes) != s.n:
            raise StructureError(f"PSI has {len(self.modes)} modes, structure has {s.n}")
        for t, m in enumerate(self.modes, start=1):
            for u in m.theta + m.theta_star_delta:
                if not 0 <= u < s.num_units:
                    raise StructureError(f"mode {t}: PSI unit {u} outside 0..{s.num_units - 1}")

    def to_dict(self):
        return {
            'modes': [m.to_dict() for m in self.modes],
            'weight_strategy': self.weight_strategy.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            modes = tuple(ModePrior.from_dict(m) for m in data['modes'])
        except (KeyError, TypeError) as e:
            raise FormatError(f"PSI JSON is malformed: {e}")
        return cls(modes, WeightStrategy.from_dict(data.get('weight_strategy', {})))


def _draw(rng, pool, count, mode, category):
    if count > len(pool):
        raise PsiInfeasibleError(mode, category, count, len(pool))
    if count == 0:
        return []
    picks = rng.choice(np.asarray(pool, dtype=np.int64), size=count, replace=False)
    return sorted(int(v) for v in picks)


def sample_psi(s, x, overlaps, weight_strategy=None, rng_seed=0):
    """
    Draw PSI index sets that hit the realized support in the requested proportions

    Whole-block overlaps (ᾱ) are drawn first, then the unit-level categories from what
    remains. Every category is drawn uniformly without replacement from its global pool.

    Args:
        s (HierStructure): layout
        x (HierSignal): realized signal
        overlaps (list): one OverlapCounts per mode
        weight_strategy (WeightStrategy): x_{*Δ} construction, scaled correlation by default
        rng_seed (int): seed

    Returns:
        PriorSupport
    """
    if len(overlaps) != s.n:
        raise StructureError(f"expected {s.n} overlap entries, got {len(overlaps)}")
    rng = np.random.default_rng(rng_seed)
    true_units = set(x.flat_support)
    modes = []
    for t, counts in enumerate(overlaps, start=1):
        active = x.support_tree[t - 1]
        parents = x.support_tree[t - 2] if t > 1 else (0,)

        whole = _draw(rng, list(active), counts.alpha_bar, t, 'alpha_bar')
        taken = {u for g in whole for u in unit_range(s, t, g)}

        star = _draw(rng, [u for u in x.flat_support if u not in taken], counts.alpha_star, t, 'alpha_star')

        active_units = [u for g in active for u in unit_range(s, t, g)]
        delta_pool = [u for u in active_units if u not in true_units and u not in taken]
        delta = _draw(rng, delta_pool, counts.alpha_delta, t, 'alpha_delta')

        active_set = set(active_units)
        parent_units = [u for p in parents for u in unit_range(s, t - 1, p)]
        minus = _draw(rng, [u for u in parent_units if u not in active_set], counts.beta, t, 'beta')

        parent_set = set(parent_units)
        circ = _draw(rng, [u for u in range(s.num_units) if u not in parent_set], counts.gamma, t, 'gamma')

        theta = taken | set(star) | set(delta) | set(minus) | set(circ)
        star_delta = _draw(rng, [u for u in delta_pool if u not in theta],
                           counts.alpha_star_delta, t, 'alpha_star_delta')

        modes.append(ModePrior(sorted(taken | set(star)), delta, minus, circ, star_delta, whole))
        logger.debug("mode %d PSI: %d theta units, %d augmentation units", t, len(theta), len(star_delta))
    return PriorSupport(tuple(modes), weight_strategy or WeightStrategy())


def classify_psi(s, x, psi):
    """Re-derive the per-mode overlap counts of `psi` against the realized support of `x`"""
    true_units = set(x.flat_support)
    result = []
    for t, m in enumerate(psi.modes, start=1):
        active = set(x.support_tree[t - 1])
        parents = x.support_tree[t - 2] if t > 1 else (0,)
        active_units = {u for g in active for u in unit_range(s, t, g)}
        parent_units = {u for p in parents for u in unit_range(s, t - 1, p)}
        whole = [g for g in m.whole_blocks if g in active]
        whole_units = {u for g in whole for u in unit_range(s, t, g)}

        star = delta = minus = circ = 0
        for u in m.theta:
            if u in whole_units:
                continue
            if u in true_units:
                star += 1
            elif u in active_units:
                delta += 1
            elif u in parent_units:
                minus += 1
            else:
                circ += 1
        star_delta = sum(1 for u in m.theta_star_delta if u in active_units and u not in true_units)
        result.append(OverlapCounts(star, len(whole), delta, star_delta, minus, circ))
    return result


def add_noise(clean, snr_db, rng_seed):
    """
    Add Gaussian noise rescaled so that 10·log10(‖clean‖²/‖noise‖²) equals snr_db exactly

    Returns:
        tuple: (noisy, noise)
    """
    clean = np.asarray(clean, dtype=float)
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(clean.shape[0])
    signal_norm = np.linalg.norm(clean)
    if signal_norm == 0.0:
        return clean.copy(), np.zeros_like(clean)
    noise *= signal_norm / (np.linalg.norm(noise) * 10.0 ** (snr_db / 20.0))
    return clean + noise, noise


# File formats

def save_array(path, array):
    """Write a matrix (or vector as N×1) as headerless CSV or HIBLKv01 binary by suffix"""
    path = Path(path)
    array = np.asarray(array, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    if path.suffix.lower() == '.csv':
        np.savetxt(path, array, delimiter=',', fmt='%.17g')
        return path
    rows, cols = array.shape
    with path.open('wb') as handle:
        handle.write(MAGIC)
        handle.write(HEADER.pack(rows, cols))
        handle.write(np.ascontiguousarray(array, dtype='<f8').tobytes(order='C'))
    return path


def load_array(path):
    """Read a CSV or HIBLKv01 file into a 2-D float array"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}")
    if raw.startswith(MAGIC):
        if len(raw) < len(MAGIC) + HEADER.size:
            raise FormatError(f"{path}: truncated header")
        rows, cols = HEADER.unpack_from(raw, len(MAGIC))
        body = raw[len(MAGIC) + HEADER.size:]
        if len(body) != rows * cols * 8:
            raise FormatError(f"{path}: expected {rows * cols} values, found {len(body) // 8}")
        return np.frombuffer(body, dtype='<f8').reshape(rows, cols).astype(float)
    text = raw.decode('utf-8', errors='replace').strip()
    if not text:
        raise FormatError(f"{path}: empty file")
    try:
        array = np.loadtxt(text.splitlines(), delimiter=',', ndmin=2, dtype=float)
    except ValueError as e:
        raise FormatError(f"{path}: malformed CSV ({e})")
    return array


def load_vector(path):
    array = load_array(path)
    if min(array.shape) != 1:
        raise FormatError(f"{path}: expected a vector, got shape {array.shape}")
    return array.ravel()


def load_matrix(path, unit_norm=True):
    entries = load_array(path)
    return MeasurementMatrix(entries, column_norms_unit=unit_norm)


def read_json(path):
    try:
        with open(path, 'r') as handle:
            return json.load(handle)
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: malformed JSON ({e})")


def write_json(path, data):
    with open(path, 'w') as handle:
        json.dump(data, handle, indent=2, sort_keys=True)
        handle.write('\n')


def load_problem(path):
    """
    Read a structure/PSI document

    Accepts either a bare structure object or {"structure": {...}, "prior": {...}}.

    Returns:
        tuple: (HierStructure, PriorSupport)
    """
    data = read_json(path)
    if 'structure' in data:
        structure = HierStructure.from_dict(data['structure'])
        prior_data = data.get('prior')
    else:
        structure = HierStructure.from_dict(data)
        prior_data = None
    prior = PriorSupport.from_dict(prior_data) if prior_data else PriorSupport.empty(structure.n)
    prior.check(structure)
    return structure, prior


def overlaps_from_list(items: Sequence[Dict]) -> List[OverlapCounts]:
    return [OverlapCounts.from_dict(item) for item in items]
