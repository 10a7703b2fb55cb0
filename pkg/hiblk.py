#!/usr/bin/env python3
"""
hiblk command line
Coherence analysis, sparsity bounds and step certificates, one-shot recovery,
Monte Carlo sweeps, inequality suites and SVG plots

Machine-readable output goes to stdout or --out; status lines go to stderr.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import dataclasses
import json
import logging
import math
import os
import sys

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from dotenv import load_dotenv  # noqa: E402

import bench  # noqa: E402
import certificates  # noqa: E402
import inequalities  # noqa: E402
from coherence import CoherenceProfile, Strategy, coherence_profile, welch_bound  # noqa: E402
from exceptions import FormatError, HiblkError  # noqa: E402
from model import (load_matrix, load_problem, load_vector, make_structure, read_json, sample_matrix,  # noqa: E402
                   save_array, signal_from_coeffs)
from recovery import ALGORITHMS, get_algorithm  # noqa: E402

load_dotenv()

logger = logging.getLogger('hiblk')

# Configuration
LOG_LEVEL = os.getenv('HIBLK_LOG_LEVEL', 'WARNING').upper()
SVG_SALT = 'hiblk'

PLOT_METRICS = {'err': 'err', 'nmse': 'nmse_mean', 'false_alarm': 'false_alarm_mean'}
METRIC_LABELS = {'err': 'ERR', 'nmse': 'NMSE', 'false_alarm': 'false alarm ratio'}

# (flag, sparsity_bounds key, type)
BOUND_PARAMS = [
    ('--mu', 'mu', float), ('--mu-b', 'mu_block', float), ('--nu', 'nu', float),
    ('--mu-hier', 'mu_hier', float), ('--nu-hier', 'nu_hier', float), ('--mu-circ', 'mu_circ', float),
    ('--d', 'd', int), ('--d-star', 'd_star', int), ('--d-star-delta', 'd_star_delta', int),
    ('--d-delta', 'd_delta', int), ('--d-bar', 'd_bar', int), ('--d-circ', 'd_circ', int),
    ('--g', 'g', int), ('--prefix', 'prefix', int), ('--k-t', 'k_t', int), ('--k-n', 'k_n', int),
    ('--k-circ', 'k_circ', int), ('--alpha-bar', 'alpha_bar', int), ('--beta', 'beta', int),
    ('--r', 'r', int), ('--M', 'M', int), ('--N', 'N', int), ('--ratio', 'ratio', float),
    ('--good-atoms', 'good_atoms', int), ('--bad-atoms', 'bad_atoms', int),
]


def status(ok, message):
    print(f"{'✅' if ok else '❌'} {message}", file=sys.stderr)


def seed_type(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def strategy_type(text):
    if text == 'exact':
        return ('exact', None)
    kind, _, count = text.partition(':')
    if kind != 'sampled' or not count.isdigit() or int(count) < 1:
        raise argparse.ArgumentTypeError(f"strategy must be 'exact' or 'sampled:N', got {text!r}")
    return ('sampled', int(count))


def emit_json(data, out=None):
    text = json.dumps(data, indent=2, sort_keys=True) + '\n'
    if out:
        with open(out, 'w') as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _require_seed(parser, args, why):
    if args.seed is None:
        parser.error(f"--seed is required {why}")


# Subcommands

def cmd_coherence(parser, args):
    if args.welch:
        M, N = args.welch
        value = welch_bound(M, N)
        emit_json({'M': M, 'N': N, 'welch': value}, args.out)
        status(True, f"Welch bound for {M}x{N}: {value:.6f}")
        return 0

    if args.strategy[0] == 'sampled':
        _require_seed(parser, args, "for a sampled strategy")
    if args.matrix:
        D = load_matrix(args.matrix, unit_norm=not args.raw).entries
    elif args.gaussian:
        _require_seed(parser, args, "to draw a Gaussian matrix")
        M, N = args.gaussian
        if N % args.d:
            raise HiblkError(f"N={N} is not a multiple of d={args.d}")
        D = sample_matrix(M, make_structure([N // args.d], args.d, [1]), args.seed).entries
    else:
        parser.error("coherence needs --matrix, --gaussian or --welch")

    strategy = Strategy.exact() if args.strategy[0] == 'exact' else Strategy.sampled(args.strategy[1], args.seed)
    profile = coherence_profile(D, args.d, args.d_star or (), args.mode_block or (), strategy,
                                cap=args.cap, workers=args.workers)
    emit_json(profile.to_dict(), args.out)
    status(True, f"coherence profile: μ={profile.mu:.4f}, μ_B={profile.mu_block:.4f}, ν={profile.nu_sub:.4f}")
    return 0


def cmd_bounds(parser, args):
    if args.eldar:
        if args.mu_block is None or args.d is None:
            parser.error("--eldar needs --mu-b and --d")
        value = certificates.k_eldar(args.mu_block, args.d, args.nu or 0.0)
        print(f"{value:.6f}")
        largest = math.ceil(value / args.d) - 1
        status(True, f"k·d < {value:.4f}, so k ≤ {largest}")
        return 0

    if args.certify:
        return _certify(parser, args)

    params = {key: getattr(args, key) for _, key, _ in BOUND_PARAMS if getattr(args, key) is not None}
    if not params:
        parser.error("bounds needs --eldar, --certify or at least one parameter")
    bounds = certificates.sparsity_bounds(params)
    emit_json(bounds, args.out)
    errors = bounds.get('domain_errors', {})
    for name, premise in sorted(errors.items()):
        status(False, f"{name}: premise {premise} fails")
    computed = [name for name in bounds if name != 'domain_errors']
    if not computed:
        return 1
    status(True, f"{len(computed)} bounds computed")
    return 0


def _certify(parser, args):
    if not (args.problem and args.matrix and args.signal):
        parser.error("--certify needs --problem, --matrix and --signal")
    s, prior = load_problem(args.problem)
    D = load_matrix(args.matrix, unit_norm=not args.raw).entries
    x = signal_from_coeffs(s, load_vector(args.signal))
    y = load_vector(args.measurements) if args.measurements else D @ x.coeffs
    profile = CoherenceProfile.from_dict(read_json(args.profile)) if args.profile else None
    report = certificates.erc_certify(D, y, s, prior, x, profile, allow_sampled=args.allow_sampled,
                                      eps=args.eps, cap=args.cap)
    emit_json(report.to_dict(), args.out)
    verdict = report.verdict
    if args.allow_sampled:
        status(False, "sampled coherences accepted: the surrogate is not a guarantee")
    if verdict is certificates.Verdict.PREMISE_FAILED:
        status(False, "a step premise failed; no certificate")
        return 1
    status(verdict is certificates.Verdict.CERTIFIED, f"{len(report.steps)} steps, verdict {verdict.value}")
    return 0


def cmd_recover(parser, args):
    s, prior = load_problem(args.problem)
    D = load_matrix(args.matrix, unit_norm=not args.raw).entries
    y = load_vector(args.measurements)
    result = get_algorithm(args.algorithm)(D, y, s, prior, args.eps)
    if args.format == 'csv':
        if args.out:
            save_array(args.out, result.estimate)
        else:
            np.savetxt(sys.stdout, result.estimate[:, None], delimiter=',', fmt='%.17g')
    else:
        data = result.to_dict()
        # Wall-clock time breaks byte-identical re-runs
        data.pop('runtime_ns', None)
        emit_json(data, args.out)
    status(result.status.value != 'rank_failure',
           f"{args.algorithm}: {result.status.value} after {result.iterations} refits, support {list(result.support)}")
    return 0


def cmd_sweep(parser, args):
    if bool(args.preset) == bool(args.config):
        parser.error("sweep needs exactly one of --preset and --config")
    _require_seed(parser, args, "for sweeps")
    cfg = bench.get_preset(args.preset) if args.preset else bench.load_config(args.config)
    changes = {'master_seed': args.seed}
    if args.trials is not None:
        changes['trials'] = args.trials
    if args.eps is not None:
        changes['eps'] = args.eps
    cfg = dataclasses.replace(cfg, **changes)

    rows, records = bench.sweep(cfg, workers=args.workers, progress=not args.quiet)
    if args.format == 'json':
        emit_json({'config': cfg.to_dict(), 'rows': [dataclasses.asdict(row) for row in rows]}, args.out)
    elif args.out:
        bench.write_csv(rows, args.out)
    else:
        bench.write_rows(rows, sys.stdout)
    failures = sum(1 for record in records if record.error)
    if failures:
        status(False, f"{failures} trial runs failed (counted as inexact)")
    status(True, f"{cfg.name}: {len(cfg.values)} points x {cfg.trials} trials")
    return 0


def cmd_verify(parser, args):
    _require_seed(parser, args, "for the inequality suites")
    summaries = inequalities.run_suite(args.suites, args.count, args.seed, progress=not args.quiet)
    violations = inequalities.total_violations(summaries)
    if args.format == 'json' or args.out:
        emit_json({'seed': args.seed, 'count': args.count, 'violations': violations,
                   'suites': {name: summary.to_dict() for name, summary in summaries.items()}}, args.out)
    else:
        for name, summary in summaries.items():
            print(f"{name}: checked {summary.checked}, premise failures {summary.premise_failed}, "
                  f"violations {summary.violations}")
        print(f"total violations: {violations}")
    status(violations == 0, f"{len(summaries)} suites, {violations} violations")
    return 0 if violations == 0 else 1


def render_svg(rows, metric, out, logy=False, title=None):
    """One curve per algorithm, in first-appearance order"""
    column = PLOT_METRICS[metric]
    curves = {}
    for row in rows:
        curves.setdefault(row.algorithm, []).append((row.point, getattr(row, column)))

    plt.rcParams['svg.hashsalt'] = SVG_SALT
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for algorithm, points in curves.items():
        points.sort()
        ax.plot([p for p, _ in points], [v for _, v in points], marker='o', label=algorithm)
    if logy:
        ax.set_yscale('log')
    ax.set_xlabel('sweep point')
    ax.set_ylabel(METRIC_LABELS[metric])
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize='small')
    fig.tight_layout()
    fig.savefig(out, format='svg', metadata={'Date': None})
    plt.close(fig)
    return out


def cmd_plot(parser, args):
    rows = bench.read_csv(args.csv)
    render_svg(rows, args.metric, args.out, logy=args.logy, title=args.title)
    status(True, f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog='hiblk', description='Hierarchical block-sparse recovery toolkit')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, seed=True):
        p.add_argument('--out', help='Output path (default: stdout)')
        if seed:
            p.add_argument('--seed', type=seed_type, help='Master seed (u64)')
        return p

    p = common(sub.add_parser('coherence', help='Coherence profile of a measurement matrix'))
    p.add_argument('--matrix', help='Matrix file (CSV or HIBLKv01)')
    p.add_argument('--gaussian', nargs=2, type=int, metavar=('M', 'N'), help='Draw a unit-norm Gaussian matrix')
    p.add_argument('--welch', nargs=2, type=int, metavar=('M', 'N'), help='Only print the Welch bound')
    p.add_argument('--raw', action='store_true', help='Skip the unit column norm check')
    p.add_argument('--d', type=int, default=1, help='Unit block length')
    p.add_argument('--d-star', type=int, action='append', help='Hierarchical coherence length (repeatable)')
    p.add_argument('--mode-block', type=int, action='append', help='Mode block length for ν (repeatable)')
    p.add_argument('--strategy', type=strategy_type, default=('exact', None), help="'exact' or 'sampled:N'")
    p.add_argument('--cap', type=int, help='Exact enumeration cap')
    p.add_argument('--workers', type=int, help='Enumeration threads')
    p.set_defaults(handler=cmd_coherence)

    p = common(sub.add_parser('bounds', help='Closed-form sparsity bounds or per-step certificates'), seed=False)
    p.add_argument('--eldar', action='store_true', help='Print the block ERC sparsity bound only')
    p.add_argument('--certify', action='store_true', help='Replay HiBOMP-P and certify every step')
    for flag, key, kind in BOUND_PARAMS:
        p.add_argument(flag, dest=key, type=kind)
    p.add_argument('--problem', help='Structure/PSI JSON')
    p.add_argument('--matrix', help='Matrix file')
    p.add_argument('--signal', help='True coefficient vector file')
    p.add_argument('--measurements', help='Measurement vector file (default: D·x)')
    p.add_argument('--profile', help='CoherenceProfile JSON')
    p.add_argument('--raw', action='store_true', help='Skip the unit column norm check')
    p.add_argument('--eps', type=float, help='Noise bound for the noisy conditions')
    p.add_argument('--cap', type=int, help='Exact enumeration cap')
    p.add_argument('--allow-sampled', action='store_true', help='Accept sampled coherences (unsafe)')
    p.set_defaults(handler=cmd_bounds)

    p = common(sub.add_parser('recover', help='Run one recovery algorithm'), seed=False)
    p.add_argument('--problem', required=True, help='Structure/PSI JSON')
    p.add_argument('--matrix', required=True, help='Matrix file')
    p.add_argument('--measurements', required=True, help='Measurement vector file')
    p.add_argument('--algorithm', default='hibomp_p', choices=sorted(ALGORITHMS))
    p.add_argument('--eps', type=float, help='Residual tolerance (default: 1e-6·‖y‖)')
    p.add_argument('--raw', action='store_true', help='Skip the unit column norm check')
    p.add_argument('--format', choices=['json', 'csv'], default='json')
    p.set_defaults(handler=cmd_recover)

    p = common(sub.add_parser('sweep', help='Monte Carlo sweep to CSV'))
    p.add_argument('--preset', choices=sorted(bench.presets()))
    p.add_argument('--config', help='ExperimentConfig JSON')
    p.add_argument('--trials', type=int, help='Trials per point')
    p.add_argument('--eps', type=float, help='Residual tolerance for every algorithm')
    p.add_argument('--workers', type=int, help='Trial threads (default: HIBLK_THREADS)')
    p.add_argument('--format', choices=['csv', 'json'], default='csv')
    p.add_argument('--quiet', action='store_true', help='No progress bar')
    p.set_defaults(handler=cmd_sweep)

    p = common(sub.add_parser('verify', help='Seeded inequality suites'))
    p.add_argument('--suites', nargs='+', default=['all'], help="Kind names or 'all'")
    p.add_argument('--count', type=int, default=1000, help='Instances per suite')
    p.add_argument('--format', choices=['text', 'json'], default='text')
    p.add_argument('--quiet', action='store_true', help='No progress bar')
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser('plot', help='SVG curves from a sweep CSV')
    p.add_argument('csv', help='Sweep CSV')
    p.add_argument('--out', required=True, help='SVG path')
    p.add_argument('--metric', choices=sorted(PLOT_METRICS), default='err')
    p.add_argument('--logy', action='store_true', help='Logarithmic y axis')
    p.add_argument('--title', help='Figure title')
    p.set_defaults(handler=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else LOG_LEVEL,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.handler(parser, args)
    except FormatError as e:
        status(False, f"bad input: {e}")
        return 1
    except HiblkError as e:
        status(False, str(e))
        return 1
    except OSError as e:
        status(False, f"I/O error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
