"""Command line for the sieve AFT estimator: fit a dataset, run a simulation study, compute sigma*."""

import argparse
import logging
import sys
import time
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from src import __version__
from src.config import FitConfig
from src.data_io import (
    TRANSFORMS,
    InputTable,
    RunManifest,
    read_input_table,
    write_dataset_csv,
    write_fit_report,
    write_json,
    write_manifest,
    write_summary,
)
from src.error_laws import ErrorDistribution
from src.errors import AftSieveError, ConvergenceError, FileAccessError, UsageError
from src.fitter import FitResult, fit, hazard_curve
from src.sim_engine import (
    CENSORING_SCALES,
    COVARIATE_NAMES,
    SimDesign,
    SimulationSummary,
    calibrated_c,
    efficiency_bound,
    replication_dataset,
    run_study,
)
from src.variance import VarianceReport, variance_report, wald_intervals

logger = logging.getLogger(__name__)

HAZARD_GRID_POINTS = 200


def build_fit_report(table: InputTable, result: FitResult, report: VarianceReport,
                     level: float = 0.95) -> dict:
    """Everything cmd_fit writes: coefficients, both SEEs and Wald intervals, the spline and its curve."""
    low1, high1 = wald_intervals(result.beta, report.see1, level)
    low2, high2 = wald_intervals(result.beta, report.see2, level)
    coefficients = [
        {
            'parameter': name,
            'estimate': float(result.beta[k]),
            'see1': float(report.see1[k]),
            'see2': float(report.see2[k]),
            'ci1_lower': float(low1[k]),
            'ci1_upper': float(high1[k]),
            'ci2_lower': float(low2[k]),
            'ci2_upper': float(high2[k]),
        }
        for k, name in enumerate(table.covariate_names)
    ]
    grid, log_hazard, hazard = hazard_curve(result, HAZARD_GRID_POINTS)
    knots = result.basis.knots
    return {
        'source': table.path,
        'transform': table.transform,
        'n': table.dataset.n,
        'n_events': table.dataset.n_events,
        'level': level,
        'coefficients': coefficients,
        'spline': {
            'order': knots.order,
            'boundary': list(knots.boundary),
            'interior_knots': list(knots.interior_knots),
            'gamma': result.gamma.tolist(),
        },
        'diagnostics': {**result.diagnostics(), **report.to_dict()},
        'hazard_curve': {'t': grid.tolist(), 'log_hazard': log_hazard.tolist(), 'hazard': hazard.tolist()},
    }


class SieveRunner:
    """Runs the three commands and writes their outputs with manifests."""

    def __init__(self, command: str):
        """
        Args:
            command: The command line being executed, recorded in every manifest.
        """
        self.command = command

    def _manifest(self, output: str, config: dict, started: float, outputs: Tuple[str, ...],
                  seed: Optional[int] = None, diagnostics: Optional[dict] = None):
        manifest = RunManifest(
            command=self.command,
            config=config,
            version=__version__,
            seed=seed,
            wall_time=time.perf_counter() - started,
            diagnostics=diagnostics or {},
            outputs=outputs,
        )
        path = write_manifest(output, manifest)
        logger.info('Wrote manifest %s', path)

    def fit_file(self, csv_path: str, config: FitConfig, transform: str = 'log10',
                 out: Optional[str] = None, fmt: str = 'json') -> Tuple[dict, FitResult]:
        """
        Fit a CSV dataset and write the report.

        Raises:
            ConvergenceError: after writing the report, when Newton-Raphson did not converge.
        """
        started = time.perf_counter()
        logger.info('Reading survival data from %s...', csv_path)
        table = read_input_table(csv_path, transform)

        logger.info('Fitting sieve model (order %d, %d interior knots)...',
                    config.order, config.n_interior_knots)
        result = fit(table.dataset, config)
        logger.info('Fit finished after %d iterations, loglik %.8g', result.n_iter, result.loglik)

        logger.info('Computing standard errors...')
        report = variance_report(table.dataset, result)
        payload = build_fit_report(table, result, report)

        if out is not None:
            logger.info('Writing fit report to %s...', out)
            outputs = write_fit_report(out, payload, fmt)
            self._manifest(out, {'fit': config.to_dict(), 'transform': transform, 'format': fmt},
                           started, outputs, diagnostics=payload['diagnostics'])

        if not result.converged:
            raise ConvergenceError(
                f'Newton-Raphson stopped after {result.n_iter} iterations with '
                f'|score| = {result.grad_norm:.3g}'
            )
        return payload, result

    def simulate(self, design: SimDesign, out: str, emit_data: Optional[str] = None) -> SimulationSummary:
        started = time.perf_counter()
        logger.info('Running simulation study: law %s, n=%d, %d replications, seed %d...',
                    design.error.key, design.n, design.n_reps, design.seed)
        summary = run_study(design)

        logger.info('Writing simulation summary to %s...', out)
        outputs = write_summary(out, summary.to_frame(), summary.to_dict())
        if emit_data is not None:
            logger.info('Writing first replication dataset to %s...', emit_data)
            write_dataset_csv(emit_data, replication_dataset(design, summary.censor_c, 0))
            outputs = outputs + (emit_data,)
        self._manifest(out, design.to_dict(), started, outputs, seed=design.seed,
                       diagnostics={'n_failed_fits': summary.n_failed_fits,
                                    'mean_censoring_rate': summary.mean_censoring_rate,
                                    'censor_c': summary.censor_c})
        return summary

    def bound(self, design: SimDesign, out: Optional[str] = None) -> np.ndarray:
        started = time.perf_counter()
        logger.info('Calibrating censoring for law %s...', design.error.key)
        censor_c = calibrated_c(design)
        logger.info('Integrating the information for n=%d (c = %.6g)...', design.n, censor_c)
        sigma_star = efficiency_bound(design.error, design.n, censor_c, design.censoring_scale)
        if out is not None:
            payload = {
                'dist': design.error.key,
                'n': design.n,
                'censor_c': censor_c,
                'sigma_star': dict(zip(COVARIATE_NAMES, sigma_star.tolist())),
            }
            write_json(out, payload)
            self._manifest(out, design.to_dict(), started, (out,), seed=design.seed)
        return sigma_star


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def _add_design_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--dist', required=True, help='error law: a..f or its name')
    parser.add_argument('--n', type=int, required=True, help='sample size')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--censoring', type=float, default=0.25, help='target censoring rate')
    parser.add_argument('--censoring-scale', choices=CENSORING_SCALES, default='log',
                        help='draw the uniform censoring time on the log-time (default) or time scale')
    parser.add_argument('--calibration-draws', type=int, default=1_000_000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='aft-sieve', description=__doc__)
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='log Newton iterations')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='log warnings only')
    commands = parser.add_subparsers(dest='command', required=True)

    fit_cmd = commands.add_parser('fit', help='fit a CSV dataset (time,status,covariates...)')
    fit_cmd.add_argument('csv_path')
    fit_cmd.add_argument('--transform', choices=TRANSFORMS, default='log10')
    fit_cmd.add_argument('--knots', type=int, default=1, help='number of interior knots')
    fit_cmd.add_argument('--order', type=int, default=4, help='spline order (4 = cubic)')
    fit_cmd.add_argument('--tol', type=float, default=1e-5)
    fit_cmd.add_argument('--max-iter', type=int, default=200)
    fit_cmd.add_argument('--quad-points', type=int, default=10)
    fit_cmd.add_argument('--knot-placement', choices=('equal', 'quantile'), default='equal')
    fit_cmd.add_argument('--out', help='report path')
    fit_cmd.add_argument('--format', choices=('json', 'csv'), default='json')

    sim_cmd = commands.add_parser('simulate', help='run a Monte Carlo study')
    _add_design_arguments(sim_cmd)
    sim_cmd.add_argument('--reps', type=int, default=500)
    sim_cmd.add_argument('--knots', type=int, help='interior knots (default: 1 if n <= 400, else 2)')
    sim_cmd.add_argument('--workers', type=int, help='worker processes (default: AFT_SIEVE_THREADS or all cores)')
    sim_cmd.add_argument('--out', required=True, help='summary path; <stem>.csv and <stem>.json are written')
    sim_cmd.add_argument('--emit-data', help='write the first replication dataset to this CSV')

    bound_cmd = commands.add_parser('bound', help='print the efficient standard errors sigma*')
    _add_design_arguments(bound_cmd)
    bound_cmd.add_argument('--out', help='also write sigma* as JSON')
    return parser


def _design(args, n_reps: int = 1, knots: Optional[int] = None, workers: Optional[int] = None) -> SimDesign:
    return SimDesign(
        n=args.n,
        error=ErrorDistribution.from_key(args.dist),
        n_reps=n_reps,
        censor_rate_target=args.censoring,
        knots=knots,
        seed=args.seed,
        censoring_scale=args.censoring_scale,
        workers=workers,
        calibration_draws=args.calibration_draws,
    )


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format='%(levelname)s %(name)s: %(message)s')


def run(args, command: str) -> int:
    runner = SieveRunner(command)
    if args.command == 'fit':
        config = FitConfig(order=args.order, n_interior_knots=args.knots, tol=args.tol,
                           max_iter=args.max_iter, quad_points=args.quad_points,
                           knot_placement=args.knot_placement)
        payload, _ = runner.fit_file(args.csv_path, config, args.transform, args.out, args.format)
        print(pd.DataFrame(payload['coefficients']).to_string(index=False))
    elif args.command == 'simulate':
        design = _design(args, n_reps=args.reps, knots=args.knots, workers=args.workers)
        summary = runner.simulate(design, args.out, args.emit_data)
        print(summary.to_frame().to_string(index=False))
    else:
        sigma_star = runner.bound(_design(args), args.out)
        for name, value in zip(COVARIATE_NAMES, sigma_star):
            print(f'{name} sigma_star={value:.6f}')
    return 0


def _report(exc: AftSieveError) -> int:
    detail = ' '.join(str(exc).split())
    print(f'error: code={exc.code} exit={exc.exit_code} detail={detail}', file=sys.stderr)
    return exc.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run the command line and return the process exit code.

    Errors are reported as one line on stderr:
    `error: code=<CODE> exit=<n> detail=<text>`.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args)
        return run(args, ' '.join(['aft-sieve', *argv]))
    except AftSieveError as exc:
        return _report(exc)
    except OSError as exc:
        return _report(FileAccessError(str(exc)))


if __name__ == '__main__':
    sys.exit(main())
