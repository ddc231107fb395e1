"""
Command line interface.

    nmsym test data.txt --criterion bic --out text
    nmsym test data.csv --format csv --column weight --k 3 --density-out density.csv
    nmsym simulate --dist StdNormal,ChiSq1 --n-list 20,50,100 --reps 1000 --workers 8 --out-dir study

Exit codes: 0 on success whatever the statistical verdict, 1 on an
operational failure, 2 on a usage error.
"""
from pathlib import Path
from typing import List, Optional, Sequence

import argparse
import logging
import sys

from nmsym import __version__
from nmsym.config import load_config, resolve_workers
from nmsym.datafile import DataFileError, parse_data_file
from nmsym.mixture import EMFitter, EmOptions, EstimationError, NumericalError
from nmsym.montecarlo import StudyAbortedError, StudyReport, StudySpec, TestKind, run_study
from nmsym.report import (STUDY_JSON_FILE, AnalysisReport, density_pair, study_summary, write_density_csv,
                          write_study_csv, write_study_json)
from nmsym.rng import ConfigurationError, DistributionTag, NM3Params, RandomStream, SimDistribution
from nmsym.sample import DegenerateSampleError
from nmsym.selection import Criterion, SelectionError, SelectionModel, select_k
from nmsym.specfun import DomainError
from nmsym.symmetry import (DiagnosticsError, gupta_test, mixture_symmetry_test, result_at_k,
                            result_from_table)

logger = logging.getLogger(__name__)

OPERATIONAL_ERRORS = (DataFileError, ConfigurationError, DomainError, DegenerateSampleError, NumericalError,
                      EstimationError, SelectionError, DiagnosticsError, StudyAbortedError, OSError)

_handler: Optional[logging.Handler] = None


def configure_logging(verbose: bool = False, quiet: bool = False):
    """Attach one stderr handler to the package logger."""
    global _handler
    package_logger = logging.getLogger("nmsym")
    if _handler is not None:
        package_logger.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    package_logger.addHandler(_handler)
    if verbose:
        package_logger.setLevel(logging.DEBUG)
    elif quiet:
        package_logger.setLevel(logging.WARNING)
    else:
        package_logger.setLevel(logging.INFO)


def _split(value) -> List[str]:
    if isinstance(value, (list, tuple)):
        return [str(item).strip() for item in value]
    return [item.strip() for item in str(value).split(",") if item.strip()]


def _odd_k(value) -> int:
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{value}' is not an integer") from None
    if k < 1 or k % 2 == 0:
        raise argparse.ArgumentTypeError(f"k must be odd and positive, got {k}")
    return k


def _odd_k_list(value) -> List[int]:
    return [_odd_k(item) for item in _split(value)]


def _int_list(value) -> List[int]:
    try:
        return [int(item) for item in _split(value)]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _float_list(value) -> List[float]:
    try:
        return [float(item) for item in _split(value)]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _dist_list(value) -> List[DistributionTag]:
    try:
        return [DistributionTag.parse(item) for item in _split(value)]
    except ConfigurationError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _test_list(value) -> List[TestKind]:
    try:
        return [TestKind.parse(item) for item in _split(value)]
    except ConfigurationError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _add_em_arguments(parser):
    parser.add_argument("--seed", type=int, default=0, help="Master seed (default: 0).")
    parser.add_argument("--restarts", type=int, default=10, help="EM restarts per fit (default: 10).")
    parser.add_argument("--tol", type=float, default=1e-8, help="Log-likelihood change per observation that stops EM (default: 1e-8).")
    parser.add_argument("--max-iter", type=int, default=5000, help="EM iterations per restart (default: 5000).")
    parser.add_argument("--k-max", type=_odd_k, default=7, help="Largest odd k considered (default: 7).")


def _build_parsers():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with option values; flags override it.")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only.")

    parser = argparse.ArgumentParser(
        prog="nmsym",
        description="Symmetry tests based on equispaced normal mixtures.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    test = subparsers.add_parser("test", parents=[common], help="Test a data file for symmetry.")
    test.add_argument("input", type=Path, help="Data file.")
    test.add_argument("--format", choices=["whitespace", "csv"], default="whitespace")
    test.add_argument("--column", help="CSV column name or zero-based index (default: first).")
    test.add_argument("--test", choices=["mixture", "gupta", "both"], default="both")
    test.add_argument("--criterion", choices=["aic", "bic", "both"], default=None,
                      help="Criterion selecting k (default: bic). Not allowed with --k.")
    test.add_argument("--k", type=_odd_k, default=None, help="Fixed odd number of components.")
    test.add_argument("--model", choices=[m.value for m in SelectionModel], default="unconstrained",
                      help="Fits whose criterion selects k (default: unconstrained).")
    test.add_argument("--report-k", type=_odd_k_list, default=None,
                      help="Comma separated k values to also report deviance tests for, e.g. 3,5. "
                           "Values above --k-max are fitted without entering the selection.")
    test.add_argument("--out", choices=["json", "text"], default="text")
    test.add_argument("--output", type=Path, default=None, help="Write the report here instead of stdout.")
    test.add_argument("--density-out", type=Path, default=None,
                      help="CSV file for the fitted densities of the reported k.")
    test.add_argument("--grid-points", type=int, default=512)
    _add_em_arguments(test)
    test.set_defaults(func=cmd_test)

    simulate = subparsers.add_parser("simulate", parents=[common], help="Run the Monte Carlo study.")
    simulate.add_argument("--dist", type=_dist_list, default=list(DistributionTag),
                          help=f"Comma separated distributions from {', '.join(t.value for t in DistributionTag)}.")
    simulate.add_argument("--n-list", type=_int_list, default=[20, 50, 100])
    simulate.add_argument("--reps", type=int, default=1000)
    simulate.add_argument("--levels", type=_float_list, default=[0.01, 0.05, 0.10])
    simulate.add_argument("--tests", type=_test_list, default=list(TestKind),
                          help="Comma separated from MixtureAIC, MixtureBIC, Gupta.")
    simulate.add_argument("--nm3-params", default=None, help="SymNM3 parameters 'm1,m2,m3;variance;w1,w2,w3'.")
    simulate.add_argument("--out-dir", type=Path, default=Path("study"))
    simulate.add_argument("--workers", type=int, default=1)
    _add_em_arguments(simulate)
    simulate.set_defaults(func=cmd_simulate)

    return parser, {"test": test, "simulate": simulate}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse the command line, filling unset options from --config."""
    parser, subparsers = _build_parsers()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config is not None:
        allowed = set(vars(args)) - {"config", "command", "func"}
        config = load_config(args.config, allowed)
        subparsers[args.command].set_defaults(**config)
        args = parser.parse_args(argv)
    if args.command == "test" and args.k is not None and args.criterion is not None:
        parser.error("--k fixes the number of components; it cannot be combined with --criterion")
    return args


def _em_options(args) -> EmOptions:
    return EmOptions(tolerance=args.tol, max_iter=args.max_iter, n_restarts=args.restarts, seed=args.seed)


def _config_echo(args) -> dict:
    echo = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "config", "verbose", "quiet"):
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, list):
            value = [getattr(item, "value", item) for item in value]
        echo[key] = value
    return echo


def cmd_test(args) -> AnalysisReport:
    """Run the requested symmetry tests on one data file and write the report."""
    sample = parse_data_file(args.input, args.format, args.column)
    logger.info(f"Read {sample.n} observations from {args.input}")
    report = AnalysisReport(input_path=str(args.input), digest=sample.digest(), config=_config_echo(args))

    if args.test in ("mixture", "both"):
        sample.require_nondegenerate()
        fitter = EMFitter(_em_options(args))
        stream = RandomStream(args.seed)
        model = SelectionModel(args.model)
        boundary_tol = fitter.options.boundary_tol
        report_k = _odd_k_list(args.report_k) if args.report_k is not None else []

        if args.k is not None:
            report.mixture.append(mixture_symmetry_test(sample, args.k, stream=stream, fitter=fitter))
            for k in report_k:
                report.extra_k.append(mixture_symmetry_test(sample, k, stream=stream, fitter=fitter))
        else:
            criterion_text = args.criterion or "bic"
            criteria = list(Criterion) if criterion_text == "both" else [Criterion.parse(criterion_text)]
            table = select_k(sample, criteria[0], args.k_max, stream=stream, model=model, fitter=fitter)
            report.selection = table
            for criterion in criteria:
                report.mixture.append(result_from_table(table, criterion, boundary_tol, model))
            for k in report_k:
                if k <= args.k_max:
                    report.extra_k.append(result_at_k(table, k, boundary_tol))
                else:
                    report.extra_k.append(mixture_symmetry_test(sample, k, stream=stream, fitter=fitter))

        shown = report.mixture[0]
        report.density = density_pair(shown.unconstrained_fit, shown.constrained_fit, args.grid_points)
        if args.density_out is not None:
            write_density_csv(args.density_out, shown.unconstrained_fit, shown.constrained_fit, args.grid_points)

    if args.test in ("gupta", "both"):
        report.gupta = gupta_test(sample)
        logger.info(f"third-moment test: S1={report.gupta.s1:.4f} p={report.gupta.p_value:.5g}")

    text = report.to_json() + "\n" if args.out == "json" else report.to_text()
    if args.output is not None:
        args.output.write_text(text, encoding="utf-8")
        logger.info(f"Report written to {args.output}")
    else:
        sys.stdout.write(text)
    return report


def _study_spec(args) -> StudySpec:
    nm3 = NM3Params.from_string(args.nm3_params) if args.nm3_params else NM3Params()
    tags = [DistributionTag.parse(getattr(tag, "value", tag)) for tag in _split_values(args.dist)]
    tests = [TestKind.parse(getattr(test, "value", test)) for test in _split_values(args.tests)]
    return StudySpec(
        distributions=[SimDistribution(tag, nm3) for tag in tags],
        sample_sizes=tuple(_int_list(args.n_list)),
        replicates=args.reps,
        levels=tuple(_float_list(args.levels)),
        tests=tuple(tests),
        master_seed=args.seed,
        k_max=args.k_max,
        em_options=_em_options(args),
    )


def _split_values(value) -> list:
    # config files give strings or lists, the parser gives lists of enums
    if isinstance(value, (list, tuple)):
        return list(value)
    return _split(value)


def cmd_simulate(args) -> StudyReport:
    """Run the Monte Carlo study and write its tables, JSON report and console summary."""
    spec = _study_spec(args)
    workers = resolve_workers(args.workers)
    report = run_study(spec, workers)
    write_study_csv(report, args.out_dir)
    write_study_json(report, Path(args.out_dir) / STUDY_JSON_FILE)
    sys.stdout.write(study_summary(report))
    return report


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigurationError as e:
        sys.stderr.write(f"nmsym: error: {e}\n")
        return 1
    configure_logging(args.verbose, args.quiet)
    try:
        args.func(args)
    except OPERATIONAL_ERRORS as e:
        logger.debug("Operational failure", exc_info=True)
        sys.stderr.write(f"nmsym: error: {e}\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
