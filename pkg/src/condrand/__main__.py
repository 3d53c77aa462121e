#!/usr/bin/env python3

import argparse
import json
import logging
import sys

from condrand import __about__, dataio, engine, erratum, kmodes, simulation
from condrand.errors import CondrandError, UsageError, VerificationError
from condrand.specparse import parse_balance, parse_statistic

logger = logging.getLogger("condrand")


class ArgumentParser(argparse.ArgumentParser):
    """使い方の誤りを UsageError (終了コード1) にする ArgumentParser。"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _run_config(args, **defaults):
    """--config の JSON とコマンドライン引数を合わせた RunConfig を作ります。

    優先順位はコマンドライン、JSON、``defaults`` (サブコマンドの既定値) の順です。
    """
    if getattr(args, "config", None):
        base = dataio.RunConfig.from_json(args.config, defaults)
    else:
        base = dataio.RunConfig(**defaults)
    sided = getattr(args, "sided", None)
    doubling = getattr(args, "erratum_doubling", None)
    if doubling:
        if sided is not None and sided != "doubled":
            raise UsageError(f"--erratum-doubling requires --sided doubled, got --sided {sided}")
        sided = "doubled"
    exact = None
    if getattr(args, "exact", False):
        exact = True
    elif getattr(args, "monte_carlo", False):
        exact = False
    config = base.merged(
        input=args.input,
        outcome=args.outcome,
        treatment=args.treatment,
        covariates=args.covariates,
        statistic=getattr(args, "statistic", None),
        balance=args.balance,
        sidedness=sided,
        erratum_doubling=doubling,
        alpha=args.alpha,
        draws=args.draws,
        exact_cap=args.exact_cap,
        exact=exact,
        max_tries=args.max_tries,
        seed=args.seed,
        order=getattr(args, "order", None),
        out=args.out,
        dump_reference=getattr(args, "dump_reference", None),
        pairwise_csv=getattr(args, "csv", None),
    )
    if config.erratum_doubling and config.sidedness != "doubled":
        raise UsageError("erratum_doubling requires sidedness 'doubled'")
    config.require_columns()
    return config


def _engine_kwargs(config, args):
    return dict(
        seed=config.seed,
        n_draws=config.draws,
        exact=config.exact,
        exact_cap=config.exact_cap,
        alpha=config.alpha,
        n_jobs=args.jobs,
    )


def _balance(config):
    if not config.balance or config.balance.strip() == "none":
        return None
    return parse_balance(config.balance)


def command_test(args):
    """単一の無条件・条件付き検定のコマンドハンドラ。

    Args:
        args (argparse.Namespace): コマンドライン引数。
    """
    config = _run_config(args)
    obs = dataio.ingest_csv(config.input, config)
    statistic = parse_statistic(config.statistic, obs.arm_levels)
    balance = _balance(config)
    kwargs = _engine_kwargs(config, args)
    kwargs.update(
        sidedness=config.sidedness,
        erratum_doubling=config.erratum_doubling,
        keep_reference=bool(config.dump_reference),
    )
    if balance is None:
        result = engine.unconditional_test(obs, statistic, **kwargs)
    else:
        result = engine.conditional_test(obs, statistic, balance, max_tries=config.max_tries, **kwargs)
    dataio.write_result_json(config.out, result, obs)
    if config.dump_reference:
        dataio.write_reference_csv(config.dump_reference, result)


def command_omnibus(args):
    """Kruskal-Wallis による全腕の omnibus 検定のコマンドハンドラ。"""
    config = _run_config(args, sidedness="greater")
    obs = dataio.ingest_csv(config.input, config)
    kwargs = _engine_kwargs(config, args)
    balance = _balance(config)
    if balance is not None:
        kwargs["max_tries"] = config.max_tries
    result = engine.omnibus_test(
        obs, balance, use_ranks=not args.raw, sidedness=config.sidedness, **kwargs
    )
    dataio.write_result_json(config.out, result, obs)


def command_pairwise(args):
    """全ての腕のペアの検定のコマンドハンドラ。

    ``--csv`` に上三角の p 値表、``--out`` に JSON を書き出します。
    どちらも指定がなければ表を標準出力に出します。
    """
    config = _run_config(args)
    obs = dataio.ingest_csv(config.input, config)
    statistic = parse_statistic(args.statistic, obs.arm_levels) if args.statistic else None
    balance = _balance(config)
    kwargs = _engine_kwargs(config, args)
    if balance is not None:
        kwargs["max_tries"] = config.max_tries
    omnibus = None
    if args.omnibus:
        omnibus = engine.omnibus_test(obs, balance, **kwargs)
    results = engine.pairwise_tests(
        obs, statistic, balance, sidedness=config.sidedness, order=config.order, **kwargs
    )
    arms = engine.arm_order(obs, config.order)
    labels = list(obs.arm_levels)
    if config.pairwise_csv:
        dataio.write_pairwise_csv(config.pairwise_csv, results, arms, labels)
    if config.out:
        report = dataio.PairwiseReport(results, arms, labels, omnibus, extra={"seed": config.seed})
        dataio.write_json(config.out, report.payload(obs))
    if not config.pairwise_csv and not config.out:
        print(dataio.pairwise_frame(results, arms, labels).to_csv(), end="")


def _k_range(text):
    lo, sep, hi = text.partition("..")
    try:
        kmin, kmax = int(lo), int(hi if sep else lo)
    except ValueError:
        raise UsageError(f"Invalid --elbow range '{text}' (expected kmin..kmax)") from None
    if kmin < 1 or kmax < kmin:
        raise UsageError(f"Invalid --elbow range '{text}'")
    return range(kmin, kmax + 1)


def command_cluster(args):
    """k-modes クラスタリングとエルボー曲線のコマンドハンドラ。"""
    if args.k is None and args.elbow is None:
        raise UsageError("cluster needs --k or --elbow")
    columns = [c.strip() for c in args.columns.split(",")] if args.columns else None
    frame, original, index, dropped = dataio.ingest_covariates(args.input, columns)

    if args.elbow is not None:
        curve = kmodes.elbow_curve(frame, _k_range(args.elbow), args.seed, args.restarts, args.max_iter, args.jobs)
        if args.curve:
            dataio.write_curve_csv(args.curve, curve)
        else:
            for p in curve:
                print(f"{p.k:>4} {p.cost:>10}{'' if p.monotone else '  (cost rose)'}")

    if args.k is not None:
        model = kmodes.kmodes_fit(frame, args.k, args.seed, args.max_iter, args.restarts, args.jobs)
        payload = model.to_dict()
        payload.update({"version": __about__.__version__, "dropped_rows": dropped})
        payload["labels"] = model.labels.tolist()
        if args.out:
            dataio.write_json(args.out, payload)
        elif args.elbow is None:
            dataio.write_json(None, {k: v for k, v in payload.items() if k != "labels"})
        if args.emit_labels:
            dataio.write_labels_csv(args.emit_labels, original, index, model.labels, args.label_name)


def command_simulate(args):
    """シミュレーション (棄却率曲線) のコマンドハンドラ。"""
    config = simulation.SimConfig.from_json(args.config)
    overrides = {k: v for k, v in (("replicates", args.replicates), ("n_draws", args.draws), ("seed", args.seed))
                 if v is not None}
    if overrides:
        config = simulation.SimConfig(**{**config.__dict__, **overrides})
    result = simulation.sweep(config, args.jobs)
    if args.out:
        result.to_csv(args.out)
    else:
        print(result.to_frame().to_csv(index=False), end="")


def command_verify_erratum(args):
    """反例の表と p 値を再現して照合するコマンドハンドラ。"""
    report = erratum.verify(raise_on_mismatch=False)
    for line in report.lines():
        print(line)
    if not report.ok:
        raise VerificationError("; ".join(report.mismatches))


def _add_common(p, statistic=True):
    p.add_argument("-i", "--input", help="input CSV")
    p.add_argument("-c", "--config", help="run config (JSON)")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--treatment", help="treatment (arm) column")
    p.add_argument("--covariates", help="comma separated covariate columns")
    if statistic:
        p.add_argument("--statistic", help="t_sd | t_ps(x) | t_res(x) | ols(x) | kruskal_wallis | mean_rank(a, b)")
    p.add_argument("--balance", help="none | strata(x..) | contingency(x..) | marginal(x..) | cluster(label)")
    p.add_argument("--alpha", type=float, help="significance level (default 0.05)")
    p.add_argument("--draws", type=int, help="Monte Carlo draws (default 10000)")
    p.add_argument("--exact-cap", type=int, help="largest reference set enumerated exactly")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="force exact enumeration")
    mode.add_argument("--monte-carlo", action="store_true", help="force Monte Carlo")
    p.add_argument("--max-tries", type=int, help="rejection sampler limit")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("-o", "--out", help="result JSON (default stdout)")


def build_parser():
    parser = ArgumentParser(
        prog="condrand",
        description=f"conditional randomization tests v{__about__.__version__}",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    parser.add_argument("--json-errors", action="store_true", help="print errors as JSON objects")
    parser.add_argument("-j", "--jobs", type=int, help="worker threads (capped by CONDRAND_THREADS)")
    subparsers = parser.add_subparsers()
    sided = ["absolute", "doubled", "greater", "less"]

    # test
    parser_test = subparsers.add_parser("test", help="unconditional or conditional randomization test")
    _add_common(parser_test)
    parser_test.add_argument("--sided", choices=sided, help="sidedness (default absolute)")
    parser_test.add_argument("--erratum-doubling", action="store_true", default=None,
                             help="two-sided p = min(1, 2 * upper tail proportion)")
    parser_test.add_argument("--dump-reference", help="reference distribution CSV")
    parser_test.set_defaults(handler=command_test)

    # omnibus
    parser_omnibus = subparsers.add_parser("omnibus", help="Kruskal-Wallis test over all arms")
    _add_common(parser_omnibus, statistic=False)
    parser_omnibus.add_argument("--sided", choices=sided, help="sidedness (default greater)")
    parser_omnibus.add_argument("--raw", action="store_true", help="use outcomes instead of midranks")
    parser_omnibus.set_defaults(handler=command_omnibus)

    # pairwise
    parser_pairwise = subparsers.add_parser("pairwise", help="tests for every pair of arms")
    _add_common(parser_pairwise)
    parser_pairwise.add_argument("--sided", choices=sided, help="sidedness (default absolute)")
    parser_pairwise.add_argument("--order", choices=["mean"], help="arm order of the table")
    parser_pairwise.add_argument("--csv", help="upper triangular p-value CSV")
    parser_pairwise.add_argument("--omnibus", action="store_true", help="also run the omnibus test")
    parser_pairwise.set_defaults(handler=command_pairwise)

    # cluster
    parser_cluster = subparsers.add_parser("cluster", help="k-modes clustering of categorical covariates")
    parser_cluster.add_argument("-i", "--input", required=True, help="input CSV")
    parser_cluster.add_argument("--columns", help="comma separated covariate columns (default all)")
    parser_cluster.add_argument("-k", "--k", type=int, help="number of clusters")
    parser_cluster.add_argument("--restarts", type=int, default=10, help="random restarts per k")
    parser_cluster.add_argument("--max-iter", type=int, default=kmodes.DEFAULT_MAX_ITER, help="iteration limit")
    parser_cluster.add_argument("--elbow", help="k range kmin..kmax")
    parser_cluster.add_argument("--curve", help="elbow curve CSV")
    parser_cluster.add_argument("--emit-labels", help="copy of the input with a cluster column")
    parser_cluster.add_argument("--label-name", default="cluster", help="name of the cluster column")
    parser_cluster.add_argument("--seed", type=int, default=0, help="master seed")
    parser_cluster.add_argument("-o", "--out", help="model JSON")
    parser_cluster.set_defaults(handler=command_cluster)

    # simulate
    parser_simulate = subparsers.add_parser("simulate", help="rejection rate simulation")
    parser_simulate.add_argument("-c", "--config", required=True, help="simulation config (JSON)")
    parser_simulate.add_argument("--replicates", type=int, help="override replicates")
    parser_simulate.add_argument("--draws", type=int, help="override Monte Carlo draws")
    parser_simulate.add_argument("--seed", type=int, help="override master seed")
    parser_simulate.add_argument("-o", "--out", help="result CSV (default stdout)")
    parser_simulate.set_defaults(handler=command_simulate)

    # verify-erratum
    parser_verify = subparsers.add_parser("verify-erratum", help="reproduce the five-unit counterexample")
    parser_verify.set_defaults(handler=command_verify_erratum)
    return parser


def report_error(e, json_errors=False):
    """例外を標準エラー出力に書き出します。"""
    code = getattr(e, "exit_code", 2)
    if json_errors:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": code}), file=sys.stderr)
    else:
        print(f"Error: {e}", file=sys.stderr)
    return code


def main(argv=None):
    # --------------------------------------------------------
    # main
    # --------------------------------------------------------
    argv = sys.argv[1:] if argv is None else list(argv)
    json_errors = "--json-errors" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.exit(report_error(e, json_errors))

    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)

    if not hasattr(args, "handler"):
        parser.print_help()
        return

    try:
        args.handler(args)
    except CondrandError as e:
        sys.exit(report_error(e, args.json_errors))
    except OSError as e:
        sys.exit(report_error(UsageError(str(e)), args.json_errors))


if __name__ == "__main__":
    main()
