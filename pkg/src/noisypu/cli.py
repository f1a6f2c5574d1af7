"""Command line interface.

Exit codes: 0 success, 1 failed property check, 2 configuration error,
3 data error, 4 estimation failure. Errors are reported as one line,
``error: <kind>: <message>``, on stderr.
"""

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .alphamax import alphamax, alphamax_n
from .base import PriorEstimate, PUDataset
from .datagen import load_csv, zscore_pca
from .exceptions import (DegenerateComponentError, DegenerateOutputError,
                         EstimationFailedError, InvalidInputError)
from .experiment import ConfigError, ExperimentConfig, run
from .measures import check_suite
from .msgmm import fit as msgmm_fit
from .transform import (NonTraditionalClassifier, PosteriorParams,
                        fit_nontraditional, oob_scores, posterior)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 1, 2, 3, 4


def _has_header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        first = next(csv.reader(fh), [])
    try:
        [float(x) for x in first]
    except ValueError:
        return True
    return False


def read_matrix(path):
    X, _ = load_csv(path, header=_has_header(path))
    return X


def _estimate(method, U, L, seed):
    if method == "msgmm":
        return msgmm_fit(PUDataset(U, L), seed=seed).estimate
    if method == "alphamax":
        a = alphamax(U, L)
        return PriorEstimate(a, None, a, 1.0, "AlphaMax")
    return alphamax_n(U, L)


def cmd_estimate(args):
    U, L = read_matrix(args.unlabeled), read_matrix(args.labeled)
    if U.shape == L.shape and np.array_equal(U, L):
        print("warning: unlabeled and labeled samples are identical; "
              "the class prior is not identifiable", file=sys.stderr)
    if args.transform and args.pca:
        raise ConfigError("--transform and --pca are mutually exclusive")
    ratio = len(U) / len(L)
    if args.transform:
        ds = PUDataset(U, L)
        model = fit_nontraditional(ds, seed=args.seed, n_members=args.members)
        if args.save_model:
            model.save(args.save_model)
        tp = oob_scores(model, ds)
        U, L = tp.scores_unlabeled, tp.scores_labeled
    elif args.pca:
        Z = zscore_pca(np.vstack([U, L]), args.pca)
        U, L = Z[:len(U)], Z[len(U):]
    est = _estimate(args.method, U, L, args.seed)
    doc = est.to_dict()
    doc["ratio"] = ratio
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_posterior(args):
    model = NonTraditionalClassifier.load(args.model)
    with open(args.params, encoding="utf-8") as fh:
        est = json.load(fh)
    try:
        ratio = est.get("ratio") or float((model.s_ == 0).sum() / (model.s_ == 1).sum())
        params = PosteriorParams(float(est["alpha_star"]), float(est["beta_star"]), ratio)
    except KeyError as exc:
        raise InvalidInputError(f"estimate file lacks {exc}") from None
    X = read_matrix(args.input)
    p = posterior(model.predict_proba(X)[:, 1], params)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["p_positive"])
        w.writerows([[f"{v:.10g}"] for v in np.atleast_1d(p)])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_synth_bench(args):
    cfg = ExperimentConfig.load(args.config)
    overrides = {k: v for k, v in (("repeats", args.repeats), ("seed", args.seed),
                                   ("workers", args.workers), ("output", args.out))
                 if v is not None}
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    report = run(cfg)
    w = csv.DictWriter(sys.stdout, fieldnames=list(report.summary_rows()[0]))
    w.writeheader()
    w.writerows(report.summary_rows())
    if all(a["n_success"] == 0 for a in report.aggregates.values()):
        raise EstimationFailedError("every repeat failed")
    return EXIT_OK


def cmd_oracle_check(args):
    failures = check_suite(args.atoms, args.trials, args.seed)
    print(json.dumps(failures, sort_keys=True))
    return EXIT_OK if not any(failures.values()) else EXIT_CHECK


def cmd_curve(args):
    U, L = read_matrix(args.unlabeled), read_matrix(args.labeled)
    M, C = (U, L) if args.direction == "ul" else (L, U)
    value, curve = alphamax(M, C, return_curve=True)
    curve.to_csv(args.out)
    print(json.dumps({"elbow": value, "out": args.out}))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="noisypu",
                                description="Class prior estimation from noisy PU data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate the class prior from two CSV files")
    e.add_argument("--unlabeled", required=True)
    e.add_argument("--labeled", required=True)
    e.add_argument("--method", choices=["alphamax-n", "msgmm", "alphamax"],
                   default="alphamax-n")
    e.add_argument("--transform", action="store_true",
                   help="estimate on out-of-bag classifier scores")
    e.add_argument("--pca", type=int, default=0, metavar="K")
    e.add_argument("--members", type=int, default=100, help="ensemble size for --transform")
    e.add_argument("--save-model", metavar="PATH", help="write the --transform model as JSON")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_estimate)

    q = sub.add_parser("posterior", help="true class posterior for new rows")
    q.add_argument("--model", required=True)
    q.add_argument("--params", required=True, help="JSON written by 'estimate'")
    q.add_argument("--input", required=True)
    q.add_argument("--out")
    q.set_defaults(func=cmd_posterior)

    b = sub.add_parser("synth-bench", help="run a seeded benchmark from a YAML config")
    b.add_argument("--config", required=True)
    b.add_argument("--repeats", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--out", help="report path (.json); CSV and timing sidecars alongside")
    b.set_defaults(func=cmd_synth_bench)

    o = sub.add_parser("oracle-check", help="run the discrete-measure property suite")
    o.add_argument("--atoms", type=int, default=8)
    o.add_argument("--trials", type=int, default=1000)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle_check)

    c = sub.add_parser("curve", help="export the constrained likelihood curve")
    c.add_argument("--unlabeled", required=True)
    c.add_argument("--labeled", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--direction", choices=["ul", "lu"], default="ul",
                   help="ul: proportion of L in U; lu: proportion of U in L")
    c.set_defaults(func=cmd_curve)
    return p


def _fail(kind, exc, code):
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (InvalidInputError, DegenerateOutputError, OSError, csv.Error,
            json.JSONDecodeError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (EstimationFailedError, DegenerateComponentError) as exc:
        return _fail("estimation", exc, EXIT_ESTIMATION)


if __name__ == "__main__":
    sys.exit(main())
